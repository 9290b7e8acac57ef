//! Per-precision SpMV and AXPY throughput on a 2D stiffness matrix.
//!
//! `cargo run --release --example kernel_throughput -- 1025`

use std::hint::black_box;
use std::time::Instant;

use mpmg::mesh::{assemble_stiffness, StructuredGrid};
use mpmg::{ArithmeticPolicy, Exec, PVector, Precision};

const REPEATS: u32 = 10;

fn main() -> mpmg::Result<()> {
    let nodes = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1025);
    let policy = ArithmeticPolicy::default();
    let a = assemble_stiffness(&StructuredGrid::new(2, nodes)?)?;
    let n = a.n_rows();
    let slots = (n * a.row_width()) as f64;
    let x: Vec<f64> = (0..n)
        .map(|i| ((i * 7919) % 1000) as f64 / 1000.0)
        .collect();
    println!("{n} unknowns, {} slots per row", a.row_width());
    for p in [Precision::Fp64, Precision::Fp32, Precision::Fp16] {
        let ap = a.cast(p, policy);
        let xp = PVector::from_f64(&x, p, policy);
        let mut exec = Exec::new(policy);

        let start = Instant::now();
        for _ in 0..REPEATS {
            black_box(exec.spmv(&ap, &xp)?);
        }
        let spmv = start.elapsed().as_secs_f64() / REPEATS as f64;

        let start = Instant::now();
        for _ in 0..REPEATS {
            black_box(exec.axpy(0.5, &xp, &xp)?);
        }
        let axpy = start.elapsed().as_secs_f64() / REPEATS as f64;

        println!(
            "{p}: spmv {:.2} ns/slot, axpy {:.2} ns/elem",
            spmv * 1e9 / slots,
            axpy * 1e9 / n as f64
        );
    }
    Ok(())
}
