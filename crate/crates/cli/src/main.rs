use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mpmg::bench::{run_sweep, summary_table, RunSpec};
use mpmg::{Accumulation, ArithmeticPolicy, ResidualScaling, Variant};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AccumArg {
    Fp16,
    Fp32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScalingArg {
    Auto,
    On,
    Off,
}

/// Sweeps mixed-precision multigrid variants on the Poisson model problem and
/// writes one CSV row per solve plus a mean-iteration summary.
#[derive(Debug, Parser)]
#[command(name = "mpmg-bench", version)]
struct Args {
    /// Spatial dimension (2 or 3).
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Oscillation parameters of the manufactured solution, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    k: Vec<u32>,
    /// Finest-grid nodes per dimension, comma separated
    /// [default: 257,513,1025 in 2D, 33,65 in 3D].
    #[arg(long, value_delimiter = ',')]
    nodes: Vec<usize>,
    /// Number of grid levels; overrides --base-nodes.
    #[arg(long)]
    levels: Option<usize>,
    /// Nodes per dimension on the coarsest grid [default: 9 in 2D, 5 in 3D].
    #[arg(long)]
    base_nodes: Option<usize>,
    /// Variants to run, comma separated: d_mg, h_mg, dsh_mg, hsd_mg [default: all].
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variant: Vec<Variant>,
    /// Seed of the random initial guess; repetition i uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Repetitions per configuration.
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// CSV output path.
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
    /// Outer residual norm tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol_outer: f64,
    /// Base-solver residual tolerance for a normalized right-hand side.
    #[arg(long, default_value_t = 1e-4)]
    tol_base: f64,
    /// Outer iteration limit.
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Pre-smoothing steps.
    #[arg(long, default_value_t = 3)]
    nu1: usize,
    /// Post-smoothing steps.
    #[arg(long, default_value_t = 3)]
    nu2: usize,
    /// Jacobi damping factor.
    #[arg(long, default_value_t = 2.0 / 3.0)]
    omega: f64,
    /// Accumulator format of FP16 sparse products.
    #[arg(long, value_enum, default_value = "fp16")]
    fp16_accum: AccumArg,
    /// Keep FP32 subnormal results instead of flushing them to zero.
    #[arg(long)]
    no_ftz: bool,
    /// Also flush FP16 subnormal results to zero.
    #[arg(long)]
    fp16_ftz: bool,
    /// Residual normalization before the downcast.
    #[arg(long, value_enum, default_value = "auto")]
    residual_scaling: ScalingArg,
    /// Check precision conformance and finiteness of every intermediate vector.
    #[arg(long)]
    validate: bool,
    /// Directory for per-solve convergence data (iteration, residual norm).
    #[arg(long)]
    plot_dir: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: mpmg::Error| e.to_string())
}

impl Args {
    fn run_spec(&self) -> RunSpec {
        let mut spec = RunSpec::desk(self.dim);
        spec.ks = self.k.clone();
        if !self.nodes.is_empty() {
            spec.nodes_per_dim = self.nodes.clone();
        }
        spec.levels = self.levels;
        if let Some(b) = self.base_nodes {
            spec.base_nodes = b;
        }
        if !self.variant.is_empty() {
            spec.variants = self.variant.clone();
        }
        spec.seed = self.seed;
        spec.repetitions = self.reps;
        spec.ir.outer_tolerance = self.tol_outer;
        spec.ir.max_outer_iterations = self.max_iter;
        spec.ir.scaling = match self.residual_scaling {
            ScalingArg::Auto => ResidualScaling::Auto,
            ScalingArg::On => ResidualScaling::Enabled,
            ScalingArg::Off => ResidualScaling::Disabled,
        };
        spec.mg.base.tolerance = self.tol_base;
        spec.mg.smoother.nu1 = self.nu1;
        spec.mg.smoother.nu2 = self.nu2;
        spec.mg.smoother.omega = self.omega;
        spec.accumulation = match self.fp16_accum {
            AccumArg::Fp16 => Accumulation::Fp16,
            AccumArg::Fp32 => Accumulation::Fp32,
        };
        spec.policy = ArithmeticPolicy {
            flush_subnormals_to_zero: self.fp16_ftz,
            flush_f32_subnormals_to_zero: !self.no_ftz,
            ..ArithmeticPolicy::default()
        };
        spec.validate = self.validate;
        spec.plot_dir = self.plot_dir.clone();
        spec
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let spec = args.run_spec();
    if let Err(e) = spec.validate().and_then(|_| {
        if args.tol_outer > 0.0 {
            Ok(())
        } else {
            Err(mpmg::Error::InvalidConfig(format!(
                "--tol-outer must be positive, got {}",
                args.tol_outer
            )))
        }
    }) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }

    let file = match File::create(&args.out) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", args.out.display());
            return ExitCode::from(1);
        }
    };
    let outcome = match run_sweep(&spec, BufWriter::new(file)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };

    for rec in &outcome.records {
        let r = &rec.row;
        let status = match (&rec.error, &rec.report) {
            (Some(e), _) => format!("failed: {e}"),
            (None, Some(rep)) if rep.converged => format!(
                "{} iterations, residual {:.3e}, {:.2}s",
                rep.iterations, rep.final_residual, rep.wall_time
            ),
            (None, Some(rep)) => format!(
                "not converged after {} iterations, residual {:.3e}",
                rep.iterations, rep.final_residual
            ),
            (None, None) => "no result".into(),
        };
        eprintln!(
            "{}D k={} n={} {} seed={}: {status}",
            r.dim, r.k, r.nodes_per_dim, r.variant, r.seed
        );
    }
    let rows: Vec<_> = outcome.rows().cloned().collect();
    println!(
        "mean iterations until convergence ({}D, sizes {:?})",
        spec.dim, spec.nodes_per_dim
    );
    print!("{}", summary_table(&rows));
    println!("rows written to {}", args.out.display());

    if outcome.all_converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
