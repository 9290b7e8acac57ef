use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpmg-bench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_in(dir: &Path, extra: &[&str]) -> Output {
    let out = dir.join("sweep.csv");
    let mut args = vec!["--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    bench(&args)
}

#[test]
fn small_sweep_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let plots = dir.path().join("plots");
    let out = run_in(
        dir.path(),
        &[
            "--nodes",
            "17,33",
            "--base-nodes",
            "5",
            "--k",
            "1,20",
            "--variant",
            "d_mg,h_mg",
            "--plot-dir",
            plots.to_str().unwrap(),
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "dim,k,nodes_per_dim,variant,iterations,final_residual,l2_error_vs_exact,value_bytes_moved,wall_time_s,seed"
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 8);
    for row in &rows {
        assert_eq!(row.len(), 10);
        assert!(row[5].parse::<f64>().unwrap() < 1e-9);
    }

    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        stdout.contains("k=1") && stdout.contains("k=20"),
        "{stdout}"
    );
    assert!(stdout.lines().any(|l| l.starts_with("H_MG")), "{stdout}");

    let plot = std::fs::read_to_string(plots.join("h_mg_d2_k20_n33_s0.dat")).unwrap();
    assert_eq!(plot.lines().next(), Some("iteration residual_norm"));
    assert_eq!(std::fs::read_dir(&plots).unwrap().count(), 8);
}

#[test]
fn invalid_arguments_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    for extra in [
        &["--variant", "q_mg"][..],
        &["--nodes", "18"],
        &["--dim", "4"],
        &["--omega", "0"],
        &["--tol-outer", "0"],
        &["--reps", "0"],
    ] {
        let out = run_in(dir.path(), extra);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{extra:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn unconverged_sweep_fails_but_keeps_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(
        dir.path(),
        &[
            "--nodes",
            "33",
            "--base-nodes",
            "5",
            "--variant",
            "d_mg",
            "--max-iter",
            "2",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}
