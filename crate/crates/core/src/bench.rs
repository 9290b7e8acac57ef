//! Variant sweeps: one solve per (grid size, variant, k, repetition), CSV
//! rows, an iteration-count summary and convergence plot data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ir::{ir_solve, InitialGuess, IrConfig, SolveReport};
use crate::mesh::{assemble_rhs, assemble_stiffness, exact_solution, nodal_l2_error, ProblemSpec};
use crate::multigrid::{MgConfig, MgHierarchy, Variant};
use crate::precision::ArithmeticPolicy;
use crate::sparse::{Accumulation, Exec};

/// Column names of the sweep CSV, in order.
pub const CSV_HEADER: [&str; 10] = [
    "dim",
    "k",
    "nodes_per_dim",
    "variant",
    "iterations",
    "final_residual",
    "l2_error_vs_exact",
    "value_bytes_moved",
    "wall_time_s",
    "seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub dim: usize,
    pub ks: Vec<u32>,
    pub nodes_per_dim: Vec<usize>,
    /// Level count; when absent it follows from `base_nodes`.
    pub levels: Option<usize>,
    pub base_nodes: usize,
    pub variants: Vec<Variant>,
    /// Repetition `i` starts from the random guess seeded with `seed + i`.
    pub seed: u64,
    pub repetitions: usize,
    pub mg: MgConfig,
    /// Template for every solve; the initial guess is replaced per repetition.
    pub ir: IrConfig,
    pub policy: ArithmeticPolicy,
    pub accumulation: Accumulation,
    pub validate: bool,
    /// Directory receiving one convergence file per solve.
    pub plot_dir: Option<PathBuf>,
}

impl RunSpec {
    /// Desk-scale defaults for `dim`.
    pub fn desk(dim: usize) -> Self {
        let (nodes, base) = if dim == 3 {
            (vec![33, 65], 5)
        } else {
            (vec![257, 513, 1025], 9)
        };
        Self {
            dim,
            ks: vec![1],
            nodes_per_dim: nodes,
            levels: None,
            base_nodes: base,
            variants: Variant::ALL.to_vec(),
            seed: 0,
            repetitions: 1,
            mg: MgConfig::default(),
            ir: IrConfig::default(),
            policy: ArithmeticPolicy::default(),
            accumulation: Accumulation::default(),
            validate: false,
            plot_dir: None,
        }
    }

    pub fn problem(&self, k: u32, nodes: usize) -> Result<ProblemSpec> {
        match self.levels {
            Some(levels) => ProblemSpec::new(self.dim, k, nodes, levels),
            None => ProblemSpec::with_base_nodes(self.dim, k, nodes, self.base_nodes),
        }
    }

    /// Checks every size against the level settings before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.nodes_per_dim.is_empty() || self.variants.is_empty() {
            return Err(Error::InvalidConfig(
                "k, nodes and variant lists must be non-empty".into(),
            ));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig(
                "at least one repetition is required".into(),
            ));
        }
        for &k in &self.ks {
            for &n in &self.nodes_per_dim {
                let p = self.problem(k, n)?;
                if p.levels < 2 {
                    return Err(Error::InvalidProblem(format!(
                        "{n} nodes per dimension leaves a single level"
                    )));
                }
            }
        }
        self.mg.validate()
    }
}

/// One line of the sweep CSV. Numeric fields are empty on failed runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub dim: usize,
    pub k: u32,
    pub nodes_per_dim: usize,
    pub variant: String,
    pub iterations: Option<usize>,
    pub final_residual: Option<f64>,
    pub l2_error_vs_exact: Option<f64>,
    pub value_bytes_moved: Option<u64>,
    pub wall_time_s: Option<f64>,
    pub seed: u64,
}

impl CsvRow {
    pub fn converged(&self, tolerance: f64) -> bool {
        self.final_residual.is_some_and(|r| r < tolerance)
    }
}

/// One solve of a sweep.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub row: CsvRow,
    /// Absent when assembly or the solve failed.
    pub report: Option<SolveReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub all_converged: bool,
}

impl SweepOutcome {
    pub fn rows(&self) -> impl Iterator<Item = &CsvRow> {
        self.records.iter().map(|r| &r.row)
    }
}

/// Runs every combination of `spec`, streaming rows to `csv` as they finish.
///
/// Failed runs produce rows with empty numeric fields and clear
/// `all_converged`; the sweep carries on with the remaining runs.
pub fn run_sweep<W: Write>(spec: &RunSpec, csv: W) -> Result<SweepOutcome> {
    spec.validate()?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(csv);
    writer.write_record(CSV_HEADER)?;
    writer.flush()?;
    if let Some(dir) = &spec.plot_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut records = Vec::new();
    let mut all_converged = true;
    for &nodes in &spec.nodes_per_dim {
        let levels_spec = spec.problem(spec.ks[0], nodes)?;
        let grid = levels_spec.finest_grid();
        let a = assemble_stiffness(&grid)?;
        for &variant in &spec.variants {
            let mut hierarchy = MgHierarchy::build(
                &levels_spec,
                &variant.level_precisions(levels_spec.levels),
                spec.mg,
                spec.policy,
            );
            for &k in &spec.ks {
                let rhs = assemble_rhs(&grid, k).and_then(|b| Ok((b, exact_solution(&grid, k)?)));
                for rep in 0..spec.repetitions {
                    let seed = spec.seed.wrapping_add(rep as u64);
                    let mut row = CsvRow {
                        dim: spec.dim,
                        k,
                        nodes_per_dim: nodes,
                        variant: variant.name().to_string(),
                        iterations: None,
                        final_residual: None,
                        l2_error_vs_exact: None,
                        value_bytes_moved: None,
                        wall_time_s: None,
                        seed,
                    };
                    let outcome = match (&mut hierarchy, &rhs) {
                        (Ok(h), Ok((b, exact))) => {
                            let mut exec = Exec::new(spec.policy)
                                .with_accumulation(spec.accumulation)
                                .with_validation(spec.validate);
                            let config = IrConfig {
                                initial_guess: InitialGuess::SeededRandom(seed),
                                ..spec.ir
                            };
                            ir_solve(&mut exec, &a, b, h, &config).map(|(u, mut report)| {
                                let exact = exact.as_f64().expect("exact solution is FP64");
                                let u = u.as_f64().expect("IR iterate is FP64");
                                report.final_error_l2 = Some(nodal_l2_error(&grid, u, exact));
                                report
                            })
                        }
                        (Err(e), _) => Err(Error::InvalidProblem(e.to_string())),
                        (_, Err(e)) => Err(Error::InvalidProblem(e.to_string())),
                    };
                    let record = match outcome {
                        Ok(report) => {
                            row.iterations = Some(report.iterations);
                            row.final_residual = Some(report.final_residual);
                            row.l2_error_vs_exact = report.final_error_l2;
                            row.value_bytes_moved = Some(report.traffic.total.value_bytes());
                            row.wall_time_s = Some(report.wall_time);
                            all_converged &= report.converged;
                            if let Some(dir) = &spec.plot_dir {
                                let name = format!(
                                    "{}_d{}_k{}_n{}_s{}.dat",
                                    variant.name().to_lowercase(),
                                    spec.dim,
                                    k,
                                    nodes,
                                    seed
                                );
                                emit_convergence_plotdata(
                                    &report,
                                    std::fs::File::create(dir.join(name))?,
                                )?;
                            }
                            RunRecord {
                                row,
                                report: Some(report),
                                error: None,
                            }
                        }
                        Err(e) => {
                            all_converged = false;
                            RunRecord {
                                row,
                                report: None,
                                error: Some(e.to_string()),
                            }
                        }
                    };
                    writer.serialize(&record.row)?;
                    writer.flush()?;
                    records.push(record);
                }
            }
        }
    }
    Ok(SweepOutcome {
        records,
        all_converged,
    })
}

/// Mean of `values` to one decimal, rounding half away from zero, in integer arithmetic.
pub fn mean_one_decimal(values: &[usize]) -> Option<String> {
    if values.is_empty() {
        return None;
    }
    let (sum, n) = (
        values.iter().map(|&v| v as u128).sum::<u128>(),
        values.len() as u128,
    );
    let tenths = (20 * sum + n) / (2 * n);
    Some(format!("{}.{}", tenths / 10, tenths % 10))
}

/// Mean iteration count per variant and k over grid sizes and repetitions.
/// Failed runs are left out and marked with `*`.
pub fn summary_table(rows: &[CsvRow]) -> String {
    let mut ks: Vec<u32> = rows.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut variants: Vec<&str> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    let mut cells: BTreeMap<(&str, u32), (Vec<usize>, bool)> = BTreeMap::new();
    for r in rows {
        let cell = cells.entry((r.variant.as_str(), r.k)).or_default();
        match r.iterations {
            Some(it) => cell.0.push(it),
            None => cell.1 = true,
        }
    }

    let mut out = String::new();
    let _ = write!(out, "{:<8}", "variant");
    for k in &ks {
        let _ = write!(out, " {:>9}", format!("k={k}"));
    }
    out.push('\n');
    for v in variants {
        let _ = write!(out, "{v:<8}");
        for &k in &ks {
            let text = match cells.get(&(v, k)) {
                Some((its, failed)) => {
                    let mean = mean_one_decimal(its).unwrap_or_else(|| "-".into());
                    if *failed {
                        format!("{mean}*")
                    } else {
                        mean
                    }
                }
                None => String::new(),
            };
            let _ = write!(out, " {text:>9}");
        }
        out.push('\n');
    }
    out
}

/// Writes `iteration residual_norm` rows, one per completed iteration,
/// holding the residual norm after that iteration.
pub fn emit_convergence_plotdata<W: Write>(report: &SolveReport, mut w: W) -> Result<()> {
    writeln!(w, "iteration residual_norm")?;
    for (i, r) in report.residual_history.iter().enumerate().skip(1) {
        writeln!(w, "{i} {r:e}")?;
    }
    w.flush()?;
    Ok(())
}
