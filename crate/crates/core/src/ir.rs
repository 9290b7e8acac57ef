//! FP64 iterative refinement preconditioned by one mixed-precision V-cycle
//! per iteration, with the residual normalized before it is cast down.
//!
//! The normalization divides by the power of two nearest to `‖r‖₂`, so the
//! cast changes nothing but the exponent in formats that can hold the
//! result. FP64 solves are therefore bitwise independent of the scaling.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::multigrid::MgHierarchy;
use crate::precision::Precision;
use crate::sparse::{EllMatrix, Exec, PVector, Section, TrafficCounter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialGuess {
    #[default]
    Zeros,
    /// Uniform values in [0, 1) from a ChaCha8 stream seeded with this value.
    SeededRandom(u64),
}

impl InitialGuess {
    pub fn generate(self, n: usize) -> Vec<f64> {
        match self {
            InitialGuess::Zeros => vec![0.0; n],
            InitialGuess::SeededRandom(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| rng.random::<f64>()).collect()
            }
        }
    }
}

/// Whether the residual is divided by its norm before the downcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualScaling {
    /// Scale unless every level runs in FP64.
    #[default]
    Auto,
    Enabled,
    /// Scale factor pinned to 1.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrConfig {
    pub outer_tolerance: f64,
    pub max_outer_iterations: usize,
    pub initial_guess: InitialGuess,
    pub scaling: ResidualScaling,
    /// Recompute `b - A u` from scratch every this many iterations.
    pub refresh_interval: usize,
}

impl Default for IrConfig {
    fn default() -> Self {
        Self {
            outer_tolerance: 1e-9,
            max_outer_iterations: 100,
            initial_guess: InitialGuess::Zeros,
            scaling: ResidualScaling::Auto,
            refresh_interval: 10,
        }
    }
}

/// Traffic of one solve, split by where it happened.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TrafficReport {
    pub total: TrafficCounter,
    /// FP64 refinement work on the finest grid.
    pub outer: TrafficCounter,
    /// V-cycle work per level, index 0 is the coarsest.
    pub levels: Vec<TrafficCounter>,
}

impl TrafficReport {
    /// Value bytes moved inside the V-cycles.
    pub fn cycle_value_bytes(&self) -> u64 {
        self.levels.iter().map(TrafficCounter::value_bytes).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    /// Residual norm before every iteration plus the final one.
    pub residual_history: Vec<f64>,
    /// `‖b - A u‖` of the returned iterate, recomputed from scratch.
    pub final_residual: f64,
    pub traffic: TrafficReport,
    pub wall_time: f64,
    pub final_error_l2: Option<f64>,
    /// Downcast residuals that came out entirely zero although the FP64 residual was not.
    pub flushed_casts: usize,
    /// Base solves that hit their iteration budget.
    pub unconverged_base_solves: usize,
}

/// Power of two closest to `x` in the log scale. Dividing by it is exact in
/// FP64 and FP32 and leaves the scaled norm within a factor √2 of one.
pub fn power_of_two_near(x: f64) -> f64 {
    if !(x > 0.0 && x.is_finite()) {
        return 1.0;
    }
    let p = 2f64.powi(x.log2().round() as i32);
    if p > 0.0 && p.is_finite() {
        p
    } else {
        1.0
    }
}

/// `‖b - A u‖₂` in FP64, sequential accumulation.
pub fn residual_norm(exec: &mut Exec, a: &EllMatrix, u: &PVector, b: &PVector) -> Result<f64> {
    for v in [u, b] {
        if v.precision() != Precision::Fp64 {
            return Err(Error::PrecisionMismatch {
                op: "residual_norm",
                expected: Precision::Fp64,
                found: v.precision(),
            });
        }
    }
    let r = exec.residual(a, u, b)?;
    Ok(exec.norm2(&r))
}

/// Solves `A u = b` to `config.outer_tolerance` with one V-cycle of
/// `hierarchy` as the correction solver per iteration.
///
/// `a` and `b` are the finest-level FP64 operator and right-hand side.
pub fn ir_solve(
    exec: &mut Exec,
    a: &EllMatrix,
    b: &PVector,
    hierarchy: &mut MgHierarchy,
    config: &IrConfig,
) -> Result<(PVector, SolveReport)> {
    if !(config.outer_tolerance > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "outer tolerance must be positive, got {}",
            config.outer_tolerance
        )));
    }
    if a.precision() != Precision::Fp64 || b.precision() != Precision::Fp64 {
        return Err(Error::PrecisionMismatch {
            op: "ir_solve",
            expected: Precision::Fp64,
            found: if a.precision() != Precision::Fp64 {
                a.precision()
            } else {
                b.precision()
            },
        });
    }
    let n = hierarchy.finest().n();
    for found in [a.n_rows(), a.n_cols(), b.len()] {
        if found != n {
            return Err(Error::DimensionMismatch {
                op: "ir_solve",
                expected: n,
                found,
            });
        }
    }

    let start = Instant::now();
    exec.reset_traffic();
    hierarchy.reset_base_stats();
    let outer_section = exec.set_section(Section::Outer);
    let top = hierarchy.n_levels() - 1;
    let low = hierarchy.finest().precision;
    let scaled = match config.scaling {
        ResidualScaling::Enabled => true,
        ResidualScaling::Disabled => false,
        ResidualScaling::Auto => hierarchy
            .levels()
            .iter()
            .any(|l| l.precision != Precision::Fp64),
    };
    let refresh = config.refresh_interval.max(1);

    let mut u = PVector::Fp64(config.initial_guess.generate(n));
    let mut r = exec.residual(a, &u, b)?;
    let mut fresh = true;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut flushed_casts = 0;
    let converged = loop {
        let mut alpha = exec.norm2(&r);
        if alpha < config.outer_tolerance && !fresh {
            // accept convergence only on a true residual
            r = exec.residual(a, &u, b)?;
            fresh = true;
            alpha = exec.norm2(&r);
        }
        if !alpha.is_finite() {
            exec.set_section(outer_section);
            return Err(Error::Diverged {
                iteration: iterations,
                residual: alpha,
            });
        }
        history.push(alpha);
        if alpha < config.outer_tolerance {
            break true;
        }
        if iterations == config.max_outer_iterations {
            break false;
        }

        let scale = if scaled {
            power_of_two_near(alpha)
        } else {
            1.0
        };
        let r_low = exec.cast_vector(&r, low, scale)?;
        if r_low.count_nonzero() == 0 {
            flushed_casts += 1;
        }
        let c = hierarchy.v_cycle(exec, top, &r_low, alpha / scale)?;
        exec.update_residuum_correction(&mut r, &mut u, a, &c, scale)?;
        iterations += 1;
        fresh = false;
        if iterations % refresh == 0 {
            r = exec.residual(a, &u, b)?;
            fresh = true;
        }
    };

    let final_residual = if fresh {
        *history.last().expect("history holds the initial residual")
    } else {
        let r = exec.residual(a, &u, b)?;
        exec.norm2(&r)
    };
    exec.set_section(outer_section);

    let report = SolveReport {
        converged,
        iterations,
        residual_history: history,
        final_residual,
        traffic: TrafficReport {
            total: *exec.traffic(),
            outer: *exec.outer_traffic(),
            levels: exec.level_traffic().to_vec(),
        },
        wall_time: start.elapsed().as_secs_f64(),
        final_error_l2: None,
        flushed_casts,
        unconverged_base_solves: hierarchy.base_stats().unconverged,
    };
    Ok((u, report))
}
