//! Geometric multigrid with a floating-point format per level.
//!
//! Level 0 is the coarsest grid. Every operator a level applies is stored in
//! that level's precision: the restriction to the next coarser level acts on
//! fine vectors and lives on the fine level, the interpolation to the next
//! finer level acts on coarse vectors and lives on the coarse level. Vectors
//! change format only at the casts between levels.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mesh::{assemble_levels, ProblemSpec};
use crate::precision::{ArithmeticPolicy, Precision};
use crate::sparse::{EllMatrix, Exec, PVector, Section};

/// Precision cascade of a solver variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// FP64 on every level.
    DMg,
    /// FP16 on every level.
    HMg,
    /// FP16 near the base, FP32 transition level, FP64 on the fine levels.
    DshMg,
    /// FP64 near the base, FP32 transition level, FP16 on the fine levels.
    HsdMg,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::DMg, Variant::HMg, Variant::DshMg, Variant::HsdMg];

    pub fn name(self) -> &'static str {
        match self {
            Variant::DMg => "D_MG",
            Variant::HMg => "H_MG",
            Variant::DshMg => "DSH_MG",
            Variant::HsdMg => "HSD_MG",
        }
    }

    /// Precision of each level, index 0 being the coarsest. Shorter
    /// hierarchies keep the assignment of their coarsest levels.
    pub fn level_precisions(self, levels: usize) -> Vec<Precision> {
        use Precision::*;
        (0..levels)
            .map(|l| match (self, l) {
                (Variant::DMg, _) => Fp64,
                (Variant::HMg, _) => Fp16,
                (Variant::HsdMg, 0 | 1) | (Variant::DshMg, 3..) => Fp64,
                (Variant::HsdMg, 2) | (Variant::DshMg, 2) => Fp32,
                (Variant::HsdMg, _) | (Variant::DshMg, _) => Fp16,
            })
            .collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown variant {s:?} (expected d_mg, h_mg, dsh_mg or hsd_mg)"
                ))
            })
    }
}

/// Damped Jacobi smoothing schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    pub nu1: usize,
    pub nu2: usize,
    pub omega: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            nu1: 3,
            nu2: 3,
            omega: 2.0 / 3.0,
        }
    }
}

/// Conjugate gradients on the base level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseSolverConfig {
    /// Residual norm bound for a right-hand side of unit magnitude.
    pub tolerance: f64,
    /// Defaults to ten times the base-level unknown count.
    pub max_iterations: Option<usize>,
    /// Run exactly this many iterations, ignoring the tolerance.
    pub fixed_iterations: Option<usize>,
}

impl Default for BaseSolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_iterations: None,
            fixed_iterations: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgConfig {
    pub smoother: SmootherConfig,
    pub base: BaseSolverConfig,
    /// Normalize restricted residuals entering an FP16 level from a wider one.
    pub rescale_transitions: bool,
}

impl Default for MgConfig {
    fn default() -> Self {
        Self {
            smoother: SmootherConfig::default(),
            base: BaseSolverConfig::default(),
            rescale_transitions: true,
        }
    }
}

impl MgConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.smoother;
        if !(s.omega > 0.0 && s.omega <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "omega must lie in (0, 1], got {}",
                s.omega
            )));
        }
        if !(self.base.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "base tolerance must be positive, got {}",
                self.base.tolerance
            )));
        }
        Ok(())
    }
}

/// Operators of one level, all in `precision`.
#[derive(Debug, Clone)]
pub struct GridLevel {
    pub precision: Precision,
    pub a: EllMatrix,
    /// Entrywise `1 / A_ii`.
    pub inv_diag: PVector,
    /// This level to the next coarser one; absent on level 0.
    pub restriction: Option<EllMatrix>,
    /// Next coarser level to this one, applied in this level's precision; absent on the finest.
    pub prolongation: Option<EllMatrix>,
}

impl GridLevel {
    pub fn n(&self) -> usize {
        self.a.n_rows()
    }
}

/// Result of one base solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub solution: PVector,
    pub iterations: usize,
    /// Norm of the recursively updated residual of the returned iterate.
    pub residual_norm: f64,
    pub converged: bool,
}

/// Base-solve bookkeeping across cycles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BaseSolveStats {
    pub solves: usize,
    pub unconverged: usize,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct MgHierarchy {
    levels: Vec<GridLevel>,
    config: MgConfig,
    stats: BaseSolveStats,
}

impl MgHierarchy {
    /// Assembles every level in FP64 and rounds it to its precision.
    pub fn build(
        spec: &ProblemSpec,
        precisions: &[Precision],
        config: MgConfig,
        policy: ArithmeticPolicy,
    ) -> Result<Self> {
        if spec.levels < 2 {
            return Err(Error::InvalidProblem(
                "a multigrid hierarchy needs at least two levels".into(),
            ));
        }
        let ops = assemble_levels(spec)?;
        let mut stiffness = Vec::with_capacity(ops.len());
        let mut transfers = Vec::with_capacity(ops.len() - 1);
        let mut pending_p = None;
        for op in ops {
            if let (Some(p), Some(r)) = (pending_p.take(), op.restriction) {
                transfers.push((p, r));
            }
            pending_p = op.prolongation;
            stiffness.push(op.stiffness);
        }
        Self::from_operators(stiffness, transfers, precisions, config, policy)
    }

    /// Builds a hierarchy from FP64 operators; `transfers[l]` holds the
    /// interpolation from level `l` to `l + 1` and the restriction back.
    pub fn from_operators(
        stiffness: Vec<EllMatrix>,
        transfers: Vec<(EllMatrix, EllMatrix)>,
        precisions: &[Precision],
        config: MgConfig,
        policy: ArithmeticPolicy,
    ) -> Result<Self> {
        config.validate()?;
        let n_levels = stiffness.len();
        if n_levels == 0 || transfers.len() + 1 != n_levels {
            return Err(Error::InvalidProblem(format!(
                "{n_levels} levels need {} transfer pairs, got {}",
                n_levels.saturating_sub(1),
                transfers.len()
            )));
        }
        if precisions.len() != n_levels {
            return Err(Error::InvalidConfig(format!(
                "precision assignment covers {} levels, hierarchy has {n_levels}",
                precisions.len()
            )));
        }
        for (l, (p, r)) in transfers.iter().enumerate() {
            let (nc, nf) = (stiffness[l].n_rows(), stiffness[l + 1].n_rows());
            for (found, expected) in [
                (p.n_rows(), nf),
                (p.n_cols(), nc),
                (r.n_rows(), nc),
                (r.n_cols(), nf),
            ] {
                if found != expected {
                    return Err(Error::DimensionMismatch {
                        op: "MgHierarchy::from_operators",
                        expected,
                        found,
                    });
                }
            }
        }

        let cast = |level: usize, m: &EllMatrix| -> Result<EllMatrix> {
            let prec = precisions[level];
            let max = m.max_abs();
            if prec == Precision::Fp16 && max > Precision::Fp16.max_finite() {
                return Err(Error::Fp16Overflow { level, value: max });
            }
            Ok(m.cast(prec, policy))
        };

        let mut p_iter = transfers.into_iter();
        let mut pending_r = None;
        let mut levels = Vec::with_capacity(n_levels);
        for (l, a) in stiffness.iter().enumerate() {
            let prec = precisions[l];
            let diag = a.diagonal();
            if let Some(i) = diag.iter().position(|d| !(d.is_finite() && *d != 0.0)) {
                return Err(Error::InvalidProblem(format!(
                    "level {l}: diagonal entry {i} is {}",
                    diag[i]
                )));
            }
            let inv: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
            if prec == Precision::Fp16 {
                if let Some(v) = inv.iter().find(|v| v.abs() > Precision::Fp16.max_finite()) {
                    return Err(Error::Fp16Overflow {
                        level: l,
                        value: *v,
                    });
                }
            }
            let (prolongation, next_r) = match p_iter.next() {
                Some((p, r)) => (Some(cast(l, &p)?), Some(r)),
                None => (None, None),
            };
            let restriction = pending_r
                .take()
                .map(|r: EllMatrix| cast(l, &r))
                .transpose()?;
            pending_r = next_r;
            levels.push(GridLevel {
                precision: prec,
                a: cast(l, a)?,
                inv_diag: PVector::from_f64(&inv, prec, policy),
                restriction,
                prolongation,
            });
        }
        Ok(Self {
            levels,
            config,
            stats: BaseSolveStats::default(),
        })
    }

    pub fn levels(&self) -> &[GridLevel] {
        &self.levels
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &GridLevel {
        self.levels
            .last()
            .expect("hierarchy has at least one level")
    }

    pub fn precisions(&self) -> Vec<Precision> {
        self.levels.iter().map(|l| l.precision).collect()
    }

    pub fn config(&self) -> &MgConfig {
        &self.config
    }

    pub fn base_stats(&self) -> BaseSolveStats {
        self.stats
    }

    pub fn reset_base_stats(&mut self) {
        self.stats = BaseSolveStats::default();
    }

    /// One V-cycle for `A_level c = b` from a zero initial guess.
    ///
    /// `magnitude` is the size of `b` relative to a normalized residual; the
    /// base tolerance is scaled by it.
    pub fn v_cycle(
        &mut self,
        exec: &mut Exec,
        level: usize,
        b: &PVector,
        magnitude: f64,
    ) -> Result<PVector> {
        if level >= self.levels.len() {
            return Err(Error::InvalidConfig(format!(
                "level {level} does not exist in a {}-level hierarchy",
                self.levels.len()
            )));
        }
        let lev = &self.levels[level];
        if b.precision() != lev.precision {
            return Err(Error::LevelPrecision {
                level,
                expected: lev.precision,
                found: b.precision(),
            });
        }
        if b.len() != lev.n() {
            return Err(Error::DimensionMismatch {
                op: "v_cycle",
                expected: lev.n(),
                found: b.len(),
            });
        }
        cycle(
            &self.levels,
            &self.config,
            &mut self.stats,
            exec,
            level,
            b,
            magnitude,
        )
    }
}

fn conform(exec: &Exec, level: usize, expected: Precision, v: &PVector) -> Result<()> {
    if exec.validate && v.precision() != expected {
        return Err(Error::LevelPrecision {
            level,
            expected,
            found: v.precision(),
        });
    }
    Ok(())
}

fn cycle(
    levels: &[GridLevel],
    config: &MgConfig,
    stats: &mut BaseSolveStats,
    exec: &mut Exec,
    l: usize,
    b: &PVector,
    magnitude: f64,
) -> Result<PVector> {
    let outer = exec.set_section(Section::Level(l));
    let out = cycle_at(levels, config, stats, exec, l, b, magnitude);
    exec.set_section(outer);
    out
}

fn cycle_at(
    levels: &[GridLevel],
    config: &MgConfig,
    stats: &mut BaseSolveStats,
    exec: &mut Exec,
    l: usize,
    b: &PVector,
    magnitude: f64,
) -> Result<PVector> {
    let lev = &levels[l];
    let prec = lev.precision;
    if l == 0 {
        let tol = config.base.tolerance * magnitude;
        let out = cg_solve(exec, lev, b, &config.base, tol)?;
        stats.solves += 1;
        stats.iterations += out.iterations;
        stats.unconverged += usize::from(!out.converged);
        conform(exec, l, prec, &out.solution)?;
        return Ok(out.solution);
    }

    let s = &config.smoother;
    let u = jacobi_smooth(exec, lev, PVector::zeros(lev.n(), prec), b, s.nu1, s.omega)?;
    let r = exec.residual(&lev.a, &u, b)?;
    conform(exec, l, prec, &r)?;

    let coarse = &levels[l - 1];
    let rescale = config.rescale_transitions
        && coarse.precision == Precision::Fp16
        && prec != Precision::Fp16;
    let restriction = lev
        .restriction
        .as_ref()
        .expect("non-base levels carry a restriction");
    let (rc, scale) = restrict_with_cast(exec, restriction, &r, coarse.precision, rescale)?;
    conform(exec, l - 1, coarse.precision, &rc)?;

    let cc = cycle(levels, config, stats, exec, l - 1, &rc, magnitude / scale)?;

    let prolongation = coarse
        .prolongation
        .as_ref()
        .expect("non-finest levels carry an interpolation");
    exec.set_section(Section::Level(l - 1));
    let pc = exec.spmv(prolongation, &cc)?;
    exec.set_section(Section::Level(l));
    let correction = exec.cast_vector_mul(&pc, prec, scale)?;
    let u = exec.axpy(1.0, &correction, &u)?;
    conform(exec, l, prec, &u)?;

    jacobi_smooth(exec, lev, u, b, s.nu2, s.omega)
}

/// `steps` damped Jacobi sweeps `u += omega D⁻¹ (b - A u)` in the level's precision.
pub fn jacobi_smooth(
    exec: &mut Exec,
    level: &GridLevel,
    mut u: PVector,
    b: &PVector,
    steps: usize,
    omega: f64,
) -> Result<PVector> {
    for _ in 0..steps {
        let r = exec.residual(&level.a, &u, b)?;
        let t = exec.vec_multiply(&level.inv_diag, &r)?;
        u = exec.axpy(omega, &t, &u)?;
    }
    Ok(u)
}

/// `R r_fine` in the fine precision, then cast to `coarse`.
///
/// With `rescale` and an FP16 target the vector is divided by its norm
/// before the cast; the returned factor undoes that on the way back up.
pub fn restrict_with_cast(
    exec: &mut Exec,
    restriction: &EllMatrix,
    r_fine: &PVector,
    coarse: Precision,
    rescale: bool,
) -> Result<(PVector, f64)> {
    let y = exec.spmv(restriction, r_fine)?;
    let mut scale = 1.0;
    if rescale && coarse == Precision::Fp16 {
        let norm = exec.norm2(&y);
        if norm > 0.0 && norm.is_finite() {
            scale = norm;
        }
    }
    Ok((exec.cast_vector(&y, coarse, scale)?, scale))
}

/// Conjugate gradients from a zero guess in the level's precision, with
/// FP64 dot products. Stops once the recursive residual norm drops below
/// `tolerance`; when the iteration budget runs out the best iterate seen
/// is returned unconverged.
pub fn cg_solve(
    exec: &mut Exec,
    level: &GridLevel,
    b: &PVector,
    config: &BaseSolverConfig,
    tolerance: f64,
) -> Result<CgOutcome> {
    let n = level.n();
    let prec = level.precision;
    let budget = config
        .fixed_iterations
        .unwrap_or(config.max_iterations.unwrap_or(10 * n));
    let fixed = config.fixed_iterations.is_some();

    let mut x = PVector::zeros(n, prec);
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = exec.dot(&r, &r)?;
    let (mut best_x, mut best_rr) = (x.clone(), rr);
    let mut iterations = 0;

    while iterations < budget && rr > 0.0 && (fixed || rr.sqrt() >= tolerance) {
        let q = exec.spmv(&level.a, &p)?;
        let pq = exec.dot(&p, &q)?;
        if !(pq > 0.0 && pq.is_finite()) {
            break;
        }
        let alpha = rr / pq;
        x = exec.axpy(alpha, &p, &x)?;
        r = exec.axpy(-alpha, &q, &r)?;
        let rr_next = exec.dot(&r, &r)?;
        iterations += 1;
        if !rr_next.is_finite() {
            break;
        }
        p = exec.axpy(rr_next / rr, &p, &r)?;
        rr = rr_next;
        if rr < best_rr {
            best_rr = rr;
            best_x = x.clone();
        }
    }

    let converged = rr.sqrt() < tolerance;
    let (solution, rr) = if converged || fixed {
        (x, rr)
    } else {
        (best_x, best_rr)
    };
    Ok(CgOutcome {
        solution,
        iterations,
        residual_norm: rr.sqrt(),
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{assemble_levels, ProblemSpec};
    use crate::precision::round_to_precision;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn policy() -> ArithmeticPolicy {
        ArithmeticPolicy::default()
    }

    fn exec() -> Exec {
        Exec::new(policy())
    }

    fn tridiag(n: usize, scale: f64) -> EllMatrix {
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let mut row = vec![(i, 2.0 * scale)];
                if i > 0 {
                    row.push((i - 1, -scale));
                }
                if i + 1 < n {
                    row.push((i + 1, -scale));
                }
                row
            })
            .collect();
        EllMatrix::from_rows(n, &rows, Some(3)).unwrap()
    }

    /// Linear interpolation from `nc` coarse to `2 nc + 1` fine interior nodes.
    fn interp_1d(nc: usize) -> EllMatrix {
        let nf = 2 * nc + 1;
        let rows: Vec<Vec<(usize, f64)>> = (0..nf)
            .map(|i| {
                let node = i + 1;
                if node % 2 == 0 {
                    vec![(node / 2 - 1, 1.0)]
                } else {
                    let (left, right) = ((node - 1) / 2, (node + 1) / 2);
                    let mut row = Vec::new();
                    if left >= 1 {
                        row.push((left - 1, 0.5));
                    }
                    if right <= nc {
                        row.push((right - 1, 0.5));
                    }
                    row
                }
            })
            .collect();
        EllMatrix::from_rows(nc, &rows, Some(2)).unwrap()
    }

    /// Two-level 1D Poisson hierarchy, 3 coarse and 7 fine unknowns, h = 1/8.
    fn hierarchy_1d(config: MgConfig) -> MgHierarchy {
        let p = interp_1d(3);
        let r = p.transpose().unwrap();
        MgHierarchy::from_operators(
            vec![tridiag(3, 4.0), tridiag(7, 8.0)],
            vec![(p, r)],
            &[Precision::Fp64; 2],
            config,
            policy(),
        )
        .unwrap()
    }

    fn hierarchy_2d(nodes: usize, base: usize, variant: Variant, config: MgConfig) -> MgHierarchy {
        let spec = ProblemSpec::with_base_nodes(2, 1, nodes, base).unwrap();
        MgHierarchy::build(
            &spec,
            &variant.level_precisions(spec.levels),
            config,
            policy(),
        )
        .unwrap()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn variant_names_and_cascades() {
        use Precision::*;
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(v.name().to_lowercase().parse::<Variant>().unwrap(), v);
        }
        assert!("q_mg".parse::<Variant>().is_err());
        assert_eq!(Variant::DMg.level_precisions(3), vec![Fp64; 3]);
        assert_eq!(Variant::HMg.level_precisions(2), vec![Fp16; 2]);
        assert_eq!(
            Variant::HsdMg.level_precisions(6),
            vec![Fp64, Fp64, Fp32, Fp16, Fp16, Fp16]
        );
        assert_eq!(
            Variant::DshMg.level_precisions(6),
            vec![Fp16, Fp16, Fp32, Fp64, Fp64, Fp64]
        );
        assert_eq!(Variant::DshMg.level_precisions(2), vec![Fp16, Fp16]);
    }

    #[test]
    fn config_validation() {
        let mut c = MgConfig::default();
        c.smoother.omega = 0.0;
        assert!(c.validate().is_err());
        c.smoother.omega = 1.5;
        assert!(c.validate().is_err());
        c.smoother.omega = 1.0;
        c.base.tolerance = 0.0;
        assert!(c.validate().is_err());
        c.base.tolerance = 1e-4;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn d_mg_build_matches_assembly() {
        let spec = ProblemSpec::new(2, 1, 33, 3).unwrap();
        let ops = assemble_levels(&spec).unwrap();
        let h = MgHierarchy::build(
            &spec,
            &Variant::DMg.level_precisions(3),
            MgConfig::default(),
            policy(),
        )
        .unwrap();
        for (lev, op) in h.levels().iter().zip(&ops) {
            assert_eq!(
                lev.a.values().to_f64_vec(),
                op.stiffness.values().to_f64_vec()
            );
            assert_eq!(lev.a.col_index(), op.stiffness.col_index());
            assert_eq!(
                lev.restriction.as_ref().map(|m| m.values().to_f64_vec()),
                op.restriction.as_ref().map(|m| m.values().to_f64_vec())
            );
            assert_eq!(
                lev.prolongation.as_ref().map(|m| m.values().to_f64_vec()),
                op.prolongation.as_ref().map(|m| m.values().to_f64_vec())
            );
        }
    }

    #[test]
    fn h_mg_build_rounds_stencil() {
        let h = hierarchy_2d(17, 5, Variant::HMg, MgConfig::default());
        for lev in h.levels() {
            assert_eq!(lev.a.precision(), Precision::Fp16);
            assert_eq!(lev.inv_diag.precision(), Precision::Fp16);
            let g = lev.a.get(lev.n() / 2, lev.n() / 2);
            assert_eq!(g, round_to_precision(8.0 / 3.0, Precision::Fp16, policy()));
            assert!(((g - 8.0 / 3.0) / (8.0 / 3.0)).abs() <= 2f64.powi(-11));
            for (_, v) in lev
                .a
                .row_slots(lev.n() / 2)
                .filter(|&(c, _)| c != lev.n() / 2)
            {
                assert!(((v + 1.0 / 3.0) / (1.0 / 3.0)).abs() <= 2f64.powi(-11));
            }
            for i in 0..lev.n() {
                let prod = lev.inv_diag.get(i) * lev.a.get(i, i);
                assert!((prod - 1.0).abs() <= 2.0 * Precision::Fp16.unit_roundoff());
            }
        }
    }

    #[test]
    fn fp16_entries_stay_in_range_for_desk_grids() {
        // 2D entries do not depend on h, so a small grid covers every 2D size
        for (dim, nodes, base) in [(2, 65, 9), (3, 65, 5)] {
            let spec = ProblemSpec::with_base_nodes(dim, 1, nodes, base).unwrap();
            let levels = assemble_levels(&spec).unwrap();
            let max = levels
                .iter()
                .map(|l| l.stiffness.max_abs())
                .fold(0.0, f64::max);
            assert!(max < Precision::Fp16.max_finite());
            let min_diag = levels
                .iter()
                .flat_map(|l| l.stiffness.diagonal())
                .fold(f64::INFINITY, f64::min);
            assert!(1.0 / min_diag < Precision::Fp16.max_finite());
            assert!(min_diag >= Precision::Fp16.min_positive_normal());
        }
    }

    #[test]
    fn fp16_overflow_reports_level() {
        let p = interp_1d(3);
        let r = p.transpose().unwrap();
        let err = MgHierarchy::from_operators(
            vec![tridiag(3, 4.0), tridiag(7, 1e5)],
            vec![(p, r)],
            &[Precision::Fp64, Precision::Fp16],
            MgConfig::default(),
            policy(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Fp16Overflow { level: 1, .. }), "{err}");
    }

    #[test]
    fn jacobi_examples() {
        let h = hierarchy_1d(MgConfig::default());
        let lev = &h.levels()[1];
        let mut ex = exec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = PVector::Fp64(random_vec(&mut rng, 7));
        let b = PVector::Fp64(random_vec(&mut rng, 7));
        let same = jacobi_smooth(&mut ex, lev, u.clone(), &b, 0, 2.0 / 3.0).unwrap();
        assert_eq!(same.to_f64_vec(), u.to_f64_vec());

        let mut prev = ex.norm2(&ex.clone().residual(&lev.a, &u, &b).unwrap());
        let mut cur = u;
        for _ in 0..3 {
            cur = jacobi_smooth(&mut ex, lev, cur, &b, 1, 2.0 / 3.0).unwrap();
            let r = ex.residual(&lev.a, &cur, &b).unwrap();
            let n = ex.norm2(&r);
            assert!(n < prev);
            prev = n;
        }

        let id = GridLevel {
            precision: Precision::Fp64,
            a: EllMatrix::identity(4),
            inv_diag: PVector::Fp64(vec![1.0; 4]),
            restriction: None,
            prolongation: None,
        };
        let b = PVector::Fp64(vec![1.5, -2.0, 0.25, 7.0]);
        let u = jacobi_smooth(&mut ex, &id, PVector::Fp64(vec![3.0; 4]), &b, 1, 1.0).unwrap();
        assert_eq!(u.to_f64_vec(), b.to_f64_vec());
    }

    #[test]
    fn restriction_examples() {
        let r = interp_1d(3).transpose().unwrap();
        let mut ex = exec();
        let x = PVector::Fp64(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let (y, s) = restrict_with_cast(&mut ex, &r, &x, Precision::Fp64, true).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(y.to_f64_vec(), vec![4.0, 8.0, 12.0]);

        let tiny: Vec<f64> = x.to_f64_vec().iter().map(|v| v * 1e-9).collect();
        let (y, s) = restrict_with_cast(
            &mut ex,
            &r,
            &PVector::Fp64(tiny.clone()),
            Precision::Fp16,
            true,
        )
        .unwrap();
        assert!(s > 0.0 && s != 1.0);
        let n = ex.norm2(&y);
        assert!((n - 1.0).abs() <= 2f64.powi(-9), "{n}");

        let tiny: Vec<f64> = tiny.iter().map(|v| v * 1e-11).collect();
        let (y, s) =
            restrict_with_cast(&mut ex, &r, &PVector::Fp64(tiny), Precision::Fp16, false).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(y.count_nonzero(), 0);

        let (_, s) = restrict_with_cast(
            &mut ex,
            &r,
            &PVector::zeros(7, Precision::Fp64),
            Precision::Fp16,
            true,
        )
        .unwrap();
        assert_eq!(s, 1.0);
    }

    fn diag_level(d: &[f64], prec: Precision) -> GridLevel {
        let a = EllMatrix::from_rows(
            d.len(),
            &d.iter()
                .enumerate()
                .map(|(i, &v)| vec![(i, v)])
                .collect::<Vec<_>>(),
            None,
        )
        .unwrap()
        .cast(prec, policy());
        GridLevel {
            precision: prec,
            inv_diag: PVector::from_f64(
                &d.iter().map(|v| 1.0 / v).collect::<Vec<_>>(),
                prec,
                policy(),
            ),
            a,
            restriction: None,
            prolongation: None,
        }
    }

    #[test]
    fn cg_examples() {
        let mut ex = exec();
        let cfg = BaseSolverConfig::default();
        let id = diag_level(&[1.0; 5], Precision::Fp64);
        let b = PVector::Fp64(vec![1.0, -2.0, 3.0, 0.5, 4.0]);
        let out = cg_solve(&mut ex, &id, &b, &cfg, 1e-4).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        assert_eq!(out.solution.to_f64_vec(), b.to_f64_vec());

        let d = diag_level(&[1.0, 2.0, 3.0], Precision::Fp64);
        let out = cg_solve(&mut ex, &d, &PVector::Fp64(vec![1.0; 3]), &cfg, 1e-12).unwrap();
        assert!(out.iterations <= 3);
        for (x, e) in out.solution.to_f64_vec().iter().zip([1.0, 0.5, 1.0 / 3.0]) {
            assert!((x - e).abs() < 1e-12);
        }

        let zero = cg_solve(&mut ex, &d, &PVector::zeros(3, Precision::Fp64), &cfg, 1e-4).unwrap();
        assert_eq!(zero.iterations, 0);
        assert!(zero.converged);
    }

    #[test]
    fn cg_budget_returns_best_iterate_unconverged() {
        let h = hierarchy_2d(17, 9, Variant::DMg, MgConfig::default());
        let lev = &h.levels()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = PVector::Fp64(random_vec(&mut rng, lev.n()));
        let cfg = BaseSolverConfig {
            max_iterations: Some(2),
            ..Default::default()
        };
        let out = cg_solve(&mut exec(), lev, &b, &cfg, 1e-12).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
        assert!(out.residual_norm < norm(&b.to_f64_vec()));
    }

    #[test]
    fn fp16_cg_needs_scaled_input() {
        let h = hierarchy_2d(17, 5, Variant::HMg, MgConfig::default());
        let lev = &h.levels()[0];
        let a64 = hierarchy_2d(17, 5, Variant::DMg, MgConfig::default()).levels()[0]
            .a
            .clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = random_vec(&mut rng, lev.n())
            .iter()
            .map(|v| v * 1e-9)
            .collect();
        let alpha = norm(&raw);
        let mut ex = exec();
        let rel = |ex: &mut Exec, x: &PVector, factor: f64| {
            let x = PVector::Fp64(x.to_f64_vec().iter().map(|v| v * factor).collect());
            let r = ex.residual(&a64, &x, &PVector::Fp64(raw.clone())).unwrap();
            ex.norm2(&r) / alpha
        };

        let scaled = ex
            .cast_vector(&PVector::Fp64(raw.clone()), Precision::Fp16, alpha)
            .unwrap();
        let out = cg_solve(&mut ex, lev, &scaled, &BaseSolverConfig::default(), 1e-4).unwrap();
        assert!(out.converged);
        assert!(rel(&mut ex, &out.solution, alpha) < 1e-2);

        let unscaled = ex
            .cast_vector(&PVector::Fp64(raw.clone()), Precision::Fp16, 1.0)
            .unwrap();
        assert_eq!(unscaled.count_nonzero(), 0);
        let out = cg_solve(
            &mut ex,
            lev,
            &unscaled,
            &BaseSolverConfig::default(),
            1e-4 * alpha,
        )
        .unwrap();
        assert_eq!(rel(&mut ex, &out.solution, 1.0), 1.0);
    }

    // Plain dense two-grid cycle, written independently of the ELL kernels.
    fn dense_matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| {
                row.iter()
                    .zip(x)
                    .filter(|(v, _)| **v != 0.0)
                    .fold(0.0, |acc, (v, xj)| v.mul_add(*xj, acc))
            })
            .collect()
    }

    fn dense_dot(x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(y).fold(0.0, |acc, (a, b)| a.mul_add(*b, acc))
    }

    fn dense_cg(a: &[Vec<f64>], b: &[f64], tol: f64) -> Vec<f64> {
        let n = b.len();
        let mut x = vec![0.0; n];
        let mut r = b.to_vec();
        let mut p = r.clone();
        let mut rr = dense_dot(&r, &r);
        let mut it = 0;
        while it < 10 * n && rr > 0.0 && rr.sqrt() >= tol {
            let q = dense_matvec(a, &p);
            let alpha = rr / dense_dot(&p, &q);
            for i in 0..n {
                x[i] = alpha.mul_add(p[i], x[i]);
                r[i] = (-alpha).mul_add(q[i], r[i]);
            }
            let next = dense_dot(&r, &r);
            let beta = next / rr;
            for i in 0..n {
                p[i] = beta.mul_add(p[i], r[i]);
            }
            rr = next;
            it += 1;
        }
        x
    }

    fn dense_jacobi(a: &[Vec<f64>], u: &mut [f64], b: &[f64], steps: usize, omega: f64) {
        for _ in 0..steps {
            let au = dense_matvec(a, u);
            for i in 0..u.len() {
                let r = (-1.0f64).mul_add(au[i], b[i]);
                let t = (1.0 / a[i][i]) * r;
                u[i] = omega.mul_add(t, u[i]);
            }
        }
    }

    fn two_grid_oracle(b: &[f64]) -> Vec<f64> {
        let af = tridiag(7, 8.0).to_dense();
        let ac = tridiag(3, 4.0).to_dense();
        let p = interp_1d(3).to_dense();
        let r: Vec<Vec<f64>> = (0..3).map(|j| (0..7).map(|i| p[i][j]).collect()).collect();
        let omega = 2.0 / 3.0;
        let mut u = vec![0.0; 7];
        dense_jacobi(&af, &mut u, b, 3, omega);
        let au = dense_matvec(&af, &u);
        let res: Vec<f64> = (0..7).map(|i| (-1.0f64).mul_add(au[i], b[i])).collect();
        let rc = dense_matvec(&r, &res);
        let cc = dense_cg(&ac, &rc, 1e-4);
        let pc = dense_matvec(&p, &cc);
        for i in 0..7 {
            u[i] = 1.0f64.mul_add(pc[i], u[i]);
        }
        dense_jacobi(&af, &mut u, b, 3, omega);
        u
    }

    #[test]
    fn two_level_cycle_matches_dense_oracle_bitwise() {
        let mut h = hierarchy_1d(MgConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let b = random_vec(&mut rng, 7);
            let c = h
                .v_cycle(&mut exec(), 1, &PVector::Fp64(b.clone()), 1.0)
                .unwrap()
                .to_f64_vec();
            let o = two_grid_oracle(&b);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&c), bits(&o));
        }
    }

    #[test]
    fn zero_rhs_gives_zero_correction() {
        for v in Variant::ALL {
            let mut h = hierarchy_2d(33, 5, v, MgConfig::default());
            let n = h.finest().n();
            let prec = h.finest().precision;
            let mut ex = exec().with_validation(true);
            let c = h
                .v_cycle(&mut ex, h.n_levels() - 1, &PVector::zeros(n, prec), 1.0)
                .unwrap();
            assert_eq!(c.count_nonzero(), 0);
        }
    }

    fn contraction(nodes: usize) -> f64 {
        let mut h = hierarchy_2d(nodes, 5, Variant::DMg, MgConfig::default());
        let top = h.n_levels() - 1;
        let a = h.finest().a.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut u = random_vec(&mut rng, a.n_rows());
        let mut ex = exec();
        let mut norms = vec![norm(&u)];
        for _ in 0..8 {
            let au = ex.spmv(&a, &PVector::Fp64(u.clone())).unwrap().to_f64_vec();
            let r: Vec<f64> = au.iter().map(|v| -v).collect();
            let m = norm(&r);
            let rn = PVector::Fp64(r.iter().map(|v| v / m).collect());
            let c = h.v_cycle(&mut ex, top, &rn, 1.0).unwrap().to_f64_vec();
            for (ui, ci) in u.iter_mut().zip(&c) {
                *ui += m * ci;
            }
            norms.push(norm(&u));
        }
        // geometric mean over the last five cycles
        (norms[8] / norms[3]).powf(1.0 / 5.0)
    }

    #[test]
    fn v_cycle_contracts_grid_independently() {
        let rates: Vec<f64> = [33, 65, 129].into_iter().map(contraction).collect();
        for &q in &rates {
            assert!(q <= 0.5, "{rates:?}");
        }
        let spread = rates.iter().cloned().fold(f64::MIN, f64::max)
            - rates.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 0.1, "{rates:?}");
    }

    #[test]
    fn v_cycle_is_linear_in_fp64() {
        let config = MgConfig {
            base: BaseSolverConfig {
                fixed_iterations: Some(9),
                ..Default::default()
            },
            ..Default::default()
        };
        let mut h = hierarchy_2d(33, 5, Variant::DMg, config);
        let top = h.n_levels() - 1;
        let n = h.finest().n();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (b1, b2) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
        let a = 2.5;
        let combo: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| a * x + y).collect();
        let mut ex = exec();
        let mut cyc = |v: &[f64]| {
            h.v_cycle(&mut ex, top, &PVector::Fp64(v.to_vec()), 1.0)
                .unwrap()
                .to_f64_vec()
        };
        let lhs = cyc(&combo);
        let (c1, c2) = (cyc(&b1), cyc(&b2));
        let rhs: Vec<f64> = c1.iter().zip(&c2).map(|(x, y)| a * x + y).collect();
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(x, y)| x - y).collect();
        assert!(
            norm(&diff) <= 1e-12 * norm(&rhs),
            "{}",
            norm(&diff) / norm(&rhs)
        );
    }

    fn cycle_traffic(variant: Variant) -> crate::sparse::TrafficCounter {
        let config = MgConfig {
            base: BaseSolverConfig {
                fixed_iterations: Some(5),
                ..Default::default()
            },
            ..Default::default()
        };
        let mut h = hierarchy_2d(129, 9, variant, config);
        let n = h.finest().n();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = PVector::from_f64(&random_vec(&mut rng, n), h.finest().precision, policy());
        let mut ex = exec();
        h.v_cycle(&mut ex, h.n_levels() - 1, &b, 1.0).unwrap();
        assert_eq!(ex.outer_traffic().total_bytes(), 0);
        *ex.traffic()
    }

    #[test]
    fn cycle_traffic_ratios() {
        let d = cycle_traffic(Variant::DMg);
        let h = cycle_traffic(Variant::HMg);
        assert_eq!(4 * h.value_bytes(), d.value_bytes());
        assert_eq!(h.index_bytes_read, d.index_bytes_read);
        let hsd = cycle_traffic(Variant::HsdMg).value_bytes() as f64 / d.value_bytes() as f64;
        let dsh = cycle_traffic(Variant::DshMg).value_bytes() as f64 / d.value_bytes() as f64;
        assert!(0.25 < hsd && hsd < 1.0, "{hsd}");
        assert!(dsh > 0.9, "{dsh}");
    }

    #[test]
    fn per_level_traffic_is_split() {
        let mut h = hierarchy_2d(33, 5, Variant::DMg, MgConfig::default());
        let n = h.finest().n();
        let mut ex = exec();
        h.v_cycle(&mut ex, h.n_levels() - 1, &PVector::Fp64(vec![1.0; n]), 1.0)
            .unwrap();
        let levels = ex.level_traffic();
        assert_eq!(levels.len(), h.n_levels());
        assert!(levels.iter().all(|t| t.total_bytes() > 0));
        let sum: u64 = levels.iter().map(|t| t.total_bytes()).sum();
        assert_eq!(sum, ex.traffic().total_bytes());
    }

    #[test]
    fn v_cycle_rejects_wrong_precision() {
        let mut h = hierarchy_2d(17, 5, Variant::HMg, MgConfig::default());
        let n = h.finest().n();
        let err = h
            .v_cycle(&mut exec(), 2, &PVector::zeros(n, Precision::Fp64), 1.0)
            .unwrap_err();
        assert!(matches!(err, Error::LevelPrecision { level: 2, .. }));
        assert!(h
            .v_cycle(&mut exec(), 5, &PVector::zeros(n, Precision::Fp16), 1.0)
            .is_err());
    }

    #[test]
    fn mixed_cycles_reduce_residual() {
        for v in Variant::ALL {
            let mut h = hierarchy_2d(65, 9, v, MgConfig::default());
            let a = hierarchy_2d(65, 9, Variant::DMg, MgConfig::default())
                .finest()
                .a
                .clone();
            let n = a.n_rows();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let b = random_vec(&mut rng, n);
            let nb = norm(&b);
            let mut ex = exec().with_validation(true);
            let bl = ex
                .cast_vector(&PVector::Fp64(b.clone()), h.finest().precision, nb)
                .unwrap();
            let c = h.v_cycle(&mut ex, h.n_levels() - 1, &bl, 1.0).unwrap();
            let c: Vec<f64> = c.to_f64_vec().iter().map(|x| x * nb).collect();
            let r = ex
                .residual(&a, &PVector::Fp64(c), &PVector::Fp64(b))
                .unwrap();
            assert!(ex.norm2(&r) < 0.5 * nb, "{v}");
        }
    }
}
