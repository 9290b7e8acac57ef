//! Q1 finite elements for Poisson's equation on the unit square / cube.
//!
//! Uniform structured grids with homogeneous Dirichlet data: boundary nodes
//! are eliminated and interior nodes are numbered lexicographically with x
//! fastest. Stiffness and load integrals use 2-point Gauss quadrature per
//! direction on every element.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::sparse::{EllMatrix, PVector};

/// Problem size and nesting of a multigrid hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemSpec {
    pub dim: usize,
    /// Oscillation parameter of the manufactured solution.
    pub k: u32,
    pub finest_nodes_per_dim: usize,
    /// Number of grid levels, `L + 1`.
    pub levels: usize,
}

impl ProblemSpec {
    pub fn new(dim: usize, k: u32, finest_nodes_per_dim: usize, levels: usize) -> Result<Self> {
        let spec = Self {
            dim,
            k,
            finest_nodes_per_dim,
            levels,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Picks the level count so that the coarsest grid has `base_nodes` nodes
    /// per dimension.
    pub fn with_base_nodes(
        dim: usize,
        k: u32,
        finest_nodes_per_dim: usize,
        base_nodes: usize,
    ) -> Result<Self> {
        if base_nodes < 3 || finest_nodes_per_dim < base_nodes {
            return Err(Error::InvalidProblem(format!(
                "cannot coarsen {finest_nodes_per_dim} nodes down to {base_nodes}"
            )));
        }
        let (fine, base) = (finest_nodes_per_dim - 1, base_nodes - 1);
        if fine % base != 0 || !(fine / base).is_power_of_two() {
            return Err(Error::InvalidProblem(format!(
                "{finest_nodes_per_dim} nodes per dimension is not 2^m * {base} + 1"
            )));
        }
        let levels = (fine / base).trailing_zeros() as usize + 1;
        Self::new(dim, k, finest_nodes_per_dim, levels)
    }

    fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.dim) {
            return Err(Error::InvalidProblem(format!(
                "dimension must be 2 or 3, got {}",
                self.dim
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidProblem("k must be positive".into()));
        }
        if self.levels < 1 {
            return Err(Error::InvalidProblem(
                "at least one level is required".into(),
            ));
        }
        let steps = self.levels - 1;
        let fine = self.finest_nodes_per_dim.saturating_sub(1);
        if steps >= usize::BITS as usize || fine % (1 << steps) != 0 || fine >> steps < 2 {
            return Err(Error::InvalidProblem(format!(
                "{} nodes per dimension cannot be coarsened {} times down to at least 3 nodes",
                self.finest_nodes_per_dim, steps
            )));
        }
        Ok(())
    }

    pub fn base_nodes_per_dim(&self) -> usize {
        self.nodes_at(0)
    }

    /// Nodes per dimension on `level` (0 is the coarsest).
    pub fn nodes_at(&self, level: usize) -> usize {
        ((self.finest_nodes_per_dim - 1) >> (self.levels - 1 - level)) + 1
    }

    pub fn grid(&self, level: usize) -> StructuredGrid {
        StructuredGrid {
            dim: self.dim,
            nodes_per_dim: self.nodes_at(level),
        }
    }

    pub fn finest_grid(&self) -> StructuredGrid {
        self.grid(self.levels - 1)
    }
}

/// Uniform grid over the unit square or cube, boundary included in the node count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuredGrid {
    pub dim: usize,
    pub nodes_per_dim: usize,
}

impl StructuredGrid {
    pub fn new(dim: usize, nodes_per_dim: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidProblem(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        if nodes_per_dim < 3 {
            return Err(Error::InvalidProblem(format!(
                "grid needs at least 3 nodes per dimension, got {nodes_per_dim}"
            )));
        }
        Ok(Self { dim, nodes_per_dim })
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.nodes_per_dim - 1) as f64
    }

    pub fn interior_per_dim(&self) -> usize {
        self.nodes_per_dim - 2
    }

    pub fn n_unknowns(&self) -> usize {
        self.interior_per_dim().pow(self.dim as u32)
    }

    /// Unknown index of a node given by its grid coordinates, `None` on the boundary.
    pub fn unknown(&self, node: &[usize]) -> Option<usize> {
        let m = self.interior_per_dim();
        let mut idx = 0;
        for &c in node.iter().rev() {
            if c == 0 || c >= self.nodes_per_dim - 1 {
                return None;
            }
            idx = idx * m + (c - 1);
        }
        Some(idx)
    }

    /// Grid coordinates of an unknown.
    pub fn node(&self, unknown: usize) -> [usize; 3] {
        let m = self.interior_per_dim();
        let mut rest = unknown;
        let mut out = [0; 3];
        for c in out.iter_mut().take(self.dim) {
            *c = rest % m + 1;
            rest /= m;
        }
        out
    }

    fn validate(&self) -> Result<()> {
        Self::new(self.dim, self.nodes_per_dim).map(|_| ())
    }
}

/// Gauss points of the 2-point rule on [0, 1]; both weights are 1/2.
fn gauss_points() -> [f64; 2] {
    let d = 0.5 / 3f64.sqrt();
    [0.5 - d, 0.5 + d]
}

fn corners(dim: usize) -> impl Iterator<Item = [usize; 3]> {
    (0..1usize << dim).map(move |a| {
        let mut c = [0; 3];
        for (d, v) in c.iter_mut().enumerate().take(dim) {
            *v = (a >> d) & 1;
        }
        c
    })
}

fn quadrature_points(dim: usize) -> impl Iterator<Item = [f64; 3]> {
    let g = gauss_points();
    corners(dim).map(move |c| {
        let mut p = [0.0; 3];
        for d in 0..dim {
            p[d] = g[c[d]];
        }
        p
    })
}

fn shape_1d(corner: usize, t: f64) -> f64 {
    if corner == 1 {
        t
    } else {
        1.0 - t
    }
}

fn shape_deriv_1d(corner: usize) -> f64 {
    if corner == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Element stiffness matrix of one Q1 element of width `h`, row-major over
/// the `2^dim` corners (corner bit `d` is the offset in direction `d`).
pub fn element_stiffness(dim: usize, h: f64) -> Vec<f64> {
    let nc = 1 << dim;
    let weight = 0.5f64.powi(dim as i32);
    let cs: Vec<[usize; 3]> = corners(dim).collect();
    let mut k = vec![0.0; nc * nc];
    for q in quadrature_points(dim) {
        // gradients on the reference cell [0,1]^dim
        let grads: Vec<[f64; 3]> = cs
            .iter()
            .map(|c| {
                let mut g = [0.0; 3];
                for (d, gd) in g.iter_mut().enumerate().take(dim) {
                    *gd = (0..dim)
                        .map(|e| {
                            if e == d {
                                shape_deriv_1d(c[e])
                            } else {
                                shape_1d(c[e], q[e])
                            }
                        })
                        .product();
                }
                g
            })
            .collect();
        for a in 0..nc {
            for b in 0..nc {
                let dot: f64 = (0..dim).map(|d| grads[a][d] * grads[b][d]).sum();
                k[a * nc + b] += weight * dot;
            }
        }
    }
    // reference cell to width h: gradients scale with 1/h, volume with h^dim
    let scale = h.powi(dim as i32 - 2);
    k.iter_mut().for_each(|v| *v *= scale);
    k
}

fn offset_slot(dim: usize, from: &[usize; 3], to: &[usize; 3]) -> usize {
    let mut slot = 0;
    for d in (0..dim).rev() {
        slot = slot * 3 + (to[d] + 1 - from[d]);
    }
    slot
}

fn for_each_element(grid: &StructuredGrid, mut f: impl FnMut([usize; 3])) {
    let ne = grid.nodes_per_dim - 1;
    let nz = if grid.dim == 3 { ne } else { 1 };
    for z in 0..nz {
        for y in 0..ne {
            for x in 0..ne {
                f([x, y, z]);
            }
        }
    }
}

/// Stiffness matrix over the interior nodes, FP64, `3^dim` slots per row.
pub fn assemble_stiffness(grid: &StructuredGrid) -> Result<EllMatrix> {
    grid.validate()?;
    let dim = grid.dim;
    let width = 3usize.pow(dim as u32);
    let n = grid.n_unknowns();
    let ke = element_stiffness(dim, grid.h());
    let cs: Vec<[usize; 3]> = corners(dim).collect();
    let nc = cs.len();

    let mut slots = vec![0.0; n * width];
    let mut present = vec![false; n * width];
    for_each_element(grid, |e| {
        let nodes: Vec<[usize; 3]> = cs
            .iter()
            .map(|c| {
                let mut p = [0; 3];
                for d in 0..dim {
                    p[d] = e[d] + c[d];
                }
                p
            })
            .collect();
        let ids: Vec<Option<usize>> = nodes.iter().map(|p| grid.unknown(&p[..dim])).collect();
        for a in 0..nc {
            let Some(row) = ids[a] else { continue };
            for b in 0..nc {
                if ids[b].is_none() {
                    continue;
                }
                let k = row * width + offset_slot(dim, &nodes[a], &nodes[b]);
                slots[k] += ke[a * nc + b];
                present[k] = true;
            }
        }
    });

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|row| {
            let node = grid.node(row);
            (0..width)
                .filter(|s| present[row * width + s])
                .map(|s| {
                    let mut nb = [0; 3];
                    let mut rest = s;
                    for d in 0..dim {
                        nb[d] = node[d] + rest % 3 - 1;
                        rest /= 3;
                    }
                    let col = grid
                        .unknown(&nb[..dim])
                        .expect("present slots are interior");
                    (col, slots[row * width + s])
                })
                .collect()
        })
        .collect();
    EllMatrix::from_rows(n, &rows, Some(width))
}

fn sin_table(grid: &StructuredGrid, k: u32) -> Vec<[f64; 2]> {
    let h = grid.h();
    let g = gauss_points();
    (0..grid.nodes_per_dim - 1)
        .map(|e| g.map(|t| (k as f64 * PI * (e as f64 + t) * h).sin()))
        .collect()
}

/// Load vector `b_i = ∫ f φ_i` for `f = dim k² π² Π sin(kπ x_d)`.
pub fn assemble_rhs(grid: &StructuredGrid, k: u32) -> Result<PVector> {
    grid.validate()?;
    let dim = grid.dim;
    let h = grid.h();
    let amplitude = dim as f64 * (k as f64 * PI).powi(2);
    let weight = (0.5 * h).powi(dim as i32);
    let sines = sin_table(grid, k);
    let g = gauss_points();
    let cs: Vec<[usize; 3]> = corners(dim).collect();
    let qs: Vec<[usize; 3]> = corners(dim).collect();

    let mut b = vec![0.0; grid.n_unknowns()];
    for_each_element(grid, |e| {
        for q in &qs {
            let f = amplitude * (0..dim).map(|d| sines[e[d]][q[d]]).product::<f64>();
            for c in &cs {
                let mut node = [0; 3];
                for d in 0..dim {
                    node[d] = e[d] + c[d];
                }
                if let Some(i) = grid.unknown(&node[..dim]) {
                    let phi: f64 = (0..dim).map(|d| shape_1d(c[d], g[q[d]])).product();
                    b[i] += weight * f * phi;
                }
            }
        }
    });
    Ok(PVector::Fp64(b))
}

/// Manufactured solution `Π sin(kπ x_d)` sampled at the interior nodes.
pub fn exact_solution(grid: &StructuredGrid, k: u32) -> Result<PVector> {
    grid.validate()?;
    let h = grid.h();
    let s: Vec<f64> = (0..grid.nodes_per_dim)
        .map(|i| (k as f64 * PI * i as f64 * h).sin())
        .collect();
    let u = (0..grid.n_unknowns())
        .map(|i| {
            let node = grid.node(i);
            (0..grid.dim).map(|d| s[node[d]]).product()
        })
        .collect();
    Ok(PVector::Fp64(u))
}

/// Interpolation `P` (coarse to fine) and restriction `R = Pᵀ`, FP64.
pub fn assemble_transfer(
    fine: &StructuredGrid,
    coarse: &StructuredGrid,
) -> Result<(EllMatrix, EllMatrix)> {
    fine.validate()?;
    coarse.validate()?;
    if fine.dim != coarse.dim || fine.nodes_per_dim - 1 != 2 * (coarse.nodes_per_dim - 1) {
        return Err(Error::NonNestedGrids {
            fine: fine.nodes_per_dim,
            coarse: coarse.nodes_per_dim,
        });
    }
    let dim = fine.dim;
    let rows: Vec<Vec<(usize, f64)>> = (0..fine.n_unknowns())
        .map(|i| {
            let node = fine.node(i);
            let parents: Vec<Vec<(usize, f64)>> = (0..dim)
                .map(|d| {
                    let c = node[d];
                    if c % 2 == 0 {
                        vec![(c / 2, 1.0)]
                    } else {
                        vec![((c - 1) / 2, 0.5), ((c + 1) / 2, 0.5)]
                    }
                })
                .collect();
            let mut entries = Vec::new();
            let mut stack = vec![([0usize; 3], 1.0f64, 0usize)];
            while let Some((mut at, w, d)) = stack.pop() {
                if d == dim {
                    if let Some(col) = coarse.unknown(&at[..dim]) {
                        entries.push((col, w));
                    }
                    continue;
                }
                for &(c, pw) in &parents[d] {
                    at[d] = c;
                    stack.push((at, w * pw, d + 1));
                }
            }
            entries
        })
        .collect();
    let p = EllMatrix::from_rows(coarse.n_unknowns(), &rows, Some(1 << dim))?;
    let r = p.transpose()?;
    Ok((p, r))
}

/// Discrete L2 norm `sqrt(h^dim Σ e_i²)` of the nodal error.
pub fn nodal_l2_error(grid: &StructuredGrid, u: &[f64], exact: &[f64]) -> f64 {
    let sum: f64 = u.iter().zip(exact).map(|(a, b)| (a - b) * (a - b)).sum();
    (grid.h().powi(grid.dim as i32) * sum).sqrt()
}

/// FP64 operators of every level, shared by all precision variants.
#[derive(Debug, Clone)]
pub struct LevelOperators {
    pub grid: StructuredGrid,
    pub stiffness: EllMatrix,
    /// Restriction from this level to the next coarser one (absent on level 0).
    pub restriction: Option<EllMatrix>,
    /// Interpolation from this level to the next finer one (absent on the finest).
    pub prolongation: Option<EllMatrix>,
}

/// Assembles stiffness and transfer operators on every level of `spec`.
pub fn assemble_levels(spec: &ProblemSpec) -> Result<Vec<LevelOperators>> {
    spec.validate()?;
    let mut ops: Vec<LevelOperators> = Vec::with_capacity(spec.levels);
    for l in 0..spec.levels {
        let grid = spec.grid(l);
        let stiffness = assemble_stiffness(&grid)?;
        let mut restriction = None;
        if l > 0 {
            let (p, r) = assemble_transfer(&grid, &ops[l - 1].grid)?;
            ops[l - 1].prolongation = Some(p);
            restriction = Some(r);
        }
        ops.push(LevelOperators {
            grid,
            stiffness,
            restriction,
            prolongation: None,
        });
    }
    Ok(ops)
}
