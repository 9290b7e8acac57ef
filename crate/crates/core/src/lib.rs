//! Mixed-precision geometric multigrid for the Poisson equation.
//!
//! Binary16 is emulated in software, so FP16, FP32 and FP64 levels can be
//! mixed freely inside one V-cycle. The V-cycle acts as the correction
//! solver of an FP64 iterative refinement loop, which delivers FP64
//! accuracy regardless of the precisions used on the grid levels.

pub mod bench;
pub mod error;
pub mod ir;
pub mod mesh;
pub mod multigrid;
pub mod precision;
pub mod sparse;

pub use error::{Error, Result};
pub use ir::{ir_solve, residual_norm, InitialGuess, IrConfig, ResidualScaling, SolveReport};
pub use mesh::{ProblemSpec, StructuredGrid};
pub use multigrid::{BaseSolverConfig, MgConfig, MgHierarchy, SmootherConfig, Variant};
pub use precision::{ArithmeticPolicy, Fp16, Precision};
pub use sparse::{Accumulation, EllMatrix, Exec, PVector, Section, TrafficCounter};
