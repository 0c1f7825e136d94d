//! Discretization, solvers and convergence studies for variational and
//! quasi-variational inequalities with moving constraint sets.

pub mod assembly;
pub mod constraints;
pub mod error;
pub mod mesh;
pub mod mosco;
mod newton;
pub mod qvi;
pub mod regularization;
pub mod report;
pub mod sparse;
pub mod vi_solver;

pub use assembly::{Coefficients, Diffusion, DiscreteOperator, LoadFunctional};
pub use constraints::{ConstraintKind, ConstraintSet, Obstacle};
pub use error::{Error, Result};
pub use mesh::{Mesh, MeshId, NodalVector, Point, Rect, ScalarField};
pub use qvi::{ObstacleMap, QVISolution};
pub use report::{Flag, ReportRow, StudyReport};
pub use vi_solver::{SolverOptions, VISolution};
