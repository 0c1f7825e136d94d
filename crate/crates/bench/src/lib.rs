//! Fixtures shared by the criterion benchmarks in `benches/`.

use std::sync::Arc;

use mosco_core::assembly::{assemble_load, assemble_operator, Coefficients, LoadFunctional};
use mosco_core::constraints::ConstraintSet;
use mosco_core::mesh::{
    build_interval_mesh, build_triangle_mesh, interpolate_nodal, Mesh, NodalVector, Rect,
};
use mosco_core::DiscreteOperator;

pub struct Problem {
    pub mesh: Arc<Mesh>,
    pub op: DiscreteOperator,
    pub f: LoadFunctional,
    pub k: ConstraintSet,
}

/// 1D contact problem: `-y'' = 8`, `y <= 0.1`, on `n` cells.
pub fn contact_1d(n: usize) -> Problem {
    let mesh = Arc::new(build_interval_mesh(n, 0.0, 1.0).expect("mesh"));
    let op = assemble_operator(&mesh, &Coefficients::laplacian()).expect("operator");
    let f = assemble_load(&mesh, |_| 8.0).expect("load");
    let k = ConstraintSet::nodal(&mesh, NodalVector::constant(&mesh, 0.1)).expect("obstacle");
    Problem { mesh, op, f, k }
}

/// Membrane on the unit square with a dome obstacle, `n x n` cells.
pub fn membrane_2d(n: usize) -> Problem {
    let mesh = Arc::new(build_triangle_mesh(n, n, Rect::new(0.0, 1.0, 0.0, 1.0)).expect("mesh"));
    let op = assemble_operator(&mesh, &Coefficients::laplacian()).expect("operator");
    let f = assemble_load(&mesh, |_| 10.0).expect("load");
    let phi = interpolate_nodal(
        |p| 0.05 + 0.1 * p[0] * (1.0 - p[0]) * p[1] * (1.0 - p[1]),
        &mesh,
    )
    .expect("obstacle");
    let k = ConstraintSet::nodal(&mesh, phi).expect("obstacle");
    Problem { mesh, op, f, k }
}
