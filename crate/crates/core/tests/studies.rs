use std::sync::Arc;

use mosco_core::assembly::assemble_lumped_mass;
use mosco_core::assembly::{
    assemble_load, assemble_operator, energy_norm, Coefficients, DiscreteOperator, LoadFunctional,
};
use mosco_core::constraints::{scale_recovery, singular_perturbation_recovery, ConstraintSet};
use mosco_core::mesh::{build_interval_mesh, interpolate_nodal, Mesh, NodalVector};
use mosco_core::mosco::{
    default_deltas, fem_constraint_study, mosco_study, ContinuumProblem, FemConstraint,
    LoadSequence, SetSequence,
};
use mosco_core::vi_solver::default_penalty_schedule;

fn contact(n: usize) -> (Arc<Mesh>, DiscreteOperator, LoadFunctional, ConstraintSet) {
    let m = Arc::new(build_interval_mesh(n, 0.0, 1.0).unwrap());
    let op = assemble_operator(&m, &Coefficients::laplacian()).unwrap();
    let f = assemble_load(&m, |_| 8.0).unwrap();
    let k = ConstraintSet::nodal(&m, NodalVector::constant(&m, 0.1)).unwrap();
    (m, op, f, k)
}

#[test]
fn harmonic_obstacle_shift_is_bounded_by_c_over_n() {
    let (_, op, f, k) = contact(32);
    let deltas: Vec<f64> = (1..=10).map(|n| 1.0 / n as f64).collect();
    let seq = SetSequence::shifted(k, deltas).unwrap();
    let r = mosco_study(&op, &LoadSequence::fixed(f), &seq).unwrap();
    for rec in &r.records {
        // Comparison principle: the sup error is at most the shift 1/n.
        assert!(rec.err_sup.unwrap() <= 1.0 / rec.n as f64 + 1e-10);
        assert!(rec.feasible);
    }
}

#[test]
fn simultaneous_load_and_set_perturbation_converges() {
    let (m, op, f, k) = contact(32);
    let g = assemble_load(&m, |p| 1.0 + p[0]).unwrap();
    let seq = SetSequence::shifted(k, default_deltas()).unwrap();
    let loads = LoadSequence {
        limit: f,
        direction: Some(g),
    };
    let r = mosco_study(&op, &loads, &seq).unwrap();
    assert!(r.converged);
    assert!(r.slope.unwrap() > 0.0);
    assert!(r.limit_feasible().unwrap());
}

#[test]
fn recovery_distances_shrink_along_the_sequence() {
    let (m, op, _, k) = contact(32);
    let seq = SetSequence::new(k, vec![-0.1; m.n_nodes()], default_deltas()).unwrap();
    let f = assemble_load(&m, |_| 8.0).unwrap();
    let r = mosco_study(&op, &LoadSequence::fixed(f), &seq).unwrap();
    assert!(
        r.records.iter().all(|x| x.error.is_none()),
        "{:?}",
        r.records[0].error
    );
    let d: Vec<f64> = r
        .records
        .iter()
        .map(|x| x.recovery_distance.unwrap())
        .collect();
    assert!(d.windows(2).all(|w| w[1] <= w[0] + 1e-14), "{d:?}");
    assert!(d.last().unwrap() < &1e-2);
    assert!(r.records.iter().all(|x| x.feasible));
}

#[test]
fn scale_construction_obeys_the_beta_bound() {
    let m = Arc::new(build_interval_mesh(32, 0.0, 1.0).unwrap());
    let op = assemble_operator(&m, &Coefficients::laplacian()).unwrap();
    let alpha = vec![1.0; m.n_elements()];
    let w = interpolate_nodal(|p| p[0].min(1.0 - p[0]), &m).unwrap();
    let wn = energy_norm(&op, w.values());
    let mut prev = f64::INFINITY;
    for n in 1..=10 {
        let alpha_n: Vec<f64> = alpha.iter().map(|a| a + 1.0 / n as f64).collect();
        let k_n = ConstraintSet::gradient(&m, alpha_n.clone(), 2.0).unwrap();
        let r = scale_recovery(&w, &alpha, &alpha_n, 1.0).unwrap();
        assert!(k_n.violation(&r).unwrap() <= 1e-9);
        let d = energy_norm(&op, r.sub(&w).unwrap().values());
        assert!(d <= wn / n as f64 * (1.0 + 1e-12));
        assert!(d <= prev);
        prev = d;
    }
}

#[test]
fn singular_perturbation_on_concave_obstacle_with_bump() {
    let m = Arc::new(build_interval_mesh(32, 0.0, 1.0).unwrap());
    let q = assemble_operator(&m, &Coefficients::laplacian()).unwrap();
    let mass = assemble_lumped_mass(&m).unwrap();
    let phi = |x: f64| 0.2 + x * (1.0 - x);
    let w = interpolate_nodal(
        |p| phi(p[0]) - 0.3 * (-(p[0] - 0.4).powi(2) * 50.0).exp(),
        &m,
    )
    .unwrap();
    for n in 1..=6 {
        let s = 1.0 - 0.5f64.powi(n);
        let phi_n = interpolate_nodal(|p| s * phi(p[0]), &m).unwrap();
        let w_n = singular_perturbation_recovery(&w, &phi_n, &q, &mass).unwrap();
        assert!(w_n.le(&phi_n, 1e-9).unwrap());
    }
}

fn continuum(obstacle: f64) -> ContinuumProblem {
    ContinuumProblem {
        coefficients: Coefficients::laplacian(),
        load: Arc::new(|_| 8.0),
        obstacle: Some(Arc::new(move |_| obstacle)),
        alpha: None,
        p: 2.0,
        penalty_schedule: default_penalty_schedule(),
    }
}

fn hierarchy(levels: &[usize]) -> Vec<Arc<Mesh>> {
    levels
        .iter()
        .map(|&c| Arc::new(build_interval_mesh(c, 0.0, 1.0).unwrap()))
        .collect()
}

#[test]
fn nodal_fem_study_decreases_over_levels() {
    let r = fem_constraint_study(
        &continuum(0.1),
        FemConstraint::K2Nodal,
        &hierarchy(&[4, 8, 16, 32, 256]),
    )
    .unwrap();
    assert_eq!(r.records.len(), 4);
    assert!(r.converged, "{:?}", r.errors_sup());
}

#[test]
fn midpoint_and_nodal_variants_share_the_limit() {
    let h = hierarchy(&[8, 16, 32, 128]);
    let k1 = fem_constraint_study(&continuum(0.1), FemConstraint::K1Midpoint, &h).unwrap();
    let k2 = fem_constraint_study(&continuum(0.1), FemConstraint::K2Nodal, &h).unwrap();
    let d = k1.limit.y.sup_distance(&k2.limit.y).unwrap();
    assert!(d <= 2e-3, "{d}");
    assert!(k1.records.last().unwrap().err_sup.unwrap() < k1.records[0].err_sup.unwrap());
}

#[test]
fn inactive_gradient_bound_gives_plain_fem_rates() {
    let problem = ContinuumProblem {
        coefficients: Coefficients::laplacian(),
        load: Arc::new(|p| std::f64::consts::PI.powi(2) * (std::f64::consts::PI * p[0]).sin()),
        obstacle: None,
        alpha: Some(Arc::new(|_| 1e3)),
        p: 2.0,
        penalty_schedule: default_penalty_schedule(),
    };
    let r = fem_constraint_study(
        &problem,
        FemConstraint::KiGradient,
        &hierarchy(&[4, 8, 16, 32, 512]),
    )
    .unwrap();
    assert!(r.slope.unwrap() >= 1.8, "{:?}", r.slope);
    assert!(r.records.iter().all(|x| x.violation.unwrap() == 0.0));
}

#[test]
fn gradient_bound_must_be_positive() {
    let problem = ContinuumProblem {
        coefficients: Coefficients::laplacian(),
        load: Arc::new(|_| 1.0),
        obstacle: None,
        alpha: Some(Arc::new(|p| p[0] - 0.5)),
        p: 2.0,
        penalty_schedule: default_penalty_schedule(),
    };
    assert!(
        fem_constraint_study(&problem, FemConstraint::KiGradient, &hierarchy(&[4, 8])).is_err()
    );
}
