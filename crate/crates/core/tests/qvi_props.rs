use std::sync::Arc;

use mosco_core::assembly::{
    assemble_load, assemble_operator, solve_linear, Coefficients, DiscreteOperator, LoadFunctional,
};
use mosco_core::constraints::ConstraintSet;
use mosco_core::error::Error;
use mosco_core::mesh::{build_interval_mesh, Mesh, NodalVector};
use mosco_core::qvi::{
    apply_t, check_increasing, check_scaling, default_f_max, evaluate_obstacle, maximal_solution,
    minimal_solution, stability_study, CompliantMap, ObstacleMap,
};
use mosco_core::vi_solver::{solve_obstacle_vi, SolverOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn setup(n: usize) -> (Arc<Mesh>, DiscreteOperator) {
    let m = Arc::new(build_interval_mesh(n, 0.0, 1.0).unwrap());
    let op = assemble_operator(&m, &Coefficients::laplacian()).unwrap();
    (m, op)
}

fn random_nonneg(rng: &mut ChaCha8Rng, m: &Mesh, scale: f64) -> Vec<f64> {
    (0..m.n_nodes())
        .map(|i| {
            if m.is_boundary(i) {
                0.0
            } else {
                rng.random_range(0.0..scale)
            }
        })
        .collect()
}

#[test]
fn t_is_increasing_on_random_pairs() {
    let (m, op) = setup(24);
    let map = ObstacleMap::superposition(0.1, 1.0, 2.0).unwrap();
    let f = assemble_load(&m, |_| 20.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let v = random_nonneg(&mut rng, &m, 1.0);
        let w: Vec<f64> = v
            .iter()
            .zip(random_nonneg(&mut rng, &m, 1.0))
            .map(|(a, b)| a + b)
            .collect();
        let tv = apply_t(&op, &f, &map, &NodalVector::new(&m, v).unwrap()).unwrap();
        let tw = apply_t(&op, &f, &map, &NodalVector::new(&m, w).unwrap()).unwrap();
        assert!(tv.le(&tw, 1e-10).unwrap());
    }
}

#[test]
fn minimal_below_maximal_within_the_a_priori_box() {
    let (m, op) = setup(32);
    let map = ObstacleMap::superposition(0.1, 1.0, 2.0).unwrap();
    let f = assemble_load(&m, |p| 10.0 + 10.0 * p[0]).unwrap();
    let f_max = default_f_max(&[f.clone()]).unwrap();
    let lo = minimal_solution(&op, &f, &map, TOL).unwrap();
    let hi = maximal_solution(&op, &f, &map, &f_max, TOL).unwrap();
    let top = solve_linear(&op, &f_max).unwrap();
    assert!(lo.y.le(&hi.y, 1e-8).unwrap());
    assert!(NodalVector::zeros(&m).le(&lo.y, 1e-12).unwrap());
    assert!(hi.y.le(&top, 1e-8).unwrap());
    for w in lo.history.windows(2) {
        assert!(w[0].le(&w[1], 1e-9).unwrap());
    }
    for w in hi.history.windows(2) {
        assert!(w[1].le(&w[0], 1e-9).unwrap());
    }
    assert!(lo.fixed_point_residual <= 10.0 * TOL);
    assert!(hi.fixed_point_residual <= 10.0 * TOL);
}

#[test]
fn minimal_solution_is_monotone_in_the_load() {
    let (m, op) = setup(16);
    let map = ObstacleMap::superposition(0.1, 1.0, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let f: Vec<f64> = (0..m.n_free())
            .map(|_| rng.random_range(0.0..2.0))
            .collect();
        let g: Vec<f64> = f.iter().map(|v| v + rng.random_range(0.0..1.0)).collect();
        let a = minimal_solution(&op, &LoadFunctional::new(&m, f).unwrap(), &map, TOL).unwrap();
        let b = minimal_solution(&op, &LoadFunctional::new(&m, g).unwrap(), &map, TOL).unwrap();
        assert!(a.y.le(&b.y, 1e-8).unwrap());
    }
}

#[test]
fn compliant_map_without_coupling_reduces_to_the_vi() {
    let (m, op) = setup(32);
    let b = assemble_operator(&m, &Coefficients::laplacian().with_reaction(1.0)).unwrap();
    let map = ObstacleMap::compliant(
        CompliantMap::new(b, LoadFunctional::zeros(&m), 0.0, 0.0, 1.0, 0.05, 1.0).unwrap(),
    );
    let f = assemble_load(&m, |_| 8.0).unwrap();
    let q = minimal_solution(&op, &f, &map, TOL).unwrap();
    let k = ConstraintSet::nodal(&m, NodalVector::constant(&m, 0.05)).unwrap();
    let vi = solve_obstacle_vi(&op, &f, &k, &SolverOptions::default()).unwrap();
    assert!(q.y.sup_distance(&vi.y).unwrap() <= 1e-10);
}

#[test]
fn compliant_map_is_increasing() {
    let (m, _) = setup(20);
    let b = assemble_operator(&m, &Coefficients::laplacian().with_reaction(1.0)).unwrap();
    let g = assemble_load(&m, |_| 1.0).unwrap();
    let map = ObstacleMap::compliant(CompliantMap::new(b, g, 0.5, 2.0, 1.0, 0.1, 1.0).unwrap());
    check_increasing(&map, &m, 30, 1.0, 2).unwrap();
}

/// `k0 + min_{x_j >= x_i} (v_j + c (x_j - x_i))`, with the extension beyond
/// the last node valued at the boundary value.
fn impulse_oracle(m: &Mesh, v: &[f64], k0: f64, c: f64, bv: f64) -> Vec<f64> {
    let xs: Vec<f64> = m.nodes().iter().map(|p| p[0]).collect();
    let x_last = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..xs.len())
        .map(|i| {
            let mut best = bv + c * (x_last - xs[i]);
            for j in 0..xs.len() {
                if xs[j] >= xs[i] {
                    best = best.min(v[j] + c * (xs[j] - xs[i]));
                }
            }
            k0 + best
        })
        .collect()
}

#[test]
fn impulse_operator_matches_candidate_enumeration() {
    let (m, _) = setup(17);
    let map = ObstacleMap::impulse(0.02, 0.1, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..30 {
        let v: Vec<f64> = (0..m.n_nodes())
            .map(|_| rng.random_range(-0.5..1.0))
            .collect();
        let got = evaluate_obstacle(&map, &m, &NodalVector::new(&m, v.clone()).unwrap()).unwrap();
        let want = impulse_oracle(&m, &v, 0.02, 0.1, 0.0);
        for (a, b) in got.values().iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
    }
    check_increasing(&map, &m, 30, 1.0, 9).unwrap();
}

#[test]
fn impulse_qvi_has_active_constraint() {
    let m = Arc::new(build_interval_mesh(64, 0.0, 1.0).unwrap());
    let op = assemble_operator(&m, &Coefficients::laplacian().with_reaction(1.0)).unwrap();
    let map = ObstacleMap::impulse(0.02, 0.1, 0.0).unwrap();
    let f = assemble_load(&m, |_| 1.0).unwrap();
    let s = minimal_solution(&op, &f, &map, TOL).unwrap();
    let phi = evaluate_obstacle(&map, &m, &s.y).unwrap();
    let active = (0..m.n_nodes())
        .filter(|&i| !m.is_boundary(i) && (phi.values()[i] - s.y.values()[i]).abs() < 1e-9)
        .count();
    assert!(active > 0);
    assert!(s.vi_residual <= 1e-8);
}

#[test]
fn sublinear_superposition_breaks_scaling() {
    let (m, op) = setup(16);
    let bad = ObstacleMap::superposition(0.1, 1.0, 0.5).unwrap();
    let samples = vec![NodalVector::constant(&m, 1.0)];
    assert!(matches!(
        check_scaling(&bad, &m, &samples),
        Err(Error::Hypothesis { .. })
    ));
    let good = ObstacleMap::superposition(0.1, 1.0, 2.0).unwrap();
    check_scaling(&good, &m, &samples).unwrap();

    let unit = assemble_load(&m, |_| 1.0).unwrap();
    let f = unit.scale(20.0);
    let eps: Vec<f64> = (1..=4).map(|n| 1.0 / n as f64).collect();
    let r = stability_study(&op, &bad, &f, &unit, &eps, 1.0, 1e-8).unwrap();
    assert!(r.scaling.is_err());
    assert!(!r.to_report().passed());
}

#[test]
fn load_below_floor_is_rejected() {
    let (m, op) = setup(16);
    let map = ObstacleMap::superposition(0.1, 1.0, 2.0).unwrap();
    let unit = assemble_load(&m, |_| 1.0).unwrap();
    let r = stability_study(&op, &map, &unit.scale(0.5), &unit, &[0.1], 1.0, 1e-8);
    assert!(matches!(r, Err(Error::Hypothesis { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn superposition_scaling_holds_for_p_at_least_one(p in 1.0f64..4.0, c in 0.1f64..3.0, seed in 0u64..500) {
        let m = build_interval_mesh(10, 0.0, 1.0).unwrap();
        let map = ObstacleMap::superposition(0.1, c, p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..m.n_nodes()).map(|_| rng.random_range(-1.0..5.0)).collect();
        prop_assert!(check_scaling(&map, &m, &[NodalVector::new(&m, v).unwrap()]).is_ok());
    }

    #[test]
    fn fixed_point_satisfies_its_own_constraint(scale in 1.0f64..30.0) {
        let (m, op) = setup(16);
        let map = ObstacleMap::superposition(0.1, 1.0, 2.0).unwrap();
        let f = assemble_load(&m, |_| scale).unwrap();
        let s = minimal_solution(&op, &f, &map, TOL).unwrap();
        let phi = evaluate_obstacle(&map, &m, &s.y).unwrap();
        prop_assert!(s.y.le(&phi, 1e-8).unwrap());
        prop_assert!(s.vi_residual <= 1e-7);
    }
}
