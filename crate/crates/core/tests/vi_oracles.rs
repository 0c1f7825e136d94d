use std::sync::Arc;

use mosco_core::assembly::{
    assemble_load, assemble_operator, energy_norm, Coefficients, DiscreteOperator, LoadFunctional,
};
use mosco_core::constraints::ConstraintSet;
use mosco_core::mesh::{
    build_interval_mesh, build_triangle_mesh, interpolate_nodal, Mesh, NodalVector, Rect,
};
use mosco_core::regularization::objective;
use mosco_core::vi_solver::{
    complementarity_residual, default_penalty_schedule, solve_gradient_vi, solve_obstacle_vi,
    solve_obstacle_vi_from, Method, SolverOptions, DEFAULT_TOL,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n)
            .max_by(|i, j| a[*i][k].abs().total_cmp(&a[*j][k].abs()))
            .unwrap();
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let l = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= l * a[k][j];
            }
            b[i] -= l * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// Every subset of free nodes is tried as the contact set; the admissible
/// ones satisfy `y <= phi` off the set and `f - A y >= 0` on it.
fn brute_force(a: &[Vec<f64>], f: &[f64], phi: &[f64]) -> Vec<Vec<f64>> {
    let n = f.len();
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        let active: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
        let free: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let mut y: Vec<f64> = (0..n)
            .map(|i| if active[i] { phi[i] } else { 0.0 })
            .collect();
        if !free.is_empty() {
            let sub: Vec<Vec<f64>> = free
                .iter()
                .map(|&i| free.iter().map(|&j| a[i][j]).collect())
                .collect();
            let rhs: Vec<f64> = free
                .iter()
                .map(|&i| {
                    f[i] - (0..n)
                        .filter(|&j| active[j])
                        .map(|j| a[i][j] * phi[j])
                        .sum::<f64>()
                })
                .collect();
            for (k, v) in dense_solve(sub, rhs).into_iter().enumerate() {
                y[free[k]] = v;
            }
        }
        let ok = (0..n).all(|i| {
            if active[i] {
                let ay: f64 = (0..n).map(|j| a[i][j] * y[j]).sum();
                f[i] - ay >= -1e-12
            } else {
                y[i] <= phi[i] + 1e-12
            }
        });
        if ok {
            found.push(y);
        }
    }
    found
}

/// Projected gradient descent with step `1 / ||A||_inf` for symmetric `A`.
fn projected_gradient(a: &[Vec<f64>], f: &[f64], phi: &[f64], iters: usize) -> Vec<f64> {
    let n = f.len();
    let lip = a
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        y[i] = y[i].min(phi[i]);
    }
    for _ in 0..iters {
        let g: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| a[i][j] * y[j]).sum::<f64>() - f[i])
            .collect();
        for i in 0..n {
            y[i] = (y[i] - g[i] / lip).min(phi[i]);
        }
    }
    y
}

fn contact(
    n: usize,
    load: f64,
    phi: f64,
) -> (Arc<Mesh>, DiscreteOperator, LoadFunctional, ConstraintSet) {
    let m = Arc::new(build_interval_mesh(n, 0.0, 1.0).unwrap());
    let op = assemble_operator(&m, &Coefficients::laplacian()).unwrap();
    let f = assemble_load(&m, |_| load).unwrap();
    let k = ConstraintSet::nodal(&m, NodalVector::constant(&m, phi)).unwrap();
    (m, op, f, k)
}

fn free_values(m: &Mesh, v: &NodalVector) -> Vec<f64> {
    m.free_nodes().iter().map(|&i| v.values()[i]).collect()
}

#[test]
fn contact_problem_matches_enumeration() {
    let (m, op, f, k) = contact(8, 8.0, 0.1);
    let phi = vec![0.1; m.n_free()];
    let candidates = brute_force(&op.matrix().to_dense(), f.values(), &phi);
    assert_eq!(candidates.len(), 1);
    for method in [Method::ActiveSet, Method::ProjectedRelaxation] {
        let s =
            solve_obstacle_vi(&op, &f, &k, &SolverOptions::default().with_method(method)).unwrap();
        let y = free_values(&m, &s.y);
        let err = y
            .iter()
            .zip(&candidates[0])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "{method}: {err}");
    }
}

fn random_problem(
    rng: &mut ChaCha8Rng,
    n: usize,
) -> (Arc<Mesh>, DiscreteOperator, LoadFunctional, ConstraintSet) {
    let m = Arc::new(build_interval_mesh(n, 0.0, 1.0).unwrap());
    let c = Coefficients::laplacian()
        .with_diffusion(rng.random_range(0.5..2.0))
        .with_reaction(rng.random_range(0.0..2.0));
    let op = assemble_operator(&m, &c).unwrap();
    let (a0, a1, a2) = (
        rng.random_range(2.0..20.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(1.0..4.0),
    );
    let f = assemble_load(&m, |p| a0 + a1 * (a2 * p[0]).sin()).unwrap();
    let (b0, b1, b2) = (
        rng.random_range(0.05..0.3),
        rng.random_range(0.0..0.1),
        rng.random_range(1.0..6.0),
    );
    let phi = interpolate_nodal(
        |p| b0 + b1 * (b2 * std::f64::consts::PI * p[0]).cos().abs(),
        &m,
    )
    .unwrap();
    let k = ConstraintSet::nodal(&m, phi).unwrap();
    (m, op, f, k)
}

#[test]
fn small_random_problems_match_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let n = rng.random_range(3..=9);
        let (m, op, f, k) = random_problem(&mut rng, n);
        let phi = free_values(
            &m,
            &NodalVector::new(&m, k.nodal_bounds().unwrap()).unwrap(),
        );
        let candidates = brute_force(&op.matrix().to_dense(), f.values(), &phi);
        assert_eq!(candidates.len(), 1);
        let s = solve_obstacle_vi(&op, &f, &k, &SolverOptions::default()).unwrap();
        let err = free_values(&m, &s.y)
            .iter()
            .zip(&candidates[0])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-10);
    }
}

#[test]
fn agrees_with_projected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in [8, 16, 32] {
        let (m, op, f, k) = random_problem(&mut rng, n);
        let phi = free_values(
            &m,
            &NodalVector::new(&m, k.nodal_bounds().unwrap()).unwrap(),
        );
        let reference = projected_gradient(&op.matrix().to_dense(), f.values(), &phi, 200_000);
        let s = solve_obstacle_vi(&op, &f, &k, &SolverOptions::default()).unwrap();
        let err = free_values(&m, &s.y)
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-7, "n = {n}: {err}");
    }
}

#[test]
fn methods_agree_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let n = rng.random_range(4..=64);
        let (_, op, f, k) = random_problem(&mut rng, n);
        let a = solve_obstacle_vi(&op, &f, &k, &SolverOptions::default()).unwrap();
        let b = solve_obstacle_vi(
            &op,
            &f,
            &k,
            &SolverOptions::default().with_method(Method::ProjectedRelaxation),
        )
        .unwrap();
        assert!(a.y.sup_distance(&b.y).unwrap() <= 1e-8);
        assert!(a.iterations <= 2 * op.n_free());
    }
}

#[test]
fn methods_agree_in_two_dimensions() {
    let m = Arc::new(build_triangle_mesh(12, 12, Rect::unit()).unwrap());
    let op = assemble_operator(&m, &Coefficients::laplacian()).unwrap();
    let f = assemble_load(&m, |_| 20.0).unwrap();
    let k = ConstraintSet::nodal(
        &m,
        interpolate_nodal(|p| 0.05 + 0.1 * p[0] * p[1], &m).unwrap(),
    )
    .unwrap();
    let a = solve_obstacle_vi(&op, &f, &k, &SolverOptions::default()).unwrap();
    let b = solve_obstacle_vi(
        &op,
        &f,
        &k,
        &SolverOptions::default().with_method(Method::ProjectedRelaxation),
    )
    .unwrap();
    assert!(!a.active_set.is_empty());
    assert!(a.y.sup_distance(&b.y).unwrap() <= 1e-8);
}

#[test]
fn different_starting_points_reach_the_same_solution() {
    let (m, op, f, k) = contact(32, 8.0, 0.1);
    let base = solve_obstacle_vi(&op, &f, &k, &SolverOptions::default()).unwrap();
    let starts = [
        NodalVector::zeros(&m),
        NodalVector::constant(&m, 0.1),
        interpolate_nodal(|p| 0.1 * p[0], &m).unwrap(),
    ];
    for s in &starts {
        for method in [Method::ActiveSet, Method::ProjectedRelaxation] {
            let r = solve_obstacle_vi_from(
                &op,
                &f,
                &k,
                &SolverOptions::default().with_method(method),
                Some(s),
            )
            .unwrap();
            assert!(r.y.sup_distance(&base.y).unwrap() <= 1e-8);
        }
    }
}

#[test]
fn solution_map_is_lipschitz_in_the_load() {
    let (m, op, f, k) = contact(32, 8.0, 0.1);
    let y = solve_obstacle_vi(&op, &f, &k, &SolverOptions::default())
        .unwrap()
        .y;
    let c = op.coercivity_estimate();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let g: Vec<f64> = (0..m.n_free())
            .map(|_| rng.random_range(-0.05..0.05))
            .collect();
        let fg = f
            .add_scaled(&LoadFunctional::new(&m, g.clone()).unwrap(), 1.0)
            .unwrap();
        let yg = solve_obstacle_vi(&op, &fg, &k, &SolverOptions::default())
            .unwrap()
            .y;
        let d = op.restrict(&yg.sub(&y).unwrap()).unwrap();
        let dn = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dn <= gn / c * (1.0 + 1e-9) + 1e-12);
    }
}

#[test]
fn solution_has_least_energy_among_feasible_samples() {
    let (m, op, f, k) = contact(24, 10.0, 0.08);
    let y = solve_obstacle_vi(&op, &f, &k, &SolverOptions::default())
        .unwrap()
        .y;
    let best = objective(&op, &f, &y).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..200 {
        let mut v: Vec<f64> = y
            .values()
            .iter()
            .map(|x| x + rng.random_range(-0.05..0.05))
            .collect();
        for (i, x) in v.iter_mut().enumerate() {
            *x = if m.is_boundary(i) { 0.0 } else { x.min(0.08) };
        }
        let v = NodalVector::new(&m, v).unwrap();
        assert!(objective(&op, &f, &v).unwrap() >= best - 1e-12);
    }
}

#[test]
fn residual_responds_linearly_to_perturbation() {
    let (m, op, f, k) = contact(16, 8.0, 0.1);
    let s = solve_obstacle_vi(&op, &f, &k, &SolverOptions::default()).unwrap();
    let node = m.free_nodes()[0];
    assert!(!s.active_set.contains(&node));
    let mut ratios = Vec::new();
    for eps in [1e-3, 1e-4, 1e-5] {
        let mut v = s.y.values().to_vec();
        v[node] += eps;
        let r = complementarity_residual(&NodalVector::new(&m, v).unwrap(), &op, &f, &k).unwrap();
        ratios.push(r / eps);
    }
    assert!(ratios.iter().all(|r| *r > 0.1 && *r < 1e3));
    assert!((ratios[0] - ratios[2]).abs() <= 1e-3 * ratios[0]);
}

#[test]
fn torsion_limit_matches_exact_solution() {
    // -u'' = F with |u'| <= 1: elastic core |x - 1/2| < 1/F, plastic elsewhere.
    let big = 50.0;
    let m = Arc::new(build_interval_mesh(64, 0.0, 1.0).unwrap());
    let op = assemble_operator(&m, &Coefficients::laplacian()).unwrap();
    let f = assemble_load(&m, |_| big).unwrap();
    let k = ConstraintSet::gradient(&m, vec![1.0; m.n_elements()], 2.0).unwrap();
    let s = solve_gradient_vi(&op, &f, &k, &default_penalty_schedule(), DEFAULT_TOL).unwrap();
    let plastic = |x: f64| x.min(1.0 - x);
    let elastic_peak = 0.5 - 1.0 / (2.0 * big);
    let err = m
        .nodes()
        .iter()
        .zip(s.y.values())
        .map(|(p, v)| {
            let d = (p[0] - 0.5).abs();
            let e = if d >= 1.0 / big {
                plastic(p[0])
            } else {
                elastic_peak - big * d * d / 2.0
            };
            (v - e).abs()
        })
        .fold(0.0f64, f64::max);
    assert!(err <= 2e-3, "{err}");
    assert!(k.violation(&s.y).unwrap() <= 1e-6);
    assert!(energy_norm(&op, s.y.values()) > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn ordered_loads_give_ordered_solutions(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, op, f, k) = random_problem(&mut rng, 24);
        let g: Vec<f64> = (0..m.n_free()).map(|_| rng.random_range(0.0..0.2)).collect();
        let f2 = f.add_scaled(&LoadFunctional::new(&m, g).unwrap(), 1.0).unwrap();
        let y1 = solve_obstacle_vi(&op, &f, &k, &SolverOptions::default()).unwrap().y;
        let y2 = solve_obstacle_vi(&op, &f2, &k, &SolverOptions::default()).unwrap().y;
        prop_assert!(y1.le(&y2, 1e-12).unwrap());
    }

    #[test]
    fn larger_sets_give_larger_solutions(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, op, f, k) = random_problem(&mut rng, 24);
        let phi = k.nodal_bounds().unwrap();
        let wider: Vec<f64> = phi.iter().map(|b| b + rng.random_range(0.0..0.1)).collect();
        let k2 = ConstraintSet::nodal(&m, NodalVector::new(&m, wider).unwrap()).unwrap();
        let y1 = solve_obstacle_vi(&op, &f, &k, &SolverOptions::default()).unwrap().y;
        let y2 = solve_obstacle_vi(&op, &f, &k2, &SolverOptions::default()).unwrap().y;
        prop_assert!(y1.le(&y2, 1e-12).unwrap());
    }
}
