use std::sync::Arc;

use mosco_core::assembly::{
    assemble_load, assemble_operator, check_m_matrix, solve_linear, Coefficients, LoadFunctional,
};
use mosco_core::mesh::{
    build_interval_mesh, build_triangle_mesh, interpolate_nodal, shape_regularity, Rect,
};
use mosco_core::report::loglog_slope;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Piecewise-linear interpolant on a uniform grid of `[0, 1]`, evaluated
/// without the mesh machinery.
fn pl_eval(values: &[f64], x: f64) -> f64 {
    let n = values.len() - 1;
    let s = x * n as f64;
    let i = (s.floor() as usize).min(n - 1);
    let t = s - i as f64;
    (1.0 - t) * values[i] + t * values[i + 1]
}

#[test]
fn sine_interpolation_is_second_order() {
    let pi = std::f64::consts::PI;
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [8, 16, 32, 64] {
        let m = build_interval_mesh(n, 0.0, 1.0).unwrap();
        let v = interpolate_nodal(|p| (pi * p[0]).sin(), &m).unwrap();
        let err = (0..=10_000)
            .map(|k| {
                let x = k as f64 / 10_000.0;
                (pl_eval(v.values(), x) - (pi * x).sin()).abs()
            })
            .fold(0.0f64, f64::max);
        hs.push(m.h());
        errs.push(err);
    }
    for w in errs.windows(2) {
        assert!((w[0] / w[1] - 4.0).abs() < 0.3, "ratio {}", w[0] / w[1]);
    }
    assert!(loglog_slope(&hs, &errs).unwrap() >= 1.9);
}

#[test]
fn shape_regularity_matches_inradius_formula() {
    for n in [2, 4, 8] {
        let m = build_triangle_mesh(n, n, Rect::unit()).unwrap();
        let a = 1.0 / n as f64;
        let c = a * 2f64.sqrt();
        // rho_T is the diameter of the inscribed ball, twice the inradius.
        let r = (a + a - c) / 2.0;
        let expected = c / (2.0 * r);
        assert!((shape_regularity(&m) - expected).abs() < 1e-12);
        assert!((expected - 2f64.sqrt() / (2.0 - 2f64.sqrt())).abs() < 1e-12);
    }
    assert_eq!(
        shape_regularity(&build_interval_mesh(4, 0.0, 1.0).unwrap()),
        1.0
    );
}

#[test]
fn refinement_halves_h() {
    let m = build_interval_mesh(5, -1.0, 2.0).unwrap();
    assert_eq!(m.refine().unwrap().h(), m.h() / 2.0);
    let t = build_triangle_mesh(3, 3, Rect::unit()).unwrap();
    assert!((t.refine().unwrap().h() - t.h() / 2.0).abs() < 1e-15);
}

#[test]
fn affine_functions_reproduced_at_random_points() {
    let m = build_triangle_mesh(5, 4, Rect::new(0.0, 2.0, -1.0, 1.0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fields: [fn(f64, f64) -> f64; 4] = [|_, _| 1.0, |x, _| x, |_, y| y, |x, y| x + y];
    for f in fields {
        let v = interpolate_nodal(|p| f(p[0], p[1]), &m).unwrap();
        for _ in 0..100 {
            let (x, y) = (rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0));
            assert!((m.evaluate(v.values(), [x, y]).unwrap() - f(x, y)).abs() < 1e-12);
        }
    }
}

/// Dense Gaussian elimination with partial pivoting.
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

#[test]
fn linear_solve_matches_dense_elimination() {
    let m = Arc::new(build_interval_mesh(8, 0.0, 1.0).unwrap());
    let op = assemble_operator(&m, &Coefficients::laplacian()).unwrap();
    let f = assemble_load(&m, |_| 8.0).unwrap();
    let u = solve_linear(&op, &f).unwrap();
    let x = dense_solve(op.matrix().to_dense(), f.values().to_vec());
    for (i, &node) in m.free_nodes().iter().enumerate() {
        assert!((u.values()[node] - x[i]).abs() < 1e-12);
        let xn = m.nodes()[node][0];
        assert!((u.values()[node] - 4.0 * xn * (1.0 - xn)).abs() < 1e-12);
    }
}

#[test]
fn manufactured_solution_converges() {
    let k = 2.5;
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [4, 8, 16, 32] {
        let m = Arc::new(build_triangle_mesh(n, n, Rect::unit()).unwrap());
        let op = assemble_operator(&m, &Coefficients::laplacian().with_diffusion(k)).unwrap();
        let exact = |x: f64, y: f64| x * (1.0 - x) * y * (1.0 - y);
        let f = assemble_load(&m, |p| {
            2.0 * k * (p[0] * (1.0 - p[0]) + p[1] * (1.0 - p[1]))
        })
        .unwrap();
        let u = solve_linear(&op, &f).unwrap();
        let err = m
            .nodes()
            .iter()
            .zip(u.values())
            .map(|(p, v)| (v - exact(p[0], p[1])).abs())
            .fold(0.0f64, f64::max);
        hs.push(m.h());
        errs.push(err);
    }
    assert!(loglog_slope(&hs, &errs).unwrap() >= 1.9, "{errs:?}");
}

#[test]
fn one_dimensional_manufactured_solution() {
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    for n in [8, 16, 32, 64] {
        let m = Arc::new(build_interval_mesh(n, 0.0, 1.0).unwrap());
        let op = assemble_operator(
            &m,
            &Coefficients::laplacian()
                .with_diffusion(3.0)
                .with_reaction(1.0),
        )
        .unwrap();
        let f = assemble_load(&m, |p| 6.0 + p[0] * (1.0 - p[0])).unwrap();
        let u = solve_linear(&op, &f).unwrap();
        let err = m
            .nodes()
            .iter()
            .zip(u.values())
            .map(|(p, v)| (v - p[0] * (1.0 - p[0])).abs())
            .fold(0.0f64, f64::max);
        hs.push(m.h());
        errs.push(err);
    }
    assert!(loglog_slope(&hs, &errs).unwrap() >= 1.9, "{errs:?}");
}

#[test]
fn comparison_principle_for_linear_solves() {
    let m = Arc::new(build_triangle_mesh(6, 5, Rect::unit()).unwrap());
    let op = assemble_operator(&m, &Coefficients::laplacian().with_reaction(0.5)).unwrap();
    assert!(check_m_matrix(&op));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let f1: Vec<f64> = (0..m.n_free())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let f2: Vec<f64> = f1.iter().map(|v| v + rng.random_range(0.0..0.5)).collect();
        let u1 = solve_linear(&op, &LoadFunctional::new(&m, f1).unwrap()).unwrap();
        let u2 = solve_linear(&op, &LoadFunctional::new(&m, f2).unwrap()).unwrap();
        assert!(u1.le(&u2, 1e-13).unwrap());
    }
}

#[test]
fn symmetric_flag_means_equal_transpose() {
    let m = Arc::new(build_triangle_mesh(4, 3, Rect::unit()).unwrap());
    for c in [
        Coefficients::laplacian(),
        Coefficients::laplacian().with_advection([1.0, 0.5]),
        Coefficients::laplacian().with_reaction(2.0),
    ] {
        let op = assemble_operator(&m, &c).unwrap();
        let a = op.matrix().to_dense();
        let equal = (0..a.len()).all(|i| (0..a.len()).all(|j| a[i][j] == a[j][i]));
        if op.is_symmetric() {
            assert!(equal);
        } else {
            assert!(!equal);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolation_is_linear(alpha in -3.0f64..3.0, beta in -3.0f64..3.0, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let m = build_triangle_mesh(3, 2, Rect::unit()).unwrap();
        let f = |p: [f64; 2]| (a * p[0]).sin() + p[1] * p[1];
        let g = |p: [f64; 2]| (b * p[1]).cos() * p[0];
        let lhs = interpolate_nodal(|p| alpha * f(p) + beta * g(p), &m).unwrap();
        let fi = interpolate_nodal(f, &m).unwrap();
        let gi = interpolate_nodal(g, &m).unwrap();
        for i in 0..m.n_nodes() {
            let rhs = alpha * fi.values()[i] + beta * gi.values()[i];
            prop_assert!((lhs.values()[i] - rhs).abs() <= 1e-14 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn load_assembly_is_linear(s in -5.0f64..5.0, t in -5.0f64..5.0) {
        let m = build_interval_mesh(7, 0.0, 2.0).unwrap();
        let f = |p: [f64; 2]| p[0].exp();
        let g = |p: [f64; 2]| 1.0 - p[0];
        let lhs = assemble_load(&m, |p| s * f(p) + t * g(p)).unwrap();
        let rhs = assemble_load(&m, f).unwrap().scale(s).add_scaled(&assemble_load(&m, g).unwrap(), t).unwrap();
        for (x, y) in lhs.values().iter().zip(rhs.values()) {
            prop_assert!((x - y).abs() <= 1e-13 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn m_matrix_solutions_are_nonnegative(seed in 0u64..1000) {
        let m = Arc::new(build_interval_mesh(12, 0.0, 1.0).unwrap());
        let op = assemble_operator(&m, &Coefficients::laplacian().with_advection([3.0, 0.0])).unwrap();
        prop_assert!(op.is_m_matrix());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..m.n_free()).map(|_| rng.random_range(0.0..1.0)).collect();
        let u = solve_linear(&op, &LoadFunctional::new(&m, f).unwrap()).unwrap();
        prop_assert!(u.values().iter().all(|v| *v >= 0.0));
    }
}
