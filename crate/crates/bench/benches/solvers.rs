use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mosco_bench::{contact_1d, membrane_2d};
use mosco_core::assembly::{assemble_operator, Coefficients};
use mosco_core::mesh::build_triangle_mesh;
use mosco_core::qvi::{qvi_fixed_point, Start, DEFAULT_MAX_ITER};
use mosco_core::vi_solver::{solve_obstacle_vi, Method};
use mosco_core::{ObstacleMap, Rect, SolverOptions};
use std::hint::black_box;

fn vi_methods(c: &mut Criterion) {
    let mut g = c.benchmark_group("vi_1d");
    for n in [64, 256, 1024] {
        let p = contact_1d(n);
        for (name, m) in [
            ("active_set", Method::ActiveSet),
            ("psor", Method::ProjectedRelaxation),
        ] {
            let opts = SolverOptions::default().with_method(m);
            g.bench_with_input(BenchmarkId::new(name, n), &p, |b, p| {
                b.iter(|| solve_obstacle_vi(&p.op, &p.f, &p.k, &opts).unwrap())
            });
        }
    }
    g.finish();

    let mut g = c.benchmark_group("vi_2d");
    g.sample_size(10);
    for n in [16, 32] {
        let p = membrane_2d(n);
        g.bench_with_input(BenchmarkId::new("active_set", n), &p, |b, p| {
            b.iter(|| solve_obstacle_vi(&p.op, &p.f, &p.k, &SolverOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assembly_2d");
    for n in [32, 64] {
        let mesh =
            std::sync::Arc::new(build_triangle_mesh(n, n, Rect::new(0.0, 1.0, 0.0, 1.0)).unwrap());
        g.bench_with_input(BenchmarkId::from_parameter(n), &mesh, |b, m| {
            b.iter(|| assemble_operator(black_box(m), &Coefficients::laplacian()).unwrap())
        });
    }
    g.finish();
}

fn qvi(c: &mut Criterion) {
    let p = contact_1d(128);
    let map = ObstacleMap::superposition(0.1, 1.0, 2.0).unwrap();
    c.bench_function("qvi_minimal_128", |b| {
        b.iter(|| qvi_fixed_point(&p.op, &p.f, &map, Start::Sub, 1e-10, DEFAULT_MAX_ITER).unwrap())
    });
}

criterion_group!(benches, vi_methods, assembly, qvi);
criterion_main!(benches);
