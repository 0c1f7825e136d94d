//! Quasi-variational inequalities `y = S(f, K(y))` with `K(v) = {w <= Phi(v)}`
//! solved by the ordered fixed-point iteration `y_{k+1} = S(f, K(Phi(y_k)))`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::assembly::{
    l2_norm, lumped_mass_weights, solve_linear, DiscreteOperator, LoadFunctional,
};
use crate::constraints::ConstraintSet;
use crate::error::{invalid, Error, Result};
use crate::mesh::{Mesh, NodalVector};
use crate::report::{Flag, ReportRow, StudyReport};
use crate::sparse::CsrMatrix;
use crate::vi_solver::{complementarity_residual, solve_obstacle_vi_from, SolverOptions};

pub const DEFAULT_QVI_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1000;
/// Scaling factors sampled by [`check_scaling`].
pub const SCALING_LAMBDAS: [f64; 3] = [1.1, 2.0, 10.0];

/// Obstacle `Phi(v) = l0 + l1 z` where `z` solves, with lumped mass `M`,
/// `B z + M (g1 Phi - g2 min(v, cap)) = g`.
#[derive(Clone, Debug)]
pub struct CompliantMap {
    b: DiscreteOperator,
    system: DiscreteOperator,
    g: LoadFunctional,
    mass: Vec<f64>,
    pub g1: f64,
    pub g2: f64,
    pub cap: f64,
    pub l0: f64,
    pub l1: f64,
}

impl CompliantMap {
    pub fn new(
        b: DiscreteOperator,
        g: LoadFunctional,
        g1: f64,
        g2: f64,
        cap: f64,
        l0: f64,
        l1: f64,
    ) -> Result<Self> {
        g.ensure_on(b.mesh())?;
        if !(g1 >= 0.0 && g2 >= 0.0) || !g1.is_finite() || !g2.is_finite() {
            return Err(invalid(
                "g1/g2",
                format!("coupling weights must be finite and nonnegative, got {g1}, {g2}"),
            ));
        }
        if !(l0 > 0.0) || !l0.is_finite() {
            return Err(invalid("l0", format!("L(0) must be positive, got {l0}")));
        }
        if !(l1 > 0.0) || !l1.is_finite() {
            return Err(invalid(
                "l1",
                format!("L must be increasing, got slope {l1}"),
            ));
        }
        if cap.is_nan() {
            return Err(invalid("cap", "must not be NaN"));
        }
        if !b.is_m_matrix() {
            return Err(Error::Hypothesis {
                hypothesis: "B is T-monotone",
                detail: "the z-operator is not an M-matrix".into(),
            });
        }
        let mesh = b.mesh().clone();
        let all = lumped_mass_weights(&mesh);
        let mass: Vec<f64> = mesh.free_nodes().iter().map(|&i| all[i]).collect();
        let system = DiscreteOperator::from_free_matrix(
            mesh,
            b.matrix().add_scaled(&CsrMatrix::diagonal(&mass), g1 * l1),
        )?;
        if !(system.coercivity_estimate() > 0.0) {
            return Err(Error::Hypothesis {
                hypothesis: "z-system coercive",
                detail: format!("coercivity estimate {}", system.coercivity_estimate()),
            });
        }
        Ok(Self {
            b,
            system,
            g,
            mass,
            g1,
            g2,
            cap,
            l0,
            l1,
        })
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.b
    }

    /// The auxiliary state `z(v)` with zero boundary values.
    pub fn state(&self, v: &NodalVector) -> Result<NodalVector> {
        let vf = self.system.restrict(v)?;
        let rhs: Vec<f64> = self
            .g
            .values()
            .iter()
            .zip(&self.mass)
            .zip(&vf)
            .map(|((g, m), v)| g - self.g1 * self.l0 * m + self.g2 * m * v.min(self.cap))
            .collect();
        Ok(self.system.extend(&self.system.solve_free(&rhs)?))
    }
}

#[derive(Clone, Debug)]
pub enum ObstacleMap {
    /// `Phi(v) = nu + c (v^+)^{1/p}`. Exponents `p < 1` are accepted so that
    /// maps violating the scaling condition can be studied.
    Superposition {
        nu: f64,
        c: f64,
        p: f64,
    },
    Compliant(Arc<CompliantMap>),
    /// `Phi(v)(x_i) = min_{x_j >= x_i} v(x_j) + k0 + c_lin (x_j - x_i)` on a 1D
    /// mesh, with `v` continued past the right end by `boundary_value`.
    Impulse {
        k0: f64,
        c_lin: f64,
        boundary_value: f64,
    },
}

impl ObstacleMap {
    pub fn superposition(nu: f64, c: f64, p: f64) -> Result<Self> {
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(invalid("nu", format!("must be positive, got {nu}")));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(invalid("c", format!("must be nonnegative, got {c}")));
        }
        if !(p > 0.0) || !p.is_finite() {
            return Err(invalid("p", format!("must be positive, got {p}")));
        }
        Ok(Self::Superposition { nu, c, p })
    }

    pub fn compliant(map: CompliantMap) -> Self {
        Self::Compliant(Arc::new(map))
    }

    pub fn impulse(k0: f64, c_lin: f64, boundary_value: f64) -> Result<Self> {
        if !(k0 > 0.0) || !k0.is_finite() {
            return Err(invalid(
                "k0",
                format!("fixed intervention cost must be positive, got {k0}"),
            ));
        }
        if !(c_lin >= 0.0) || !c_lin.is_finite() {
            return Err(invalid(
                "c_lin",
                format!("must be nonnegative, got {c_lin}"),
            ));
        }
        if !boundary_value.is_finite() {
            return Err(invalid("boundary_value", "must be finite"));
        }
        Ok(Self::Impulse {
            k0,
            c_lin,
            boundary_value,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ObstacleMap::Superposition { .. } => "superposition",
            ObstacleMap::Compliant(_) => "compliant",
            ObstacleMap::Impulse { .. } => "impulse",
        }
    }

    /// Lower bound of `Phi(v)` over `v >= 0`.
    pub fn floor(&self) -> f64 {
        match self {
            ObstacleMap::Superposition { nu, .. } => *nu,
            ObstacleMap::Compliant(m) => m.l0,
            ObstacleMap::Impulse { k0, .. } => *k0,
        }
    }
}

pub fn evaluate_obstacle(map: &ObstacleMap, mesh: &Mesh, v: &NodalVector) -> Result<NodalVector> {
    v.ensure_on(mesh)?;
    match map {
        ObstacleMap::Superposition { nu, c, p } => Ok(v.map(|x| nu + c * x.max(0.0).powf(1.0 / p))),
        ObstacleMap::Compliant(m) => {
            if m.b.mesh_id() != mesh.id() {
                return Err(Error::MeshMismatch {
                    expected: mesh.id(),
                    found: m.b.mesh_id(),
                });
            }
            let z = m.state(v)?;
            let phi = z.map(|z| m.l0 + m.l1 * z);
            if let Some((i, x)) = phi
                .values()
                .iter()
                .enumerate()
                .find(|(_, x)| **x < m.l0 - 1e-10 * (1.0 + m.l0))
            {
                return Err(Error::Hypothesis {
                    hypothesis: "(G(Lz, y), z^-) <= 0",
                    detail: format!("Phi = {x} < L(0) = {} at node {i}", m.l0),
                });
            }
            Ok(phi)
        }
        ObstacleMap::Impulse {
            k0,
            c_lin,
            boundary_value,
        } => {
            if mesh.dim() != 1 {
                return Err(Error::Unsupported(
                    "the impulse operator is one-dimensional".into(),
                ));
            }
            let nodes = mesh.nodes();
            let mut order: Vec<usize> = (0..nodes.len()).collect();
            order.sort_by(|a, b| nodes[*a][0].total_cmp(&nodes[*b][0]));
            let x_last = nodes[*order.last().expect("mesh has nodes")][0];
            let vals = v.values();
            let mut out = vec![0.0; vals.len()];
            // Suffix minimum of v_j + c x_j; the cost term of the current node
            // is subtracted afterwards.
            let mut best = boundary_value + c_lin * x_last;
            for &i in order.iter().rev() {
                let cand = vals[i] + c_lin * nodes[i][0];
                if cand <= best {
                    best = cand;
                }
                out[i] = best + k0 - c_lin * nodes[i][0];
            }
            NodalVector::new(mesh, out)
        }
    }
}

/// Checks `v <= w => Phi(v) <= Phi(w)` on seeded random ordered pairs with
/// entries in `[0, scale]`.
pub fn check_increasing(
    map: &ObstacleMap,
    mesh: &Mesh,
    trials: usize,
    scale: f64,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mesh.n_nodes();
    for t in 0..trials {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=scale)).collect();
        let w: Vec<f64> = v
            .iter()
            .map(|x| x + rng.random_range(0.0..=scale))
            .collect();
        let pv = evaluate_obstacle(map, mesh, &NodalVector::new(mesh, v)?)?;
        let pw = evaluate_obstacle(map, mesh, &NodalVector::new(mesh, w)?)?;
        let slack = 1e-10 * (1.0 + pw.sup_norm());
        if let Some(i) = (0..n).find(|&i| pv.values()[i] > pw.values()[i] + slack) {
            return Err(Error::Hypothesis {
                hypothesis: "Phi increasing",
                detail: format!(
                    "trial {t}, node {i}: {} > {}",
                    pv.values()[i],
                    pw.values()[i]
                ),
            });
        }
    }
    Ok(())
}

/// Checks `lambda Phi(v) >= Phi(lambda v)` for every sample and every
/// `lambda` in [`SCALING_LAMBDAS`].
pub fn check_scaling(map: &ObstacleMap, mesh: &Mesh, samples: &[NodalVector]) -> Result<()> {
    for (s, v) in samples.iter().enumerate() {
        let pv = evaluate_obstacle(map, mesh, v)?;
        for lambda in SCALING_LAMBDAS {
            let pl = evaluate_obstacle(map, mesh, &v.scale(lambda))?;
            let slack = 1e-10 * (1.0 + pl.sup_norm());
            if let Some(i) =
                (0..pv.len()).find(|&i| lambda * pv.values()[i] < pl.values()[i] - slack)
            {
                return Err(Error::Hypothesis {
                    hypothesis: "lambda Phi(y) >= Phi(lambda y) for lambda > 1",
                    detail: format!(
                        "sample {s}, lambda {lambda}, node {i}: {} < {}",
                        lambda * pv.values()[i],
                        pl.values()[i]
                    ),
                });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub enum Start {
    /// `y_0 = 0`.
    Sub,
    /// `y_0 = A^{-1} f_max`.
    Super(LoadFunctional),
    Custom(NodalVector),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QVIKind {
    Minimal,
    Maximal,
    Plain,
}

#[derive(Clone, Debug)]
pub struct QVISolution {
    pub y: NodalVector,
    /// Every iterate, starting point included.
    pub history: Vec<NodalVector>,
    pub kind: QVIKind,
    pub iterations: usize,
    /// `|T(y) - y|_inf`
    pub fixed_point_residual: f64,
    /// Complementarity residual of `y` for the set `K(Phi(y))`.
    pub vi_residual: f64,
}

/// `T(v) = S(f, {w <= Phi(v)})`, warm-started from `v`.
pub fn apply_t(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    map: &ObstacleMap,
    v: &NodalVector,
) -> Result<NodalVector> {
    let mesh = op.mesh();
    let k = ConstraintSet::nodal(mesh, evaluate_obstacle(map, mesh, v)?)?;
    Ok(solve_obstacle_vi_from(op, f, &k, &SolverOptions::default(), Some(v))?.y)
}

fn check_load(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    f_max: Option<&LoadFunctional>,
) -> Result<()> {
    f.ensure_on(op.mesh())?;
    if let Some((i, v)) = f.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(Error::Hypothesis {
            hypothesis: "f >= 0",
            detail: format!("load entry {i} is {v}"),
        });
    }
    if let Some(cap) = f_max {
        cap.ensure_on(op.mesh())?;
        if let Some(i) = (0..f.len()).find(|&i| f.values()[i] > cap.values()[i]) {
            return Err(Error::Hypothesis {
                hypothesis: "f <= f_max",
                detail: format!("load entry {i}: {} > {}", f.values()[i], cap.values()[i]),
            });
        }
    }
    Ok(())
}

/// Plain fixed-point iteration of `T`. From `Sub` the iterates must be
/// nondecreasing, from `Super` nonincreasing; a violation aborts. Stops when
/// the increment is at most `tol` and `|T(y) - y|_inf <= 10 tol`.
pub fn qvi_fixed_point(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    map: &ObstacleMap,
    start: Start,
    tol: f64,
    max_iter: usize,
) -> Result<QVISolution> {
    if !(tol > 0.0) {
        return Err(invalid("tol", format!("must be positive, got {tol}")));
    }
    if !op.is_m_matrix() {
        return Err(Error::Hypothesis {
            hypothesis: "A strictly T-monotone",
            detail: "operator is not an M-matrix".into(),
        });
    }
    let mesh = op.mesh();
    let (y0, kind, dir) = match start {
        Start::Sub => {
            check_load(op, f, None)?;
            (NodalVector::zeros(mesh), QVIKind::Minimal, 1.0)
        }
        Start::Super(f_max) => {
            check_load(op, f, Some(&f_max))?;
            (solve_linear(op, &f_max)?, QVIKind::Maximal, -1.0)
        }
        Start::Custom(v) => {
            v.ensure_on(mesh)?;
            (v, QVIKind::Plain, 0.0)
        }
    };
    let mut history = vec![y0.clone()];
    let mut y = y0;
    let mut next = apply_t(op, f, map, &y)?;
    for it in 1..=max_iter {
        let step = next.sub(&y)?;
        if dir != 0.0 {
            let slack = 1e-10 * (1.0 + y.sup_norm().max(next.sup_norm()));
            if let Some((i, d)) = step
                .values()
                .iter()
                .enumerate()
                .find(|(_, d)| dir * **d < -slack)
            {
                return Err(Error::Monotonicity {
                    iteration: it,
                    detail: format!(
                        "{} history moved by {d} at node {i}",
                        if dir > 0.0 { "minimal" } else { "maximal" }
                    ),
                });
            }
        }
        let increment = step.sup_norm();
        y = next;
        history.push(y.clone());
        next = apply_t(op, f, map, &y)?;
        let fixed_point_residual = next.sup_distance(&y)?;
        if increment <= tol && fixed_point_residual <= 10.0 * tol {
            let phi = evaluate_obstacle(map, mesh, &y)?;
            if let Some(i) = (0..y.len()).find(|&i| y.values()[i] > phi.values()[i] + 1e-8) {
                return Err(Error::Infeasible {
                    violation: y.values()[i] - phi.values()[i],
                    tol: 1e-8,
                });
            }
            let vi_residual =
                complementarity_residual(&y, op, f, &ConstraintSet::nodal(mesh, phi)?)?;
            return Ok(QVISolution {
                y,
                history,
                kind,
                iterations: it,
                fixed_point_residual,
                vi_residual,
            });
        }
    }
    Err(Error::NonConvergence {
        solver: "qvi fixed point",
        iterations: max_iter,
        residual: next.sup_distance(&y)?,
    })
}

pub fn minimal_solution(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    map: &ObstacleMap,
    tol: f64,
) -> Result<QVISolution> {
    qvi_fixed_point(op, f, map, Start::Sub, tol, DEFAULT_MAX_ITER)
}

pub fn maximal_solution(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    map: &ObstacleMap,
    f_max: &LoadFunctional,
    tol: f64,
) -> Result<QVISolution> {
    qvi_fixed_point(
        op,
        f,
        map,
        Start::Super(f_max.clone()),
        tol,
        DEFAULT_MAX_ITER,
    )
}

/// `1.01` times the entrywise maximum of the loads.
pub fn default_f_max(loads: &[LoadFunctional]) -> Result<LoadFunctional> {
    let first = loads
        .first()
        .ok_or_else(|| invalid("loads", "must not be empty"))?;
    let mut m = first.values().to_vec();
    for f in &loads[1..] {
        if f.mesh_id() != first.mesh_id() {
            return Err(Error::MeshMismatch {
                expected: first.mesh_id(),
                found: f.mesh_id(),
            });
        }
        m.iter_mut()
            .zip(f.values())
            .for_each(|(a, b)| *a = a.max(*b));
    }
    Ok(LoadFunctional::from_raw(
        m.into_iter().map(|v| 1.01 * v).collect(),
        first.mesh_id(),
    ))
}

#[derive(Clone, Debug)]
pub struct StabilityRecord {
    pub n: usize,
    pub epsilon: f64,
    pub err_sup: f64,
    pub err_l2: f64,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub minimal: Vec<StabilityRecord>,
    pub maximal: Vec<StabilityRecord>,
    /// `Err` holds the scaling-hypothesis failure.
    pub scaling: std::result::Result<(), String>,
    pub min_converged: bool,
    pub max_converged: bool,
}

impl StabilityReport {
    pub fn to_report(&self) -> StudyReport {
        let mut r = StudyReport::new("stability");
        for (label, recs) in [("minimal", &self.minimal), ("maximal", &self.maximal)] {
            for rec in recs {
                r.rows.push(ReportRow {
                    n: rec.n,
                    delta: Some(rec.epsilon),
                    err_sup: Some(rec.err_sup),
                    err_l2: Some(rec.err_l2),
                    iterations: Some(rec.iterations),
                    residual: Some(rec.residual),
                    flag: Some(label.into()),
                    ..ReportRow::default()
                });
            }
        }
        let hyp = self.scaling.is_ok();
        r.flags.push(Flag::asserted("scaling_hypothesis", hyp));
        // Convergence is only claimed under the scaling hypothesis.
        let conv = |name: &str, ok: bool| {
            if hyp {
                Flag::asserted(name, ok)
            } else {
                Flag::informative(name, ok)
            }
        };
        r.flags.push(conv("min_converged", self.min_converged));
        r.flags.push(conv("max_converged", self.max_converged));
        r
    }
}

/// Errors decrease strictly from the second record on and the last is at
/// most a fifth of the first (or all errors are negligible).
pub fn stability_converged(errors: &[f64]) -> bool {
    if errors.is_empty() {
        return false;
    }
    let first = errors[0];
    let last = *errors.last().expect("nonempty");
    if errors.iter().all(|e| *e <= 1e-10) {
        return true;
    }
    errors
        .iter()
        .skip(1)
        .collect::<Vec<_>>()
        .windows(2)
        .all(|w| w[1] < w[0])
        && last <= first / 5.0
}

/// Minimal and maximal solutions for `f_n = f* + eps_n u` against those for
/// `f*`, where `u` is the load of the constant function one. The floor
/// hypothesis `f_n >= c u` aborts when violated; the scaling hypothesis is
/// checked on samples and reported.
pub fn stability_study(
    op: &DiscreteOperator,
    map: &ObstacleMap,
    f_star: &LoadFunctional,
    unit: &LoadFunctional,
    epsilons: &[f64],
    floor: f64,
    tol: f64,
) -> Result<StabilityReport> {
    if epsilons.is_empty() {
        return Err(invalid("epsilons", "must not be empty"));
    }
    if !(floor > 0.0) {
        return Err(invalid("floor", format!("must be positive, got {floor}")));
    }
    let mesh = op.mesh();
    let mut loads = vec![f_star.clone()];
    for &e in epsilons {
        loads.push(f_star.add_scaled(unit, e)?);
    }
    for (n, f) in loads.iter().enumerate() {
        if let Some(i) = (0..f.len()).find(|&i| f.values()[i] < floor * unit.values()[i]) {
            return Err(Error::Hypothesis {
                hypothesis: "f_n >= c > 0",
                detail: format!(
                    "load {n} entry {i}: {} below floor {}",
                    f.values()[i],
                    floor * unit.values()[i]
                ),
            });
        }
    }
    let f_max = default_f_max(&loads)?;
    let sup_y = solve_linear(op, &f_max)?;
    let mut samples = vec![sup_y.clone()];
    for c in [0.01, 0.1, 1.0, 10.0, 100.0] {
        samples.push(NodalVector::constant(mesh, c));
    }
    let scaling = check_scaling(map, mesh, &samples).map_err(|e| e.to_string());

    let solved: Vec<Result<(QVISolution, QVISolution)>> = loads
        .par_iter()
        .map(|f| {
            let m = minimal_solution(op, f, map, tol)?;
            let mx = maximal_solution(op, f, map, &f_max, tol)?;
            Ok((m, mx))
        })
        .collect();
    let solved: Vec<(QVISolution, QVISolution)> = solved.into_iter().collect::<Result<_>>()?;
    let (ref_min, ref_max) = &solved[0];
    let record = |n: usize, s: &QVISolution, r: &QVISolution| -> Result<StabilityRecord> {
        let d = s.y.sub(&r.y)?;
        Ok(StabilityRecord {
            n,
            epsilon: epsilons[n - 1],
            err_sup: d.sup_norm(),
            err_l2: l2_norm(mesh, d.values()),
            iterations: s.iterations,
            residual: s.fixed_point_residual,
        })
    };
    let mut minimal = Vec::new();
    let mut maximal = Vec::new();
    for (n, (m, mx)) in solved.iter().enumerate().skip(1) {
        minimal.push(record(n, m, ref_min)?);
        maximal.push(record(n, mx, ref_max)?);
    }
    let errs = |v: &[StabilityRecord]| v.iter().map(|r| r.err_sup).collect::<Vec<_>>();
    Ok(StabilityReport {
        min_converged: stability_converged(&errs(&minimal)),
        max_converged: stability_converged(&errs(&maximal)),
        minimal,
        maximal,
        scaling,
    })
}
