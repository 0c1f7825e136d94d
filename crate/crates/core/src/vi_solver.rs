//! Solvers for the discrete variational inequality
//! `y ∈ K : <A y - f, v - y> >= 0 for all v ∈ K` with `K` an upper obstacle,
//! a midpoint obstacle or a gradient bound.
//!
//! Sign convention: `K = {v <= phi}`, so at a solution `lambda = f - A y >= 0`
//! and `lambda_i (phi_i - y_i) = 0`. A lower obstacle is handled through the
//! mirror `y -> -y`.

use std::fmt;

use crate::assembly::{DiscreteOperator, LoadFunctional};
use crate::constraints::{ConstraintKind, ConstraintSet, FEAS_TOL};
use crate::error::{invalid, Error, Result};
use crate::mesh::NodalVector;
use crate::newton::{newton_minimize, Penalized, Penalty};
use crate::sparse::{inf_norm, solve_checked};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_OMEGA: f64 = 1.5;
pub const MAX_SWEEPS: usize = 100_000;
const NEWTON_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Primal-dual active set (semismooth Newton on `min(phi - y, f - A y) = 0`).
    ActiveSet,
    /// Projected successive over-relaxation.
    ProjectedRelaxation,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ActiveSet => "active_set",
            Method::ProjectedRelaxation => "projected_relaxation",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodTag {
    ActiveSet,
    ProjectedRelaxation,
    /// Unconstrained set; a single linear solve.
    Linear,
    PenaltyPath,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub method: Method,
    pub tol: f64,
    /// Defaults to `10 * n_free` (active set) or `MAX_SWEEPS` (relaxation).
    pub max_iter: Option<usize>,
    pub omega: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: Method::ActiveSet,
            tol: DEFAULT_TOL,
            max_iter: None,
            omega: DEFAULT_OMEGA,
        }
    }
}

impl SolverOptions {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, n: usize) -> Self {
        self.max_iter = Some(n);
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid(
                "tol",
                format!("must be positive, got {}", self.tol),
            ));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(invalid(
                "omega",
                format!("must lie in (0, 2), got {}", self.omega),
            ));
        }
        Ok(())
    }
}

/// One step of a penalty path: the penalty parameter, the constraint
/// violation of the penalized minimizer and the Newton iterations spent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyStep {
    pub gamma: f64,
    pub violation: f64,
    pub newton_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct VISolution {
    pub y: NodalVector,
    /// Active nodes (obstacle sets) or active elements (midpoint/gradient sets).
    pub active_set: Vec<usize>,
    pub iterations: usize,
    /// Complementarity residual (obstacles) or Newton first-order residual
    /// at the last penalty step.
    pub residual: f64,
    pub method: MethodTag,
    pub warnings: Vec<String>,
    pub penalty_trace: Vec<PenaltyStep>,
}

/// Free-node upper bounds of a nodal set, with `+inf` where unbounded.
fn free_bounds(op: &DiscreteOperator, k: &ConstraintSet) -> Result<Vec<f64>> {
    let mesh = op.mesh();
    if k.mesh().id() != mesh.id() {
        return Err(Error::MeshMismatch {
            expected: mesh.id(),
            found: k.mesh().id(),
        });
    }
    let all = k.nodal_bounds().ok_or_else(|| {
        Error::Unsupported("obstacle solver requires a nodal obstacle set".into())
    })?;
    for &b in mesh.boundary_nodes() {
        if all[b] < -FEAS_TOL {
            return Err(Error::Hypothesis {
                hypothesis: "boundary values feasible",
                detail: format!("obstacle {} < 0 at Dirichlet node {b}", all[b]),
            });
        }
    }
    Ok(mesh.free_nodes().iter().map(|&i| all[i]).collect())
}

/// `max_i |min(phi_i - y_i, f_i - (A y)_i)|` over free nodes.
fn free_residual(a_y: &[f64], f: &[f64], y: &[f64], phi: &[f64]) -> f64 {
    let mut r = 0.0f64;
    for i in 0..y.len() {
        let lam = f[i] - a_y[i];
        let gap = phi[i] - y[i];
        r = r.max(gap.min(lam).abs());
    }
    r
}

/// Solves the obstacle VI for a nodal obstacle (or the unbounded sentinel).
pub fn solve_obstacle_vi(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    k: &ConstraintSet,
    opts: &SolverOptions,
) -> Result<VISolution> {
    solve_obstacle_vi_from(op, f, k, opts, None)
}

/// As [`solve_obstacle_vi`], starting from `initial` instead of the
/// unconstrained solution.
pub fn solve_obstacle_vi_from(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    k: &ConstraintSet,
    opts: &SolverOptions,
    initial: Option<&NodalVector>,
) -> Result<VISolution> {
    opts.validate()?;
    f.ensure_on(op.mesh())?;
    let phi = free_bounds(op, k)?;
    let start = match initial {
        Some(v) => Some(op.restrict(v)?),
        None => None,
    };
    if phi.iter().all(|b| b.is_infinite() && *b > 0.0) {
        let y = op.solve_free(f.values())?;
        let residual = inf_norm(
            &op.matrix()
                .mul_vec(&y)
                .iter()
                .zip(f.values())
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        return Ok(VISolution {
            y: op.extend(&y),
            active_set: Vec::new(),
            iterations: 1,
            residual,
            method: MethodTag::Linear,
            warnings: Vec::new(),
            penalty_trace: Vec::new(),
        });
    }
    match opts.method {
        Method::ActiveSet => {
            let mut warnings = Vec::new();
            if !op.is_m_matrix() {
                warnings.push(
                    "operator is not an M-matrix; active-set termination is not guaranteed"
                        .to_string(),
                );
            }
            match pdas(op, f.values(), &phi, opts, start.as_deref()) {
                Ok(mut s) => {
                    s.warnings.extend(warnings);
                    Ok(s)
                }
                Err(e @ Error::NonConvergence { .. }) if !op.is_m_matrix() => {
                    warnings.push(format!("{e}; falling back to projected relaxation"));
                    let mut s = psor(op, f.values(), &phi, opts, start.as_deref())?;
                    s.warnings = warnings;
                    Ok(s)
                }
                Err(e) => Err(e),
            }
        }
        Method::ProjectedRelaxation => psor(op, f.values(), &phi, opts, start.as_deref()),
    }
}

fn active_nodes(op: &DiscreteOperator, y: &[f64], phi: &[f64]) -> Vec<usize> {
    let free = op.mesh().free_nodes();
    (0..y.len())
        .filter(|&i| y[i] >= phi[i])
        .map(|i| free[i])
        .collect()
}

fn pdas(
    op: &DiscreteOperator,
    f: &[f64],
    phi: &[f64],
    opts: &SolverOptions,
    start: Option<&[f64]>,
) -> Result<VISolution> {
    let n = f.len();
    let a = op.matrix();
    let c = op.diagonal();
    let max_iter = opts.max_iter.unwrap_or(10 * n.max(1));
    let (mut y, mut lam) = match start {
        Some(y0) => {
            let ay = a.mul_vec(y0);
            (
                y0.to_vec(),
                f.iter()
                    .zip(&ay)
                    .map(|(fi, ai)| fi - ai)
                    .collect::<Vec<_>>(),
            )
        }
        None => (op.solve_free(f)?, vec![0.0; n]),
    };
    let mut active: Vec<bool> = (0..n)
        .map(|i| lam[i] + c[i] * (y[i] - phi[i]) > 0.0)
        .collect();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let system = a.with_unit_rows(&active);
        let rhs: Vec<f64> = (0..n)
            .map(|i| if active[i] { phi[i] } else { f[i] })
            .collect();
        y = solve_checked(&system, &rhs, crate::assembly::SOLVE_TOL)?;
        for i in 0..n {
            if active[i] {
                y[i] = phi[i];
            }
        }
        let ay = a.mul_vec(&y);
        for i in 0..n {
            lam[i] = if active[i] { f[i] - ay[i] } else { 0.0 };
        }
        let next: Vec<bool> = (0..n)
            .map(|i| lam[i] + c[i] * (y[i] - phi[i]) > 0.0)
            .collect();
        residual = free_residual(&ay, f, &y, phi);
        if next == active {
            return Ok(VISolution {
                y: op.extend(&y),
                active_set: (0..n)
                    .filter(|&i| active[i])
                    .map(|i| op.mesh().free_nodes()[i])
                    .collect(),
                iterations: it,
                residual,
                method: MethodTag::ActiveSet,
                warnings: Vec::new(),
                penalty_trace: Vec::new(),
            });
        }
        active = next;
    }
    Err(Error::NonConvergence {
        solver: "primal-dual active set",
        iterations: max_iter,
        residual,
    })
}

fn psor(
    op: &DiscreteOperator,
    f: &[f64],
    phi: &[f64],
    opts: &SolverOptions,
    start: Option<&[f64]>,
) -> Result<VISolution> {
    let n = f.len();
    let a = op.matrix();
    let diag = op.diagonal();
    if let Some(i) = diag.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::Hypothesis {
            hypothesis: "positive diagonal",
            detail: format!("diagonal entry {} at free node {i}", diag[i]),
        });
    }
    let max_sweeps = opts.max_iter.unwrap_or(MAX_SWEEPS);
    let mut y: Vec<f64> = match start {
        Some(y0) => y0.iter().zip(phi).map(|(v, p)| v.min(*p)).collect(),
        None => vec![0.0f64; n]
            .iter()
            .zip(phi)
            .map(|(v, p)| v.min(*p))
            .collect(),
    };
    let w = opts.omega;
    let mut residual = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        for i in 0..n {
            let mut r = f[i];
            for (j, v) in a.row(i) {
                if j != i {
                    r -= v * y[j];
                }
            }
            y[i] = ((1.0 - w) * y[i] + w * r / diag[i]).min(phi[i]);
        }
        residual = free_residual(&a.mul_vec(&y), f, &y, phi);
        if residual <= opts.tol {
            return Ok(VISolution {
                active_set: active_nodes(op, &y, phi),
                y: op.extend(&y),
                iterations: sweep,
                residual,
                method: MethodTag::ProjectedRelaxation,
                warnings: Vec::new(),
                penalty_trace: Vec::new(),
            });
        }
    }
    Err(Error::NonConvergence {
        solver: "projected relaxation",
        iterations: max_sweeps,
        residual,
    })
}

fn check_schedule(schedule: &[f64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(invalid("gamma_schedule", "must not be empty"));
    }
    if schedule.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(invalid(
            "gamma_schedule",
            "entries must be positive and finite",
        ));
    }
    if schedule.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("gamma_schedule", "must be nondecreasing"));
    }
    Ok(())
}

/// Penalty path-following: minimizes `F + gamma * penalty` for each gamma in
/// the schedule, warm-starting from the previous minimizer.
pub(crate) fn penalty_path(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    penalty: &Penalty<'_>,
    schedule: &[f64],
    tol: f64,
) -> Result<(Vec<f64>, Vec<PenaltyStep>, f64, usize)> {
    if !op.is_symmetric() {
        return Err(Error::Hypothesis {
            hypothesis: "symmetric operator",
            detail: "penalty path-following minimizes an energy and needs A = A^T".into(),
        });
    }
    check_schedule(schedule)?;
    let mut x = op.solve_free(f.values())?;
    let mut trace = Vec::with_capacity(schedule.len());
    let mut residual = 0.0;
    let mut total = 0;
    for &gamma in schedule {
        let obj = Penalized {
            a: op.matrix(),
            f: f.values(),
            penalty,
            gamma,
        };
        let r = newton_minimize(&obj, x, tol, NEWTON_MAX_ITER)?;
        x = r.x;
        residual = r.residual;
        total += r.iterations;
        trace.push(PenaltyStep {
            gamma,
            violation: penalty.violation(&x).max(0.0),
            newton_iterations: r.iterations,
        });
    }
    Ok((x, trace, residual, total))
}

fn penalty_solution(
    op: &DiscreteOperator,
    k: &ConstraintSet,
    x: Vec<f64>,
    trace: Vec<PenaltyStep>,
    residual: f64,
    iterations: usize,
) -> Result<VISolution> {
    let y = op.extend(&x);
    let mesh = op.mesh();
    let active_set = match k.kind() {
        ConstraintKind::MidpointObstacle(phi) => (0..mesh.n_elements())
            .filter(|&e| mesh.element_mean(y.values(), e) >= phi[e])
            .collect(),
        ConstraintKind::GradientBound { .. } => {
            let norms = k.gradient_norms(&y)?;
            let alpha = k.bound_values().unwrap_or(&[]);
            (0..norms.len()).filter(|&e| norms[e] >= alpha[e]).collect()
        }
        ConstraintKind::NodalObstacle(_) => Vec::new(),
    };
    let last = trace.last().map_or(0.0, |s| s.violation);
    let mut warnings = Vec::new();
    if last > FEAS_TOL {
        warnings.push(format!(
            "penalized solution violates the constraint by {last:e}"
        ));
    }
    Ok(VISolution {
        y,
        active_set,
        iterations,
        residual,
        method: MethodTag::PenaltyPath,
        warnings,
        penalty_trace: trace,
    })
}

fn ensure_same_mesh(op: &DiscreteOperator, k: &ConstraintSet) -> Result<()> {
    if k.mesh().id() != op.mesh_id() {
        return Err(Error::MeshMismatch {
            expected: op.mesh_id(),
            found: k.mesh().id(),
        });
    }
    Ok(())
}

/// Gradient-bound VI by penalty path-following. The final violation decays
/// like `1/gamma_final`; it is reported, not projected away.
pub fn solve_gradient_vi(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    k: &ConstraintSet,
    gamma_schedule: &[f64],
    tol: f64,
) -> Result<VISolution> {
    ensure_same_mesh(op, k)?;
    f.ensure_on(op.mesh())?;
    let ConstraintKind::GradientBound { alpha, p } = k.kind() else {
        return Err(invalid("K", "solve_gradient_vi needs a gradient bound"));
    };
    if k.nu() > 0.0 {
        if let Some(a) = alpha.iter().find(|a| **a < k.nu()) {
            return Err(Error::Hypothesis {
                hypothesis: "alpha >= nu > 0",
                detail: format!("alpha value {a} below nu = {}", k.nu()),
            });
        }
    }
    let pen = Penalty::Gradient {
        mesh: op.mesh(),
        bounds: alpha,
        p: *p,
    };
    let (x, trace, residual, its) = penalty_path(op, f, &pen, gamma_schedule, tol)?;
    penalty_solution(op, k, x, trace, residual, its)
}

/// Midpoint-obstacle VI by penalty path-following.
pub fn solve_midpoint_vi(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    k: &ConstraintSet,
    gamma_schedule: &[f64],
    tol: f64,
) -> Result<VISolution> {
    ensure_same_mesh(op, k)?;
    f.ensure_on(op.mesh())?;
    let ConstraintKind::MidpointObstacle(phi) = k.kind() else {
        return Err(invalid("K", "solve_midpoint_vi needs a midpoint obstacle"));
    };
    let pen = Penalty::Midpoint {
        mesh: op.mesh(),
        bounds: phi,
    };
    let (x, trace, residual, its) = penalty_path(op, f, &pen, gamma_schedule, tol)?;
    penalty_solution(op, k, x, trace, residual, its)
}

/// Geometric penalty schedule `gamma_0 * ratio^k`, `k = 0..len`.
pub fn geometric_schedule(gamma0: f64, ratio: f64, len: usize) -> Vec<f64> {
    (0..len).map(|k| gamma0 * ratio.powi(k as i32)).collect()
}

/// Default penalty schedule for midpoint and gradient sets.
pub fn default_penalty_schedule() -> Vec<f64> {
    geometric_schedule(1.0, 10.0, 11)
}

/// The solution map `S(f, K)`, dispatching on the kind of constraint set.
pub fn solution_map(
    f: &LoadFunctional,
    k: &ConstraintSet,
    op: &DiscreteOperator,
) -> Result<NodalVector> {
    Ok(match k.kind() {
        ConstraintKind::NodalObstacle(_) => {
            solve_obstacle_vi(op, f, k, &SolverOptions::default())?.y
        }
        ConstraintKind::MidpointObstacle(_) => {
            solve_midpoint_vi(op, f, k, &default_penalty_schedule(), DEFAULT_TOL)?.y
        }
        ConstraintKind::GradientBound { .. } => {
            solve_gradient_vi(op, f, k, &default_penalty_schedule(), DEFAULT_TOL)?.y
        }
    })
}

/// Nonsmooth residual of the complementarity system and the feasibility of
/// the point it was evaluated at.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Complementarity {
    pub residual: f64,
    pub violation: f64,
}

impl Complementarity {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.violation <= tol
    }
}

/// `max_i |min(phi_i - y_i, -(A y - f)_i)|` over free nodes together with the
/// largest obstacle violation.
pub fn complementarity(
    y: &NodalVector,
    op: &DiscreteOperator,
    f: &LoadFunctional,
    k: &ConstraintSet,
) -> Result<Complementarity> {
    f.ensure_on(op.mesh())?;
    let phi = free_bounds(op, k)?;
    let ay = op.apply(y)?;
    let yf = op.restrict(y)?;
    let residual = free_residual(&ay, f.values(), &yf, &phi);
    let violation = k.violation(y)?;
    Ok(Complementarity {
        residual,
        violation,
    })
}

/// Complementarity residual; zero exactly at the VI solution. Infeasible
/// points yield a positive value through the `phi - y` branch.
pub fn complementarity_residual(
    y: &NodalVector,
    op: &DiscreteOperator,
    f: &LoadFunctional,
    k: &ConstraintSet,
) -> Result<f64> {
    Ok(complementarity(y, op, f, k)?.residual)
}
