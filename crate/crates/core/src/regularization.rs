//! Quasi-monotone perturbations `R_n` of the indicator of `K`: Tikhonov,
//! Moreau–Yosida, Galerkin–Moreau–Yosida and combined Tikhonov–Moreau–Yosida
//! schemes, minimizer-convergence studies and the no-recovery demonstration.
//!
//! Distances to `K` use the lumped mass metric, so for nodal obstacles the
//! projection is the nodewise minimum and the squared distance is
//! `sum_i m_i (u_i - phi_i)_+^2`. The Tikhonov norm is the discrete `H^1`
//! seminorm on the same mesh.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{
    assemble_operator, energy_norm, lumped_mass_weights, Coefficients, DiscreteOperator,
    LoadFunctional,
};
use crate::constraints::{ConstraintKind, ConstraintSet, Obstacle, FEAS_TOL};
use crate::error::{invalid, Error, Result};
use crate::mesh::{Mesh, NodalVector};
use crate::newton::{newton_minimize, Objective, Penalized, Penalty};
use crate::sparse::{dot, inf_norm, solve_checked, CsrMatrix};
use crate::vi_solver::{solution_map, solve_obstacle_vi, SolverOptions};

const NEWTON_TOL: f64 = 1e-10;
const NEWTON_MAX_ITER: usize = 200;

/// Positive, nondecreasing parameter sequence whose last value is at least
/// `1e3` times its first, indexed from `n = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule(Vec<f64>);

impl Schedule {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("schedule", "must not be empty"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(invalid(
                "schedule",
                format!("entries must be positive and finite, got {v}"),
            ));
        }
        if values.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("schedule", "must be nondecreasing"));
        }
        let (first, last) = (values[0], values[values.len() - 1]);
        if last < 1e3 * first {
            return Err(invalid(
                "schedule",
                format!("must diverge within the horizon: last {last} < 1e3 * first {first}"),
            ));
        }
        Ok(Self(values))
    }

    /// `first * ratio^k`, `k = 0..len`.
    pub fn geometric(first: f64, ratio: f64, len: usize) -> Result<Self> {
        Self::new((0..len).map(|k| first * ratio.powi(k as i32)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Value at `n`, counted from 1.
    pub fn at(&self, n: usize) -> f64 {
        self.0[n - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug)]
pub enum PerturbationScheme {
    /// `R_n = i_K + |u|_Y^alpha / (2 gamma'_n)`.
    Tikhonov { gamma_prime: Schedule, alpha: f64 },
    /// `R_n = (gamma_n / 2) dist(u, K)^2`.
    MoreauYosida { gamma: Schedule },
    /// `R_n = (gamma_n / 2) dist(u, K)^2 + i_{V_n}` with `V_n` the P1 space of
    /// `hierarchy[n - 1]`.
    GalerkinMY {
        hierarchy: Vec<Arc<Mesh>>,
        gamma: Schedule,
    },
    /// `R_n = (gamma_n / 2) dist(u, K)^2 + |u|_Y^alpha / (2 gamma'_n)`.
    TikhonovMY {
        gamma: Schedule,
        gamma_prime: Schedule,
        alpha: f64,
    },
}

impl PerturbationScheme {
    pub fn n_max(&self) -> usize {
        match self {
            Self::Tikhonov { gamma_prime, .. } => gamma_prime.len(),
            Self::MoreauYosida { gamma } => gamma.len(),
            Self::GalerkinMY { hierarchy, gamma } => hierarchy.len().min(gamma.len()),
            Self::TikhonovMY {
                gamma, gamma_prime, ..
            } => gamma.len().min(gamma_prime.len()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Tikhonov { .. } => "tikhonov",
            Self::MoreauYosida { .. } => "moreau_yosida",
            Self::GalerkinMY { .. } => "galerkin_my",
            Self::TikhonovMY { .. } => "tikhonov_my",
        }
    }

    /// Checks schedule lengths, the exponent and nestedness of the hierarchy
    /// (including that `mesh` refines its last level).
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        match self {
            Self::Tikhonov { alpha, .. } | Self::TikhonovMY { alpha, .. } if !(*alpha > 0.0) => {
                Err(invalid("alpha", format!("must be positive, got {alpha}")))
            }
            Self::TikhonovMY {
                gamma, gamma_prime, ..
            } if gamma.len() != gamma_prime.len() => Err(invalid(
                "gamma_prime",
                format!(
                    "length {} differs from gamma length {}",
                    gamma_prime.len(),
                    gamma.len()
                ),
            )),
            Self::GalerkinMY { hierarchy, gamma } => {
                if hierarchy.len() != gamma.len() {
                    return Err(invalid(
                        "hierarchy",
                        format!(
                            "{} levels for a schedule of length {}",
                            hierarchy.len(),
                            gamma.len()
                        ),
                    ));
                }
                for (k, pair) in hierarchy.windows(2).enumerate() {
                    if !pair[1].is_refinement_of(&pair[0]) {
                        return Err(invalid(
                            "hierarchy",
                            format!("level {} does not refine level {}", k + 2, k + 1),
                        ));
                    }
                }
                if let Some(last) = hierarchy.last() {
                    if !mesh.is_refinement_of(last) {
                        return Err(invalid(
                            "hierarchy",
                            "the solution mesh does not refine the last level",
                        ));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn gamma(&self, n: usize) -> Option<f64> {
        match self {
            Self::MoreauYosida { gamma }
            | Self::GalerkinMY { gamma, .. }
            | Self::TikhonovMY { gamma, .. } => Some(gamma.at(n)),
            Self::Tikhonov { .. } => None,
        }
    }

    fn gamma_prime(&self, n: usize) -> Option<(f64, f64)> {
        match self {
            Self::Tikhonov { gamma_prime, alpha }
            | Self::TikhonovMY {
                gamma_prime, alpha, ..
            } => Some((gamma_prime.at(n), *alpha)),
            _ => None,
        }
    }
}

/// Real number or `+inf` marker for indicator-valued perturbations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Extended {
    Finite(f64),
    Infinite,
}

impl Extended {
    pub fn is_finite(&self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(*v),
            Extended::Infinite => None,
        }
    }

    /// `self <= other + tol`, with `+inf <= +inf`.
    pub fn le(&self, other: &Extended, tol: f64) -> bool {
        match (self, other) {
            (_, Extended::Infinite) => true,
            (Extended::Infinite, Extended::Finite(_)) => false,
            (Extended::Finite(a), Extended::Finite(b)) => *a <= *b + tol,
        }
    }

    fn plus(self, v: f64) -> Extended {
        match self {
            Extended::Finite(a) => Extended::Finite(a + v),
            Extended::Infinite => Extended::Infinite,
        }
    }
}

impl fmt::Display for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extended::Finite(v) => write!(f, "{v:e}"),
            Extended::Infinite => f.write_str("inf"),
        }
    }
}

/// Mesh-dependent data the perturbations need: the lumped mass and the
/// `H^1` seminorm matrix, both on all nodes.
#[derive(Clone, Debug)]
pub struct RegularizationSpace {
    mesh: Arc<Mesh>,
    mass: Vec<f64>,
    h1: DiscreteOperator,
}

impl RegularizationSpace {
    pub fn new(mesh: &Arc<Mesh>) -> Result<Self> {
        Ok(Self {
            mesh: mesh.clone(),
            mass: lumped_mass_weights(mesh),
            h1: assemble_operator(mesh, &Coefficients::laplacian())?,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn mass_weights(&self) -> &[f64] {
        &self.mass
    }

    /// `|u|_Y`, the discrete `H^1` seminorm.
    pub fn y_norm(&self, u: &NodalVector) -> f64 {
        energy_norm(&self.h1, u.values())
    }

    /// `sqrt(sum_i m_i (u_i - v_i)^2)`
    pub fn mass_distance(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass
            .iter()
            .zip(u.iter().zip(v))
            .map(|(m, (a, b))| m * (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Lumped-mass distance from `u` to a nodal obstacle set (closed form).
    pub fn dist_to_set(&self, u: &NodalVector, k: &ConstraintSet) -> Result<f64> {
        u.ensure_on(&self.mesh)?;
        match k.kind() {
            ConstraintKind::NodalObstacle(Obstacle::Unbounded) => Ok(0.0),
            ConstraintKind::NodalObstacle(Obstacle::Values(phi)) => {
                phi.ensure_on(&self.mesh)?;
                Ok(self
                    .mass
                    .iter()
                    .zip(u.values().iter().zip(phi.values()))
                    .map(|(m, (a, b))| m * (a - b).max(0.0).powi(2))
                    .sum::<f64>()
                    .sqrt())
            }
            _ => Err(Error::Unsupported(
                "Moreau-Yosida distance is implemented for nodal obstacle sets only".into(),
            )),
        }
    }
}

fn check_n(scheme: &PerturbationScheme, n: usize) -> Result<()> {
    if n == 0 || n > scheme.n_max() {
        return Err(invalid(
            "n",
            format!("must lie in 1..={}, got {n}", scheme.n_max()),
        ));
    }
    Ok(())
}

fn tikhonov_term(space: &RegularizationSpace, u: &NodalVector, gp: f64, alpha: f64) -> f64 {
    space.y_norm(u).powf(alpha) / (2.0 * gp)
}

fn indicator(u: &NodalVector, k: &ConstraintSet) -> Result<Extended> {
    Ok(if k.violation(u)? <= FEAS_TOL {
        Extended::Finite(0.0)
    } else {
        Extended::Infinite
    })
}

fn my_term(
    space: &RegularizationSpace,
    u: &NodalVector,
    k: &ConstraintSet,
    gamma: f64,
) -> Result<f64> {
    Ok(0.5 * gamma * space.dist_to_set(u, k)?.powi(2))
}

/// True when the fine-mesh function `u` lies in the P1 space of `coarse`.
pub fn in_subspace(u: &NodalVector, fine: &Mesh, coarse: &Mesh) -> Result<bool> {
    u.ensure_on(fine)?;
    let sampled: Vec<f64> = coarse
        .nodes()
        .iter()
        .map(|&p| fine.evaluate(u.values(), p).unwrap_or(f64::NAN))
        .collect();
    if sampled.iter().any(|v| v.is_nan()) {
        return Ok(false);
    }
    let back = crate::mesh::prolongate(coarse, &sampled, fine)?;
    let tol = 1e-12 * (1.0 + u.sup_norm());
    Ok(back.sup_distance(u)? <= tol)
}

/// `R_n(u)`.
pub fn evaluate_rn(
    u: &NodalVector,
    scheme: &PerturbationScheme,
    n: usize,
    k: &ConstraintSet,
    space: &RegularizationSpace,
) -> Result<Extended> {
    check_n(scheme, n)?;
    u.ensure_on(&space.mesh)?;
    Ok(match scheme {
        PerturbationScheme::Tikhonov { gamma_prime, alpha } => {
            indicator(u, k)?.plus(tikhonov_term(space, u, gamma_prime.at(n), *alpha))
        }
        PerturbationScheme::MoreauYosida { gamma } => {
            Extended::Finite(my_term(space, u, k, gamma.at(n))?)
        }
        PerturbationScheme::GalerkinMY { hierarchy, gamma } => {
            if in_subspace(u, &space.mesh, &hierarchy[n - 1])? {
                Extended::Finite(my_term(space, u, k, gamma.at(n))?)
            } else {
                Extended::Infinite
            }
        }
        PerturbationScheme::TikhonovMY {
            gamma,
            gamma_prime,
            alpha,
        } => Extended::Finite(
            my_term(space, u, k, gamma.at(n))? + tikhonov_term(space, u, gamma_prime.at(n), *alpha),
        ),
    })
}

/// Lower bound `R_n_lower(u) <= R_n(u)`: the indicator of `K` for the
/// Tikhonov scheme, the Moreau–Yosida part otherwise.
pub fn evaluate_rn_lower(
    u: &NodalVector,
    scheme: &PerturbationScheme,
    n: usize,
    k: &ConstraintSet,
    space: &RegularizationSpace,
) -> Result<Extended> {
    check_n(scheme, n)?;
    match scheme.gamma(n) {
        Some(g) => Ok(Extended::Finite(my_term(space, u, k, g)?)),
        None => indicator(u, k),
    }
}

/// Upper bound `R_n(u) <= R_n_upper(u)`: the indicator of `K` (intersected
/// with `V_n` for the Galerkin scheme) plus the Tikhonov term where present.
/// The combined scheme uses `gamma'_n` in the Tikhonov term, the only choice
/// for which the bound holds for every pair of schedules.
pub fn evaluate_rn_upper(
    u: &NodalVector,
    scheme: &PerturbationScheme,
    n: usize,
    k: &ConstraintSet,
    space: &RegularizationSpace,
) -> Result<Extended> {
    check_n(scheme, n)?;
    let mut base = indicator(u, k)?;
    if let PerturbationScheme::GalerkinMY { hierarchy, .. } = scheme {
        if !in_subspace(u, &space.mesh, &hierarchy[n - 1])? {
            base = Extended::Infinite;
        }
    }
    Ok(match scheme.gamma_prime(n) {
        Some((gp, alpha)) => base.plus(tikhonov_term(space, u, gp, alpha)),
        None => base,
    })
}

/// `F(u) = (1/2) <A u, u> - <f, u>` on the free nodes.
pub fn objective(op: &DiscreteOperator, f: &LoadFunctional, u: &NodalVector) -> Result<f64> {
    let x = op.restrict(u)?;
    Ok(0.5 * op.matrix().quadratic_form(&x) - dot(f.values(), &x))
}

#[derive(Clone, Debug)]
pub struct PerturbedMinimizer {
    pub u: NodalVector,
    /// First-order residual of the smooth subproblem, or the complementarity
    /// residual when the subproblem is a VI.
    pub residual: f64,
    pub iterations: usize,
}

/// Prolongation from the free nodes of `coarse` to the free nodes of `fine`.
pub fn prolongation_matrix(coarse: &Mesh, fine: &Mesh) -> Result<CsrMatrix> {
    if !fine.is_refinement_of(coarse) {
        return Err(invalid("fine", "mesh does not refine the coarse mesh"));
    }
    let mut t = Vec::new();
    for (r, &i) in fine.free_nodes().iter().enumerate() {
        let p = fine.nodes()[i];
        let (e, w) = coarse
            .locate(p)
            .ok_or_else(|| invalid("fine", format!("node {i} lies outside the coarse mesh")))?;
        for (&v, &b) in coarse.element(e).iter().zip(&w) {
            if b.abs() > 1e-14 {
                if let Some(c) = coarse.free_index(v) {
                    t.push((r, c, b));
                }
            }
        }
    }
    Ok(CsrMatrix::from_triplets(fine.n_free(), coarse.n_free(), &t))
}

fn nodal_free_bounds(op: &DiscreteOperator, k: &ConstraintSet) -> Result<Vec<f64>> {
    if k.mesh().id() != op.mesh_id() {
        return Err(Error::MeshMismatch {
            expected: op.mesh_id(),
            found: k.mesh().id(),
        });
    }
    let all = k.nodal_bounds().ok_or_else(|| {
        Error::Unsupported(
            "Moreau-Yosida schemes are implemented for nodal obstacle sets only".into(),
        )
    })?;
    Ok(op.mesh().free_nodes().iter().map(|&i| all[i]).collect())
}

fn require_quadratic(alpha: f64) -> Result<()> {
    if alpha != 2.0 {
        return Err(Error::Unsupported(format!(
            "Tikhonov exponent alpha = {alpha}; only alpha = 2 (quadratic subproblems) is implemented"
        )));
    }
    Ok(())
}

/// Penalized objective restricted to `V_n = range(P)`:
/// `(1/2) c^T P^T A P c - (P^T f)^T c + gamma * nodal penalty(P c)`.
struct GalerkinMy<'a> {
    a: &'a CsrMatrix,
    f: &'a [f64],
    p: &'a CsrMatrix,
    pt: &'a CsrMatrix,
    penalty: &'a Penalty<'a>,
    gamma: f64,
}

impl Objective for GalerkinMy<'_> {
    fn value(&self, c: &[f64]) -> f64 {
        let x = self.p.mul_vec(c);
        0.5 * self.a.quadratic_form(&x) - dot(self.f, &x) + self.gamma * self.penalty.value(&x)
    }

    fn gradient(&self, c: &[f64]) -> Vec<f64> {
        let x = self.p.mul_vec(c);
        let mut g: Vec<f64> = self
            .a
            .mul_vec(&x)
            .iter()
            .zip(self.f)
            .map(|(a, b)| a - b)
            .collect();
        let mut sink = Vec::new();
        self.penalty.derivatives(&x, self.gamma, &mut g, &mut sink);
        self.pt.mul_vec(&g)
    }

    fn hessian(&self, c: &[f64]) -> CsrMatrix {
        let x = self.p.mul_vec(c);
        let mut g = vec![0.0; x.len()];
        let mut t = self.a.triplets();
        self.penalty.derivatives(&x, self.gamma, &mut g, &mut t);
        let h = CsrMatrix::from_triplets(x.len(), x.len(), &t);
        self.pt.matmul(&h).matmul(self.p)
    }
}

/// Minimizer of `F + R_n` for a symmetric coercive operator.
pub fn minimize_perturbed(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    scheme: &PerturbationScheme,
    n: usize,
    k: &ConstraintSet,
    space: &RegularizationSpace,
) -> Result<PerturbedMinimizer> {
    check_n(scheme, n)?;
    scheme.validate(op.mesh())?;
    if !op.is_symmetric() {
        return Err(Error::Hypothesis {
            hypothesis: "symmetric operator",
            detail: "F + R_n is an energy; A must equal its transpose".into(),
        });
    }
    if space.mesh.id() != op.mesh_id() {
        return Err(Error::MeshMismatch {
            expected: op.mesh_id(),
            found: space.mesh.id(),
        });
    }
    let mesh = op.mesh();
    let weights: Vec<f64> = mesh.free_nodes().iter().map(|&i| space.mass[i]).collect();
    match scheme {
        PerturbationScheme::Tikhonov { gamma_prime, alpha } => {
            require_quadratic(*alpha)?;
            let shifted = op
                .matrix()
                .add_scaled(space.h1.matrix(), 1.0 / gamma_prime.at(n));
            let op_n = DiscreteOperator::from_free_matrix(mesh.clone(), shifted)?;
            if matches!(k.kind(), ConstraintKind::NodalObstacle(_)) {
                let s = solve_obstacle_vi(&op_n, f, k, &SolverOptions::default())?;
                Ok(PerturbedMinimizer {
                    u: s.y,
                    residual: s.residual,
                    iterations: s.iterations,
                })
            } else {
                let u = solution_map(f, k, &op_n)?;
                Ok(PerturbedMinimizer {
                    u,
                    residual: f64::NAN,
                    iterations: 0,
                })
            }
        }
        PerturbationScheme::MoreauYosida { gamma }
        | PerturbationScheme::TikhonovMY { gamma, .. } => {
            let bounds = nodal_free_bounds(op, k)?;
            let a = match scheme.gamma_prime(n) {
                Some((gp, alpha)) => {
                    require_quadratic(alpha)?;
                    op.matrix().add_scaled(space.h1.matrix(), 1.0 / gp)
                }
                None => op.matrix().clone(),
            };
            let pen = Penalty::Nodal {
                weights: &weights,
                bounds: &bounds,
            };
            let obj = Penalized {
                a: &a,
                f: f.values(),
                penalty: &pen,
                gamma: gamma.at(n),
            };
            let x0 = solve_checked(&a, f.values(), crate::assembly::SOLVE_TOL)?;
            let r = newton_minimize(&obj, x0, NEWTON_TOL, NEWTON_MAX_ITER)?;
            Ok(PerturbedMinimizer {
                u: op.extend(&r.x),
                residual: r.residual,
                iterations: r.iterations,
            })
        }
        PerturbationScheme::GalerkinMY { hierarchy, gamma } => {
            let bounds = nodal_free_bounds(op, k)?;
            let p = prolongation_matrix(&hierarchy[n - 1], mesh)?;
            let pt = p.transpose();
            let pen = Penalty::Nodal {
                weights: &weights,
                bounds: &bounds,
            };
            let obj = GalerkinMy {
                a: op.matrix(),
                f: f.values(),
                p: &p,
                pt: &pt,
                penalty: &pen,
                gamma: gamma.at(n),
            };
            let ac = pt.matmul(op.matrix()).matmul(&p);
            let c0 = if ac.nrows() == 0 {
                Vec::new()
            } else {
                solve_checked(&ac, &pt.mul_vec(f.values()), crate::assembly::SOLVE_TOL)?
            };
            let r = newton_minimize(&obj, c0, NEWTON_TOL, NEWTON_MAX_ITER)?;
            Ok(PerturbedMinimizer {
                u: op.extend(&p.mul_vec(&r.x)),
                residual: r.residual,
                iterations: r.iterations,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaRecord {
    pub n: usize,
    /// `gamma_n` for Moreau–Yosida schemes, `gamma'_n` for pure Tikhonov.
    pub gamma: f64,
    pub h: f64,
    pub objective: Option<Extended>,
    pub err_energy: Option<f64>,
    pub err_sup: Option<f64>,
    pub violation: Option<f64>,
    pub iterations: usize,
    pub residual: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GammaStudyReport {
    pub scheme: &'static str,
    pub records: Vec<GammaRecord>,
    /// `F(y*)` for the constrained minimizer `y*`.
    pub reference_objective: f64,
    pub reference: NodalVector,
    /// Energy distance at `n_max` is no larger than at `n_max / 2`.
    pub converged: bool,
}

impl GammaStudyReport {
    /// Ratios of consecutive violations.
    pub fn violation_ratios(&self) -> Vec<f64> {
        self.records
            .windows(2)
            .filter_map(|w| match (w[0].violation, w[1].violation) {
                (Some(a), Some(b)) if a > 0.0 => Some(b / a),
                _ => None,
            })
            .collect()
    }
}

/// Minimizes `F + R_n` for every `n` of the scheme and records distances to
/// the constrained minimizer computed by the VI solver.
pub fn gamma_study(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    k: &ConstraintSet,
    scheme: &PerturbationScheme,
) -> Result<GammaStudyReport> {
    scheme.validate(op.mesh())?;
    let space = RegularizationSpace::new(op.mesh())?;
    let reference = solution_map(f, k, op)?;
    let reference_objective = objective(op, f, &reference)?;
    let n_max = scheme.n_max();
    let mut records: Vec<GammaRecord> = (1..=n_max)
        .into_par_iter()
        .map(|n| {
            let gamma = scheme
                .gamma(n)
                .or_else(|| scheme.gamma_prime(n).map(|g| g.0))
                .unwrap_or(f64::NAN);
            let h = match scheme {
                PerturbationScheme::GalerkinMY { hierarchy, .. } => hierarchy[n - 1].h(),
                _ => op.mesh().h(),
            };
            let run = || -> Result<GammaRecord> {
                let m = minimize_perturbed(op, f, scheme, n, k, &space)?;
                let rn = evaluate_rn(&m.u, scheme, n, k, &space)?;
                let diff = m.u.sub(&reference)?;
                Ok(GammaRecord {
                    n,
                    gamma,
                    h,
                    objective: Some(rn.plus(objective(op, f, &m.u)?)),
                    err_energy: Some(energy_norm(op, diff.values())),
                    err_sup: Some(diff.sup_norm()),
                    violation: Some(k.violation(&m.u)?),
                    iterations: m.iterations,
                    residual: Some(m.residual),
                    error: None,
                })
            };
            run().unwrap_or_else(|e| GammaRecord {
                n,
                gamma,
                h,
                objective: None,
                err_energy: None,
                err_sup: None,
                violation: None,
                iterations: 0,
                residual: None,
                error: Some(e.to_string()),
            })
        })
        .collect();
    records.sort_by_key(|r| r.n);
    let converged = match (
        records.last().and_then(|r| r.err_energy),
        records
            .get((n_max / 2).max(1) - 1)
            .and_then(|r| r.err_energy),
    ) {
        (Some(last), Some(mid)) => last <= mid || last <= 1e-12,
        _ => false,
    };
    Ok(GammaStudyReport {
        scheme: scheme.name(),
        records,
        reference_objective,
        reference,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoRecoveryLevel {
    pub n: usize,
    pub h: f64,
    /// Mass distance from `V_n` to `K ∩ closed ball(w, rho)`.
    pub distance: f64,
    pub gamma: f64,
    /// Mass distance from the witness `y_n` (mass projection of `w` onto
    /// `V_n`) to `w`.
    pub witness_distance: f64,
    /// `F(y_n) + R_n(y_n) - F(w)`.
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct NoRecoveryReport {
    pub levels: Vec<NoRecoveryLevel>,
    /// The distances collapse, so the coarse spaces do reach `K` near `w`
    /// and the demonstration does not apply.
    pub inapplicable: bool,
}

impl NoRecoveryReport {
    pub fn gammas(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.gamma).collect()
    }

    /// Number of levels whose gap is at least `threshold`.
    pub fn persistent_gap_levels(&self, threshold: f64) -> usize {
        self.levels.iter().filter(|l| l.gap >= threshold).count()
    }
}

/// Objective of the distance problem for a fixed multiplier `mu` on the ball
/// constraint: `sum_i m_i g_i((P c)_i)` with
/// `g_i(z) = min_{v <= phi_i} (z - v)^2 + mu (v - w_i)^2`.
struct BallDistance<'a> {
    p: &'a CsrMatrix,
    pt: &'a CsrMatrix,
    m: &'a [f64],
    phi: &'a [f64],
    w: &'a [f64],
    mu: f64,
}

impl BallDistance<'_> {
    fn best_v(&self, i: usize, z: f64) -> f64 {
        ((z + self.mu * self.w[i]) / (1.0 + self.mu)).min(self.phi[i])
    }

    fn parts(&self, i: usize, z: f64) -> (f64, f64, f64) {
        let v = self.best_v(i, z);
        let val = (z - v).powi(2) + self.mu * (v - self.w[i]).powi(2);
        if v < self.phi[i] {
            let k = 2.0 * self.mu / (1.0 + self.mu);
            (val, k * (z - self.w[i]), k)
        } else {
            (val, 2.0 * (z - self.phi[i]), 2.0)
        }
    }
}

impl Objective for BallDistance<'_> {
    fn value(&self, c: &[f64]) -> f64 {
        let z = self.p.mul_vec(c);
        (0..z.len())
            .map(|i| self.m[i] * self.parts(i, z[i]).0)
            .sum()
    }

    fn gradient(&self, c: &[f64]) -> Vec<f64> {
        let z = self.p.mul_vec(c);
        let g: Vec<f64> = (0..z.len())
            .map(|i| self.m[i] * self.parts(i, z[i]).1)
            .collect();
        self.pt.mul_vec(&g)
    }

    fn hessian(&self, c: &[f64]) -> CsrMatrix {
        let z = self.p.mul_vec(c);
        let d: Vec<f64> = (0..z.len())
            .map(|i| self.m[i] * self.parts(i, z[i]).2)
            .collect();
        let h = self.pt.matmul(&CsrMatrix::diagonal(&d)).matmul(self.p);
        // keeps the generalized Hessian invertible where g_i is flat
        let reg = 1e-12 * h.max_abs().max(1e-300);
        h.add_scaled(&CsrMatrix::identity(h.nrows()), reg)
    }
}

/// Returns `(distance, ball radius used)` for the multiplier `mu`.
fn ball_distance_at(obj: &BallDistance<'_>, c0: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
    let r = newton_minimize(obj, c0.to_vec(), 1e-13, NEWTON_MAX_ITER)?;
    let z = obj.p.mul_vec(&r.x);
    let mut d2 = 0.0;
    let mut b2 = 0.0;
    for i in 0..z.len() {
        let v = obj.best_v(i, z[i]);
        d2 += obj.m[i] * (z[i] - v).powi(2);
        b2 += obj.m[i] * (v - obj.w[i]).powi(2);
    }
    Ok((d2.sqrt(), b2.sqrt(), r.x))
}

/// Distance in the lumped mass metric from the P1 space of `coarse` to
/// `K ∩ closed ball(w, rho)`, by bisection on the ball multiplier.
pub fn subspace_ball_distance(
    fine: &Mesh,
    coarse: &Mesh,
    phi: &[f64],
    w: &[f64],
    rho: f64,
) -> Result<f64> {
    let p = prolongation_matrix(coarse, fine)?;
    let pt = p.transpose();
    let mass = lumped_mass_weights(fine);
    let m: Vec<f64> = fine.free_nodes().iter().map(|&i| mass[i]).collect();
    let phi_f: Vec<f64> = fine.free_nodes().iter().map(|&i| phi[i]).collect();
    let w_f: Vec<f64> = fine.free_nodes().iter().map(|&i| w[i]).collect();
    let c0 = vec![0.0; coarse.n_free()];
    let make = |mu: f64| BallDistance {
        p: &p,
        pt: &pt,
        m: &m,
        phi: &phi_f,
        w: &w_f,
        mu,
    };
    let (d0, b0, _) = ball_distance_at(&make(0.0), &c0)?;
    if b0 <= rho {
        return Ok(d0);
    }
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    let (mut d_hi, b_hi, _) = ball_distance_at(&make(10f64.powf(hi)), &c0)?;
    if b_hi > rho {
        return Err(invalid(
            "rho",
            format!("ball of radius {rho} around w does not meet K"),
        ));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (d, b, _) = ball_distance_at(&make(10f64.powf(mid)), &c0)?;
        if b <= rho {
            hi = mid;
            d_hi = d;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    Ok(d_hi)
}

/// Constructs the adversarial schedule `gamma_n` for which
/// `dist(y, K ∩ B(w, rho))^2 < 1/gamma_n` forces `y ∉ V_n`, and reports the
/// objective gap of the natural witness `y_n` (mass projection of `w`).
pub fn no_recovery_demo(
    op: &DiscreteOperator,
    f: &LoadFunctional,
    k: &ConstraintSet,
    hierarchy: &[Arc<Mesh>],
    rho: f64,
    w: &NodalVector,
) -> Result<NoRecoveryReport> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid("rho", format!("must be positive, got {rho}")));
    }
    if hierarchy.is_empty() {
        return Err(invalid("hierarchy", "must not be empty"));
    }
    let fine = op.mesh();
    w.ensure_on(fine)?;
    for (j, c) in hierarchy.iter().enumerate() {
        if !fine.is_refinement_of(c) {
            return Err(invalid(
                "hierarchy",
                format!("level {} is not refined by the solution mesh", j + 1),
            ));
        }
        if j > 0 && !c.is_refinement_of(&hierarchy[j - 1]) {
            return Err(invalid(
                "hierarchy",
                format!("level {} does not refine level {j}", j + 1),
            ));
        }
    }
    let phi = k
        .nodal_bounds()
        .ok_or_else(|| Error::Unsupported("no-recovery demo needs a nodal obstacle".into()))?;
    if k.violation(w)? > FEAS_TOL {
        return Err(Error::Infeasible {
            violation: k.violation(w)?,
            tol: FEAS_TOL,
        });
    }
    let space = RegularizationSpace::new(fine)?;
    let fw = objective(op, f, w)?;
    let mass = space.mass_weights();
    let mut levels = Vec::with_capacity(hierarchy.len());
    let mut prev_gamma = 0.0f64;
    for (j, coarse) in hierarchy.iter().enumerate() {
        let d = subspace_ball_distance(fine, coarse, &phi, w.values(), rho)?;
        let gamma = if d > 0.0 {
            (2.0 / (d * d)).max(2.0 * prev_gamma)
        } else {
            f64::INFINITY
        };
        prev_gamma = gamma;
        // witness: mass projection of w onto V_n
        let p = prolongation_matrix(coarse, fine)?;
        let pt = p.transpose();
        let mf: Vec<f64> = fine.free_nodes().iter().map(|&i| mass[i]).collect();
        let wf: Vec<f64> = fine.free_nodes().iter().map(|&i| w.values()[i]).collect();
        let gram = pt.matmul(&CsrMatrix::diagonal(&mf)).matmul(&p);
        let rhs = pt.mul_vec(&wf.iter().zip(&mf).map(|(a, b)| a * b).collect::<Vec<_>>());
        let c = if gram.nrows() == 0 {
            Vec::new()
        } else {
            solve_checked(&gram, &rhs, crate::assembly::SOLVE_TOL)?
        };
        let y = op.extend(&p.mul_vec(&c));
        let dist_k = space.dist_to_set(&y, k)?;
        let gap = if gamma.is_finite() {
            objective(op, f, &y)? + 0.5 * gamma * dist_k * dist_k - fw
        } else {
            f64::INFINITY
        };
        levels.push(NoRecoveryLevel {
            n: j + 1,
            h: coarse.h(),
            distance: d,
            gamma,
            witness_distance: space.mass_distance(y.values(), w.values()),
            gap,
        });
    }
    let first = levels[0].distance;
    let last = levels[levels.len() - 1].distance;
    let inapplicable = last <= 1e-8 * (1.0 + inf_norm(w.values())) || last < 0.5 * first;
    Ok(NoRecoveryReport {
        levels,
        inapplicable,
    })
}
