//! Mosco-convergence experiments: perturbed constraint sequences, recovery
//! sequences and stability of the solution map `S(f_n, K_n) -> S(f, K)`.
//!
//! Weak convergence is not observable at this scale. The weak-limit
//! condition is exercised through its consequence: the extrapolated limit of
//! the computed solutions must be feasible for the limit set.

use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{
    assemble_load, assemble_lumped_mass, assemble_operator, energy_norm, l2_norm, Coefficients,
    DiscreteOperator, LoadFunctional,
};
use crate::constraints::{
    inf, scale_recovery, singular_perturbation_recovery, truncation_recovery, ConstraintKind,
    ConstraintSet, RecoveryEntry, RecoveryTrace, FEAS_TOL,
};
use crate::error::{invalid, Error, Result};
use crate::mesh::{
    build_interval_mesh, interpolate_nodal, prolongate, Mesh, NodalVector, ScalarField,
};
use crate::report::{loglog_slope, Flag, ReportRow, StudyReport};
use crate::vi_solver::{
    default_penalty_schedule, solve_gradient_vi, solve_midpoint_vi, solve_obstacle_vi,
    SolverOptions, VISolution, DEFAULT_TOL,
};

/// Tolerance of the limit-feasibility check.
pub const LIMIT_TOL: f64 = 1e-6;

/// `delta_n = 2^{-n}`, `n = 1..=10`.
pub fn default_deltas() -> Vec<f64> {
    (1..=10).map(|n| 0.5f64.powi(n)).collect()
}

/// `K_n` given by the bounds `b + delta_n g` of the limit set `K` (obstacle
/// values or gradient bounds), all on one mesh.
#[derive(Clone, Debug)]
pub struct SetSequence {
    limit: ConstraintSet,
    direction: Vec<f64>,
    deltas: Vec<f64>,
}

impl SetSequence {
    pub fn new(limit: ConstraintSet, direction: Vec<f64>, deltas: Vec<f64>) -> Result<Self> {
        let bounds = limit
            .bound_values()
            .ok_or_else(|| invalid("limit", "the unbounded set cannot be perturbed"))?;
        if direction.len() != bounds.len() {
            return Err(Error::DimensionMismatch {
                context: "set sequence direction",
                expected: bounds.len(),
                found: direction.len(),
            });
        }
        if deltas.is_empty() {
            return Err(invalid("deltas", "must not be empty"));
        }
        if deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(invalid("deltas", "entries must be finite and nonnegative"));
        }
        if direction.iter().any(|d| !d.is_finite()) {
            return Err(invalid("direction", "entries must be finite"));
        }
        Ok(Self {
            limit,
            direction,
            deltas,
        })
    }

    /// Uniform shift `phi_n = phi + delta_n` of every bound value.
    pub fn shifted(limit: ConstraintSet, deltas: Vec<f64>) -> Result<Self> {
        let len = limit.bound_values().map_or(0, <[f64]>::len);
        Self::new(limit, vec![1.0; len], deltas)
    }

    pub fn limit(&self) -> &ConstraintSet {
        &self.limit
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn direction(&self) -> &[f64] {
        &self.direction
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }

    pub fn delta(&self, n: usize) -> f64 {
        self.deltas[n - 1]
    }

    /// Bound values of `K_n`, `n` counted from 1.
    pub fn bounds(&self, n: usize) -> Vec<f64> {
        let d = self.delta(n);
        self.limit
            .bound_values()
            .expect("checked at construction")
            .iter()
            .zip(&self.direction)
            .map(|(b, g)| b + d * g)
            .collect()
    }

    /// `K_n`, `n` counted from 1.
    pub fn set(&self, n: usize) -> Result<ConstraintSet> {
        let mesh = self.limit.mesh();
        let b = self.bounds(n);
        let set = match self.limit.kind() {
            ConstraintKind::NodalObstacle(_) => {
                ConstraintSet::nodal(mesh, NodalVector::new(mesh, b)?)?
            }
            ConstraintKind::MidpointObstacle(_) => ConstraintSet::midpoint(mesh, b)?,
            ConstraintKind::GradientBound { p, .. } => ConstraintSet::gradient(mesh, b, *p)?,
        };
        if self.limit.nu() > 0.0 {
            set.with_nu(self.limit.nu())
        } else {
            Ok(set)
        }
    }

    /// `|phi_n - phi|_inf`
    pub fn shift(&self, n: usize) -> f64 {
        self.delta(n) * self.direction.iter().fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

/// Load perturbation `f_n = f + delta_n g`.
#[derive(Clone, Debug)]
pub struct LoadSequence {
    pub limit: LoadFunctional,
    pub direction: Option<LoadFunctional>,
}

impl LoadSequence {
    pub fn fixed(f: LoadFunctional) -> Self {
        Self {
            limit: f,
            direction: None,
        }
    }

    pub fn at(&self, delta: f64) -> Result<LoadFunctional> {
        match &self.direction {
            Some(g) => self.limit.add_scaled(g, delta),
            None => Ok(self.limit.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoscoRecord {
    pub n: usize,
    pub h: f64,
    pub delta: Option<f64>,
    /// `|phi_n - phi|_inf`
    pub phi_shift: Option<f64>,
    pub err_sup: Option<f64>,
    pub err_l2: Option<f64>,
    pub err_energy: Option<f64>,
    /// Violation of `y_n` with respect to its own set `K_n`.
    pub violation: Option<f64>,
    pub feasible: bool,
    /// Energy distance from the limit solution to its recovery in `K_n`.
    pub recovery_distance: Option<f64>,
    pub iterations: usize,
    pub residual: Option<f64>,
    pub error: Option<String>,
}

impl MoscoRecord {
    fn failed(n: usize, h: f64, delta: Option<f64>, e: &Error) -> Self {
        Self {
            n,
            h,
            delta,
            phi_shift: None,
            err_sup: None,
            err_l2: None,
            err_energy: None,
            violation: None,
            feasible: false,
            recovery_distance: None,
            iterations: 0,
            residual: None,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LimitRecord {
    pub y: NodalVector,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct MoscoReport {
    pub study: &'static str,
    pub limit: LimitRecord,
    pub records: Vec<MoscoRecord>,
    /// Sup error decreased at least tenfold from the first to the last record.
    pub converged: bool,
    /// Least-squares slope of `log err_sup` against `log delta` (or `log h`).
    pub slope: Option<f64>,
    /// Violation of the extrapolated limit of the computed solutions with
    /// respect to the limit set.
    pub limit_violation: Option<f64>,
}

impl MoscoReport {
    pub fn errors_sup(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.err_sup).collect()
    }

    pub fn limit_feasible(&self) -> Option<bool> {
        self.limit_violation.map(|v| v <= LIMIT_TOL)
    }

    pub fn to_report(&self) -> StudyReport {
        let mut r = StudyReport::new(self.study);
        for rec in &self.records {
            r.rows.push(ReportRow {
                n: rec.n,
                h: Some(rec.h),
                delta: rec.delta,
                err_sup: rec.err_sup,
                err_l2: rec.err_l2,
                err_energy: rec.err_energy,
                violation: rec.violation,
                iterations: Some(rec.iterations),
                residual: rec.residual,
                flag: Some(if rec.error.is_some() {
                    "failed".into()
                } else if rec.feasible {
                    "feasible".into()
                } else {
                    "infeasible".into()
                }),
                ..ReportRow::default()
            });
            if let Some(e) = &rec.error {
                r.failures.push((rec.n, e.clone()));
            }
        }
        r.flags.push(Flag::asserted("converged", self.converged));
        r.flags.push(Flag::asserted(
            "no_failures",
            self.records.iter().all(|x| x.error.is_none()),
        ));
        if let Some(ok) = self.limit_feasible() {
            r.flags.push(Flag::asserted("limit_feasible", ok));
        }
        if let Some(s) = self.slope {
            r.flags.push(Flag::informative("positive_slope", s > 0.0));
        }
        r
    }
}

fn solve_any(op: &DiscreteOperator, f: &LoadFunctional, k: &ConstraintSet) -> Result<VISolution> {
    match k.kind() {
        ConstraintKind::NodalObstacle(_) => solve_obstacle_vi(op, f, k, &SolverOptions::default()),
        ConstraintKind::MidpointObstacle(_) => {
            solve_midpoint_vi(op, f, k, &default_penalty_schedule(), DEFAULT_TOL)
        }
        ConstraintKind::GradientBound { .. } => {
            solve_gradient_vi(op, f, k, &default_penalty_schedule(), DEFAULT_TOL)
        }
    }
}

/// Feasible approximation of `y` in `K_n`: the nodal minimum for obstacles,
/// the scaling for gradient bounds with `nu > 0`.
fn recovery_of(y: &NodalVector, seq: &SetSequence, n: usize) -> Result<Option<NodalVector>> {
    match seq.limit.kind() {
        ConstraintKind::NodalObstacle(_) => {
            let phi_n = NodalVector::new(seq.limit.mesh(), seq.bounds(n))?;
            Ok(Some(inf(y, &phi_n)?))
        }
        ConstraintKind::GradientBound { alpha, .. } if seq.limit.nu() > 0.0 => Ok(Some(
            scale_recovery(y, alpha, &seq.bounds(n), seq.limit.nu())?,
        )),
        _ => Ok(None),
    }
}

/// Solves the limit problem once and every perturbed problem once, in
/// parallel, and records the errors in sup, lumped `L^2` and energy norms.
pub fn mosco_study(
    op: &DiscreteOperator,
    loads: &LoadSequence,
    seq: &SetSequence,
) -> Result<MoscoReport> {
    let mesh = op.mesh();
    if seq.limit.mesh().id() != mesh.id() {
        return Err(Error::MeshMismatch {
            expected: mesh.id(),
            found: seq.limit.mesh().id(),
        });
    }
    let limit = solve_any(op, &loads.limit, &seq.limit)?;
    let y = limit.y.clone();
    let mut records: Vec<MoscoRecord> = (1..=seq.len())
        .into_par_iter()
        .map(|n| {
            let delta = seq.delta(n);
            let run = || -> Result<MoscoRecord> {
                let k_n = seq.set(n)?;
                let f_n = loads.at(delta)?;
                let s = solve_any(op, &f_n, &k_n)?;
                let diff = s.y.sub(&y)?;
                let violation = k_n.violation(&s.y)?;
                let recovery_distance = match recovery_of(&y, seq, n)? {
                    Some(w) => Some(energy_norm(op, w.sub(&y)?.values())),
                    None => None,
                };
                Ok(MoscoRecord {
                    n,
                    h: mesh.h(),
                    delta: Some(delta),
                    phi_shift: Some(seq.shift(n)),
                    err_sup: Some(diff.sup_norm()),
                    err_l2: Some(l2_norm(mesh, diff.values())),
                    err_energy: Some(energy_norm(op, diff.values())),
                    violation: Some(violation),
                    feasible: violation <= FEAS_TOL,
                    recovery_distance,
                    iterations: s.iterations,
                    residual: Some(s.residual),
                    error: None,
                })
            };
            run().unwrap_or_else(|e| MoscoRecord::failed(n, mesh.h(), Some(delta), &e))
        })
        .collect();
    records.sort_by_key(|r| r.n);

    let converged = tenfold_decrease(&records);
    let (xs, ys): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter_map(|r| Some((r.delta?, r.err_sup?)))
        .unzip();
    let slope = loglog_slope(&xs, &ys);
    let limit_violation = extrapolated_limit_violation(op, loads, seq, &records)?;
    Ok(MoscoReport {
        study: "mosco",
        limit: LimitRecord {
            y,
            iterations: limit.iterations,
            residual: limit.residual,
        },
        records,
        converged,
        slope,
        limit_violation,
    })
}

fn tenfold_decrease(records: &[MoscoRecord]) -> bool {
    match (
        records.first().and_then(|r| r.err_sup),
        records.last().and_then(|r| r.err_sup),
    ) {
        (Some(a), Some(b)) => b <= a / 10.0 || b <= 1e-12,
        _ => false,
    }
}

/// Linear extrapolation in `delta` of the last two perturbed solutions to
/// `delta = 0`, measured against the limit set. Only evaluated when the
/// perturbations shrink in the discrete `L^1` sense.
fn extrapolated_limit_violation(
    op: &DiscreteOperator,
    loads: &LoadSequence,
    seq: &SetSequence,
    records: &[MoscoRecord],
) -> Result<Option<f64>> {
    let n = seq.len();
    if n < 2 || records.iter().rev().take(2).any(|r| r.error.is_some()) {
        return Ok(None);
    }
    let l1 = |k: usize| seq.delta(k) * seq.direction.iter().map(|g| g.abs()).sum::<f64>();
    if !(l1(n) < l1(1) || l1(n) == 0.0) {
        return Ok(None);
    }
    let (d1, d2) = (seq.delta(n - 1), seq.delta(n));
    let y1 = solve_any(op, &loads.at(d1)?, &seq.set(n - 1)?)?.y;
    let y2 = solve_any(op, &loads.at(d2)?, &seq.set(n)?)?.y;
    let lim = if d1 != d2 {
        let t = d2 / (d1 - d2);
        y2.zip_with(&y1, |b, a| b + t * (b - a))?
    } else {
        y2
    };
    Ok(Some(seq.limit.violation(&lim)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Construction {
    Scale,
    Truncate,
    SingularPerturbation,
}

impl Construction {
    pub fn name(&self) -> &'static str {
        match self {
            Construction::Scale => "scale",
            Construction::Truncate => "truncate",
            Construction::SingularPerturbation => "singular_perturbation",
        }
    }
}

/// Builds `w_n ∈ K_n` from `w ∈ K` for every `n` and records the energy
/// distance `|w_n - w|` and the feasibility of `w_n`. Failures are recorded
/// per `n`. `energy` supplies the norm; `q` and `mass` are required by the
/// singular perturbation construction.
pub fn recovery_study(
    w: &NodalVector,
    seq: &SetSequence,
    construction: Construction,
    energy: &DiscreteOperator,
    aux: Option<(&DiscreteOperator, &DiscreteOperator)>,
) -> Result<RecoveryTrace> {
    w.ensure_on(seq.limit.mesh())?;
    let v0 = seq.limit.violation(w)?;
    if v0 > FEAS_TOL {
        return Err(Error::Infeasible {
            violation: v0,
            tol: FEAS_TOL,
        });
    }
    let limit_bounds = seq
        .limit
        .bound_values()
        .expect("checked at construction")
        .to_vec();
    let mut trace = RecoveryTrace::new();
    for n in 1..=seq.len() {
        let step = || -> Result<NodalVector> {
            let b_n = seq.bounds(n);
            match construction {
                Construction::Scale => scale_recovery(w, &limit_bounds, &b_n, seq.limit.nu()),
                Construction::Truncate => {
                    if !matches!(seq.limit.kind(), ConstraintKind::NodalObstacle(_)) {
                        return Err(Error::Unsupported(
                            "truncation recovery applies to nodal obstacles".into(),
                        ));
                    }
                    if let Some(b) = b_n.iter().find(|b| **b < 0.0) {
                        return Err(Error::Hypothesis {
                            hypothesis: "phi_n >= 0",
                            detail: format!("obstacle value {b}"),
                        });
                    }
                    truncation_recovery(w, seq.shift(n))
                }
                Construction::SingularPerturbation => {
                    let (q, mass) = aux.ok_or_else(|| {
                        invalid("aux", "singular perturbation needs Q and the mass")
                    })?;
                    let phi_n = NodalVector::new(seq.limit.mesh(), b_n)?;
                    singular_perturbation_recovery(w, &phi_n, q, mass)
                }
            }
        };
        let entry = match step() {
            Ok(w_n) => {
                let k_n = seq.set(n)?;
                let feasible = k_n.violation(&w_n)? <= FEAS_TOL;
                RecoveryEntry {
                    n,
                    distance: Some(energy_norm(energy, w_n.sub(w)?.values())),
                    feasible,
                    error: None,
                }
            }
            Err(e) => RecoveryEntry {
                n,
                distance: None,
                feasible: false,
                error: Some(e.to_string()),
            },
        };
        trace.push(entry)?;
    }
    Ok(trace)
}

/// A self-contained recovery experiment on `(0, 1)`.
#[derive(Clone, Debug)]
pub struct RecoveryScenario {
    pub construction: Construction,
    pub mesh: Arc<Mesh>,
    pub w: NodalVector,
    pub seq: SetSequence,
    pub energy: DiscreteOperator,
    pub q: DiscreteOperator,
    pub mass: DiscreteOperator,
}

impl RecoveryScenario {
    /// Bundled scenarios, one per construction:
    /// * scale: gradient bound `alpha = 1` shrinking to `1 - delta_n / 2` with
    ///   `nu = 3/4`, target the tent `min(x, 1 - x)` (bound active everywhere);
    /// * truncate: obstacle `0.3` shrinking to `0.3 - delta_n / 5`, target
    ///   `0.3 sin(pi x)` touching the obstacle at `x = 1/2`;
    /// * singular perturbation: concave obstacle `phi = 1/4 + x (1 - x)`
    ///   scaled to `(1 - delta_n) phi`, target `phi sin(pi x)` touching `phi`
    ///   tangentially at `x = 1/2`.
    pub fn bundled(construction: Construction, n_cells: usize, deltas: Vec<f64>) -> Result<Self> {
        let mesh = Arc::new(build_interval_mesh(n_cells, 0.0, 1.0)?);
        let energy = assemble_operator(&mesh, &Coefficients::laplacian())?;
        let mass = assemble_lumped_mass(&mesh)?;
        let pi = std::f64::consts::PI;
        let (w, seq) = match construction {
            Construction::Scale => {
                let limit = ConstraintSet::gradient(&mesh, vec![1.0; mesh.n_elements()], 2.0)?
                    .with_nu(0.75)?;
                let w = interpolate_nodal(|p| p[0].min(1.0 - p[0]), &mesh)?;
                (
                    w,
                    SetSequence::new(limit, vec![-0.5; mesh.n_elements()], deltas)?,
                )
            }
            Construction::Truncate => {
                let limit = ConstraintSet::nodal(&mesh, NodalVector::constant(&mesh, 0.3))?;
                let w = interpolate_nodal(|p| 0.3 * (pi * p[0]).sin(), &mesh)?;
                (
                    w,
                    SetSequence::new(limit, vec![-0.2; mesh.n_nodes()], deltas)?,
                )
            }
            Construction::SingularPerturbation => {
                let phi = interpolate_nodal(|p| 0.25 + p[0] * (1.0 - p[0]), &mesh)?;
                let w =
                    interpolate_nodal(|p| (0.25 + p[0] * (1.0 - p[0])) * (pi * p[0]).sin(), &mesh)?;
                let dir = phi.scale(-1.0).into_values();
                (
                    w,
                    SetSequence::new(ConstraintSet::nodal(&mesh, phi)?, dir, deltas)?,
                )
            }
        };
        Ok(Self {
            construction,
            mesh,
            w,
            seq,
            q: energy.clone(),
            energy,
            mass,
        })
    }

    pub fn run(&self) -> Result<RecoveryTrace> {
        recovery_study(
            &self.w,
            &self.seq,
            self.construction,
            &self.energy,
            Some((&self.q, &self.mass)),
        )
    }
}

pub fn recovery_report(
    construction: Construction,
    trace: &RecoveryTrace,
    deltas: &[f64],
) -> StudyReport {
    let mut r = StudyReport::new(format!("recovery_{}", construction.name()));
    for e in trace.entries() {
        r.rows.push(ReportRow {
            n: e.n,
            delta: deltas.get(e.n - 1).copied(),
            err_energy: e.distance,
            flag: Some(if e.error.is_some() {
                "failed".into()
            } else if e.feasible {
                "feasible".into()
            } else {
                "infeasible".into()
            }),
            ..ReportRow::default()
        });
        if let Some(msg) = &e.error {
            r.failures.push((e.n, msg.clone()));
        }
    }
    r.flags
        .push(Flag::asserted("all_feasible", trace.all_feasible()));
    r.flags.push(Flag::asserted("converged", trace.converged()));
    r
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FemConstraint {
    /// Obstacle imposed at element barycenters.
    K1Midpoint,
    /// Obstacle imposed at the nodes.
    K2Nodal,
    /// Elementwise gradient bound.
    KiGradient,
}

impl FemConstraint {
    pub fn name(&self) -> &'static str {
        match self {
            FemConstraint::K1Midpoint => "k1_midpoint",
            FemConstraint::K2Nodal => "k2_nodal",
            FemConstraint::KiGradient => "ki_gradient",
        }
    }
}

/// Continuum data discretized afresh on every mesh level.
#[derive(Clone)]
pub struct ContinuumProblem {
    pub coefficients: Coefficients,
    pub load: ScalarField,
    /// Upper obstacle for the K1/K2 variants.
    pub obstacle: Option<ScalarField>,
    /// Gradient bound for the Ki variant.
    pub alpha: Option<ScalarField>,
    pub p: f64,
    /// Penalty schedule for the midpoint and gradient variants.
    pub penalty_schedule: Vec<f64>,
}

impl std::fmt::Debug for ContinuumProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContinuumProblem")
            .field("coefficients", &self.coefficients)
            .field("p", &self.p)
            .field("penalty_schedule", &self.penalty_schedule)
            .finish_non_exhaustive()
    }
}

fn discrete_set(
    problem: &ContinuumProblem,
    constraint: FemConstraint,
    mesh: &Arc<Mesh>,
) -> Result<ConstraintSet> {
    match constraint {
        FemConstraint::K2Nodal => {
            let phi = problem
                .obstacle
                .as_ref()
                .ok_or_else(|| invalid("obstacle", "required for K2"))?;
            ConstraintSet::nodal(mesh, interpolate_nodal(|p| phi(p), mesh)?)
        }
        FemConstraint::K1Midpoint => {
            let phi = problem
                .obstacle
                .as_ref()
                .ok_or_else(|| invalid("obstacle", "required for K1"))?;
            ConstraintSet::midpoint(mesh, mesh.midpoints().iter().map(|&p| phi(p)).collect())
        }
        FemConstraint::KiGradient => {
            let alpha = problem
                .alpha
                .as_ref()
                .ok_or_else(|| invalid("alpha", "required for Ki"))?;
            ConstraintSet::gradient(
                mesh,
                mesh.midpoints().iter().map(|&p| alpha(p)).collect(),
                problem.p,
            )
        }
    }
}

fn solve_level(
    problem: &ContinuumProblem,
    constraint: FemConstraint,
    mesh: &Arc<Mesh>,
) -> Result<(VISolution, ConstraintSet, DiscreteOperator)> {
    let op = assemble_operator(mesh, &problem.coefficients)?;
    let f = assemble_load(mesh, |p| (problem.load)(p))?;
    let k = discrete_set(problem, constraint, mesh)?;
    let s = match constraint {
        FemConstraint::K2Nodal => solve_obstacle_vi(&op, &f, &k, &SolverOptions::default())?,
        FemConstraint::K1Midpoint => {
            solve_midpoint_vi(&op, &f, &k, &problem.penalty_schedule, DEFAULT_TOL)?
        }
        FemConstraint::KiGradient => {
            solve_gradient_vi(&op, &f, &k, &problem.penalty_schedule, DEFAULT_TOL)?
        }
    };
    Ok((s, k, op))
}

/// Solves the same continuum VI on every level of a nested hierarchy with the
/// level's discrete constraint set. The finest level is the reference; the
/// report covers the other levels.
pub fn fem_constraint_study(
    problem: &ContinuumProblem,
    constraint: FemConstraint,
    hierarchy: &[Arc<Mesh>],
) -> Result<MoscoReport> {
    if hierarchy.len() < 2 {
        return Err(invalid(
            "hierarchy",
            "needs at least two levels (the last is the reference)",
        ));
    }
    for (j, pair) in hierarchy.windows(2).enumerate() {
        if !pair[1].is_refinement_of(&pair[0]) {
            return Err(invalid(
                "hierarchy",
                format!("level {} does not refine level {}", j + 2, j + 1),
            ));
        }
    }
    let finest = hierarchy.last().expect("nonempty");
    if constraint == FemConstraint::KiGradient {
        let alpha = problem
            .alpha
            .as_ref()
            .ok_or_else(|| invalid("alpha", "required for Ki"))?;
        let low = finest
            .nodes()
            .iter()
            .chain(finest.midpoints())
            .map(|&p| alpha(p))
            .fold(f64::INFINITY, f64::min);
        if !(low > 0.0) {
            return Err(Error::Hypothesis {
                hypothesis: "inf alpha > 0",
                detail: format!("sampled minimum of alpha is {low}"),
            });
        }
    }
    let (reference, _, ref_op) = solve_level(problem, constraint, finest)?;
    let levels = &hierarchy[..hierarchy.len() - 1];
    let mut records: Vec<MoscoRecord> = levels
        .par_iter()
        .enumerate()
        .map(|(j, mesh)| {
            let run = || -> Result<MoscoRecord> {
                let (s, k, _) = solve_level(problem, constraint, mesh)?;
                let up = prolongate(mesh, s.y.values(), finest)?;
                let diff = up.sub(&reference.y)?;
                let violation = k.violation(&s.y)?;
                Ok(MoscoRecord {
                    n: j + 1,
                    h: mesh.h(),
                    delta: None,
                    phi_shift: None,
                    err_sup: Some(diff.sup_norm()),
                    err_l2: Some(l2_norm(finest, diff.values())),
                    err_energy: Some(energy_norm(&ref_op, diff.values())),
                    violation: Some(violation),
                    feasible: violation <= FEAS_TOL,
                    recovery_distance: None,
                    iterations: s.iterations,
                    residual: Some(s.residual),
                    error: None,
                })
            };
            run().unwrap_or_else(|e| MoscoRecord::failed(j + 1, mesh.h(), None, &e))
        })
        .collect();
    records.sort_by_key(|r| r.n);
    let (xs, ys): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter_map(|r| Some((r.h, r.err_sup?)))
        .unzip();
    let slope = loglog_slope(&xs, &ys);
    let converged = {
        let errs: Vec<f64> = records.iter().filter_map(|r| r.err_sup).collect();
        errs.len() == records.len() && errs.windows(2).all(|w| w[1] < w[0])
    };
    Ok(MoscoReport {
        study: constraint.name(),
        limit: LimitRecord {
            y: reference.y,
            iterations: reference.iterations,
            residual: reference.residual,
        },
        records,
        converged,
        slope,
        limit_violation: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contact(n: usize) -> (Arc<Mesh>, DiscreteOperator, LoadFunctional, ConstraintSet) {
        let m = Arc::new(build_interval_mesh(n, 0.0, 1.0).unwrap());
        let op = assemble_operator(&m, &Coefficients::laplacian()).unwrap();
        let f = assemble_load(&m, |_| 8.0).unwrap();
        let k = ConstraintSet::nodal(&m, NodalVector::constant(&m, 0.1)).unwrap();
        (m, op, f, k)
    }

    #[test]
    fn constant_sequence_has_zero_errors() {
        let (_, op, f, k) = contact(16);
        let seq = SetSequence::shifted(k, vec![0.0; 4]).unwrap();
        let r = mosco_study(&op, &LoadSequence::fixed(f), &seq).unwrap();
        assert!(r.records.iter().all(|x| x.err_sup.unwrap() <= 1e-9));
        assert!(r.converged);
    }

    #[test]
    fn shifted_obstacle_converges() {
        let (_, op, f, k) = contact(16);
        let seq = SetSequence::shifted(k, default_deltas()).unwrap();
        let r = mosco_study(&op, &LoadSequence::fixed(f), &seq).unwrap();
        assert!(r.converged);
        assert!(r.slope.unwrap() >= 0.9);
        assert!(r.limit_feasible().unwrap());
        assert!(r.records.iter().all(|x| x.feasible));
    }

    #[test]
    fn bundled_recoveries_converge() {
        for c in [
            Construction::Scale,
            Construction::Truncate,
            Construction::SingularPerturbation,
        ] {
            let sc = RecoveryScenario::bundled(c, 32, default_deltas()).unwrap();
            let t = sc.run().unwrap();
            assert!(t.all_feasible(), "{c:?}: {t:?}");
            assert!(t.converged(), "{c:?}: {t:?}");
        }
    }

    #[test]
    fn rejects_non_nested_hierarchy() {
        let problem = ContinuumProblem {
            coefficients: Coefficients::laplacian(),
            load: Arc::new(|_| 8.0),
            obstacle: Some(Arc::new(|_| 0.1)),
            alpha: None,
            p: 2.0,
            penalty_schedule: default_penalty_schedule(),
        };
        let h = vec![
            Arc::new(build_interval_mesh(4, 0.0, 1.0).unwrap()),
            Arc::new(build_interval_mesh(6, 0.0, 1.0).unwrap()),
        ];
        assert!(fem_constraint_study(&problem, FemConstraint::K2Nodal, &h).is_err());
    }
}
