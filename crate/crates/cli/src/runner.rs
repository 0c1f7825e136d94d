//! Builds core objects from a validated config and runs the study.

use std::sync::Arc;

use mosco_core::assembly::{
    assemble_load, assemble_load_nodal, assemble_operator, energy_norm, l2_norm, solve_linear,
};
use mosco_core::constraints::ConstraintSet;
use mosco_core::mesh::{prolongate, Mesh, NodalVector};
use mosco_core::mosco::{
    fem_constraint_study, mosco_study, recovery_report, Construction, ContinuumProblem,
    FemConstraint, LoadSequence, RecoveryScenario, SetSequence,
};
use mosco_core::qvi::{
    check_increasing, default_f_max, evaluate_obstacle, maximal_solution, minimal_solution,
    stability_study, CompliantMap, QVISolution,
};
use mosco_core::regularization::{gamma_study, PerturbationScheme, Schedule};
use mosco_core::vi_solver::{
    solve_gradient_vi, solve_midpoint_vi, solve_obstacle_vi, Method, VISolution,
};
use mosco_core::{
    DiscreteOperator, Flag, LoadFunctional, ObstacleMap, ReportRow, SolverOptions, StudyReport,
};
use rayon::prelude::*;

use crate::config::{
    ConstraintType, ConstructionName, FemName, Kind, MapType, MethodName, SchemeName, StudyConfig,
};
use crate::CliError;

/// Tolerance on `|T(y) - y|_inf` asserted by the QVI studies.
pub const FIXED_POINT_TOL: f64 = 1e-7;
/// Complementarity residual asserted by the impulse study.
pub const COMPLEMENTARITY_TOL: f64 = 1e-6;
const FEAS_TOL: f64 = 1e-9;

fn cfg_err(key: &str) -> impl Fn(mosco_core::Error) -> CliError + '_ {
    move |e| CliError::config(key, e.to_string())
}

pub fn operator(cfg: &StudyConfig, mesh: &Arc<Mesh>) -> Result<DiscreteOperator, CliError> {
    assemble_operator(mesh, &cfg.operator.coefficients()).map_err(cfg_err("operator"))
}

pub fn load(cfg: &StudyConfig, mesh: &Arc<Mesh>) -> Result<LoadFunctional, CliError> {
    let spec = cfg.load_spec()?;
    match spec.field() {
        Some(f) => assemble_load(mesh, |p| f(p)).map_err(cfg_err("load")),
        None => {
            let v =
                NodalVector::new(mesh, spec.at_nodes("load", mesh)?).map_err(cfg_err("load"))?;
            assemble_load_nodal(mesh, &v).map_err(cfg_err("load"))
        }
    }
}

pub fn constraint(cfg: &StudyConfig, mesh: &Arc<Mesh>) -> Result<ConstraintSet, CliError> {
    let c = cfg.constraint_spec()?;
    let set = match c.kind {
        ConstraintType::Nodal => {
            let phi = c
                .obstacle
                .as_ref()
                .expect("validated")
                .at_nodes("constraint.obstacle", mesh)?;
            ConstraintSet::nodal(
                mesh,
                NodalVector::new(mesh, phi).map_err(cfg_err("constraint.obstacle"))?,
            )
        }
        ConstraintType::Midpoint => {
            let phi = c
                .obstacle
                .as_ref()
                .expect("validated")
                .at_midpoints("constraint.obstacle", mesh)?;
            ConstraintSet::midpoint(mesh, phi)
        }
        ConstraintType::Gradient => {
            let alpha = c
                .alpha
                .as_ref()
                .expect("validated")
                .at_midpoints("constraint.alpha", mesh)?;
            ConstraintSet::gradient(mesh, alpha, c.p)
        }
    }
    .map_err(cfg_err("constraint"))?;
    if c.nu > 0.0 {
        set.with_nu(c.nu).map_err(cfg_err("constraint.nu"))
    } else {
        Ok(set)
    }
}

pub fn obstacle_map(cfg: &StudyConfig, mesh: &Arc<Mesh>) -> Result<ObstacleMap, CliError> {
    let m = cfg.map_spec()?;
    let v = |x: Option<f64>| x.expect("validated");
    match m.kind {
        MapType::Superposition => {
            ObstacleMap::superposition(v(m.nu), v(m.c), v(m.p)).map_err(cfg_err("map"))
        }
        MapType::Impulse => {
            ObstacleMap::impulse(v(m.k0), v(m.c_lin), m.boundary_value.unwrap_or(0.0))
                .map_err(cfg_err("map"))
        }
        MapType::Compliant => {
            let coeffs = m.operator.clone().unwrap_or_default().coefficients();
            let b = assemble_operator(mesh, &coeffs).map_err(cfg_err("map.operator"))?;
            let gs = m.g.as_ref().expect("validated");
            let g = match gs.field() {
                Some(f) => assemble_load(mesh, |p| f(p)),
                None => NodalVector::new(mesh, gs.at_nodes("map.g", mesh)?)
                    .and_then(|v| assemble_load_nodal(mesh, &v)),
            }
            .map_err(cfg_err("map.g"))?;
            let map = CompliantMap::new(b, g, v(m.g1), v(m.g2), v(m.cap), v(m.l0), v(m.l1))
                .map_err(cfg_err("map"))?;
            Ok(ObstacleMap::compliant(map))
        }
    }
}

pub fn solver_options(cfg: &StudyConfig) -> SolverOptions {
    let s = &cfg.solver;
    let method = match s.method {
        MethodName::ActiveSet => Method::ActiveSet,
        MethodName::ProjectedRelaxation => Method::ProjectedRelaxation,
    };
    let mut o = SolverOptions::default()
        .with_method(method)
        .with_tol(s.tol)
        .with_omega(s.omega);
    if let Some(n) = s.max_iter {
        o = o.with_max_iter(n);
    }
    o
}

fn solver(e: mosco_core::Error) -> CliError {
    CliError::Solver(e.to_string())
}

/// Runs the configured study. Every level or schedule entry yields rows in
/// increasing `n`, independent of thread scheduling.
pub fn execute(cfg: &StudyConfig) -> Result<StudyReport, CliError> {
    match cfg.kind {
        Kind::Vi => run_vi(cfg),
        Kind::Qvi => run_qvi(cfg, false),
        Kind::Impulse => run_qvi(cfg, true),
        Kind::Mosco => run_mosco(cfg),
        Kind::Recovery => run_recovery(cfg),
        Kind::Gamma => run_gamma(cfg),
        Kind::Fem => run_fem(cfg),
        Kind::Stability => run_stability(cfg),
    }
}

fn solve_vi(
    cfg: &StudyConfig,
    op: &DiscreteOperator,
    f: &LoadFunctional,
    k: &ConstraintSet,
    opts: &SolverOptions,
) -> Result<VISolution, CliError> {
    let tol = cfg.solver.tol;
    match cfg.constraint_spec()?.kind {
        ConstraintType::Nodal => solve_obstacle_vi(op, f, k, opts),
        ConstraintType::Midpoint => solve_midpoint_vi(op, f, k, &cfg.penalty()?, tol),
        ConstraintType::Gradient => solve_gradient_vi(op, f, k, &cfg.penalty()?, tol),
    }
    .map_err(solver)
}

fn run_vi(cfg: &StudyConfig) -> Result<StudyReport, CliError> {
    let levels = cfg.levels()?;
    let reference_mesh = cfg.build(cfg.mesh.reference_cells.expect("validated"))?;
    let nodal = cfg.constraint_spec()?.kind == ConstraintType::Nodal;
    let opts = solver_options(cfg);
    let reference_op = operator(cfg, &reference_mesh)?;
    let reference = solve_vi(
        cfg,
        &reference_op,
        &load(cfg, &reference_mesh)?,
        &constraint(cfg, &reference_mesh)?,
        &opts,
    )?
    .y;
    let other = opts.with_method(match opts.method {
        Method::ActiveSet => Method::ProjectedRelaxation,
        Method::ProjectedRelaxation => Method::ActiveSet,
    });
    let setups = levels
        .iter()
        .map(|m| {
            Ok((
                m.clone(),
                operator(cfg, m)?,
                load(cfg, m)?,
                constraint(cfg, m)?,
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let solved: Vec<Result<(ReportRow, Option<f64>), CliError>> = setups
        .par_iter()
        .enumerate()
        .map(|(i, (mesh, op, f, k))| {
            let s = solve_vi(cfg, op, f, k, &opts)?;
            // Errors are measured on the reference mesh.
            let fine = prolongate(mesh, s.y.values(), &reference_mesh).map_err(solver)?;
            let diff: Vec<f64> = fine
                .values()
                .iter()
                .zip(reference.values())
                .map(|(a, b)| a - b)
                .collect();
            let agreement = if nodal {
                Some(
                    solve_obstacle_vi(op, f, k, &other)
                        .map_err(solver)?
                        .y
                        .sup_distance(&s.y)
                        .map_err(solver)?,
                )
            } else {
                None
            };
            let violation = k.violation(&s.y).map_err(solver)?;
            let row = ReportRow {
                n: i + 1,
                h: Some(mesh.h()),
                err_sup: Some(diff.iter().fold(0.0f64, |m, d| m.max(d.abs()))),
                err_l2: Some(l2_norm(&reference_mesh, &diff)),
                err_energy: Some(energy_norm(&reference_op, &diff)),
                violation: Some(violation),
                iterations: Some(s.iterations),
                residual: Some(s.residual),
                flag: Some(
                    if violation <= FEAS_TOL {
                        "feasible"
                    } else {
                        "infeasible"
                    }
                    .into(),
                ),
                ..ReportRow::default()
            };
            Ok((row, agreement))
        })
        .collect();
    let mut r = StudyReport::new("vi");
    let mut agreement = 0.0f64;
    for s in solved {
        let (row, a) = s?;
        agreement = agreement.max(a.unwrap_or(0.0));
        r.rows.push(row);
    }
    let errs: Vec<f64> = r.rows.iter().filter_map(|x| x.err_energy).collect();
    let feasible = r.rows.iter().all(|x| x.flag.as_deref() == Some("feasible"));
    r.flags.push(if nodal {
        Flag::asserted("feasible", feasible)
    } else {
        // Penalty paths leave an O(1/gamma) violation.
        Flag::informative("feasible", feasible)
    });
    if nodal {
        r.flags
            .push(Flag::asserted("methods_agree", agreement <= 1e-8));
    }
    let converged = errs.len() < 2
        || errs.last().unwrap() < errs.first().unwrap()
        || errs.iter().all(|e| *e <= 1e-12);
    r.flags.push(Flag::asserted("converged", converged));
    Ok(r)
}

/// `max_i (y_i - Phi(y)_i)`.
fn obstacle_excess(map: &ObstacleMap, mesh: &Mesh, y: &NodalVector) -> Result<f64, CliError> {
    let phi = evaluate_obstacle(map, mesh, y).map_err(solver)?;
    Ok(y.values()
        .iter()
        .zip(phi.values())
        .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b)))
}

fn monotone(s: &QVISolution, up: bool) -> bool {
    s.history.windows(2).all(|w| {
        let slack = 1e-10 * (1.0 + w[1].sup_norm());
        if up {
            w[0].le(&w[1], slack).unwrap_or(false)
        } else {
            w[1].le(&w[0], slack).unwrap_or(false)
        }
    })
}

fn run_qvi(cfg: &StudyConfig, impulse: bool) -> Result<StudyReport, CliError> {
    let levels = cfg.levels()?;
    let tol = cfg.solver.tol.max(1e-12);
    let setups = levels
        .iter()
        .map(|m| {
            Ok((
                m.clone(),
                operator(cfg, m)?,
                load(cfg, m)?,
                obstacle_map(cfg, m)?,
            ))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let trials = cfg.map_spec()?.trials;
    let solved: Vec<Result<_, CliError>> = setups
        .par_iter()
        .enumerate()
        .map(|(i, (mesh, op, f, map))| {
            let f_max = default_f_max(std::slice::from_ref(f)).map_err(solver)?;
            let lo = minimal_solution(op, f, map, tol).map_err(solver)?;
            let hi = maximal_solution(op, f, map, &f_max, tol).map_err(solver)?;
            let scale = solve_linear(op, &f_max)
                .map_err(solver)?
                .sup_norm()
                .max(1.0);
            let increasing =
                check_increasing(map, mesh, trials, scale, cfg.seed.wrapping_add(i as u64));
            let excess = obstacle_excess(map, mesh, &lo.y)?.max(obstacle_excess(map, mesh, &hi.y)?);
            let ordered = lo.y.le(&hi.y, 1e-8).map_err(solver)?;
            let row = ReportRow {
                n: i + 1,
                h: Some(mesh.h()),
                err_sup: Some(hi.y.sup_distance(&lo.y).map_err(solver)?),
                violation: Some(excess.max(0.0)),
                iterations: Some(lo.iterations + hi.iterations),
                residual: Some(if impulse {
                    lo.vi_residual.max(hi.vi_residual)
                } else {
                    lo.fixed_point_residual.max(hi.fixed_point_residual)
                }),
                flag: Some(if ordered { "ordered" } else { "unordered" }.into()),
                ..ReportRow::default()
            };
            let checks = [
                monotone(&lo, true) && monotone(&hi, false),
                ordered,
                lo.fixed_point_residual.max(hi.fixed_point_residual) <= FIXED_POINT_TOL,
                increasing.is_ok(),
                lo.vi_residual.max(hi.vi_residual) <= COMPLEMENTARITY_TOL,
                excess <= 1e-8,
            ];
            Ok((row, checks))
        })
        .collect();
    let mut r = StudyReport::new(if impulse { "impulse" } else { "qvi" });
    let mut all = [true; 6];
    for s in solved {
        let (row, checks) = s?;
        r.rows.push(row);
        for (a, c) in all.iter_mut().zip(checks) {
            *a &= c;
        }
    }
    r.flags.push(Flag::asserted("histories_monotone", all[0]));
    r.flags
        .push(Flag::asserted("minimal_below_maximal", all[1]));
    r.flags.push(Flag::asserted("fixed_point_residual", all[2]));
    r.flags.push(Flag::asserted("phi_increasing", all[3]));
    if impulse {
        r.flags.push(Flag::asserted("complementarity", all[4]));
        r.flags.push(Flag::asserted("below_obstacle", all[5]));
    }
    Ok(r)
}

fn single(cfg: &StudyConfig) -> Result<Arc<Mesh>, CliError> {
    Ok(cfg.levels()?.remove(0))
}

fn run_mosco(cfg: &StudyConfig) -> Result<StudyReport, CliError> {
    let mesh = single(cfg)?;
    let op = operator(cfg, &mesh)?;
    let f = load(cfg, &mesh)?;
    let k = constraint(cfg, &mesh)?;
    let deltas = cfg.schedule()?;
    let spec = cfg.mosco.clone().unwrap_or_default();
    let n_bounds = k.bound_values().map_or(0, <[f64]>::len);
    let direction = match &spec.direction {
        None => vec![1.0; n_bounds],
        Some(d) if cfg.constraint_spec()?.kind == ConstraintType::Nodal => {
            d.at_nodes("mosco.direction", &mesh)?
        }
        Some(d) => d.at_midpoints("mosco.direction", &mesh)?,
    };
    let seq = SetSequence::new(k, direction, deltas).map_err(cfg_err("mosco.direction"))?;
    let load_direction = match &spec.load_direction {
        None => None,
        Some(g) => Some(
            match g.field() {
                Some(field) => assemble_load(&mesh, |p| field(p)),
                None => NodalVector::new(&mesh, g.at_nodes("mosco.load_direction", &mesh)?)
                    .and_then(|v| assemble_load_nodal(&mesh, &v)),
            }
            .map_err(cfg_err("mosco.load_direction"))?,
        ),
    };
    let loads = LoadSequence {
        limit: f,
        direction: load_direction,
    };
    Ok(mosco_study(&op, &loads, &seq).map_err(solver)?.to_report())
}

fn run_recovery(cfg: &StudyConfig) -> Result<StudyReport, CliError> {
    let construction = match cfg.recovery.as_ref().expect("validated").construction {
        ConstructionName::Scale => Construction::Scale,
        ConstructionName::Truncate => Construction::Truncate,
        ConstructionName::SingularPerturbation => Construction::SingularPerturbation,
    };
    let cells = cfg.mesh.cells.first().copied().ok_or_else(|| {
        CliError::config("mesh.cells", "the recovery study needs a generated mesh")
    })?;
    let deltas = cfg.schedule()?;
    let scenario = RecoveryScenario::bundled(construction, cells, deltas.clone())
        .map_err(cfg_err("recovery"))?;
    let trace = scenario.run().map_err(solver)?;
    Ok(recovery_report(construction, &trace, &deltas))
}

fn schedule(values: Vec<f64>, key: &str) -> Result<Schedule, CliError> {
    Schedule::new(values).map_err(cfg_err(key))
}

fn run_gamma(cfg: &StudyConfig) -> Result<StudyReport, CliError> {
    let mesh = single(cfg)?;
    let op = operator(cfg, &mesh)?;
    let f = load(cfg, &mesh)?;
    let k = constraint(cfg, &mesh)?;
    let g = cfg.gamma.as_ref().expect("validated");
    let gamma = || schedule(cfg.schedule()?, "schedule");
    let gamma_prime = || match &g.gamma_prime {
        Some(s) => schedule(s.resolve("gamma.gamma_prime")?, "gamma.gamma_prime"),
        None => Err(CliError::config("gamma.gamma_prime", "required")),
    };
    let scheme = match g.scheme {
        SchemeName::Tikhonov => PerturbationScheme::Tikhonov {
            gamma_prime: gamma_prime()?,
            alpha: g.alpha,
        },
        SchemeName::MoreauYosida => PerturbationScheme::MoreauYosida { gamma: gamma()? },
        SchemeName::GalerkinMy => PerturbationScheme::GalerkinMY {
            hierarchy: g
                .hierarchy
                .iter()
                .map(|&c| cfg.build(c))
                .collect::<Result<_, _>>()?,
            gamma: gamma()?,
        },
        SchemeName::TikhonovMy => PerturbationScheme::TikhonovMY {
            gamma: gamma()?,
            gamma_prime: gamma_prime()?,
            alpha: g.alpha,
        },
    };
    scheme.validate(&mesh).map_err(cfg_err("gamma"))?;
    let study = gamma_study(&op, &f, &k, &scheme).map_err(solver)?;
    let mut r = StudyReport::new(format!("gamma_{}", study.scheme));
    for rec in &study.records {
        r.rows.push(ReportRow {
            n: rec.n,
            h: Some(rec.h),
            gamma: Some(rec.gamma),
            err_sup: rec.err_sup,
            err_energy: rec.err_energy,
            violation: rec.violation,
            iterations: Some(rec.iterations),
            residual: rec.residual,
            flag: Some(if rec.error.is_some() { "failed" } else { "ok" }.into()),
            ..ReportRow::default()
        });
        if let Some(e) = &rec.error {
            r.failures.push((rec.n, e.clone()));
        }
    }
    r.flags.push(Flag::asserted("converged", study.converged));
    r.flags
        .push(Flag::asserted("no_failures", r.failures.is_empty()));
    if g.scheme == SchemeName::MoreauYosida {
        let ratios = study.violation_ratios();
        r.flags.push(Flag::informative(
            "violation_halving",
            !ratios.is_empty() && ratios.iter().all(|q| (0.35..=0.65).contains(q)),
        ));
    }
    Ok(r)
}

fn run_fem(cfg: &StudyConfig) -> Result<StudyReport, CliError> {
    let mut hierarchy = cfg.levels()?;
    hierarchy.push(cfg.build(cfg.mesh.reference_cells.expect("validated"))?);
    let set = match cfg.fem.as_ref().expect("validated").set {
        FemName::K1Midpoint => FemConstraint::K1Midpoint,
        FemName::K2Nodal => FemConstraint::K2Nodal,
        FemName::KiGradient => FemConstraint::KiGradient,
    };
    let field = |spec: Option<&crate::config::FieldSpec>, key: &str| -> Result<_, CliError> {
        spec.map(|s| {
            s.field()
                .ok_or_else(|| CliError::config(key, "tables are not allowed across mesh levels"))
        })
        .transpose()
    };
    let c = cfg.constraint.as_ref();
    let problem = ContinuumProblem {
        coefficients: cfg.operator.coefficients(),
        load: field(Some(cfg.load_spec()?), "load")?.expect("present"),
        obstacle: field(c.and_then(|c| c.obstacle.as_ref()), "constraint.obstacle")?,
        alpha: field(c.and_then(|c| c.alpha.as_ref()), "constraint.alpha")?,
        p: c.map_or(2.0, |c| c.p),
        penalty_schedule: cfg.penalty()?,
    };
    let report = fem_constraint_study(&problem, set, &hierarchy).map_err(|e| match e {
        mosco_core::Error::InvalidArgument { .. } => CliError::Config(e.to_string()),
        e => solver(e),
    })?;
    Ok(report.to_report())
}

fn run_stability(cfg: &StudyConfig) -> Result<StudyReport, CliError> {
    let mesh = single(cfg)?;
    let op = operator(cfg, &mesh)?;
    let f = load(cfg, &mesh)?;
    let map = obstacle_map(cfg, &mesh)?;
    let unit = assemble_load(&mesh, |_| 1.0).map_err(solver)?;
    let st = cfg.stability.as_ref().expect("validated");
    let eps = cfg.schedule()?;
    let report = stability_study(&op, &map, &f, &unit, &eps, st.floor, st.tol).map_err(solver)?;
    Ok(report.to_report())
}

/// Resolved plan printed by `--dry-run`.
pub fn plan(cfg: &StudyConfig) -> Result<String, CliError> {
    let levels = cfg.levels()?;
    let mut s = format!("kind: {}\nseed: {}\nlevels:\n", cfg.kind.name(), cfg.seed);
    for (i, m) in levels.iter().enumerate() {
        s.push_str(&format!(
            "  {}: dim {} nodes {} elements {} h {:e}\n",
            i + 1,
            m.dim(),
            m.n_nodes(),
            m.n_elements(),
            m.h()
        ));
    }
    if let Some(r) = cfg.mesh.reference_cells {
        s.push_str(&format!("reference cells: {r}\n"));
    }
    if cfg.schedule.is_some() {
        let v = cfg.schedule()?;
        s.push_str(&format!(
            "schedule ({} entries): {:e} .. {:e}\n",
            v.len(),
            v[0],
            v[v.len() - 1]
        ));
    }
    // Building the objects surfaces data errors without solving anything.
    let m = &levels[0];
    if cfg.load.is_some() {
        load(cfg, m)?;
    }
    if cfg.constraint.is_some() && cfg.kind != Kind::Fem {
        constraint(cfg, m)?;
    }
    if cfg.map.is_some() {
        obstacle_map(cfg, m)?;
    }
    s.push_str(&format!("rows: {}\n", expected_rows(cfg)?));
    Ok(s)
}

/// Number of CSV rows the study produces.
pub fn expected_rows(cfg: &StudyConfig) -> Result<usize, CliError> {
    let levels = if cfg.mesh.file.is_some() {
        1
    } else {
        cfg.mesh.cells.len()
    };
    Ok(match cfg.kind {
        Kind::Vi | Kind::Qvi | Kind::Impulse | Kind::Fem => levels,
        Kind::Mosco | Kind::Recovery | Kind::Gamma => cfg.schedule()?.len(),
        Kind::Stability => 2 * cfg.schedule()?.len(),
    })
}
