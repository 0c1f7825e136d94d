//! TOML study configurations. Unknown keys are rejected and every value is
//! validated before any computation starts.

use std::path::Path;
use std::sync::Arc;

use mosco_core::mesh::{
    build_interval_mesh, build_triangle_mesh, parse_mesh, Mesh, Point, Rect, ScalarField,
};
use mosco_core::Coefficients;
use serde::Deserialize;

use crate::CliError;

pub const KINDS: [&str; 8] = [
    "vi",
    "qvi",
    "mosco",
    "recovery",
    "gamma",
    "fem",
    "stability",
    "impulse",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Vi,
    Qvi,
    Mosco,
    Recovery,
    Gamma,
    Fem,
    Stability,
    Impulse,
}

impl Kind {
    pub fn name(self) -> &'static str {
        KINDS[self as usize]
    }

    pub fn parse(s: &str) -> Option<Kind> {
        use Kind::*;
        [Vi, Qvi, Mosco, Recovery, Gamma, Fem, Stability, Impulse]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub kind: Kind,
    /// Output stem; defaults to the config file stem.
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub mesh: MeshSpec,
    #[serde(default)]
    pub operator: OperatorSpec,
    pub load: Option<FieldSpec>,
    pub constraint: Option<ConstraintSpec>,
    pub map: Option<MapSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    pub schedule: Option<ScheduleSpec>,
    pub mosco: Option<MoscoSpec>,
    pub recovery: Option<RecoverySpec>,
    pub gamma: Option<GammaSpec>,
    pub fem: Option<FemSpec>,
    pub stability: Option<StabilitySpec>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    #[serde(default = "one")]
    pub dim: usize,
    /// Cells per side, one entry per level.
    #[serde(default)]
    pub cells: Vec<usize>,
    /// `[a, b]` in 1D, `[x0, x1, y0, y1]` in 2D.
    pub domain: Option<Vec<f64>>,
    /// Reference level for studies that compare against a finer solution.
    pub reference_cells: Option<usize>,
    /// Plain-text mesh file, used instead of `cells` (single level).
    pub file: Option<String>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    #[serde(default = "unit")]
    pub diffusion: f64,
    #[serde(default)]
    pub advection: [f64; 2],
    #[serde(default)]
    pub reaction: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for OperatorSpec {
    fn default() -> Self {
        Self {
            diffusion: 1.0,
            advection: [0.0; 2],
            reaction: 0.0,
        }
    }
}

impl OperatorSpec {
    pub fn coefficients(&self) -> Coefficients {
        Coefficients::laplacian()
            .with_diffusion(self.diffusion)
            .with_advection(self.advection)
            .with_reaction(self.reaction)
    }
}

/// A scalar field: exactly one of a constant, a polynomial given as terms
/// `[coef, px, py]` meaning `coef x^px y^py`, or a table of values.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub constant: Option<f64>,
    pub polynomial: Option<Vec<[f64; 3]>>,
    pub table: Option<Vec<f64>>,
}

impl FieldSpec {
    pub fn constant(c: f64) -> Self {
        Self {
            constant: Some(c),
            ..Self::default()
        }
    }

    fn validate(&self, key: &str) -> Result<(), CliError> {
        let set = [
            self.constant.is_some(),
            self.polynomial.is_some(),
            self.table.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if set != 1 {
            return Err(CliError::config(
                key,
                "give exactly one of `constant`, `polynomial`, `table`",
            ));
        }
        let finite = |v: f64| v.is_finite();
        let ok = self.constant.map_or(true, finite)
            && self
                .table
                .as_ref()
                .map_or(true, |t| t.iter().all(|v| finite(*v)))
            && self.polynomial.as_ref().map_or(true, |p| {
                p.iter().all(|[c, a, b]| {
                    finite(*c) && *a >= 0.0 && *b >= 0.0 && a.fract() == 0.0 && b.fract() == 0.0
                })
            });
        if !ok {
            return Err(CliError::config(
                key,
                "values must be finite; exponents nonnegative integers",
            ));
        }
        Ok(())
    }

    /// Pointwise callable; tables have none.
    pub fn field(&self) -> Option<ScalarField> {
        if let Some(c) = self.constant {
            return Some(Arc::new(move |_| c));
        }
        let terms = self.polynomial.clone()?;
        Some(Arc::new(move |p: Point| {
            terms
                .iter()
                .map(|[c, a, b]| c * p[0].powi(*a as i32) * p[1].powi(*b as i32))
                .sum()
        }))
    }

    fn sample(&self, key: &str, points: &[Point]) -> Result<Vec<f64>, CliError> {
        match (&self.table, self.field()) {
            (Some(t), _) if t.len() == points.len() => Ok(t.clone()),
            (Some(t), _) => Err(CliError::config(
                key,
                format!(
                    "table has {} values, the mesh needs {}",
                    t.len(),
                    points.len()
                ),
            )),
            (None, Some(f)) => Ok(points.iter().map(|p| f(*p)).collect()),
            (None, None) => unreachable!("validated"),
        }
    }

    pub fn at_nodes(&self, key: &str, mesh: &Mesh) -> Result<Vec<f64>, CliError> {
        self.sample(key, mesh.nodes())
    }

    pub fn at_midpoints(&self, key: &str, mesh: &Mesh) -> Result<Vec<f64>, CliError> {
        self.sample(key, mesh.midpoints())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintType {
    Nodal,
    Midpoint,
    Gradient,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(rename = "type")]
    pub kind: ConstraintType,
    pub obstacle: Option<FieldSpec>,
    pub alpha: Option<FieldSpec>,
    #[serde(default = "two")]
    pub p: f64,
    #[serde(default)]
    pub nu: f64,
}

fn two() -> f64 {
    2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapType {
    Superposition,
    Compliant,
    Impulse,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    #[serde(rename = "type")]
    pub kind: MapType,
    // superposition: nu + c (v^+)^(1/p)
    pub nu: Option<f64>,
    pub c: Option<f64>,
    pub p: Option<f64>,
    // compliant
    pub operator: Option<OperatorSpec>,
    pub g: Option<FieldSpec>,
    pub g1: Option<f64>,
    pub g2: Option<f64>,
    pub cap: Option<f64>,
    pub l0: Option<f64>,
    pub l1: Option<f64>,
    // impulse
    pub k0: Option<f64>,
    pub c_lin: Option<f64>,
    pub boundary_value: Option<f64>,
    /// Random ordered pairs for the monotonicity check of `Phi`.
    #[serde(default = "trials")]
    pub trials: usize,
}

fn trials() -> usize {
    20
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    #[default]
    ActiveSet,
    ProjectedRelaxation,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default)]
    pub method: MethodName,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub max_iter: Option<usize>,
    #[serde(default = "default_omega")]
    pub omega: f64,
    /// Penalty path for midpoint and gradient sets.
    pub penalty: Option<ScheduleSpec>,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_omega() -> f64 {
    1.5
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            method: MethodName::default(),
            tol: default_tol(),
            max_iter: None,
            omega: default_omega(),
            penalty: None,
        }
    }
}

/// Explicit values, or `first * ratio^k` for `k = 0..len`, or `1/n` for
/// `n = 1..=len` (`harmonic`).
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub values: Option<Vec<f64>>,
    pub first: Option<f64>,
    pub ratio: Option<f64>,
    pub len: Option<usize>,
    #[serde(default)]
    pub harmonic: bool,
}

impl ScheduleSpec {
    pub fn resolve(&self, key: &str) -> Result<Vec<f64>, CliError> {
        let v = match (
            &self.values,
            self.harmonic,
            self.first,
            self.ratio,
            self.len,
        ) {
            (Some(v), false, None, None, None) => v.clone(),
            (None, true, None, None, Some(n)) => (1..=n).map(|k| 1.0 / k as f64).collect(),
            (None, false, Some(a), Some(r), Some(n)) => {
                (0..n).map(|k| a * r.powi(k as i32)).collect()
            }
            _ => {
                return Err(CliError::config(
                    key,
                    "give `values`, or `first`/`ratio`/`len`, or `harmonic = true` with `len`",
                ))
            }
        };
        if v.is_empty() {
            return Err(CliError::config(key, "schedule is empty"));
        }
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(CliError::config(key, "entries must be positive and finite"));
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoscoSpec {
    /// Direction `g` of `phi_n = phi + delta_n g`, per node (nodal) or per
    /// element (gradient). Defaults to one.
    pub direction: Option<FieldSpec>,
    /// Direction of the load perturbation `f_n = f + delta_n g`.
    pub load_direction: Option<FieldSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionName {
    Scale,
    Truncate,
    SingularPerturbation,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoverySpec {
    pub construction: ConstructionName,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Tikhonov,
    MoreauYosida,
    GalerkinMy,
    TikhonovMy,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSpec {
    pub scheme: SchemeName,
    pub gamma_prime: Option<ScheduleSpec>,
    #[serde(default = "two")]
    pub alpha: f64,
    /// Coarse levels for `galerkin_my`, in cells, one per schedule entry.
    #[serde(default)]
    pub hierarchy: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FemName {
    K1Midpoint,
    K2Nodal,
    KiGradient,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FemSpec {
    pub set: FemName,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySpec {
    /// Floor `c` in `f_n >= c u`.
    pub floor: f64,
    #[serde(default = "qvi_tol")]
    pub tol: f64,
}

fn qvi_tol() -> f64 {
    1e-9
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn schedule(&self) -> Result<Vec<f64>, CliError> {
        self.schedule
            .as_ref()
            .ok_or_else(|| CliError::config("schedule", "required"))?
            .resolve("schedule")
    }

    pub fn penalty(&self) -> Result<Vec<f64>, CliError> {
        match &self.solver.penalty {
            Some(s) => s.resolve("solver.penalty"),
            None => Ok(mosco_core::vi_solver::default_penalty_schedule()),
        }
    }

    fn require<'a, T>(&self, v: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
        v.as_ref().ok_or_else(|| {
            CliError::config(key, format!("required for kind `{}`", self.kind.name()))
        })
    }

    pub fn load_spec(&self) -> Result<&FieldSpec, CliError> {
        self.require(&self.load, "load")
    }

    pub fn constraint_spec(&self) -> Result<&ConstraintSpec, CliError> {
        self.require(&self.constraint, "constraint")
    }

    pub fn map_spec(&self) -> Result<&MapSpec, CliError> {
        self.require(&self.map, "map")
    }

    fn validate(&self) -> Result<(), CliError> {
        let m = &self.mesh;
        if m.dim != 1 && m.dim != 2 {
            return Err(CliError::config(
                "mesh.dim",
                format!("must be 1 or 2, got {}", m.dim),
            ));
        }
        match (&m.file, m.cells.is_empty()) {
            (Some(_), false) => {
                return Err(CliError::config("mesh", "give either `cells` or `file`"))
            }
            (None, true) => {
                return Err(CliError::config(
                    "mesh.cells",
                    "must list at least one level",
                ))
            }
            _ => {}
        }
        if m.cells.iter().any(|c| *c == 0) {
            return Err(CliError::config("mesh.cells", "entries must be positive"));
        }
        if let Some(d) = &m.domain {
            let ok = match (m.dim, d.as_slice()) {
                (1, [a, b]) => a < b,
                (2, [x0, x1, y0, y1]) => x0 < x1 && y0 < y1,
                _ => false,
            };
            if !ok || d.iter().any(|v| !v.is_finite()) {
                return Err(CliError::config(
                    "mesh.domain",
                    "expected increasing [a, b] (1D) or [x0, x1, y0, y1] (2D)",
                ));
            }
        }
        if let Some(r) = m.reference_cells {
            if m.cells.iter().any(|c| r % c != 0 || r <= *c) {
                return Err(CliError::config(
                    "mesh.reference_cells",
                    "must be a proper multiple of every level",
                ));
            }
        }
        let op = &self.operator;
        if !(op.diffusion > 0.0 && op.diffusion.is_finite()) {
            return Err(CliError::config("operator.diffusion", "must be positive"));
        }
        if !(op.reaction >= 0.0 && op.reaction.is_finite())
            || op.advection.iter().any(|v| !v.is_finite())
        {
            return Err(CliError::config(
                "operator",
                "reaction must be nonnegative, advection finite",
            ));
        }
        let s = &self.solver;
        if !(s.tol > 0.0 && s.tol.is_finite()) {
            return Err(CliError::config(
                "solver.tol",
                format!("must be positive, got {}", s.tol),
            ));
        }
        if !(s.omega > 0.0 && s.omega < 2.0) {
            return Err(CliError::config(
                "solver.omega",
                format!("must lie in (0, 2), got {}", s.omega),
            ));
        }
        if s.max_iter == Some(0) {
            return Err(CliError::config("solver.max_iter", "must be positive"));
        }
        if let Some(p) = &s.penalty {
            p.resolve("solver.penalty")?;
        }
        if let Some(f) = &self.load {
            f.validate("load")?;
        }
        if let Some(c) = &self.constraint {
            if let Some(o) = &c.obstacle {
                o.validate("constraint.obstacle")?;
            }
            if let Some(a) = &c.alpha {
                a.validate("constraint.alpha")?;
            }
            if !(c.p >= 1.0) {
                return Err(CliError::config("constraint.p", "must be at least 1"));
            }
            if !(c.nu >= 0.0) {
                return Err(CliError::config("constraint.nu", "must be nonnegative"));
            }
            let needs = match c.kind {
                ConstraintType::Nodal | ConstraintType::Midpoint => {
                    ("constraint.obstacle", c.obstacle.is_some())
                }
                ConstraintType::Gradient => ("constraint.alpha", c.alpha.is_some()),
            };
            if !needs.1 {
                return Err(CliError::config(
                    needs.0,
                    "required for this constraint type",
                ));
            }
        }
        if let Some(map) = &self.map {
            map.validate()?;
        }
        if let Some(s) = &self.schedule {
            s.resolve("schedule")?;
        }
        if let Some(ms) = &self.mosco {
            if let Some(d) = &ms.direction {
                d.validate("mosco.direction")?;
            }
            if let Some(d) = &ms.load_direction {
                d.validate("mosco.load_direction")?;
            }
        }
        if let Some(st) = &self.stability {
            if !(st.floor > 0.0) {
                return Err(CliError::config("stability.floor", "must be positive"));
            }
            if !(st.tol > 0.0) {
                return Err(CliError::config("stability.tol", "must be positive"));
            }
        }
        for key in required_keys(self.kind) {
            let present = match *key {
                "load" => self.load.is_some(),
                "constraint" => self.constraint.is_some(),
                "map" => self.map.is_some(),
                "schedule" => self.schedule.is_some(),
                "recovery" => self.recovery.is_some(),
                "gamma" => self.gamma.is_some(),
                "fem" => self.fem.is_some(),
                "stability" => self.stability.is_some(),
                "mesh.reference_cells" => self.mesh.reference_cells.is_some(),
                _ => true,
            };
            if !present {
                return Err(CliError::config(
                    key,
                    format!("required for kind `{}`", self.kind.name()),
                ));
            }
        }
        match self.kind {
            Kind::Impulse if self.mesh.dim != 1 => {
                return Err(CliError::config(
                    "mesh.dim",
                    "the impulse study is one-dimensional",
                ))
            }
            Kind::Impulse
                if self
                    .map
                    .as_ref()
                    .is_some_and(|m| m.kind != MapType::Impulse) =>
            {
                return Err(CliError::config("map.type", "must be `impulse`"))
            }
            Kind::Mosco | Kind::Recovery | Kind::Gamma | Kind::Stability
                if self.mesh.cells.len() > 1 =>
            {
                return Err(CliError::config(
                    "mesh.cells",
                    "this study runs on a single level",
                ))
            }
            Kind::Fem if self.mesh.file.is_some() => {
                return Err(CliError::config(
                    "mesh.file",
                    "the fem study needs generated nested levels",
                ))
            }
            Kind::Gamma => {
                let g = self.gamma.as_ref().expect("checked");
                let needs_gamma_prime =
                    matches!(g.scheme, SchemeName::Tikhonov | SchemeName::TikhonovMy);
                if needs_gamma_prime && g.gamma_prime.is_none() {
                    return Err(CliError::config(
                        "gamma.gamma_prime",
                        "required for this scheme",
                    ));
                }
                if g.scheme == SchemeName::GalerkinMy && g.hierarchy.is_empty() {
                    return Err(CliError::config(
                        "gamma.hierarchy",
                        "required for galerkin_my",
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Mesh levels in configuration order.
    pub fn levels(&self) -> Result<Vec<Arc<Mesh>>, CliError> {
        if let Some(f) = &self.mesh.file {
            let text = std::fs::read_to_string(f)
                .map_err(|e| CliError::config("mesh.file", e.to_string()))?;
            return Ok(vec![Arc::new(
                parse_mesh(&text).map_err(|e| CliError::config("mesh.file", e.to_string()))?,
            )]);
        }
        self.mesh.cells.iter().map(|&c| self.build(c)).collect()
    }

    pub fn build(&self, cells: usize) -> Result<Arc<Mesh>, CliError> {
        let m = &self.mesh;
        let mesh = match m.dim {
            1 => {
                let d = m.domain.clone().unwrap_or(vec![0.0, 1.0]);
                build_interval_mesh(cells, d[0], d[1])
            }
            _ => {
                let r = m
                    .domain
                    .as_ref()
                    .map_or(Rect::unit(), |d| Rect::new(d[0], d[1], d[2], d[3]));
                build_triangle_mesh(cells, cells, r)
            }
        };
        mesh.map(Arc::new)
            .map_err(|e| CliError::config("mesh", e.to_string()))
    }
}

impl MapSpec {
    fn validate(&self) -> Result<(), CliError> {
        let need = |v: Option<f64>, key: &str| -> Result<f64, CliError> {
            v.ok_or_else(|| CliError::config(key, "required for this map type"))
        };
        match self.kind {
            MapType::Superposition => {
                need(self.nu, "map.nu")?;
                need(self.c, "map.c")?;
                need(self.p, "map.p")?;
            }
            MapType::Compliant => {
                for (v, k) in [
                    (self.g1, "map.g1"),
                    (self.g2, "map.g2"),
                    (self.cap, "map.cap"),
                    (self.l0, "map.l0"),
                    (self.l1, "map.l1"),
                ] {
                    need(v, k)?;
                }
                self.g
                    .as_ref()
                    .ok_or_else(|| CliError::config("map.g", "required"))?
                    .validate("map.g")?;
            }
            MapType::Impulse => {
                need(self.k0, "map.k0")?;
                need(self.c_lin, "map.c_lin")?;
            }
        }
        Ok(())
    }
}

/// Top-level keys each study kind requires beyond `kind` and `mesh`.
pub fn required_keys(kind: Kind) -> &'static [&'static str] {
    match kind {
        Kind::Vi => &["load", "constraint", "mesh.reference_cells"],
        Kind::Qvi => &["load", "map"],
        Kind::Impulse => &["load", "map"],
        Kind::Mosco => &["load", "constraint", "schedule"],
        Kind::Recovery => &["recovery", "schedule"],
        Kind::Gamma => &["load", "constraint", "gamma", "schedule"],
        Kind::Fem => &["load", "fem", "mesh.reference_cells"],
        Kind::Stability => &["load", "map", "schedule", "stability"],
    }
}

pub fn summary(kind: Kind) -> &'static str {
    match kind {
        Kind::Vi => {
            "obstacle VI on each mesh level, compared with a finer reference and the other method"
        }
        Kind::Qvi => "minimal and maximal QVI solutions by ordered fixed-point iteration",
        Kind::Mosco => "solutions under a perturbed constraint set K_n and load f_n",
        Kind::Recovery => "recovery sequences w_n in K_n for a bundled scenario",
        Kind::Gamma => "regularized minimizers along a parameter schedule",
        Kind::Fem => "finite element constraint sets on a nested hierarchy",
        Kind::Stability => "extremal QVI solutions under load perturbations f* + eps_n",
        Kind::Impulse => "1D impulse-control QVI and its complementarity system",
    }
}

pub fn optional_keys(kind: Kind) -> &'static [&'static str] {
    match kind {
        Kind::Vi => &["operator", "solver", "mesh.domain", "name"],
        Kind::Qvi | Kind::Impulse => &[
            "operator",
            "solver.tol",
            "mesh.domain",
            "seed",
            "map.trials",
            "name",
        ],
        Kind::Mosco => &[
            "operator",
            "mosco.direction",
            "mosco.load_direction",
            "name",
        ],
        Kind::Recovery => &["name"],
        Kind::Gamma => &[
            "operator",
            "gamma.gamma_prime",
            "gamma.alpha",
            "gamma.hierarchy",
            "name",
        ],
        Kind::Fem => &[
            "operator",
            "constraint",
            "solver.penalty",
            "mesh.domain",
            "name",
        ],
        Kind::Stability => &["operator", "stability.tol", "seed", "name"],
    }
}

/// Schema text for `describe`.
pub fn describe(kind: &str) -> Result<String, CliError> {
    let k = Kind::parse(kind).ok_or_else(|| {
        CliError::Config(format!(
            "unknown study kind `{kind}`; valid kinds: {}",
            KINDS.join(", ")
        ))
    })?;
    let mut s = format!(
        "{}: {}\n\nrequired keys:\n  kind\n  mesh.cells (or mesh.file)\n",
        k.name(),
        summary(k)
    );
    for key in required_keys(k) {
        s.push_str(&format!("  {key}\n"));
    }
    s.push_str("\noptional keys:\n");
    for key in optional_keys(k) {
        s.push_str(&format!("  {key}\n"));
    }
    Ok(s)
}
