//! Discrete constraint sets, lattice operations on nodal vectors and the
//! recovery-sequence constructions.

use std::sync::Arc;

use crate::assembly::{energy_norm, DiscreteOperator};
use crate::error::{invalid, Error, Result};
use crate::mesh::{Mesh, NodalVector};
use crate::sparse::{inf_norm, solve_checked};

/// Default absolute feasibility tolerance.
pub const FEAS_TOL: f64 = 1e-9;

/// Upper obstacle at the nodes. `Unbounded` is an exact "no constraint"
/// marker rather than a large float.
#[derive(Clone, Debug, PartialEq)]
pub enum Obstacle {
    Unbounded,
    Values(NodalVector),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintKind {
    /// `v(x_i) <= phi_i` at every node.
    NodalObstacle(Obstacle),
    /// `v(x_T) <= phi_T` at every element barycenter.
    MidpointObstacle(Vec<f64>),
    /// `|grad v|_p <= alpha_T` on every element, `p` in `[1, inf]`.
    GradientBound { alpha: Vec<f64>, p: f64 },
}

#[derive(Clone, Debug)]
pub struct ConstraintSet {
    kind: ConstraintKind,
    nu: f64,
    mesh: Arc<Mesh>,
}

impl ConstraintSet {
    pub fn nodal(mesh: &Arc<Mesh>, phi: NodalVector) -> Result<Self> {
        phi.ensure_on(mesh)?;
        if let Some((i, v)) = phi.values().iter().enumerate().find(|(_, v)| v.is_nan()) {
            return Err(Error::NonFinite {
                location: format!("obstacle node {i}"),
                value: *v,
            });
        }
        Ok(Self {
            kind: ConstraintKind::NodalObstacle(Obstacle::Values(phi)),
            nu: 0.0,
            mesh: mesh.clone(),
        })
    }

    pub fn unbounded(mesh: &Arc<Mesh>) -> Self {
        Self {
            kind: ConstraintKind::NodalObstacle(Obstacle::Unbounded),
            nu: 0.0,
            mesh: mesh.clone(),
        }
    }

    pub fn midpoint(mesh: &Arc<Mesh>, phi: Vec<f64>) -> Result<Self> {
        if phi.len() != mesh.n_elements() {
            return Err(Error::DimensionMismatch {
                context: "midpoint obstacle",
                expected: mesh.n_elements(),
                found: phi.len(),
            });
        }
        if phi.iter().any(|v| v.is_nan()) {
            return Err(invalid("phi", "midpoint obstacle contains NaN"));
        }
        Ok(Self {
            kind: ConstraintKind::MidpointObstacle(phi),
            nu: 0.0,
            mesh: mesh.clone(),
        })
    }

    pub fn gradient(mesh: &Arc<Mesh>, alpha: Vec<f64>, p: f64) -> Result<Self> {
        if alpha.len() != mesh.n_elements() {
            return Err(Error::DimensionMismatch {
                context: "gradient bound",
                expected: mesh.n_elements(),
                found: alpha.len(),
            });
        }
        if !(p >= 1.0) {
            return Err(invalid(
                "p",
                format!("norm index must lie in [1, inf], got {p}"),
            ));
        }
        if let Some((e, a)) = alpha.iter().enumerate().find(|(_, a)| !(**a >= 0.0)) {
            return Err(invalid(
                "alpha",
                format!("must be nonnegative, got {a} on element {e}"),
            ));
        }
        Ok(Self {
            kind: ConstraintKind::GradientBound { alpha, p },
            nu: 0.0,
            mesh: mesh.clone(),
        })
    }

    /// Declares the lower bound `nu`; bound values must be at least `nu`.
    pub fn with_nu(mut self, nu: f64) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(invalid(
                "nu",
                format!("must be nonnegative and finite, got {nu}"),
            ));
        }
        let low = self
            .bound_values()
            .map(|b| b.iter().copied().fold(f64::INFINITY, f64::min));
        if let Some(low) = low {
            if low < nu {
                return Err(Error::Hypothesis {
                    hypothesis: "bound >= nu",
                    detail: format!("smallest bound value {low} is below nu = {nu}"),
                });
            }
        }
        self.nu = nu;
        Ok(self)
    }

    /// Checks that `0` is feasible, i.e. every bound value is nonnegative.
    pub fn require_nonnegative(self) -> Result<Self> {
        if let Some(b) = self.bound_values() {
            if let Some((i, v)) = b.iter().enumerate().find(|(_, v)| **v < 0.0) {
                return Err(Error::Hypothesis {
                    hypothesis: "0 in K",
                    detail: format!("bound value {v} < 0 at index {i}"),
                });
            }
        }
        Ok(self)
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// Obstacle or gradient bound values, `None` for the unbounded set.
    pub fn bound_values(&self) -> Option<&[f64]> {
        match &self.kind {
            ConstraintKind::NodalObstacle(Obstacle::Unbounded) => None,
            ConstraintKind::NodalObstacle(Obstacle::Values(phi)) => Some(phi.values()),
            ConstraintKind::MidpointObstacle(phi) => Some(phi),
            ConstraintKind::GradientBound { alpha, .. } => Some(alpha),
        }
    }

    /// Nodal upper bounds with `+inf` for the unbounded sentinel; `None` for
    /// non-nodal sets.
    pub fn nodal_bounds(&self) -> Option<Vec<f64>> {
        match &self.kind {
            ConstraintKind::NodalObstacle(Obstacle::Unbounded) => {
                Some(vec![f64::INFINITY; self.mesh.n_nodes()])
            }
            ConstraintKind::NodalObstacle(Obstacle::Values(phi)) => Some(phi.values().to_vec()),
            _ => None,
        }
    }

    /// Largest positive constraint violation of `v`.
    pub fn violation(&self, v: &NodalVector) -> Result<f64> {
        v.ensure_on(&self.mesh)?;
        let x = v.values();
        let worst = match &self.kind {
            ConstraintKind::NodalObstacle(Obstacle::Unbounded) => 0.0,
            ConstraintKind::NodalObstacle(Obstacle::Values(phi)) => x
                .iter()
                .zip(phi.values())
                .fold(0.0f64, |m, (a, b)| m.max(a - b)),
            ConstraintKind::MidpointObstacle(phi) => (0..self.mesh.n_elements())
                .fold(0.0f64, |m, e| m.max(self.mesh.element_mean(x, e) - phi[e])),
            ConstraintKind::GradientBound { alpha, p } => (0..self.mesh.n_elements())
                .fold(0.0f64, |m, e| {
                    m.max(gradient_norm(&self.mesh, x, e, *p) - alpha[e])
                }),
        };
        Ok(worst)
    }

    /// Per-element gradient norms `|grad v|_p` (gradient bounds only).
    pub fn gradient_norms(&self, v: &NodalVector) -> Result<Vec<f64>> {
        v.ensure_on(&self.mesh)?;
        match &self.kind {
            ConstraintKind::GradientBound { p, .. } => Ok((0..self.mesh.n_elements())
                .map(|e| gradient_norm(&self.mesh, v.values(), e, *p))
                .collect()),
            _ => Err(Error::Unsupported(
                "gradient norms of an obstacle set".into(),
            )),
        }
    }
}

/// `l^p` norm of the element gradient, using only the mesh's `dim` components.
pub fn gradient_norm(mesh: &Mesh, values: &[f64], e: usize, p: f64) -> f64 {
    let g = mesh.element_gradient(values, e);
    lp_norm(&g[..mesh.dim()], p)
}

pub(crate) fn lp_norm(g: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        g.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else if p == 1.0 {
        g.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        g.iter().map(|v| v * v).sum::<f64>().sqrt()
    } else {
        g.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// Exact membership test on the discrete representation.
pub fn is_feasible(v: &NodalVector, k: &ConstraintSet, tol: f64) -> Result<bool> {
    Ok(k.violation(v)? <= tol)
}

pub fn pos_part(v: &NodalVector) -> NodalVector {
    v.map(|x| x.max(0.0))
}

/// `v + (w - v)^+`
pub fn sup(v: &NodalVector, w: &NodalVector) -> Result<NodalVector> {
    v.zip_with(w, |a, b| a + (b - a).max(0.0))
}

/// `v - (v - w)^+`
pub fn inf(v: &NodalVector, w: &NodalVector) -> Result<NodalVector> {
    v.zip_with(w, |a, b| a - (a - b).max(0.0))
}

/// `beta_n = (1 + |phi_n - phi|_inf / nu)^{-1}`
pub fn scale_factor(phi: &[f64], phi_n: &[f64], nu: f64) -> Result<f64> {
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(invalid(
            "nu",
            format!("scale recovery needs nu > 0, got {nu}"),
        ));
    }
    if phi.len() != phi_n.len() {
        return Err(Error::DimensionMismatch {
            context: "scale recovery bounds",
            expected: phi.len(),
            found: phi_n.len(),
        });
    }
    let shift = phi
        .iter()
        .zip(phi_n)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    Ok(1.0 / (1.0 + shift / nu))
}

/// `beta_n w`, feasible for the `phi_n` set whenever `w` is feasible for the
/// `phi` set and both bounds are at least `nu`. The bounds may be nodal
/// obstacles or per-element gradient bounds.
pub fn scale_recovery(w: &NodalVector, phi: &[f64], phi_n: &[f64], nu: f64) -> Result<NodalVector> {
    Ok(w.scale(scale_factor(phi, phi_n, nu)?))
}

/// `sign(w) (|w| - shift)^+` at every node.
pub fn truncation_recovery(w: &NodalVector, shift: f64) -> Result<NodalVector> {
    if !(shift >= 0.0 && shift.is_finite()) {
        return Err(invalid(
            "shift",
            format!("must be nonnegative and finite, got {shift}"),
        ));
    }
    Ok(w.map(|x| {
        if x == 0.0 {
            0.0
        } else {
            x.signum() * (x.abs() - shift).max(0.0)
        }
    }))
}

/// Solves `(r Q + M) w_n = M min(w, phi_n)` with `r = |min(w, phi_n) - w|_H`.
/// Boundary values of `w_n` are those of `min(w, phi_n)`. The hypothesis
/// `Q phi_n >= 0` is checked and the feasibility `w_n <= phi_n` is verified.
pub fn singular_perturbation_recovery(
    w: &NodalVector,
    phi_n: &NodalVector,
    q: &DiscreteOperator,
    mass: &DiscreteOperator,
) -> Result<NodalVector> {
    let mesh = q.mesh();
    w.ensure_on(mesh)?;
    phi_n.ensure_on(mesh)?;
    if mass.mesh_id() != q.mesh_id() {
        return Err(Error::MeshMismatch {
            expected: q.mesh_id(),
            found: mass.mesh_id(),
        });
    }
    let q_phi = q.apply(phi_n)?;
    let bound = 1e-10 * inf_norm(&q_phi);
    if let Some((i, v)) = q_phi.iter().enumerate().find(|(_, v)| **v < -bound) {
        return Err(Error::Hypothesis {
            hypothesis: "Q phi_n >= 0",
            detail: format!("(Q phi_n) = {v:e} at free node {i}"),
        });
    }
    if !q.is_m_matrix() {
        return Err(Error::Hypothesis {
            hypothesis: "Q is an M-matrix",
            detail: "sign pattern or diagonal dominance fails".into(),
        });
    }
    let w_tilde = inf(w, phi_n)?;
    let diff = w_tilde.sub(w)?;
    let r = energy_norm(mass, diff.values());
    if r == 0.0 {
        return Ok(w.clone());
    }
    let mut boundary_only = vec![0.0; mesh.n_nodes()];
    for &i in mesh.boundary_nodes() {
        boundary_only[i] = w_tilde.values()[i];
    }
    let qb = q.coupling().mul_vec(&boundary_only);
    let rhs: Vec<f64> = mass
        .apply(&w_tilde)?
        .iter()
        .zip(&qb)
        .map(|(m, b)| m - r * b)
        .collect();
    let system = mass.matrix().add_scaled(q.matrix(), r);
    let x = solve_checked(&system, &rhs, crate::assembly::SOLVE_TOL)?;
    let mut values = boundary_only;
    for (&i, &v) in mesh.free_nodes().iter().zip(&x) {
        values[i] = v;
    }
    let out = NodalVector::new(mesh, values)?;
    let violation = out
        .values()
        .iter()
        .zip(phi_n.values())
        .fold(0.0f64, |m, (a, b)| m.max(a - b));
    if violation > FEAS_TOL {
        return Err(Error::Infeasible {
            violation,
            tol: FEAS_TOL,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryEntry {
    pub n: usize,
    /// Energy-norm distance to the target; `None` when the step failed.
    pub distance: Option<f64>,
    pub feasible: bool,
    pub error: Option<String>,
}

/// Recovery sequence record, strictly increasing in `n`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecoveryTrace {
    entries: Vec<RecoveryEntry>,
}

impl RecoveryTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: RecoveryEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if entry.n <= last.n {
                return Err(invalid(
                    "n",
                    format!("trace index {} does not exceed {}", entry.n, last.n),
                ));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[RecoveryEntry] {
        &self.entries
    }

    pub fn all_feasible(&self) -> bool {
        self.entries.iter().all(|e| e.feasible && e.error.is_none())
    }

    /// True when the last distance is at most a tenth of the first (or both
    /// vanish).
    pub fn converged(&self) -> bool {
        match (self.entries.first(), self.entries.last()) {
            (Some(a), Some(b)) => match (a.distance, b.distance) {
                (Some(d0), Some(d1)) => d1 <= d0 / 10.0 || d1 == 0.0,
                _ => false,
            },
            _ => false,
        }
    }
}
