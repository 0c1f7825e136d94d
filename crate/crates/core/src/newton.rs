//! Damped (semismooth) Newton for convex, piecewise twice differentiable
//! objectives, and the penalty terms used by the path-following solvers.

use crate::constraints::lp_norm;
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse::{dot, inf_norm, BandedLu, CsrMatrix};

pub(crate) trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// A generalized Hessian at `x`.
    fn hessian(&self, x: &[f64]) -> CsrMatrix;
}

#[derive(Clone, Debug)]
pub(crate) struct NewtonResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// Minimizes `obj` from `x0` until `|grad|_inf <= tol` or the Newton step
/// becomes negligible relative to `x`.
pub(crate) fn newton_minimize(
    obj: &dyn Objective,
    x0: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<NewtonResult> {
    let mut x = x0;
    let mut g = obj.gradient(&x);
    let mut fx = obj.value(&x);
    for it in 0..max_iter {
        let res = inf_norm(&g);
        if res <= tol {
            return Ok(NewtonResult {
                x,
                iterations: it,
                residual: res,
            });
        }
        let h = obj.hessian(&x);
        let lu = BandedLu::factor(&h)?;
        let mut d = lu.solve(&g);
        d.iter_mut().for_each(|v| *v = -*v);
        let slope = dot(&g, &d);
        if !(slope < 0.0) {
            return Err(Error::NonConvergence {
                solver: "damped Newton (no descent direction)",
                iterations: it,
                residual: res,
            });
        }
        if inf_norm(&d) <= 1e-14 * (1.0 + inf_norm(&x)) {
            return Ok(NewtonResult {
                x,
                iterations: it,
                residual: res,
            });
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let ft = obj.value(&trial);
            if ft <= fx + ARMIJO * t * slope
                || (ft - fx).abs() <= 1e-15 * fx.abs().max(1.0) && t == 1.0
            {
                x = trial;
                fx = ft;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        g = obj.gradient(&x);
        if !accepted {
            let res = inf_norm(&g);
            // rounding floor of the objective: accept a stationary point the
            // line search can no longer resolve
            if res <= tol.max(1e-8 * (1.0 + inf_norm(&x))) {
                return Ok(NewtonResult {
                    x,
                    iterations: it + 1,
                    residual: res,
                });
            }
            return Err(Error::NonConvergence {
                solver: "damped Newton (line search stagnated)",
                iterations: it + 1,
                residual: res,
            });
        }
    }
    let res = inf_norm(&g);
    if res <= tol {
        return Ok(NewtonResult {
            x,
            iterations: max_iter,
            residual: res,
        });
    }
    Err(Error::NonConvergence {
        solver: "damped Newton",
        iterations: max_iter,
        residual: res,
    })
}

/// Penalty `(1/2) sum_k w_k (g_k(x) - b_k)_+^2`, with `x` the free-node values.
pub(crate) enum Penalty<'a> {
    /// `g_k = x_k`, one weight per free node; infinite bounds never activate.
    Nodal {
        weights: &'a [f64],
        bounds: &'a [f64],
    },
    /// `g_T = mean of the vertex values`, weight `|T|`.
    Midpoint { mesh: &'a Mesh, bounds: &'a [f64] },
    /// `g_T = |grad x|_p`, weight `|T|`.
    Gradient {
        mesh: &'a Mesh,
        bounds: &'a [f64],
        p: f64,
    },
}

fn full_values(mesh: &Mesh, x: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; mesh.n_nodes()];
    for (&i, &xi) in mesh.free_nodes().iter().zip(x) {
        v[i] = xi;
    }
    v
}

/// Gradient of `|z|_p` with respect to `z` (a subgradient at kinks), and its
/// generalized Hessian.
fn norm_derivatives(z: &[f64], p: f64) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
    let d = z.len();
    let s = lp_norm(z, p);
    let mut grad = vec![0.0; d];
    let mut hess = vec![vec![0.0; d]; d];
    if s == 0.0 {
        return (s, grad, hess);
    }
    if p.is_infinite() {
        let k = (0..d)
            .max_by(|&a, &b| z[a].abs().total_cmp(&z[b].abs()))
            .unwrap_or(0);
        grad[k] = z[k].signum();
    } else if p == 1.0 || d == 1 {
        for k in 0..d {
            grad[k] = if z[k] == 0.0 { 0.0 } else { z[k].signum() };
        }
    } else {
        let floor = 1e-12 * s;
        let v: Vec<f64> = z
            .iter()
            .map(|&zi| zi.signum() * zi.abs().powf(p - 1.0))
            .collect();
        for k in 0..d {
            grad[k] = v[k] * s.powf(1.0 - p);
        }
        for a in 0..d {
            for b in 0..d {
                let diag = if a == b {
                    z[a].abs().max(floor).powf(p - 2.0) * s.powf(1.0 - p)
                } else {
                    0.0
                };
                hess[a][b] = (p - 1.0) * (diag - v[a] * v[b] * s.powf(1.0 - 2.0 * p));
            }
        }
    }
    (s, grad, hess)
}

impl Penalty<'_> {
    pub(crate) fn value(&self, x: &[f64]) -> f64 {
        match self {
            Penalty::Nodal { weights, bounds } => {
                x.iter()
                    .zip(*bounds)
                    .zip(*weights)
                    .map(|((xi, b), w)| w * (xi - b).max(0.0).powi(2))
                    .sum::<f64>()
                    * 0.5
            }
            Penalty::Midpoint { mesh, bounds } => {
                let v = full_values(mesh, x);
                (0..mesh.n_elements())
                    .map(|e| {
                        mesh.measure(e) * (mesh.element_mean(&v, e) - bounds[e]).max(0.0).powi(2)
                    })
                    .sum::<f64>()
                    * 0.5
            }
            Penalty::Gradient { mesh, bounds, p } => {
                let v = full_values(mesh, x);
                (0..mesh.n_elements())
                    .map(|e| {
                        let g = mesh.element_gradient(&v, e);
                        mesh.measure(e)
                            * (lp_norm(&g[..mesh.dim()], *p) - bounds[e]).max(0.0).powi(2)
                    })
                    .sum::<f64>()
                    * 0.5
            }
        }
    }

    /// Largest constraint violation `max_k (g_k(x) - b_k)_+`.
    pub(crate) fn violation(&self, x: &[f64]) -> f64 {
        match self {
            Penalty::Nodal { bounds, .. } => {
                x.iter().zip(*bounds).fold(0.0f64, |m, (a, b)| m.max(a - b))
            }
            Penalty::Midpoint { mesh, bounds } => {
                let v = full_values(mesh, x);
                (0..mesh.n_elements())
                    .fold(0.0f64, |m, e| m.max(mesh.element_mean(&v, e) - bounds[e]))
            }
            Penalty::Gradient { mesh, bounds, p } => {
                let v = full_values(mesh, x);
                (0..mesh.n_elements()).fold(0.0f64, |m, e| {
                    let g = mesh.element_gradient(&v, e);
                    m.max(lp_norm(&g[..mesh.dim()], *p) - bounds[e])
                })
            }
        }
    }

    /// Adds `scale * grad` to `out` and pushes `scale * hessian` triplets.
    pub(crate) fn derivatives(
        &self,
        x: &[f64],
        scale: f64,
        out: &mut [f64],
        hess: &mut Vec<(usize, usize, f64)>,
    ) {
        match self {
            Penalty::Nodal { weights, bounds } => {
                for i in 0..x.len() {
                    let r = x[i] - bounds[i];
                    if r > 0.0 {
                        out[i] += scale * weights[i] * r;
                        hess.push((i, i, scale * weights[i]));
                    }
                }
            }
            Penalty::Midpoint { mesh, bounds } => {
                let v = full_values(mesh, x);
                for e in 0..mesh.n_elements() {
                    let r = mesh.element_mean(&v, e) - bounds[e];
                    if r <= 0.0 {
                        continue;
                    }
                    let el = mesh.element(e);
                    let c = 1.0 / el.len() as f64;
                    let w = scale * mesh.measure(e);
                    for &a in el {
                        if let Some(fa) = mesh.free_index(a) {
                            out[fa] += w * r * c;
                            for &b in el {
                                if let Some(fb) = mesh.free_index(b) {
                                    hess.push((fa, fb, w * c * c));
                                }
                            }
                        }
                    }
                }
            }
            Penalty::Gradient { mesh, bounds, p } => {
                let v = full_values(mesh, x);
                let dim = mesh.dim();
                for e in 0..mesh.n_elements() {
                    let g = mesh.element_gradient(&v, e);
                    let (s, dn, d2n) = norm_derivatives(&g[..dim], *p);
                    let r = s - bounds[e];
                    if r <= 0.0 {
                        continue;
                    }
                    let el = mesh.element(e);
                    let grads = mesh.basis_gradients(e);
                    let w = scale * mesh.measure(e);
                    // ds/dx_a = dn . grad(phi_a)
                    let ds: Vec<f64> = grads
                        .iter()
                        .map(|ga| (0..dim).map(|k| dn[k] * ga[k]).sum())
                        .collect();
                    for (ia, &a) in el.iter().enumerate() {
                        let Some(fa) = mesh.free_index(a) else {
                            continue;
                        };
                        out[fa] += w * r * ds[ia];
                        for (ib, &b) in el.iter().enumerate() {
                            let Some(fb) = mesh.free_index(b) else {
                                continue;
                            };
                            let mut curv = 0.0;
                            for k in 0..dim {
                                for l in 0..dim {
                                    curv += grads[ia][k] * d2n[k][l] * grads[ib][l];
                                }
                            }
                            hess.push((fa, fb, w * (ds[ia] * ds[ib] + r * curv)));
                        }
                    }
                }
            }
        }
    }
}

/// `(1/2) x^T A x - f^T x + gamma * penalty(x)` with `A` symmetric.
pub(crate) struct Penalized<'a> {
    pub a: &'a CsrMatrix,
    pub f: &'a [f64],
    pub penalty: &'a Penalty<'a>,
    pub gamma: f64,
}

impl Objective for Penalized<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.a.quadratic_form(x) - dot(self.f, x) + self.gamma * self.penalty.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g: Vec<f64> = self
            .a
            .mul_vec(x)
            .iter()
            .zip(self.f)
            .map(|(ax, f)| ax - f)
            .collect();
        let mut sink = Vec::new();
        self.penalty.derivatives(x, self.gamma, &mut g, &mut sink);
        g
    }

    fn hessian(&self, x: &[f64]) -> CsrMatrix {
        let mut g = vec![0.0; x.len()];
        let mut t = self.a.triplets();
        self.penalty.derivatives(x, self.gamma, &mut g, &mut t);
        CsrMatrix::from_triplets(x.len(), x.len(), &t)
    }
}
