//! P1 Galerkin assembly of second-order operators and load functionals, plus
//! the discrete order-structure checks (M-matrix, coercivity).

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::mesh::{Mesh, MeshId, NodalVector, Point};
use crate::sparse::{dot, inf_norm, solve_with, BandedLu, CsrMatrix};

/// Relative residual bound every direct solve must meet.
pub const SOLVE_TOL: f64 = 1e-10;

const COERCIVITY_SEED: u64 = 0x5eed_c0e7;
const DEFAULT_TRIALS: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub enum Diffusion {
    Constant(f64),
    PerElement(Vec<f64>),
}

/// Coefficients of `-div(k grad u) + b . grad u + c u`.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    pub diffusion: Diffusion,
    pub advection: [f64; 2],
    pub reaction: f64,
}

impl Default for Coefficients {
    fn default() -> Self {
        Self::laplacian()
    }
}

impl Coefficients {
    pub fn laplacian() -> Self {
        Self {
            diffusion: Diffusion::Constant(1.0),
            advection: [0.0, 0.0],
            reaction: 0.0,
        }
    }

    pub fn with_diffusion(mut self, k: f64) -> Self {
        self.diffusion = Diffusion::Constant(k);
        self
    }

    pub fn with_advection(mut self, b: [f64; 2]) -> Self {
        self.advection = b;
        self
    }

    pub fn with_reaction(mut self, c: f64) -> Self {
        self.reaction = c;
        self
    }
}

/// A linear operator restricted to the free (non-Dirichlet) nodes of a mesh.
#[derive(Debug)]
pub struct DiscreteOperator {
    mesh: Arc<Mesh>,
    matrix: CsrMatrix,
    coupling: CsrMatrix,
    energy: CsrMatrix,
    coercivity: OnceLock<f64>,
    m_matrix: bool,
    symmetric: bool,
    lu: OnceLock<BandedLu>,
}

impl Clone for DiscreteOperator {
    fn clone(&self) -> Self {
        let lu = OnceLock::new();
        if let Some(f) = self.lu.get() {
            let _ = lu.set(f.clone());
        }
        Self {
            mesh: self.mesh.clone(),
            matrix: self.matrix.clone(),
            coupling: self.coupling.clone(),
            energy: self.energy.clone(),
            coercivity: self.coercivity.clone(),
            m_matrix: self.m_matrix,
            symmetric: self.symmetric,
            lu,
        }
    }
}

impl DiscreteOperator {
    /// Wraps an operator given on all nodes. `full` acts on every node;
    /// `energy` is the symmetric matrix defining the energy norm, also on all
    /// nodes.
    pub fn from_full(mesh: Arc<Mesh>, full: &CsrMatrix, energy: CsrMatrix) -> Result<Self> {
        let n = mesh.n_nodes();
        for (m, name) in [(full, "operator"), (&energy, "energy matrix")] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: name,
                    expected: n,
                    found: m.nrows(),
                });
            }
        }
        let free = mesh.free_nodes();
        let col_map: Vec<Option<usize>> = (0..n).map(|i| mesh.free_index(i)).collect();
        let coupling_t: Vec<_> = free
            .iter()
            .enumerate()
            .flat_map(|(r, &i)| full.row(i).map(move |(j, v)| (r, j, v)))
            .collect();
        let coupling = CsrMatrix::from_triplets(free.len(), n, &coupling_t);
        let matrix = coupling.select_columns(&col_map, free.len());
        Ok(Self::finish(mesh, matrix, coupling, energy))
    }

    /// Wraps a matrix already reduced to the free nodes. Boundary columns of
    /// the coupling are zero and the energy is the symmetric part.
    pub fn from_free_matrix(mesh: Arc<Mesh>, matrix: CsrMatrix) -> Result<Self> {
        let nf = mesh.n_free();
        if matrix.nrows() != nf || matrix.ncols() != nf {
            return Err(Error::DimensionMismatch {
                context: "free-node operator",
                expected: nf,
                found: matrix.nrows(),
            });
        }
        let free = mesh.free_nodes();
        let n = mesh.n_nodes();
        let coupling = CsrMatrix::from_triplets(
            nf,
            n,
            &matrix
                .triplets()
                .into_iter()
                .map(|(i, j, v)| (i, free[j], v))
                .collect::<Vec<_>>(),
        );
        let energy = CsrMatrix::from_triplets(
            n,
            n,
            &matrix
                .symmetric_part()
                .triplets()
                .into_iter()
                .map(|(i, j, v)| (free[i], free[j], v))
                .collect::<Vec<_>>(),
        );
        Ok(Self::finish(mesh, matrix, coupling, energy))
    }

    fn finish(mesh: Arc<Mesh>, matrix: CsrMatrix, coupling: CsrMatrix, energy: CsrMatrix) -> Self {
        let scale = matrix.max_abs().max(f64::MIN_POSITIVE);
        let symmetric = matrix.is_symmetric(1e-14 * scale);
        let m_matrix = check_matrix_m(&matrix);
        Self {
            mesh,
            matrix,
            coupling,
            energy,
            coercivity: OnceLock::new(),
            m_matrix,
            symmetric,
            lu: OnceLock::new(),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn mesh_id(&self) -> MeshId {
        self.mesh.id()
    }

    /// Square matrix over the free nodes.
    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Free-node rows with columns over all nodes, so boundary values of the
    /// argument contribute.
    pub fn coupling(&self) -> &CsrMatrix {
        &self.coupling
    }

    /// Symmetric energy matrix over all nodes.
    pub fn energy_matrix(&self) -> &CsrMatrix {
        &self.energy
    }

    pub fn n_free(&self) -> usize {
        self.matrix.nrows()
    }

    /// Computed on first use; it costs a banded factorization.
    pub fn coercivity_estimate(&self) -> f64 {
        *self
            .coercivity
            .get_or_init(|| coercivity_of(&self.matrix, DEFAULT_TRIALS))
    }

    pub fn is_m_matrix(&self) -> bool {
        self.m_matrix
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal_values()
    }

    pub(crate) fn factorization(&self) -> Result<&BandedLu> {
        if let Some(lu) = self.lu.get() {
            return Ok(lu);
        }
        let lu = BandedLu::factor(&self.matrix)?;
        let _ = self.lu.set(lu);
        Ok(self.lu.get().expect("factorization just stored"))
    }

    /// Solves `A x = b` on the free nodes with the residual check.
    pub fn solve_free(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n_free() {
            return Err(Error::DimensionMismatch {
                context: "operator solve",
                expected: self.n_free(),
                found: b.len(),
            });
        }
        solve_with(self.factorization()?, &self.matrix, b, SOLVE_TOL)
    }

    /// `(A v)` at the free nodes, including boundary contributions of `v`.
    pub fn apply(&self, v: &NodalVector) -> Result<Vec<f64>> {
        v.ensure_on(&self.mesh)?;
        Ok(self.coupling.mul_vec(v.values()))
    }

    /// Free-node values of `v`.
    pub fn restrict(&self, v: &NodalVector) -> Result<Vec<f64>> {
        v.ensure_on(&self.mesh)?;
        Ok(self
            .mesh
            .free_nodes()
            .iter()
            .map(|&i| v.values()[i])
            .collect())
    }

    /// Nodal vector with the given free values and zero boundary values.
    pub fn extend(&self, free: &[f64]) -> NodalVector {
        extend_free(&self.mesh, free)
    }
}

pub(crate) fn extend_free(mesh: &Mesh, free: &[f64]) -> NodalVector {
    let mut values = vec![0.0; mesh.n_nodes()];
    for (&i, &v) in mesh.free_nodes().iter().zip(free) {
        values[i] = v;
    }
    NodalVector::from_raw(values, mesh.id())
}

/// Dual-pairing coefficients `<f, phi_i>` at the free nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadFunctional {
    values: Vec<f64>,
    mesh_id: MeshId,
}

impl LoadFunctional {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_free() {
            return Err(Error::DimensionMismatch {
                context: "load functional",
                expected: mesh.n_free(),
                found: values.len(),
            });
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("load entry {i}"),
                value: *v,
            });
        }
        Ok(Self {
            values,
            mesh_id: mesh.id(),
        })
    }

    pub(crate) fn from_raw(values: Vec<f64>, mesh_id: MeshId) -> Self {
        Self { values, mesh_id }
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            values: vec![0.0; mesh.n_free()],
            mesh_id: mesh.id(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mesh_id(&self) -> MeshId {
        self.mesh_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| s * v).collect(),
            mesh_id: self.mesh_id,
        }
    }

    /// `self + s * other`
    pub fn add_scaled(&self, other: &Self, s: f64) -> Result<Self> {
        if self.mesh_id != other.mesh_id {
            return Err(Error::MeshMismatch {
                expected: self.mesh_id,
                found: other.mesh_id,
            });
        }
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
            mesh_id: self.mesh_id,
        })
    }

    pub fn sup_norm(&self) -> f64 {
        inf_norm(&self.values)
    }

    /// True when `self <= other` entrywise.
    pub fn le(&self, other: &Self) -> bool {
        self.mesh_id == other.mesh_id && self.values.iter().zip(&other.values).all(|(a, b)| a <= b)
    }

    pub(crate) fn ensure_on(&self, mesh: &Mesh) -> Result<()> {
        if self.mesh_id != mesh.id() {
            return Err(Error::MeshMismatch {
                expected: mesh.id(),
                found: self.mesh_id,
            });
        }
        Ok(())
    }
}

fn element_diffusion(coeffs: &Coefficients, e: usize) -> f64 {
    match &coeffs.diffusion {
        Diffusion::Constant(k) => *k,
        Diffusion::PerElement(k) => k[e],
    }
}

/// Assembles the full-node matrix and the symmetric energy matrix.
fn assemble_full(mesh: &Mesh, coeffs: &Coefficients) -> Result<(CsrMatrix, CsrMatrix)> {
    if let Diffusion::PerElement(k) = &coeffs.diffusion {
        if k.len() != mesh.n_elements() {
            return Err(Error::DimensionMismatch {
                context: "per-element diffusion",
                expected: mesh.n_elements(),
                found: k.len(),
            });
        }
    }
    for e in 0..mesh.n_elements() {
        let k = element_diffusion(coeffs, e);
        if !(k > 0.0 && k.is_finite()) {
            return Err(invalid(
                "diffusion",
                format!("must be positive and finite, got {k} on element {e}"),
            ));
        }
    }
    if !(coeffs.reaction >= 0.0 && coeffs.reaction.is_finite()) {
        return Err(invalid(
            "reaction",
            format!("must be nonnegative and finite, got {}", coeffs.reaction),
        ));
    }
    if !coeffs.advection.iter().all(|b| b.is_finite()) {
        return Err(invalid("advection", "must be finite"));
    }
    let n = mesh.n_nodes();
    let nv = mesh.vertices_per_element();
    let w = 1.0 / nv as f64;
    let b = coeffs.advection;
    let mut full = Vec::with_capacity(mesh.n_elements() * nv * nv);
    let mut energy = Vec::with_capacity(mesh.n_elements() * nv * nv);
    for e in 0..mesh.n_elements() {
        let el = mesh.element(e);
        let g = mesh.basis_gradients(e);
        let area = mesh.measure(e);
        let k = element_diffusion(coeffs, e);
        for a in 0..nv {
            for c in 0..nv {
                let stiff = k * area * (g[a][0] * g[c][0] + g[a][1] * g[c][1]);
                let react = if a == c {
                    coeffs.reaction * area * w
                } else {
                    0.0
                };
                let adv = (b[0] * g[c][0] + b[1] * g[c][1]) * area * w;
                full.push((el[a], el[c], stiff + react + adv));
                energy.push((el[a], el[c], stiff + react));
            }
        }
    }
    Ok((
        CsrMatrix::from_triplets(n, n, &full),
        CsrMatrix::from_triplets(n, n, &energy),
    ))
}

/// P1 Galerkin operator with homogeneous Dirichlet nodes eliminated.
pub fn assemble_operator(mesh: &Arc<Mesh>, coeffs: &Coefficients) -> Result<DiscreteOperator> {
    let (full, energy) = assemble_full(mesh, coeffs)?;
    DiscreteOperator::from_full(mesh.clone(), &full, energy)
}

/// Lumped mass weights `m_i = sum_{T ∋ i} |T| / (d + 1)` over all nodes.
pub fn lumped_mass_weights(mesh: &Mesh) -> Vec<f64> {
    let nv = mesh.vertices_per_element();
    let mut m = vec![0.0; mesh.n_nodes()];
    for e in 0..mesh.n_elements() {
        let share = mesh.measure(e) / nv as f64;
        for &i in mesh.element(e) {
            m[i] += share;
        }
    }
    m
}

/// Diagonal lumped mass operator on the free nodes.
pub fn assemble_lumped_mass(mesh: &Arc<Mesh>) -> Result<DiscreteOperator> {
    let m = lumped_mass_weights(mesh);
    let n = mesh.n_nodes();
    let full = CsrMatrix::diagonal(&m);
    let energy = CsrMatrix::from_triplets(n, n, &full.triplets());
    DiscreteOperator::from_full(mesh.clone(), &full, energy)
}

/// `<f, phi_i> ≈ sum_T |T| f(x_T) phi_i(x_T)` with `x_T` the barycenter.
pub fn assemble_load(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Result<LoadFunctional> {
    let samples: Vec<f64> = mesh.midpoints().iter().map(|&p| f(p)).collect();
    load_from_midpoint_values(mesh, &samples)
}

/// Load from per-node values, using the P1 interpolant at each barycenter.
pub fn assemble_load_nodal(mesh: &Mesh, values: &NodalVector) -> Result<LoadFunctional> {
    values.ensure_on(mesh)?;
    let samples: Vec<f64> = (0..mesh.n_elements())
        .map(|e| mesh.element_mean(values.values(), e))
        .collect();
    load_from_midpoint_values(mesh, &samples)
}

fn load_from_midpoint_values(mesh: &Mesh, samples: &[f64]) -> Result<LoadFunctional> {
    let nv = mesh.vertices_per_element();
    let mut full = vec![0.0; mesh.n_nodes()];
    for (e, &fv) in samples.iter().enumerate() {
        if !fv.is_finite() {
            let p = mesh.midpoints()[e];
            return Err(Error::NonFinite {
                location: format!("midpoint of element {e} ({}, {})", p[0], p[1]),
                value: fv,
            });
        }
        let c = mesh.measure(e) * fv / nv as f64;
        for &i in mesh.element(e) {
            full[i] += c;
        }
    }
    LoadFunctional::new(mesh, mesh.free_nodes().iter().map(|&i| full[i]).collect())
}

/// Solves `A u = f` with zero Dirichlet values.
pub fn solve_linear(op: &DiscreteOperator, load: &LoadFunctional) -> Result<NodalVector> {
    load.ensure_on(op.mesh())?;
    let u = op.solve_free(load.values())?;
    Ok(op.extend(&u))
}

/// Nonpositive off-diagonals, positive diagonal, weak row diagonal dominance
/// with at least one strictly dominant row.
pub fn check_m_matrix(op: &DiscreteOperator) -> bool {
    check_matrix_m(op.matrix())
}

pub(crate) fn check_matrix_m(a: &CsrMatrix) -> bool {
    if a.nrows() == 0 || a.nrows() != a.ncols() {
        return false;
    }
    let tol = 1e-12 * a.max_abs();
    let mut strict = false;
    for i in 0..a.nrows() {
        let mut diag = 0.0;
        let mut off = 0.0;
        for (j, v) in a.row(i) {
            if i == j {
                diag = v;
            } else if v > tol {
                return false;
            } else {
                off += v.abs();
            }
        }
        if diag <= 0.0 || diag < off - tol {
            return false;
        }
        if diag > off + tol {
            strict = true;
        }
    }
    strict
}

/// Smallest Rayleigh quotient `x^T A x / x^T x` over seeded random unit
/// vectors, each also refined by inverse iteration on the symmetric part.
pub fn estimate_coercivity(op: &DiscreteOperator, trials: usize) -> f64 {
    coercivity_of(op.matrix(), trials)
}

fn coercivity_of(a: &CsrMatrix, trials: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return f64::INFINITY;
    }
    let sym = a.symmetric_part();
    let lu = BandedLu::factor(&sym).ok();
    let mut rng = ChaCha8Rng::seed_from_u64(COERCIVITY_SEED);
    let rayleigh = |x: &[f64]| sym.quadratic_form(x) / dot(x, x);
    let mut best = f64::INFINITY;
    for _ in 0..trials.max(1) {
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        best = best.min(rayleigh(&x));
        if let Some(lu) = &lu {
            for _ in 0..40 {
                x = lu.solve(&x);
                let norm = dot(&x, &x).sqrt();
                if !norm.is_finite() || norm == 0.0 {
                    break;
                }
                x.iter_mut().for_each(|v| *v /= norm);
            }
            let q = rayleigh(&x);
            if q.is_finite() {
                best = best.min(q);
            }
        }
    }
    best
}

/// Discrete L2 norm with lumped mass weights.
pub fn l2_norm(mesh: &Mesh, v: &[f64]) -> f64 {
    lumped_mass_weights(mesh)
        .iter()
        .zip(v)
        .map(|(m, x)| m * x * x)
        .sum::<f64>()
        .sqrt()
}

/// `sqrt(v^T E v)` with `E` the operator's symmetric energy matrix.
pub fn energy_norm(op: &DiscreteOperator, v: &[f64]) -> f64 {
    op.energy_matrix().quadratic_form(v).max(0.0).sqrt()
}
