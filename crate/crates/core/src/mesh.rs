//! Structured simplicial meshes on intervals and rectangles, nodal
//! interpolation and mesh-quality metrics.
//!
//! Points are stored as `[x, y]` in both dimensions; 1D meshes keep `y = 0`.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

pub type Point = [f64; 2];

/// A real function on the domain, shareable across study workers.
pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

/// Content hash of a mesh. Two meshes with identical nodes and elements share
/// an id, so vectors built on either are interchangeable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MeshId(pub u64);

impl fmt::Display for MeshId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn unit() -> Self {
        Self::new(0.0, 1.0, 0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Structure {
    Interval { cells: usize, a: f64, b: f64 },
    Rectangle { nx: usize, ny: usize, bounds: Rect },
    Unstructured,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    id: MeshId,
    dim: usize,
    nodes: Vec<Point>,
    elements: Vec<usize>,
    boundary: Vec<bool>,
    boundary_nodes: Vec<usize>,
    free_nodes: Vec<usize>,
    node_to_free: Vec<Option<usize>>,
    midpoints: Vec<Point>,
    measures: Vec<f64>,
    diameters: Vec<f64>,
    gradients: Vec<[f64; 2]>,
    h: f64,
    structure: Structure,
}

fn fnv(hash: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *hash ^= b as u64;
        *hash = hash.wrapping_mul(0x100_0000_01b3);
    }
}

fn dist(p: Point, q: Point) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
}

impl Mesh {
    /// Builds a mesh from raw parts, validating indices and computing all
    /// derived geometry. Elements are segments in 1D and triangles in 2D.
    pub fn from_parts(
        dim: usize,
        nodes: Vec<Point>,
        elements: Vec<Vec<usize>>,
        boundary_nodes: &[usize],
    ) -> Result<Self> {
        Self::assemble(
            dim,
            nodes,
            elements,
            boundary_nodes,
            Structure::Unstructured,
        )
    }

    fn assemble(
        dim: usize,
        nodes: Vec<Point>,
        elements: Vec<Vec<usize>>,
        boundary_nodes: &[usize],
        structure: Structure,
    ) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid("dim", format!("must be 1 or 2, got {dim}")));
        }
        if elements.is_empty() {
            return Err(invalid("elements", "mesh has no elements"));
        }
        let nv = dim + 1;
        let n = nodes.len();
        for (i, p) in nodes.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::NonFinite {
                    location: format!("node {i}"),
                    value: if p[0].is_finite() { p[1] } else { p[0] },
                });
            }
        }
        let mut flat = Vec::with_capacity(elements.len() * nv);
        for (e, el) in elements.iter().enumerate() {
            if el.len() != nv {
                return Err(invalid(
                    "elements",
                    format!("element {e} has {} vertices, expected {nv}", el.len()),
                ));
            }
            for (k, &v) in el.iter().enumerate() {
                if v >= n {
                    return Err(invalid(
                        "elements",
                        format!("element {e} references node {v} of {n}"),
                    ));
                }
                if el[..k].contains(&v) {
                    return Err(invalid("elements", format!("element {e} repeats node {v}")));
                }
            }
            flat.extend_from_slice(el);
        }
        let mut boundary = vec![false; n];
        for &b in boundary_nodes {
            if b >= n {
                return Err(invalid("boundary_nodes", format!("index {b} out of range")));
            }
            boundary[b] = true;
        }
        let boundary_nodes: Vec<usize> = (0..n).filter(|&i| boundary[i]).collect();
        let free_nodes: Vec<usize> = (0..n).filter(|&i| !boundary[i]).collect();
        let mut node_to_free = vec![None; n];
        for (k, &i) in free_nodes.iter().enumerate() {
            node_to_free[i] = Some(k);
        }

        let ne = elements.len();
        let mut midpoints = Vec::with_capacity(ne);
        let mut measures = Vec::with_capacity(ne);
        let mut diameters = Vec::with_capacity(ne);
        let mut gradients = Vec::with_capacity(ne * nv);
        for e in 0..ne {
            let v = &flat[e * nv..(e + 1) * nv];
            let p: Vec<Point> = v.iter().map(|&i| nodes[i]).collect();
            let mut mid = [0.0; 2];
            for q in &p {
                mid[0] += q[0] / nv as f64;
                mid[1] += q[1] / nv as f64;
            }
            midpoints.push(mid);
            if dim == 1 {
                let len = p[1][0] - p[0][0];
                if len.abs() <= 0.0 {
                    return Err(invalid("elements", format!("element {e} is degenerate")));
                }
                measures.push(len.abs());
                diameters.push(len.abs());
                gradients.push([-1.0 / len, 0.0]);
                gradients.push([1.0 / len, 0.0]);
            } else {
                let (x1, y1) = (p[1][0] - p[0][0], p[1][1] - p[0][1]);
                let (x2, y2) = (p[2][0] - p[0][0], p[2][1] - p[0][1]);
                let det = x1 * y2 - x2 * y1;
                if det.abs() <= 1e-14 * (x1.abs() + y1.abs()) * (x2.abs() + y2.abs()) {
                    return Err(invalid("elements", format!("element {e} is degenerate")));
                }
                measures.push(det.abs() / 2.0);
                diameters.push(dist(p[0], p[1]).max(dist(p[1], p[2])).max(dist(p[0], p[2])));
                // rows of the inverse Jacobian give the reference gradients
                let g1 = [y2 / det, -x2 / det];
                let g2 = [-y1 / det, x1 / det];
                gradients.push([-g1[0] - g2[0], -g1[1] - g2[1]]);
                gradients.push(g1);
                gradients.push(g2);
            }
        }
        let h = diameters.iter().fold(0.0f64, |m, &d| m.max(d));

        let mut hash = 0xcbf2_9ce4_8422_2325u64;
        fnv(&mut hash, &(dim as u64).to_le_bytes());
        for p in &nodes {
            fnv(&mut hash, &p[0].to_bits().to_le_bytes());
            fnv(&mut hash, &p[1].to_bits().to_le_bytes());
        }
        for &i in &flat {
            fnv(&mut hash, &(i as u64).to_le_bytes());
        }
        for &b in &boundary_nodes {
            fnv(&mut hash, &(b as u64).to_le_bytes());
        }

        Ok(Self {
            id: MeshId(hash),
            dim,
            nodes,
            elements: flat,
            boundary,
            boundary_nodes,
            free_nodes,
            node_to_free,
            midpoints,
            measures,
            diameters,
            gradients,
            h,
            structure,
        })
    }

    pub fn id(&self) -> MeshId {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.measures.len()
    }

    pub fn vertices_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.elements[e * nv..(e + 1) * nv]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> + '_ {
        self.elements.chunks(self.dim + 1)
    }

    /// Gradients of the element's P1 basis functions, in vertex order.
    pub fn basis_gradients(&self, e: usize) -> &[[f64; 2]] {
        let nv = self.dim + 1;
        &self.gradients[e * nv..(e + 1) * nv]
    }

    pub fn measure(&self, e: usize) -> f64 {
        self.measures[e]
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn diameter(&self, e: usize) -> f64 {
        self.diameters[e]
    }

    pub fn midpoints(&self) -> &[Point] {
        &self.midpoints
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn n_free(&self) -> usize {
        self.free_nodes.len()
    }

    pub fn free_index(&self, node: usize) -> Option<usize> {
        self.node_to_free[node]
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    /// Total measure of the domain.
    pub fn volume(&self) -> f64 {
        self.measures.iter().sum()
    }

    /// Gradient of the P1 function with nodal `values` on element `e`.
    pub fn element_gradient(&self, values: &[f64], e: usize) -> [f64; 2] {
        let mut g = [0.0; 2];
        for (&v, dg) in self.element(e).iter().zip(self.basis_gradients(e)) {
            g[0] += values[v] * dg[0];
            g[1] += values[v] * dg[1];
        }
        g
    }

    /// Value of the P1 function with nodal `values` at the barycenter of `e`.
    pub fn element_mean(&self, values: &[f64], e: usize) -> f64 {
        let el = self.element(e);
        el.iter().map(|&v| values[v]).sum::<f64>() / el.len() as f64
    }

    /// Finds an element containing `p` and the barycentric weights of `p`.
    pub fn locate(&self, p: Point) -> Option<(usize, Vec<f64>)> {
        const SLACK: f64 = 1e-12;
        match self.structure {
            Structure::Interval { cells, a, b } => {
                let dx = (b - a) / cells as f64;
                if p[0] < a - SLACK * dx || p[0] > b + SLACK * dx {
                    return None;
                }
                let i = (((p[0] - a) / dx).floor().max(0.0) as usize).min(cells - 1);
                let x0 = self.nodes[i][0];
                let x1 = self.nodes[i + 1][0];
                let t = ((p[0] - x0) / (x1 - x0)).clamp(0.0, 1.0);
                Some((i, vec![1.0 - t, t]))
            }
            Structure::Rectangle { nx, ny, bounds } => {
                let dx = (bounds.x1 - bounds.x0) / nx as f64;
                let dy = (bounds.y1 - bounds.y0) / ny as f64;
                if p[0] < bounds.x0 - SLACK * dx
                    || p[0] > bounds.x1 + SLACK * dx
                    || p[1] < bounds.y0 - SLACK * dy
                    || p[1] > bounds.y1 + SLACK * dy
                {
                    return None;
                }
                let i = (((p[0] - bounds.x0) / dx).floor().max(0.0) as usize).min(nx - 1);
                let j = (((p[1] - bounds.y0) / dy).floor().max(0.0) as usize).min(ny - 1);
                let base = self.nodes[j * (nx + 1) + i];
                let s = ((p[0] - base[0]) / dx).clamp(0.0, 1.0);
                let t = ((p[1] - base[1]) / dy).clamp(0.0, 1.0);
                let cell = j * nx + i;
                if s >= t {
                    Some((2 * cell, vec![1.0 - s, s - t, t]))
                } else {
                    Some((2 * cell + 1, vec![1.0 - t, s, t - s]))
                }
            }
            Structure::Unstructured => (0..self.n_elements()).find_map(|e| {
                let w = self.barycentric(e, p);
                w.iter().all(|&x| x >= -1e-10).then_some((e, w))
            }),
        }
    }

    fn barycentric(&self, e: usize, p: Point) -> Vec<f64> {
        let el = self.element(e);
        let q0 = self.nodes[el[0]];
        let grads = self.basis_gradients(e);
        let mut w: Vec<f64> = grads
            .iter()
            .skip(1)
            .map(|g| g[0] * (p[0] - q0[0]) + g[1] * (p[1] - q0[1]))
            .collect();
        let first = 1.0 - w.iter().sum::<f64>();
        w.insert(0, first);
        w
    }

    /// Evaluates the P1 reconstruction of nodal `values` at `p`.
    pub fn evaluate(&self, values: &[f64], p: Point) -> Option<f64> {
        let (e, w) = self.locate(p)?;
        Some(
            self.element(e)
                .iter()
                .zip(&w)
                .map(|(&v, &b)| values[v] * b)
                .sum(),
        )
    }

    /// Uniform refinement that halves `h`. Only structured meshes refine.
    pub fn refine(&self) -> Result<Mesh> {
        match self.structure {
            Structure::Interval { cells, a, b } => build_interval_mesh(2 * cells, a, b),
            Structure::Rectangle { nx, ny, bounds } => build_triangle_mesh(2 * nx, 2 * ny, bounds),
            Structure::Unstructured => Err(Error::Unsupported(
                "refinement of unstructured meshes".into(),
            )),
        }
    }

    /// True when every element of `self` lies inside one element of `coarse`,
    /// so that the P1 space of `coarse` is contained in the P1 space of `self`.
    pub fn is_refinement_of(&self, coarse: &Mesh) -> bool {
        match (self.structure, coarse.structure) {
            (
                Structure::Interval { cells: f, a, b },
                Structure::Interval {
                    cells: c,
                    a: ca,
                    b: cb,
                },
            ) => a == ca && b == cb && f % c == 0,
            (
                Structure::Rectangle { nx, ny, bounds },
                Structure::Rectangle {
                    nx: cx,
                    ny: cy,
                    bounds: cbounds,
                },
            ) => bounds == cbounds && nx % cx == 0 && ny % cy == 0 && nx / cx == ny / cy,
            _ => self.id == coarse.id,
        }
    }

    /// Sup norm of a function sampled at the mesh nodes.
    pub fn sup(values: &[f64]) -> f64 {
        values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn build_interval_mesh(n_cells: usize, a: f64, b: f64) -> Result<Mesh> {
    if n_cells == 0 {
        return Err(invalid("n_cells", "must be positive"));
    }
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(invalid(
            "interval",
            format!("need finite a < b, got [{a}, {b}]"),
        ));
    }
    let dx = (b - a) / n_cells as f64;
    let nodes: Vec<Point> = (0..=n_cells)
        .map(|i| {
            if i == n_cells {
                [b, 0.0]
            } else {
                [a + i as f64 * dx, 0.0]
            }
        })
        .collect();
    let elements: Vec<Vec<usize>> = (0..n_cells).map(|i| vec![i, i + 1]).collect();
    let mut mesh = Mesh::assemble(
        1,
        nodes,
        elements,
        &[0, n_cells],
        Structure::Interval {
            cells: n_cells,
            a,
            b,
        },
    )?;
    mesh.h = dx;
    Ok(mesh)
}

/// Uniform grid of `nx * ny` cells, each split along its lower-left to
/// upper-right diagonal into two right triangles. Nodes are numbered row by
/// row, so the stiffness bandwidth is `nx + 2`.
pub fn build_triangle_mesh(nx: usize, ny: usize, bounds: Rect) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(invalid(
            "nx/ny",
            format!("must be positive, got {nx} x {ny}"),
        ));
    }
    if !(bounds.x0 < bounds.x1 && bounds.y0 < bounds.y1)
        || ![bounds.x0, bounds.x1, bounds.y0, bounds.y1]
            .iter()
            .all(|v| v.is_finite())
    {
        return Err(invalid(
            "bounds",
            format!("degenerate rectangle {bounds:?}"),
        ));
    }
    let dx = (bounds.x1 - bounds.x0) / nx as f64;
    let dy = (bounds.y1 - bounds.y0) / ny as f64;
    let coord =
        |i: usize, n: usize, lo: f64, hi: f64, d: f64| if i == n { hi } else { lo + i as f64 * d };
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut boundary = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            if i == 0 || j == 0 || i == nx || j == ny {
                boundary.push(nodes.len());
            }
            nodes.push([
                coord(i, nx, bounds.x0, bounds.x1, dx),
                coord(j, ny, bounds.y0, bounds.y1, dy),
            ]);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut elements = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v11, v01) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            elements.push(vec![v00, v10, v11]);
            elements.push(vec![v00, v11, v01]);
        }
    }
    Mesh::assemble(
        2,
        nodes,
        elements,
        &boundary,
        Structure::Rectangle { nx, ny, bounds },
    )
}

/// Nodal interpolation `I_h f`.
pub fn interpolate_nodal(f: impl Fn(Point) -> f64, mesh: &Mesh) -> Result<NodalVector> {
    let mut values = Vec::with_capacity(mesh.n_nodes());
    for (i, &p) in mesh.nodes().iter().enumerate() {
        let v = f(p);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                location: format!("node {i} ({}, {})", p[0], p[1]),
                value: v,
            });
        }
        values.push(v);
    }
    Ok(NodalVector {
        values,
        mesh_id: mesh.id(),
    })
}

pub fn mesh_size(mesh: &Mesh) -> f64 {
    mesh.h()
}

/// `max_T diam(T) / rho_T` with `rho_T` the diameter of the inscribed ball.
/// In 1D `rho_T := diam(T)`, so the ratio is 1.
pub fn shape_regularity(mesh: &Mesh) -> f64 {
    if mesh.dim() == 1 {
        return 1.0;
    }
    (0..mesh.n_elements())
        .map(|e| {
            let el = mesh.element(e);
            let p: Vec<Point> = el.iter().map(|&i| mesh.nodes()[i]).collect();
            let perimeter = dist(p[0], p[1]) + dist(p[1], p[2]) + dist(p[2], p[0]);
            let inradius = mesh.measure(e) / (perimeter / 2.0);
            mesh.diameter(e) / (2.0 * inradius)
        })
        .fold(0.0, f64::max)
}

/// Evaluates the P1 function on `coarse` at the nodes of `fine`.
pub fn prolongate(coarse: &Mesh, values: &[f64], fine: &Mesh) -> Result<NodalVector> {
    if values.len() != coarse.n_nodes() {
        return Err(Error::DimensionMismatch {
            context: "prolongate",
            expected: coarse.n_nodes(),
            found: values.len(),
        });
    }
    let mut out = Vec::with_capacity(fine.n_nodes());
    for &p in fine.nodes() {
        match coarse.evaluate(values, p) {
            Some(v) => out.push(v),
            None => {
                return Err(invalid(
                    "fine",
                    format!("node ({}, {}) outside the coarse mesh", p[0], p[1]),
                ))
            }
        }
    }
    Ok(NodalVector {
        values: out,
        mesh_id: fine.id(),
    })
}

/// Parses the plain-text mesh format: a header `dim n_nodes n_elems`, one
/// coordinate line per node, one 0-based index line per element, then one
/// line of boundary node indices.
pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hl, header) = lines.next().ok_or(Error::MeshFile {
        line: 1,
        reason: "empty file".into(),
    })?;
    let head = parse_numbers::<usize>(header, hl)?;
    if head.len() != 3 {
        return Err(Error::MeshFile {
            line: hl,
            reason: "header must be `dim n_nodes n_elems`".into(),
        });
    }
    let (dim, nn, ne) = (head[0], head[1], head[2]);
    let mut nodes = Vec::with_capacity(nn);
    for _ in 0..nn {
        let (ln, l) = lines.next().ok_or(Error::MeshFile {
            line: hl,
            reason: format!("expected {nn} node lines"),
        })?;
        let c = parse_numbers::<f64>(l, ln)?;
        if c.len() != dim {
            return Err(Error::MeshFile {
                line: ln,
                reason: format!("expected {dim} coordinates"),
            });
        }
        nodes.push([c[0], if dim == 2 { c[1] } else { 0.0 }]);
    }
    let mut elements = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (ln, l) = lines.next().ok_or(Error::MeshFile {
            line: hl,
            reason: format!("expected {ne} element lines"),
        })?;
        elements.push(parse_numbers::<usize>(l, ln)?);
    }
    let boundary = match lines.next() {
        Some((ln, l)) => parse_numbers::<usize>(l, ln)?,
        None => Vec::new(),
    };
    if let Some((ln, _)) = lines.next() {
        return Err(Error::MeshFile {
            line: ln,
            reason: "trailing content".into(),
        });
    }
    Mesh::from_parts(dim, nodes, elements, &boundary)
}

fn parse_numbers<T: std::str::FromStr>(line: &str, ln: usize) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<T>().map_err(|_| Error::MeshFile {
                line: ln,
                reason: format!("cannot parse `{t}`"),
            })
        })
        .collect()
}

pub fn write_mesh(mesh: &Mesh) -> String {
    let mut s = format!("{} {} {}\n", mesh.dim(), mesh.n_nodes(), mesh.n_elements());
    for p in mesh.nodes() {
        if mesh.dim() == 1 {
            s.push_str(&format!("{:e}\n", p[0]));
        } else {
            s.push_str(&format!("{:e} {:e}\n", p[0], p[1]));
        }
    }
    for el in mesh.elements() {
        let strs: Vec<String> = el.iter().map(usize::to_string).collect();
        s.push_str(&strs.join(" "));
        s.push('\n');
    }
    let b: Vec<String> = mesh.boundary_nodes().iter().map(usize::to_string).collect();
    s.push_str(&b.join(" "));
    s.push('\n');
    s
}

/// One real per mesh node, tagged with the mesh it lives on.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalVector {
    values: Vec<f64>,
    mesh_id: MeshId,
}

impl NodalVector {
    pub fn new(mesh: &Mesh, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::DimensionMismatch {
                context: "nodal vector",
                expected: mesh.n_nodes(),
                found: values.len(),
            });
        }
        Ok(Self {
            values,
            mesh_id: mesh.id(),
        })
    }

    pub fn zeros(mesh: &Mesh) -> Self {
        Self::constant(mesh, 0.0)
    }

    pub fn constant(mesh: &Mesh, c: f64) -> Self {
        Self {
            values: vec![c; mesh.n_nodes()],
            mesh_id: mesh.id(),
        }
    }

    pub(crate) fn from_raw(values: Vec<f64>, mesh_id: MeshId) -> Self {
        Self { values, mesh_id }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
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

    pub fn ensure_on(&self, mesh: &Mesh) -> Result<()> {
        if self.mesh_id != mesh.id() {
            return Err(Error::MeshMismatch {
                expected: mesh.id(),
                found: self.mesh_id,
            });
        }
        Ok(())
    }

    pub fn ensure_same(&self, other: &Self) -> Result<()> {
        if self.mesh_id != other.mesh_id {
            return Err(Error::MeshMismatch {
                expected: self.mesh_id,
                found: other.mesh_id,
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.values.iter().map(|&v| f(v)).collect(), self.mesh_id)
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.ensure_same(other)?;
        Ok(Self::from_raw(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            self.mesh_id,
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    pub fn sup_norm(&self) -> f64 {
        Mesh::sup(&self.values)
    }

    /// `max_i |self_i - other_i|`
    pub fn sup_distance(&self, other: &Self) -> Result<f64> {
        self.ensure_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    /// True when `self <= other + tol` at every node.
    pub fn le(&self, other: &Self, tol: f64) -> Result<bool> {
        self.ensure_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .all(|(a, b)| *a <= *b + tol))
    }
}

/// Shared handle used by constraint sets and operators.
pub type SharedMesh = Arc<Mesh>;
