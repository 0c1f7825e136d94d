//! Compressed sparse row matrices and a banded LU factorization.
//!
//! The structured meshes produced by [`crate::mesh`] number their nodes
//! lexicographically, so every assembled operator has a narrow band. A banded
//! LU with partial pivoting is therefore an exact direct solver at desk scale
//! and handles the nonsymmetric systems produced by advection terms and by
//! active-set row replacement.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicate entries are
    /// summed in input order, so the result is independent of hashing or
    /// threading.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of range");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut order = vec![0usize; triplets.len()];
        let mut next = counts.clone();
        for (k, &(r, _, _)) in triplets.iter().enumerate() {
            order[next[r]] = k;
            next[r] += 1;
        }
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend(
                order[counts[r]..counts[r + 1]]
                    .iter()
                    .map(|&k| (triplets[k].1, triplets[k].2)),
            );
            // stable: equal columns keep input order before summation
            scratch.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < scratch.len() {
                let c = scratch[k].0;
                let mut v = 0.0;
                while k < scratch.len() && scratch[k].0 == c {
                    v += scratch[k].1;
                    k += 1;
                }
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: d.to_vec(),
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut t = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), ncols, "ragged dense matrix");
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[s..e]
            .iter()
            .copied()
            .zip(self.values[s..e].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[s..e].binary_search(&j) {
            Ok(k) => self.values[s + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal_values(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols, "mul_vec dimension");
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `x^T A x`
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(i, j, v)| (j, i, v))
            .collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// `self + s * other`
    pub fn add_scaled(&self, other: &Self, s: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t = self.triplets();
        t.extend(other.triplets().into_iter().map(|(i, j, v)| (i, j, s * v)));
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows, "matmul dimension");
        let mut t = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; other.ncols];
        for i in 0..self.nrows {
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if !mark[j] {
                        mark[j] = true;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                t.push((i, j, acc[j]));
                acc[j] = 0.0;
                mark[j] = false;
            }
            touched.clear();
        }
        Self::from_triplets(self.nrows, other.ncols, &t)
    }

    /// `(A + A^T) / 2`
    pub fn symmetric_part(&self) -> Self {
        self.scaled(0.5).add_scaled(&self.transpose(), 0.5)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.nrows == self.ncols
            && (0..self.nrows).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    /// Keeps the columns with `Some(new_index)` in `map`, renumbering them.
    pub fn select_columns(&self, map: &[Option<usize>], new_ncols: usize) -> Self {
        assert_eq!(map.len(), self.ncols);
        let t: Vec<_> = self
            .triplets()
            .into_iter()
            .filter_map(|(i, j, v)| map[j].map(|jj| (i, jj, v)))
            .collect();
        Self::from_triplets(self.nrows, new_ncols, &t)
    }

    /// Replaces the listed rows by unit rows (`e_i^T`).
    pub fn with_unit_rows(&self, rows: &[bool]) -> Self {
        assert_eq!(rows.len(), self.nrows);
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            if rows[i] {
                t.push((i, i, 1.0));
            } else {
                t.extend(self.row(i).map(|(j, v)| (i, j, v)));
            }
        }
        Self::from_triplets(self.nrows, self.ncols, &t)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Lower and upper bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                if v == 0.0 {
                    continue;
                }
                if i > j {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }
}

/// LU factorization with partial pivoting in LAPACK-style band storage.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    band: Vec<f64>,
    pivots: Vec<usize>,
    condition: f64,
}

impl BandedLu {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                context: "banded LU (square matrix required)",
                expected: a.nrows(),
                found: a.ncols(),
            });
        }
        let n = a.nrows();
        let (kl, ku) = a.bandwidths();
        let ld = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            kl,
            ku,
            ld,
            band: vec![0.0; ld * n],
            pivots: vec![0; n],
            condition: 1.0,
        };
        for (i, j, v) in a.triplets() {
            let k = lu.idx(i, j);
            lu.band[k] = v;
        }
        let scale = a.max_abs();
        let tiny = scale * f64::EPSILON * (n.max(1) as f64);
        let (mut umin, mut umax) = (f64::INFINITY, 0.0f64);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + kl + ku).min(n - 1);
            let mut p = k;
            let mut best = lu.band[lu.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = lu.band[lu.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tiny || best == 0.0 {
                let condition = if umin.is_finite() && umin > 0.0 {
                    umax / umin
                } else {
                    f64::INFINITY
                };
                return Err(Error::Singular {
                    column: k,
                    condition,
                });
            }
            lu.pivots[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (ik, ip) = (lu.idx(k, j), lu.idx(p, j));
                    lu.band.swap(ik, ip);
                }
            }
            let pivot = lu.band[lu.idx(k, k)];
            umin = umin.min(pivot.abs());
            umax = umax.max(pivot.abs());
            for i in k + 1..=last_row {
                let ik = lu.idx(i, k);
                let l = lu.band[ik] / pivot;
                lu.band[ik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=last_col {
                    let kj = lu.band[lu.idx(k, j)];
                    let ij = lu.idx(i, j);
                    lu.band[ij] -= l * kj;
                }
            }
        }
        lu.condition = if n == 0 { 1.0 } else { umax / umin };
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        (self.kl + self.ku + i - j) + j * self.ld
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Ratio of the largest to smallest pivot magnitude; a cheap lower bound on
    /// the condition number.
    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "banded LU solve dimension");
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n.saturating_sub(1)) {
                    x[i] -= self.band[self.idx(i, k)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                s -= self.band[self.idx(k, j)] * x[j];
            }
            x[k] = s / self.band[self.idx(k, k)];
        }
        x
    }
}

/// Solves `A x = b`, checks `|A x - b|_inf <= rel_tol * (1 + |b|_inf)` and
/// applies one step of iterative refinement when the first solve misses it.
pub fn solve_checked(a: &CsrMatrix, b: &[f64], rel_tol: f64) -> Result<Vec<f64>> {
    let lu = BandedLu::factor(a)?;
    solve_with(&lu, a, b, rel_tol)
}

pub(crate) fn solve_with(
    lu: &BandedLu,
    a: &CsrMatrix,
    b: &[f64],
    rel_tol: f64,
) -> Result<Vec<f64>> {
    let bound = rel_tol * (1.0 + inf_norm(b));
    let mut x = lu.solve(b);
    let mut r = residual(a, &x, b);
    if inf_norm(&r) > bound {
        let dx = lu.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
        r = residual(a, &x, b);
    }
    let res = inf_norm(&r);
    if !res.is_finite() || res > bound {
        return Err(Error::IllConditioned {
            residual: res,
            bound,
            condition: lu.condition_estimate(),
        });
    }
    Ok(x)
}

/// `b - A x`
pub(crate) fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    a.mul_vec(x).iter().zip(b).map(|(ax, bi)| bi - ax).collect()
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let l = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= l * a[k][j];
                }
                b[i] -= l * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m =
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0), (0, 1, -1.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), 2.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn banded_lu_matches_dense_with_pivoting() {
        // nonsymmetric, needs row exchanges (zero leading diagonal)
        let rows = vec![
            vec![0.0, 2.0, 0.0, 0.0, 0.0],
            vec![1.0, 1.0, 3.0, 0.0, 0.0],
            vec![0.0, 4.0, -1.0, 2.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.5, 1.0],
            vec![0.0, 0.0, 0.0, 3.0, 2.0],
        ];
        let a = CsrMatrix::from_dense(&rows);
        let b = vec![1.0, -2.0, 0.5, 3.0, 1.0];
        let x = BandedLu::factor(&a).unwrap().solve(&b);
        let y = dense_solve(rows, b);
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-12, "{p} vs {q}");
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(matches!(
            BandedLu::factor(&a),
            Err(Error::Singular { column: 1, .. })
        ));
    }

    #[test]
    fn matmul_and_transpose() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 2.0, 0.0], vec![0.0, 1.0, -1.0]]);
        let ata = a.transpose().matmul(&a);
        assert_eq!(
            ata.to_dense(),
            vec![
                vec![1.0, 2.0, 0.0],
                vec![2.0, 5.0, -1.0],
                vec![0.0, -1.0, 1.0]
            ]
        );
        assert!(ata.is_symmetric(0.0));
        assert_eq!(ata.bandwidths(), (1, 1));
    }
}
