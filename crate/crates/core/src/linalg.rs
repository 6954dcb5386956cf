//! Sparse row storage for assembled stencils and banded factorizations used by
//! the direct oracle, the estimators and the diagnostics.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Compressed sparse row matrix. Columns within a row are sorted and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(col, value)` lists; duplicate columns are summed.
    pub fn from_rows(n: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        assert_eq!(rows.len(), n);
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let start = cols.len();
            for (c, v) in row {
                if cols.len() > start && *cols.last().unwrap() == c {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_rows(n, vec![Vec::new(); n])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *yi = acc;
        }
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, &xi) in x.iter().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.cols[k]] += self.vals[k] * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let mut rows = vec![Vec::new(); self.n];
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        Self::from_rows(self.n, rows)
    }

    /// Entrywise `alpha * self + beta * other`, computed per entry.
    pub fn lin_comb(&self, alpha: f64, other: &SparseMatrix, beta: f64) -> Self {
        self.combine(other, |a, b| alpha * a + beta * b)
    }

    /// Entrywise `f(self_ij, other_ij)` over the union sparsity pattern.
    pub fn combine(&self, other: &SparseMatrix, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.n, other.n);
        let rows = (0..self.n)
            .map(|i| {
                let mut merged: Vec<(usize, f64)> = Vec::new();
                let mut a = self.row(i).peekable();
                let mut b = other.row(i).peekable();
                loop {
                    match (a.peek().copied(), b.peek().copied()) {
                        (Some((ca, va)), Some((cb, vb))) if ca == cb => {
                            merged.push((ca, f(va, vb)));
                            a.next();
                            b.next();
                        }
                        (Some((ca, va)), Some((cb, _))) if ca < cb => {
                            merged.push((ca, f(va, 0.0)));
                            a.next();
                        }
                        (Some(_), Some((cb, vb))) => {
                            merged.push((cb, f(0.0, vb)));
                            b.next();
                        }
                        (Some((ca, va)), None) => {
                            merged.push((ca, f(va, 0.0)));
                            a.next();
                        }
                        (None, Some((cb, vb))) => {
                            merged.push((cb, f(0.0, vb)));
                            b.next();
                        }
                        (None, None) => break,
                    }
                }
                merged
            })
            .collect();
        Self::from_rows(self.n, rows)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    /// Exact entrywise symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| self.get(j, i) == v))
    }

    /// Upper bound on `||A||_2` via the Gershgorin row and column sums.
    pub fn norm_bound(&self) -> f64 {
        let mut row_max: f64 = 0.0;
        let mut col_sum = vec![0.0; self.n];
        for i in 0..self.n {
            let mut s = 0.0;
            for (j, v) in self.row(i) {
                s += v.abs();
                col_sum[j] += v.abs();
            }
            row_max = row_max.max(s);
        }
        let col_max = col_sum.into_iter().fold(0.0, f64::max);
        (row_max * col_max).sqrt()
    }

    /// Smallest Gershgorin lower bound `a_ii - sum_{j != i} |a_ij|`.
    pub fn gershgorin_lower(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let mut diag = 0.0;
                let mut off = 0.0;
                for (j, v) in self.row(i) {
                    if j == i {
                        diag += v;
                    } else {
                        off += v.abs();
                    }
                }
                diag - off
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// `(row, col, value)` triplets in row-major order.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .collect()
    }
}

/// Banded LU with partial pivoting, stored by columns in the `gbtrf` layout:
/// `kl` extra rows of fill above the upper band, so column `j` holds rows
/// `j - kl - ku ..= j + kl` contiguously.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    /// Upper reach of `U`, `kl + ku`.
    up: usize,
    ld: usize,
    band: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.n();
        let bw = a.bandwidth();
        let (kl, up) = (bw, 2 * bw);
        let ld = up + kl + 1;
        let at = |i: usize, j: usize| j * ld + up + i - j;
        let mut band = vec![0.0; n * ld];
        for i in 0..n {
            for (j, v) in a.row(i) {
                band[at(i, j)] = v;
            }
        }
        let scale = a.norm_bound().max(f64::MIN_POSITIVE);
        let mut pivots = vec![0; n];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let col = &band[at(k, k)..=at(last_row, k)];
            let (offset, best) = col.iter().enumerate().fold((0, -1.0), |acc, (i, v)| {
                if v.abs() > acc.1 {
                    (i, v.abs())
                } else {
                    acc
                }
            });
            let p = k + offset;
            pivots[k] = p;
            if best <= f64::EPSILON * 1e-3 * scale {
                return Err(Error::Singular {
                    context: format!("zero pivot in column {k} of banded LU"),
                });
            }
            let last_col = (k + up).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    band.swap(at(k, j), at(p, j));
                }
            }
            let pivot = band[at(k, k)];
            band[at(k + 1, k)..=at(last_row, k)]
                .iter_mut()
                .for_each(|v| *v /= pivot);
            if last_row == k {
                continue;
            }
            for j in k + 1..=last_col {
                let (head, tail) = band.split_at_mut(j * ld);
                let l = &head[at(k + 1, k)..=at(last_row, k)];
                let col_j = &mut tail[up + k - j..];
                let ukj = col_j[0];
                if ukj != 0.0 {
                    col_j[1..=last_row - k]
                        .iter_mut()
                        .zip(l)
                        .for_each(|(v, li)| *v -= li * ukj);
                }
            }
        }
        Ok(Self {
            n,
            kl,
            up,
            ld,
            band,
            pivots,
        })
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        j * self.ld + self.up + i - j
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            let last = (k + self.kl).min(n - 1);
            if xk != 0.0 && last > k {
                let l = &self.band[self.at(k + 1, k)..=self.at(last, k)];
                x[k + 1..=last]
                    .iter_mut()
                    .zip(l)
                    .for_each(|(xi, li)| *xi -= li * xk);
            }
        }
        for k in (0..n).rev() {
            let xk = x[k] / self.band[self.at(k, k)];
            x[k] = xk;
            let first = k.saturating_sub(self.up);
            if xk != 0.0 && first < k {
                let u = &self.band[self.at(first, k)..self.at(k, k)];
                x[first..k]
                    .iter_mut()
                    .zip(u)
                    .for_each(|(xi, ui)| *xi -= ui * xk);
            }
        }
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        // U^T y = b
        for k in 0..n {
            let first = k.saturating_sub(self.up);
            let u = &self.band[self.at(first, k)..self.at(k, k)];
            let acc: f64 = u.iter().zip(&x[first..k]).map(|(ui, xi)| ui * xi).sum();
            x[k] = (x[k] - acc) / self.band[self.at(k, k)];
        }
        // L^T with the row interchanges in reverse
        for k in (0..n).rev() {
            let last = (k + self.kl).min(n - 1);
            if last > k {
                let l = &self.band[self.at(k + 1, k)..=self.at(last, k)];
                let acc: f64 = l.iter().zip(&x[k + 1..=last]).map(|(li, xi)| li * xi).sum();
                x[k] -= acc;
            }
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
        }
        x
    }
}

/// Symmetric banded `L D L^T` without pivoting. The signs of `D` give the
/// inertia of the matrix.
#[derive(Debug, Clone)]
pub struct BandedLdlt {
    n: usize,
    bw: usize,
    lower: Vec<f64>,
    diag: Vec<f64>,
}

impl BandedLdlt {
    /// Factors `a + shift * I`; `a` must be symmetric.
    pub fn factor_shifted(a: &SparseMatrix, shift: f64) -> Result<Self> {
        let n = a.n();
        let bw = a.bandwidth();
        let w = bw + 1;
        // row i holds columns i-bw ..= i
        let mut lower = vec![0.0; n * w];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    lower[i * w + (j + bw - i)] = v;
                }
            }
            lower[i * w + bw] += shift;
        }
        let mut diag = vec![0.0; n];
        let mut work = vec![0.0; w];
        // row i, columns lo..i, lives at lower[i * w + bw - (i - lo) .. i * w + bw]
        let row = |i: usize, lo: usize| i * w + bw - (i - lo)..i * w + bw;
        for j in 0..n {
            let k0 = j.saturating_sub(bw);
            // work[k - k0] = L_jk d_k
            let lj = &lower[row(j, k0)];
            work[..j - k0]
                .iter_mut()
                .zip(lj.iter().zip(&diag[k0..j]))
                .for_each(|(t, (l, d))| *t = l * d);
            let d = lower[j * w + bw]
                - lj.iter()
                    .zip(&work[..j - k0])
                    .map(|(l, t)| l * t)
                    .sum::<f64>();
            if d == 0.0 || !d.is_finite() {
                return Err(Error::Singular {
                    context: format!("zero pivot at row {j} of LDL^T"),
                });
            }
            diag[j] = d;
            for i in j + 1..(j + bw + 1).min(n) {
                let ki0 = i.saturating_sub(bw).max(k0);
                let acc: f64 = lower[row(i, ki0)]
                    .iter()
                    .zip(&work[ki0 - k0..j - k0])
                    .map(|(l, t)| l * t)
                    .sum();
                let slot = i * w + (j + bw - i);
                lower[slot] = (lower[slot] - acc) / d;
            }
        }
        Ok(Self { n, bw, lower, diag })
    }

    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        Self::factor_shifted(a, 0.0)
    }

    /// Number of negative pivots, i.e. eigenvalues below the shift.
    pub fn negative_count(&self) -> usize {
        self.diag.iter().filter(|&&d| d < 0.0).count()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        let row = |i: usize, lo: usize| &self.lower[i * w + bw - (i - lo)..i * w + bw];
        let mut x = b.to_vec();
        for i in 0..n {
            let k0 = i.saturating_sub(bw);
            let acc: f64 = row(i, k0).iter().zip(&x[k0..i]).map(|(l, xk)| l * xk).sum();
            x[i] -= acc;
        }
        for (xi, d) in x.iter_mut().zip(&self.diag) {
            *xi /= d;
        }
        for k in (0..n).rev() {
            let xk = x[k];
            let j0 = k.saturating_sub(bw);
            x[j0..k]
                .iter_mut()
                .zip(row(k, j0))
                .for_each(|(xj, l)| *xj -= l * xk);
        }
        x
    }
}

/// Banded factorization of a matrix given only as a matrix-vector product with
/// known symmetric bandwidth: columns are probed with interleaved unit vectors.
pub(crate) fn probe_banded(
    n: usize,
    bw: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
) -> SparseMatrix {
    let period = 2 * bw + 1;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut e = vec![0.0; n];
    for color in 0..period.min(n) {
        for j in (color..n).step_by(period) {
            e[j] = 1.0;
        }
        let col = apply(&e);
        for j in (color..n).step_by(period) {
            e[j] = 0.0;
            for i in j.saturating_sub(bw)..(j + bw + 1).min(n) {
                if col[i] != 0.0 {
                    rows[i].push((j, col[i]));
                }
            }
        }
    }
    SparseMatrix::from_rows(n, rows)
}
