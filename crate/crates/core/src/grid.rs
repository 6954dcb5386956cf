//! Unit-box grids, grid functions with zero Dirichlet trace, and the discrete
//! L2 / H1 / H2 norms.
//!
//! Interior nodes are ordered lexicographically by their `(x1, x2[, x3])`
//! indices, so the last axis varies fastest. Every reduction in this module
//! walks the nodes in that order.
//!
//! The discrete H2 norm is
//!
//! ```text
//! ||u||_2^2 = h^d * sum_nodes ( u^2 + sum_i (D_i u)^2 + sum_{i<=j} (D_ij u)^2 )
//! ```
//!
//! with `D_i` the centered first difference, `D_ii` the standard second
//! difference and `D_ij` (i != j) the cross difference `D_i D_j`. Values on the
//! boundary are zero, so every stencil only reads interior or boundary nodes.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Uniform discretization of `[0,1]^dim` with `n` interior nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    h: f64,
}

pub fn make_grid(dim: usize, n_per_axis: usize) -> Result<Grid> {
    Grid::new(dim, n_per_axis)
}

impl Grid {
    pub fn new(dim: usize, n_per_axis: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidGrid(format!("dim must be 2 or 3, got {dim}")));
        }
        if n_per_axis < 3 {
            return Err(Error::InvalidGrid(format!(
                "n_per_axis must be >= 3, got {n_per_axis}"
            )));
        }
        Ok(Self {
            dim,
            n: n_per_axis,
            h: 1.0 / (n_per_axis as f64 + 1.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of interior nodes, `n^dim`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^dim` of the discrete L2 inner product.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    /// Index stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    /// 1-based node indices along each axis (unused axes are 0).
    pub fn node(&self, idx: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        let mut rest = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.n + 1;
            rest /= self.n;
        }
        out
    }

    /// Linear index of the node with 1-based indices `ijk`, or `None` if it lies on S.
    pub fn index(&self, ijk: [usize; 3]) -> Option<usize> {
        let mut idx = 0;
        for &i in ijk.iter().take(self.dim) {
            if i == 0 || i > self.n {
                return None;
            }
            idx = idx * self.n + (i - 1);
        }
        Some(idx)
    }

    /// Neighbor of `idx` at integer offset; `None` when it lies on (or beyond) S.
    pub fn offset(&self, idx: usize, delta: [i64; 3]) -> Option<usize> {
        let node = self.node(idx);
        let mut target = [0usize; 3];
        for axis in 0..self.dim {
            let j = node[axis] as i64 + delta[axis];
            if j <= 0 || j > self.n as i64 {
                return None;
            }
            target[axis] = j as usize;
        }
        self.index(target)
    }

    /// Physical coordinates of node `idx` (unused axes are 0).
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let node = self.node(idx);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = node[axis] as f64 * self.h;
        }
        x
    }

    /// Distance from node `idx` to the box surface S.
    pub fn distance_to_boundary(&self, idx: usize) -> f64 {
        let x = self.coords(idx);
        (0..self.dim)
            .map(|a| x[a].min(1.0 - x[a]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn id(&self) -> String {
        format!("{}d-n{}", self.dim, self.n)
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.id(),
                right: other.id(),
            })
        }
    }
}

/// Real values on the interior nodes; the trace on S is identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values for grid {}, got {}",
                grid.len(),
                grid.id(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    /// Internal constructor for values produced by arithmetic on valid functions.
    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    /// Samples `f` at the interior nodes.
    pub fn from_fn(grid: Grid, f: impl Fn(&[f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at 1-based node indices; nodes on S evaluate to exactly 0.
    pub fn at(&self, ijk: [usize; 3]) -> f64 {
        self.grid.index(ijk).map_or(0.0, |i| self.values[i])
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self::from_vec_unchecked(self.grid, self.values.iter().map(|v| alpha * v).collect())
    }

    /// `alpha * self + beta * other`.
    pub fn lin_comb(&self, alpha: f64, other: &GridFunction, beta: f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self::from_vec_unchecked(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &GridFunction) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn add(&self, other: &GridFunction) -> Result<Self> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes the plain-text field dump: header `dim n h`, then one value per line.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", dump_header(&self.grid))?;
        for v in &self.values {
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    pub fn to_dump_string(&self) -> String {
        let mut s = dump_header(&self.grid);
        s.push('\n');
        for v in &self.values {
            let _ = writeln!(s, "{v:.16e}");
        }
        s
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let (grid, values) = read_dump_raw(r)?;
        Self::from_values(grid, values)
    }
}

fn dump_header(grid: &Grid) -> String {
    format!("{} {} {:.16e}", grid.dim, grid.n, grid.h)
}

/// Parses a dump into its header grid and the raw value list (any length).
pub(crate) fn read_dump_raw<R: BufRead>(r: R) -> Result<(Grid, Vec<f64>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty field dump".into()))??;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!("bad dump header {header:?}")));
    }
    let dim: usize = parts[0]
        .parse()
        .map_err(|_| Error::Parse(format!("bad dim in header {header:?}")))?;
    let n: usize = parts[1]
        .parse()
        .map_err(|_| Error::Parse(format!("bad n in header {header:?}")))?;
    let h: f64 = parts[2]
        .parse()
        .map_err(|_| Error::Parse(format!("bad h in header {header:?}")))?;
    let grid = Grid::new(dim, n)?;
    if (grid.h - h).abs() > 1e-12 {
        return Err(Error::Parse(format!(
            "header spacing {h} inconsistent with n = {n}"
        )));
    }
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(
            t.parse()
                .map_err(|_| Error::Parse(format!("line {}: bad value {t:?}", lineno + 2)))?,
        );
    }
    Ok((grid, values))
}

/// `(u, v)_h = h^dim * sum_i u_i v_i`, summed in canonical node order.
pub fn inner(u: &GridFunction, v: &GridFunction) -> Result<f64> {
    u.grid.ensure_same(&v.grid)?;
    Ok(u.grid.cell_volume() * dot(&u.values, &v.values))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_h0(u: &GridFunction) -> f64 {
    (u.grid.cell_volume() * dot(&u.values, &u.values)).sqrt()
}

pub fn norm_h1(u: &GridFunction) -> f64 {
    let g = &u.grid;
    let mut sum = dot(&u.values, &u.values);
    for axis in 0..g.dim {
        let d = centered_diff(g, &u.values, axis);
        sum += dot(&d, &d);
    }
    (g.cell_volume() * sum).sqrt()
}

pub fn norm_h2(u: &GridFunction) -> f64 {
    h2_quadratic(&u.grid, &u.values).sqrt()
}

/// `||u||_2^2` for a raw value vector on `grid`.
pub(crate) fn h2_quadratic(grid: &Grid, u: &[f64]) -> f64 {
    let mut sum = dot(u, u);
    for axis in 0..grid.dim {
        let d = centered_diff(grid, u, axis);
        sum += dot(&d, &d);
    }
    for i in 0..grid.dim {
        let d = second_diff(grid, u, i);
        sum += dot(&d, &d);
        for j in i + 1..grid.dim {
            let d = cross_diff(grid, u, i, j);
            sum += dot(&d, &d);
        }
    }
    grid.cell_volume() * sum
}

/// Applies the Gram operator `G` of the discrete H2 inner product,
/// `(u, v)_2 = u . G v`.
pub(crate) fn h2_gram_apply(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let mut out = u.to_vec();
    for axis in 0..grid.dim {
        // D_i is skew: D_i^T D_i = -D_i D_i
        let d = centered_diff(grid, u, axis);
        let dd = centered_diff(grid, &d, axis);
        for (o, v) in out.iter_mut().zip(&dd) {
            *o -= v;
        }
    }
    for i in 0..grid.dim {
        let s = second_diff(grid, u, i);
        let ss = second_diff(grid, &s, i);
        for (o, v) in out.iter_mut().zip(&ss) {
            *o += v;
        }
        for j in i + 1..grid.dim {
            let c = cross_diff(grid, u, i, j);
            let cc = cross_diff(grid, &c, i, j);
            for (o, v) in out.iter_mut().zip(&cc) {
                *o += v;
            }
        }
    }
    let w = grid.cell_volume();
    out.iter_mut().for_each(|v| *v *= w);
    out
}

/// Bandwidth of `G` in the canonical ordering.
pub(crate) fn h2_gram_bandwidth(grid: &Grid) -> usize {
    // widest term is (D_0 D_1)^2, reaching 2 steps along both axes
    2 * (grid.stride(0) + grid.stride(1))
}

/// `(u(x+h e_i) - u(x-h e_i)) / 2h`.
pub(crate) fn centered_diff(grid: &Grid, u: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.n;
    let stride = grid.stride(axis);
    let scale = 0.5 / grid.h;
    let mut out = vec![0.0; u.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let i = (idx / stride) % n;
        let plus = if i + 1 < n { u[idx + stride] } else { 0.0 };
        let minus = if i > 0 { u[idx - stride] } else { 0.0 };
        *o = (plus - minus) * scale;
    }
    out
}

/// `(u(x+h e_i) - 2u(x) + u(x-h e_i)) / h^2`.
pub(crate) fn second_diff(grid: &Grid, u: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.n;
    let stride = grid.stride(axis);
    let scale = 1.0 / (grid.h * grid.h);
    let mut out = vec![0.0; u.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let i = (idx / stride) % n;
        let plus = if i + 1 < n { u[idx + stride] } else { 0.0 };
        let minus = if i > 0 { u[idx - stride] } else { 0.0 };
        *o = (plus - 2.0 * u[idx] + minus) * scale;
    }
    out
}

/// Cross difference `D_i D_j u`, i.e. the four-corner stencil over `4h^2`.
pub(crate) fn cross_diff(grid: &Grid, u: &[f64], i: usize, j: usize) -> Vec<f64> {
    let d = centered_diff(grid, u, j);
    centered_diff(grid, &d, i)
}

/// Discrete Dirichlet energy `h^d * sum over all edges ((u(x+h e_i) - u(x)) / h)^2`,
/// including the edges that touch S.
pub fn gradient_energy(u: &GridFunction) -> f64 {
    let g = &u.grid;
    let n = g.n;
    let inv_h = 1.0 / g.h;
    let mut sum = 0.0;
    for idx in 0..g.len() {
        for axis in 0..g.dim {
            let stride = g.stride(axis);
            let i = (idx / stride) % n;
            // forward edge from this node
            let plus = if i + 1 < n {
                u.values[idx + stride]
            } else {
                0.0
            };
            let d = (plus - u.values[idx]) * inv_h;
            sum += d * d;
            // the edge from S into the first interior node
            if i == 0 {
                let d = u.values[idx] * inv_h;
                sum += d * d;
            }
        }
    }
    g.cell_volume() * sum
}
