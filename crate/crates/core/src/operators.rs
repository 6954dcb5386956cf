//! Flux-form stencil assembly of `Lu = -d_i(a_ij d_j u) + q u`, the Dirichlet
//! Laplacian, centered first-order drift terms and homotopy combinations.
//!
//! Diagonal terms use the face-midpoint coefficients `a_ii(x +- h/2 e_i)`.
//! Mixed terms use the symmetric cross stencil: the `(x, x + e_i + e_j)` entry
//! is `-(a_ij(x + e_i) + a_ij(x + e_j)) / 4h^2`, with the other three corners
//! following by sign and reflection. All sample coordinates are built from
//! integer node indices, so the assembled matrix is exactly symmetric.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::coefficients::{check_ellipticity, CoefficientField, ScalarFn};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::linalg::SparseMatrix;

/// A linear map on grid functions, stored as its assembled stencil matrix.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    grid: Grid,
    matrix: Arc<SparseMatrix>,
    symmetric: bool,
    description: String,
}

impl DiscreteOperator {
    pub fn from_matrix(
        grid: Grid,
        matrix: SparseMatrix,
        description: impl Into<String>,
    ) -> Result<Self> {
        if matrix.n() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "matrix of order {} on grid {}",
                matrix.n(),
                grid.id()
            )));
        }
        let symmetric = matrix.is_symmetric();
        Ok(Self {
            grid,
            matrix: Arc::new(matrix),
            symmetric,
            description: description.into(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn with_description(mut self, d: impl Into<String>) -> Self {
        self.description = d.into();
        self
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.grid.ensure_same(u.grid())?;
        Ok(GridFunction::from_vec_unchecked(
            self.grid,
            self.matrix.matvec(u.values()),
        ))
    }

    pub fn apply_raw(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.matvec(u)
    }

    pub fn apply_transpose_raw(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.matvec_transpose(u)
    }

    /// `self - other`.
    pub fn minus(&self, other: &DiscreteOperator) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Self::from_matrix(
            self.grid,
            self.matrix.lin_comb(1.0, &other.matrix, -1.0),
            format!("{}-{}", self.description, other.description),
        )
    }

    pub fn plus(&self, other: &DiscreteOperator) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Self::from_matrix(
            self.grid,
            self.matrix.lin_comb(1.0, &other.matrix, 1.0),
            format!("{}+{}", self.description, other.description),
        )
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            grid: self.grid,
            matrix: Arc::new(self.matrix.scaled(alpha)),
            symmetric: self.symmetric,
            description: format!("{alpha}*{}", self.description),
        }
    }

    /// `self + c I`.
    pub fn shifted(&self, c: f64) -> Self {
        let id = SparseMatrix::identity(self.grid.len());
        Self {
            grid: self.grid,
            matrix: Arc::new(self.matrix.lin_comb(1.0, &id, c)),
            symmetric: self.symmetric,
            description: format!("{}+{c}I", self.description),
        }
    }

    /// Dense-oracle export: one `row col value` line per stored entry.
    pub fn triplets_text(&self) -> String {
        let mut s = String::new();
        for (i, j, v) in self.matrix.triplets() {
            let _ = writeln!(s, "{i} {j} {v:.16e}");
        }
        s
    }
}

fn point(grid: &Grid, node: [i64; 3], half_axis: Option<usize>) -> [f64; 3] {
    let h = grid.h();
    let mut x = [0.0; 3];
    for a in 0..grid.dim() {
        let k = node[a] as f64 + if half_axis == Some(a) { 0.5 } else { 0.0 };
        x[a] = k * h;
    }
    x
}

fn unit(axis: usize) -> [i64; 3] {
    let mut e = [0; 3];
    e[axis] = 1;
    e
}

fn add(a: [i64; 3], b: [i64; 3], sb: i64) -> [i64; 3] {
    [a[0] + sb * b[0], a[1] + sb * b[1], a[2] + sb * b[2]]
}

/// Assembles the divergence-form operator; rejects non-elliptic coefficients.
pub fn assemble(coeffs: &CoefficientField, grid: &Grid) -> Result<DiscreteOperator> {
    check_ellipticity(coeffs, grid)?;
    let dim = grid.dim();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let quarter = 0.25 * inv_h2;
    let mixed = coeffs.has_mixed_terms();
    let rows = (0..grid.len())
        .map(|idx| {
            let nd = grid.node(idx);
            let x: [i64; 3] = [nd[0] as i64, nd[1] as i64, nd[2] as i64];
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(1 + 2 * dim * dim);
            let mut diag = coeffs.q().eval(&point(grid, x, None));
            for i in 0..dim {
                let e = unit(i);
                let a_plus = coeffs.a_at(i, i, &point(grid, x, Some(i)));
                let a_minus = coeffs.a_at(i, i, &point(grid, add(x, e, -1), Some(i)));
                diag += (a_plus + a_minus) * inv_h2;
                if let Some(j) = grid.offset(idx, e) {
                    row.push((j, -a_plus * inv_h2));
                }
                if let Some(j) = grid.offset(idx, [-e[0], -e[1], -e[2]]) {
                    row.push((j, -a_minus * inv_h2));
                }
            }
            if mixed {
                for i in 0..dim {
                    for j in i + 1..dim {
                        let f = coeffs.a(i, j);
                        if f.is_zero() {
                            continue;
                        }
                        let (ei, ej) = (unit(i), unit(j));
                        let a = |n: [i64; 3]| f.eval(&point(grid, n, None));
                        let (ap_i, am_i) = (a(add(x, ei, 1)), a(add(x, ei, -1)));
                        let (ap_j, am_j) = (a(add(x, ej, 1)), a(add(x, ej, -1)));
                        let corners = [
                            (add(ei, ej, 1), -(ap_i + ap_j)),
                            (add(ei, ej, -1), ap_i + am_j),
                            (add([0; 3], add(ei, ej, -1), -1), am_i + ap_j),
                            (add([0; 3], add(ei, ej, 1), -1), -(am_i + am_j)),
                        ];
                        for (d, w) in corners {
                            if let Some(k) = grid.offset(idx, d) {
                                row.push((k, w * quarter));
                            }
                        }
                    }
                }
            }
            row.push((idx, diag));
            row
        })
        .collect();
    let op = DiscreteOperator::from_matrix(*grid, SparseMatrix::from_rows(grid.len(), rows), "L")?;
    debug_assert!(op.symmetric, "flux-form assembly must be symmetric");
    Ok(op)
}

/// The Dirichlet Laplacian `L0 = -Delta` (standard `2 dim + 1` point stencil).
pub fn assemble_laplacian(grid: &Grid) -> DiscreteOperator {
    assemble(&CoefficientField::identity(grid.dim()), grid)
        .expect("identity coefficients are elliptic")
        .with_description("L0")
}

/// Centered drift `L'u = b . grad u`.
pub fn assemble_first_order(b: &[ScalarFn], grid: &Grid) -> Result<DiscreteOperator> {
    if b.len() != grid.dim() {
        return Err(Error::InvalidArgument(format!(
            "drift has {} components on a {}-d grid",
            b.len(),
            grid.dim()
        )));
    }
    let half = 0.5 / grid.h();
    let rows = (0..grid.len())
        .map(|idx| {
            let x = grid.coords(idx);
            let mut row = Vec::with_capacity(2 * grid.dim());
            for (i, bi) in b.iter().enumerate() {
                let v = bi.eval(&x);
                if !v.is_finite() {
                    return Err(Error::InvalidArgument(format!("drift not finite at {x:?}")));
                }
                let e = unit(i);
                if let Some(j) = grid.offset(idx, e) {
                    row.push((j, v * half));
                }
                if let Some(j) = grid.offset(idx, [-e[0], -e[1], -e[2]]) {
                    row.push((j, -v * half));
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    DiscreteOperator::from_matrix(*grid, SparseMatrix::from_rows(grid.len(), rows), "L'")
}

/// `L_s = L0 + s (L - L0)`, entrywise; the endpoints return the inputs unchanged.
pub fn homotopy(l0: &DiscreteOperator, l: &DiscreteOperator, s: f64) -> Result<DiscreteOperator> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::HomotopyParameter(s));
    }
    l0.grid.ensure_same(&l.grid)?;
    let description = format!("L_s(s={s})");
    if s == 0.0 {
        return Ok(l0.clone().with_description(description));
    }
    if s == 1.0 {
        return Ok(l.clone().with_description(description));
    }
    let matrix = l0.matrix.combine(&l.matrix, |a0, a1| a0 + s * (a1 - a0));
    Ok(DiscreteOperator {
        grid: l0.grid,
        symmetric: matrix.is_symmetric(),
        matrix: Arc::new(matrix),
        description,
    })
}
