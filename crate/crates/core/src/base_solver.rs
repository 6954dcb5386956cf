//! The Laplacian solver `L0^{-1}` that the continuation method starts from,
//! plus the banded direct solve used as a verification oracle.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{dot, Grid, GridFunction};
use crate::linalg::BandedLu;
use crate::operators::DiscreteOperator;

/// A linear solve `x = A^{-1} b` on raw node vectors.
pub trait LinearSolve {
    fn solve_raw(&self, b: &[f64]) -> Result<Vec<f64>>;

    /// `x = A^{-T} b`.
    fn solve_transpose_raw(&self, b: &[f64]) -> Result<Vec<f64>>;
}

/// Result of a conjugate-direction solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients for a symmetric positive definite `apply`.
/// Stops when the true residual satisfies `||b - A x|| <= rtol ||b||`.
pub fn pcg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    x0: Option<&[f64]>,
    rtol: f64,
    max_iters: usize,
    what: &str,
) -> Result<(Vec<f64>, CgStats)> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let mut iterations = 0;
    let mut history = Vec::new();
    // restarts recompute the true residual so the final check is honest
    loop {
        let ax = apply(&x);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let rel = dot(&r, &r).sqrt() / b_norm;
        history.push(rel);
        if rel <= rtol {
            return Ok((
                x,
                CgStats {
                    iterations,
                    relative_residual: rel,
                },
            ));
        }
        if iterations >= max_iters {
            return Err(Error::NotConverged {
                what: what.to_string(),
                iterations,
                residual: rel,
                history,
            });
        }
        let mut z = precondition(&r)?;
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        while iterations < max_iters {
            iterations += 1;
            let ap = apply(&p);
            let pap = dot(&p, &ap);
            if pap <= 0.0 || !pap.is_finite() {
                return Err(Error::NotConverged {
                    what: format!("{what} (operator not positive definite)"),
                    iterations,
                    residual: dot(&r, &r).sqrt() / b_norm,
                    history,
                });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rel = dot(&r, &r).sqrt() / b_norm;
            if rel <= 0.5 * rtol {
                break;
            }
            z = precondition(&r)?;
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
    }
}

/// Matrix-free `-Delta_h u` with the `2 dim + 1` point stencil.
pub fn apply_laplacian_raw(grid: &Grid, u: &[f64]) -> Vec<f64> {
    let n = grid.n_per_axis();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut out = vec![0.0; u.len()];
    let diag = 2.0 * grid.dim() as f64;
    for (idx, o) in out.iter_mut().enumerate() {
        let mut acc = diag * u[idx];
        for axis in 0..grid.dim() {
            let s = grid.stride(axis);
            let i = (idx / s) % n;
            if i + 1 < n {
                acc -= u[idx + s];
            }
            if i > 0 {
                acc -= u[idx - s];
            }
        }
        *o = acc * inv_h2;
    }
    out
}

/// Iteration cap `20 n dim` for the Laplacian conjugate-gradient solve.
pub fn laplacian_iteration_cap(grid: &Grid) -> usize {
    20 * grid.n_per_axis() * grid.dim()
}

/// Solves `L0 u = f` by conjugate gradients to `||L0 u - f|| <= rtol ||f||`.
pub fn solve_laplacian(f: &GridFunction, rtol: f64) -> Result<GridFunction> {
    solve_laplacian_with_stats(f, rtol).map(|(u, _)| u)
}

pub fn solve_laplacian_with_stats(f: &GridFunction, rtol: f64) -> Result<(GridFunction, CgStats)> {
    if !(rtol > 0.0 && rtol <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "rtol {rtol} outside (0, 1e-2]"
        )));
    }
    let grid = *f.grid();
    let (u, stats) = pcg(
        |x| apply_laplacian_raw(&grid, x),
        |r| Ok(r.to_vec()),
        f.values(),
        None,
        rtol,
        laplacian_iteration_cap(&grid),
        "Laplacian CG",
    )?;
    Ok((GridFunction::from_vec_unchecked(grid, u), stats))
}

/// CG Laplacian solve as a [`LinearSolve`].
#[derive(Debug, Clone, Copy)]
pub struct CgLaplacian {
    pub grid: Grid,
    pub rtol: f64,
}

impl LinearSolve for CgLaplacian {
    fn solve_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        let g = self.grid;
        pcg(
            |x| apply_laplacian_raw(&g, x),
            |r| Ok(r.to_vec()),
            b,
            None,
            self.rtol,
            laplacian_iteration_cap(&g),
            "Laplacian CG",
        )
        .map(|(x, _)| x)
    }

    fn solve_transpose_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_raw(b)
    }
}

/// Exact `L0^{-1}` by diagonalizing the stencil with the discrete sine transform
/// along every axis.
#[derive(Clone)]
pub struct SpectralLaplacian {
    grid: Grid,
    fft: Arc<dyn Fft<f64>>,
    eig_1d: Vec<f64>,
}

impl std::fmt::Debug for SpectralLaplacian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralLaplacian")
            .field("grid", &self.grid)
            .finish()
    }
}

impl SpectralLaplacian {
    pub fn new(grid: Grid) -> Self {
        let n = grid.n_per_axis();
        let fft = FftPlanner::new().plan_fft_forward(2 * (n + 1));
        let h = grid.h();
        let eig_1d = (1..=n)
            .map(|k| 4.0 / (h * h) * (0.5 * k as f64 * std::f64::consts::PI * h).sin().powi(2))
            .collect();
        Self { grid, fft, eig_1d }
    }

    /// Unnormalized DST-I along `axis`: `X_k = sum_j x_j sin(pi j k / (n+1))`.
    fn dst_axis(&self, data: &mut [f64], axis: usize) {
        let n = self.grid.n_per_axis();
        let m = 2 * (n + 1);
        let stride = self.grid.stride(axis);
        let lines: Vec<usize> = (0..data.len())
            .filter(|&i| (i / stride).is_multiple_of(n))
            .collect();
        let mut buf = vec![Complex::new(0.0, 0.0); m * lines.len()];
        for (l, &start) in lines.iter().enumerate() {
            let chunk = &mut buf[l * m..(l + 1) * m];
            for j in 0..n {
                let v = data[start + j * stride];
                chunk[j + 1] = Complex::new(v, 0.0);
                chunk[m - 1 - j] = Complex::new(-v, 0.0);
            }
        }
        self.fft.process(&mut buf);
        for (l, &start) in lines.iter().enumerate() {
            let chunk = &buf[l * m..(l + 1) * m];
            for k in 0..n {
                data[start + k * stride] = -0.5 * chunk[k + 1].im;
            }
        }
    }

    pub fn solve(&self, f: &GridFunction) -> Result<GridFunction> {
        self.grid.ensure_same(f.grid())?;
        Ok(GridFunction::from_vec_unchecked(
            self.grid,
            self.solve_vec(f.values()),
        ))
    }

    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let n = g.n_per_axis();
        let mut data = b.to_vec();
        for axis in 0..g.dim() {
            self.dst_axis(&mut data, axis);
        }
        for (idx, v) in data.iter_mut().enumerate() {
            let node = g.node(idx);
            let lam: f64 = (0..g.dim()).map(|a| self.eig_1d[node[a] - 1]).sum();
            *v /= lam;
        }
        for axis in 0..g.dim() {
            self.dst_axis(&mut data, axis);
        }
        let norm = (2.0 / (n as f64 + 1.0)).powi(g.dim() as i32);
        data.iter_mut().for_each(|v| *v *= norm);
        data
    }
}

impl LinearSolve for SpectralLaplacian {
    fn solve_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve_vec(b))
    }

    fn solve_transpose_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve_vec(b))
    }
}

impl<T: LinearSolve + ?Sized> LinearSolve for &T {
    fn solve_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        (**self).solve_raw(b)
    }
    fn solve_transpose_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        (**self).solve_transpose_raw(b)
    }
}

/// `A^{-1}` for a symmetric positive definite operator by PCG, typically with
/// `L0^{-1}` as the preconditioner.
pub struct PcgSolver<'a> {
    op: DiscreteOperator,
    precond: &'a dyn LinearSolve,
    rtol: f64,
}

impl<'a> PcgSolver<'a> {
    pub fn new(op: DiscreteOperator, precond: &'a dyn LinearSolve, rtol: f64) -> Self {
        Self { op, precond, rtol }
    }
}

impl LinearSolve for PcgSolver<'_> {
    fn solve_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        let what = format!("PCG on {}", self.op.description());
        pcg(
            |x| self.op.apply_raw(x),
            |r| self.precond.solve_raw(r),
            b,
            None,
            self.rtol,
            20 * self.op.grid().n_per_axis() + 200,
            &what,
        )
        .map(|(x, _)| x)
    }

    fn solve_transpose_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_raw(b)
    }
}

/// Banded LU factorization of an assembled operator.
#[derive(Debug, Clone)]
pub struct DirectSolver {
    grid: Grid,
    op: DiscreteOperator,
    lu: BandedLu,
}

impl DirectSolver {
    pub fn new(op: &DiscreteOperator) -> Result<Self> {
        let lu = BandedLu::factor(op.matrix()).map_err(|e| match e {
            Error::Singular { context } => Error::Singular {
                context: format!("direct solve of {}: {context}", op.description()),
            },
            other => other,
        })?;
        Ok(Self {
            grid: *op.grid(),
            op: op.clone(),
            lu,
        })
    }

    pub fn solve(&self, f: &GridFunction) -> Result<GridFunction> {
        self.grid.ensure_same(f.grid())?;
        Ok(GridFunction::from_vec_unchecked(
            self.grid,
            self.solve_raw(f.values())?,
        ))
    }
}

impl LinearSolve for DirectSolver {
    fn solve_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.lu.solve(b);
        // one step of iterative refinement
        let r: Vec<f64> = b
            .iter()
            .zip(self.op.apply_raw(&x))
            .map(|(bi, ai)| bi - ai)
            .collect();
        let dx = self.lu.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Singular {
                context: format!(
                    "direct solve of {} produced non-finite value at {i}",
                    self.op.description()
                ),
            });
        }
        Ok(x)
    }

    fn solve_transpose_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.lu.solve_transpose(b);
        let r: Vec<f64> = b
            .iter()
            .zip(self.op.apply_transpose_raw(&x))
            .map(|(bi, ai)| bi - ai)
            .collect();
        let dx = self.lu.solve_transpose(&r);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
        Ok(x)
    }
}

/// Verification oracle: explicit factorization of `L`, residual `<= 1e-10` relative.
pub fn solve_direct(l: &DiscreteOperator, f: &GridFunction) -> Result<GridFunction> {
    let u = DirectSolver::new(l)?.solve(f)?;
    let r = l.apply(&u)?.sub(f)?;
    let f_norm = dot(f.values(), f.values()).sqrt();
    let r_norm = dot(r.values(), r.values()).sqrt();
    if r_norm > 1e-10 * f_norm {
        return Err(Error::Singular {
            context: format!(
                "direct solve of {} left relative residual {:e}",
                l.description(),
                r_norm / f_norm
            ),
        });
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientField, ScalarFn};
    use crate::grid::{make_grid, norm_h0};
    use crate::operators::{assemble, assemble_laplacian};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn eigen(grid: Grid) -> (GridFunction, f64) {
        let h = grid.h();
        let lam = grid.dim() as f64 * 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        let phi = GridFunction::from_fn(grid, |x| {
            (0..grid.dim()).fold(1.0, |p, a| p * (PI * x[a]).sin())
        });
        (phi, lam)
    }

    #[test]
    fn cg_recovers_eigenfunction() {
        let g = make_grid(2, 63).unwrap();
        let (phi, lam) = eigen(g);
        let u = solve_laplacian(&phi.scaled(lam), 1e-12).unwrap();
        assert!(norm_h0(&u.sub(&phi).unwrap()) <= 1e-9 * norm_h0(&phi));
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = make_grid(2, 15).unwrap();
        let z = GridFunction::zeros(g);
        assert_eq!(solve_laplacian(&z, 1e-8).unwrap(), z);
        assert_eq!(solve_direct(&assemble_laplacian(&g), &z).unwrap(), z);
    }

    #[test]
    fn rtol_contract_on_random_rhs() {
        let g = make_grid(2, 31).unwrap();
        let l0 = assemble_laplacian(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for rtol in [1e-4, 1e-8, 1e-12] {
            let f = GridFunction::from_values(
                g,
                (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let u = solve_laplacian(&f, rtol).unwrap();
            let r = l0.apply(&u).unwrap().sub(&f).unwrap();
            assert!(norm_h0(&r) <= rtol * norm_h0(&f));
        }
        assert!(solve_laplacian(&GridFunction::zeros(g), 0.5).is_err());
    }

    #[test]
    fn spectral_solver_matches_eigenpair_2d_and_3d() {
        for (dim, n) in [(2, 31), (3, 7), (2, 8)] {
            let g = make_grid(dim, n).unwrap();
            let (phi, lam) = eigen(g);
            let u = SpectralLaplacian::new(g).solve(&phi.scaled(lam)).unwrap();
            assert!(
                norm_h0(&u.sub(&phi).unwrap()) <= 1e-12 * norm_h0(&phi),
                "dim {dim} n {n}"
            );
        }
    }

    #[test]
    fn spectral_solver_inverts_stencil_on_random_data() {
        let g = make_grid(3, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f =
            GridFunction::from_values(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .unwrap();
        let u = SpectralLaplacian::new(g).solve(&f).unwrap();
        let r = assemble_laplacian(&g).apply(&u).unwrap().sub(&f).unwrap();
        assert!(norm_h0(&r) < 1e-11 * norm_h0(&f));
    }

    #[test]
    fn direct_matches_hand_sized_dense_solve() {
        // 9-node grid, L = L0 + I, solved independently as a dense 9x9 system
        let g = make_grid(2, 3).unwrap();
        let h2 = g.h() * g.h();
        let mut a = DMatrix::<f64>::zeros(9, 9);
        for i in 0..3 {
            for j in 0..3 {
                let k = 3 * i + j;
                a[(k, k)] = 4.0 / h2 + 1.0;
                if i > 0 {
                    a[(k, k - 3)] = -1.0 / h2;
                }
                if i < 2 {
                    a[(k, k + 3)] = -1.0 / h2;
                }
                if j > 0 {
                    a[(k, k - 1)] = -1.0 / h2;
                }
                if j < 2 {
                    a[(k, k + 1)] = -1.0 / h2;
                }
            }
        }
        let fv: Vec<f64> = (0..9).map(|k| (k as f64 * 1.3).cos()).collect();
        let dense = a.lu().solve(&DVector::from_vec(fv.clone())).unwrap();
        let l = assemble(
            &CoefficientField::identity(2).with_q(ScalarFn::Constant(1.0)),
            &g,
        )
        .unwrap();
        let u = solve_direct(&l, &GridFunction::from_values(g, fv).unwrap()).unwrap();
        for k in 0..9 {
            assert!((u.values()[k] - dense[k]).abs() < 1e-12 * dense.amax());
        }
    }

    #[test]
    fn direct_reports_singular_system() {
        let g = make_grid(2, 3).unwrap();
        let h = g.h();
        let lam = 8.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        let l = assemble_laplacian(&g).shifted(-lam);
        let f = GridFunction::constant(g, 1.0);
        assert!(matches!(solve_direct(&l, &f), Err(Error::Singular { .. })));
    }
}
