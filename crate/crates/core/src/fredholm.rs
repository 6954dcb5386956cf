//! `(L + L') u = f` for symmetric coercive `L` and a first-order `L'`, through
//! the fixed-point form `u + A u = L^{-1} f`, `A = L^{-1} L'`.
//!
//! `||A|| < 1` is not available for arbitrary drift, so the fixed-point
//! equation is solved by restarted GMRES rather than Picard iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::base_solver::{DirectSolver, LinearSolve, PcgSolver, SpectralLaplacian};
use crate::error::{Error, Result};
use crate::estimates::{estimate_coercivity, lanczos_max, random_vector, PowerPolicy};
use crate::grid::{dot, GridFunction};
use crate::operators::DiscreteOperator;

#[derive(Debug, Clone, PartialEq)]
pub struct FredholmConfig {
    pub restart: usize,
    pub max_iters: usize,
    /// Relative residual target for the fixed-point equation.
    pub rtol: f64,
    /// Relative residual target for `(L + L') u = f` itself.
    pub residual_target: f64,
    pub inner_rtol: f64,
    /// `fredholm_check` certifies unique solvability above this value.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for FredholmConfig {
    fn default() -> Self {
        Self {
            restart: 30,
            max_iters: 300,
            rtol: 1e-10,
            residual_target: 1e-8,
            inner_rtol: 1e-12,
            threshold: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub history: Vec<f64>,
}

/// Restarted GMRES with modified Gram-Schmidt and Givens rotations. Stops
/// when `||b - A x|| <= rtol ||b||` for the true residual.
pub fn gmres(
    mut apply: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    x0: Option<Vec<f64>>,
    rtol: f64,
    restart: usize,
    max_iters: usize,
) -> Result<(Vec<f64>, GmresStats)> {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    let mut x = x0.unwrap_or_else(|| vec![0.0; n]);
    let mut stats = GmresStats {
        iterations: 0,
        relative_residual: 0.0,
        history: Vec::new(),
    };
    if b_norm == 0.0 {
        return Ok((vec![0.0; n], stats));
    }
    loop {
        let ax = apply(&x)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = dot(&r, &r).sqrt();
        stats.relative_residual = beta / b_norm;
        stats.history.push(stats.relative_residual);
        if stats.relative_residual <= rtol {
            return Ok((x, stats));
        }
        if stats.iterations >= max_iters {
            return Err(Error::NotConverged {
                what: "GMRES on I + A".into(),
                iterations: stats.iterations,
                residual: stats.relative_residual,
                history: stats.history,
            });
        }
        let m = restart.min(max_iters - stats.iterations);
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            stats.iterations += 1;
            let mut w = apply(&basis[k])?;
            for (j, v) in basis.iter().enumerate() {
                let hjk = dot(&w, v);
                hess[j][k] = hjk;
                w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= hjk * vi);
            }
            let wn = dot(&w, &w).sqrt();
            hess[k + 1][k] = wn;
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let denom = hess[k][k].hypot(hess[k + 1][k]);
            cs[k] = hess[k][k] / denom;
            sn[k] = hess[k + 1][k] / denom;
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            if (g[k + 1].abs() / b_norm) <= 0.5 * rtol || wn == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / wn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= hess[i][j] * y[j];
            }
            y[i] = acc / hess[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            x.iter_mut()
                .zip(&basis[j])
                .for_each(|(xi, vi)| *xi += yj * vi);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedReport {
    pub iterations: usize,
    pub fixed_point_residual: f64,
    /// `||(L + L') u - f||_0 / ||f||_0`.
    pub residual: f64,
}

fn require_compatible(l: &DiscreteOperator, lprime: &DiscreteOperator) -> Result<()> {
    l.grid().ensure_same(lprime.grid())?;
    if !l.is_symmetric() {
        return Err(Error::NotSymmetric(l.description().to_string()));
    }
    Ok(())
}

/// Solve `(L + L') u = f` with `L^{-1}` realized by PCG preconditioned with
/// the Laplacian solver. Refuses when the coercivity estimate of `L` is not
/// positive.
pub fn solve_perturbed(
    l: &DiscreteOperator,
    lprime: &DiscreteOperator,
    f: &GridFunction,
    cfg: &FredholmConfig,
) -> Result<(GridFunction, PerturbedReport)> {
    require_compatible(l, lprime)?;
    let c2 = estimate_coercivity(l)?.value;
    if c2 <= 0.0 {
        return Err(Error::Coercivity { c2 });
    }
    let base = SpectralLaplacian::new(*l.grid());
    let inner = PcgSolver::new(l.clone(), &base, cfg.inner_rtol);
    solve_perturbed_with(&inner, l, lprime, f, cfg)
}

/// As [`solve_perturbed`] with a caller-supplied `L^{-1}`.
pub fn solve_perturbed_with(
    inner: &dyn LinearSolve,
    l: &DiscreteOperator,
    lprime: &DiscreteOperator,
    f: &GridFunction,
    cfg: &FredholmConfig,
) -> Result<(GridFunction, PerturbedReport)> {
    require_compatible(l, lprime)?;
    l.grid().ensure_same(f.grid())?;
    let grid = *f.grid();
    let f_norm = dot(f.values(), f.values()).sqrt();
    if f_norm == 0.0 {
        let report = PerturbedReport {
            iterations: 0,
            fixed_point_residual: 0.0,
            residual: 0.0,
        };
        return Ok((GridFunction::zeros(grid), report));
    }
    let rhs = inner.solve_raw(f.values())?;
    let full = l.plus(lprime)?;
    let residual_of = |u: &[f64]| {
        let r: Vec<f64> = full
            .apply_raw(u)
            .iter()
            .zip(f.values())
            .map(|(a, b)| a - b)
            .collect();
        dot(&r, &r).sqrt() / f_norm
    };
    if lprime.matrix().triplets().iter().all(|t| t.2 == 0.0) {
        let residual = residual_of(&rhs);
        let report = PerturbedReport {
            iterations: 0,
            fixed_point_residual: 0.0,
            residual,
        };
        return Ok((GridFunction::from_values(grid, rhs)?, report));
    }
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let ax = inner.solve_raw(&lprime.apply_raw(x))?;
        Ok(x.iter().zip(&ax).map(|(a, b)| a + b).collect())
    };
    let mut rtol = cfg.rtol;
    let mut x: Option<Vec<f64>> = None;
    let mut used = 0;
    loop {
        let outcome = gmres(
            apply,
            &rhs,
            x.take(),
            rtol,
            cfg.restart,
            cfg.max_iters - used,
        );
        let (u, stats) = match outcome {
            Ok(v) => v,
            Err(Error::NotConverged { .. }) => {
                let check = fredholm_check(l, lprime, cfg)?;
                if check.sigma_min <= cfg.threshold {
                    return Err(Error::FredholmAlternative {
                        sigma_min: check.sigma_min,
                        direction: check.direction,
                    });
                }
                return outcome.map(|_| unreachable!());
            }
            Err(e) => return Err(e),
        };
        used += stats.iterations;
        let residual = residual_of(&u);
        // the fixed-point residual is an L^{-1}-weighted one; tighten it until
        // the original equation meets its own target
        if residual <= cfg.residual_target || used >= cfg.max_iters || rtol < 1e-15 {
            if residual > cfg.residual_target {
                return Err(Error::NotConverged {
                    what: "(L + L') u = f".into(),
                    iterations: used,
                    residual,
                    history: stats.history,
                });
            }
            let report = PerturbedReport {
                iterations: used,
                fixed_point_residual: stats.relative_residual,
                residual,
            };
            return Ok((GridFunction::from_values(grid, u)?, report));
        }
        rtol *= 0.01;
        x = Some(u);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FredholmReport {
    /// Smallest singular value of `I + A` (Euclidean).
    pub sigma_min: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Approximate right singular vector for `sigma_min`.
    pub direction: Vec<f64>,
    pub certified: bool,
}

/// Smallest singular value of `I + A` by inverse iteration on
/// `M = (I + A)^{-1} (I + A)^{-T}`, using `(I + A)^{-1} = (L + L')^{-1} L`.
///
/// `M` is the identity plus a compact part whose eigenvalues cluster at 0 from
/// both sides, so plain power iteration stalls; the iteration is accelerated
/// by Lanczos on `K = M - I`, and `sigma_min = (1 + lambda_max(K))^{-1/2}`.
pub fn fredholm_check(
    l: &DiscreteOperator,
    lprime: &DiscreteOperator,
    cfg: &FredholmConfig,
) -> Result<FredholmReport> {
    require_compatible(l, lprime)?;
    let grid = *l.grid();
    let full = l.plus(lprime)?.with_description("L + L'");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = random_vector(&mut rng, grid.len());
    let solver = match DirectSolver::new(&full) {
        Ok(s) => s,
        Err(Error::Singular { .. }) => {
            return Ok(FredholmReport {
                sigma_min: 0.0,
                iterations: 0,
                converged: true,
                direction: start,
                certified: false,
            })
        }
        Err(e) => return Err(e),
    };
    // (I + A)^{-T} = L (L + L')^{-T} since L is symmetric
    let k_apply = |x: &[f64]| -> Result<Vec<f64>> {
        let t = l.apply_raw(&solver.solve_transpose_raw(x)?);
        let y = solver.solve_raw(&l.apply_raw(&t))?;
        Ok(y.iter().zip(x).map(|(yi, xi)| yi - xi).collect())
    };
    let policy = PowerPolicy {
        max_iters: 300,
        rel_tol: 1e-10,
        ..PowerPolicy::default()
    };
    let (est, mut direction) = lanczos_max(&k_apply, <[f64]>::to_vec, start, &policy)?;
    let lambda = est.value;
    let sigma_min = if lambda.is_finite() && lambda > -1.0 {
        1.0 / (1.0 + lambda).sqrt()
    } else {
        0.0
    };
    if sigma_min <= cfg.threshold {
        // the Ritz vector of a huge, isolated eigenvalue is only accurate to
        // about sqrt(eps); two plain steps with M sharpen it to a null direction
        for _ in 0..2 {
            let y: Vec<f64> = k_apply(&direction)?
                .iter()
                .zip(&direction)
                .map(|(k, x)| k + x)
                .collect();
            let norm = dot(&y, &y).sqrt();
            if !(norm.is_finite() && norm > 0.0) {
                break;
            }
            direction = y.iter().map(|v| v / norm).collect();
        }
    }
    Ok(FredholmReport {
        sigma_min,
        iterations: est.iterations,
        converged: est.converged,
        direction,
        certified: sigma_min > cfg.threshold,
    })
}
