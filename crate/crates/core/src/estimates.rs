//! Numerical estimates of the constants in the a priori chain:
//!
//! * `c0, c1` ellipticity bounds of `a(x)`;
//! * `c2` coercivity, `(Lu, u) >= c2 (u, u)`;
//! * `c3` second basic inequality, `||Lu||_0 >= c3 ||u||_2`;
//! * `c_pert`, `||(L - L0) u||_0 <= c_pert ||u||_2`;
//! * `c3' = c_pert / c3`, which bounds `||L0^{-1} (L - L0)||` in the H2 norm.
//!
//! Every estimate is a point estimate from a Krylov (power-type) iteration. Lower
//! bounds (`c2`, `c3`) and upper bounds (`c_pert`, operator norms) are then
//! checked one-sidedly against seeded random probes.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::base_solver::{DirectSolver, LinearSolve};
use crate::coefficients::{check_ellipticity, CoefficientField};
use crate::error::{Error, Result};
use crate::grid::{dot, h2_gram_apply, h2_gram_bandwidth, h2_quadratic, Grid};
use crate::linalg::{probe_banded, BandedLdlt, SparseMatrix};
use crate::operators::{assemble, assemble_laplacian, homotopy, DiscreteOperator};

/// Stopping policy shared by every power-type iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerPolicy {
    pub max_iters: usize,
    /// Stop once the relative change stays below this...
    pub rel_tol: f64,
    /// ...for this many consecutive iterations.
    pub window: usize,
    pub seed: u64,
    /// Number of random probes used to check each estimate.
    pub probes: usize,
    /// Relative slack allowed when checking probes.
    pub probe_tol: f64,
}

impl Default for PowerPolicy {
    fn default() -> Self {
        Self {
            max_iters: 500,
            rel_tol: 1e-6,
            window: 5,
            seed: 0,
            probes: 200,
            probe_tol: 1e-6,
        }
    }
}

/// A point estimate with its iteration metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub iterations: usize,
    pub rel_change: f64,
    pub converged: bool,
}

/// Linear map with a transpose, on raw node vectors.
pub trait LinearMap {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>>;
}

pub struct IdentityMap;

impl LinearMap for IdentityMap {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
    fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

pub struct ZeroMap;

impl LinearMap for ZeroMap {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }
    fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }
}

/// `u -> scale * solver((L - L_prev) u)`: the contraction map of one stage.
pub struct StageMap<'a> {
    pub solver: &'a dyn LinearSolve,
    pub perturbation: &'a DiscreteOperator,
    pub scale: f64,
}

impl LinearMap for StageMap<'_> {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.solver.solve_raw(&self.perturbation.apply_raw(x))?;
        y.iter_mut().for_each(|v| *v *= self.scale);
        Ok(y)
    }

    fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self
            .perturbation
            .apply_transpose_raw(&self.solver.solve_transpose_raw(x)?);
        y.iter_mut().for_each(|v| *v *= self.scale);
        Ok(y)
    }
}

/// Assembled and factored Gram matrix `G` of the discrete H2 inner product.
#[derive(Debug, Clone)]
pub struct H2Gram {
    grid: Grid,
    matrix: SparseMatrix,
    factor: BandedLdlt,
}

impl H2Gram {
    pub fn new(grid: &Grid) -> Result<Self> {
        let matrix = probe_banded(grid.len(), h2_gram_bandwidth(grid), |x| {
            h2_gram_apply(grid, x)
        });
        let factor = BandedLdlt::factor(&matrix)?;
        Ok(Self {
            grid: *grid,
            matrix,
            factor,
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix.matvec(x)
    }

    pub fn solve(&self, x: &[f64]) -> Vec<f64> {
        self.factor.solve(x)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// Largest eigenvalue of `op`, self-adjoint in the inner product
/// `(x, y) = x . metric(y)`, by Lanczos with full reorthogonalization.
///
/// This is power iteration from the seeded start vector with Rayleigh-Ritz
/// extraction over all iterates, so it stops under the same policy
/// (relative change of the estimate below `rel_tol` for `window` consecutive
/// steps, at most `max_iters` operator applications) but copes with clustered
/// spectra where the plain iterate stalls.
pub(crate) fn lanczos_max(
    mut op: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    metric: impl Fn(&[f64]) -> Vec<f64>,
    start: Vec<f64>,
    policy: &PowerPolicy,
) -> Result<(Estimate, Vec<f64>)> {
    let n = start.len();
    let max_steps = policy.max_iters.min(n).max(1);
    let g_start = metric(&start);
    let norm = dot(&start, &g_start).sqrt();
    let mut basis: Vec<Vec<f64>> = vec![start.iter().map(|v| v / norm).collect()];
    let mut g_basis: Vec<Vec<f64>> = vec![g_start.iter().map(|v| v / norm).collect()];
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    let mut theta = f64::NAN;
    let mut rel_change = f64::INFINITY;
    let mut quiet = 0;
    let mut converged = false;
    let mut steps = 0;
    for j in 0..max_steps {
        steps = j + 1;
        let mut w = op(&basis[j])?;
        alpha.push(dot(&w, &g_basis[j]));
        for _ in 0..2 {
            for (q, gq) in basis.iter().zip(&g_basis) {
                let c = dot(&w, gq);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        let gw = metric(&w);
        let b = dot(&w, &gw).max(0.0).sqrt();
        let next = tridiagonal_max(&alpha, &beta);
        if theta.is_finite() {
            rel_change = if next == theta {
                0.0
            } else {
                ((next - theta) / next).abs()
            };
            quiet = if rel_change < policy.rel_tol {
                quiet + 1
            } else {
                0
            };
        }
        theta = next;
        let scale = alpha
            .iter()
            .chain(&beta)
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        if b <= 1e-14 * scale || scale == 0.0 || quiet >= policy.window {
            converged = true;
            break;
        }
        if j + 1 == max_steps {
            break;
        }
        beta.push(b);
        basis.push(w.iter().map(|v| v / b).collect());
        g_basis.push(gw.iter().map(|v| v / b).collect());
    }
    let m = alpha.len();
    let t = nalgebra::DMatrix::from_fn(m, m, |r, c| match r.abs_diff(c) {
        0 => alpha[r],
        1 => beta[r.min(c)],
        _ => 0.0,
    });
    let eig = t.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let s = eig.eigenvectors.column(k);
    let mut x = vec![0.0; n];
    for (i, q) in basis.iter().take(m).enumerate() {
        x.iter_mut().zip(q).for_each(|(xi, qi)| *xi += s[i] * qi);
    }
    let value = if alpha.iter().all(|&a| a == 0.0) {
        0.0
    } else {
        theta
    };
    Ok((
        Estimate {
            value,
            iterations: steps,
            rel_change: if rel_change.is_finite() {
                rel_change
            } else {
                0.0
            },
            converged,
        },
        x,
    ))
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`, by Sturm-sequence bisection.
fn tridiagonal_max(alpha: &[f64], beta: &[f64]) -> f64 {
    let m = alpha.len();
    let radius = |i: usize| {
        (if i > 0 { beta[i - 1].abs() } else { 0.0 })
            + (if i + 1 < m { beta[i].abs() } else { 0.0 })
    };
    let mut lo = (0..m)
        .map(|i| alpha[i] - radius(i))
        .fold(f64::INFINITY, f64::min);
    let mut hi = (0..m)
        .map(|i| alpha[i] + radius(i))
        .fold(f64::NEG_INFINITY, f64::max);
    let tiny = f64::MIN_POSITIVE.sqrt() * (hi.abs() + lo.abs()).max(1.0);
    let below = |x: f64| {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..m {
            let off = if i > 0 {
                beta[i - 1] * beta[i - 1] / q
            } else {
                0.0
            };
            q = alpha[i] - x - off;
            if q == 0.0 {
                q = -tiny;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if below(mid) == m {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

pub(crate) fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Estimation context: one grid, one policy, and a lazily factored H2 Gram matrix.
#[derive(Debug)]
pub struct Estimator {
    grid: Grid,
    pub policy: PowerPolicy,
    gram: OnceLock<H2Gram>,
}

impl Estimator {
    pub fn new(grid: Grid, policy: PowerPolicy) -> Self {
        Self {
            grid,
            policy,
            gram: OnceLock::new(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn gram(&self) -> Result<&H2Gram> {
        if let Some(g) = self.gram.get() {
            return Ok(g);
        }
        let g = H2Gram::new(&self.grid)?;
        Ok(self.gram.get_or_init(|| g))
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.policy.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    fn h2_norm(&self, x: &[f64]) -> f64 {
        h2_quadratic(&self.grid, x).sqrt()
    }

    fn h0_norm(&self, x: &[f64]) -> f64 {
        (self.grid.cell_volume() * dot(x, x)).sqrt()
    }

    /// Smallest eigenvalue of a symmetric `L` by shifted inverse iteration.
    ///
    /// The shift is bracketed below the spectrum first: the Gershgorin bound is
    /// a guaranteed lower end, and bisection on the `L D L^T` inertia tightens
    /// it until the shift sits just under the smallest eigenvalue.
    pub fn coercivity(&self, l: &DiscreteOperator) -> Result<Estimate> {
        self.grid.ensure_same(l.grid())?;
        if !l.is_symmetric() {
            return Err(Error::NotSymmetric(l.description().to_string()));
        }
        let a = l.matrix();
        let g = a.gershgorin_lower();
        let mut lo = g - 1e-3 * (1.0 + g.abs());
        let smooth: Vec<f64> = (0..self.grid.len())
            .map(|i| {
                let x = self.grid.coords(i);
                (0..self.grid.dim()).fold(1.0, |p, ax| p * (std::f64::consts::PI * x[ax]).sin())
            })
            .collect();
        let mut hi = dot(&smooth, &a.matvec(&smooth)) / dot(&smooth, &smooth);
        for _ in 0..60 {
            if hi - lo <= 0.05 * hi.abs().max(lo.abs()).max(1e-12) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            match BandedLdlt::factor_shifted(a, -mid) {
                Ok(f) if f.negative_count() == 0 => lo = mid,
                _ => hi = mid,
            }
        }
        let shift = lo;
        let factor = BandedLdlt::factor_shifted(a, -shift)?;
        let mut rng = self.rng(1);
        let start = random_vector(&mut rng, self.grid.len());
        // dominant eigenvalue of (L - shift)^{-1} is 1 / (lambda_min - shift)
        let (est, x) = lanczos_max(
            |v| Ok(factor.solve(v)),
            <[f64]>::to_vec,
            start,
            &self.policy,
        )?;
        let rayleigh = dot(&x, &a.matvec(&x)) / dot(&x, &x);
        let value = if est.value > 0.0 {
            rayleigh.min(shift + 1.0 / est.value)
        } else {
            rayleigh
        };
        Ok(Estimate { value, ..est })
    }

    /// `c3 = min_u ||Lu||_0 / ||u||_2`, from the dominant eigenvalue of
    /// `h^{-d} L^{-T} G L^{-1}`; checked against random probes.
    pub fn c3(&self, l: &DiscreteOperator) -> Result<Estimate> {
        self.grid.ensure_same(l.grid())?;
        let solver = DirectSolver::new(l)?;
        let w = self.grid.cell_volume();
        let mut rng = self.rng(2);
        let start = random_vector(&mut rng, self.grid.len());
        let (est, _) = lanczos_max(
            |v| {
                let u = solver.solve_raw(v)?;
                let mut y = solver.solve_transpose_raw(&h2_gram_apply(&self.grid, &u))?;
                y.iter_mut().for_each(|t| *t /= w);
                Ok(y)
            },
            <[f64]>::to_vec,
            start,
            &self.policy,
        )?;
        let c3 = 1.0 / est.value.sqrt();
        for probe in 0..self.policy.probes {
            let u = random_vector(&mut rng, self.grid.len());
            let lhs = self.h0_norm(&l.apply_raw(&u));
            let rhs = c3 * (1.0 - self.policy.probe_tol) * self.h2_norm(&u);
            if lhs < rhs {
                return Err(Error::ProbeViolation {
                    probe,
                    detail: format!("||Lu||_0 = {lhs:e} < c3 (1 - tol) ||u||_2 = {rhs:e}"),
                });
            }
        }
        Ok(Estimate { value: c3, ..est })
    }

    /// `c_pert = max_u ||(L - L0) u||_0 / ||u||_2`, by Lanczos in the
    /// H2-weighted inner product.
    pub fn perturbation_bound(
        &self,
        l: &DiscreteOperator,
        l0: &DiscreteOperator,
    ) -> Result<Estimate> {
        let p = l.minus(l0)?;
        let w = self.grid.cell_volume();
        let map = ScaledOperator {
            op: &p,
            weight: w.sqrt(),
        };
        self.norm_from_h2(&map, false, &mut self.rng(3))
    }

    /// `||M||` from the discrete H2 norm to itself.
    pub fn operator_norm_h2(&self, m: &dyn LinearMap) -> Result<Estimate> {
        self.norm_from_h2(m, true, &mut self.rng(4))
    }

    /// Norm of `m` from H2 into either H2 (`h2_target`) or the plain Euclidean
    /// norm, by Lanczos in the G-weighted inner product.
    fn norm_from_h2(
        &self,
        m: &dyn LinearMap,
        h2_target: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Estimate> {
        let gram = self.gram()?;
        let start = random_vector(rng, self.grid.len());
        let (est, _) = lanczos_max(
            |v| {
                let mut mv = m.apply(v)?;
                if h2_target {
                    mv = gram.apply(&mv);
                }
                Ok(gram.solve(&m.apply_transpose(&mv)?))
            },
            |x| gram.apply(x),
            start,
            &self.policy,
        )?;
        let norm = est.value.max(0.0).sqrt();
        for probe in 0..self.policy.probes {
            let u = random_vector(rng, self.grid.len());
            let mu = m.apply(&u)?;
            let lhs = if h2_target {
                self.h2_norm(&mu)
            } else {
                dot(&mu, &mu).sqrt()
            };
            let rhs = norm * (1.0 + self.policy.probe_tol) * self.h2_norm(&u);
            if lhs > rhs {
                return Err(Error::ProbeViolation {
                    probe,
                    detail: format!("||Mu|| = {lhs:e} > norm (1 + tol) ||u||_2 = {rhs:e}"),
                });
            }
        }
        Ok(Estimate { value: norm, ..est })
    }

    /// Every constant for `coeffs` on this grid. `c3` is the smallest
    /// estimate over `L_s`, `s in {0, 1/4, 1/2, 3/4, 1}`.
    pub fn constants(&self, coeffs: &CoefficientField) -> Result<ConstantsReport> {
        let (c0, c1) = check_ellipticity(coeffs, &self.grid)?;
        let l = assemble(coeffs, &self.grid)?;
        let l0 = assemble_laplacian(&self.grid);
        let c2 = self.coercivity(&l)?;
        if c2.value <= 0.0 {
            return Err(Error::Coercivity { c2: c2.value });
        }
        let mut c3_samples = Vec::new();
        for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let ls = homotopy(&l0, &l, s)?;
            c3_samples.push((s, self.c3(&ls)?));
        }
        let c3 = c3_samples
            .iter()
            .map(|(_, e)| *e)
            .fold(None::<Estimate>, |m, e| match m {
                Some(b) if b.value <= e.value => Some(b),
                _ => Some(e),
            })
            .expect("five samples");
        let c_pert = self.perturbation_bound(&l, &l0)?;
        Ok(ConstantsReport {
            c0,
            c1,
            c2,
            c3,
            c3_samples,
            c_pert,
            c3_prime: c_pert.value / c3.value,
            grid: self.grid,
        })
    }
}

struct ScaledOperator<'a> {
    op: &'a DiscreteOperator,
    weight: f64,
}

impl LinearMap for ScaledOperator<'_> {
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.op.apply_raw(x);
        y.iter_mut().for_each(|v| *v *= self.weight);
        Ok(y)
    }
    fn apply_transpose(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.op.apply_transpose_raw(x);
        y.iter_mut().for_each(|v| *v *= self.weight);
        Ok(y)
    }
}

/// Smallest-eigenvalue estimate of a symmetric operator, the discrete `c2`.
pub fn estimate_coercivity(l: &DiscreteOperator) -> Result<Estimate> {
    Estimator::new(*l.grid(), PowerPolicy::default()).coercivity(l)
}

pub fn estimate_c3(l: &DiscreteOperator, grid: &Grid) -> Result<Estimate> {
    Estimator::new(*grid, PowerPolicy::default()).c3(l)
}

pub fn perturbation_bound(
    l: &DiscreteOperator,
    l0: &DiscreteOperator,
    grid: &Grid,
) -> Result<Estimate> {
    Estimator::new(*grid, PowerPolicy::default()).perturbation_bound(l, l0)
}

pub fn operator_norm_h2(m: &dyn LinearMap, grid: &Grid) -> Result<Estimate> {
    Estimator::new(*grid, PowerPolicy::default()).operator_norm_h2(m)
}

/// All estimated constants for one coefficient field on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantsReport {
    pub c0: f64,
    pub c1: f64,
    pub c2: Estimate,
    pub c3: Estimate,
    pub c3_samples: Vec<(f64, Estimate)>,
    pub c_pert: Estimate,
    /// `c_pert / c3`, exactly as stored.
    pub c3_prime: f64,
    pub grid: Grid,
}

impl ConstantsReport {
    pub const CSV_HEADER: &'static str =
        "c0,c1,c2,c3,c_pert,c3_prime,grid,dim,n,iters_c2,iters_c3,iters_c_pert,change_c2,change_c3,change_c_pert,converged";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{},{},{:.3e},{:.3e},{:.3e},{}",
            self.c0,
            self.c1,
            self.c2.value,
            self.c3.value,
            self.c_pert.value,
            self.c3_prime,
            self.grid.id(),
            self.grid.dim(),
            self.grid.n_per_axis(),
            self.c2.iterations,
            self.c3.iterations,
            self.c_pert.iterations,
            self.c2.rel_change,
            self.c3.rel_change,
            self.c_pert.rel_change,
            self.c2.converged && self.c3.converged && self.c_pert.converged,
        )
    }

    /// Flat `key=value` block, one entry per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("grid", self.grid.id());
        kv("c0", format!("{:.16e}", self.c0));
        kv("c1", format!("{:.16e}", self.c1));
        for (name, e) in [("c2", &self.c2), ("c3", &self.c3), ("c_pert", &self.c_pert)] {
            kv(name, format!("{:.16e}", e.value));
            kv(&format!("{name}.iterations"), e.iterations.to_string());
            kv(
                &format!("{name}.rel_change"),
                format!("{:.3e}", e.rel_change),
            );
            kv(&format!("{name}.converged"), e.converged.to_string());
        }
        for (s, e) in &self.c3_samples {
            kv(&format!("c3[s={s}]"), format!("{:.16e}", e.value));
        }
        kv("c3_prime", format!("{:.16e}", self.c3_prime));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ScalarFn;
    use crate::grid::make_grid;
    use std::f64::consts::PI;

    fn discrete_lambda_min(grid: &Grid) -> f64 {
        let h = grid.h();
        grid.dim() as f64 * 4.0 / (h * h) * (PI * h / 2.0).sin().powi(2)
    }

    #[test]
    fn coercivity_of_laplacian_matches_exact_spectrum() {
        for n in [7, 15, 31] {
            let g = make_grid(2, n).unwrap();
            let est = estimate_coercivity(&assemble_laplacian(&g)).unwrap();
            let exact = discrete_lambda_min(&g);
            assert!(est.converged);
            assert!(
                (est.value - exact).abs() < 1e-8 * exact,
                "n={n}: {} vs {exact}",
                est.value
            );
        }
    }

    #[test]
    fn constant_shift_moves_c2() {
        let g = make_grid(2, 15).unwrap();
        let l = assemble(
            &CoefficientField::identity(2).with_q(ScalarFn::Constant(3.0)),
            &g,
        )
        .unwrap();
        let est = estimate_coercivity(&l).unwrap();
        assert!((est.value - (discrete_lambda_min(&g) + 3.0)).abs() < 1e-8 * est.value);
    }

    #[test]
    fn negative_shift_gives_negative_estimate() {
        let g = make_grid(2, 31).unwrap();
        let q = -2.0 * PI * PI * 1.5;
        let l = assemble(
            &CoefficientField::identity(2).with_q(ScalarFn::Constant(q)),
            &g,
        )
        .unwrap();
        let est = estimate_coercivity(&l).unwrap();
        let exact = discrete_lambda_min(&g) + q;
        assert!(est.value < 0.0);
        assert!((est.value - exact).abs() < 1e-7 * exact.abs());
    }

    #[test]
    fn coercivity_rejects_non_symmetric() {
        let g = make_grid(2, 7).unwrap();
        let b = crate::operators::assemble_first_order(
            &[ScalarFn::Constant(1.0), ScalarFn::Constant(0.0)],
            &g,
        )
        .unwrap();
        let l = assemble_laplacian(&g).plus(&b).unwrap();
        assert!(matches!(
            estimate_coercivity(&l),
            Err(Error::NotSymmetric(_))
        ));
    }

    #[test]
    fn c3_is_homogeneous() {
        let g = make_grid(2, 15).unwrap();
        let l0 = assemble_laplacian(&g);
        let a = estimate_c3(&l0, &g).unwrap().value;
        let b = estimate_c3(&l0.scaled(2.0), &g).unwrap().value;
        assert!((b - 2.0 * a).abs() < 1e-8 * b);
    }

    #[test]
    fn perturbation_bound_zero_and_homogeneous() {
        let g = make_grid(2, 15).unwrap();
        let l0 = assemble_laplacian(&g);
        assert_eq!(perturbation_bound(&l0, &l0, &g).unwrap().value, 0.0);
        let c = CoefficientField::identity(2).with_a(
            0,
            0,
            ScalarFn::Sin {
                base: 1.0,
                amp: 0.5,
                axis: 0,
                freq: 1.0,
            },
        );
        let l = assemble(&c, &g).unwrap();
        let p = l.minus(&l0).unwrap();
        let l2 = l0.plus(&p.scaled(2.0)).unwrap();
        let one = perturbation_bound(&l, &l0, &g).unwrap().value;
        let two = perturbation_bound(&l2, &l0, &g).unwrap().value;
        assert!((two - 2.0 * one).abs() < 1e-8 * two, "{one} {two}");
    }

    #[test]
    fn operator_norm_of_identity_and_zero() {
        let g = make_grid(2, 15).unwrap();
        assert!((operator_norm_h2(&IdentityMap, &g).unwrap().value - 1.0).abs() < 1e-6);
        assert_eq!(operator_norm_h2(&ZeroMap, &g).unwrap().value, 0.0);
    }

    #[test]
    fn report_serialization() {
        let g = make_grid(2, 7).unwrap();
        let c = CoefficientField::identity(2).with_q(ScalarFn::Constant(2.0));
        let r = Estimator::new(g, PowerPolicy::default())
            .constants(&c)
            .unwrap();
        assert!(r.c0 <= r.c1);
        assert_eq!(r.c3_prime, r.c_pert.value / r.c3.value);
        let row = r.csv_row();
        assert_eq!(
            row.split(',').count(),
            ConstantsReport::CSV_HEADER.split(',').count()
        );
        assert!(r.to_key_values().contains("c3_prime="));
    }
}
