//! Continuation in the parameter `s`: reach `L = L_1` from the Laplacian `L_0`
//! through the homotopy `L_s = L_0 + s (L - L_0)` in finitely many stages, each
//! of which is a contraction
//!
//! ```text
//! u = L_prev^{-1} f - ds L_prev^{-1} (L - L_0) u,   || ds L_prev^{-1} (L - L_0) ||_2 < 1.
//! ```

use std::cell::Cell;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::base_solver::{CgLaplacian, DirectSolver, LinearSolve, PcgSolver, SpectralLaplacian};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::estimates::{lanczos_max, ConstantsReport, Estimator, PowerPolicy, StageMap};
use crate::grid::{dot, h2_quadratic, Grid, GridFunction};
use crate::operators::{assemble, assemble_laplacian, homotopy, DiscreteOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleMode {
    /// Uniform a priori steps `theta / c3'`.
    Paper,
    /// Each step sized so the measured stage norm equals `theta`.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    /// Exact `L0^{-1}` by sine transforms.
    Spectral,
    /// Matrix-free conjugate gradients at `inner_solve_rtol`.
    Cg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationConfig {
    pub schedule_mode: ScheduleMode,
    pub safety_theta: f64,
    pub picard_rtol: f64,
    pub picard_max_iters: usize,
    pub inner_solve_rtol: f64,
    pub max_stages: usize,
    /// Realize each `L_prev^{-1}` as the literal Picard recursion down to `L0`
    /// instead of PCG on `L_prev` preconditioned by `L0^{-1}`.
    pub nested: bool,
    pub base: BaseKind,
    pub seed: u64,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            schedule_mode: ScheduleMode::Paper,
            safety_theta: 0.5,
            picard_rtol: 1e-10,
            picard_max_iters: 200,
            inner_solve_rtol: 1e-12,
            max_stages: 64,
            nested: false,
            base: BaseKind::Spectral,
            seed: 0,
        }
    }
}

impl ContinuationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.safety_theta > 0.0 && self.safety_theta < 1.0) {
            return bad("safety_theta must lie in (0, 1)");
        }
        if !(self.picard_rtol > 0.0 && self.inner_solve_rtol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.picard_max_iters == 0 || self.max_stages == 0 {
            return bad("iteration and stage caps must be positive");
        }
        Ok(())
    }

    fn policy(&self) -> PowerPolicy {
        PowerPolicy {
            seed: self.seed,
            ..PowerPolicy::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageReport {
    pub index: usize,
    pub s_start: f64,
    pub s_end: f64,
    pub measured_norm: f64,
    pub picard_iters: usize,
    pub final_residual: f64,
    /// Largest ratio of successive H2 increments before the roundoff floor.
    pub geometric_ratio_observed: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub stages: Vec<StageReport>,
    pub constants: ConstantsReport,
    pub total_inner_solves: usize,
    pub final_residual_vs_l: f64,
    pub wall_time: Duration,
}

impl SolveReport {
    pub const CSV_HEADER: &'static str =
        "row,stage,s_start,s_end,measured_norm,picard_iters,final_residual,geometric_ratio,inner_solves";

    /// One row per stage and a summary row. Wall time is left out so that
    /// repeated runs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for s in &self.stages {
            let _ = writeln!(
                out,
                "stage,{},{:.16e},{:.16e},{:.16e},{},{:.6e},{:.6e},",
                s.index,
                s.s_start,
                s.s_end,
                s.measured_norm,
                s.picard_iters,
                s.final_residual,
                s.geometric_ratio_observed
            );
        }
        let max_norm = self
            .stages
            .iter()
            .map(|s| s.measured_norm)
            .fold(0.0, f64::max);
        let iters: usize = self.stages.iter().map(|s| s.picard_iters).sum();
        let _ = writeln!(
            out,
            "summary,{},{:.16e},{:.16e},{:.16e},{},{:.6e},,{}",
            self.stages.len(),
            0.0,
            1.0,
            max_norm,
            iters,
            self.final_residual_vs_l,
            self.total_inner_solves
        );
        out
    }
}

/// Breakpoints `0 = s_0 < ... < s_m = 1` with uniform steps `theta / c3'`,
/// the last one clamped to 1.
pub fn paper_schedule(c3_prime: f64, theta: f64, max_stages: usize) -> Result<Vec<f64>> {
    if !(c3_prime > 0.0 && c3_prime.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "c3' = {c3_prime} must be positive and finite"
        )));
    }
    let step = theta / c3_prime;
    let required = (1.0 / step).ceil().max(1.0);
    if required > max_stages as f64 {
        return Err(Error::ScheduleOverflow {
            c3_prime,
            required: required.min(usize::MAX as f64) as usize,
            max_stages,
        });
    }
    let required = required as usize;
    let mut s = vec![0.0];
    for k in 1..required {
        let next = k as f64 * step;
        if next < 1.0 && next > *s.last().unwrap() {
            s.push(next);
        }
    }
    s.push(1.0);
    Ok(s)
}

/// The a priori schedule. In adaptive mode this is only the plan the run starts
/// from; the steps actually taken follow the measured stage norms.
pub fn plan_schedule(constants: &ConstantsReport, cfg: &ContinuationConfig) -> Result<Vec<f64>> {
    paper_schedule(constants.c3_prime, cfg.safety_theta, cfg.max_stages)
}

/// The stage is a certified contraction: measured norm below 1 and observed
/// ratios below 1 and within `0.05` of the measured norm.
pub fn verify_contraction(stage: &StageReport) -> bool {
    stage.measured_norm < 1.0
        && stage.geometric_ratio_observed < 1.0
        && stage.geometric_ratio_observed <= stage.measured_norm + 0.05
}

/// What an observer sees for each Picard iterate.
pub struct StageView<'a> {
    pub index: usize,
    pub s_start: f64,
    pub s_end: f64,
    pub operator: &'a DiscreteOperator,
    pub iteration: usize,
}

pub type Observer<'a> = &'a mut dyn FnMut(&StageView<'_>, &[f64]);

fn h2_norm(grid: &Grid, x: &[f64]) -> f64 {
    h2_quadratic(grid, x).sqrt()
}

fn rel_residual(op: &DiscreteOperator, u: &[f64], f: &[f64], f_norm: f64) -> f64 {
    let r: Vec<f64> = op.apply_raw(u).iter().zip(f).map(|(a, b)| a - b).collect();
    dot(&r, &r).sqrt() / f_norm
}

/// One stage: iterate `u_{k+1} = prev(f) - s_step prev(direction u_k)` from
/// `u_0 = 0` until `||L_next u - f|| <= picard_rtol ||f||`, where
/// `L_next = L_prev + s_step direction`.
#[allow(clippy::too_many_arguments)]
pub fn picard_stage(
    prev_solver: &dyn LinearSolve,
    l_next: &DiscreteOperator,
    direction: &DiscreteOperator,
    s_step: f64,
    f: &GridFunction,
    measured_norm: f64,
    cfg: &ContinuationConfig,
    mut observer: Option<Observer<'_>>,
    span: (usize, f64, f64),
) -> Result<(GridFunction, StageReport)> {
    let (index, s_start, s_end) = span;
    if measured_norm.is_nan() || measured_norm >= 1.0 {
        return Err(Error::StageRejected {
            stage: index,
            norm: measured_norm,
        });
    }
    let grid = *f.grid();
    let f_norm = dot(f.values(), f.values()).sqrt();
    let mut report = StageReport {
        index,
        s_start,
        s_end,
        measured_norm,
        picard_iters: 0,
        final_residual: 0.0,
        geometric_ratio_observed: 0.0,
    };
    if f_norm == 0.0 {
        return Ok((GridFunction::zeros(grid), report));
    }
    let g = prev_solver.solve_raw(f.values())?;
    let mut u = vec![0.0; grid.len()];
    let mut last_step = f64::NAN;
    let mut history = Vec::new();
    for k in 1..=cfg.picard_max_iters {
        let next = if k == 1 || s_step == 0.0 {
            g.clone()
        } else {
            let w = prev_solver.solve_raw(&direction.apply_raw(&u))?;
            g.iter().zip(&w).map(|(gi, wi)| gi - s_step * wi).collect()
        };
        let delta: Vec<f64> = next.iter().zip(&u).map(|(a, b)| a - b).collect();
        let step = h2_norm(&grid, &delta);
        if k > 1 && step > 1e-8 * h2_norm(&grid, &next) && last_step > 0.0 {
            report.geometric_ratio_observed = report.geometric_ratio_observed.max(step / last_step);
        }
        last_step = step;
        u = next;
        let res = rel_residual(l_next, &u, f.values(), f_norm);
        history.push(res);
        if let Some(obs) = observer.as_mut() {
            obs(
                &StageView {
                    index,
                    s_start,
                    s_end,
                    operator: l_next,
                    iteration: k,
                },
                &u,
            );
        }
        if res <= cfg.picard_rtol {
            report.picard_iters = k;
            report.final_residual = res;
            return Ok((GridFunction::from_values(grid, u)?, report));
        }
    }
    Err(Error::NotConverged {
        what: format!("Picard iteration of stage {index}"),
        iterations: cfg.picard_max_iters,
        residual: *history.last().unwrap_or(&f64::NAN),
        history,
    })
}

/// `L0^{-1}` that counts how often it is applied.
struct CountedBase {
    inner: Box<dyn LinearSolve>,
    count: Cell<usize>,
}

impl LinearSolve for CountedBase {
    fn solve_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.count.set(self.count.get() + 1);
        self.inner.solve_raw(b)
    }
    fn solve_transpose_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.count.set(self.count.get() + 1);
        self.inner.solve_transpose_raw(b)
    }
}

/// `L_s^{-1}` realized literally: a Picard loop against the previous stage's
/// inverse, which may itself be a Picard loop.
struct NestedStageSolver<'a> {
    prev: Box<dyn LinearSolve + 'a>,
    op: DiscreteOperator,
    direction: &'a DiscreteOperator,
    s_step: f64,
    rtol: f64,
    max_iters: usize,
}

impl LinearSolve for NestedStageSolver<'_> {
    fn solve_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        let b_norm = dot(b, b).sqrt();
        if b_norm == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        let g = self.prev.solve_raw(b)?;
        let mut u = g.clone();
        let mut history = Vec::new();
        for _ in 0..self.max_iters {
            let res = rel_residual(&self.op, &u, b, b_norm);
            history.push(res);
            if res <= self.rtol {
                return Ok(u);
            }
            let w = self.prev.solve_raw(&self.direction.apply_raw(&u))?;
            u = g
                .iter()
                .zip(&w)
                .map(|(gi, wi)| gi - self.s_step * wi)
                .collect();
        }
        Err(Error::NotConverged {
            what: format!("nested Picard solve of {}", self.op.description()),
            iterations: self.max_iters,
            residual: *history.last().unwrap_or(&f64::NAN),
            history,
        })
    }
    fn solve_transpose_raw(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_raw(b)
    }
}

/// Largest grid (by `N * bandwidth^2`) on which stage norms are measured with a
/// banded factorization of `L_prev`; above it the stage solver itself is used.
const DIRECT_MEASURE_BUDGET: f64 = 2e9;

fn direct_affordable(op: &DiscreteOperator) -> bool {
    let bw = op.matrix().bandwidth() as f64;
    op.grid().len() as f64 * bw * bw <= DIRECT_MEASURE_BUDGET
}

/// Solve `L u = f` by continuation from `L0`, refusing when the coercivity
/// estimate of `L` is not positive.
pub fn continuation_solve(
    coeffs: &CoefficientField,
    f: &GridFunction,
    cfg: &ContinuationConfig,
) -> Result<(GridFunction, SolveReport)> {
    continuation_solve_observed(coeffs, f, cfg, None)
}

pub fn continuation_solve_observed(
    coeffs: &CoefficientField,
    f: &GridFunction,
    cfg: &ContinuationConfig,
    observer: Option<Observer<'_>>,
) -> Result<(GridFunction, SolveReport)> {
    let grid = *f.grid();
    let estimator = Estimator::new(grid, cfg.policy());
    let constants = estimator.constants(coeffs)?;
    continuation_with_constants(coeffs, f, cfg, constants, &estimator, observer)
}

/// As [`continuation_solve_observed`] with constants already estimated on the
/// same grid.
pub fn continuation_with_constants(
    coeffs: &CoefficientField,
    f: &GridFunction,
    cfg: &ContinuationConfig,
    constants: ConstantsReport,
    estimator: &Estimator,
    mut observer: Option<Observer<'_>>,
) -> Result<(GridFunction, SolveReport)> {
    let started = Instant::now();
    cfg.validate()?;
    let grid = *f.grid();
    grid.ensure_same(&constants.grid)?;
    if coeffs.dim() != grid.dim() {
        return Err(Error::InvalidArgument(format!(
            "coefficients are {}-dimensional, grid is {}-dimensional",
            coeffs.dim(),
            grid.dim()
        )));
    }
    if constants.c2.value <= 0.0 {
        return Err(Error::Coercivity {
            c2: constants.c2.value,
        });
    }
    let l = assemble(coeffs, &grid)?;
    let l0 = assemble_laplacian(&grid);
    let direction = l.minus(&l0)?;
    let base = CountedBase {
        inner: match cfg.base {
            BaseKind::Spectral => Box::new(SpectralLaplacian::new(grid)),
            BaseKind::Cg => Box::new(CgLaplacian {
                grid,
                rtol: cfg.inner_solve_rtol,
            }),
        },
        count: Cell::new(0),
    };
    let finish = |u: GridFunction,
                  stages: Vec<StageReport>,
                  base: &CountedBase|
     -> Result<(GridFunction, SolveReport)> {
        let f_norm = dot(f.values(), f.values()).sqrt();
        let final_residual_vs_l = if f_norm == 0.0 {
            0.0
        } else {
            rel_residual(&l, u.values(), f.values(), f_norm)
        };
        if final_residual_vs_l > 10.0 * cfg.picard_rtol {
            return Err(Error::NotConverged {
                what: "continuation (final residual against L)".into(),
                iterations: stages.len(),
                residual: final_residual_vs_l,
                history: stages.iter().map(|s| s.final_residual).collect(),
            });
        }
        Ok((
            u,
            SolveReport {
                stages,
                constants: constants.clone(),
                total_inner_solves: base.count.get(),
                final_residual_vs_l,
                wall_time: started.elapsed(),
            },
        ))
    };

    if f.values().iter().all(|&v| v == 0.0) {
        return finish(GridFunction::zeros(grid), Vec::new(), &base);
    }
    if constants.c_pert.value == 0.0 {
        let u = GridFunction::from_values(grid, base.solve_raw(f.values())?)?;
        return finish(u, Vec::new(), &base);
    }

    let planned = match cfg.schedule_mode {
        ScheduleMode::Paper => Some(plan_schedule(&constants, cfg)?),
        ScheduleMode::Adaptive => None,
    };
    let mut stages = Vec::new();
    let mut u = GridFunction::zeros(grid);
    let mut s_prev = 0.0;
    let mut nested_prev: Option<Box<dyn LinearSolve + '_>> = None;
    let mut index = 0;
    while s_prev < 1.0 {
        if index >= cfg.max_stages {
            return Err(Error::ScheduleOverflow {
                c3_prime: constants.c3_prime,
                required: index + 1,
                max_stages: cfg.max_stages,
            });
        }
        let l_prev = homotopy(&l0, &l, s_prev)?;
        let pcg_prev;
        let prev_solver: &dyn LinearSolve = if s_prev == 0.0 {
            &base
        } else if cfg.nested {
            nested_prev.as_deref().expect("nested solver for s > 0")
        } else {
            pcg_prev = PcgSolver::new(l_prev.clone(), &base, cfg.inner_solve_rtol);
            &pcg_prev
        };
        let direct;
        let measure_solver: &dyn LinearSolve = if direct_affordable(&l_prev) {
            direct = DirectSolver::new(&l_prev)?;
            &direct
        } else {
            prev_solver
        };
        let (s_next, measured) = match &planned {
            Some(plan) => {
                let s_next = plan[index + 1];
                let map = StageMap {
                    solver: measure_solver,
                    perturbation: &direction,
                    scale: s_next - s_prev,
                };
                (s_next, estimator.operator_norm_h2(&map)?.value)
            }
            None => {
                let map = StageMap {
                    solver: measure_solver,
                    perturbation: &direction,
                    scale: 1.0,
                };
                let full = estimator.operator_norm_h2(&map)?.value;
                let step = (cfg.safety_theta / full).min(1.0 - s_prev);
                let s_next = if step >= 1.0 - s_prev {
                    1.0
                } else {
                    s_prev + step
                };
                (s_next, (s_next - s_prev) * full)
            }
        };
        let wrap = |e: Error| Error::Stage {
            stage: index,
            s_start: s_prev,
            s_end: s_next,
            source: Box::new(e),
        };
        let l_next = homotopy(&l0, &l, s_next).map_err(wrap)?;
        let (u_stage, report) = picard_stage(
            prev_solver,
            &l_next,
            &direction,
            s_next - s_prev,
            f,
            measured,
            cfg,
            observer.as_mut().map(|o| &mut **o as Observer<'_>),
            (index, s_prev, s_next),
        )
        .map_err(wrap)?;
        stages.push(report);
        u = u_stage;
        if cfg.nested && s_next < 1.0 {
            let prev: Box<dyn LinearSolve + '_> = match nested_prev.take() {
                Some(p) => p,
                None => Box::new(&base),
            };
            nested_prev = Some(Box::new(NestedStageSolver {
                prev,
                op: l_next.clone(),
                direction: &direction,
                s_step: s_next - s_prev,
                rtol: cfg.inner_solve_rtol,
                max_iters: cfg.picard_max_iters,
            }));
        }
        s_prev = s_next;
        index += 1;
    }
    drop(nested_prev);
    finish(u, stages, &base)
}

/// Discrete surjectivity witness for an assembled operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeReport {
    pub sigma_min: f64,
    pub lsq_residual: f64,
    pub surjective: bool,
}

/// Smallest singular value of `L` (Lanczos on `(L^T L)^{-1}`)
/// and the relative residual of a solve for seeded random data.
pub fn range_diagnostics(l: &DiscreteOperator, seed: u64) -> Result<RangeReport> {
    let grid = *l.grid();
    let failed = RangeReport {
        sigma_min: 0.0,
        lsq_residual: f64::INFINITY,
        surjective: false,
    };
    let solver = match DirectSolver::new(l) {
        Ok(s) => s,
        Err(Error::Singular { .. }) => return Ok(failed),
        Err(e) => return Err(e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (est, _) = lanczos_max(
        |v| solver.solve_transpose_raw(&solver.solve_raw(v)?),
        <[f64]>::to_vec,
        x,
        &PowerPolicy::default(),
    )?;
    let mu = est.value;
    if !mu.is_finite() {
        return Ok(failed);
    }
    let sigma_min = 1.0 / mu.sqrt();
    let f: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let u = solver.solve_raw(&f)?;
    let lsq_residual = rel_residual(l, &u, &f, dot(&f, &f).sqrt());
    let scale = l.matrix().norm_bound();
    Ok(RangeReport {
        sigma_min,
        lsq_residual,
        surjective: sigma_min > 1e-10 * scale && lsq_residual <= 1e-8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_solver::solve_direct;
    use crate::coefficients::ScalarFn;
    use crate::grid::{make_grid, norm_h0};
    use std::f64::consts::PI;

    fn smooth_rhs(grid: Grid) -> GridFunction {
        GridFunction::from_fn(grid, |x| x[0] * (1.0 - x[0]) + (3.0 * x[1]).cos())
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(paper_schedule(0.4, 0.5, 64).unwrap(), vec![0.0, 1.0]);
        assert_eq!(
            paper_schedule(2.0, 0.5, 64).unwrap(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(paper_schedule(1e-3, 0.5, 64).unwrap(), vec![0.0, 1.0]);
        let s = paper_schedule(3.3, 0.5, 64).unwrap();
        assert_eq!(s.len() - 1, 7);
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        match paper_schedule(100.0, 0.5, 64) {
            Err(Error::ScheduleOverflow {
                c3_prime, required, ..
            }) => {
                assert_eq!(c3_prime, 100.0);
                assert_eq!(required, 200);
            }
            other => panic!("{other:?}"),
        }
        assert!(paper_schedule(0.0, 0.5, 64).is_err());
    }

    #[test]
    fn contraction_verdicts() {
        let mut s = StageReport {
            index: 0,
            s_start: 0.0,
            s_end: 1.0,
            measured_norm: 0.5,
            picard_iters: 3,
            final_residual: 0.0,
            geometric_ratio_observed: 0.48,
        };
        assert!(verify_contraction(&s));
        s.measured_norm = 0.999;
        s.geometric_ratio_observed = 1.01;
        assert!(!verify_contraction(&s));
    }

    #[test]
    fn zero_step_stage_is_one_base_solve() {
        let g = make_grid(2, 15).unwrap();
        let l0 = assemble_laplacian(&g);
        let base = SpectralLaplacian::new(g);
        let f = smooth_rhs(g);
        let cfg = ContinuationConfig::default();
        let (u, r) =
            picard_stage(&base, &l0, &l0, 0.0, &f, 0.0, &cfg, None, (0, 0.0, 1.0)).unwrap();
        assert_eq!(r.picard_iters, 1);
        assert_eq!(u, base.solve(&f).unwrap());
    }

    #[test]
    fn single_stage_shift_matches_direct() {
        let g = make_grid(2, 31).unwrap();
        let coeffs = CoefficientField::identity(2).with_q(ScalarFn::Constant(1.0));
        let f = smooth_rhs(g);
        let (u, rep) = continuation_solve(&coeffs, &f, &ContinuationConfig::default()).unwrap();
        assert_eq!(rep.stages.len(), 1);
        let oracle = solve_direct(&assemble(&coeffs, &g).unwrap(), &f).unwrap();
        assert!(norm_h0(&u.sub(&oracle).unwrap()) <= 1e-8 * norm_h0(&oracle));
        assert!(rep.stages.iter().all(verify_contraction));
    }

    #[test]
    fn laplacian_needs_no_stages() {
        let g = make_grid(2, 15).unwrap();
        let f = smooth_rhs(g);
        let (u, rep) = continuation_solve(
            &CoefficientField::identity(2),
            &f,
            &ContinuationConfig::default(),
        )
        .unwrap();
        assert!(rep.stages.is_empty());
        assert_eq!(u, SpectralLaplacian::new(g).solve(&f).unwrap());
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let g = make_grid(2, 15).unwrap();
        let coeffs = CoefficientField::identity(2).with_q(ScalarFn::Constant(2.0));
        let (u, rep) = continuation_solve(
            &coeffs,
            &GridFunction::zeros(g),
            &ContinuationConfig::default(),
        )
        .unwrap();
        assert!(rep.stages.is_empty());
        assert_eq!(u.max_abs(), 0.0);
    }

    #[test]
    fn refuses_without_coercivity() {
        let g = make_grid(2, 15).unwrap();
        let coeffs = CoefficientField::identity(2).with_q(ScalarFn::Constant(-3.0 * PI * PI));
        let err = continuation_solve(&coeffs, &smooth_rhs(g), &ContinuationConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Coercivity { .. }), "{err}");
    }

    #[test]
    fn manufactured_solution_is_recovered() {
        let g = make_grid(2, 31).unwrap();
        let coeffs = CoefficientField::identity(2).with_q(ScalarFn::Constant(5.0));
        let exact = GridFunction::from_fn(g, |x| (PI * x[0]).sin() * (PI * x[1]).sin());
        let f = assemble(&coeffs, &g).unwrap().apply(&exact).unwrap();
        let (u, _) = continuation_solve(&coeffs, &f, &ContinuationConfig::default()).unwrap();
        assert!(u.sub(&exact).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn nested_and_flattened_agree() {
        let g = make_grid(2, 15).unwrap();
        let coeffs = CoefficientField::identity(2).with_a(
            0,
            0,
            ScalarFn::Sin {
                base: 1.0,
                amp: 0.5,
                axis: 0,
                freq: 2.0,
            },
        );
        let f = smooth_rhs(g);
        let flat = continuation_solve(&coeffs, &f, &ContinuationConfig::default()).unwrap();
        let nested_cfg = ContinuationConfig {
            nested: true,
            ..ContinuationConfig::default()
        };
        let nested = continuation_solve(&coeffs, &f, &nested_cfg).unwrap();
        assert!(flat.1.stages.len() >= 2, "{} stages", flat.1.stages.len());
        assert_eq!(flat.1.stages.len(), nested.1.stages.len());
        let d = norm_h0(&flat.0.sub(&nested.0).unwrap());
        assert!(d <= 1e-8 * norm_h0(&flat.0), "{d}");
    }

    #[test]
    fn adaptive_steps_hit_theta() {
        let g = make_grid(2, 15).unwrap();
        let coeffs = CoefficientField::identity(2).with_a(
            0,
            0,
            ScalarFn::Sin {
                base: 1.0,
                amp: 0.5,
                axis: 0,
                freq: 2.0,
            },
        );
        let cfg = ContinuationConfig {
            schedule_mode: ScheduleMode::Adaptive,
            ..ContinuationConfig::default()
        };
        let (_, rep) = continuation_solve(&coeffs, &smooth_rhs(g), &cfg).unwrap();
        assert_eq!(rep.stages.last().unwrap().s_end, 1.0);
        for s in &rep.stages[..rep.stages.len() - 1] {
            assert!((s.measured_norm - 0.5).abs() < 1e-12);
        }
        assert!(rep.stages.iter().all(verify_contraction));
    }

    #[test]
    fn csv_has_stage_and_summary_rows() {
        let g = make_grid(2, 15).unwrap();
        let coeffs = CoefficientField::identity(2).with_q(ScalarFn::Constant(1.0));
        let (_, rep) =
            continuation_solve(&coeffs, &smooth_rhs(g), &ContinuationConfig::default()).unwrap();
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SolveReport::CSV_HEADER);
        assert_eq!(lines.len(), rep.stages.len() + 2);
        assert!(lines.last().unwrap().starts_with("summary,"));
    }

    #[test]
    fn range_of_laplacian_and_shifted_singular() {
        let g = make_grid(2, 15).unwrap();
        let l0 = assemble_laplacian(&g);
        let r = range_diagnostics(&l0, 1).unwrap();
        let h = g.h();
        let lam = 8.0 / (h * h) * (PI * h / 2.0).sin().powi(2);
        assert!(r.surjective);
        assert!((r.sigma_min - lam).abs() < 1e-6 * lam);
        assert!(range_diagnostics(&l0.shifted(1.0), 1).unwrap().surjective);
        let bad = range_diagnostics(&l0.shifted(-lam), 1).unwrap();
        assert!(!bad.surjective, "{bad:?}");
    }
}
