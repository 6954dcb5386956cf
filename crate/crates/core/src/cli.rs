//! Batch driver: `elliptic <subcommand> --config <path> [--out <dir>] [--oracle] [--seed <int>]`.
//!
//! Configs are TOML with the sections `[grid]`, `[coefficients]`, `[solver]`
//! and `[study]`. Coefficient functions use the catalog syntax of
//! [`ScalarFn::parse`], e.g. `a11 = "sin 1 0.5 1 2"`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::base_solver::solve_direct;
use crate::coefficients::{CoefficientField, ScalarFn};
use crate::continuation::{
    continuation_with_constants, plan_schedule, BaseKind, ContinuationConfig, ScheduleMode,
};
use crate::error::{Error, Result};
use crate::estimates::{Estimator, PowerPolicy};
use crate::fredholm::{fredholm_check, solve_perturbed, FredholmConfig};
use crate::grid::{gradient_energy, make_grid, norm_h0, Grid, GridFunction};
use crate::manufactured;
use crate::mollifier::mollify;
use crate::operators::{assemble, assemble_first_order, DiscreteOperator};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PRECONDITION: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "elliptic",
    version,
    about = "Continuation solver and constant certification for elliptic Dirichlet problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Continuation solve; writes solution.dump, solve_report.csv, constants.csv, summary.csv
    Solve(Common),
    /// Estimate c0, c1, c2, c3, c_pert, c3'; writes constants.csv
    Constants(Common),
    /// Manufactured-solution refinement study; writes convergence.csv
    Convergence(Common),
    /// Mollifier demo; writes mollify.csv
    Mollify(Common),
    /// Drift sweep for (L + L') u = f; writes fredholm.csv
    Fredholm(Common),
    /// Paper-mode stage plan from the measured c3'; writes schedule.csv
    Schedule(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Cross-check against the direct factorization solve
    #[arg(long)]
    oracle: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridSection,
    #[serde(default)]
    pub coefficients: CoefficientSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub study: StudySection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    pub a11: Option<String>,
    pub a12: Option<String>,
    pub a13: Option<String>,
    pub a22: Option<String>,
    pub a23: Option<String>,
    pub a33: Option<String>,
    pub q: Option<String>,
    pub b1: Option<String>,
    pub b2: Option<String>,
    pub b3: Option<String>,
    pub grad_bound: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub mode: Option<String>,
    pub safety_theta: Option<f64>,
    pub picard_rtol: Option<f64>,
    pub picard_max_iters: Option<usize>,
    pub inner_solve_rtol: Option<f64>,
    pub max_stages: Option<usize>,
    pub nested: Option<bool>,
    pub base: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    /// `"manufactured"` or a catalog function.
    pub f: Option<String>,
    pub refinements: Option<Vec<usize>>,
    pub epsilons: Option<Vec<f64>>,
    /// Field mollified by the `mollify` subcommand.
    pub h: Option<String>,
    pub drift_scales: Option<Vec<f64>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string().replace('\n', " ")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn grid_at(&self, n: usize) -> Result<Grid> {
        make_grid(self.grid.dim, n)
    }

    pub fn grid(&self) -> Result<Grid> {
        self.grid_at(self.grid.n)
    }

    pub fn coefficients(&self) -> Result<CoefficientField> {
        let dim = self.grid.dim;
        let c = &self.coefficients;
        let mut field = CoefficientField::identity(dim);
        let entries = [
            ((0, 0), &c.a11),
            ((0, 1), &c.a12),
            ((0, 2), &c.a13),
            ((1, 1), &c.a22),
            ((1, 2), &c.a23),
            ((2, 2), &c.a33),
        ];
        for ((i, j), spec) in entries {
            if let Some(spec) = spec {
                if j >= dim {
                    return Err(Error::Parse(format!(
                        "a{}{} given for a {dim}-dimensional problem",
                        i + 1,
                        j + 1
                    )));
                }
                field = field.with_a(i, j, ScalarFn::parse(spec, dim)?);
            }
        }
        if let Some(q) = &c.q {
            field = field.with_q(ScalarFn::parse(q, dim)?);
        }
        if let Some(g) = c.grad_bound {
            field = field.with_grad_bound(g);
        }
        Ok(field)
    }

    pub fn drift(&self) -> Result<Vec<ScalarFn>> {
        let dim = self.grid.dim;
        let c = &self.coefficients;
        [&c.b1, &c.b2, &c.b3]
            .iter()
            .enumerate()
            .map(|(i, b)| match b {
                Some(_) if i >= dim => Err(Error::Parse(format!(
                    "b{} given for a {dim}-dimensional problem",
                    i + 1
                ))),
                Some(spec) => ScalarFn::parse(spec, dim).map(Some),
                None if i < dim => Ok(Some(ScalarFn::Constant(0.0))),
                None => Ok(None),
            })
            .filter_map(|r| r.transpose())
            .collect()
    }

    pub fn continuation(&self, seed_override: Option<u64>) -> Result<ContinuationConfig> {
        let s = &self.solver;
        let d = ContinuationConfig::default();
        let cfg = ContinuationConfig {
            schedule_mode: match s.mode.as_deref() {
                None | Some("paper") => ScheduleMode::Paper,
                Some("adaptive") => ScheduleMode::Adaptive,
                Some(other) => {
                    return Err(Error::Parse(format!("unknown schedule mode {other:?}")))
                }
            },
            safety_theta: s.safety_theta.unwrap_or(d.safety_theta),
            picard_rtol: s.picard_rtol.unwrap_or(d.picard_rtol),
            picard_max_iters: s.picard_max_iters.unwrap_or(d.picard_max_iters),
            inner_solve_rtol: s.inner_solve_rtol.unwrap_or(d.inner_solve_rtol),
            max_stages: s.max_stages.unwrap_or(d.max_stages),
            nested: s.nested.unwrap_or(d.nested),
            base: match s.base.as_deref() {
                None | Some("spectral") => BaseKind::Spectral,
                Some("cg") => BaseKind::Cg,
                Some(other) => return Err(Error::Parse(format!("unknown base solver {other:?}"))),
            },
            seed: seed_override.or(s.seed).unwrap_or(d.seed),
        };
        cfg.validate().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(cfg)
    }

    fn study_f(&self) -> &str {
        self.study.f.as_deref().unwrap_or("manufactured")
    }
}

/// Exit code category for an error.
pub fn exit_category(e: &Error) -> (i32, &'static str) {
    match e {
        Error::Parse(_) | Error::InvalidGrid(_) | Error::InvalidArgument(_) => {
            (EXIT_CONFIG, "config")
        }
        Error::Ellipticity { .. }
        | Error::Coercivity { .. }
        | Error::Singular { .. }
        | Error::NotSymmetric(_)
        | Error::HomotopyParameter(_)
        | Error::ProbeViolation { .. }
        | Error::ScheduleOverflow { .. }
        | Error::FredholmAlternative { .. }
        | Error::GridMismatch { .. }
        | Error::NonFinite(_) => (EXIT_PRECONDITION, "precondition"),
        Error::NotConverged { .. } | Error::StageRejected { .. } | Error::Stage { .. } => {
            (EXIT_DIVERGENCE, "divergence")
        }
        Error::Io(_) => (EXIT_INTERNAL, "io"),
    }
}

struct Run {
    config: Config,
    out: PathBuf,
    oracle: bool,
    seed: Option<u64>,
    stdout: String,
}

impl Run {
    fn write(&self, name: &str, content: &str) -> Result<()> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.out.join(name), content)?;
        Ok(())
    }

    fn seed(&self) -> u64 {
        self.seed.or(self.config.solver.seed).unwrap_or(0)
    }

    fn estimator(&self, grid: Grid) -> Estimator {
        Estimator::new(
            grid,
            PowerPolicy {
                seed: self.seed(),
                ..PowerPolicy::default()
            },
        )
    }

    /// Right-hand side on `grid`; `"manufactured"` gives `L_h u*` so that `u*`
    /// is the exact discrete solution.
    fn rhs(
        &self,
        op: &DiscreteOperator,
        grid: Grid,
    ) -> Result<(GridFunction, Option<GridFunction>)> {
        match self.config.study_f() {
            "manufactured" => {
                let exact = manufactured::exact(grid);
                Ok((op.apply(&exact)?, Some(exact)))
            }
            spec => {
                let f = ScalarFn::parse(spec, grid.dim())?;
                Ok((GridFunction::from_fn(grid, |x| f.eval(x)), None))
            }
        }
    }

    fn solve(&mut self) -> Result<()> {
        let grid = self.config.grid()?;
        let coeffs = self.config.coefficients()?;
        let cfg = self.config.continuation(self.seed)?;
        let l = assemble(&coeffs, &grid)?;
        let (f, exact) = self.rhs(&l, grid)?;
        let estimator = self.estimator(grid);
        let constants = estimator.constants(&coeffs)?;
        let (u, report) =
            continuation_with_constants(&coeffs, &f, &cfg, constants, &estimator, None)?;
        self.write("solution.dump", &u.to_dump_string())?;
        self.write("solve_report.csv", &report.to_csv())?;
        self.write(
            "constants.csv",
            &format!(
                "{}\n{}\n",
                crate::estimates::ConstantsReport::CSV_HEADER,
                report.constants.csv_row()
            ),
        )?;
        let mut summary = String::from("quantity,value\n");
        let _ = writeln!(summary, "stages,{}", report.stages.len());
        let _ = writeln!(summary, "final_residual,{:.6e}", report.final_residual_vs_l);
        if let Some(exact) = exact {
            let err = norm_h0(&u.sub(&exact)?) / norm_h0(&exact);
            let _ = writeln!(summary, "manufactured_error_h0,{err:.6e}");
        }
        if self.oracle {
            let direct = solve_direct(&l, &f)?;
            let err = norm_h0(&u.sub(&direct)?) / norm_h0(&direct).max(f64::MIN_POSITIVE);
            let _ = writeln!(summary, "oracle_error_h0,{err:.6e}");
        }
        self.write("summary.csv", &summary)?;
        self.stdout.push_str(&summary);
        Ok(())
    }

    fn constants(&mut self) -> Result<()> {
        let grid = self.config.grid()?;
        let coeffs = self.config.coefficients()?;
        let report = self.estimator(grid).constants(&coeffs)?;
        self.write(
            "constants.csv",
            &format!(
                "{}\n{}\n",
                crate::estimates::ConstantsReport::CSV_HEADER,
                report.csv_row()
            ),
        )?;
        self.stdout.push_str(&report.to_key_values());
        Ok(())
    }

    fn schedule(&mut self) -> Result<()> {
        let grid = self.config.grid()?;
        let coeffs = self.config.coefficients()?;
        let cfg = self.config.continuation(self.seed)?;
        let report = self.estimator(grid).constants(&coeffs)?;
        let plan = if report.c_pert.value == 0.0 {
            vec![0.0, 1.0]
        } else {
            plan_schedule(&report, &cfg)?
        };
        let mut csv = String::from("stage,s_start,s_end\n");
        for (k, w) in plan.windows(2).enumerate() {
            let _ = writeln!(csv, "{k},{:.16e},{:.16e}", w[0], w[1]);
        }
        self.write("schedule.csv", &csv)?;
        let _ = writeln!(
            self.stdout,
            "c3_prime={:.16e}\nstages={}",
            report.c3_prime,
            plan.len() - 1
        );
        Ok(())
    }

    fn convergence(&mut self) -> Result<()> {
        let coeffs = self.config.coefficients()?;
        let cfg = self.config.continuation(self.seed)?;
        let levels = self
            .config
            .study
            .refinements
            .clone()
            .unwrap_or_else(|| vec![15, 31, 63]);
        if levels.is_empty() {
            return Err(Error::Parse("study.refinements is empty".into()));
        }
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for &n in &levels {
            let grid = self.config.grid_at(n)?;
            let f = manufactured::continuum_rhs(&coeffs, grid);
            let exact = manufactured::exact(grid);
            let estimator = self.estimator(grid);
            let constants = estimator.constants(&coeffs)?;
            let (u, _) =
                continuation_with_constants(&coeffs, &f, &cfg, constants, &estimator, None)?;
            rows.push((n, grid.h(), norm_h0(&u.sub(&exact)?)));
        }
        let mut csv = String::new();
        if rows.len() == 1 {
            csv.push_str("n,h,error_h0\n");
            let _ = writeln!(csv, "{},{:.16e},{:.6e}", rows[0].0, rows[0].1, rows[0].2);
        } else {
            csv.push_str("n,h,error_h0,order\n");
            for (k, &(n, h, e)) in rows.iter().enumerate() {
                let order = if k == 0 {
                    String::new()
                } else {
                    let (_, hp, ep) = rows[k - 1];
                    format!("{:.4}", (ep / e).ln() / (hp / h).ln())
                };
                let _ = writeln!(csv, "{n},{h:.16e},{e:.6e},{order}");
            }
        }
        self.write("convergence.csv", &csv)?;
        self.stdout.push_str(&csv);
        Ok(())
    }

    fn mollify(&mut self) -> Result<()> {
        let grid = self.config.grid()?;
        let spec = self
            .config
            .study
            .h
            .clone()
            .unwrap_or_else(|| "sinprod 1".into());
        let field = ScalarFn::parse(&spec, grid.dim())?;
        let h = GridFunction::from_fn(grid, |x| field.eval(x));
        let eps = self
            .config
            .study
            .epsilons
            .clone()
            .unwrap_or_else(|| vec![0.2, 0.1, 0.05]);
        let mut csv = String::from("epsilon,error_h0,gradient_energy\n");
        for e in eps {
            let m = mollify(&h, e)?;
            let _ = writeln!(
                csv,
                "{e},{:.6e},{:.6e}",
                norm_h0(&m.sub(&h)?),
                gradient_energy(&m)
            );
        }
        self.write("mollify.csv", &csv)?;
        self.stdout.push_str(&csv);
        Ok(())
    }

    fn fredholm(&mut self) -> Result<()> {
        let grid = self.config.grid()?;
        let coeffs = self.config.coefficients()?;
        let l = assemble(&coeffs, &grid)?;
        let b = assemble_first_order(&self.config.drift()?, &grid)?;
        let cfg = FredholmConfig {
            seed: self.seed(),
            ..FredholmConfig::default()
        };
        let scales = self
            .config
            .study
            .drift_scales
            .clone()
            .unwrap_or_else(|| vec![0.0, 0.5, 1.0]);
        let mut csv = String::from("scale,sigma_min,iterations,residual\n");
        for s in scales {
            let lp = b.scaled(s);
            let check = fredholm_check(&l, &lp, &cfg)?;
            if check.certified {
                let full = l.plus(&lp)?;
                let (f, _) = self.rhs(&full, grid)?;
                let (_, rep) = solve_perturbed(&l, &lp, &f, &cfg)?;
                let _ = writeln!(
                    csv,
                    "{s},{:.10e},{},{:.6e}",
                    check.sigma_min, rep.iterations, rep.residual
                );
            } else {
                let _ = writeln!(csv, "{s},{:.10e},,", check.sigma_min);
            }
        }
        self.write("fredholm.csv", &csv)?;
        self.stdout.push_str(&csv);
        Ok(())
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Failures print one line `error category=<c> reason=<msg>`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (common, action): (&Common, fn(&mut Run) -> Result<()>) = match &cli.command {
        Command::Solve(c) => (c, Run::solve),
        Command::Constants(c) => (c, Run::constants),
        Command::Convergence(c) => (c, Run::convergence),
        Command::Mollify(c) => (c, Run::mollify),
        Command::Fredholm(c) => (c, Run::fredholm),
        Command::Schedule(c) => (c, Run::schedule),
    };
    let outcome = Config::read(&common.config).and_then(|config| {
        let mut run = Run {
            config,
            out: common.out.clone(),
            oracle: common.oracle,
            seed: common.seed,
            stdout: String::new(),
        };
        action(&mut run).map(|()| run.stdout)
    });
    match outcome {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(e) => {
            let (code, category) = exit_category(&e);
            eprintln!(
                "error category={category} reason={}",
                e.to_string().replace('\n', " ")
            );
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let c = Config::parse(
            r#"
            [grid]
            dim = 2
            n = 15
            [coefficients]
            a11 = "sin 1 0.5 1 2"
            q = "linear 1 0 1"
            b1 = "const 0.1"
            [solver]
            mode = "adaptive"
            seed = 7
            [study]
            refinements = [7, 15]
            "#,
        )
        .unwrap();
        let coeffs = c.coefficients().unwrap();
        assert_eq!(coeffs.a(0, 0).to_string(), "sin 1 0.5 1 2");
        assert_eq!(c.drift().unwrap().len(), 2);
        let cfg = c.continuation(None).unwrap();
        assert_eq!(cfg.schedule_mode, ScheduleMode::Adaptive);
        assert_eq!(cfg.seed, 7);
        assert_eq!(c.continuation(Some(3)).unwrap().seed, 3);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in [
            "[grid]\ndim = 2\n",
            "[grid]\ndim = 2\nn = 15\nbogus = 1\n",
            "[grid]\ndim = 2\nn = 15\n[coefficients]\na13 = \"const 0\"\n",
            "[grid]\ndim = 2\nn = 15\n[solver]\nmode = \"fast\"\n",
        ] {
            let err = Config::parse(text).and_then(|c| {
                c.coefficients()?;
                c.continuation(None)
            });
            let err = err.unwrap_err();
            assert_eq!(exit_category(&err).0, EXIT_CONFIG, "{text}: {err}");
        }
    }

    #[test]
    fn categories() {
        assert_eq!(
            exit_category(&Error::Coercivity { c2: -1.0 }).1,
            "precondition"
        );
        assert_eq!(
            exit_category(&Error::StageRejected {
                stage: 0,
                norm: 1.5
            })
            .1,
            "divergence"
        );
    }
}
