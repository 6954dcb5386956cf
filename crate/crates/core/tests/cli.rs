use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use elliptic_core::cli::{EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_OK, EXIT_PRECONDITION};
use elliptic_core::grid::GridFunction;

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn elliptic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elliptic"))
        .args(args)
        .output()
        .unwrap()
}

fn run_cmd(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    elliptic(&args)
}

fn csv_value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

const WAVY: &str = r#"
[grid]
dim = 2
n = 63
[coefficients]
a11 = "sin 1 0.5 1 1"
q = "linear 1 0 1"
[study]
f = "manufactured"
"#;

#[test]
fn solve_recovers_manufactured_solution_on_63() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), WAVY);
    let out = run_cmd("solve", &config, dir.path(), &["--oracle"]);
    assert_eq!(
        out.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert!(summary.starts_with("quantity,value\n"));
    assert!(
        csv_value(&summary, "manufactured_error_h0") <= 1e-8,
        "{summary}"
    );
    assert!(csv_value(&summary, "oracle_error_h0") <= 1e-8, "{summary}");
    assert!(csv_value(&summary, "final_residual") <= 1e-9, "{summary}");

    let dump = std::fs::read(dir.path().join("solution.dump")).unwrap();
    let u = GridFunction::read_dump(dump.as_slice()).unwrap();
    assert_eq!(u.grid().n_per_axis(), 63);
    let exact = elliptic_core::manufactured::exact(*u.grid());
    let err = elliptic_core::grid::norm_h0(&u.sub(&exact).unwrap())
        / elliptic_core::grid::norm_h0(&exact);
    assert!(err <= 1e-8, "{err}");

    let report = std::fs::read_to_string(dir.path().join("solve_report.csv")).unwrap();
    assert!(report.starts_with("row,stage,s_start,s_end,measured_norm,picard_iters,final_residual,geometric_ratio,inner_solves\n"));
    let constants = std::fs::read_to_string(dir.path().join("constants.csv")).unwrap();
    assert_eq!(constants.lines().count(), 2);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[grid]\ndim = 2\nn = 15\ncolour = 3\n");
    let out = run_cmd("solve", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.starts_with("error category=config reason="),
        "{stderr}"
    );
    assert_eq!(stderr.lines().count(), 1);
}

#[test]
fn missing_config_and_bad_flags_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cmd(
        "constants",
        &dir.path().join("absent.toml"),
        dir.path(),
        &[],
    );
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    assert_eq!(elliptic(&["solve"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(elliptic(&["transmogrify"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(elliptic(&["--help"]).status.code(), Some(EXIT_OK));
}

#[test]
fn negative_coercivity_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[grid]\ndim = 2\nn = 15\n[coefficients]\nq = \"const -30\"\n",
    );
    let out = run_cmd("solve", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(EXIT_PRECONDITION));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("category=precondition"), "{stderr}");
    assert!(stderr.contains("(Lu,u) >= c2 (u,u)"), "{stderr}");
    assert!(!dir.path().join("solution.dump").exists());
}

#[test]
fn exhausted_picard_budget_is_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[grid]\ndim = 2\nn = 15\n[coefficients]\na11 = \"sin 1 0.5 1 1\"\n[solver]\npicard_max_iters = 2\n",
    );
    let out = run_cmd("solve", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(EXIT_DIVERGENCE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("category=divergence"));
}

#[test]
fn single_grid_convergence_has_no_order_column() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[grid]\ndim = 2\nn = 15\n[coefficients]\nq = \"const 2\"\n[study]\nrefinements = [15]\n",
    );
    let out = run_cmd("convergence", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,h,error_h0");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("15,"));
}

#[test]
fn schedule_and_mollify_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[grid]\ndim = 2\nn = 31\n[coefficients]\na11 = \"const 2\"\na22 = \"const 1.5\"\n[solver]\nmode = \"paper\"\n",
    );
    let out = run_cmd("schedule", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let csv = std::fs::read_to_string(dir.path().join("schedule.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert!(rows.len() >= 2);
    assert_eq!(rows[0][1], 0.0);
    assert_eq!(rows.last().unwrap()[2], 1.0);
    for w in rows.windows(2) {
        assert_eq!(w[0][2], w[1][1]);
    }

    let out = run_cmd("mollify", &config, dir.path(), &[]);
    assert_eq!(out.status.code(), Some(EXIT_OK));
    let csv = std::fs::read_to_string(dir.path().join("mollify.csv")).unwrap();
    let errors: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(errors.len(), 3);
    assert!(errors[0] > errors[1] && errors[1] > errors[2]);
}

#[test]
fn fredholm_table_certifies_small_drift() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[grid]\ndim = 2\nn = 15\n[coefficients]\nb1 = \"const 1\"\n[study]\nf = \"manufactured\"\ndrift_scales = [0.0, 0.1]\n",
    );
    let out = run_cmd("fredholm", &config, dir.path(), &["--seed", "4"]);
    assert_eq!(
        out.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.path().join("fredholm.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "scale,sigma_min,iterations,residual");
    let zero: Vec<&str> = lines[1].split(',').collect();
    assert!((zero[1].parse::<f64>().unwrap() - 1.0).abs() < 1e-9);
    let drift: Vec<&str> = lines[2].split(',').collect();
    assert!(drift[3].parse::<f64>().unwrap() <= 1e-8);
}
