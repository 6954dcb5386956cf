//! `L = L0 - 19` on 15^2 is barely coercive (`c2 ~ 0.67`). Adding the drift
//! `beta x d/dx` moves an eigenvalue of `L + L'` through zero for some `beta`
//! in `(1, 2)`; the crossing is located by the sign of the dense determinant.

use elliptic_core::coefficients::ScalarFn;
use elliptic_core::error::Error;
use elliptic_core::fredholm::{fredholm_check, solve_perturbed, FredholmConfig};
use elliptic_core::grid::{make_grid, Grid, GridFunction};
use elliptic_core::operators::{assemble_first_order, assemble_laplacian, DiscreteOperator};

fn setup() -> (Grid, DiscreteOperator) {
    let grid = make_grid(2, 15).unwrap();
    (grid, assemble_laplacian(&grid).shifted(-19.0))
}

fn drift(grid: &Grid, beta: f64) -> DiscreteOperator {
    assemble_first_order(
        &[
            ScalarFn::Linear {
                c: 0.0,
                grad: [beta, 0.0, 0.0],
            },
            ScalarFn::Constant(0.0),
        ],
        grid,
    )
    .unwrap()
}

fn det_sign(l: &DiscreteOperator, lp: &DiscreteOperator) -> f64 {
    let lu = l.plus(lp).unwrap().matrix().to_dense().lu();
    let u = lu.u();
    let diag: f64 = u.diagonal().iter().map(|d| d.signum()).product();
    diag * lu.p().determinant::<f64>()
}

fn critical_beta(grid: &Grid, l: &DiscreteOperator) -> f64 {
    let (mut lo, mut hi) = (1.0, 2.0);
    assert_eq!(det_sign(l, &drift(grid, lo)), 1.0);
    assert_eq!(det_sign(l, &drift(grid, hi)), -1.0);
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if det_sign(l, &drift(grid, mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn singular_drift_triggers_the_alternative() {
    let (grid, l) = setup();
    let cfg = FredholmConfig::default();
    let beta = critical_beta(&grid, &l);
    let lp = drift(&grid, beta);
    let check = fredholm_check(&l, &lp, &cfg).unwrap();
    assert!(check.sigma_min <= cfg.threshold, "{}", check.sigma_min);
    assert!(!check.certified);

    // the reported direction is (numerically) a null vector of I + A
    let dir = GridFunction::from_values(grid, check.direction.clone()).unwrap();
    let image = l.plus(&lp).unwrap().apply(&dir).unwrap();
    let scale = l.apply(&dir).unwrap();
    let ratio = elliptic_core::grid::norm_h0(&image) / elliptic_core::grid::norm_h0(&scale);
    assert!(ratio < cfg.threshold, "{ratio}");

    let f = GridFunction::from_fn(grid, |x| x[0] * (1.0 - x[0]) * x[1]);
    match solve_perturbed(&l, &lp, &f, &cfg) {
        Err(Error::FredholmAlternative { sigma_min, .. }) => assert!(sigma_min <= cfg.threshold),
        other => panic!("expected the alternative branch, got {other:?}"),
    }
}

#[test]
fn drift_away_from_the_crossing_is_certified() {
    let (grid, l) = setup();
    let cfg = FredholmConfig::default();
    let check = fredholm_check(&l, &drift(&grid, 0.5), &cfg).unwrap();
    assert!(check.certified, "{}", check.sigma_min);
    assert!(check.sigma_min > 1e-3);
}
