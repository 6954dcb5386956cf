//! Discrete mollification `w_eps * h` with the standard smooth bump, and the
//! orthogonality probe `gradient_energy(w_eps * h)`.
//!
//! The probe only demonstrates the mechanism: on a grid, `(L u, h) = 0` for all
//! `u` already forces `h = 0` by linear algebra, so a small probe value is not
//! an independent proof of anything.

use crate::error::{Error, Result};
use crate::grid::{gradient_energy, Grid, GridFunction};

/// Radial bump `exp(-1 / (1 - |x/eps|^2))` on `|x| < eps`, sampled on node
/// offsets and scaled so that `h^dim * sum(weights) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifierKernel {
    epsilon: f64,
    grid: Grid,
    offsets: Vec<[i64; 3]>,
    weights: Vec<f64>,
}

impl MollifierKernel {
    pub fn new(grid: &Grid, epsilon: f64) -> Result<Self> {
        let h = grid.h();
        if !(epsilon > h && epsilon < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "mollifier radius {epsilon} must lie in (h, 1/2) = ({h}, 0.5)"
            )));
        }
        let reach = (epsilon / h).ceil() as i64;
        let span = |axis: usize| {
            if axis < grid.dim() {
                -reach..=reach
            } else {
                0..=0
            }
        };
        let mut offsets = Vec::new();
        let mut raw = Vec::new();
        for i in span(0) {
            for j in span(1) {
                for k in span(2) {
                    let r2 = ((i * i + j * j + k * k) as f64) * h * h / (epsilon * epsilon);
                    if r2 < 1.0 {
                        offsets.push([i, j, k]);
                        raw.push((-1.0 / (1.0 - r2)).exp());
                    }
                }
            }
        }
        let total: f64 = raw.iter().sum::<f64>() * grid.cell_volume();
        let weights = raw.iter().map(|w| w / total).collect();
        Ok(Self {
            epsilon,
            grid: *grid,
            offsets,
            weights,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `h^dim * sum(weights)`.
    pub fn integral(&self) -> f64 {
        self.weights.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Convolution at nodes farther than `eps` from `S`; zero elsewhere.
    pub fn apply(&self, h: &GridFunction) -> Result<GridFunction> {
        self.grid.ensure_same(h.grid())?;
        let g = &self.grid;
        let vol = g.cell_volume();
        let hv = h.values();
        let values = (0..g.len())
            .map(|idx| {
                if g.distance_to_boundary(idx) <= self.epsilon {
                    return 0.0;
                }
                self.offsets
                    .iter()
                    .zip(&self.weights)
                    .map(|(off, w)| w * g.offset(idx, *off).map_or(0.0, |j| hv[j]))
                    .sum::<f64>()
                    * vol
            })
            .collect();
        GridFunction::from_values(*g, values)
    }
}

pub fn mollify(h: &GridFunction, epsilon: f64) -> Result<GridFunction> {
    MollifierKernel::new(h.grid(), epsilon)?.apply(h)
}

/// `gradient_energy(w_eps * h)`.
pub fn orthogonality_probe(h: &GridFunction, epsilon: f64) -> Result<f64> {
    Ok(gradient_energy(&mollify(h, epsilon)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{inner, make_grid, norm_h0};
    use crate::operators::assemble_laplacian;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random(g: Grid, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridFunction::from_values(g, (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn kernel_has_unit_integral() {
        for (dim, n, eps) in [(2, 63, 0.2), (2, 63, 0.05), (3, 15, 0.3)] {
            let g = make_grid(dim, n).unwrap();
            let k = MollifierKernel::new(&g, eps).unwrap();
            assert!((k.integral() - 1.0).abs() < 1e-10);
            assert!(k.weights().iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn radius_is_validated() {
        let g = make_grid(2, 15).unwrap();
        assert!(MollifierKernel::new(&g, g.h()).is_err());
        assert!(MollifierKernel::new(&g, 0.5).is_err());
    }

    #[test]
    fn constants_are_preserved_deep_inside() {
        let g = make_grid(2, 31).unwrap();
        let m = mollify(&GridFunction::constant(g, 1.0), 0.2).unwrap();
        for idx in 0..g.len() {
            if g.distance_to_boundary(idx) > 0.2 {
                assert!((m.values()[idx] - 1.0).abs() < 1e-10);
            } else {
                assert_eq!(m.values()[idx], 0.0);
            }
        }
        assert_eq!(
            mollify(&GridFunction::zeros(g), 0.2).unwrap().max_abs(),
            0.0
        );
    }

    #[test]
    fn error_decreases_with_radius() {
        let g = make_grid(2, 63).unwrap();
        let h = GridFunction::from_fn(g, |x| (PI * x[0]).sin() * (PI * x[1]).sin());
        let errs: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&e| norm_h0(&mollify(&h, e).unwrap().sub(&h).unwrap()))
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        let slope = (errs[0] / errs[2]).ln() / 4f64.ln();
        assert!(slope >= 1.0, "{slope}");
    }

    #[test]
    fn convolution_is_symmetric_in_the_interior() {
        let g = make_grid(2, 31).unwrap();
        let eps = 0.12;
        let deep = |f: GridFunction| {
            let v = (0..g.len())
                .map(|i| {
                    if g.distance_to_boundary(i) > 2.0 * eps + 0.01 {
                        f.values()[i]
                    } else {
                        0.0
                    }
                })
                .collect();
            GridFunction::from_values(g, v).unwrap()
        };
        let u = deep(random(g, 1));
        let v = deep(random(g, 2));
        let a = inner(&mollify(&u, eps).unwrap(), &v).unwrap();
        let b = inner(&u, &mollify(&v, eps).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()), "{a} {b}");
    }

    #[test]
    fn random_data_gives_a_visible_probe() {
        let g = make_grid(2, 31).unwrap();
        assert!(orthogonality_probe(&random(g, 3), 0.1).unwrap() > 1e-4);
        assert_eq!(
            orthogonality_probe(&GridFunction::zeros(g), 0.1).unwrap(),
            0.0
        );
    }

    /// A 9-node operator `A = (I - z z^T) L0` whose range misses exactly the
    /// direction `z`, with `z` supported where the kernel cannot reach. The
    /// least-squares residual of a random system lies along `z` and mollifies
    /// to zero.
    #[test]
    fn residual_of_rank_deficient_operator_mollifies_to_zero() {
        let g = make_grid(2, 3).unwrap();
        let eps = 0.3;
        let n = g.len();
        let l0 = assemble_laplacian(&g).matrix().to_dense();
        let mut z = DVector::zeros(n);
        z[0] = 1.0;
        z[8] = -0.5;
        z.normalize_mut();
        let a = (DMatrix::identity(n, n) - &z * z.transpose()) * l0;
        let svd = a.clone().svd(true, true);
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10).count();
        assert_eq!(rank, n - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let x = svd.solve(&b, 1e-10).unwrap();
        let r = &b - &a * x;
        let h = GridFunction::from_values(g, r.iter().copied().collect()).unwrap();
        assert!(r.norm() > 1e-3);
        assert!((a.transpose() * &r).norm() < 1e-10 * r.norm());
        let probe = orthogonality_probe(&h, eps).unwrap();
        assert!(probe <= 1e-8 * norm_h0(&h).powi(2), "{probe}");
        let c = GridFunction::from_fn(g, |x| (PI * x[0]).sin() * (PI * x[1]).sin());
        assert!(orthogonality_probe(&c, eps).unwrap() > 1e-4);
    }
}
