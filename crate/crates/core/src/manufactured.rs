//! Manufactured solution `u*(x) = prod_i sin(pi x_i)` and its continuum image
//! `f = -d_i(a_ij d_j u*) + q u*` for known-answer tests.

use std::f64::consts::PI;

use crate::coefficients::CoefficientField;
use crate::grid::{Grid, GridFunction};

pub fn exact(grid: Grid) -> GridFunction {
    let dim = grid.dim();
    GridFunction::from_fn(grid, move |x| (0..dim).map(|a| (PI * x[a]).sin()).product())
}

fn gradient(dim: usize, x: &[f64; 3]) -> [f64; 3] {
    let mut g = [0.0; 3];
    for (j, gj) in g.iter_mut().enumerate().take(dim) {
        *gj = (0..dim)
            .map(|a| {
                if a == j {
                    PI * (PI * x[a]).cos()
                } else {
                    (PI * x[a]).sin()
                }
            })
            .product();
    }
    g
}

/// Continuum `L u*` at `x`. The flux `a grad u*` is differentiated with a
/// fourth-order central difference of step `1e-3`, which is exact to about
/// `1e-10` for smooth coefficients.
pub fn continuum_rhs_at(coeffs: &CoefficientField, x: &[f64; 3]) -> f64 {
    let dim = coeffs.dim();
    let d = 1e-3;
    let flux = |i: usize, y: &[f64; 3]| {
        let g = gradient(dim, y);
        (0..dim).map(|j| coeffs.a_at(i, j, y) * g[j]).sum::<f64>()
    };
    let mut div = 0.0;
    for i in 0..dim {
        let at = |t: f64| {
            let mut y = *x;
            y[i] += t;
            flux(i, &y)
        };
        div += (-at(2.0 * d) + 8.0 * at(d) - 8.0 * at(-d) + at(-2.0 * d)) / (12.0 * d);
    }
    let u: f64 = (0..dim).map(|a| (PI * x[a]).sin()).product();
    -div + coeffs.q().eval(x) * u
}

pub fn continuum_rhs(coeffs: &CoefficientField, grid: Grid) -> GridFunction {
    GridFunction::from_fn(grid, |x| continuum_rhs_at(coeffs, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ScalarFn;
    use crate::grid::make_grid;

    #[test]
    fn laplacian_image_is_scaled_eigenfunction() {
        let g = make_grid(2, 7).unwrap();
        let c = CoefficientField::identity(2).with_q(ScalarFn::Constant(3.0));
        let f = continuum_rhs(&c, g);
        let u = exact(g);
        for (fi, ui) in f.values().iter().zip(u.values()) {
            assert!((fi - (2.0 * PI * PI + 3.0) * ui).abs() < 1e-8);
        }
    }

    #[test]
    fn variable_diagonal_matches_hand_derivative() {
        // a11 = 1 + x, a22 = 1: f = -(d/dx((1+x) u_x) + u_yy)
        let c = CoefficientField::identity(2).with_a(
            0,
            0,
            ScalarFn::Linear {
                c: 1.0,
                grad: [1.0, 0.0, 0.0],
            },
        );
        let x = [0.3, 0.7, 0.0];
        let (sx, cx, sy) = ((PI * x[0]).sin(), (PI * x[0]).cos(), (PI * x[1]).sin());
        let hand = -(PI * cx * sy - (1.0 + x[0]) * PI * PI * sx * sy - PI * PI * sx * sy);
        assert!((continuum_rhs_at(&c, &x) - hand).abs() < 1e-8);
    }
}
