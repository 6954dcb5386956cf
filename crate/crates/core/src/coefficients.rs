//! Coefficient catalog: closed-form scalar functions referenced by name, and
//! sampled fields read from field dumps.

use std::f64::consts::PI;
use std::fmt;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{read_dump_raw, Grid};

/// A real scalar function on the closed unit box.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarFn {
    Constant(f64),
    /// `base + amp * sin(2 pi freq x_axis)`
    Sin {
        base: f64,
        amp: f64,
        axis: usize,
        freq: f64,
    },
    /// `base + amp * cos(2 pi freq x_axis)`
    Cos {
        base: f64,
        amp: f64,
        axis: usize,
        freq: f64,
    },
    /// `c + g . x`
    Linear {
        c: f64,
        grad: [f64; 3],
    },
    /// `amp * prod_{i < dim} sin(pi x_i)`
    SinProduct {
        amp: f64,
        dim: usize,
    },
    Sampled(Arc<SampledField>),
}

impl ScalarFn {
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        match self {
            ScalarFn::Constant(c) => *c,
            ScalarFn::Sin {
                base,
                amp,
                axis,
                freq,
            } => base + amp * (2.0 * PI * freq * x[*axis]).sin(),
            ScalarFn::Cos {
                base,
                amp,
                axis,
                freq,
            } => base + amp * (2.0 * PI * freq * x[*axis]).cos(),
            ScalarFn::Linear { c, grad } => c + grad[0] * x[0] + grad[1] * x[1] + grad[2] * x[2],
            ScalarFn::SinProduct { amp, dim } => {
                amp * x[..*dim].iter().fold(1.0, |p, xi| p * (PI * xi).sin())
            }
            ScalarFn::Sampled(f) => f.eval(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFn::Constant(c) if *c == 0.0)
    }

    /// Parses a catalog entry such as `const 5`, `sin 1 0.5 1 1`,
    /// `linear 1 0 1`, `sinprod 1` or `file coeff.dump`. Axes are 1-based.
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        let words: Vec<&str> = spec.split_whitespace().collect();
        let (name, args) = words
            .split_first()
            .ok_or_else(|| Error::Parse("empty coefficient spec".into()))?;
        let nums = || -> Result<Vec<f64>> {
            args.iter()
                .map(|a| {
                    a.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("bad number {a:?} in {spec:?}")))
                })
                .collect()
        };
        let axis = |v: f64| -> Result<usize> {
            if v.fract() == 0.0 && v >= 1.0 && (v as usize) <= dim {
                Ok(v as usize - 1)
            } else {
                Err(Error::Parse(format!("axis {v} out of range in {spec:?}")))
            }
        };
        match *name {
            "const" | "constant" => match nums()?.as_slice() {
                [c] => Ok(ScalarFn::Constant(*c)),
                _ => Err(Error::Parse(format!("`const` takes 1 value: {spec:?}"))),
            },
            "sin" | "cos" => match nums()?.as_slice() {
                [base, amp, ax, freq] => {
                    let (base, amp, axis, freq) = (*base, *amp, axis(*ax)?, *freq);
                    Ok(if *name == "sin" {
                        ScalarFn::Sin {
                            base,
                            amp,
                            axis,
                            freq,
                        }
                    } else {
                        ScalarFn::Cos {
                            base,
                            amp,
                            axis,
                            freq,
                        }
                    })
                }
                _ => Err(Error::Parse(format!(
                    "`{name}` takes base amp axis freq: {spec:?}"
                ))),
            },
            "linear" => {
                let v = nums()?;
                if v.len() != dim + 1 {
                    return Err(Error::Parse(format!(
                        "`linear` takes c and {dim} gradient entries: {spec:?}"
                    )));
                }
                let mut grad = [0.0; 3];
                grad[..dim].copy_from_slice(&v[1..]);
                Ok(ScalarFn::Linear { c: v[0], grad })
            }
            "sinprod" => match nums()?.as_slice() {
                [amp] => Ok(ScalarFn::SinProduct { amp: *amp, dim }),
                _ => Err(Error::Parse(format!("`sinprod` takes 1 value: {spec:?}"))),
            },
            "file" => match args {
                [path] => Ok(ScalarFn::Sampled(Arc::new(SampledField::read(path)?))),
                _ => Err(Error::Parse(format!("`file` takes a path: {spec:?}"))),
            },
            other => Err(Error::Parse(format!(
                "unknown coefficient function {other:?}"
            ))),
        }
    }
}

impl fmt::Display for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Constant(c) => write!(f, "const {c}"),
            ScalarFn::Sin {
                base,
                amp,
                axis,
                freq,
            } => {
                write!(f, "sin {base} {amp} {} {freq}", axis + 1)
            }
            ScalarFn::Cos {
                base,
                amp,
                axis,
                freq,
            } => {
                write!(f, "cos {base} {amp} {} {freq}", axis + 1)
            }
            ScalarFn::Linear { c, grad } => {
                write!(f, "linear {c} {} {} {}", grad[0], grad[1], grad[2])
            }
            ScalarFn::SinProduct { amp, .. } => write!(f, "sinprod {amp}"),
            ScalarFn::Sampled(s) => write!(f, "sampled {}", s.grid.id()),
        }
    }
}

/// Values on every node of the closed grid (boundary included), interpolated
/// multilinearly in between.
///
/// File layout: the field-dump header `dim n h`, then `(n+2)^dim` values in
/// lexicographic order with the last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    grid: Grid,
    values: Vec<f64>,
}

impl SampledField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let m = grid.n_per_axis() + 2;
        let expected = m.pow(grid.dim() as u32);
        if values.len() != expected {
            return Err(Error::Parse(format!(
                "sampled coefficient on {} needs {expected} values (closed grid), got {}",
                grid.id(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, values })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_reader<R: BufRead>(r: R) -> Result<Self> {
        let (grid, values) = read_dump_raw(r)?;
        Self::new(grid, values)
    }

    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let dim = self.grid.dim();
        let m = self.grid.n_per_axis() + 2;
        let h = self.grid.h();
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..dim {
            let t = (x[a].clamp(0.0, 1.0) / h).min((m - 1) as f64);
            let i = (t.floor() as usize).min(m - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            let mut idx = 0;
            for a in 0..dim {
                let bit = (corner >> (dim - 1 - a)) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                idx = idx * m + base[a] + bit;
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }
}

/// Symmetric coefficient matrix field `a_ij(x)` and zeroth-order term `q(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    dim: usize,
    /// upper triangle, row-major: (0,0) (0,1) [(0,2)] (1,1) [(1,2) (2,2)]
    a: Vec<ScalarFn>,
    q: ScalarFn,
    /// Assumed bound on `|grad a_ij|`, taken from the configuration.
    pub grad_bound: f64,
}

fn upper_index(dim: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * dim - i * (i + 1) / 2 + j
}

impl CoefficientField {
    /// `a = I`, `q = 0`.
    pub fn identity(dim: usize) -> Self {
        let mut a = Vec::new();
        for i in 0..dim {
            for j in i..dim {
                a.push(ScalarFn::Constant(if i == j { 1.0 } else { 0.0 }));
            }
        }
        Self {
            dim,
            a,
            q: ScalarFn::Constant(0.0),
            grad_bound: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sets `a_ij = a_ji = f`.
    pub fn with_a(mut self, i: usize, j: usize, f: ScalarFn) -> Self {
        let k = upper_index(self.dim, i, j);
        self.a[k] = f;
        self
    }

    pub fn with_q(mut self, q: ScalarFn) -> Self {
        self.q = q;
        self
    }

    pub fn with_grad_bound(mut self, c: f64) -> Self {
        self.grad_bound = c;
        self
    }

    pub fn a(&self, i: usize, j: usize) -> &ScalarFn {
        &self.a[upper_index(self.dim, i, j)]
    }

    pub fn q(&self) -> &ScalarFn {
        &self.q
    }

    pub fn a_at(&self, i: usize, j: usize, x: &[f64; 3]) -> f64 {
        self.a(i, j).eval(x)
    }

    pub fn matrix_at(&self, x: &[f64; 3]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.a_at(i, j, x))
    }

    pub fn has_mixed_terms(&self) -> bool {
        (0..self.dim).any(|i| (i + 1..self.dim).any(|j| !self.a(i, j).is_zero()))
    }
}

/// Every point where `assemble` samples `a`: all closed-grid nodes plus the
/// face midpoints between an interior node and its axis neighbors.
pub(crate) fn sample_points(grid: &Grid) -> Vec<[f64; 3]> {
    let dim = grid.dim();
    let m = grid.n_per_axis() + 2;
    let h = grid.h();
    let total = m.pow(dim as u32);
    let mut pts = Vec::with_capacity(total * (1 + dim));
    for lin in 0..total {
        let mut node = [0usize; 3];
        let mut rest = lin;
        for a in (0..dim).rev() {
            node[a] = rest % m;
            rest /= m;
        }
        let mut x = [0.0; 3];
        for a in 0..dim {
            x[a] = node[a] as f64 * h;
        }
        pts.push(x);
        for axis in 0..dim {
            if node[axis] + 1 < m && (0..dim).all(|a| a == axis || (1..m - 1).contains(&node[a])) {
                let mut y = x;
                y[axis] = (node[axis] as f64 + 0.5) * h;
                pts.push(y);
            }
        }
    }
    pts
}

/// Minimum and maximum eigenvalue of `a(x)` over the sample points, `(c0, c1)`.
/// Fails with a witness point and direction `xi` when `c0 <= 0`.
pub fn check_ellipticity(coeffs: &CoefficientField, grid: &Grid) -> Result<(f64, f64)> {
    if coeffs.dim() != grid.dim() {
        return Err(Error::InvalidArgument(format!(
            "coefficient dimension {} does not match grid {}",
            coeffs.dim(),
            grid.id()
        )));
    }
    let mut c0 = f64::INFINITY;
    let mut c1 = f64::NEG_INFINITY;
    let mut worst: Option<([f64; 3], Vec<f64>)> = None;
    for x in sample_points(grid) {
        let q = coeffs.q().eval(&x);
        if !q.is_finite() {
            return Err(Error::InvalidArgument(format!("q is not finite at {x:?}")));
        }
        let eig = coeffs.matrix_at(&x).symmetric_eigen();
        let (kmin, lmin) =
            eig.eigenvalues
                .iter()
                .copied()
                .enumerate()
                .fold(
                    (0, f64::INFINITY),
                    |b, (k, l)| if l < b.1 { (k, l) } else { b },
                );
        let lmax = eig
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !lmin.is_finite() || !lmax.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "a(x) is not finite at {x:?}"
            )));
        }
        if lmin < c0 {
            c0 = lmin;
            worst = Some((x, eig.eigenvectors.column(kmin).iter().copied().collect()));
        }
        c1 = c1.max(lmax);
    }
    if c0 <= 0.0 {
        let (point, witness) = worst.expect("grid has sample points");
        return Err(Error::Ellipticity {
            point,
            eigenvalue: c0,
            witness,
        });
    }
    Ok((c0, c1))
}
