//! Dense linear-algebra helpers shared by the simulator, estimators and
//! training code: complex matrices, real lifting, DFT transforms, the
//! power-iteration eigenvalue and multiplication-counting kernels.

use ndarray::{s, Array1, Array2, ArrayView2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = Array2<Complex64>;

/// Unitary DFT matrix, entry `(k, l) = exp(-2πi·k·l/n)/√n`.
pub fn make_unitary_dft(n: usize) -> Result<CMatrix> {
    if n == 0 {
        return Err(Error::InvalidDimension("DFT size must be at least 1".into()));
    }
    let scale = 1.0 / (n as f64).sqrt();
    Ok(Array2::from_shape_fn((n, n), |(k, l)| {
        // reduce k·l mod n first so the phase stays accurate for large n
        let phase = -2.0 * std::f64::consts::PI * ((k * l) % n) as f64 / n as f64;
        Complex64::from_polar(scale, phase)
    }))
}

pub fn conj_transpose(a: &CMatrix) -> CMatrix {
    a.t().mapv(|z| z.conj())
}

pub fn cmatmul(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.ncols() != b.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "cannot multiply {:?} by {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.dot(b))
}

pub fn frobenius_sq(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn cfrobenius_sq(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

/// How a complex matrix is turned into a real one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiftMode {
    /// `[Re; Im]`, used for channels and observations.
    Stack,
    /// `[[Re, -Im], [Im, Re]]`, used for the sensing matrix.
    Block,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealLifted {
    pub mat: Array2<f64>,
    pub origin_rows: usize,
    pub mode: LiftMode,
}

pub fn real_lift(a: &CMatrix, mode: LiftMode) -> RealLifted {
    let (p, q) = a.dim();
    let re = a.mapv(|z| z.re);
    let im = a.mapv(|z| z.im);
    let mat = match mode {
        LiftMode::Stack => {
            let mut out = Array2::zeros((2 * p, q));
            out.slice_mut(s![..p, ..]).assign(&re);
            out.slice_mut(s![p.., ..]).assign(&im);
            out
        }
        LiftMode::Block => {
            let mut out = Array2::zeros((2 * p, 2 * q));
            out.slice_mut(s![..p, ..q]).assign(&re);
            out.slice_mut(s![..p, q..]).assign(&im.mapv(|x| -x));
            out.slice_mut(s![p.., ..q]).assign(&im);
            out.slice_mut(s![p.., q..]).assign(&re);
            out
        }
    };
    RealLifted {
        mat,
        origin_rows: p,
        mode,
    }
}

/// Inverse of [`real_lift`].
pub fn complex_unlift(lifted: &RealLifted) -> Result<CMatrix> {
    let (rows, cols) = lifted.mat.dim();
    if rows % 2 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "lifted matrix has odd row count {rows}"
        )));
    }
    let p = rows / 2;
    if p != lifted.origin_rows {
        return Err(Error::ShapeMismatch(format!(
            "lifted matrix has {rows} rows but records origin of {}",
            lifted.origin_rows
        )));
    }
    let m = &lifted.mat;
    match lifted.mode {
        LiftMode::Stack => Ok(Array2::from_shape_fn((p, cols), |(i, j)| {
            Complex64::new(m[[i, j]], m[[i + p, j]])
        })),
        LiftMode::Block => {
            if cols % 2 != 0 {
                return Err(Error::ShapeMismatch(format!(
                    "block-lifted matrix has odd column count {cols}"
                )));
            }
            let q = cols / 2;
            Ok(Array2::from_shape_fn((p, q), |(i, j)| {
                Complex64::new(m[[i, j]], m[[i + p, j]])
            }))
        }
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration on the Rayleigh quotient.
pub fn largest_eigenvalue(gram: ArrayView2<f64>) -> Result<f64> {
    let n = gram.nrows();
    if n == 0 || gram.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "expected a nonempty square matrix, got {:?}",
            gram.dim()
        )));
    }
    if gram.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite entry in Gram matrix".into()));
    }
    // Deterministic start with a little index-dependent tilt so it is not
    // orthogonal to the top eigenvector for structured inputs.
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + 0.25 * ((i as f64) * 0.7).sin());
    let nv = v.dot(&v).sqrt();
    v /= nv;
    let mut rayleigh = 0.0f64;
    for _ in 0..10_000 {
        let w = gram.dot(&v);
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        v = w / norm;
        let converged = (next - rayleigh).abs() <= 1e-10 * next.abs().max(f64::MIN_POSITIVE);
        rayleigh = next;
        if converged {
            break;
        }
    }
    // one more Rayleigh evaluation on the final normalized vector
    let w = gram.dot(&v);
    Ok(rayleigh.max(v.dot(&w)))
}

/// Per-row ℓ₂ norms of every `width`-column group: result is `rows × groups`.
pub fn group_row_norms(a: ArrayView2<f64>, width: usize) -> Array2<f64> {
    let (rows, cols) = a.dim();
    let groups = cols / width;
    Array2::from_shape_fn((rows, groups), |(r, g)| {
        a.slice(s![r, g * width..(g + 1) * width])
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    })
}

/// Real multiplications executed by the instrumented kernels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MulTally {
    pub matmul: u64,
    pub norms: u64,
    pub scalings: u64,
    pub weight_products: u64,
}

impl MulTally {
    pub fn total(&self) -> u64 {
        self.matmul + self.norms + self.scalings + self.weight_products
    }
}

/// `a · b`; with a tally the product runs as a plain triple loop and every
/// scalar multiplication is counted.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>, tally: Option<&mut MulTally>) -> Array2<f64> {
    match tally {
        None => a.dot(&b),
        Some(t) => {
            let (m, k) = a.dim();
            let n = b.ncols();
            assert_eq!(k, b.nrows(), "inner dimensions disagree");
            let mut out = Array2::zeros((m, n));
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += a[[i, p]] * b[[p, j]];
                    }
                    out[[i, j]] = acc;
                }
            }
            t.matmul += (m * n * k) as u64;
            out
        }
    }
}

/// `x + w · (obs − phi · x)`, the gradient-step shared by every unrolled layer
/// and by the baseline iteration. Returns the residual alongside.
pub fn gradient_step(
    x: ArrayView2<f64>,
    weight: ArrayView2<f64>,
    phi: ArrayView2<f64>,
    obs: ArrayView2<f64>,
    mut tally: Option<&mut MulTally>,
) -> (Array2<f64>, Array2<f64>) {
    let mut residual = matmul(phi, x, tally.as_deref_mut());
    Zip::from(&mut residual).and(&obs).for_each(|r, &o| *r = o - *r);
    let mut v = matmul(weight, residual.view(), tally);
    v += &x;
    (v, residual)
}
