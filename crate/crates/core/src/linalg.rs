//! Small dense helpers shared by the numeric modules.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{IsacError, Result};

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;

pub const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// `Re(a^H b)`, the real inner product of two complex vectors viewed in R^{2n}.
pub fn re_inner<'a, I>(a: I, b: I) -> f64
where
    I: IntoIterator<Item = &'a Complex64>,
{
    a.into_iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

/// `Re(tr(A^H B))` for equally shaped complex matrices.
pub fn re_trace_inner(a: &CMat, b: &CMat) -> f64 {
    re_inner(a.iter(), b.iter())
}

pub fn frob_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Largest absolute entry of `M - M^H`.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for k in 0..m.ncols() {
            worst = worst.max((m[(i, k)] - m[(k, i)].conj()).norm());
        }
    }
    worst
}

/// Inverse of a real symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &RMat) -> Result<RMat> {
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| IsacError::Singular("matrix is not positive definite".into()))
}
