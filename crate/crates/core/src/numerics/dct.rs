//! Orthonormal DCT-II and its inverse (DCT-III), applied along the time
//! (row) axis of `[T, C]` tensors. Lengths here are tiny (T <= 32), so the
//! transform is a dense matrix product.

use std::f64::consts::PI;

use super::Tensor;
use crate::error::{Error, Result};

/// `[n, n]` orthonormal DCT-II matrix: `coeffs = D * signal`.
pub fn dct_matrix(n: usize) -> Tensor {
    let mut d = Tensor::zeros(&[n, n]);
    let nf = n as f64;
    for k in 0..n {
        let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for t in 0..n {
            d.set(k, t, scale * (PI * (2 * t + 1) as f64 * k as f64 / (2.0 * nf)).cos());
        }
    }
    d
}

/// Inverse of [`dct_matrix`]; the transpose, since the basis is orthonormal.
pub fn idct_matrix(n: usize) -> Tensor {
    dct_matrix(n).transpose()
}

fn along_time(signal: &Tensor, m: Tensor) -> Result<Tensor> {
    if signal.rows() == 0 {
        return Err(Error::Input("transform of empty time axis".into()));
    }
    m.matmul(signal)
}

/// DCT-II of each column of a `[T, C]` tensor.
pub fn dct(signal: &Tensor) -> Result<Tensor> {
    along_time(signal, dct_matrix(signal.rows()))
}

/// Inverse of [`dct`].
pub fn idct(coeffs: &Tensor) -> Result<Tensor> {
    along_time(coeffs, idct_matrix(coeffs.rows()))
}
