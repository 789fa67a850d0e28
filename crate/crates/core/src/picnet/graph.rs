//! Batched interference cancellation and its adjoint.
//!
//! Estimates for `n` signal blocks are packed into a `B x 2n` matrix whose
//! columns `2m, 2m+1` hold the real and imaginary part for block `m`. The
//! synthesis matrix has rows `2m = to_real(s~_m)` and `2m+1 = to_real(i s~_m)`, so
//! `G . M` superimposes every block's contribution.

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::prep::{block_apply_into, to_real};

/// Synthesis matrix (`2M x 2L`) of the given sequences scaled by `scale`.
pub fn synthesis_matrix(columns: &[&[Complex64]], scale: f64) -> Array2<f64> {
    let l = columns.first().map(|c| c.len()).unwrap_or(0);
    let mut m = Array2::zeros((2 * columns.len(), 2 * l));
    let i = Complex64::new(0.0, 1.0);
    for (idx, col) in columns.iter().enumerate() {
        let r = to_real(col);
        let q = to_real(&col.iter().map(|z| z * i).collect::<Vec<_>>());
        for j in 0..2 * l {
            m[[2 * idx, j]] = r[j] * scale;
            m[[2 * idx + 1, j]] = q[j] * scale;
        }
    }
    m
}

/// Per-device residuals: `y - sum over devices i != k of their contributions`.
///
/// Device `k` owns `per_device` consecutive blocks of `g` and `m`.
pub fn residuals(y: &ArrayView2<f64>, g: &Array2<f64>, m: &Array2<f64>, per_device: usize) -> Vec<Array2<f64>> {
    let w = 2 * per_device;
    let n_dev = g.ncols() / w;
    let total = g.dot(m);
    let base = y - &total;
    (0..n_dev)
        .map(|k| {
            let own = g.slice(s![.., k * w..(k + 1) * w]).dot(&m.slice(s![k * w..(k + 1) * w, ..]));
            &base + &own
        })
        .collect()
}

/// Adjoint of [`residuals`] with respect to `g`: given `dL/dres_k` for each device,
/// returns `dL/dG`.
pub fn residuals_adjoint(grads: &[Array2<f64>], m: &Array2<f64>, per_device: usize) -> Array2<f64> {
    let w = 2 * per_device;
    let b = grads[0].nrows();
    let mut sum = Array2::zeros(grads[0].raw_dim());
    for r in grads {
        sum += r;
    }
    let mut out = -sum.dot(&m.t());
    for (k, r) in grads.iter().enumerate() {
        let own = r.dot(&m.slice(s![k * w..(k + 1) * w, ..]).t());
        let mut block = out.slice_mut(s![.., k * w..(k + 1) * w]);
        block += &own;
    }
    debug_assert_eq!(out.nrows(), b);
    out
}

/// `y - sum_{i != exclude} Block(s~_i) gamma_i` for a single real-form observation.
pub fn ic_residual(
    y: &[f64],
    estimates: &[[f64; 2]],
    columns: &[Vec<Complex64>],
    exclude: usize,
) -> Result<Vec<f64>> {
    if exclude >= estimates.len() {
        return Err(Error::InvalidArgument(format!(
            "device index {exclude} out of range for {} devices",
            estimates.len()
        )));
    }
    if columns.len() != estimates.len() {
        return Err(Error::Dimension(format!(
            "{} estimates for {} sequences",
            estimates.len(),
            columns.len()
        )));
    }
    let mut out = y.to_vec();
    for (i, (g, s)) in estimates.iter().zip(columns).enumerate() {
        if i == exclude {
            continue;
        }
        if 2 * s.len() != y.len() {
            return Err(Error::Dimension("sequence and observation lengths differ".into()));
        }
        block_apply_into(s, *g, -1.0, &mut out);
    }
    Ok(out)
}

/// Complex product of two packed real pairs, row by row: `(a1 + i a2)(b1 + i b2)`.
pub fn complex_mul(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0]]
}
