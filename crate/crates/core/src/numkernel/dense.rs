//! Fully-connected layers and element-wise activations.

use crate::error::{Error, Result};
use crate::numkernel::Tensor;

/// `W·x + b` with shapes checked against the operands.
pub fn dense_forward(x: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    if w.cols() != x.len() {
        return Err(Error::shape(
            "dense_forward",
            format!("W has {} columns but x has length {}", w.cols(), x.len()),
        ));
    }
    if w.rows() != b.len() {
        return Err(Error::shape(
            "dense_forward",
            format!("W has {} rows but b has length {}", w.rows(), b.len()),
        ));
    }
    let mut out = vec![0.0; w.rows()];
    affine(w.data(), b.data(), x, &mut out);
    Ok(out)
}

/// Backward pass of [`dense_forward`]: accumulates `dy ⊗ x` into `dw` and
/// `dy` into `db`, returns `Wᵀ·dy`.
pub fn dense_backward(x: &[f64], w: &Tensor, dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() || w.rows() != dy.len() || dw.len() != w.len() || db.len() != dy.len() {
        return Err(Error::shape(
            "dense_backward",
            format!(
                "W is {}x{}, x has length {}, dy has length {}",
                w.rows(),
                w.cols(),
                x.len(),
                dy.len()
            ),
        ));
    }
    let mut dx = vec![0.0; x.len()];
    affine_backward(w.data(), x, dy, dw, db, Some(&mut dx));
    Ok(dx)
}

/// Unchecked `out = W·x + b` over a row-major `W` with `out.len()` rows.
#[inline]
pub(crate) fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, (o, bias)) in out.iter_mut().zip(b).enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = bias + dot(row, x);
    }
}

/// Unchecked backward of [`affine`]; `dx` is accumulated into when given.
#[inline]
pub(crate) fn affine_backward(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[r] += g;
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, xi) in row.iter_mut().zip(x) {
            *d += g * xi;
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &w[r * cols..(r + 1) * cols];
            for (d, wi) in dx.iter_mut().zip(row) {
                *d += g * wi;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply_scalar(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => sigmoid(v),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the forward output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

pub fn activation(x: &[f64], kind: Activation) -> Vec<f64> {
    x.iter().map(|&v| kind.apply_scalar(v)).collect()
}

/// Given forward outputs `y` and upstream gradient `dy`, returns `dx`.
pub fn activation_backward(y: &[f64], dy: &[f64], kind: Activation) -> Vec<f64> {
    y.iter()
        .zip(dy)
        .map(|(&o, &g)| g * kind.derivative_from_output(o))
        .collect()
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
