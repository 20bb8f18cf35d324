//! Weighted binary cross-entropy.

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

#[inline]
fn clamp(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// `-w·(y·ln p + (1-y)·ln(1-p))` with `y` in `{0, 1}`.
pub fn weighted_bce_loss(p: f64, y: f64, w: f64) -> f64 {
    let p = clamp(p);
    -w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`weighted_bce_loss`] with respect to `p`.
pub fn weighted_bce_grad(p: f64, y: f64, w: f64) -> f64 {
    let p = clamp(p);
    -w * (y / p - (1.0 - y) / (1.0 - p))
}
