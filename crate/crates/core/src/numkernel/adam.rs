use crate::error::{Error, Result};
use crate::numkernel::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every parameter in `store`.
///
/// Gradients are zeroed afterwards. Fails without touching any parameter if
/// some tensor has no gradient buffer.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    if let Some((name, _)) = store.iter().find(|(_, t)| t.grad().is_none()) {
        return Err(Error::MissingGradient(name.to_string()));
    }
    let t = store.bump_step() as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for (_, tensor, m, v) in store.moments_mut() {
        let grad = tensor.grad_mut().clone();
        for (((theta, g), m), v) in tensor
            .data_mut()
            .iter_mut()
            .zip(&grad)
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *theta -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        tensor.zero_grad();
    }
    Ok(())
}
