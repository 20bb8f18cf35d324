use crate::error::{Error, Result};
use crate::numkernel::ParamStore;

/// Compares the analytic gradient produced by `f` with central finite
/// differences over every coordinate of every parameter.
///
/// `f` must evaluate the loss at the store's current values and write the
/// analytic gradient into the store's gradient buffers (which are zeroed
/// before each call). Returns the largest
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(store: &mut ParamStore, h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    store.zero_grads();
    let base = f(store)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("loss at base point is {base}")));
    }
    let analytic: Vec<Vec<f64>> = store
        .iter()
        .map(|(_, t)| t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut worst = 0.0f64;
    for (ti, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = store.at(ti).data()[j];
            store.at_mut(ti).data_mut()[j] = orig + h;
            store.zero_grads();
            let up = f(store)?;
            store.at_mut(ti).data_mut()[j] = orig - h;
            store.zero_grads();
            let down = f(store)?;
            store.at_mut(ti).data_mut()[j] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss is {up}/{down} when perturbing coordinate {j} of tensor {ti}"
                )));
            }
            let numeric = (up - down) / (2.0 * h);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    store.zero_grads();
    Ok(worst)
}
