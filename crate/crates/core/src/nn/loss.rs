use super::tensor::{Real, Tensor4};
use crate::error::{Error, Result};

/// Mean squared error and its gradient `2 (pred - target) / count`.
/// The loss is accumulated in double precision.
pub fn mse_loss<T: Real>(pred: &Tensor4<T>, target: &Tensor4<T>) -> Result<(f64, Tensor4<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let count = pred.data.len().max(1) as f64;
    let scale = T::from_f64(2.0 / count);
    let mut grad = pred.clone();
    let mut sum = 0.0f64;
    for (g, &t) in grad.data.iter_mut().zip(&target.data) {
        let d = *g - t;
        sum += d.as_f64() * d.as_f64();
        *g = d * scale;
    }
    Ok((sum / count, grad))
}
