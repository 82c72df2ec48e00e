use super::Tensor;
use crate::error::{Error, Result};

/// Mean absolute error and its gradient with respect to `prediction`.
///
/// The subgradient at a zero residual is taken as 0.
pub fn mae_loss(prediction: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if prediction.shape() != target.shape() {
        return Err(Error::shape(
            format!("{:?}", target.shape()),
            format!("{:?}", prediction.shape()),
        ));
    }
    let n = prediction.len();
    if n == 0 {
        return Err(Error::shape("non-empty tensors", 0));
    }
    let inv = 1.0 / n as f64;
    let mut total = 0.0;
    let grad = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| {
            let d = p - t;
            total += d.abs();
            if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            }
        })
        .collect();
    Ok((total * inv, Tensor::new(prediction.shape().to_vec(), grad)?))
}
