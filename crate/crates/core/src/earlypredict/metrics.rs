use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
}

pub fn evaluate<T: Scalar>(y: &[T], y_hat: &[T]) -> Result<Metrics> {
    if y.len() != y_hat.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    if let Some(index) = y.iter().position(|v| *v == T::zero()) {
        return Err(Error::ZeroTrueValue { index });
    }
    let n = y.len() as f64;
    let (mut se, mut ape) = (0.0, 0.0);
    for (&a, &b) in y.iter().zip(y_hat) {
        let (a, b) = (a.to_f64_lossy(), b.to_f64_lossy());
        se += (a - b) * (a - b);
        ape += ((a - b) / a).abs();
    }
    Ok(Metrics {
        rmse: (se / n).sqrt(),
        mape: 100.0 * ape / n,
    })
}
