//! Softmax cross-entropy with soft labels.

use crate::error::Error;
use crate::nn::tensor::Tensor;
use crate::Result;

/// Batch-mean cross-entropy between `softmax(logits)` and soft label rows.
///
/// Returns the scalar loss and the gradient w.r.t. the logits,
/// `(softmax(z) - y) / batch`. Label rows must each sum to 1 within 1e-6
/// (mixup produces soft rows, so this is validated, not assumed).
pub fn softmax_cross_entropy(logits: &Tensor, labels: &Tensor) -> Result<(f64, Tensor)> {
    let (n, k) = logits.dims2();
    if labels.shape != logits.shape {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy labels".into(),
            expected: logits.shape.clone(),
            got: labels.shape.clone(),
        });
    }
    for ni in 0..n {
        let sum: f64 = labels.data[ni * k..(ni + 1) * k].iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::LabelSum { row: ni, sum });
        }
    }

    let mut grad = Tensor::zeros(&[n, k]);
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for ni in 0..n {
        let row = &logits.data[ni * k..(ni + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_denom: f64 = row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        for j in 0..k {
            let log_p = row[j] - max - log_denom;
            let p = log_p.exp();
            let y = labels.data[ni * k + j];
            loss -= y * log_p;
            grad.data[ni * k + j] = (p - y) * inv_n;
        }
    }
    Ok((loss * inv_n, grad))
}
