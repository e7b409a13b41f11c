use crate::error::{Error, Result};

/// Mean absolute error.
pub fn mae_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeError {
            op: "mae_loss",
            detail: format!("{} predictions for {} targets", pred.len(), target.len()),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(total / pred.len() as f64)
}

/// Subgradient of [`mae_loss`] with respect to each prediction (0 at ties).
pub fn mae_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    mae_loss(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect())
}
