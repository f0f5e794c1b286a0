use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regression quality in percentage points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae_pp: f64,
    pub rmse_pp: f64,
    /// `None` when the targets have zero variance and R² is undefined.
    pub r2: Option<f64>,
    pub n: usize,
}

/// MAE, RMSE and R² of `predictions` against `targets`.
pub fn compute_metrics(predictions: &[f64], targets: &[f64]) -> Result<Metrics> {
    if targets.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    assert_eq!(predictions.len(), targets.len());
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let (mut abs, mut sq, mut tot) = (0.0, 0.0, 0.0);
    for (&p, &y) in predictions.iter().zip(targets) {
        let r = p - y;
        abs += r.abs();
        sq += r * r;
        tot += (y - mean) * (y - mean);
    }
    Ok(Metrics {
        mae_pp: abs / n,
        rmse_pp: (sq / n).sqrt(),
        r2: (tot > 0.0).then(|| 1.0 - sq / tot),
        n: targets.len(),
    })
}
