use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample mean and unbiased sample variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub variance: f64,
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Two-pass mean and (n-1)-denominator variance.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.len() < 2 {
        return Err(Error::VarianceUnavailable(values.len()));
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|x| (x - m) * (x - m)).sum();
    Ok(Summary {
        mean: m,
        variance: ss / (values.len() - 1) as f64,
    })
}

/// Nearest-rank quantile of sorted data: the value at 1-based rank
/// `round(S * p)`, clamped to `[1, S]`.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> Result<f64> {
    let idx = nearest_rank_index(sorted.len(), p)?;
    Ok(sorted[idx])
}

/// Zero-based index selected by the nearest-rank rule.
pub fn nearest_rank_index(len: usize, p: f64) -> Result<usize> {
    if len == 0 {
        return Err(Error::Domain(
            "empirical quantile of an empty sample".into(),
        ));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!(
            "quantile probability must lie in [0, 1], got {p}"
        )));
    }
    let rank = (len as f64 * p).round().clamp(1.0, len as f64) as usize;
    Ok(rank - 1)
}

/// Estimated standard error of the sample variance, `sqrt((m4 - s^4) / n)`.
pub(crate) fn variance_standard_error(values: &[f64], summary: &Summary) -> f64 {
    let n = values.len() as f64;
    let m4 = values
        .iter()
        .map(|x| (x - summary.mean).powi(4))
        .sum::<f64>()
        / n;
    ((m4 - summary.variance * summary.variance).max(0.0) / n).sqrt()
}
