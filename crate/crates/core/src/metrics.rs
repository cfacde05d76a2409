//! Evaluation metrics for probabilistic one-step predictions: squared
//! error normalized by the spread of the truth, and the mean Gaussian
//! negative log likelihood of the predictive marginals.

use crate::error::{Error, Result};

/// One scalar prediction: the realized value, the predictive mean, and
/// the predictive standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    pub truth: f64,
    pub mean: f64,
    pub std: f64,
}

/// Mean squared error divided by the population variance of the truth
/// values. A batch needs at least two records and a truth sequence
/// with nonzero spread for the normalization to exist.
pub fn nmse(records: &[PredictionRecord]) -> Result<f64> {
    if records.len() < 2 {
        return Err(Error::DegenerateTruthVariance);
    }
    let n = records.len() as f64;
    let truth_mean = records.iter().map(|r| r.truth).sum::<f64>() / n;
    let mut sq_err = 0.0;
    let mut truth_var = 0.0;
    for r in records {
        sq_err += (r.truth - r.mean) * (r.truth - r.mean);
        truth_var += (r.truth - truth_mean) * (r.truth - truth_mean);
    }
    if truth_var <= 0.0 {
        return Err(Error::DegenerateTruthVariance);
    }
    Ok(sq_err / truth_var)
}

/// Mean negative log likelihood of each truth value under its
/// predictive Gaussian: the average of
/// `((truth - mean) / std)^2 / 2 + ln std + ln(2 pi) / 2`.
pub fn mnll(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::DimensionMismatch(
            "mnll needs at least one record".into(),
        ));
    }
    let mut total = 0.0;
    for r in records {
        if !(r.std > 0.0) {
            return Err(Error::NonPositiveSigma(r.std));
        }
        let e = (r.truth - r.mean) / r.std;
        total += 0.5 * e * e + r.std.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln();
    }
    Ok(total / records.len() as f64)
}

/// Per-output-dimension metric over one record series per dimension.
pub fn per_output_nmse(series: &[Vec<PredictionRecord>]) -> Result<Vec<f64>> {
    series.iter().map(|s| nmse(s)).collect()
}

/// Per-output-dimension metric over one record series per dimension.
pub fn per_output_mnll(series: &[Vec<PredictionRecord>]) -> Result<Vec<f64>> {
    series.iter().map(|s| mnll(s)).collect()
}

/// Plain average used to condense per-dimension metrics into one value.
pub fn mean_across_outputs(per_output: &[f64]) -> f64 {
    per_output.iter().sum::<f64>() / per_output.len() as f64
}
