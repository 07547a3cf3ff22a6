//! Prediction and estimation error metrics, and summary tables.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("cannot summarize an empty list")]
    Empty,
}

fn check_rows(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::Shape(format!("{} vs {} rows", pred.len(), truth.len())));
    }
    if let Some((k, (a, b))) = pred.iter().zip(truth).enumerate().find(|(_, (a, b))| a.len() != b.len()) {
        return Err(MetricError::Shape(format!("row {k}: {} vs {} columns", a.len(), b.len())));
    }
    Ok(())
}

/// Mean over samples (rows) of the squared Euclidean error.
pub fn mse_test(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64, MetricError> {
    check_rows(pred, truth)?;
    if pred.is_empty() {
        return Err(MetricError::Undefined("no samples".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(truth)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `‖truth − pred‖₂ / ‖truth‖₂` over all buses and times.
pub fn rel_traj_error(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64, MetricError> {
    check_rows(pred, truth)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in pred.iter().zip(truth) {
        for (x, y) in a.iter().zip(b) {
            num += (y - x) * (y - x);
            den += y * y;
        }
    }
    if den == 0.0 {
        return Err(MetricError::Undefined("reference trajectory has zero norm".into()));
    }
    Ok((num / den).sqrt())
}

fn rel_errors(truth: &[f64], est: &[f64], what: &str) -> Result<Vec<f64>, MetricError> {
    if truth.len() != est.len() {
        return Err(MetricError::Shape(format!("{what}: {} true vs {} estimated", truth.len(), est.len())));
    }
    truth
        .iter()
        .zip(est)
        .map(|(&t, &e)| {
            if t == 0.0 {
                Err(MetricError::Undefined(format!("true {what} is zero")))
            } else {
                Ok((t - e).abs() / t.abs())
            }
        })
        .collect()
}

/// Elementwise `|true − est| / true` for inertia and damping.
pub fn param_errors(
    m_true: &[f64],
    d_true: &[f64],
    m_est: &[f64],
    d_est: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), MetricError> {
    Ok((rel_errors(m_true, m_est, "M")?, rel_errors(d_true, d_est, "D")?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub max: f64,
    pub min: f64,
    pub median: f64,
}

/// Max, min and median; even-length lists take the lower of the two middle
/// values.
pub fn summarize(errors: &[f64]) -> Result<Summary, MetricError> {
    if errors.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut v = errors.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(Summary { max: v[v.len() - 1], min: v[0], median: v[(v.len() - 1) / 2] })
}

/// Per-trajectory errors with their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryErrorSummary {
    pub errors: Vec<f64>,
    #[serde(flatten)]
    pub summary: Summary,
}

impl TrajectoryErrorSummary {
    pub fn new(errors: Vec<f64>) -> Result<Self, MetricError> {
        let summary = summarize(&errors)?;
        Ok(Self { errors, summary })
    }
}

/// One row of a method comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub method: String,
    pub system: String,
    pub summary: Summary,
}

/// CSV `method,system,max_pct,min_pct,median_pct`.
pub fn write_table_csv<W: Write>(rows: &[TableRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "method,system,max_pct,min_pct,median_pct")?;
    for r in rows {
        let s = r.summary;
        writeln!(w, "{},{},{:.4},{:.4},{:.4}", r.method, r.system, 100.0 * s.max, 100.0 * s.min, 100.0 * s.median)?;
    }
    Ok(())
}
