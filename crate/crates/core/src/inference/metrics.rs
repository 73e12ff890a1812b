use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truths below this many physical units are excluded from MAPE.
pub const MAPE_EPSILON: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mape_percent: f64,
    /// Pairs that entered the mean.
    pub count: usize,
    /// Pairs skipped because the truth was below epsilon.
    pub excluded: usize,
    /// Per-horizon-step results for multi-output forecasts.
    pub per_step: Vec<StepResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step: usize,
    pub mape_percent: f64,
    pub count: usize,
    pub excluded: usize,
}

impl EvalResult {
    /// The "accuracy" phrasing: 100 minus MAPE.
    pub fn accuracy_percent(&self) -> f64 {
        100.0 - self.mape_percent
    }
}

fn accumulate(pred: &[f64], truth: &[f64], epsilon: f64) -> (f64, usize, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    let mut excluded = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        if t < epsilon {
            excluded += 1;
        } else {
            sum += (t - p).abs() / t * 100.0;
            count += 1;
        }
    }
    (sum, count, excluded)
}

/// Mean absolute percentage error over paired values.
pub fn mape(pred: &[f64], truth: &[f64], epsilon: f64) -> Result<EvalResult> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "mape: {} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    let (sum, count, excluded) = accumulate(pred, truth, epsilon);
    if count == 0 {
        return Err(Error::Numeric(format!(
            "mape undefined: all {excluded} pairs have truth below {epsilon}"
        )));
    }
    Ok(EvalResult {
        mape_percent: sum / count as f64,
        count,
        excluded,
        per_step: Vec::new(),
    })
}

/// MAPE over `[sample][step]` rows, with the per-step breakdown filled in.
pub fn mape_rows(pred: &[Vec<f64>], truth: &[Vec<f64>], epsilon: f64) -> Result<EvalResult> {
    if pred.len() != truth.len() || pred.iter().zip(truth).any(|(p, t)| p.len() != t.len()) {
        return Err(Error::shape("mape: prediction and truth rows differ in shape"));
    }
    let flat_p: Vec<f64> = pred.iter().flatten().copied().collect();
    let flat_t: Vec<f64> = truth.iter().flatten().copied().collect();
    let mut all = mape(&flat_p, &flat_t, epsilon)?;
    let steps = truth.first().map_or(0, Vec::len);
    if steps > 1 {
        for s in 0..steps {
            let p: Vec<f64> = pred.iter().map(|r| r[s]).collect();
            let t: Vec<f64> = truth.iter().map(|r| r[s]).collect();
            let (sum, count, excluded) = accumulate(&p, &t, epsilon);
            all.per_step.push(StepResult {
                step: s + 1,
                mape_percent: if count > 0 { sum / count as f64 } else { f64::NAN },
                count,
                excluded,
            });
        }
    }
    Ok(all)
}
