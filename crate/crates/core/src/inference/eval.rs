//! Per-pollutant error tables and (prediction, truth) pair dumps.

use std::io::Write;
use std::path::Path;

use super::metrics::{mape_rows, EvalResult, MAPE_EPSILON};
use crate::error::{Error, Result};
use crate::model::DeepAirModel;
use crate::training::{predict_samples, PatchDataset, SampleKey};

const EVAL_BATCH: usize = 64;

/// Predictions for one pollutant's evaluation keys, in physical units.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub pollutant: String,
    pub keys: Vec<SampleKey>,
    pub pred: Vec<Vec<f64>>,
    pub truth: Vec<Vec<f64>>,
}

impl Predictions {
    pub fn collect(pollutant: &str, model: &DeepAirModel, data: &PatchDataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid(format!("no evaluation keys for {pollutant}")));
        }
        Ok(Predictions {
            pollutant: pollutant.to_string(),
            keys: indices.iter().map(|&i| data.samples[i].key.clone()).collect(),
            pred: predict_samples(model, data, indices, EVAL_BATCH)?,
            truth: indices.iter().map(|&i| data.samples[i].target.clone()).collect(),
        })
    }

    pub fn evaluate(&self) -> Result<EvalResult> {
        mape_rows(&self.pred, &self.truth, MAPE_EPSILON)
    }

    /// `site,t,step,prediction,truth` lines; `step` counts from 1.
    pub fn write_pairs(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# {}", crate::formats::PAIRS)?;
        writeln!(out, "# pollutant={}", self.pollutant)?;
        writeln!(out, "site,t,step,prediction,truth")?;
        for ((k, p), t) in self.keys.iter().zip(&self.pred).zip(&self.truth) {
            for (s, (p, t)) in p.iter().zip(t).enumerate() {
                writeln!(out, "{},{},{},{p},{t}", k.site, k.t, s + 1)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// One row per pollutant.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTable {
    pub rows: Vec<(String, EvalResult)>,
}

pub fn per_pollutant_eval(runs: &[Predictions]) -> Result<EvalTable> {
    if runs.is_empty() {
        return Err(Error::invalid("no pollutants to evaluate"));
    }
    let rows = runs
        .iter()
        .map(|r| Ok((r.pollutant.clone(), r.evaluate()?)))
        .collect::<Result<_>>()?;
    Ok(EvalTable { rows })
}

impl EvalTable {
    /// `pollutant,mape_percent,accuracy_percent,count,excluded`, then a
    /// per-step block for multi-output rows.
    pub fn to_text(&self) -> String {
        let mut s = format!("# {}\npollutant,mape_percent,accuracy_percent,count,excluded\n", crate::formats::EVAL_TABLE);
        for (name, r) in &self.rows {
            s += &format!("{name},{},{},{},{}\n", r.mape_percent, r.accuracy_percent(), r.count, r.excluded);
        }
        if self.rows.iter().any(|(_, r)| !r.per_step.is_empty()) {
            s += "pollutant,step,mape_percent,count,excluded\n";
            for (name, r) in &self.rows {
                for st in &r.per_step {
                    s += &format!("{name},{},{},{},{}\n", st.step, st.mape_percent, st.count, st.excluded);
                }
            }
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
