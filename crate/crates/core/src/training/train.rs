//! The patch-training loop with early stopping.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::data::{DatasetSplit, PatchDataset};
use crate::error::{Error, Result};
use crate::grid::Patch;
use crate::inference::{mape_rows, MAPE_EPSILON};
use crate::model::DeepAirModel;
use crate::numerics::{sgd_step, Rng, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub window: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    /// Multiplier applied to `learning_rate`; 1 keeps the literal rate.
    pub learning_rate_scale: f64,
    pub patience_epochs: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 15,
            window: 48,
            horizon: 0,
            learning_rate: 1e-4,
            learning_rate_scale: 1.0,
            patience_epochs: 5,
            batch_size: 16,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return Err(Error::config(format!("patch_size must be odd, got {}", self.patch_size)));
        }
        if self.window == 0 {
            return Err(Error::config("window must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.learning_rate_scale > 0.0) || !self.learning_rate_scale.is_finite() {
            return Err(Error::config("learning_rate_scale must be positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::config("batch_size and max_epochs must be at least 1"));
        }
        Ok(())
    }

    pub fn effective_learning_rate(&self) -> f64 {
        self.learning_rate * self.learning_rate_scale
    }
}

/// Patience bookkeeping over 1-based epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_epoch: usize,
    pub best_value: f64,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_epoch: 0,
            best_value: f64::INFINITY,
            epoch: 0,
        }
    }

    /// Records the next epoch's validation error; returns `(improved, stop)`.
    pub fn observe(&mut self, value: f64) -> (bool, bool) {
        self.epoch += 1;
        let improved = value < self.best_value;
        if improved {
            self.best_value = value;
            self.best_epoch = self.epoch;
        }
        let stop = self.patience > 0 && self.epoch - self.best_epoch >= self.patience;
        (improved, stop)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation MAPE in percent; absent when no validation keys exist.
    pub val_mape: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub stop_epoch: usize,
    pub best_epoch: usize,
    pub best_val_mape: Option<f64>,
    pub steps: usize,
    pub stop_reason: String,
    pub wall_clock_seconds: f64,
}

pub const WALL_CLOCK_KEY: &str = "wall_clock_seconds";

impl TrainReport {
    /// Structured text; the wall-clock line is the only non-reproducible one.
    pub fn to_text(&self, header: &[(&str, String)]) -> String {
        let mut s = format!("# {}\n", crate::formats::REPORT);
        for (k, v) in header {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&format!("stop_epoch = {}\n", self.stop_epoch));
        s.push_str(&format!("best_epoch = {}\n", self.best_epoch));
        if let Some(v) = self.best_val_mape {
            s.push_str(&format!("best_val_mape = {v:?}\n"));
        }
        s.push_str(&format!("steps = {}\n", self.steps));
        s.push_str(&format!("stop_reason = {:?}\n", self.stop_reason));
        s.push_str(&format!("{WALL_CLOCK_KEY} = {:.3}\n", self.wall_clock_seconds));
        for e in &self.epochs {
            s.push_str("\n[[epochs]]\n");
            s.push_str(&format!("epoch = {}\ntrain_loss = {:?}\n", e.epoch, e.train_loss));
            if let Some(v) = e.val_mape {
                s.push_str(&format!("val_mape = {v:?}\n"));
            }
        }
        s
    }

    pub fn write(&self, path: &Path, header: &[(&str, String)]) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text(header).as_bytes())?;
        Ok(())
    }
}

/// Eval-mode predictions in physical units for the listed samples.
pub fn predict_samples(model: &DeepAirModel, data: &PatchDataset, indices: &[usize], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch.max(1)) {
        let patches: Vec<Patch> = chunk.iter().map(|&i| data.patch(i)).collect::<Result<_>>()?;
        let refs: Vec<&Patch> = patches.iter().collect();
        for row in model.predict(&refs)? {
            out.push(row.into_iter().map(|z| data.denormalize(z)).collect());
        }
    }
    Ok(out)
}

/// Validation MAPE of `model` on `indices`.
pub fn evaluate_mape(model: &DeepAirModel, data: &PatchDataset, indices: &[usize], batch: usize) -> Result<f64> {
    let pred = predict_samples(model, data, indices, batch)?;
    let truth: Vec<Vec<f64>> = indices.iter().map(|&i| data.samples[i].target.clone()).collect();
    Ok(mape_rows(&pred, &truth, MAPE_EPSILON)?.mape_percent)
}

/// One SGD step on a mini-batch; returns the batch-mean squared error in
/// normalized units.
pub fn train_step(model: &mut DeepAirModel, data: &PatchDataset, batch: &[usize], lr: f64) -> Result<f64> {
    let patches: Vec<Patch> = batch.iter().map(|&i| data.patch(i)).collect::<Result<_>>()?;
    let refs: Vec<&Patch> = patches.iter().collect();
    let input = model.pack(&refs)?;
    let outs = model.config.outputs();
    let target: Vec<f64> = batch.iter().flat_map(|&i| data.normalized_target(i)).collect();
    let target = Tensor::new(vec![batch.len(), outs], target)?;
    let mut tape = Tape::new();
    let x = tape.constant(input);
    let mut stats = model.train_stats();
    let y = model.graph(&mut tape, x, Some(&mut stats))?;
    let loss = tape.mse(y, &target)?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        let keys: Vec<String> = batch.iter().map(|&i| data.samples[i].key.to_string()).collect();
        return Err(Error::Numeric(format!("non-finite loss {value} on sample(s) {}", keys.join(", "))));
    }
    let grads = tape.backward(loss)?;
    model.params.zero_grad();
    grads.accumulate_into(&tape, &mut model.params);
    sgd_step(&mut model.params, lr)?;
    model.commit_stats(stats);
    Ok(value)
}

/// Trains `model` on `split.train` and returns the parameters of the epoch with
/// the lowest validation MAPE (the last epoch when there is no validation set).
pub fn train(mut model: DeepAirModel, data: &PatchDataset, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(DeepAirModel, TrainReport)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if data.outputs() != model.config.outputs() {
        return Err(Error::invalid(format!(
            "dataset targets have {} values, model emits {}",
            data.outputs(),
            model.config.outputs()
        )));
    }
    let started = Instant::now();
    let lr = cfg.effective_learning_rate();
    let shuffle_root = Rng::new(cfg.seed).fork(3);
    let mut stopper = EarlyStopping::new(cfg.patience_epochs);
    let mut best = model.clone();
    let mut epochs = Vec::new();
    let mut steps = 0;
    let mut stop_reason = "max_epochs".to_string();
    for epoch in 1..=cfg.max_epochs {
        let mut order = split.train.clone();
        shuffle_root.fork(epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            loss_sum += train_step(&mut model, data, batch, lr)? * batch.len() as f64;
            steps += 1;
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_mape = if split.val.is_empty() {
            None
        } else {
            Some(evaluate_mape(&model, data, &split.val, cfg.batch_size.max(16))?)
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_mape,
        });
        match val_mape {
            Some(v) => {
                let (improved, stop) = stopper.observe(v);
                if improved {
                    best = model.clone();
                }
                if stop {
                    stop_reason = "patience".to_string();
                    break;
                }
            }
            None => {
                best = model.clone();
                stopper.best_epoch = epoch;
            }
        }
    }
    let report = TrainReport {
        stop_epoch: epochs.len(),
        best_epoch: stopper.best_epoch,
        best_val_mape: epochs.iter().filter_map(|e| e.val_mape).reduce(f64::min),
        epochs,
        steps,
        stop_reason,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((best, report))
}
