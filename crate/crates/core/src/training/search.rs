//! Grid search over LSTM depth and width.

use serde::{Deserialize, Serialize};

use super::data::{DatasetSplit, PatchDataset};
use super::train::{train, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::model::{DeepAirModel, ModelConfig};
use crate::numerics::Rng;

pub const DEFAULT_GRID: [(usize, usize); 6] = [(1, 128), (1, 256), (1, 512), (2, 128), (2, 256), (2, 512)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchCell {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub parameters: usize,
    pub val_error: f64,
}

/// Lowest validation error; ties go to the cell with fewer parameters, then
/// to the earlier cell.
pub fn select_best(cells: &[SearchCell]) -> Option<usize> {
    (0..cells.len()).min_by(|&a, &b| {
        let (x, y) = (&cells[a], &cells[b]);
        x.val_error
            .total_cmp(&y.val_error)
            .then(x.parameters.cmp(&y.parameters))
            .then(a.cmp(&b))
    })
}

pub struct SearchOutcome {
    pub cells: Vec<SearchCell>,
    pub best: usize,
    pub model: DeepAirModel,
    pub report: TrainReport,
}

/// Trains one model per `(layers, hidden)` cell with the same split and seed.
pub fn hyperparam_search(
    base: &ModelConfig,
    grid: &[(usize, usize)],
    data: &PatchDataset,
    split: &DatasetSplit,
    cfg: &TrainConfig,
) -> Result<SearchOutcome> {
    if grid.is_empty() {
        return Err(Error::config("hyperparameter grid is empty"));
    }
    if split.val.is_empty() {
        return Err(Error::invalid("hyperparameter search needs validation keys"));
    }
    let mut cells = Vec::new();
    let mut fitted = Vec::new();
    for &(layers, hidden) in grid {
        let mut mc = base.clone();
        mc.lstm.num_layers = layers;
        mc.lstm.hidden_size = hidden;
        let model = DeepAirModel::new(mc, &mut Rng::new(cfg.seed).fork(1))?;
        let parameters = model.parameter_count();
        let (model, report) = train(model, data, split, cfg)?;
        cells.push(SearchCell {
            num_layers: layers,
            hidden_size: hidden,
            parameters,
            val_error: report.best_val_mape.unwrap_or(f64::INFINITY),
        });
        fitted.push((model, report));
    }
    let best = select_best(&cells).expect("non-empty grid");
    let (model, report) = fitted.swap_remove(best);
    Ok(SearchOutcome {
        cells,
        best,
        model,
        report,
    })
}
