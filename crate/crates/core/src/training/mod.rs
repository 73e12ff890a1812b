//! Patch training for the estimation and forecast models.

mod data;
mod prepare;
mod search;
mod train;

pub use data::{enumerate_samples, DatasetSplit, PatchDataset, Sample, SampleKey, SplitMode, SPLIT_FRACTIONS};
pub use prepare::{prepare_dataset, Prepared};
pub use search::{hyperparam_search, select_best, SearchCell, SearchOutcome, DEFAULT_GRID};
pub use train::{
    evaluate_mape, predict_samples, train, train_step, EarlyStopping, EpochRecord, TrainConfig, TrainReport,
    WALL_CLOCK_KEY,
};
