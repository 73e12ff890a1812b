//! From a pre-processed cube to a normalized dataset, split and statistics.

use super::data::{enumerate_samples, DatasetSplit, PatchDataset, SplitMode};
use super::train::TrainConfig;
use crate::error::Result;
use crate::grid::{GridCube, NormStats, StationRegistry, StationTruth};

#[derive(Clone, Debug)]
pub struct Prepared {
    pub data: PatchDataset,
    pub split: DatasetSplit,
    pub norm: NormStats,
}

/// Enumerates the samples for `target`, splits them with `cfg.seed` and fits
/// normalization on the hours covered by the training windows only.
pub fn prepare_dataset(
    cube: &GridCube,
    registry: &StationRegistry,
    truth: &StationTruth,
    target: &str,
    cfg: &TrainConfig,
    mode: SplitMode,
) -> Result<Prepared> {
    cfg.validate()?;
    let samples = enumerate_samples(cube, registry, truth, target, cfg.window, cfg.horizon)?;
    let split = DatasetSplit::new(&samples, mode, cfg.seed);
    let hours = PatchDataset::window_hours(&samples, &split.train, cfg.window);
    let norm = NormStats::fit(cube, &hours)?;
    let data = PatchDataset::from_grid(cube, &norm, target, samples, cfg.patch_size, cfg.window)?;
    Ok(Prepared { data, split, norm })
}
