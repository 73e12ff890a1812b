//! Version stamps written into every file this crate produces.

pub const CUBE: &str = "deepair-cube/1";
pub const OBSERVATIONS: &str = "deepair-observations/1";
pub const REGISTRY: &str = "deepair-registry/1";
pub const CHECKPOINT: &str = "deepair-checkpoint/1";
pub const REPORT: &str = "deepair-report/1";
pub const SPLIT: &str = "deepair-split/1";
pub const ESTIMATION_MAP: &str = "deepair-estimation-map/1";
pub const RASTER: &str = "deepair-raster/1";
pub const FORECAST: &str = "deepair-forecast/1";
pub const EVAL_TABLE: &str = "deepair-eval/1";
pub const PAIRS: &str = "deepair-pairs/1";
pub const SALIENCY: &str = "deepair-saliency/1";
pub const DATASET: &str = "deepair-dataset/1";

pub const ALL: [&str; 13] = [
    CUBE,
    OBSERVATIONS,
    REGISTRY,
    CHECKPOINT,
    REPORT,
    SPLIT,
    ESTIMATION_MAP,
    RASTER,
    FORECAST,
    EVAL_TABLE,
    PAIRS,
    SALIENCY,
    DATASET,
];
