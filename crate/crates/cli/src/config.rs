//! The run configuration file: one TOML document shared by every subcommand.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use deepair::model::{AirResConfig, Architecture, LstmConfig};
use deepair::synthcity::SynthConfig;
use deepair::training::{SplitMode, TrainConfig, DEFAULT_GRID};
use deepair::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives every stage; copied over `[synth].seed`.
    pub seed: u64,
    /// Artifacts go here. Relative paths resolve against the config file.
    pub output_dir: PathBuf,
    pub synth: SynthConfig,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub evaluate: EvaluateSection,
    pub estimate_map: HourSection,
    pub forecast: HourSection,
    pub saliency: SaliencySection,
    pub seasonal_maps: SeasonalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output_dir: PathBuf::from("out"),
            synth: SynthConfig::default(),
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            evaluate: EvaluateSection::default(),
            estimate_map: HourSection::default(),
            forecast: HourSection::default(),
            saliency: SaliencySection::default(),
            seasonal_maps: SeasonalSection::default(),
        }
    }
}

/// Raw inputs for `preprocess`. Unset paths default to the files `synth`
/// writes into the output directory.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dataset: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub registry: Option<PathBuf>,
    /// Extra non-working days, `YYYY-MM-DD`.
    pub holidays: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Deepair,
    LstmBaseline,
}

impl ModelKind {
    pub fn architecture(self) -> Architecture {
        match self {
            ModelKind::Deepair => Architecture::DeepAir,
            ModelKind::LstmBaseline => Architecture::Lstm,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Deepair => "deepair",
            ModelKind::LstmBaseline => "lstm_baseline",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub airres: AirResConfig,
    pub lstm: LstmConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Deepair,
            airres: AirResConfig::default(),
            lstm: LstmConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Estimate,
    Forecast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Random,
    Contiguous,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub task: Task,
    /// Pollutant channel to predict.
    pub target: String,
    /// Forecast hours; ignored for estimation.
    pub horizon: usize,
    pub patch_size: usize,
    pub window: usize,
    pub learning_rate: f64,
    pub learning_rate_scale: f64,
    pub patience_epochs: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub split: SplitKind,
    pub grid_search: bool,
    /// `(lstm layers, hidden size)` cells for the grid search.
    pub grid: Vec<(usize, usize)>,
    /// Run directory name; defaults to `<task>-<target>`.
    pub name: Option<String>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            task: Task::Estimate,
            target: "pm25".to_string(),
            horizon: 1,
            patch_size: t.patch_size,
            window: t.window,
            learning_rate: t.learning_rate,
            learning_rate_scale: t.learning_rate_scale,
            patience_epochs: t.patience_epochs,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            split: SplitKind::Random,
            grid_search: false,
            grid: DEFAULT_GRID.to_vec(),
            name: None,
        }
    }
}

impl TrainSection {
    pub fn horizon(&self) -> usize {
        match self.task {
            Task::Estimate => 0,
            Task::Forecast => self.horizon,
        }
    }

    pub fn run_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| default_run(self.task, &self.target))
    }

    pub fn split_mode(&self) -> SplitMode {
        match self.split {
            SplitKind::Random => SplitMode::Random,
            SplitKind::Contiguous => SplitMode::Contiguous,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            patch_size: self.patch_size,
            window: self.window,
            horizon: self.horizon(),
            learning_rate: self.learning_rate,
            learning_rate_scale: self.learning_rate_scale,
            patience_epochs: self.patience_epochs,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            seed,
        }
    }
}

pub fn default_run(task: Task, target: &str) -> String {
    match task {
        Task::Estimate => format!("estimate-{target}"),
        Task::Forecast => format!("forecast-{target}"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Train,
    Val,
    Test,
    All,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
            Subset::All => "all",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Run directories to evaluate, one table row each; defaults to the
    /// `[train]` run.
    pub runs: Vec<String>,
    pub split: Subset,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            runs: Vec::new(),
            split: Subset::Test,
        }
    }
}

/// Which run and hour `estimate-map` and `forecast` use. Without `time` or
/// `hour` the last hour of the cube is used.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HourSection {
    pub run: Option<String>,
    pub time: Option<String>,
    pub hour: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaliencySection {
    pub run: Option<String>,
    pub split: Subset,
    /// Seeded subsample size; 0 keeps every sample.
    pub subsample: usize,
}

impl Default for SaliencySection {
    fn default() -> Self {
        SaliencySection {
            run: None,
            split: Subset::Train,
            subsample: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeasonalSection {
    pub run: Option<String>,
    /// Use every `stride`-th hour.
    pub stride: usize,
}

impl Default for SeasonalSection {
    fn default() -> Self {
        SeasonalSection { run: None, stride: 1 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        for p in [&mut cfg.data.dataset, &mut cfg.data.observations, &mut cfg.data.registry]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Applies the global seed and checks every section the command may use.
    pub fn finish(&mut self) -> Result<()> {
        self.synth.seed = self.seed;
        if self.train.task == Task::Forecast && self.train.horizon == 0 {
            return Err(Error::Config("train.horizon must be at least 1 for forecasting".into()));
        }
        if self.seasonal_maps.stride == 0 {
            return Err(Error::Config("seasonal_maps.stride must be at least 1".into()));
        }
        self.train.train_config(self.seed).validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.data.dataset.clone().unwrap_or_else(|| self.out("dataset.toml"))
    }

    pub fn observations_path(&self) -> PathBuf {
        self.data.observations.clone().unwrap_or_else(|| self.out("observations.csv"))
    }

    pub fn registry_path(&self) -> PathBuf {
        self.data.registry.clone().unwrap_or_else(|| self.out("registry.csv"))
    }
}
