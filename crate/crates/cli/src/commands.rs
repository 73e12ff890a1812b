use std::path::{Path, PathBuf};

use deepair::formats;
use deepair::grid::{
    parse_timestamp, preprocess, read_observations, write_observations, Calendar, Channel, ChannelSchema, GridCube,
    GridSpec, StationRegistry, StationTruth,
};
use deepair::inference::{
    estimate_city, estimate_hours, forecast_stations, per_pollutant_eval, seasonal_mean_maps, write_pgm, Predictions,
};
use deepair::model::{Checkpoint, DeepAirModel, ModelConfig};
use deepair::saliency::{saliency_scores, subsample};
use deepair::synthcity::generate;
use deepair::training::{
    enumerate_samples, hyperparam_search, prepare_dataset, train, DatasetSplit, PatchDataset,
};
use deepair::{Error, Result, Rng};
use serde::{Deserialize, Serialize};

use crate::config::{default_run, RunConfig, Subset, Task};

/// `dataset.toml`: what `preprocess` needs besides the observation and
/// registry files.
#[derive(Serialize, Deserialize)]
struct DatasetInfo {
    format: String,
    start_time: String,
    hours: usize,
    spec: GridSpec,
    channels: Vec<Channel>,
}

impl DatasetInfo {
    fn load(path: &Path) -> Result<(DatasetInfo, ChannelSchema)> {
        let text = std::fs::read_to_string(path)?;
        let info: DatasetInfo =
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if info.format != formats::DATASET {
            return Err(Error::Format(format!(
                "{}: expected format {}, found {}",
                path.display(),
                formats::DATASET,
                info.format
            )));
        }
        let schema = ChannelSchema::new(info.channels.clone())?;
        Ok((info, schema))
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let city = generate(&cfg.synth).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("synth.{m}")),
        e => e,
    })?;
    create_dir(&cfg.output_dir)?;
    write_observations(&cfg.out("observations.csv"), &city.observations)?;
    city.registry.write(&cfg.out("registry.csv"))?;
    city.truth.save(&cfg.out("truth"))?;
    let info = DatasetInfo {
        format: formats::DATASET.to_string(),
        start_time: cfg.synth.start_time.clone(),
        hours: cfg.synth.hours,
        spec: city.truth.spec.clone(),
        channels: cfg.synth.schema()?.channels,
    };
    let text = toml::to_string(&info).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(cfg.out("dataset.toml"), text)?;
    println!(
        "synth: {} observations from {} stations over {} hours -> {}",
        city.observations.len(),
        city.registry.len(),
        cfg.synth.hours,
        cfg.output_dir.display()
    );
    Ok(())
}

pub fn preprocess_cmd(cfg: &RunConfig) -> Result<()> {
    let (info, schema) = DatasetInfo::load(&cfg.dataset_path())?;
    let obs = read_observations(&cfg.observations_path())?;
    let registry = StationRegistry::read(&cfg.registry_path())?;
    let calendar = Calendar::with_holidays(&cfg.data.holidays)?;
    let start = parse_timestamp(&info.start_time)?;
    let pre = preprocess(&obs, &info.spec, &schema, &registry, start, info.hours, &calendar)?;
    create_dir(&cfg.output_dir)?;
    pre.estimation.save(&cfg.out("estimation"))?;
    pre.forecast.save(&cfg.out("forecast"))?;
    pre.truth.write(&cfg.out("station_truth.csv"))?;
    println!(
        "preprocess: {} channels, {} hours, {} imputed estimation cells",
        pre.estimation.channels(),
        pre.estimation.hours,
        pre.estimation.imputed.iter().filter(|&&m| m).count()
    );
    Ok(())
}

fn cube_dir(cfg: &RunConfig, forecast: bool) -> PathBuf {
    cfg.out(if forecast { "forecast" } else { "estimation" })
}

fn load_inputs(cfg: &RunConfig, forecast: bool) -> Result<(GridCube, StationRegistry, StationTruth)> {
    let cube = GridCube::load(&cube_dir(cfg, forecast))?;
    let registry = StationRegistry::read(&cfg.registry_path())?;
    let truth = StationTruth::read(&cfg.out("station_truth.csv"))?;
    Ok((cube, registry, truth))
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let t = &cfg.train;
    let forecast = t.task == Task::Forecast;
    let (cube, registry, truth) = load_inputs(cfg, forecast)?;
    let tc = t.train_config(cfg.seed);
    let prep = prepare_dataset(&cube, &registry, &truth, &t.target, &tc, t.split_mode())?;
    let mc = ModelConfig {
        architecture: cfg.model.kind.architecture(),
        airres: cfg.model.airres.clone(),
        lstm: cfg.model.lstm.clone(),
        input_channels: cube.channels(),
        patch_size: tc.patch_size,
        window: tc.window,
        horizon: tc.horizon,
    };
    mc.validate()?;
    let run = cfg.out(&t.run_name());
    create_dir(&run)?;
    let (model, report) = if t.grid_search {
        let outcome = hyperparam_search(&mc, &t.grid, &prep.data, &prep.split, &tc)?;
        let mut text = String::from("num_layers,hidden_size,parameters,val_mape,selected\n");
        for (i, c) in outcome.cells.iter().enumerate() {
            text.push_str(&format!(
                "{},{},{},{:?},{}\n",
                c.num_layers,
                c.hidden_size,
                c.parameters,
                c.val_error,
                i == outcome.best
            ));
        }
        std::fs::write(run.join("search.csv"), text)?;
        (outcome.model, outcome.report)
    } else {
        let model = DeepAirModel::new(mc, &mut Rng::new(cfg.seed).fork(1))?;
        train(model, &prep.data, &prep.split, &tc)?
    };
    let header = [
        ("task", format!("{:?}", if forecast { "forecast" } else { "estimate" })),
        ("target", format!("{:?}", t.target)),
        ("model", format!("{:?}", cfg.model.kind.name())),
        ("use_1x1", model.config.airres.use_1x1.to_string()),
        ("lstm_layers", model.config.lstm.num_layers.to_string()),
        ("hidden_size", model.config.lstm.hidden_size.to_string()),
        ("parameters", model.parameter_count().to_string()),
        ("samples", prep.data.len().to_string()),
        ("seed", cfg.seed.to_string()),
    ];
    let ck = Checkpoint {
        model,
        schema: cube.schema.clone(),
        norm: prep.norm,
        target: t.target.clone(),
        seed: cfg.seed,
    };
    ck.save(&run.join("checkpoint"))?;
    report.write(&run.join("report.txt"), &header)?;
    prep.split.write(&run.join("split.csv"), &prep.data.samples)?;
    let val = report.best_val_mape.map(|v| format!("{v:.3}%")).unwrap_or_else(|| "n/a".into());
    println!(
        "train: {} samples, stopped after epoch {} ({}), best epoch {} val MAPE {} -> {}",
        prep.data.len(),
        report.stop_epoch,
        report.stop_reason,
        report.best_epoch,
        val,
        run.display()
    );
    Ok(())
}

/// A trained run reloaded together with the dataset it was trained on.
struct Loaded {
    ck: Checkpoint,
    data: PatchDataset,
    split: DatasetSplit,
}

fn load_run(cfg: &RunConfig, run: &str) -> Result<Loaded> {
    let dir = cfg.out(run);
    let ck = Checkpoint::load(&dir.join("checkpoint"))?;
    let mc = &ck.model.config;
    let (cube, registry, truth) = load_inputs(cfg, mc.is_forecast())?;
    ck.check_schema(&cube.schema)?;
    let samples = enumerate_samples(&cube, &registry, &truth, &ck.target, mc.window, mc.horizon)?;
    let data = PatchDataset::from_grid(&cube, &ck.norm, &ck.target, samples, mc.patch_size, mc.window)?;
    let split = DatasetSplit::read(&dir.join("split.csv"), &data.samples)?;
    Ok(Loaded { ck, data, split })
}

fn subset(split: &DatasetSplit, which: Subset) -> Vec<usize> {
    match which {
        Subset::Train => split.train.clone(),
        Subset::Val => split.val.clone(),
        Subset::Test => split.test.clone(),
        Subset::All => {
            let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
            all.sort_unstable();
            all
        }
    }
}

/// The run a command applies to: the explicit one, else the `[train]` run if
/// it has the right task, else the default name for that task.
fn run_for(cfg: &RunConfig, explicit: &Option<String>, task: Task) -> String {
    match explicit {
        Some(r) => r.clone(),
        None if cfg.train.task == task => cfg.train.run_name(),
        None => default_run(task, &cfg.train.target),
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let runs = if cfg.evaluate.runs.is_empty() {
        vec![cfg.train.run_name()]
    } else {
        cfg.evaluate.runs.clone()
    };
    let which = cfg.evaluate.split;
    let mut preds = Vec::new();
    for run in &runs {
        let l = load_run(cfg, run)?;
        let idx = subset(&l.split, which);
        let p = Predictions::collect(&l.ck.target, &l.ck.model, &l.data, &idx)?;
        p.write_pairs(&cfg.out(run).join(format!("pairs-{}.csv", which.name())))?;
        preds.push(p);
    }
    let table = per_pollutant_eval(&preds)?;
    let path = cfg.out(&format!("eval-{}.txt", which.name()));
    table.write(&path)?;
    for (name, r) in &table.rows {
        println!(
            "evaluate[{}]: {name} MAPE {:.3}% accuracy {:.3}% over {} pairs ({} excluded)",
            which.name(),
            r.mape_percent,
            r.accuracy_percent(),
            r.count,
            r.excluded
        );
    }
    Ok(())
}

/// Hour index from `hour` or `time`; the last hour of the cube by default.
fn pick_hour(cube: &GridCube, hour: Option<usize>, time: &Option<String>) -> Result<usize> {
    match (hour, time) {
        (Some(_), Some(_)) => Err(Error::Config("give either hour or time, not both".into())),
        (Some(h), None) => Ok(h),
        (None, Some(s)) => {
            let t = parse_timestamp(s)?;
            let h = (t - cube.start_time).num_hours();
            if h < 0 || h as usize >= cube.hours || (t - cube.start_time).num_seconds() % 3600 != 0 {
                return Err(Error::Invalid(format!("time {s} is not an hour of the cube")));
            }
            Ok(h as usize)
        }
        (None, None) => Ok(cube.hours - 1),
    }
}

pub fn estimate_map(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.estimate_map;
    let run = run_for(cfg, &s.run, Task::Estimate);
    let dir = cfg.out(&run);
    let ck = Checkpoint::load(&dir.join("checkpoint"))?;
    let cube = GridCube::load(&cube_dir(cfg, false))?;
    let t = pick_hour(&cube, s.hour, &s.time)?;
    let map = estimate_city(&ck, &cube, t)?;
    map.write_csv(&dir.join("estimate_map.csv"))?;
    map.write_pgm(&dir.join("estimate_map.pgm"))?;
    println!("estimate-map: {} cells at hour {t} -> {}", map.values.len(), dir.display());
    Ok(())
}

pub fn forecast(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.forecast;
    let run = run_for(cfg, &s.run, Task::Forecast);
    let dir = cfg.out(&run);
    let ck = Checkpoint::load(&dir.join("checkpoint"))?;
    let cube = GridCube::load(&cube_dir(cfg, true))?;
    let registry = StationRegistry::read(&cfg.registry_path())?;
    let t = pick_hour(&cube, s.hour, &s.time)?;
    let table = forecast_stations(&ck, &cube, &registry, t)?;
    table.write_csv(&dir.join("forecast.csv"))?;
    println!(
        "forecast: {} stations x {} hours from hour {t} -> {}",
        table.rows.len(),
        table.horizon(),
        dir.display()
    );
    Ok(())
}

pub fn saliency(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.saliency;
    let run = run_for(cfg, &s.run, cfg.train.task);
    let l = load_run(cfg, &run)?;
    let mut idx = subset(&l.split, s.split);
    if s.subsample > 0 {
        idx = subsample(&idx, s.subsample, cfg.seed);
    }
    let scores = saliency_scores(&l.ck.model, &l.data, &idx)?;
    let dir = cfg.out(&run);
    scores.write(&dir.join("saliency.txt"))?;
    println!("saliency: {} channels over {} samples -> {}", scores.channels.len(), scores.samples, dir.display());
    for (group, total) in scores.group_totals() {
        println!("  {:<12} {total:.6}", group.as_str());
    }
    Ok(())
}

pub fn seasonal_maps(cfg: &RunConfig) -> Result<()> {
    let s = &cfg.seasonal_maps;
    let run = run_for(cfg, &s.run, Task::Estimate);
    let dir = cfg.out(&run);
    let ck = Checkpoint::load(&dir.join("checkpoint"))?;
    let cube = GridCube::load(&cube_dir(cfg, false))?;
    let first = ck.model.config.window - 1;
    let hours: Vec<usize> = (first..cube.hours).step_by(s.stride).collect();
    let maps = estimate_hours(&ck, &cube, &hours)?;
    let seasonal = seasonal_mean_maps(&maps)?;
    for w in &seasonal.warnings {
        eprintln!("warning: {w}");
    }
    let out = dir.join("seasonal");
    create_dir(&out)?;
    let mut summary = String::from("season,hours\n");
    for (season, count, values) in &seasonal.rasters {
        let label = format!("{} {} mean of {count} hours", ck.target, season.name());
        write_pgm(&out.join(format!("{}.pgm", season.name())), seasonal.rows, seasonal.cols, values, &label)?;
        summary.push_str(&format!("{},{count}\n", season.name()));
    }
    std::fs::write(out.join("seasons.csv"), summary)?;
    println!("seasonal-maps: {} season rasters from {} hourly maps -> {}", seasonal.rasters.len(), maps.len(), out.display());
    Ok(())
}
