use deepair::grid::*;
use deepair::model::{AirResConfig, Architecture, DeepAirModel, LstmConfig, ModelConfig};
use deepair::training::*;
use deepair::Rng;
use proptest::prelude::*;

fn ts(s: &str) -> Timestamp {
    parse_timestamp(s).unwrap()
}

fn one_station(hours: usize) -> (GridCube, StationRegistry, StationTruth) {
    let schema = ChannelSchema::new(vec![Channel::new("pm25", ChannelGroup::Pollutant, "ug/m3", false)]).unwrap();
    let start = ts("2019-01-01T00:00:00");
    let mut cube = GridCube::missing(GridSpec::new(3, 3), schema, start, hours, Variant::Forecast);
    cube.values.iter_mut().for_each(|v| *v = 10.0);
    let mut reg = StationRegistry::new();
    reg.insert("s1", 1, 1, &["pm25"]).unwrap();
    let mut truth = StationTruth::new(start, hours);
    truth.insert("s1", "pm25", (0..hours).map(|t| Some(10.0 + t as f64)).collect());
    (cube, reg, truth)
}

#[test]
fn sample_counts_follow_window_and_horizon() {
    let (cube, reg, truth) = one_station(50);
    let est = enumerate_samples(&cube, &reg, &truth, "pm25", 48, 0).unwrap();
    assert_eq!(est.iter().map(|s| s.key.t).collect::<Vec<_>>(), vec![47, 48, 49]);
    assert_eq!(est[0].target, vec![57.0]);
    let fc = enumerate_samples(&cube, &reg, &truth, "pm25", 48, 1).unwrap();
    assert_eq!(fc.len(), 2);
    assert_eq!(fc[0].target, vec![58.0]);
    let (short, reg, truth) = one_station(47);
    assert!(enumerate_samples(&short, &reg, &truth, "pm25", 48, 0).is_err());
}

#[test]
fn forecast_keys_need_every_horizon_target() {
    let (cube, reg, mut truth) = one_station(10);
    let mut series: Vec<Option<f64>> = (0..10).map(|t| Some(t as f64 + 1.0)).collect();
    series[6] = None;
    truth.insert("s1", "pm25", series);
    let keys: Vec<usize> = enumerate_samples(&cube, &reg, &truth, "pm25", 2, 2)
        .unwrap()
        .iter()
        .map(|s| s.key.t)
        .collect();
    // t+1..t+2 must avoid hour 6, and t+2 <= 9
    assert_eq!(keys, vec![1, 2, 3, 6, 7]);
}

#[test]
fn patience_arithmetic() {
    let mut es = EarlyStopping::new(5);
    let vals = [5.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0];
    let mut stopped_after = None;
    for (i, v) in vals.iter().enumerate() {
        if es.observe(*v).1 {
            stopped_after = Some(i + 1);
            break;
        }
    }
    // epochs 3..=7 are the five without improvement over epoch 2
    assert_eq!(stopped_after, Some(7));
    assert_eq!(es.best_epoch, 2);
    assert_eq!(es.best_value, 4.0);
}

fn tiny_config(horizon: usize) -> ModelConfig {
    ModelConfig {
        architecture: Architecture::DeepAir,
        airres: AirResConfig {
            num_units: 2,
            feature_width: 4,
            ..AirResConfig::default()
        },
        lstm: LstmConfig {
            num_layers: 1,
            hidden_size: 6,
        },
        input_channels: 2,
        patch_size: 3,
        window: 3,
        horizon,
    }
}

/// Random two-channel cube with one station per interior cell and a smooth target.
fn toy_dataset(seed: u64, horizon: usize) -> PatchDataset {
    let mut rng = Rng::new(seed);
    let schema = ChannelSchema::new(vec![
        Channel::new("pm25", ChannelGroup::Pollutant, "ug/m3", false),
        Channel::new("wind", ChannelGroup::Meteorology, "m/s", false),
    ])
    .unwrap();
    let hours = 12;
    let mut cube = GridCube::missing(GridSpec::new(4, 4), schema, ts("2019-05-01T00:00:00"), hours, Variant::Estimation);
    cube.values.iter_mut().for_each(|v| *v = rng.uniform(-1.0, 1.0));
    let mut samples = Vec::new();
    for r in 0..4 {
        for c in 0..4 {
            for t in 2..hours - horizon {
                let base = 40.0 + 10.0 * cube.get(t, 0, r, c) + 5.0 * cube.get(t, 1, r, c);
                let target = if horizon == 0 { vec![base] } else { (1..=horizon).map(|k| base + k as f64).collect() };
                samples.push(Sample {
                    key: SampleKey {
                        site: format!("g{r}{c}"),
                        t,
                    },
                    center: (r, c),
                    target,
                });
            }
        }
    }
    PatchDataset::new(cube, samples, 3, 3, (40.0, 10.0)).unwrap()
}

fn trainable_values(m: &DeepAirModel) -> Vec<Vec<f64>> {
    m.params
        .iter()
        .filter(|p| p.trainable)
        .map(|p| p.value.data().to_vec())
        .collect()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = toy_dataset(1, 0);
    let model = DeepAirModel::new(tiny_config(0), &mut Rng::new(2)).unwrap();
    let before = trainable_values(&model);
    let split = DatasetSplit::new(&data.samples, SplitMode::Random, 3);
    let cfg = TrainConfig {
        patch_size: 3,
        window: 3,
        learning_rate: 0.0,
        batch_size: 4,
        max_epochs: 2,
        ..TrainConfig::default()
    };
    let (after, _) = train(model, &data, &split, &cfg).unwrap();
    assert_eq!(trainable_values(&after), before);
}

#[test]
fn single_sample_descends() {
    let data = toy_dataset(4, 0);
    let mut model = DeepAirModel::new(tiny_config(0), &mut Rng::new(5)).unwrap();
    let losses: Vec<f64> = (0..500).map(|_| train_step(&mut model, &data, &[7], 1e-4).unwrap()).collect();
    for k in 0..losses.len() - 50 {
        assert!(losses[k + 50] <= losses[k], "step {k}: {} -> {}", losses[k], losses[k + 50]);
    }
    assert!(losses[499] < losses[0]);
}

#[test]
fn horizon_loss_is_mean_over_steps() {
    let data = toy_dataset(6, 2);
    let mut model = DeepAirModel::new(tiny_config(2), &mut Rng::new(7)).unwrap();
    for p in model.params.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let z = data.normalized_target(0);
    let head = model.params.find("head.b").unwrap();
    model.params.value_mut(head).copy_from_slice(&[z[0] + 3.0, z[1] - 4.0]);
    let loss = train_step(&mut model, &data, &[0], 0.0).unwrap();
    assert!((loss - 12.5).abs() < 1e-12, "{loss}");
}

#[test]
fn non_finite_loss_names_the_sample() {
    let mut data = toy_dataset(8, 0);
    data.samples[5].target = vec![f64::NAN];
    let mut model = DeepAirModel::new(tiny_config(0), &mut Rng::new(9)).unwrap();
    let err = train_step(&mut model, &data, &[5], 1e-3).unwrap_err().to_string();
    assert!(err.contains(&data.samples[5].key.to_string()), "{err}");
}

fn strip_wall_clock(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with(WALL_CLOCK_KEY))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn training_is_reproducible_and_returns_best_epoch() {
    let data = toy_dataset(10, 0);
    let split = DatasetSplit::new(&data.samples, SplitMode::Random, 11);
    let cfg = TrainConfig {
        patch_size: 3,
        window: 3,
        learning_rate: 1e-2,
        batch_size: 4,
        max_epochs: 6,
        patience_epochs: 2,
        seed: 12,
        ..TrainConfig::default()
    };
    let run = || {
        let model = DeepAirModel::new(tiny_config(0), &mut Rng::new(13)).unwrap();
        train(model, &data, &split, &cfg).unwrap()
    };
    let (m1, r1) = run();
    let (m2, r2) = run();
    assert_eq!(strip_wall_clock(&r1.to_text(&[])), strip_wall_clock(&r2.to_text(&[])));
    assert_eq!(trainable_values(&m1), trainable_values(&m2));
    let reeval = evaluate_mape(&m1, &data, &split.val, 16).unwrap();
    assert_eq!(Some(reeval), r1.best_val_mape);
    let best = r1.epochs.iter().find(|e| e.epoch == r1.best_epoch).unwrap();
    assert_eq!(best.val_mape, r1.best_val_mape);
}

#[test]
fn split_file_roundtrip() {
    let data = toy_dataset(14, 0);
    let split = DatasetSplit::new(&data.samples, SplitMode::Contiguous, 15);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.csv");
    split.write(&path, &data.samples).unwrap();
    assert_eq!(DatasetSplit::read(&path, &data.samples).unwrap(), split);
    let max_train = split.train.iter().map(|&i| data.samples[i].key.t).max().unwrap();
    let min_test = split.test.iter().map(|&i| data.samples[i].key.t).min().unwrap();
    assert!(max_train <= min_test);
}

fn cell(layers: usize, hidden: usize, parameters: usize, val: f64) -> SearchCell {
    SearchCell {
        num_layers: layers,
        hidden_size: hidden,
        parameters,
        val_error: val,
    }
}

#[test]
fn grid_search_selection() {
    assert_eq!(select_best(&[cell(1, 128, 10, 0.4)]), Some(0));
    assert_eq!(select_best(&[cell(1, 128, 10, 0.30), cell(2, 128, 20, 0.25)]), Some(1));
    assert_eq!(select_best(&[cell(1, 128, 10, 0.3), cell(2, 512, 90, 0.3)]), Some(0));
    assert_eq!(select_best(&[cell(2, 512, 90, 0.3), cell(1, 128, 10, 0.3)]), Some(1));
    assert_eq!(select_best(&[]), None);
}

#[test]
fn grid_search_runs_every_cell() {
    let data = toy_dataset(16, 0);
    let split = DatasetSplit::new(&data.samples, SplitMode::Random, 17);
    let cfg = TrainConfig {
        patch_size: 3,
        window: 3,
        learning_rate: 1e-2,
        batch_size: 8,
        max_epochs: 2,
        seed: 18,
        ..TrainConfig::default()
    };
    let out = hyperparam_search(&tiny_config(0), &[(1, 4), (2, 4)], &data, &split, &cfg).unwrap();
    assert_eq!(out.cells.len(), 2);
    assert!(out.cells[1].parameters > out.cells[0].parameters);
    assert_eq!(out.best, select_best(&out.cells).unwrap());
    assert_eq!(out.model.config.lstm.num_layers, out.cells[out.best].num_layers);
}

proptest! {
    #[test]
    fn splits_are_disjoint_and_exhaustive(n in 1usize..400, seed in any::<u64>(), contiguous in any::<bool>()) {
        let samples: Vec<Sample> = (0..n)
            .map(|i| Sample { key: SampleKey { site: format!("s{}", i % 7), t: i / 7 }, center: (0, 0), target: vec![1.0] })
            .collect();
        let mode = if contiguous { SplitMode::Contiguous } else { SplitMode::Random };
        let s = DatasetSplit::new(&samples, mode, seed);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let nf = n as f64;
        prop_assert!((s.train.len() as f64 - 0.8 * nf).abs() <= 1.0);
        prop_assert!((s.val.len() as f64 - 0.1 * nf).abs() <= 1.0);
        prop_assert!((s.test.len() as f64 - 0.1 * nf).abs() <= 1.0);
    }
}
