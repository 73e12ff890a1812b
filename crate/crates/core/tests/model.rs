mod common;

use common::{max_abs_diff, naive_conv, scalar_lstm_step};
use deepair::grid::Patch;
use deepair::model::{AirResConfig, Architecture, Checkpoint, DeepAirModel, LstmConfig, ModelConfig};
use deepair::numerics::{sgd_step, ParamStore, Tape, Tensor, BN_EPSILON};
use deepair::Rng;

fn config(arch: Architecture, c: usize, n: usize, w: usize, f: usize, horizon: usize) -> ModelConfig {
    ModelConfig {
        architecture: arch,
        airres: AirResConfig {
            num_units: 2,
            convs_per_unit: 2,
            kernel: 3,
            feature_width: f,
            use_1x1: true,
            groups: 1,
        },
        lstm: LstmConfig {
            num_layers: 1,
            hidden_size: 5,
        },
        input_channels: c,
        patch_size: n,
        window: w,
        horizon,
    }
}

fn random_patch(rng: &mut Rng, w: usize, c: usize, n: usize, lo: f64, hi: f64) -> Patch {
    Patch {
        center: (0, 0),
        t_end: w - 1,
        window: w,
        channels: c,
        size: n,
        values: (0..w * c * n * n).map(|_| rng.uniform(lo, hi)).collect(),
        boundary_padded: false,
    }
}

fn value(store: &ParamStore, name: &str) -> Vec<f64> {
    store.get(store.find(name).unwrap()).value.data().to_vec()
}

fn tensor(store: &ParamStore, name: &str) -> Tensor {
    store.get(store.find(name).unwrap()).value.clone()
}

/// Loop-based 1x1 convolution over `[C,H,W]`.
fn naive_pointwise(x: &[f64], c_in: usize, hw: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let c_out = b.len();
    let mut out = vec![0.0; c_out * hw];
    for o in 0..c_out {
        for p in 0..hw {
            let mut s = b[o];
            for i in 0..c_in {
                s += w[o * c_in + i] * x[i * hw + p];
            }
            out[o * hw + p] = s;
        }
    }
    out
}

/// Train-mode batch norm over a list of `[C,H,W]` images.
fn naive_bn(xs: &mut [Vec<f64>], c: usize, hw: usize, gamma: &[f64], beta: &[f64]) {
    for ch in 0..c {
        let vals: Vec<f64> = xs.iter().flat_map(|x| x[ch * hw..(ch + 1) * hw].to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
        for x in xs.iter_mut() {
            for a in &mut x[ch * hw..(ch + 1) * hw] {
                *a = gamma[ch] * (*a - m) / (v + BN_EPSILON).sqrt() + beta[ch];
            }
        }
    }
}

/// Independent train-mode forward of the whole network for a batch of patches.
fn oracle_forward(model: &DeepAirModel, patches: &[Patch]) -> Vec<Vec<f64>> {
    let cfg = &model.config;
    let p = &model.params;
    let (c, n, wn) = (cfg.input_channels, cfg.patch_size, cfg.window);
    let hw = n * n;
    let features: Vec<Vec<f64>> = match cfg.architecture {
        Architecture::Lstm => patches
            .iter()
            .flat_map(|pt| {
                (0..wn).map(move |t| (0..c).map(|ch| pt.get(t, ch, n / 2, n / 2)).collect::<Vec<f64>>())
            })
            .collect(),
        Architecture::DeepAir => {
            let f = cfg.airres.feature_width;
            let frames: Vec<Vec<f64>> = patches
                .iter()
                .flat_map(|pt| pt.values.chunks(c * hw).map(<[f64]>::to_vec).collect::<Vec<_>>())
                .collect();
            let mut xs: Vec<Vec<f64>> = frames
                .iter()
                .map(|fr| naive_pointwise(fr, c, hw, &value(p, "stem.w"), &value(p, "stem.b")))
                .collect();
            for u in 0..cfg.airres.num_units {
                if u > 0 && cfg.airres.use_1x1 {
                    let (w, b) = (value(p, &format!("mix{u}.w")), value(p, &format!("mix{u}.b")));
                    xs = xs.iter().map(|x| naive_pointwise(x, f, hw, &w, &b)).collect();
                }
                let mut h = xs.clone();
                for j in 0..cfg.airres.convs_per_unit {
                    let k = tensor(p, &format!("unit{u}.conv{j}.w"));
                    let b = tensor(p, &format!("unit{u}.conv{j}.b"));
                    h = h
                        .iter()
                        .map(|x| naive_conv(&Tensor::new(vec![f, n, n], x.clone()).unwrap(), &k, &b))
                        .collect();
                    let g = value(p, &format!("unit{u}.bn{j}.gamma"));
                    let be = value(p, &format!("unit{u}.bn{j}.beta"));
                    naive_bn(&mut h, f, hw, &g, &be);
                    if j + 1 < cfg.airres.convs_per_unit {
                        h.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
                    }
                }
                for (x, hb) in xs.iter_mut().zip(&h) {
                    for (a, b) in x.iter_mut().zip(hb) {
                        *a = (*a + b).max(0.0);
                    }
                }
            }
            xs.iter()
                .map(|x| x.chunks(hw).map(|s| s.iter().sum::<f64>() / hw as f64).collect())
                .collect()
        }
    };
    let hidden = cfg.lstm.hidden_size;
    let mut out = Vec::new();
    for (b, _) in patches.iter().enumerate() {
        let mut seq: Vec<Vec<f64>> = features[b * wn..(b + 1) * wn].to_vec();
        for l in 0..cfg.lstm.num_layers {
            let get = |kind: &str| -> [Vec<f64>; 4] {
                ["i", "f", "o", "c"].map(|g| value(p, &format!("lstm{l}.{kind}_{g}")))
            };
            let (w, u, bb) = (get("w"), get("u"), get("b"));
            let (mut h, mut cc) = (vec![0.0; hidden], vec![0.0; hidden]);
            let mut next = Vec::new();
            for x in &seq {
                (h, cc) = scalar_lstm_step(x, &h, &cc, &w, &u, &bb);
                next.push(h.clone());
            }
            seq = next;
        }
        let h = seq.last().unwrap();
        let hw_ = value(p, "head.w");
        let hb = value(p, "head.b");
        out.push(
            (0..hb.len())
                .map(|o| hb[o] + (0..hidden).map(|k| hw_[o * hidden + k] * h[k]).sum::<f64>())
                .collect(),
        );
    }
    out
}

#[test]
fn forward_matches_loop_oracle() {
    let mut rng = Rng::new(3);
    for (arch, horizon) in [(Architecture::DeepAir, 0), (Architecture::DeepAir, 3), (Architecture::Lstm, 2)] {
        for use_1x1 in [true, false] {
            let mut cfg = config(arch, 3, 5, 3, 4, horizon);
            cfg.airres.use_1x1 = use_1x1;
            cfg.lstm.num_layers = 2;
            let mut model = DeepAirModel::new(cfg, &mut rng).unwrap();
            let patches: Vec<Patch> = (0..2).map(|_| random_patch(&mut rng, 3, 3, 5, -1.0, 1.0)).collect();
            let refs: Vec<&Patch> = patches.iter().collect();
            let got = model.calibrate(&refs).unwrap();
            let want = oracle_forward(&model, &patches);
            assert_eq!(got.len(), 2);
            for (g, w) in got.iter().zip(&want) {
                assert_eq!(g.len(), horizon.max(1));
                assert!(max_abs_diff(g, w) < 1e-12, "{arch:?} {use_1x1}: {g:?} vs {w:?}");
            }
        }
    }
}

#[test]
fn eval_before_calibration_is_rejected() {
    let mut rng = Rng::new(1);
    let model = DeepAirModel::new(config(Architecture::DeepAir, 2, 3, 2, 4, 0), &mut rng).unwrap();
    let p = random_patch(&mut rng, 2, 2, 3, 0.0, 1.0);
    assert!(model.predict(&[&p]).is_err());
}

#[test]
fn zeroed_branches_reduce_to_stem_then_pool() {
    let mut rng = Rng::new(5);
    let cfg = config(Architecture::DeepAir, 3, 5, 1, 4, 0);
    let mut model = DeepAirModel::new(cfg.clone(), &mut rng).unwrap();
    model.zero_residual_branches();
    model.set_mixers_identity();
    let mut no_mix_cfg = cfg;
    no_mix_cfg.airres.use_1x1 = false;
    let mut plain = DeepAirModel::new(no_mix_cfg, &mut Rng::new(5)).unwrap();
    plain.zero_residual_branches();
    // copy shared weights so the two models differ only by the identity mixers
    for prm in plain.params.clone().iter() {
        let src = model.params.find(&prm.name).unwrap();
        let dst = plain.params.find(&prm.name).unwrap();
        let v = model.params.get(src).value.data().to_vec();
        plain.params.value_mut(dst).copy_from_slice(&v);
    }
    let patch = random_patch(&mut rng, 1, 3, 5, 0.0, 2.0);
    let a = model.calibrate(&[&patch]).unwrap();
    let b = plain.calibrate(&[&patch]).unwrap();
    assert_eq!(a, b);

    // features equal pooled ReLU of the stem output
    let mut tape = Tape::new();
    let x = tape.constant(model.pack(&[&patch]).unwrap());
    let a_cfg = model.airres.clone().unwrap();
    let w = tape.param(&model.params, a_cfg.stem.w);
    let bb = tape.param(&model.params, a_cfg.stem.b);
    let s = tape.conv1x1(x, w, bb).unwrap();
    let s = tape.relu(s);
    let pooled = tape.global_avg_pool(s).unwrap();
    let stem_pool = tape.value(pooled).data().to_vec();
    let f = oracle_features_after_identity(&model, &patch);
    assert!(max_abs_diff(&stem_pool, &f) < 1e-12);
}

/// Per-channel mean of ReLU(stem(x)) computed with loops.
fn oracle_features_after_identity(model: &DeepAirModel, patch: &Patch) -> Vec<f64> {
    let (c, n) = (patch.channels, patch.size);
    let s = naive_pointwise(&patch.values, c, n * n, &value(&model.params, "stem.w"), &value(&model.params, "stem.b"));
    s.chunks(n * n)
        .map(|ch| ch.iter().map(|v| v.max(0.0)).sum::<f64>() / (n * n) as f64)
        .collect()
}

#[test]
fn residual_unit_identity_on_nonnegative_input() {
    let mut rng = Rng::new(8);
    let mut cfg = config(Architecture::DeepAir, 4, 3, 1, 4, 0);
    cfg.airres.num_units = 1;
    let mut model = DeepAirModel::new(cfg, &mut rng).unwrap();
    model.zero_residual_branches();
    // identity stem makes the unit input equal the patch itself
    let a = model.airres.clone().unwrap();
    for (i, v) in model.params.value_mut(a.stem.w).iter_mut().enumerate() {
        *v = if i / 4 == i % 4 { 1.0 } else { 0.0 };
    }
    let patch = random_patch(&mut rng, 1, 4, 3, 0.0, 3.0);
    let mut tape = Tape::new();
    let x = tape.constant(model.pack(&[&patch]).unwrap());
    let mut stats = model.train_stats();
    let feats = model.features(&mut tape, x, Some(&mut stats)).unwrap();
    let want: Vec<f64> = patch.values.chunks(9).map(|c| c.iter().sum::<f64>() / 9.0).collect();
    assert_eq!(tape.value(feats).shape(), &[1, 4]);
    assert!(max_abs_diff(tape.value(feats).data(), &want) < 1e-15);
    // zero input stays zero
    let zero = Patch {
        values: vec![0.0; patch.values.len()],
        ..patch.clone()
    };
    let out_zero = model.calibrate(&[&zero]).unwrap();
    let lstm_zero = oracle_forward(&model, &[zero]);
    assert!(max_abs_diff(&out_zero[0], &lstm_zero[0]) < 1e-15);
}

#[test]
fn single_pixel_frames() {
    let mut rng = Rng::new(9);
    let mut model = DeepAirModel::new(config(Architecture::DeepAir, 3, 1, 2, 4, 0), &mut rng).unwrap();
    let patches: Vec<Patch> = (0..3).map(|_| random_patch(&mut rng, 2, 3, 1, -1.0, 1.0)).collect();
    let refs: Vec<&Patch> = patches.iter().collect();
    let got = model.calibrate(&refs).unwrap();
    let want = oracle_forward(&model, &patches);
    for (g, w) in got.iter().zip(&want) {
        assert!(max_abs_diff(g, w) < 1e-12);
    }
}

#[test]
fn frame_order_matters_and_models_are_deterministic() {
    let mut rng = Rng::new(12);
    let cfg = config(Architecture::DeepAir, 2, 3, 4, 4, 0);
    let mut a = DeepAirModel::new(cfg.clone(), &mut Rng::new(44)).unwrap();
    let mut b = DeepAirModel::new(cfg, &mut Rng::new(44)).unwrap();
    let p = random_patch(&mut rng, 4, 2, 3, -1.0, 1.0);
    let q = random_patch(&mut rng, 4, 2, 3, -1.0, 1.0);
    assert_eq!(a.calibrate(&[&p, &q]).unwrap(), b.calibrate(&[&p, &q]).unwrap());
    assert_eq!(a.predict(&[&p]).unwrap(), b.predict(&[&p]).unwrap());
    let frame = 2 * 9;
    let mut rev = p.clone();
    for t in 0..4 {
        rev.values[t * frame..(t + 1) * frame].copy_from_slice(&p.values[(3 - t) * frame..(4 - t) * frame]);
    }
    let y = a.predict(&[&p]).unwrap()[0][0];
    let y_rev = a.predict(&[&rev]).unwrap()[0][0];
    assert!((y - y_rev).abs() > 1e-9, "{y} vs {y_rev}");
}

#[test]
fn lstm_baseline_ignores_off_centre_cells_and_zero_weights_give_bias() {
    let mut rng = Rng::new(13);
    let cfg = config(Architecture::Lstm, 3, 5, 3, 0, 2);
    let model = DeepAirModel::new(cfg.clone(), &mut rng).unwrap();
    let p = random_patch(&mut rng, 3, 3, 5, -1.0, 1.0);
    let mut q = p.clone();
    for (i, v) in q.values.iter_mut().enumerate() {
        if i % 25 != 12 {
            *v += 5.0;
        }
    }
    assert_eq!(model.predict(&[&p]).unwrap(), model.predict(&[&q]).unwrap());

    let mut one = DeepAirModel::new(ModelConfig { window: 1, ..cfg }, &mut rng).unwrap();
    for prm in one.params.iter_mut() {
        prm.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let head = one.params.find("head.b").unwrap();
    one.params.value_mut(head).copy_from_slice(&[0.25, -1.5]);
    let p1 = random_patch(&mut rng, 1, 3, 5, -1.0, 1.0);
    assert_eq!(one.predict(&[&p1]).unwrap(), vec![vec![0.25, -1.5]]);
}

#[test]
fn wrong_window_or_shape_rejected() {
    let mut rng = Rng::new(2);
    let model = DeepAirModel::new(config(Architecture::DeepAir, 2, 3, 2, 4, 0), &mut rng).unwrap();
    let p = random_patch(&mut rng, 3, 2, 3, 0.0, 1.0);
    assert!(model.pack(&[&p]).is_err());
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[3, 2, 3, 3]));
    assert!(model.graph(&mut tape, x, None).is_err());
}

#[test]
fn every_parameter_group_receives_gradient() {
    let mut rng = Rng::new(21);
    let mut model = DeepAirModel::new(config(Architecture::DeepAir, 3, 5, 3, 4, 0), &mut rng).unwrap();
    let patches: Vec<Patch> = (0..2).map(|_| random_patch(&mut rng, 3, 3, 5, -1.0, 1.0)).collect();
    let refs: Vec<&Patch> = patches.iter().collect();
    let mut tape = Tape::new();
    let x = tape.constant(model.pack(&refs).unwrap());
    let mut stats = model.train_stats();
    let y = model.graph(&mut tape, x, Some(&mut stats)).unwrap();
    let loss = tape.mse(y, &Tensor::new(vec![2, 1], vec![0.3, -0.7]).unwrap()).unwrap();
    let grads = tape.backward(loss).unwrap();
    model.params.zero_grad();
    grads.accumulate_into(&tape, &mut model.params);
    for (group, ids) in model.parameter_groups() {
        let max = ids
            .iter()
            .flat_map(|&id| model.params.get(id).grad.clone().unwrap_or_default())
            .fold(0.0f64, |m, g| m.max(g.abs()));
        assert!(max > 0.0, "group {group} has no gradient");
    }
    sgd_step(&mut model.params, 0.1).unwrap();
}

#[test]
fn checkpoint_roundtrip_and_schema_guard() {
    use deepair::grid::{Channel, ChannelGroup, ChannelSchema, NormStats};
    let mut rng = Rng::new(30);
    let schema = ChannelSchema::new(vec![
        Channel::new("pm25", ChannelGroup::Pollutant, "ug/m3", false),
        Channel::new("wind", ChannelGroup::Meteorology, "m/s", false),
    ])
    .unwrap();
    let mut model = DeepAirModel::new(config(Architecture::DeepAir, 2, 3, 2, 4, 2), &mut rng).unwrap();
    let p = random_patch(&mut rng, 2, 2, 3, 0.0, 1.0);
    model.calibrate(&[&p]).unwrap();
    let ck = Checkpoint {
        model,
        schema: schema.clone(),
        norm: NormStats {
            channels: vec!["pm25".into(), "wind".into()],
            mean: vec![30.0, 2.0],
            std: vec![10.0, 1.5],
        },
        target: "pm25".into(),
        seed: 30,
    };
    let dir = tempfile::tempdir().unwrap();
    ck.save(dir.path()).unwrap();
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back.model.predict(&[&p]).unwrap(), ck.model.predict(&[&p]).unwrap());
    assert_eq!(back.norm, ck.norm);
    back.check_schema(&schema).unwrap();
    let other = ChannelSchema::new(vec![
        Channel::new("pm25", ChannelGroup::Pollutant, "ug/m3", false),
        Channel::new("temp", ChannelGroup::Meteorology, "C", false),
    ])
    .unwrap();
    assert!(back.check_schema(&other).is_err());

    // a corrupted blob is refused
    let blob = dir.path().join("params.bin");
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&blob, bytes).unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
}

/// Pooled train-mode features `[W][F]` of one patch.
fn pooled(model: &DeepAirModel, patch: &Patch) -> Vec<Vec<f64>> {
    let mut tape = Tape::new();
    let x = tape.constant(model.pack(&[patch]).unwrap());
    let mut stats = model.train_stats();
    let f = model.features(&mut tape, x, Some(&mut stats)).unwrap();
    let width = model.config.airres.feature_width;
    tape.value(f).data().chunks(width).map(<[f64]>::to_vec).collect()
}

#[test]
fn grouped_trunk_keeps_channels_apart_until_a_mixer() {
    let mut rng = Rng::new(31);
    for use_1x1 in [false, true] {
        let mut cfg = config(Architecture::DeepAir, 2, 5, 2, 4, 0);
        cfg.airres.groups = 2;
        cfg.airres.use_1x1 = use_1x1;
        let mut model = DeepAirModel::new(cfg, &mut rng).unwrap();
        let a = random_patch(&mut rng, 2, 2, 5, -1.0, 1.0);
        let mut b = a.clone();
        // Perturb channel 1 only.
        for t in 0..2 {
            for v in &mut b.values[(t * 2 + 1) * 25..(t * 2 + 2) * 25] {
                *v += rng.uniform(-1.0, 1.0);
            }
        }
        let (fa, fb) = (pooled(&model, &a), pooled(&model, &b));
        let first_half_same = fa.iter().zip(&fb).all(|(x, y)| x[..2] == y[..2]);
        let second_half_same = fa.iter().zip(&fb).all(|(x, y)| x[2..] == y[2..]);
        assert!(!second_half_same);
        assert_eq!(first_half_same, !use_1x1, "use_1x1 = {use_1x1}");

        // Oracle agreement and masked weights staying at zero through training.
        let refs = [&a, &b];
        let got = model.calibrate(&refs).unwrap();
        let want = oracle_forward(&model, &[a.clone(), b.clone()]);
        for (g, w) in got.iter().zip(&want) {
            assert!(max_abs_diff(g, w) < 1e-12);
        }
        let stem_before = value(&model.params, "stem.w");
        let mut tape = Tape::new();
        let x = tape.constant(model.pack(&refs).unwrap());
        let mut stats = model.train_stats();
        let y = model.graph(&mut tape, x, Some(&mut stats)).unwrap();
        let loss = tape.mse(y, &Tensor::new(vec![2, 1], vec![1.0, -1.0]).unwrap()).unwrap();
        let grads = tape.backward(loss).unwrap();
        model.params.zero_grad();
        grads.accumulate_into(&tape, &mut model.params);
        sgd_step(&mut model.params, 0.5).unwrap();
        // stem.w is [4, 2]: rows 0-1 read channel 0, rows 2-3 read channel 1.
        let stem = value(&model.params, "stem.w");
        for (i, (&s, &s0)) in stem.iter().zip(&stem_before).enumerate() {
            let (o, c) = (i / 2, i % 2);
            if o / 2 != c {
                assert_eq!(s, 0.0);
            } else {
                assert_ne!(s, s0);
            }
        }
        let conv = value(&model.params, "unit0.conv0.w");
        for (i, &v) in conv.iter().enumerate() {
            let (o, c) = (i / 36, i / 9 % 4);
            if o / 2 != c / 2 {
                assert_eq!(v, 0.0);
            }
        }
        let full = 4 * 2 + 4 + 2 * (2 * (4 * 4 * 9 + 4 + 8));
        let masked = 4 + 2 * 2 * (4 * 4 * 9 / 2);
        let mixers = if use_1x1 { 4 * 4 + 4 } else { 0 };
        let lstm_head = 4 * (5 * 4 + 5 * 5 + 5) + 5 + 1;
        assert_eq!(model.parameter_count(), full - masked + mixers + lstm_head);
    }
}
