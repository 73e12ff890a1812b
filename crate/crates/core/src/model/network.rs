//! The Deep-AIR network and its baselines over batches of patches.
//!
//! A batch of `B` patches is laid out as `[B*W, C, N, N]` (patch-major), so the
//! CNN sees every frame at once and batch normalization pools over all of them.
//! Row `b*W + t` of the pooled `[B*W, F]` features is frame `t` of patch `b`.

use super::config::{Architecture, ModelConfig};
use crate::error::{Error, Result};
use crate::grid::Patch;
use crate::numerics::{BnMode, LstmLayer, ParamId, ParamStore, Rng, RunningStats, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub w: ParamId,
    pub b: ParamId,
    /// Block-diagonal 0/1 mask applied to `w` for grouped layers.
    pub mask: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct BnLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    /// running mean, running variance, update count
    pub stats: [ParamId; 3],
}

#[derive(Clone, Debug)]
pub struct ResidualUnit {
    pub convs: Vec<ConvLayer>,
    pub norms: Vec<BnLayer>,
}

#[derive(Clone, Debug)]
pub struct AirRes {
    pub stem: ConvLayer,
    pub units: Vec<ResidualUnit>,
    pub mixers: Vec<ConvLayer>,
}

#[derive(Clone, Debug)]
pub struct DeepAirModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub airres: Option<AirRes>,
    pub lstm: Vec<LstmLayer>,
    pub head: ConvLayer,
}

/// Mutable running statistics handed to train-mode forward passes.
pub struct TrainStats(Vec<RunningStats>);

fn conv(store: &mut ParamStore, name: &str, c_out: usize, c_in: usize, k: usize, groups: usize, rng: &mut Rng) -> Result<ConvLayer> {
    let shape: Vec<usize> = if k == 1 { vec![c_out, c_in] } else { vec![c_out, c_in, k, k] };
    let (gi, go) = (c_in / groups, c_out / groups);
    let w = store.add_glorot(&format!("{name}.w"), &shape, gi * k * k, go * k * k, rng)?;
    let b = store.add(&format!("{name}.b"), Tensor::zeros(&[c_out]))?;
    let mask = if groups > 1 {
        let m: Vec<f64> = (0..c_out * c_in * k * k)
            .map(|i| {
                let (o, j) = (i / (c_in * k * k), i / (k * k) % c_in);
                if o / go == j / gi { 1.0 } else { 0.0 }
            })
            .collect();
        // Masked entries never receive gradient; keep them at zero.
        store.value_mut(w).iter_mut().zip(&m).for_each(|(v, m)| *v *= m);
        Some(Tensor::new(shape, m)?)
    } else {
        None
    };
    Ok(ConvLayer { w, b, mask })
}

fn bn(store: &mut ParamStore, name: &str, c: usize) -> Result<BnLayer> {
    Ok(BnLayer {
        gamma: store.add(&format!("{name}.gamma"), Tensor::full(&[c], 1.0))?,
        beta: store.add(&format!("{name}.beta"), Tensor::zeros(&[c]))?,
        stats: [
            store.add_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c]))?,
            store.add_buffer(&format!("{name}.running_var"), Tensor::full(&[c], 1.0))?,
            store.add_buffer(&format!("{name}.updates"), Tensor::zeros(&[1]))?,
        ],
    })
}

fn weight(tape: &mut Tape, store: &ParamStore, layer: &ConvLayer) -> Result<Var> {
    let w = tape.param(store, layer.w);
    match &layer.mask {
        Some(m) => {
            let m = tape.constant(m.clone());
            tape.mul(w, m)
        }
        None => Ok(w),
    }
}

impl DeepAirModel {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let c = config.input_channels;
        let (airres, d_lstm) = match config.architecture {
            Architecture::DeepAir => {
                let a = &config.airres;
                let f = a.feature_width;
                let g = a.groups;
                let stem = conv(&mut params, "stem", f, c, 1, g, rng)?;
                let mut units = Vec::with_capacity(a.num_units);
                let mut mixers = Vec::new();
                for u in 0..a.num_units {
                    if u > 0 && a.use_1x1 {
                        mixers.push(conv(&mut params, &format!("mix{u}"), f, f, 1, 1, rng)?);
                    }
                    let mut convs = Vec::new();
                    let mut norms = Vec::new();
                    for j in 0..a.convs_per_unit {
                        convs.push(conv(&mut params, &format!("unit{u}.conv{j}"), f, f, a.kernel, g, rng)?);
                        norms.push(bn(&mut params, &format!("unit{u}.bn{j}"), f)?);
                    }
                    units.push(ResidualUnit { convs, norms });
                }
                (Some(AirRes { stem, units, mixers }), f)
            }
            Architecture::Lstm => (None, c),
        };
        let mut lstm = Vec::with_capacity(config.lstm.num_layers);
        let hidden = config.lstm.hidden_size;
        for l in 0..config.lstm.num_layers {
            let d_in = if l == 0 { d_lstm } else { hidden };
            lstm.push(LstmLayer::register(&mut params, &format!("lstm{l}"), d_in, hidden, rng)?);
        }
        let out = config.outputs();
        let head = ConvLayer {
            w: params.add_glorot("head.w", &[out, hidden], hidden, out, rng)?,
            b: params.add("head.b", Tensor::zeros(&[out]))?,
            mask: None,
        };
        Ok(DeepAirModel {
            config,
            params,
            airres,
            lstm,
            head,
        })
    }

    /// Trainable scalars, not counting entries fixed at zero by group masks.
    pub fn parameter_count(&self) -> usize {
        let masked: usize = self
            .airres
            .iter()
            .flat_map(|a| std::iter::once(&a.stem).chain(a.units.iter().flat_map(|u| u.convs.iter())))
            .filter_map(|c| c.mask.as_ref())
            .map(|m| m.data().iter().filter(|&&v| v == 0.0).count())
            .sum();
        self.params.trainable_count() - masked
    }

    fn bn_layers(&self) -> impl Iterator<Item = &BnLayer> {
        self.airres
            .iter()
            .flat_map(|a| a.units.iter().flat_map(|u| u.norms.iter()))
    }

    /// Shape of the input tensor for a batch of `batch` patches.
    pub fn input_shape(&self, batch: usize) -> Vec<usize> {
        let c = &self.config;
        match c.architecture {
            Architecture::DeepAir => vec![batch * c.window, c.input_channels, c.patch_size, c.patch_size],
            Architecture::Lstm => vec![batch * c.window, c.input_channels],
        }
    }

    /// Packs patches into the network's input layout; the LSTM baseline keeps
    /// only the centre cell of each frame.
    pub fn pack(&self, patches: &[&Patch]) -> Result<Tensor> {
        let c = &self.config;
        if patches.is_empty() {
            return Err(Error::shape("empty patch batch"));
        }
        let mut data = Vec::new();
        for p in patches {
            if p.window != c.window || p.channels != c.input_channels || p.size != c.patch_size {
                return Err(Error::shape(format!(
                    "patch of {} frames x {} channels x {}^2 does not match model {} x {} x {}^2",
                    p.window, p.channels, p.size, c.window, c.input_channels, c.patch_size
                )));
            }
            match c.architecture {
                Architecture::DeepAir => data.extend_from_slice(&p.values),
                Architecture::Lstm => data.extend(p.center_series()),
            }
        }
        Tensor::new(self.input_shape(patches.len()), data)
    }

    /// Snapshot of running statistics for a train-mode pass.
    pub fn train_stats(&self) -> TrainStats {
        TrainStats(self.bn_layers().map(|l| self.params.running_stats(l.stats)).collect())
    }

    /// Writes statistics updated by a train-mode pass back into the store.
    pub fn commit_stats(&mut self, stats: TrainStats) {
        let ids: Vec<[ParamId; 3]> = self.bn_layers().map(|l| l.stats).collect();
        for (id, s) in ids.into_iter().zip(&stats.0) {
            self.params.set_running_stats(id, s);
        }
    }

    /// Records the forward pass of `input` (laid out as [`Self::input_shape`]) and
    /// returns the `[B, outputs]` predictions. `train` selects batch statistics.
    pub fn graph(&self, tape: &mut Tape, input: Var, train: Option<&mut TrainStats>) -> Result<Var> {
        let c = &self.config;
        let shape = tape.value(input).shape().to_vec();
        let rows = shape.first().copied().unwrap_or(0);
        if shape.len() != self.input_shape(1).len() || rows == 0 || rows % c.window != 0 {
            return Err(Error::shape(format!(
                "input {shape:?} is not a whole number of {}-frame sequences",
                c.window
            )));
        }
        let batch = rows / c.window;
        if shape != self.input_shape(batch) {
            return Err(Error::shape(format!(
                "input {shape:?} does not match expected {:?}",
                self.input_shape(batch)
            )));
        }
        let features = self.features(tape, input, train)?;
        let mut seq: Vec<Var> = (0..c.window)
            .map(|t| {
                let idx: Vec<usize> = (0..batch).map(|b| b * c.window + t).collect();
                tape.gather_rows(features, &idx)
            })
            .collect::<Result<_>>()?;
        for layer in &self.lstm {
            let vars = layer.bind(tape, &self.params);
            seq = layer.unroll(tape, &vars, &seq)?;
        }
        let last = *seq.last().expect("window >= 1");
        let w = tape.param(&self.params, self.head.w);
        let b = tape.param(&self.params, self.head.b);
        tape.linear(last, w, Some(b))
    }

    /// Per-frame feature vectors `[B*W, F]` (the raw centre vectors for the
    /// LSTM baseline).
    pub fn features(&self, tape: &mut Tape, input: Var, train: Option<&mut TrainStats>) -> Result<Var> {
        match &self.airres {
            Some(a) => self.airres_graph(tape, a, input, train),
            None => Ok(input),
        }
    }

    fn airres_graph(&self, tape: &mut Tape, a: &AirRes, input: Var, mut train: Option<&mut TrainStats>) -> Result<Var> {
        let p = &self.params;
        let stem_w = weight(tape, p, &a.stem)?;
        let stem_b = tape.param(p, a.stem.b);
        let mut x = tape.conv1x1(input, stem_w, stem_b)?;
        let mut bn_index = 0;
        let eval_stats: Vec<RunningStats> = if train.is_none() {
            self.bn_layers().map(|l| p.running_stats(l.stats)).collect()
        } else {
            Vec::new()
        };
        for (u, unit) in a.units.iter().enumerate() {
            if u > 0 {
                if let Some(m) = a.mixers.get(u - 1) {
                    let w = tape.param(p, m.w);
                    let b = tape.param(p, m.b);
                    x = tape.conv1x1(x, w, b)?;
                }
            }
            let mut h = x;
            let n = unit.convs.len();
            for (j, (cv, nl)) in unit.convs.iter().zip(&unit.norms).enumerate() {
                let w = weight(tape, p, cv)?;
                let b = tape.param(p, cv.b);
                h = tape.conv2d(h, w, b)?;
                let g = tape.param(p, nl.gamma);
                let be = tape.param(p, nl.beta);
                let mode = match train.as_deref_mut() {
                    Some(s) => BnMode::Train(&mut s.0[bn_index]),
                    None => BnMode::Eval(&eval_stats[bn_index]),
                };
                h = tape.batch_norm(h, g, be, mode)?;
                bn_index += 1;
                if j + 1 < n {
                    h = tape.relu(h);
                }
            }
            let sum = tape.add(x, h)?;
            x = tape.relu(sum);
        }
        tape.global_avg_pool(x)
    }

    /// Eval-mode predictions for a batch, `[B][outputs]`.
    pub fn predict(&self, patches: &[&Patch]) -> Result<Vec<Vec<f64>>> {
        let input = self.pack(patches)?;
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let y = self.graph(&mut tape, x, None)?;
        let out = self.config.outputs();
        Ok(tape.value(y).data().chunks(out).map(<[f64]>::to_vec).collect())
    }

    /// Train-mode forward without a gradient step: folds the batch statistics
    /// into the running statistics and returns the train-mode outputs.
    pub fn calibrate(&mut self, patches: &[&Patch]) -> Result<Vec<Vec<f64>>> {
        let input = self.pack(patches)?;
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let mut stats = self.train_stats();
        let y = self.graph(&mut tape, x, Some(&mut stats))?;
        self.commit_stats(stats);
        let out = self.config.outputs();
        Ok(tape.value(y).data().chunks(out).map(<[f64]>::to_vec).collect())
    }

    /// Sets every inter-unit 1x1 layer to the identity map.
    pub fn set_mixers_identity(&mut self) {
        let Some(a) = &self.airres else { return };
        let f = self.config.airres.feature_width;
        for m in a.mixers.clone() {
            let w = self.params.value_mut(m.w);
            w.iter_mut().enumerate().for_each(|(i, v)| *v = if i / f == i % f { 1.0 } else { 0.0 });
            self.params.value_mut(m.b).iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Zeroes every parameter inside the residual branches.
    pub fn zero_residual_branches(&mut self) {
        let Some(a) = &self.airres else { return };
        let ids: Vec<ParamId> = a
            .units
            .iter()
            .flat_map(|u| {
                u.convs
                    .iter()
                    .flat_map(|c| [c.w, c.b])
                    .chain(u.norms.iter().flat_map(|n| [n.gamma, n.beta]))
            })
            .collect();
        for id in ids {
            self.params.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Parameter names grouped by component, for reporting and gradient checks.
    pub fn parameter_groups(&self) -> Vec<(String, Vec<ParamId>)> {
        let mut groups = Vec::new();
        if let Some(a) = &self.airres {
            groups.push(("stem".to_string(), vec![a.stem.w, a.stem.b]));
            for (u, unit) in a.units.iter().enumerate() {
                let mut ids: Vec<ParamId> = unit.convs.iter().flat_map(|c| [c.w, c.b]).collect();
                ids.extend(unit.norms.iter().flat_map(|n| [n.gamma, n.beta]));
                groups.push((format!("unit{u}"), ids));
            }
            for (k, m) in a.mixers.iter().enumerate() {
                groups.push((format!("mix{}", k + 1), vec![m.w, m.b]));
            }
        }
        for (l, layer) in self.lstm.iter().enumerate() {
            let ids = layer.w.iter().chain(&layer.u).chain(&layer.b).copied().collect();
            groups.push((format!("lstm{l}"), ids));
        }
        groups.push(("head".to_string(), vec![self.head.w, self.head.b]));
        groups
    }
}
