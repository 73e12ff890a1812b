//! Sample keys, patch datasets and train/validation/test splits.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{extract_patch, GridCube, NormStats, Patch, StationRegistry, StationTruth};
use crate::numerics::Rng;

/// `(site, hour)`: a station id (or synthetic site label) and the last input hour.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub site: String,
    pub t: usize,
}

impl std::fmt::Display for SampleKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, t={})", self.site, self.t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub key: SampleKey,
    pub center: (usize, usize),
    /// One value (estimation) or `L` values for hours `t+1..=t+L`, physical units.
    pub target: Vec<f64>,
}

/// Keys `(station, t)` with a full input window and every target present in `truth`.
pub fn enumerate_samples(
    cube: &GridCube,
    registry: &StationRegistry,
    truth: &StationTruth,
    target: &str,
    window: usize,
    horizon: usize,
) -> Result<Vec<Sample>> {
    if window == 0 {
        return Err(Error::config("window must be at least 1"));
    }
    let mut out = Vec::new();
    for station in truth.stations(target) {
        let e = registry
            .get(station)
            .ok_or_else(|| Error::invalid(format!("truth station {station:?} missing from the registry")))?;
        let last = if horizon == 0 {
            cube.hours
        } else {
            cube.hours.saturating_sub(horizon)
        };
        for t in window.saturating_sub(1)..last {
            let hours: Vec<usize> = if horizon == 0 { vec![t] } else { (t + 1..=t + horizon).collect() };
            let values: Option<Vec<f64>> = hours.iter().map(|&h| truth.get(station, target, h)).collect();
            if let Some(target) = values {
                out.push(Sample {
                    key: SampleKey {
                        site: station.to_string(),
                        t,
                    },
                    center: (e.row, e.col),
                    target,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::invalid(format!(
            "no samples: {} hours cannot hold a {window}-hour window plus {horizon} target hours with recorded truth",
            cube.hours
        )));
    }
    Ok(out)
}

/// A normalized cube plus the samples drawn from it.
#[derive(Clone, Debug)]
pub struct PatchDataset {
    pub cube: GridCube,
    pub samples: Vec<Sample>,
    pub patch_size: usize,
    pub window: usize,
    /// `(mean, std)` mapping physical targets to network units.
    pub target_scale: (f64, f64),
}

impl PatchDataset {
    pub fn new(cube: GridCube, samples: Vec<Sample>, patch_size: usize, window: usize, target_scale: (f64, f64)) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("dataset has no samples"));
        }
        if !(target_scale.1 > 0.0) {
            return Err(Error::invalid("target scale must be positive"));
        }
        let outs = samples[0].target.len();
        if samples.iter().any(|s| s.target.len() != outs) {
            return Err(Error::invalid("samples disagree on target length"));
        }
        Ok(PatchDataset {
            cube,
            samples,
            patch_size,
            window,
            target_scale,
        })
    }

    /// Normalizes `cube` with `norm` and scales targets by the stats of `target`.
    pub fn from_grid(cube: &GridCube, norm: &NormStats, target: &str, samples: Vec<Sample>, patch_size: usize, window: usize) -> Result<Self> {
        let c = cube.schema.require(target)?;
        let normalized = norm.apply(cube)?;
        Self::new(normalized, samples, patch_size, window, (norm.mean[c], norm.std[c]))
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.samples[0].target.len()
    }

    pub fn patch(&self, i: usize) -> Result<Patch> {
        let s = &self.samples[i];
        extract_patch(&self.cube, s.center, self.patch_size, s.key.t, self.window)
    }

    pub fn normalized_target(&self, i: usize) -> Vec<f64> {
        let (m, sd) = self.target_scale;
        self.samples[i].target.iter().map(|v| (v - m) / sd).collect()
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.target_scale.1 + self.target_scale.0
    }

    /// Hours covered by the input windows of the given samples.
    pub fn window_hours(samples: &[Sample], indices: &[usize], window: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = indices
            .iter()
            .flat_map(|&i| {
                let t = samples[i].key.t;
                t + 1 - window..=t
            })
            .collect();
        set.into_iter().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    /// Seeded shuffle of all keys.
    Random,
    /// Keys ordered by hour: earliest for training, latest for test.
    Contiguous,
}

pub const SPLIT_FRACTIONS: (f64, f64) = (0.8, 0.1);

/// Indices into a sample list.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub mode: SplitMode,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn new(samples: &[Sample], mode: SplitMode, seed: u64) -> Self {
        let n = samples.len();
        let mut order: Vec<usize> = (0..n).collect();
        match mode {
            SplitMode::Random => Rng::new(seed).fork(2).shuffle(&mut order),
            SplitMode::Contiguous => order.sort_by(|&a, &b| {
                (samples[a].key.t, &samples[a].key.site).cmp(&(samples[b].key.t, &samples[b].key.site))
            }),
        }
        let n_train = (n as f64 * SPLIT_FRACTIONS.0).round() as usize;
        let n_val = ((n as f64 * SPLIT_FRACTIONS.1).round() as usize).min(n - n_train);
        let mut train = order[..n_train].to_vec();
        let mut val = order[n_train..n_train + n_val].to_vec();
        let mut test = order[n_train + n_val..].to_vec();
        if mode == SplitMode::Random {
            train.sort_unstable();
            val.sort_unstable();
            test.sort_unstable();
        }
        DatasetSplit {
            train,
            val,
            test,
            mode,
            seed,
        }
    }

    /// Everything in training, nothing held out.
    pub fn all_train(n: usize) -> Self {
        DatasetSplit {
            train: (0..n).collect(),
            val: Vec::new(),
            test: Vec::new(),
            mode: SplitMode::Random,
            seed: 0,
        }
    }

    pub fn write(&self, path: &Path, samples: &[Sample]) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# {}", crate::formats::SPLIT)?;
        let mode = match self.mode {
            SplitMode::Random => "random",
            SplitMode::Contiguous => "contiguous",
        };
        writeln!(out, "# mode={mode} seed={}", self.seed)?;
        writeln!(out, "set,site,t")?;
        for (name, idx) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for &i in idx {
                writeln!(out, "{name},{},{}", samples[i].key.site, samples[i].key.t)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a split file and maps its keys back to indices of `samples`.
    pub fn read(path: &Path, samples: &[Sample]) -> Result<Self> {
        let lookup: std::collections::HashMap<&SampleKey, usize> =
            samples.iter().enumerate().map(|(i, s)| (&s.key, i)).collect();
        let mut split = DatasetSplit {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            mode: SplitMode::Random,
            seed: 0,
        };
        let file = std::fs::File::open(path)?;
        for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let perr = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            let l = line.trim();
            if let Some(rest) = l.strip_prefix("# mode=") {
                let (mode, seed) = rest.split_once(" seed=").ok_or_else(|| perr("malformed header".into()))?;
                split.mode = match mode {
                    "random" => SplitMode::Random,
                    "contiguous" => SplitMode::Contiguous,
                    m => return Err(perr(format!("unknown split mode {m:?}"))),
                };
                split.seed = seed.parse().map_err(|_| perr("bad seed".into()))?;
                continue;
            }
            if l.is_empty() || l.starts_with('#') || l.starts_with("set,") {
                continue;
            }
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 {
                return Err(perr(format!("expected 3 fields, found {}", f.len())));
            }
            let key = SampleKey {
                site: f[1].to_string(),
                t: f[2].parse().map_err(|_| perr(format!("bad hour {:?}", f[2])))?,
            };
            let i = *lookup
                .get(&key)
                .ok_or_else(|| perr(format!("key {key} is not a sample of this dataset")))?;
            match f[0] {
                "train" => split.train.push(i),
                "val" => split.val.push(i),
                "test" => split.test.push(i),
                s => return Err(perr(format!("unknown set {s:?}"))),
            }
        }
        Ok(split)
    }
}
