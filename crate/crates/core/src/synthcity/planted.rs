//! Oracle datasets with a known target function of the input patch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{parse_timestamp, Channel, ChannelGroup, ChannelSchema, GridCube, GridSpec, Variant};
use crate::numerics::Rng;
use crate::training::{PatchDataset, Sample, SampleKey};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub rows: usize,
    pub cols: usize,
    pub hours: usize,
    pub patch_size: usize,
    pub window: usize,
    pub samples: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            rows: 12,
            cols: 12,
            hours: 400,
            patch_size: 9,
            window: 8,
            samples: 600,
            noise_std: 0.0,
            seed: 1,
        }
    }
}

impl PlantedConfig {
    fn validate(&self) -> Result<()> {
        if self.patch_size % 2 == 0 || self.patch_size > self.rows.min(self.cols) {
            return Err(Error::config(format!(
                "patch_size {} must be odd and fit inside the {}x{} grid",
                self.patch_size, self.rows, self.cols
            )));
        }
        if self.window == 0 || self.window > self.hours {
            return Err(Error::config("window must lie in 1..=hours"));
        }
        if self.samples == 0 {
            return Err(Error::config("samples must be at least 1"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("noise_std must be non-negative"));
        }
        Ok(())
    }
}

/// A planted cube with samples whose targets are a known function of the patch.
#[derive(Clone, Debug)]
pub struct PlantedData {
    pub cube: GridCube,
    pub samples: Vec<Sample>,
    /// Targets before noise.
    pub clean: Vec<f64>,
    pub patch_size: usize,
    pub window: usize,
}

impl PlantedData {
    /// Dataset with targets standardized by their own mean and spread.
    pub fn dataset(&self) -> Result<PatchDataset> {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().map(|s| s.target[0]).sum::<f64>() / n;
        let var = self.samples.iter().map(|s| (s.target[0] - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() < 1e-9 { 1.0 } else { var.sqrt() };
        PatchDataset::new(self.cube.clone(), self.samples.clone(), self.patch_size, self.window, (mean, std))
    }
}

fn planted_schema(channels: usize) -> Result<ChannelSchema> {
    let mut ch = vec![Channel::new("ch0", ChannelGroup::Pollutant, "unit", false)];
    for c in 1..channels {
        ch.push(Channel::new(&format!("ch{c}"), ChannelGroup::Meteorology, "unit", false));
    }
    ChannelSchema::new(ch)
}

fn iid_cube(cfg: &PlantedConfig, channels: usize, rng: &mut Rng) -> Result<GridCube> {
    let spec = GridSpec::new(cfg.rows, cfg.cols);
    let start = parse_timestamp("2020-01-01T00:00:00")?;
    let mut cube = GridCube::missing(spec, planted_schema(channels)?, start, cfg.hours, Variant::Truth);
    for v in cube.values.iter_mut() {
        *v = rng.normal(0.0, 1.0);
    }
    cube.imputed.iter_mut().for_each(|m| *m = false);
    Ok(cube)
}

/// Interior centres and final hours for each sample.
fn draw_keys(cfg: &PlantedConfig, rng: &mut Rng) -> Vec<((usize, usize), usize)> {
    let h = cfg.patch_size / 2;
    (0..cfg.samples)
        .map(|_| {
            let r = h + rng.below(cfg.rows - 2 * h);
            let c = h + rng.below(cfg.cols - 2 * h);
            let t = cfg.window - 1 + rng.below(cfg.hours - cfg.window + 1);
            ((r, c), t)
        })
        .collect()
}

/// Mean over the `N x N` window at hour `t` of `f(values per channel)`.
fn patch_mean(cube: &GridCube, center: (usize, usize), n: usize, t: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = n / 2;
    let mut vals = vec![0.0; cube.channels()];
    let mut s = 0.0;
    for r in center.0 - h..=center.0 + h {
        for c in center.1 - h..=center.1 + h {
            for (k, v) in vals.iter_mut().enumerate() {
                *v = cube.get(t, k, r, c);
            }
            s += f(&vals);
        }
    }
    s / (n * n) as f64
}

fn assemble(cfg: &PlantedConfig, cube: GridCube, rng: &mut Rng, target: impl Fn(&GridCube, (usize, usize), usize) -> f64) -> PlantedData {
    let keys = draw_keys(cfg, rng);
    let mut noise = Rng::new(cfg.seed).fork(22);
    let mut samples = Vec::with_capacity(keys.len());
    let mut clean = Vec::with_capacity(keys.len());
    for (k, (center, t)) in keys.into_iter().enumerate() {
        let y = target(&cube, center, t);
        let eps = if cfg.noise_std > 0.0 { noise.normal(0.0, cfg.noise_std) } else { 0.0 };
        clean.push(y);
        samples.push(Sample {
            key: SampleKey {
                site: format!("p{k:05}"),
                t,
            },
            center,
            target: vec![y + eps],
        });
    }
    PlantedData {
        cube,
        samples,
        clean,
        patch_size: cfg.patch_size,
        window: cfg.window,
    }
}

/// Two iid zero-mean channels; target = patch mean of `ch0 * ch1` at the final frame.
pub fn planted_interaction_dataset(cfg: &PlantedConfig) -> Result<PlantedData> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed).fork(20);
    let cube = iid_cube(cfg, 2, &mut rng)?;
    let n = cfg.patch_size;
    Ok(assemble(cfg, cube, &mut rng, |c, center, t| patch_mean(c, center, n, t, |v| v[0] * v[1])))
}

/// iid channels; target = sum of `coeffs[c]` times the patch mean of channel `c`
/// at the final frame.
pub fn planted_linear_dataset(cfg: &PlantedConfig, coeffs: &[f64]) -> Result<PlantedData> {
    cfg.validate()?;
    if coeffs.is_empty() {
        return Err(Error::config("at least one coefficient is required"));
    }
    let mut rng = Rng::new(cfg.seed).fork(21);
    let cube = iid_cube(cfg, coeffs.len(), &mut rng)?;
    let n = cfg.patch_size;
    let coeffs = coeffs.to_vec();
    Ok(assemble(cfg, cube, &mut rng, move |c, center, t| {
        patch_mean(c, center, n, t, |v| v.iter().zip(&coeffs).map(|(x, w)| x * w).sum())
    }))
}
