use serde::{Deserialize, Serialize};

use super::cube::GridCube;
use super::schema::{ChannelGroup, ChannelSchema};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-9;

/// Per-channel affine scaling. Pass-through channels carry mean 0 and std 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub channels: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn passes_through(schema: &ChannelSchema, c: usize) -> bool {
    let ch = &schema.channels[c];
    ch.group == ChannelGroup::Time || ch.is_indicator()
}

impl NormStats {
    /// Fits on the listed hours only.
    pub fn fit(cube: &GridCube, hours: &[usize]) -> Result<Self> {
        if hours.is_empty() {
            return Err(Error::invalid("cannot fit normalization on zero hours"));
        }
        let n = cube.spec.cells();
        let mut mean = Vec::with_capacity(cube.channels());
        let mut std = Vec::with_capacity(cube.channels());
        for c in 0..cube.channels() {
            if passes_through(&cube.schema, c) {
                mean.push(0.0);
                std.push(1.0);
                continue;
            }
            let mut sum = 0.0;
            for &t in hours {
                sum += cube.plane(t, c).iter().sum::<f64>();
            }
            let count = (hours.len() * n) as f64;
            let m = sum / count;
            let mut ss = 0.0;
            for &t in hours {
                ss += cube.plane(t, c).iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
            let s = (ss / count).sqrt();
            if !m.is_finite() || !s.is_finite() {
                return Err(Error::Numeric(format!(
                    "channel {:?} has non-finite values in the fitting hours",
                    cube.schema.channels[c].name
                )));
            }
            mean.push(m);
            std.push(if s < STD_FLOOR { 1.0 } else { s });
        }
        Ok(NormStats {
            channels: cube.schema.names().iter().map(|s| s.to_string()).collect(),
            mean,
            std,
        })
    }

    pub fn check(&self, schema: &ChannelSchema) -> Result<()> {
        let names: Vec<&str> = schema.names();
        if names.len() != self.channels.len() || names.iter().zip(&self.channels).any(|(a, b)| a != b) {
            return Err(Error::invalid(format!(
                "normalization stats cover channels {:?}, cube has {:?}",
                self.channels, names
            )));
        }
        Ok(())
    }

    pub fn apply(&self, cube: &GridCube) -> Result<GridCube> {
        self.check(&cube.schema)?;
        let mut out = cube.clone();
        for t in 0..cube.hours {
            for c in 0..cube.channels() {
                let (m, s) = (self.mean[c], self.std[c]);
                if m == 0.0 && s == 1.0 {
                    continue;
                }
                out.plane_mut(t, c).iter_mut().for_each(|v| *v = (*v - m) / s);
            }
        }
        Ok(out)
    }

    pub fn normalize_value(&self, channel: usize, v: f64) -> f64 {
        (v - self.mean[channel]) / self.std[channel]
    }

    pub fn denormalize_value(&self, channel: usize, z: f64) -> f64 {
        z * self.std[channel] + self.mean[channel]
    }
}
