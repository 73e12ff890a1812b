//! Gradient saliency: dataset-averaged absolute input gradients per channel.
//!
//! Gradients are taken with respect to the model's (normalized) input.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ChannelGroup, Patch};
use crate::model::{Architecture, DeepAirModel};
use crate::numerics::{Rng, Tape, Tensor};
use crate::training::PatchDataset;

/// Gradient of the (mean over outputs) eval-mode prediction with respect to
/// every value of `patch`, shaped `[W, C, N, N]`. For the centre-only LSTM
/// baseline every off-centre entry is zero.
pub fn input_gradient(model: &DeepAirModel, patch: &Patch) -> Result<Tensor> {
    let input = model.pack(&[patch])?;
    let mut tape = Tape::new();
    let x = tape.leaf(input, true);
    let y = model.graph(&mut tape, x, None)?;
    let target = tape.mean(y);
    let grads = tape.backward(target)?;
    let g = grads.get(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; tape.value(x).len()]);
    let (w, c, n) = (patch.window, patch.channels, patch.size);
    match model.config.architecture {
        Architecture::DeepAir => Tensor::new(vec![w, c, n, n], g),
        Architecture::Lstm => {
            let mut full = vec![0.0; w * c * n * n];
            let mid = n / 2;
            for t in 0..w {
                for ch in 0..c {
                    full[((t * c + ch) * n + mid) * n + mid] = g[t * c + ch];
                }
            }
            Tensor::new(vec![w, c, n, n], full)
        }
    }
}

/// Mean absolute gradient per channel over all `W*N*N` positions.
pub fn channel_means(grad: &Tensor) -> Vec<f64> {
    let s = grad.shape();
    let (w, c, area) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![0.0; c];
    for t in 0..w {
        for (ch, o) in out.iter_mut().enumerate() {
            let start = (t * c + ch) * area;
            *o += grad.data()[start..start + area].iter().map(|v| v.abs()).sum::<f64>();
        }
    }
    out.iter_mut().for_each(|o| *o /= (w * area) as f64);
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelScore {
    pub channel: String,
    pub group: ChannelGroup,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyScores {
    /// In input-channel order.
    pub channels: Vec<ChannelScore>,
    pub samples: usize,
}

impl SaliencyScores {
    /// Summed channel scores per group, in group order, for present groups.
    pub fn group_totals(&self) -> Vec<(ChannelGroup, f64)> {
        let mut out: Vec<(ChannelGroup, f64)> = Vec::new();
        for s in &self.channels {
            match out.iter_mut().find(|(g, _)| *g == s.group) {
                Some((_, total)) => *total += s.score,
                None => out.push((s.group, s.score)),
            }
        }
        out.sort_by_key(|(g, _)| *g);
        out
    }

    pub fn score(&self, channel: &str) -> Option<f64> {
        self.channels.iter().find(|s| s.channel == channel).map(|s| s.score)
    }

    /// `channel,group,score,normalized` lines (normalized = score / max score),
    /// then a `group,total` block.
    pub fn to_text(&self) -> String {
        let max = self.channels.iter().map(|s| s.score).fold(0.0, f64::max);
        let mut s = format!(
            "# {}\n# samples={}\nchannel,group,score,normalized\n",
            crate::formats::SALIENCY,
            self.samples
        );
        for c in &self.channels {
            let norm = if max > 0.0 { c.score / max } else { 0.0 };
            s += &format!("{},{},{},{norm}\n", c.channel, c.group, c.score);
        }
        s += "group,total\n";
        for (g, t) in self.group_totals() {
            s += &format!("{g},{t}\n");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }
}

/// Averages [`channel_means`] of the input gradient over the samples at
/// `indices` of `data`.
pub fn saliency_scores(model: &DeepAirModel, data: &PatchDataset, indices: &[usize]) -> Result<SaliencyScores> {
    if indices.is_empty() {
        return Err(Error::invalid("saliency needs at least one sample"));
    }
    let schema = &data.cube.schema;
    if schema.len() != model.config.input_channels {
        return Err(Error::shape(format!(
            "dataset has {} channels, model expects {}",
            schema.len(),
            model.config.input_channels
        )));
    }
    let mut total = vec![0.0; schema.len()];
    for &i in indices {
        let g = input_gradient(model, &data.patch(i)?)?;
        for (t, v) in total.iter_mut().zip(channel_means(&g)) {
            *t += v;
        }
    }
    let n = indices.len() as f64;
    Ok(SaliencyScores {
        channels: schema
            .channels
            .iter()
            .zip(total)
            .map(|(c, t)| ChannelScore {
                channel: c.name.clone(),
                group: c.group,
                score: t / n,
            })
            .collect(),
        samples: indices.len(),
    })
}

/// Seeded subsample of at most `k` indices, kept in their original order.
pub fn subsample(indices: &[usize], k: usize, seed: u64) -> Vec<usize> {
    if k >= indices.len() {
        return indices.to_vec();
    }
    let mut pos: Vec<usize> = (0..indices.len()).collect();
    Rng::new(seed).fork(4).shuffle(&mut pos);
    pos.truncate(k);
    pos.sort_unstable();
    pos.into_iter().map(|p| indices[p]).collect()
}
