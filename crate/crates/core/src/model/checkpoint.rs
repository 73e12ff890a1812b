//! Checkpoint directory: `manifest.toml` plus `params.bin`.
//!
//! `params.bin` holds, for each parameter in manifest order: name length (u64),
//! name bytes, rank (u64), dims (u64 each), then the values as little-endian f64.
//! All integers are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::DeepAirModel;
use crate::error::{Error, Result};
use crate::grid::{ChannelSchema, NormStats};
use crate::numerics::Rng;

/// A trained model with everything needed to apply it to new cubes.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: DeepAirModel,
    pub schema: ChannelSchema,
    pub norm: NormStats,
    /// Pollutant channel the model predicts.
    pub target: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    target: String,
    seed: u64,
    variant: String,
    schema_digest: String,
    model: ModelConfig,
    schema: ChannelSchema,
    norm: NormStats,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

impl Checkpoint {
    pub fn target_index(&self) -> Result<usize> {
        self.schema.require(&self.target)
    }

    /// Rejects a cube schema that differs from the one the model was trained on.
    pub fn check_schema(&self, schema: &ChannelSchema) -> Result<()> {
        if schema.digest() != self.schema.digest() {
            return Err(Error::invalid(format!(
                "channel schema {:?} does not match the checkpoint's {:?}",
                schema.names(),
                self.schema.names()
            )));
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = Manifest {
            format: crate::formats::CHECKPOINT.to_string(),
            target: self.target.clone(),
            seed: self.seed,
            variant: if self.model.config.is_forecast() { "forecast" } else { "estimation" }.to_string(),
            schema_digest: self.schema.digest(),
            model: self.model.config.clone(),
            schema: self.schema.clone(),
            norm: self.norm.clone(),
            params: self
                .model
                .params
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    trainable: p.trainable,
                })
                .collect(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::format(e.to_string()))?;
        std::fs::write(dir.join("manifest.toml"), text)?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(dir.join("params.bin"))?);
        for p in self.model.params.iter() {
            out.write_all(&(p.name.len() as u64).to_le_bytes())?;
            out.write_all(p.name.as_bytes())?;
            out.write_all(&(p.value.shape().len() as u64).to_le_bytes())?;
            for &d in p.value.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in p.value.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ctx = |m: String| Error::format(format!("{}: {m}", dir.display()));
        let text = std::fs::read_to_string(dir.join("manifest.toml"))?;
        let m: Manifest = toml::from_str(&text).map_err(|e| ctx(e.to_string()))?;
        if m.format != crate::formats::CHECKPOINT {
            return Err(ctx(format!("expected format {}, found {}", crate::formats::CHECKPOINT, m.format)));
        }
        m.schema.validate()?;
        if m.schema.digest() != m.schema_digest {
            return Err(ctx(format!(
                "schema digest {} does not match the stored channel list ({})",
                m.schema_digest,
                m.schema.digest()
            )));
        }
        m.norm.check(&m.schema)?;
        if m.model.input_channels != m.schema.len() {
            return Err(ctx("model input width differs from the schema".into()));
        }
        let mut model = DeepAirModel::new(m.model, &mut Rng::new(m.seed))?;
        if model.params.len() != m.params.len() {
            return Err(ctx(format!(
                "manifest lists {} parameters, the configured model has {}",
                m.params.len(),
                model.params.len()
            )));
        }
        let mut blob = std::io::BufReader::new(std::fs::File::open(dir.join("params.bin"))?);
        for entry in &m.params {
            let len = read_u64(&mut blob)? as usize;
            let mut name = vec![0u8; len];
            blob.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| ctx("parameter name is not UTF-8".into()))?;
            let rank = read_u64(&mut blob)? as usize;
            let shape = (0..rank).map(|_| read_u64(&mut blob).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if name != entry.name || shape != entry.shape {
                return Err(ctx(format!("blob entry {name:?} {shape:?} disagrees with manifest {:?}", entry.name)));
            }
            let id = model
                .params
                .find(&name)
                .ok_or_else(|| ctx(format!("unknown parameter {name:?}")))?;
            if model.params.get(id).value.shape() != shape.as_slice() {
                return Err(ctx(format!("parameter {name:?} has shape {shape:?}, model expects {:?}", model.params.get(id).value.shape())));
            }
            for v in model.params.value_mut(id) {
                let mut b = [0u8; 8];
                blob.read_exact(&mut b)?;
                *v = f64::from_le_bytes(b);
            }
        }
        let mut rest = Vec::new();
        blob.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(ctx(format!("{} trailing bytes in params.bin", rest.len())));
        }
        Ok(Checkpoint {
            model,
            schema: m.schema,
            norm: m.norm,
            target: m.target,
            seed: m.seed,
        })
    }
}
