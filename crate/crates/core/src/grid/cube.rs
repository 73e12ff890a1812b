//! Time-ordered stack of multi-channel city rasters.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::schema::{ChannelSchema, GridSpec};
use super::time::{add_hours, format_timestamp, parse_timestamp, Timestamp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Station pollutant values rebuilt from the other stations only.
    Estimation,
    /// Station pollutant values kept as observed.
    Forecast,
    /// Fully known field (synthetic ground truth).
    Truth,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Estimation => "estimation",
            Variant::Forecast => "forecast",
            Variant::Truth => "truth",
        }
    }
}

/// `T x C x H x W` values in t-major, then channel, row, col order.
/// Missing values are NaN until both interpolation stages have run.
#[derive(Clone, Debug, PartialEq)]
pub struct GridCube {
    pub spec: GridSpec,
    pub schema: ChannelSchema,
    pub start_time: Timestamp,
    pub hours: usize,
    pub values: Vec<f64>,
    pub imputed: Vec<bool>,
    pub variant: Variant,
}

impl GridCube {
    pub fn missing(
        spec: GridSpec,
        schema: ChannelSchema,
        start_time: Timestamp,
        hours: usize,
        variant: Variant,
    ) -> Self {
        let n = hours * schema.len() * spec.cells();
        GridCube {
            spec,
            schema,
            start_time,
            hours,
            values: vec![f64::NAN; n],
            imputed: vec![false; n],
            variant,
        }
    }

    pub fn channels(&self) -> usize {
        self.schema.len()
    }

    pub fn rows(&self) -> usize {
        self.spec.rows
    }

    pub fn cols(&self) -> usize {
        self.spec.cols
    }

    #[inline]
    pub fn index(&self, t: usize, c: usize, row: usize, col: usize) -> usize {
        ((t * self.schema.len() + c) * self.spec.rows + row) * self.spec.cols + col
    }

    #[inline]
    pub fn get(&self, t: usize, c: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(t, c, row, col)]
    }

    pub fn set(&mut self, t: usize, c: usize, row: usize, col: usize, v: f64) {
        let i = self.index(t, c, row, col);
        self.values[i] = v;
    }

    /// The `H x W` plane of one channel at one hour.
    pub fn plane(&self, t: usize, c: usize) -> &[f64] {
        let n = self.spec.cells();
        let off = self.index(t, c, 0, 0);
        &self.values[off..off + n]
    }

    pub fn plane_mut(&mut self, t: usize, c: usize) -> &mut [f64] {
        let n = self.spec.cells();
        let off = self.index(t, c, 0, 0);
        &mut self.values[off..off + n]
    }

    pub fn timestamp(&self, t: usize) -> Timestamp {
        add_hours(self.start_time, t as i64)
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    /// Writes `manifest.toml`, `values.f64le` and `imputed.bits` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = CubeManifest {
            format: crate::formats::CUBE.to_string(),
            variant: self.variant,
            start_time: format_timestamp(&self.start_time),
            hours: self.hours,
            spec: self.spec.clone(),
            channels: self.schema.channels.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::format(e.to_string()))?;
        std::fs::write(dir.join("manifest.toml"), text)?;

        let mut blob = std::io::BufWriter::new(std::fs::File::create(dir.join("values.f64le"))?);
        for v in &self.values {
            blob.write_all(&v.to_le_bytes())?;
        }
        blob.flush()?;

        let mut bits = vec![0u8; self.imputed.len().div_ceil(8)];
        for (i, &m) in self.imputed.iter().enumerate() {
            if m {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        std::fs::write(dir.join("imputed.bits"), bits)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("manifest.toml"))?;
        let m: CubeManifest = toml::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", dir.display())))?;
        if m.format != crate::formats::CUBE {
            return Err(Error::format(format!(
                "{}: expected format {}, found {}",
                dir.display(),
                crate::formats::CUBE,
                m.format
            )));
        }
        m.spec.validate()?;
        let schema = ChannelSchema::new(m.channels)?;
        let n = m.hours * schema.len() * m.spec.cells();
        let mut raw = Vec::with_capacity(n * 8);
        std::fs::File::open(dir.join("values.f64le"))?.read_to_end(&mut raw)?;
        if raw.len() != n * 8 {
            return Err(Error::format(format!(
                "{}: value blob holds {} bytes, expected {}",
                dir.display(),
                raw.len(),
                n * 8
            )));
        }
        let values = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let bits = std::fs::read(dir.join("imputed.bits"))?;
        if bits.len() != n.div_ceil(8) {
            return Err(Error::format(format!("{}: imputed mask has wrong length", dir.display())));
        }
        let imputed = (0..n).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();
        Ok(GridCube {
            spec: m.spec,
            schema,
            start_time: parse_timestamp(&m.start_time)?,
            hours: m.hours,
            values,
            imputed,
            variant: m.variant,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CubeManifest {
    format: String,
    variant: Variant,
    start_time: String,
    hours: usize,
    spec: GridSpec,
    channels: Vec<super::schema::Channel>,
}
