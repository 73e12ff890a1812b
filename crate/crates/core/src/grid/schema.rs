//! Grid geometry, channel inventory and the station registry.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_size_km: f64,
    /// Latitude / longitude of the north-west corner of cell (0, 0).
    pub origin: (f64, f64),
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Self {
        GridSpec {
            rows,
            cols,
            cell_size_km: 1.0,
            origin: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::config(format!(
                "grid must have at least one cell, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.cell_size_km > 0.0) {
            return Err(Error::config("cell_size_km must be positive"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.rows && col < self.cols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelGroup {
    Pollutant,
    Meteorology,
    Traffic,
    Morphology,
    Time,
}

impl ChannelGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelGroup::Pollutant => "pollutant",
            ChannelGroup::Meteorology => "meteorology",
            ChannelGroup::Traffic => "traffic",
            ChannelGroup::Morphology => "morphology",
            ChannelGroup::Time => "time",
        }
    }

    /// Groups that are filled by spatial interpolation.
    pub fn is_interpolated(self) -> bool {
        matches!(self, ChannelGroup::Pollutant | ChannelGroup::Meteorology)
    }
}

impl fmt::Display for ChannelGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pollutant" => ChannelGroup::Pollutant,
            "meteorology" => ChannelGroup::Meteorology,
            "traffic" => ChannelGroup::Traffic,
            "morphology" => ChannelGroup::Morphology,
            "time" => ChannelGroup::Time,
            other => return Err(Error::invalid(format!("unknown channel group {other:?}"))),
        })
    }
}

/// Units string marking a 0/1 indicator channel, which is never rescaled.
pub const INDICATOR_UNITS: &str = "indicator";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub group: ChannelGroup,
    pub units: String,
    #[serde(rename = "static")]
    pub is_static: bool,
}

impl Channel {
    pub fn new(name: &str, group: ChannelGroup, units: &str, is_static: bool) -> Self {
        Channel {
            name: name.to_string(),
            group,
            units: units.to_string(),
            is_static,
        }
    }

    pub fn is_indicator(&self) -> bool {
        self.units == INDICATOR_UNITS
    }
}

pub const SEASON_CHANNEL: &str = "season";
pub const WORKDAY_CHANNEL: &str = "workday";

/// Ordered channel list: pollutants first, time labels (if any) last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub channels: Vec<Channel>,
}

impl ChannelSchema {
    pub fn new(channels: Vec<Channel>) -> Result<Self> {
        let s = ChannelSchema { channels };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.channels {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::invalid(format!("duplicate channel name {:?}", c.name)));
            }
            if c.name.is_empty() || c.name.contains([',', ';']) || c.name.contains(char::is_whitespace) {
                return Err(Error::invalid(format!("illegal channel name {:?}", c.name)));
            }
        }
        if !self.channels.iter().any(|c| c.group == ChannelGroup::Pollutant) {
            return Err(Error::invalid("schema needs at least one pollutant channel"));
        }
        let first_other = self
            .channels
            .iter()
            .position(|c| c.group != ChannelGroup::Pollutant)
            .unwrap_or(self.channels.len());
        if self.channels[first_other..]
            .iter()
            .any(|c| c.group == ChannelGroup::Pollutant)
        {
            return Err(Error::invalid("pollutant channels must come first"));
        }
        let n_time = self.channels.iter().filter(|c| c.group == ChannelGroup::Time).count();
        if n_time != 0 {
            let tail = &self.channels[self.channels.len().saturating_sub(2)..];
            if n_time != 2 || tail.iter().any(|c| c.group != ChannelGroup::Time) {
                return Err(Error::invalid(
                    "time labels must be exactly two channels placed last",
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::invalid(format!("unknown channel {name:?}")))
    }

    pub fn names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn pollutants(&self) -> impl Iterator<Item = (usize, &Channel)> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, c)| c.group == ChannelGroup::Pollutant)
    }

    pub fn has_time_channels(&self) -> bool {
        self.channels.iter().any(|c| c.group == ChannelGroup::Time)
    }

    /// Copy of the schema with `season` and `workday` appended.
    pub fn with_time_channels(&self) -> Result<Self> {
        if self.has_time_channels() {
            return Err(Error::invalid("schema already carries time channels"));
        }
        let mut channels = self.channels.clone();
        channels.push(Channel::new(SEASON_CHANNEL, ChannelGroup::Time, "label", false));
        channels.push(Channel::new(WORKDAY_CHANNEL, ChannelGroup::Time, "label", false));
        ChannelSchema::new(channels)
    }

    /// Stable FNV-1a digest of names, groups and units; checkpoints use it to
    /// refuse data with a different channel layout.
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for c in &self.channels {
            for part in [c.name.as_str(), c.group.as_str(), c.units.as_str(), if c.is_static { "s" } else { "d" }] {
                for b in part.bytes().chain(std::iter::once(0u8)) {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        format!("{h:016x}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationEntry {
    pub row: usize,
    pub col: usize,
    pub channels: BTreeSet<String>,
}

/// Observation sources (monitoring stations, road segments, ...) and the
/// cell each one reports into. Iteration order is by id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StationRegistry {
    entries: BTreeMap<String, StationEntry>,
}

impl StationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: &str, row: usize, col: usize, channels: &[&str]) -> Result<()> {
        if id.is_empty() || id.contains(',') {
            return Err(Error::invalid(format!("illegal station id {id:?}")));
        }
        if self.entries.contains_key(id) {
            return Err(Error::invalid(format!("station {id:?} registered twice")));
        }
        self.entries.insert(
            id.to_string(),
            StationEntry {
                row,
                col,
                channels: channels.iter().map(|s| s.to_string()).collect(),
            },
        );
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&StationEntry> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &StationEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self, spec: &GridSpec, schema: &ChannelSchema) -> Result<()> {
        for (id, e) in &self.entries {
            if !spec.contains(e.row, e.col) {
                return Err(Error::invalid(format!(
                    "station {id:?} at ({}, {}) lies outside the {}x{} grid",
                    e.row, e.col, spec.rows, spec.cols
                )));
            }
            for ch in &e.channels {
                if schema.index_of(ch).is_none() {
                    return Err(Error::invalid(format!(
                        "station {id:?} lists unknown channel {ch:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ids reporting at least one pollutant channel, in id order.
    pub fn pollutant_stations(&self, schema: &ChannelSchema) -> Vec<&str> {
        self.iter()
            .filter(|(_, e)| {
                e.channels.iter().any(|c| {
                    schema
                        .index_of(c)
                        .is_some_and(|i| schema.channels[i].group == ChannelGroup::Pollutant)
                })
            })
            .map(|(id, _)| id)
            .collect()
    }

    /// Ids reporting the given channel, in id order.
    pub fn reporting(&self, channel: &str) -> Vec<&str> {
        self.iter()
            .filter(|(_, e)| e.channels.contains(channel))
            .map(|(id, _)| id)
            .collect()
    }

    /// Delimited text: `station_id,row,col,channel;channel;...`.
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut reg = StationRegistry::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("station_id,") {
                continue;
            }
            let perr = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let f: Vec<&str> = t.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(perr(format!("expected 4 fields, found {}", f.len())));
            }
            let row = f[1].parse().map_err(|_| perr(format!("bad row {:?}", f[1])))?;
            let col = f[2].parse().map_err(|_| perr(format!("bad col {:?}", f[2])))?;
            let chans: Vec<&str> = f[3].split(';').map(str::trim).filter(|s| !s.is_empty()).collect();
            reg.insert(f[0], row, col, &chans).map_err(|e| perr(e.to_string()))?;
        }
        Ok(reg)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# {}", crate::formats::REGISTRY)?;
        writeln!(out, "station_id,row,col,channels")?;
        for (id, e) in &self.entries {
            let chans: Vec<&str> = e.channels.iter().map(String::as_str).collect();
            writeln!(out, "{id},{},{},{}", e.row, e.col, chans.join(";"))?;
        }
        out.flush()?;
        Ok(())
    }
}
