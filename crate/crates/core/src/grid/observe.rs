//! Point observations and their placement onto the grid.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::cube::{GridCube, Variant};
use super::schema::{ChannelGroup, ChannelSchema, GridSpec, StationRegistry};
use super::time::{floor_to_hour, format_timestamp, parse_timestamp, Timestamp};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub source: String,
    pub time: Timestamp,
    pub channel: String,
    pub value: f64,
}

impl Observation {
    pub fn new(source: &str, time: Timestamp, channel: &str, value: f64) -> Self {
        Observation {
            source: source.to_string(),
            time,
            channel: channel.to_string(),
            value,
        }
    }
}

/// Delimited text, one `source_id,timestamp,channel,value` record per line.
pub fn read_observations(path: &Path) -> Result<Vec<Observation>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
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
        let time = parse_timestamp(f[1]).map_err(|e| perr(e.to_string()))?;
        let value: f64 = f[3].parse().map_err(|_| perr(format!("bad value {:?}", f[3])))?;
        if !value.is_finite() {
            return Err(perr(format!("non-finite value {:?}", f[3])));
        }
        out.push(Observation::new(f[0], time, f[2], value));
    }
    Ok(out)
}

pub fn write_observations(path: &Path, obs: &[Observation]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# {}", crate::formats::OBSERVATIONS)?;
    writeln!(out, "station_id,time,channel,value")?;
    for o in obs {
        writeln!(
            out,
            "{},{},{},{}",
            o.source,
            format_timestamp(&o.time),
            o.channel,
            o.value
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Running sum / count per `(source, channel, hour)`; static channels use hour `None`.
#[derive(Clone, Debug, Default)]
pub struct HourlyReadings {
    pub(crate) cells: BTreeMap<(String, usize, Option<usize>), (f64, usize)>,
}

impl HourlyReadings {
    /// Mean of one source's readings for a channel and hour.
    pub fn mean(&self, source: &str, channel: usize, hour: usize) -> Option<f64> {
        self.cells
            .get(&(source.to_string(), channel, Some(hour)))
            .map(|(s, n)| s / *n as f64)
    }
}

/// Validates observations and groups them into hourly sums.
pub fn aggregate(
    obs: &[Observation],
    schema: &ChannelSchema,
    registry: &StationRegistry,
    start: Timestamp,
    hours: usize,
) -> Result<HourlyReadings> {
    let mut agg = HourlyReadings::default();
    for o in obs {
        let c = schema.index_of(&o.channel).ok_or_else(|| {
            Error::invalid(format!(
                "observation from {:?} references unknown channel {:?}",
                o.source, o.channel
            ))
        })?;
        let ch = &schema.channels[c];
        if ch.group == ChannelGroup::Time {
            return Err(Error::invalid(format!(
                "time label {:?} cannot be observed directly (source {:?})",
                ch.name, o.source
            )));
        }
        if registry.get(&o.source).is_none() {
            return Err(Error::invalid(format!(
                "observation source {:?} has no registered grid location",
                o.source
            )));
        }
        let hour = if ch.is_static {
            None
        } else {
            let h = (floor_to_hour(o.time) - start).num_hours();
            if floor_to_hour(o.time) < start || h as usize >= hours {
                return Err(Error::invalid(format!(
                    "observation from {:?} at {} lies outside the {hours}-hour period",
                    o.source,
                    format_timestamp(&o.time)
                )));
            }
            Some(h as usize)
        };
        let e = agg.cells.entry((o.source.clone(), c, hour)).or_insert((0.0, 0));
        e.0 += o.value;
        e.1 += 1;
    }
    Ok(agg)
}

/// Places hourly-averaged observations at their cells. Unobserved cells hold
/// the missing sentinel (NaN); static channels are replicated over all hours.
pub fn rasterize(
    obs: &[Observation],
    spec: &GridSpec,
    schema: &ChannelSchema,
    registry: &StationRegistry,
    start: Timestamp,
    hours: usize,
) -> Result<GridCube> {
    let agg = aggregate(obs, schema, registry, start, hours)?;
    rasterize_aggregated(&agg, spec, schema, registry, start, hours, |_, _| true)
}

/// Rasterizes pre-aggregated readings, keeping only `(source, channel)` pairs
/// accepted by `keep`.
pub(crate) fn rasterize_aggregated(
    agg: &HourlyReadings,
    spec: &GridSpec,
    schema: &ChannelSchema,
    registry: &StationRegistry,
    start: Timestamp,
    hours: usize,
    keep: impl Fn(&str, usize) -> bool,
) -> Result<GridCube> {
    spec.validate()?;
    let mut cube = GridCube::missing(spec.clone(), schema.clone(), start, hours, Variant::Forecast);
    // cell sums and counts, so several sources in one cell average together
    let n = cube.values.len();
    let mut sum = vec![0.0; n];
    let mut cnt = vec![0usize; n];
    for ((source, c, hour), (s, k)) in &agg.cells {
        if !keep(source, *c) {
            continue;
        }
        let e = registry.get(source).expect("validated during aggregation");
        if !spec.contains(e.row, e.col) {
            return Err(Error::invalid(format!(
                "source {source:?} at ({}, {}) lies outside the grid",
                e.row, e.col
            )));
        }
        let ts: Vec<usize> = match hour {
            Some(t) => vec![*t],
            None => (0..hours).collect(),
        };
        for t in ts {
            let i = cube.index(t, *c, e.row, e.col);
            sum[i] += s;
            cnt[i] += k;
        }
    }
    for i in 0..n {
        if cnt[i] > 0 {
            cube.values[i] = sum[i] / cnt[i] as f64;
        }
    }
    Ok(cube)
}
