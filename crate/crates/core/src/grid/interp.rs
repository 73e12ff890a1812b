//! Two-stage gap filling: linear in time per cell, then inverse-distance-squared
//! weighting in space for pollutant and meteorology channels.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use super::cube::{GridCube, Variant};
use super::observe::{aggregate, rasterize_aggregated, HourlyReadings, Observation};
use super::schema::{ChannelGroup, ChannelSchema, GridSpec, StationRegistry, SEASON_CHANNEL, WORKDAY_CHANNEL};
use super::time::{add_hours, format_timestamp, parse_timestamp, Calendar, Timestamp};
use crate::error::{Error, Result};

pub const IDW_POWER: f64 = 2.0;

/// Fills NaN gaps of one series in place; returns the indices that were filled.
/// Interior gaps are linear between the nearest observed neighbours, leading and
/// trailing gaps copy the nearest observed value. All-missing series are left alone.
pub fn fill_series(series: &mut [f64]) -> Vec<usize> {
    let known: Vec<usize> = (0..series.len()).filter(|&i| !series[i].is_nan()).collect();
    let (Some(&first), Some(&last)) = (known.first(), known.last()) else {
        return Vec::new();
    };
    let mut filled = Vec::new();
    for i in 0..first {
        series[i] = series[first];
        filled.push(i);
    }
    for pair in known.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (va, vb) = (series[a], series[b]);
        let span = (b - a) as f64;
        for i in a + 1..b {
            series[i] = va + (vb - va) * ((i - a) as f64 / span);
            filled.push(i);
        }
    }
    for i in last + 1..series.len() {
        series[i] = series[last];
        filled.push(i);
    }
    filled
}

/// Temporal stage: per (channel, cell) series, static and time channels untouched.
pub fn temporal_interpolate(cube: &GridCube) -> GridCube {
    let mut out = cube.clone();
    let (rows, cols) = (cube.rows(), cube.cols());
    let mut series = vec![0.0; cube.hours];
    for (c, ch) in cube.schema.channels.iter().enumerate() {
        if ch.is_static || ch.group == ChannelGroup::Time {
            continue;
        }
        for r in 0..rows {
            for k in 0..cols {
                for (t, s) in series.iter_mut().enumerate() {
                    *s = cube.get(t, c, r, k);
                }
                for t in fill_series(&mut series) {
                    let i = out.index(t, c, r, k);
                    out.values[i] = series[t];
                    out.imputed[i] = true;
                }
            }
        }
    }
    out
}

/// Inverse-distance weighted value at `target` from `(row, col, value)` sources,
/// with Euclidean distance in cell units. A source at distance zero is copied.
pub fn idw_at(target: (usize, usize), sources: &[(usize, usize, f64)], power: f64) -> Option<f64> {
    let base = sources.first()?.2;
    // offsets from the first source keep uniform fields exact
    let mut num = 0.0;
    let mut den = 0.0;
    for &(r, c, v) in sources {
        let dr = r as f64 - target.0 as f64;
        let dc = c as f64 - target.1 as f64;
        let d2 = dr * dr + dc * dc;
        if d2 == 0.0 {
            return Some(v);
        }
        let w = if power == 2.0 { 1.0 / d2 } else { d2.sqrt().powf(-power) };
        num += w * (v - base);
        den += w;
    }
    Some(base + num / den)
}

fn plane_sources(plane: &[f64], cols: usize) -> Vec<(usize, usize, f64)> {
    plane
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_nan())
        .map(|(i, &v)| (i / cols, i % cols, v))
        .collect()
}

/// Spatial stage over every pollutant and meteorology channel and hour.
pub fn spatial_idw(cube: &GridCube, power: f64) -> Result<GridCube> {
    let mut out = cube.clone();
    let cols = cube.cols();
    for (c, ch) in cube.schema.channels.iter().enumerate() {
        if !ch.group.is_interpolated() {
            continue;
        }
        for t in 0..cube.hours {
            let plane = cube.plane(t, c);
            if !plane.iter().any(|v| v.is_nan()) {
                continue;
            }
            let sources = plane_sources(plane, cols);
            if sources.is_empty() {
                return Err(Error::invalid(format!(
                    "channel {:?} has no source values at hour {} ({})",
                    ch.name,
                    t,
                    format_timestamp(&cube.timestamp(t))
                )));
            }
            for (i, v) in plane.iter().enumerate() {
                if v.is_nan() {
                    let value = idw_at((i / cols, i % cols), &sources, power).expect("sources present");
                    let idx = out.index(t, c, i / cols, i % cols);
                    out.values[idx] = value;
                    out.imputed[idx] = true;
                }
            }
        }
    }
    Ok(out)
}

/// Traffic cells without any reading carry no road and become zero; morphology
/// gaps likewise.
pub fn fill_proxies(cube: &mut GridCube) {
    for (c, ch) in cube.schema.channels.clone().iter().enumerate() {
        if !matches!(ch.group, ChannelGroup::Traffic | ChannelGroup::Morphology) {
            continue;
        }
        for t in 0..cube.hours {
            let off = cube.index(t, c, 0, 0);
            for i in off..off + cube.spec.cells() {
                if cube.values[i].is_nan() {
                    cube.values[i] = 0.0;
                    cube.imputed[i] = true;
                }
            }
        }
    }
}

/// Appends constant-field `season` and `workday` channels.
pub fn append_time_channels(cube: &GridCube, calendar: &Calendar) -> Result<GridCube> {
    let schema = cube.schema.with_time_channels()?;
    let mut out = GridCube::missing(cube.spec.clone(), schema, cube.start_time, cube.hours, cube.variant);
    let c_old = cube.channels();
    let n = cube.spec.cells();
    for t in 0..cube.hours {
        let src = cube.index(t, 0, 0, 0);
        let dst = out.index(t, 0, 0, 0);
        out.values[dst..dst + c_old * n].copy_from_slice(&cube.values[src..src + c_old * n]);
        out.imputed[dst..dst + c_old * n].copy_from_slice(&cube.imputed[src..src + c_old * n]);
        let ts = cube.timestamp(t);
        let season = calendar.season(&ts).encode();
        let work = if calendar.is_workday(&ts) { 1.0 } else { 0.0 };
        let s = out.schema.require(SEASON_CHANNEL)?;
        let w = out.schema.require(WORKDAY_CHANNEL)?;
        out.plane_mut(t, s).iter_mut().for_each(|v| *v = season);
        out.plane_mut(t, w).iter_mut().for_each(|v| *v = work);
    }
    Ok(out)
}

/// Withheld hourly station readings: the training and evaluation targets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StationTruth {
    pub start_time: Option<Timestamp>,
    pub hours: usize,
    series: BTreeMap<(String, String), Vec<Option<f64>>>,
}

impl StationTruth {
    pub fn new(start_time: Timestamp, hours: usize) -> Self {
        StationTruth {
            start_time: Some(start_time),
            hours,
            series: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, station: &str, channel: &str, series: Vec<Option<f64>>) {
        self.series.insert((station.to_string(), channel.to_string()), series);
    }

    pub fn get(&self, station: &str, channel: &str, t: usize) -> Option<f64> {
        self.series
            .get(&(station.to_string(), channel.to_string()))
            .and_then(|s| s.get(t).copied().flatten())
    }

    pub fn series(&self, station: &str, channel: &str) -> Option<&[Option<f64>]> {
        self.series
            .get(&(station.to_string(), channel.to_string()))
            .map(Vec::as_slice)
    }

    /// Stations holding a record for `channel`, in id order.
    pub fn stations(&self, channel: &str) -> Vec<&str> {
        self.series
            .keys()
            .filter(|(_, c)| c == channel)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let start = self.start_time.ok_or_else(|| Error::invalid("truth record has no start time"))?;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# {}", crate::formats::OBSERVATIONS)?;
        writeln!(out, "# start={} hours={}", format_timestamp(&start), self.hours)?;
        writeln!(out, "station_id,time,channel,value")?;
        for ((s, c), series) in &self.series {
            for (t, v) in series.iter().enumerate() {
                if let Some(v) = v {
                    writeln!(out, "{s},{},{c},{v}", format_timestamp(&add_hours(start, t as i64)))?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut truth = StationTruth::default();
        let mut start = None;
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            let perr = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            if let Some(rest) = t.strip_prefix("# start=") {
                let (s, h) = rest
                    .split_once(" hours=")
                    .ok_or_else(|| perr("malformed header".into()))?;
                start = Some(parse_timestamp(s)?);
                truth.start_time = start;
                truth.hours = h.parse().map_err(|_| perr("bad hour count".into()))?;
                continue;
            }
            if t.is_empty() || t.starts_with('#') || t.starts_with("station_id,") {
                continue;
            }
            let s0 = start.ok_or_else(|| perr("record before header".into()))?;
            let f: Vec<&str> = t.split(',').collect();
            if f.len() != 4 {
                return Err(perr(format!("expected 4 fields, found {}", f.len())));
            }
            let ts = parse_timestamp(f[1])?;
            let h = (ts - s0).num_hours();
            if h < 0 || h as usize >= truth.hours {
                return Err(perr("timestamp outside header period".into()));
            }
            let v: f64 = f[3].parse().map_err(|_| perr(format!("bad value {:?}", f[3])))?;
            let hours = truth.hours;
            let series = truth
                .series
                .entry((f[0].to_string(), f[2].to_string()))
                .or_insert_with(|| vec![None; hours]);
            series[h as usize] = Some(v);
        }
        Ok(truth)
    }
}

/// Removes the pollutant readings of every source in `station`'s cell, so that
/// cell can be rebuilt from other locations only. Returns `(kept, withheld)`.
pub fn mask_local_station(
    obs: &[Observation],
    registry: &StationRegistry,
    schema: &ChannelSchema,
    station: &str,
) -> Result<(Vec<Observation>, Vec<Observation>)> {
    let home = registry
        .get(station)
        .map(|e| (e.row, e.col))
        .ok_or_else(|| Error::invalid(format!("unknown station {station:?}")))?;
    let is_pollutant = |ch: &str| {
        schema
            .index_of(ch)
            .is_some_and(|i| schema.channels[i].group == ChannelGroup::Pollutant)
    };
    let cell_of = |id: &str| registry.get(id).map(|e| (e.row, e.col));
    let mut reporters: BTreeMap<&str, BTreeSet<(usize, usize)>> = BTreeMap::new();
    for o in obs.iter().filter(|o| is_pollutant(&o.channel)) {
        if let Some(cell) = cell_of(&o.source) {
            reporters.entry(&o.channel).or_default().insert(cell);
        }
    }
    for (ch, cells) in &reporters {
        if cells.contains(&home) && cells.len() < 2 {
            return Err(Error::invalid(format!(
                "pollutant {ch:?} is reported only from station {station:?}'s cell; it cannot be reconstructed"
            )));
        }
    }
    Ok(obs
        .iter()
        .cloned()
        .partition(|o| !(is_pollutant(&o.channel) && cell_of(&o.source) == Some(home))))
}

/// Both pre-processed cubes plus the withheld station readings.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub estimation: GridCube,
    pub forecast: GridCube,
    pub truth: StationTruth,
}

/// Full pre-processing pipeline: rasterize, temporal then spatial filling,
/// station leave-out reconstruction for the estimation cube, time labels.
pub fn preprocess(
    obs: &[Observation],
    spec: &GridSpec,
    schema: &ChannelSchema,
    registry: &StationRegistry,
    start: Timestamp,
    hours: usize,
    calendar: &Calendar,
) -> Result<Preprocessed> {
    schema.validate()?;
    if schema.has_time_channels() {
        return Err(Error::invalid("input schema must not contain time channels"));
    }
    registry.validate(spec, schema)?;
    let agg = aggregate(obs, schema, registry, start, hours)?;
    let raw = rasterize_aggregated(&agg, spec, schema, registry, start, hours, |_, _| true)?;
    let stage1 = temporal_interpolate(&raw);
    let mut forecast = spatial_idw(&stage1, IDW_POWER)?;
    fill_proxies(&mut forecast);

    let mut estimation = forecast.clone();
    estimation.variant = Variant::Estimation;
    let mut truth = StationTruth::new(start, hours);
    for (c, ch) in schema.pollutants() {
        let stations = stations_with_readings(&agg, c);
        let cells: BTreeSet<(usize, usize)> = stations
            .iter()
            .map(|s| registry.get(s).map(|e| (e.row, e.col)).expect("validated"))
            .collect();
        if cells.len() < 2 {
            return Err(Error::invalid(format!(
                "pollutant {:?} is reported from {} grid cell(s); leave-one-out estimation needs at least 2",
                ch.name,
                cells.len()
            )));
        }
        for s in &stations {
            let series: Vec<Option<f64>> = (0..hours).map(|t| agg.mean(s, c, t)).collect();
            truth.insert(s, &ch.name, series);
        }
        for &cell in &cells {
            for (t, v) in leave_out_series(&stage1, c, cell)?.into_iter().enumerate() {
                let i = estimation.index(t, c, cell.0, cell.1);
                estimation.values[i] = v;
                estimation.imputed[i] = true;
            }
        }
    }
    Ok(Preprocessed {
        estimation: append_time_channels(&estimation, calendar)?,
        forecast: append_time_channels(&forecast, calendar)?,
        truth,
    })
}

fn stations_with_readings(agg: &HourlyReadings, channel: usize) -> Vec<String> {
    let set: BTreeSet<&String> = agg
        .cells
        .keys()
        .filter(|(_, c, _)| *c == channel)
        .map(|(s, _, _)| s)
        .collect();
    set.into_iter().cloned().collect()
}

/// IDW reconstruction of one cell for every hour from all other cells of the
/// temporal stage.
fn leave_out_series(stage1: &GridCube, channel: usize, cell: (usize, usize)) -> Result<Vec<f64>> {
    let cols = stage1.cols();
    let skip = cell.0 * cols + cell.1;
    (0..stage1.hours)
        .map(|t| {
            let mut plane = stage1.plane(t, channel).to_vec();
            plane[skip] = f64::NAN;
            idw_at(cell, &plane_sources(&plane, cols), IDW_POWER).ok_or_else(|| {
                Error::invalid(format!(
                    "no source for channel {:?} at hour {t} outside cell {cell:?}",
                    stage1.schema.channels[channel].name
                ))
            })
        })
        .collect()
}
