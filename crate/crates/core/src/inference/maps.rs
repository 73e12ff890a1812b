//! City-wide estimation maps, station forecasts and their text exports.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{extract_patch, format_timestamp, GridCube, Patch, Season, StationRegistry, Timestamp, Variant};
use crate::model::Checkpoint;

const PREDICT_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationMap {
    pub timestamp: Timestamp,
    pub pollutant: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, physical units.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastTable {
    /// Last observed hour; values are for the following `L` hours.
    pub timestamp: Timestamp,
    pub pollutant: String,
    pub rows: Vec<(String, Vec<f64>)>,
}

fn check_cube(ck: &Checkpoint, cube: &GridCube, want: Variant, t: usize) -> Result<()> {
    ck.check_schema(&cube.schema)?;
    if cube.variant != want {
        return Err(Error::invalid(format!(
            "expected a {} cube, got {}",
            want.as_str(),
            cube.variant.as_str()
        )));
    }
    let w = ck.model.config.window;
    if t + 1 < w || t >= cube.hours {
        return Err(Error::invalid(format!(
            "hour {t} needs {w} hours of history inside a {}-hour cube",
            cube.hours
        )));
    }
    Ok(())
}

/// Eval-mode predictions for centred patches, de-normalized.
fn run(ck: &Checkpoint, normalized: &GridCube, centers: &[(usize, usize)], t: usize) -> Result<Vec<Vec<f64>>> {
    let c = ck.target_index()?;
    let cfg = &ck.model.config;
    let mut out = Vec::with_capacity(centers.len());
    for chunk in centers.chunks(PREDICT_BATCH) {
        let patches: Vec<Patch> = chunk
            .iter()
            .map(|&g| extract_patch(normalized, g, cfg.patch_size, t, cfg.window))
            .collect::<Result<_>>()?;
        let refs: Vec<&Patch> = patches.iter().collect();
        for row in ck.model.predict(&refs)? {
            out.push(row.into_iter().map(|z| ck.norm.denormalize_value(c, z)).collect());
        }
    }
    Ok(out)
}

/// Estimation maps for several hours of one cube, normalizing it once.
pub fn estimate_hours(ck: &Checkpoint, cube: &GridCube, hours: &[usize]) -> Result<Vec<EstimationMap>> {
    if ck.model.config.is_forecast() {
        return Err(Error::invalid("estimation maps need an estimation model"));
    }
    for &t in hours {
        check_cube(ck, cube, Variant::Estimation, t)?;
    }
    let normalized = ck.norm.apply(cube)?;
    let centers: Vec<(usize, usize)> = (0..cube.rows())
        .flat_map(|r| (0..cube.cols()).map(move |c| (r, c)))
        .collect();
    hours
        .iter()
        .map(|&t| {
            let values: Vec<f64> = run(ck, &normalized, &centers, t)?.into_iter().map(|v| v[0]).collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite estimate at hour {t}")));
            }
            Ok(EstimationMap {
                timestamp: cube.timestamp(t),
                pollutant: ck.target.clone(),
                rows: cube.rows(),
                cols: cube.cols(),
                values,
            })
        })
        .collect()
}

/// One value per grid cell at hour `t`.
pub fn estimate_city(ck: &Checkpoint, cube: &GridCube, t: usize) -> Result<EstimationMap> {
    Ok(estimate_hours(ck, cube, &[t])?.remove(0))
}

/// `L` values per registry station reporting the model's pollutant, for hours
/// `t+1..=t+L`, from one forward pass each.
pub fn forecast_stations(ck: &Checkpoint, cube: &GridCube, registry: &StationRegistry, t: usize) -> Result<ForecastTable> {
    if !ck.model.config.is_forecast() {
        return Err(Error::invalid("station forecasts need a forecast model"));
    }
    check_cube(ck, cube, Variant::Forecast, t)?;
    let stations: Vec<(&str, (usize, usize))> = registry
        .iter()
        .filter(|(_, e)| e.channels.contains(&ck.target))
        .map(|(id, e)| (id, (e.row, e.col)))
        .collect();
    if stations.is_empty() {
        return Err(Error::invalid(format!("no registry station reports {:?}", ck.target)));
    }
    let normalized = ck.norm.apply(cube)?;
    let centers: Vec<(usize, usize)> = stations.iter().map(|s| s.1).collect();
    let preds = run(ck, &normalized, &centers, t)?;
    Ok(ForecastTable {
        timestamp: cube.timestamp(t),
        pollutant: ck.target.clone(),
        rows: stations.iter().map(|s| s.0.to_string()).zip(preds).collect(),
    })
}

impl EstimationMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// `row,col,value` lines after a format stamp.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# {}", crate::formats::ESTIMATION_MAP)?;
        writeln!(out, "# pollutant={} time={}", self.pollutant, format_timestamp(&self.timestamp))?;
        writeln!(out, "row,col,value")?;
        for r in 0..self.rows {
            for c in 0..self.cols {
                writeln!(out, "{r},{c},{}", self.get(r, c))?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        write_pgm(path, self.rows, self.cols, &self.values, &format!("{} {}", self.pollutant, format_timestamp(&self.timestamp)))
    }
}

/// Plain-text grayscale raster (PGM `P2`). Values are scaled linearly from the
/// `min`/`max` recorded in the header comments onto 0..=255.
pub fn write_pgm(path: &Path, rows: usize, cols: usize, values: &[f64], label: &str) -> Result<()> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "P2")?;
    writeln!(out, "# {}", crate::formats::RASTER)?;
    writeln!(out, "# {label}")?;
    writeln!(out, "# min={lo} max={hi}")?;
    writeln!(out, "{cols} {rows}")?;
    writeln!(out, "255")?;
    for r in 0..rows {
        let line: Vec<String> = values[r * cols..(r + 1) * cols]
            .iter()
            .map(|&v| {
                let g = if hi > lo { (v - lo) / (hi - lo) * 255.0 } else { 0.0 };
                format!("{}", g.round() as u8)
            })
            .collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

impl ForecastTable {
    pub fn horizon(&self) -> usize {
        self.rows.first().map_or(0, |r| r.1.len())
    }

    /// `station_id,horizon_hour,value` lines; `horizon_hour` counts from 1.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "# {}", crate::formats::FORECAST)?;
        writeln!(out, "# pollutant={} issued={}", self.pollutant, format_timestamp(&self.timestamp))?;
        writeln!(out, "station_id,horizon_hour,value")?;
        for (id, vals) in &self.rows {
            for (k, v) in vals.iter().enumerate() {
                writeln!(out, "{id},{},{v}", k + 1)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-season cell means of hourly maps.
#[derive(Clone, Debug, PartialEq)]
pub struct SeasonalMaps {
    pub rows: usize,
    pub cols: usize,
    /// Seasons with at least one map, in spring, summer, autumn, winter order.
    pub rasters: Vec<(Season, usize, Vec<f64>)>,
    /// One note per empty season.
    pub warnings: Vec<String>,
}

pub fn seasonal_mean_maps(maps: &[EstimationMap]) -> Result<SeasonalMaps> {
    let first = maps.first().ok_or_else(|| Error::invalid("no maps to average"))?;
    let (rows, cols) = (first.rows, first.cols);
    if maps.iter().any(|m| m.rows != rows || m.cols != cols) {
        return Err(Error::shape("maps differ in grid size"));
    }
    let mut rasters = Vec::new();
    let mut warnings = Vec::new();
    for season in Season::ALL {
        let bucket: Vec<&EstimationMap> = maps.iter().filter(|m| Season::of(&m.timestamp) == season).collect();
        if bucket.is_empty() {
            warnings.push(format!("no maps fall in {}; raster omitted", season.name()));
            continue;
        }
        let mut sum = vec![0.0; rows * cols];
        for m in &bucket {
            sum.iter_mut().zip(&m.values).for_each(|(s, v)| *s += v);
        }
        let n = bucket.len() as f64;
        sum.iter_mut().for_each(|s| *s /= n);
        rasters.push((season, bucket.len(), sum));
    }
    Ok(SeasonalMaps {
        rows,
        cols,
        rasters,
        warnings,
    })
}
