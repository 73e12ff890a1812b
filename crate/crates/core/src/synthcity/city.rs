//! Synthetic city with advected, decaying, traffic-emitted pollution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    add_hours, parse_timestamp, Channel, ChannelGroup, ChannelSchema, GridCube, GridSpec,
    Observation, StationRegistry, Timestamp, Variant, INDICATOR_UNITS,
};
use crate::numerics::Rng;

pub const WIND_SPEED: &str = "wind_speed";
pub const WIND_DIRECTION: &str = "wind_direction";
pub const TEMPERATURE: &str = "temperature";
pub const TRAFFIC: &str = "traffic";
pub const BUILDING_HEIGHT: &str = "building_height";
pub const STREET_CANYON: &str = "street_canyon";

/// How advection treats cells shifted in from beyond the grid edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Copy the nearest edge cell.
    Replicate,
    /// Background concentration `inflow_level`.
    Inflow,
    /// Wrap around; conserves mass under pure advection.
    Toroidal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PollutantSpec {
    pub name: String,
    /// Multiplier on the shared emission rate.
    pub emission_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub rows: usize,
    pub cols: usize,
    pub hours: usize,
    pub start_time: String,
    pub stations: usize,
    /// Probability that a station reading is dropped.
    pub missing_rate: f64,
    pub pollutants: Vec<PollutantSpec>,
    /// Concentration added per traffic unit per hour.
    pub emission_rate: f64,
    /// Constant emission in every cell per hour.
    pub background_rate: f64,
    pub canyon_amplification: f64,
    /// Fraction of the field lost per hour.
    pub decay: f64,
    /// Largest advection displacement in cells per hour.
    pub advection: f64,
    pub noise_std: f64,
    pub initial_level: f64,
    pub boundary: Boundary,
    pub inflow_level: f64,
    /// Every `road_spacing`-th row and column is a road.
    pub road_spacing: usize,
    /// Probability that a road cell is a street canyon.
    pub canyon_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 12,
            cols: 12,
            hours: 240,
            start_time: "2019-03-01T00:00:00".to_string(),
            stations: 8,
            missing_rate: 0.05,
            pollutants: vec![PollutantSpec {
                name: "pm25".to_string(),
                emission_scale: 1.0,
            }],
            emission_rate: 0.01,
            background_rate: 2.0,
            canyon_amplification: 1.5,
            decay: 0.1,
            advection: 1.5,
            noise_std: 0.5,
            initial_level: 20.0,
            boundary: Boundary::Replicate,
            inflow_level: 0.0,
            road_spacing: 4,
            canyon_fraction: 0.3,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("{field}: {msg}")));
        if self.rows == 0 || self.cols == 0 {
            return bad("rows/cols", "grid must have at least one cell".into());
        }
        if self.hours == 0 {
            return bad("hours", "must be at least 1".into());
        }
        parse_timestamp(&self.start_time)?;
        if self.stations > self.rows * self.cols {
            return bad("stations", format!("{} stations do not fit in {} cells", self.stations, self.rows * self.cols));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate", format!("must lie in [0, 1), got {}", self.missing_rate));
        }
        if self.pollutants.is_empty() {
            return bad("pollutants", "at least one pollutant is required".into());
        }
        for (name, v) in [
            ("emission_rate", self.emission_rate),
            ("background_rate", self.background_rate),
            ("canyon_amplification", self.canyon_amplification),
            ("advection", self.advection),
            ("noise_std", self.noise_std),
            ("initial_level", self.initial_level),
            ("inflow_level", self.inflow_level),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(name, format!("must be non-negative, got {v}"));
            }
        }
        for p in &self.pollutants {
            if !(p.emission_scale >= 0.0) {
                return bad("pollutants.emission_scale", format!("must be non-negative, got {}", p.emission_scale));
            }
        }
        if !(0.0..1.0).contains(&self.decay) {
            return bad("decay", format!("must lie in [0, 1), got {}", self.decay));
        }
        if self.advection > 0.0 && self.advection >= self.rows.min(self.cols) as f64 / 4.0 {
            return bad(
                "advection",
                format!("{} cells/hour must stay below a quarter of the smaller grid side", self.advection),
            );
        }
        if !(0.0..=1.0).contains(&self.canyon_fraction) {
            return bad("canyon_fraction", format!("must lie in [0, 1], got {}", self.canyon_fraction));
        }
        if self.road_spacing == 0 {
            return bad("road_spacing", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<ChannelSchema> {
        let mut ch: Vec<Channel> = self
            .pollutants
            .iter()
            .map(|p| Channel::new(&p.name, ChannelGroup::Pollutant, "ug/m3", false))
            .collect();
        ch.push(Channel::new(WIND_SPEED, ChannelGroup::Meteorology, "m/s", false));
        ch.push(Channel::new(WIND_DIRECTION, ChannelGroup::Meteorology, "turn", false));
        ch.push(Channel::new(TEMPERATURE, ChannelGroup::Meteorology, "C", false));
        ch.push(Channel::new(TRAFFIC, ChannelGroup::Traffic, "veh/h", false));
        ch.push(Channel::new(BUILDING_HEIGHT, ChannelGroup::Morphology, "m", true));
        ch.push(Channel::new(STREET_CANYON, ChannelGroup::Morphology, INDICATOR_UNITS, true));
        ChannelSchema::new(ch)
    }
}

/// Two-peak weekday traffic profile over the hour of day, in `[0.2, ~1.2]`.
pub fn diurnal_profile(hour_of_day: u32) -> f64 {
    let h = hour_of_day as f64;
    0.2 + (-(h - 8.0).powi(2) / (2.0 * 1.5f64.powi(2))).exp() + (-(h - 18.0).powi(2) / (2.0 * 2.0f64.powi(2))).exp()
}

/// Integer-cell shift of a field by `(dr, dc)`: `out[r][c] = p[r - dr][c - dc]`.
pub fn shift_field(p: &[f64], rows: usize, cols: usize, dr: isize, dc: isize, boundary: Boundary, inflow: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.len()];
    let (ri, ci) = (rows as isize, cols as isize);
    for r in 0..ri {
        for c in 0..ci {
            let (sr, sc) = (r - dr, c - dc);
            let inside = sr >= 0 && sr < ri && sc >= 0 && sc < ci;
            out[(r * ci + c) as usize] = match boundary {
                _ if inside => p[(sr * ci + sc) as usize],
                Boundary::Replicate => p[(sr.clamp(0, ri - 1) * ci + sc.clamp(0, ci - 1)) as usize],
                Boundary::Inflow => inflow,
                Boundary::Toroidal => p[(sr.rem_euclid(ri) * ci + sc.rem_euclid(ci)) as usize],
            };
        }
    }
    out
}

/// Generator output: the full truth cube plus what the sensors saw.
#[derive(Clone, Debug)]
pub struct SynthCity {
    pub truth: GridCube,
    pub registry: StationRegistry,
    pub observations: Vec<Observation>,
    pub start: Timestamp,
}

/// Eight compass directions as (row, col) unit steps; index k is angle k/8 turn
/// clockwise from north.
const COMPASS: [(f64, f64); 8] = [
    (-1.0, 0.0),
    (-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (0.0, 1.0),
    (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (1.0, 0.0),
    (std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    (0.0, -1.0),
    (-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
];

pub fn generate(cfg: &SynthConfig) -> Result<SynthCity> {
    cfg.validate()?;
    let schema = cfg.schema()?;
    let spec = GridSpec::new(cfg.rows, cfg.cols);
    let start = parse_timestamp(&cfg.start_time)?;
    let (rows, cols, n) = (cfg.rows, cfg.cols, cfg.rows * cfg.cols);
    let root = Rng::new(cfg.seed);
    let mut cube = GridCube::missing(spec, schema.clone(), start, cfg.hours, Variant::Truth);
    cube.imputed.iter_mut().for_each(|m| *m = false);

    // static morphology and road layout
    let mut rng = root.fork(10);
    let road: Vec<bool> = (0..n)
        .map(|i| (i / cols) % cfg.road_spacing == cfg.road_spacing / 2 || (i % cols) % cfg.road_spacing == cfg.road_spacing / 2)
        .collect();
    let canyon: Vec<f64> = road
        .iter()
        .map(|&r| if r && rng.bernoulli(cfg.canyon_fraction) { 1.0 } else { 0.0 })
        .collect();
    let height: Vec<f64> = canyon
        .iter()
        .map(|&c| if c > 0.0 { rng.uniform(30.0, 80.0) } else { rng.uniform(3.0, 25.0) })
        .collect();
    let intensity: Vec<f64> = road
        .iter()
        .map(|&r| if r { rng.uniform(400.0, 1200.0) } else { 0.0 })
        .collect();

    // city-wide meteorology random walks
    let mut met = root.fork(11);
    let mut speed = met.uniform(0.0, 1.0);
    let mut dir = met.below(8);
    let mut temp = met.uniform(10.0, 25.0);
    let temp_gradient: Vec<f64> = (0..n).map(|i| 0.1 * (i / cols) as f64 - 0.05 * (i % cols) as f64).collect();

    let c_speed = schema.require(WIND_SPEED)?;
    let c_dir = schema.require(WIND_DIRECTION)?;
    let c_temp = schema.require(TEMPERATURE)?;
    let c_traffic = schema.require(TRAFFIC)?;
    let c_height = schema.require(BUILDING_HEIGHT)?;
    let c_canyon = schema.require(STREET_CANYON)?;
    let pollutant_idx: Vec<usize> = cfg.pollutants.iter().map(|p| schema.require(&p.name)).collect::<Result<_>>()?;

    let mut fields: Vec<Vec<f64>> = vec![vec![cfg.initial_level; n]; cfg.pollutants.len()];
    let mut noise = root.fork(12);
    for t in 0..cfg.hours {
        let ts = add_hours(start, t as i64);
        let hod = chrono::Timelike::hour(&ts);
        let traffic: Vec<f64> = intensity.iter().map(|v| v * diurnal_profile(hod)).collect();
        cube.plane_mut(t, c_speed).iter_mut().for_each(|v| *v = speed);
        cube.plane_mut(t, c_dir).iter_mut().for_each(|v| *v = dir as f64 / 8.0);
        for (v, g) in cube.plane_mut(t, c_temp).iter_mut().zip(&temp_gradient) {
            *v = temp + g;
        }
        cube.plane_mut(t, c_traffic).copy_from_slice(&traffic);
        cube.plane_mut(t, c_height).copy_from_slice(&height);
        cube.plane_mut(t, c_canyon).copy_from_slice(&canyon);
        for (k, &c) in pollutant_idx.iter().enumerate() {
            cube.plane_mut(t, c).copy_from_slice(&fields[k]);
        }

        // advance the state to hour t + 1
        let step = (speed * cfg.advection).min(cfg.advection);
        let (dr, dc) = ((COMPASS[dir].0 * step).round() as isize, (COMPASS[dir].1 * step).round() as isize);
        for (k, p) in cfg.pollutants.iter().enumerate() {
            let shifted = shift_field(&fields[k], rows, cols, dr, dc, cfg.boundary, cfg.inflow_level);
            let rate = cfg.emission_rate * p.emission_scale;
            for i in 0..n {
                let e = rate * traffic[i] * (1.0 + cfg.canyon_amplification * canyon[i]) + cfg.background_rate;
                let eps = if cfg.noise_std > 0.0 { noise.normal(0.0, cfg.noise_std) } else { 0.0 };
                fields[k][i] = ((1.0 - cfg.decay) * shifted[i] + e + eps).max(0.0);
            }
        }
        speed = (speed + met.normal(0.0, 0.1)).clamp(0.0, 1.0);
        if met.bernoulli(0.05) {
            dir = (dir + if met.bernoulli(0.5) { 1 } else { 7 }) % 8;
        }
        temp += met.normal(0.0, 0.3);
    }

    // sensors
    let mut registry = StationRegistry::new();
    let mut place = root.fork(13);
    let mut cells: Vec<usize> = (0..n).collect();
    place.shuffle(&mut cells);
    let mut station_cells: Vec<usize> = cells[..cfg.stations].to_vec();
    station_cells.sort_unstable();
    let mut station_channels: Vec<&str> = cfg.pollutants.iter().map(|p| p.name.as_str()).collect();
    station_channels.extend([WIND_SPEED, WIND_DIRECTION, TEMPERATURE]);
    for (k, &cell) in station_cells.iter().enumerate() {
        registry.insert(&format!("S{:02}", k + 1), cell / cols, cell % cols, &station_channels)?;
    }
    for i in (0..n).filter(|&i| road[i]) {
        registry.insert(&format!("road_{}_{}", i / cols, i % cols), i / cols, i % cols, &[TRAFFIC])?;
    }
    for i in 0..n {
        registry.insert(&format!("bldg_{}_{}", i / cols, i % cols), i / cols, i % cols, &[BUILDING_HEIGHT, STREET_CANYON])?;
    }

    let mut drop = root.fork(14);
    let mut observations = Vec::new();
    for (id, e) in registry.iter() {
        let is_static = e.channels.contains(BUILDING_HEIGHT);
        if is_static {
            observations.push(Observation::new(id, start, BUILDING_HEIGHT, cube.get(0, c_height, e.row, e.col)));
            observations.push(Observation::new(id, start, STREET_CANYON, cube.get(0, c_canyon, e.row, e.col)));
            continue;
        }
        for t in 0..cfg.hours {
            let ts = add_hours(start, t as i64);
            for ch in &e.channels {
                let c = schema.require(ch)?;
                if drop.bernoulli(cfg.missing_rate) {
                    continue;
                }
                observations.push(Observation::new(id, ts, ch, cube.get(t, c, e.row, e.col)));
            }
        }
    }
    Ok(SynthCity {
        truth: cube,
        registry,
        observations,
        start,
    })
}
