//! City-wide estimation, station forecasts, evaluation tables and seasonal maps.

mod eval;
mod maps;
mod metrics;

pub use eval::{per_pollutant_eval, EvalTable, Predictions};
pub use maps::{
    estimate_city, estimate_hours, forecast_stations, seasonal_mean_maps, write_pgm, EstimationMap, ForecastTable,
    SeasonalMaps,
};
pub use metrics::{mape, mape_rows, EvalResult, StepResult, MAPE_EPSILON};
