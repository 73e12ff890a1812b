//! City grid cubes: rasterizing observations, gap filling, patches and scaling.

pub mod cube;
pub mod interp;
pub mod normalize;
pub mod observe;
pub mod patch;
pub mod schema;
pub mod time;

pub use cube::{GridCube, Variant};
pub use interp::{
    append_time_channels, fill_proxies, fill_series, idw_at, mask_local_station, preprocess, spatial_idw,
    temporal_interpolate, Preprocessed, StationTruth, IDW_POWER,
};
pub use normalize::NormStats;
pub use observe::{aggregate, rasterize, read_observations, write_observations, HourlyReadings, Observation};
pub use patch::{extract_patch, Patch};
pub use schema::{
    Channel, ChannelGroup, ChannelSchema, GridSpec, StationEntry, StationRegistry, INDICATOR_UNITS, SEASON_CHANNEL,
    WORKDAY_CHANNEL,
};
pub use time::{add_hours, format_timestamp, parse_timestamp, Calendar, Season, Timestamp};
