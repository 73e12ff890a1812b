//! Synthetic city generator and planted-target datasets.

mod city;
mod planted;

pub use city::{
    diurnal_profile, generate, shift_field, Boundary, PollutantSpec, SynthCity, SynthConfig, BUILDING_HEIGHT,
    STREET_CANYON, TEMPERATURE, TRAFFIC, WIND_DIRECTION, WIND_SPEED,
};
pub use planted::{planted_interaction_dataset, planted_linear_dataset, PlantedConfig, PlantedData};
