//! Single-zone RC thermal testbed with synthetic weather, stochastic
//! occupancy and a deadband thermostat baseline, at 15-minute steps.

pub mod frame;
pub mod hvac;
pub mod rc;
pub mod schedule;
pub mod sim;
pub mod weather;

pub use frame::{load_frame, save_frame, TimeSeriesFrame};
pub use hvac::{hvac_from_flow, onoff_controller, HvacParams};
pub use rc::{rc_step, RcParams, STEPS_PER_DAY, STEP_HOURS, STEP_SECONDS};
pub use schedule::{occupancy_schedule, SchedulePolicy};
pub use sim::{
    run_baseline, simulate_onoff, stream_rng, Disturbances, OnOffState, TestbedConfig, ZoneSimulator,
};
pub use weather::{synth_weather, WeatherConfig};
