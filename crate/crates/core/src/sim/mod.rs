//! Case-study plants, weather data and closed-loop experiments.

pub mod closed_loop;
pub mod models;
pub mod monte_carlo;
pub mod weather;

pub use closed_loop::{
    building_plant, motor_plant, run_closed_loop, window_open, EpisodeLog, PlantModel, Reference, ScenarioConfig,
    StateInjection, StepRecord,
};
pub use monte_carlo::{monte_carlo, MonteCarloConfig, MonteCarloReport, ToleranceSummary};
pub use weather::{load_disturbance_csv, Disturbance, WinterProfile};
