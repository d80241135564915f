//! Deterministic plant simulator and two-stage economic MPC for a
//! residential multi-carrier energy hub (electricity, heat, mobility)
//! operating across sequential day-ahead and intra-day electricity markets.
//!
//! The crate is organized around the closed loop in [`harness`]: a daily
//! planner commits an hourly day-ahead position, a quarter-hourly MPC
//! trades the deviations intra-day, and the plant integrates the full
//! thermal and battery dynamics (including SEI/active-material aging)
//! under the realized exogenous data.

pub mod battery;
pub mod config;
pub mod dp;
pub mod grid;
pub mod harness;
pub mod market;
pub mod ocp;
pub mod report;
pub mod solver;
pub mod synth;
pub mod thermal;
pub mod timeseries;
pub mod types;

pub use config::{load_config, load_config_file, HubAssets, ScenarioConfig, Season};
pub use harness::{run_matrix, run_scenario, FlexKind, PolicyKind, RunLedger};
pub use types::{DecisionVector, ExogenousFrame, HubState};
