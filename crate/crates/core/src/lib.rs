//! Simulation and scoring of distributed energy resource fleets tracking a regulation signal.
//!
//! Batteries and water heaters are coordinated either centrally, with full knowledge of every
//! energy state, or by packetized energy management, where devices request fixed-length
//! energy packets. Fleets are scored with the accuracy/delay/precision metrics of regulation
//! markets, and a linear search finds the smallest fleet that meets a precision threshold,
//! giving the kW each device contributes to a 1 MW product. A population macromodel predicts
//! the steady-state contribution without simulation.

pub mod agc;
pub mod cc;
pub mod cli;
pub mod devices;
pub mod error;
pub mod flexibility;
pub mod macromodel;
pub mod pem;
pub mod rng;
pub mod scoring;
pub mod trace;

pub use agc::{
    hourly_stats, load_agc, make_reference, select_representative, synthesize_agc, AgcStats,
    AgcSynth, AgcTrace, ReferenceSignal,
};
pub use cc::{cc_dispatch, simulate_cc, CcCommand};
pub use devices::{
    build_fleet, Device, DeviceKind, DeviceParams, DeviceState, DrawProfile, EssParams, EwhParams,
    Fleet, Mode,
};
pub use error::{Error, Result};
pub use flexibility::{find_n_min, mixture_fleet, Coordinator, Experiment, FlexQuery, FlexResult};
pub use macromodel::{ControlFractions, MacroModel, Objective, PowerTable};
pub use pem::{simulate_pem, GrantPolicy, PemParams};
pub use scoring::{score, ScoreReport};
pub use trace::{FleetTrace, ScoringInput};
