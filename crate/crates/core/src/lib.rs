//! Identification and predictive control of a temperature control unit.
//!
//! The crate covers the whole loop: a surrogate plant driven by
//! delta-modulated binary actuators, a PI baseline, a two-state linear model
//! with Kalman filtering, a neural NARX model, and a terminal-constrained
//! economic MPC that runs on either model.

pub mod dataset;
pub mod error;
pub mod harness;
pub mod linear;
pub mod mpc;
pub mod nnarx;
pub mod optim;
pub mod pi;
pub mod plant;
pub mod signals;
pub mod types;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use harness::{Config, Controller, CostReport, ExperimentLog};
pub use linear::{KalmanEstimate, LinearModel};
pub use mpc::{EquilibriumTarget, MpcController, OcpSolution, PredictionModel, SolverStatus, StageCostParams};
pub use nnarx::{Architecture, NnarxModel, NnarxState, Normalizer};
pub use pi::{PiGains, PiState};
pub use plant::{PlantParams, PlantState};
pub use signals::{DeltaModulator, ReferenceProfile};
pub use types::{Bits, Input};
