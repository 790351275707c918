//! Economic model predictive control with a terminal equality constraint.
//!
//! The same machinery runs on either identified model through
//! [`PredictionModel`]: equilibrium targets, single-shooting optimal control
//! with exact adjoint gradients, and a receding-horizon policy with warm
//! starts and an iteration-budget fallback.

mod models;
mod ocp;
mod policy;

pub use models::EquilibriumSettings;
pub use ocp::{solve_ocp, OcpSettings, OcpSolution, SolverStatus, TerminalConstraint, WarmStart};
pub use policy::{MpcController, PolicyOutput};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::Input;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageCostParams {
    /// Weight of the input penalty, °C² per unit duty.
    pub lambda: f64,
}

impl Default for StageCostParams {
    fn default() -> Self {
        Self { lambda: 50.0 }
    }
}

/// `(y - r)^2 + lambda * (u_heat + u_cool)`.
pub fn stage_cost(y: f64, u: Input, r: f64, params: &StageCostParams) -> f64 {
    (y - r).powi(2) + params.lambda * u.effort()
}

/// A discrete-time model usable as MPC predictor. States live in the model's
/// own (possibly normalized) coordinates; inputs and outputs are physical.
pub trait PredictionModel: Sync {
    fn state_dim(&self) -> usize;

    /// `out = f(x, u)`.
    fn step(&self, x: &[f64], u: Input, out: &mut [f64]);

    /// `g(x)` in °C.
    fn output(&self, x: &[f64]) -> f64;

    /// Adds `scale * dg/dx` to `grad`.
    fn output_gradient(&self, x: &[f64], scale: f64, grad: &mut [f64]);

    /// Vector-Jacobian product of the step: given the adjoint `lam_next` of
    /// `f(x, u)`, overwrites `lam` with `(df/dx)' lam_next` and returns
    /// `(df/du)' lam_next`.
    fn step_adjoint(&self, x: &[f64], u: Input, lam_next: &[f64], lam: &mut [f64]) -> [f64; 2];

    /// Cost-optimal steady state for reference `r`.
    fn equilibrium(
        &self,
        r: f64,
        cost: &StageCostParams,
        settings: &EquilibriumSettings,
    ) -> Result<EquilibriumTarget>;
}

/// Steady state `(x_eq, u_eq)` with `x_eq = f(x_eq, u_eq)` minimizing the
/// stage cost for one reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumTarget {
    pub reference: f64,
    pub state: Vec<f64>,
    pub input: Input,
    /// °C.
    pub output: f64,
    pub cost: f64,
    /// `|x_eq - f(x_eq, u_eq)|_inf` in model coordinates.
    pub residual: f64,
}

impl EquilibriumTarget {
    /// Distance between the reachable steady output and the reference, °C.
    pub fn tracking_gap(&self) -> f64 {
        (self.output - self.reference).abs()
    }
}

pub fn solve_equilibrium<M: PredictionModel + ?Sized>(
    model: &M,
    r: f64,
    cost: &StageCostParams,
    settings: &EquilibriumSettings,
) -> Result<EquilibriumTarget> {
    model.equilibrium(r, cost, settings)
}

/// Fixed-point residual `|x - f(x, u)|_inf`.
pub fn fixed_point_residual<M: PredictionModel + ?Sized>(model: &M, x: &[f64], u: Input) -> f64 {
    let mut next = vec![0.0; x.len()];
    model.step(x, u, &mut next);
    x.iter().zip(&next).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}
