use super::{
    solve_ocp, EquilibriumSettings, EquilibriumTarget, OcpSettings, PredictionModel, SolverStatus,
    StageCostParams, WarmStart,
};
use crate::types::Input;

/// What the policy applied at one control instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub input: Input,
    /// `None` when no OCP was solved (target computation failed).
    pub status: Option<SolverStatus>,
    pub iterations: usize,
    pub objective: f64,
    pub terminal_residual: f64,
    /// Previous input held because the solve did not finish in budget.
    pub fallback: bool,
}

/// Receding-horizon controller over one prediction model.
#[derive(Debug, Clone)]
pub struct MpcController<M> {
    pub model: M,
    pub cost: StageCostParams,
    pub ocp: OcpSettings,
    pub equilibrium: EquilibriumSettings,
    target: Option<EquilibriumTarget>,
    warm: Option<WarmStart>,
    last_input: Input,
    budget_override: Option<usize>,
}

impl<M: PredictionModel> MpcController<M> {
    pub fn new(model: M, cost: StageCostParams, ocp: OcpSettings, equilibrium: EquilibriumSettings) -> Self {
        Self {
            model,
            cost,
            ocp,
            equilibrium,
            target: None,
            warm: None,
            last_input: Input::ZERO,
            budget_override: None,
        }
    }

    /// Replaces the iteration budget for subsequent solves; `None` restores
    /// the configured one.
    pub fn set_budget(&mut self, iterations: Option<usize>) {
        self.budget_override = iterations;
    }

    pub fn target(&self) -> Option<&EquilibriumTarget> {
        self.target.as_ref()
    }

    pub fn last_input(&self) -> Input {
        self.last_input
    }

    /// Input held before the first solve and on fallback.
    pub fn set_last_input(&mut self, u: Input) {
        self.last_input = u;
    }

    fn hold(&self) -> PolicyOutput {
        PolicyOutput {
            input: self.last_input,
            status: None,
            iterations: 0,
            objective: f64::NAN,
            terminal_residual: f64::NAN,
            fallback: true,
        }
    }

    /// One control decision for state `x` and reference `r`.
    pub fn step(&mut self, x: &[f64], r: f64) -> PolicyOutput {
        if self.target.as_ref().is_none_or(|t| t.reference != r) {
            match self.model.equilibrium(r, &self.cost, &self.equilibrium) {
                Ok(t) => {
                    log::debug!("new target for r = {r}: u = {:?}, y = {}", t.input, t.output);
                    self.target = Some(t);
                    self.warm = None;
                }
                Err(e) => {
                    log::warn!("equilibrium for r = {r} failed: {e}");
                    self.target = None;
                    self.warm = None;
                    return self.hold();
                }
            }
        }
        let target = self.target.as_ref().expect("target set above");
        let mut settings = self.ocp.clone();
        if let Some(b) = self.budget_override {
            settings.max_iterations = b;
        }
        let sol = match solve_ocp(&self.model, x, r, &self.cost, target, self.warm.as_ref(), &settings) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("OCP failed: {e}");
                self.warm = None;
                return self.hold();
            }
        };
        self.warm = Some(sol.shifted(target));
        let fallback = sol.status == SolverStatus::MaxIter;
        if !fallback {
            self.last_input = sol.inputs[0];
        }
        PolicyOutput {
            input: self.last_input,
            status: Some(sol.status),
            iterations: sol.iterations,
            objective: sol.objective,
            terminal_residual: sol.terminal_residual,
            fallback,
        }
    }
}
