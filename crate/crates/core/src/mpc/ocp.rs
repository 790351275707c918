use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{stage_cost, EquilibriumTarget, PredictionModel, StageCostParams};
use crate::error::{Error, Result};
use crate::optim::{self, Bounds, Termination};
use crate::types::Input;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalConstraint {
    /// `x_Np = x_eq`.
    Equality,
    /// No terminal condition; used for short horizons where the equality is
    /// generally unreachable.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpSettings {
    pub horizon: usize,
    pub terminal: TerminalConstraint,
    /// Terminal residual accepted as converged, model units.
    pub terminal_tol: f64,
    pub max_outer: usize,
    /// Total quasi-Newton iterations over all outer rounds.
    pub max_iterations: usize,
    /// Projected-gradient tolerance of each inner solve.
    pub inner_tol: f64,
    pub initial_penalty: f64,
    /// Optional wall-clock cap, seconds.
    pub time_limit: Option<f64>,
    /// Initial plans tried on a cold solve: the constant equilibrium input,
    /// then constant off, full heat and full cool.
    pub cold_starts: usize,
}

impl Default for OcpSettings {
    fn default() -> Self {
        Self {
            horizon: 30,
            terminal: TerminalConstraint::Equality,
            terminal_tol: 1e-6,
            max_outer: 10,
            max_iterations: 2000,
            inner_tol: 1e-7,
            initial_penalty: 1e3,
            time_limit: None,
            cold_starts: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Converged,
    MaxIter,
    Infeasible,
}

impl SolverStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverStatus::Converged => "converged",
            SolverStatus::MaxIter => "max-iter",
            SolverStatus::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub inputs: Vec<Input>,
    /// `N_p + 1` predicted states starting at the current one.
    pub states: Vec<Vec<f64>>,
    /// Stage-cost sum of the plan, without penalty terms.
    pub objective: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    /// `|x_Np - x_eq|_inf`, zero for a free terminal state.
    pub terminal_residual: f64,
    pub multipliers: Vec<f64>,
    pub penalty: f64,
}

/// Initial guess for the next solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub inputs: Vec<Input>,
    pub multipliers: Option<Vec<f64>>,
    pub penalty: Option<f64>,
}

impl WarmStart {
    /// Constant plan at the equilibrium input, no dual information.
    pub fn constant(u: Input, horizon: usize) -> Self {
        Self {
            inputs: vec![u; horizon],
            multipliers: None,
            penalty: None,
        }
    }
}

impl OcpSolution {
    /// Plan shifted by one step: drop the first input, append `u_eq`. Dual
    /// estimates carry over.
    pub fn shifted(&self, target: &EquilibriumTarget) -> WarmStart {
        let mut inputs: Vec<Input> = self.inputs.iter().skip(1).copied().collect();
        inputs.push(target.input);
        WarmStart {
            inputs,
            multipliers: (!self.multipliers.is_empty()).then(|| self.multipliers.clone()),
            penalty: Some(self.penalty),
        }
    }
}

struct Problem<'a, M: PredictionModel + ?Sized> {
    model: &'a M,
    x0: &'a [f64],
    r: f64,
    cost: &'a StageCostParams,
    target: &'a EquilibriumTarget,
    np: usize,
    n: usize,
}

/// Residual below which the terminal condition is closed by Gauss-Newton
/// restoration instead of further multiplier updates.
const RESTORE_BELOW: f64 = 1e-2;
/// Penalty ceiling; beyond it the inner problem is too ill-conditioned to
/// make progress in the iteration budget.
const MAX_PENALTY: f64 = 1e6;

fn max_abs(c: &[f64]) -> f64 {
    c.iter().fold(0.0, |a: f64, b| a.max(b.abs()))
}

fn to_inputs(v: &[f64]) -> Vec<Input> {
    v.chunks_exact(2).map(|c| Input::new(c[0], c[1])).collect()
}

impl<M: PredictionModel + ?Sized> Problem<'_, M> {
    fn rollout(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let mut xs = Vec::with_capacity(self.np + 1);
        xs.push(self.x0.to_vec());
        for i in 0..self.np {
            let mut next = vec![0.0; self.n];
            self.model.step(&xs[i], Input::new(v[2 * i], v[2 * i + 1]), &mut next);
            xs.push(next);
        }
        xs
    }

    fn objective(&self, v: &[f64], xs: &[Vec<f64>]) -> f64 {
        (0..self.np)
            .map(|i| {
                let u = Input::new(v[2 * i], v[2 * i + 1]);
                stage_cost(self.model.output(&xs[i]), u, self.r, self.cost)
            })
            .sum()
    }

    fn residual(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs[self.np].iter().zip(&self.target.state).map(|(a, b)| a - b).collect()
    }

    /// Reverse sweep from stage `from`: `seed` is the adjoint of `x_from`,
    /// stage costs before `from` are included when `with_cost` is set.
    /// Entries of `grad` for inputs at or after `from` are zeroed.
    fn sweep(&self, v: &[f64], xs: &[Vec<f64>], from: usize, seed: &[f64], with_cost: bool, grad: &mut [f64]) {
        grad[2 * from..].iter_mut().for_each(|g| *g = 0.0);
        let mut lam_next = seed.to_vec();
        let mut lam = vec![0.0; self.n];
        for i in (0..from).rev() {
            let u = Input::new(v[2 * i], v[2 * i + 1]);
            let du = self.model.step_adjoint(&xs[i], u, &lam_next, &mut lam);
            grad[2 * i] = du[0];
            grad[2 * i + 1] = du[1];
            if with_cost {
                grad[2 * i] += self.cost.lambda;
                grad[2 * i + 1] += self.cost.lambda;
                let e = self.model.output(&xs[i]) - self.r;
                self.model.output_gradient(&xs[i], 2.0 * e, &mut lam);
            }
            std::mem::swap(&mut lam, &mut lam_next);
        }
    }

    fn adjoint(&self, v: &[f64], xs: &[Vec<f64>], terminal_seed: &[f64], with_cost: bool, grad: &mut [f64]) {
        self.sweep(v, xs, self.np, terminal_seed, with_cost, grad);
    }

    /// Rows `d y_i / d v` for `i = 1..N_p`.
    fn output_jacobian(&self, v: &[f64], xs: &[Vec<f64>]) -> DMatrix<f64> {
        let m = 2 * self.np;
        let mut jac = DMatrix::zeros(self.np, m);
        let mut seed = vec![0.0; self.n];
        let mut row = vec![0.0; m];
        for i in 1..self.np {
            seed.iter_mut().for_each(|s| *s = 0.0);
            self.model.output_gradient(&xs[i], 1.0, &mut seed);
            self.sweep(v, xs, i, &seed, false, &mut row);
            for j in 0..m {
                jac[(i, j)] = row[j];
            }
        }
        jac
    }

    /// Inverse of the Gauss-Newton curvature `2 J_y'J_y + rho J_c'J_c`,
    /// lightly regularized, as the initial quasi-Newton metric.
    fn gauss_newton_metric(&self, v: &[f64], rho: Option<f64>) -> Option<Vec<f64>> {
        let xs = self.rollout(v);
        let jy = self.output_jacobian(v, &xs);
        let mut b = jy.transpose() * &jy * 2.0;
        if let Some(rho) = rho {
            let jc = self.terminal_jacobian(v, &xs);
            b += jc.transpose() * &jc * rho;
        }
        let m = b.nrows();
        let mean_diag = b.diagonal().sum() / m as f64;
        let eps = 1e-4 * mean_diag + 1e-9;
        for i in 0..m {
            b[(i, i)] += eps;
        }
        let inv = b.cholesky()?.inverse();
        inv.iter().all(|x| x.is_finite()).then(|| inv.transpose().iter().copied().collect())
    }

    /// Rows of `d x_Np / d v`.
    fn terminal_jacobian(&self, v: &[f64], xs: &[Vec<f64>]) -> DMatrix<f64> {
        let m = 2 * self.np;
        let mut jac = DMatrix::zeros(self.n, m);
        let mut seed = vec![0.0; self.n];
        let mut row = vec![0.0; m];
        for k in 0..self.n {
            seed.iter_mut().for_each(|s| *s = 0.0);
            seed[k] = 1.0;
            self.adjoint(v, xs, &seed, false, &mut row);
            for j in 0..m {
                jac[(k, j)] = row[j];
            }
        }
        jac
    }

    /// Minimum-norm Gauss-Newton corrections of the terminal residual over
    /// the inputs that stay inside their bounds. Returns the new residual.
    fn restore(&self, v: &mut [f64], tol: f64) -> f64 {
        let m = v.len();
        let mut xs = self.rollout(v);
        let mut res = max_abs(&self.residual(&xs));
        for _ in 0..8 {
            if res < 0.1 * tol {
                break;
            }
            let c = self.residual(&xs);
            let jac = self.terminal_jacobian(v, &xs);
            let mut fixed = vec![false; m];
            let mut step = vec![0.0; m];
            for _pass in 0..4 {
                let free: Vec<usize> = (0..m).filter(|&j| !fixed[j]).collect();
                if free.is_empty() {
                    break;
                }
                let a = DMatrix::from_fn(self.n, free.len(), |r, k| jac[(r, free[k])]);
                let b = DVector::from_iterator(self.n, c.iter().map(|x| -x));
                let Ok(dv) = a.svd(true, true).solve(&b, 1e-12) else {
                    break;
                };
                step.iter_mut().for_each(|s| *s = 0.0);
                let mut clipped = false;
                for (k, &j) in free.iter().enumerate() {
                    step[j] = dv[k];
                    let target = v[j] + dv[k];
                    if !(0.0..=1.0).contains(&target) {
                        fixed[j] = true;
                        clipped = true;
                    }
                }
                if !clipped {
                    break;
                }
                for j in 0..m {
                    if fixed[j] {
                        step[j] = 0.0;
                    }
                }
            }
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..10 {
                let trial: Vec<f64> = (0..m).map(|j| (v[j] + alpha * step[j]).clamp(0.0, 1.0)).collect();
                let txs = self.rollout(&trial);
                let tres = max_abs(&self.residual(&txs));
                if tres < res {
                    v.copy_from_slice(&trial);
                    xs = txs;
                    res = tres;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        res
    }

    /// Least-squares multipliers on the free variables:
    /// `min_mu |grad J + J_c' mu|` restricted to inputs off their bounds.
    fn least_squares_multipliers(&self, v: &[f64]) -> Vec<f64> {
        let xs = self.rollout(v);
        let m = 2 * self.np;
        let mut gj = vec![0.0; m];
        self.adjoint(v, &xs, &vec![0.0; self.n], true, &mut gj);
        let jac = self.terminal_jacobian(v, &xs);
        let free: Vec<usize> = (0..m)
            .filter(|&j| !((v[j] <= 0.0 && gj[j] > 0.0) || (v[j] >= 1.0 && gj[j] < 0.0)))
            .collect();
        if free.is_empty() {
            return vec![0.0; self.n];
        }
        let a = DMatrix::from_fn(free.len(), self.n, |r, c| jac[(c, free[r])]);
        let b = DVector::from_iterator(free.len(), free.iter().map(|&j| -gj[j]));
        match a.svd(true, true).solve(&b, 1e-10) {
            Ok(mu) if mu.iter().all(|x| x.is_finite()) => mu.iter().copied().collect(),
            _ => vec![0.0; self.n],
        }
    }
}

/// Single-shooting solve of the terminal-constrained economic OCP from
/// state `x0` for reference `r`.
///
/// Inputs are the decision variables, projected onto `[0, 1]^2`. The
/// terminal equality is handled by an augmented-Lagrangian outer loop whose
/// multipliers start from a least-squares estimate unless a warm start
/// provides them.
pub fn solve_ocp<M: PredictionModel + ?Sized>(
    model: &M,
    x0: &[f64],
    r: f64,
    cost: &StageCostParams,
    target: &EquilibriumTarget,
    warm: Option<&WarmStart>,
    settings: &OcpSettings,
) -> Result<OcpSolution> {
    let n = model.state_dim();
    let np = settings.horizon;
    if x0.len() != n || target.state.len() != n {
        return Err(Error::domain(format!(
            "state has {} entries and target {}, model expects {n}",
            x0.len(),
            target.state.len()
        )));
    }
    if np == 0 {
        return Err(Error::domain("prediction horizon must be positive"));
    }
    let prob = Problem {
        model,
        x0,
        r,
        cost,
        target,
        np,
        n,
    };
    let deadline = settings
        .time_limit
        .map(|s| Instant::now() + Duration::from_secs_f64(s.max(0.0)));

    if let Some(w) = warm.filter(|w| w.inputs.len() == np) {
        let mut sol = solve_from(&prob, w.clone(), settings, settings.max_iterations, deadline)?;
        // a feasible warm plan is never traded for a worse local solution
        let mut v: Vec<f64> = w.inputs.iter().flat_map(|u| u.to_array()).collect();
        Bounds::uniform(2 * np, 0.0, 1.0).project(&mut v);
        let states = prob.rollout(&v);
        let objective = prob.objective(&v, &states);
        let residual = match settings.terminal {
            TerminalConstraint::Equality => max_abs(&prob.residual(&states)),
            TerminalConstraint::Free => 0.0,
        };
        if sol.status == SolverStatus::Converged && residual < settings.terminal_tol && objective < sol.objective {
            sol.inputs = to_inputs(&v);
            sol.states = states;
            sol.objective = objective;
            sol.terminal_residual = residual;
        }
        return Ok(sol);
    }

    let starts = [target.input, Input::ZERO, Input::new(1.0, 0.0), Input::new(0.0, 1.0)];
    let mut best: Option<OcpSolution> = None;
    let mut iterations = 0;
    for &u in starts.iter().take(settings.cold_starts.max(1)) {
        let budget = settings.max_iterations.saturating_sub(iterations);
        if best.is_some() && (budget == 0 || deadline.is_some_and(|d| Instant::now() >= d)) {
            break;
        }
        let sol = solve_from(&prob, WarmStart::constant(u, np), settings, budget, deadline)?;
        iterations += sol.iterations;
        let better = best.as_ref().is_none_or(|b| {
            let rank = |s: &OcpSolution| (s.status != SolverStatus::Converged) as u8;
            (rank(&sol), sol.objective) < (rank(b), b.objective)
        });
        if better {
            best = Some(sol);
        }
    }
    let mut sol = best.expect("at least one start");
    sol.iterations = iterations;
    Ok(sol)
}

fn solve_from<M: PredictionModel + ?Sized>(
    prob: &Problem<'_, M>,
    start: WarmStart,
    settings: &OcpSettings,
    budget: usize,
    deadline: Option<Instant>,
) -> Result<OcpSolution> {
    let (n, np, r) = (prob.n, prob.np, prob.r);
    let warm = Some(&start);
    let m = 2 * np;
    let mut v: Vec<f64> = start.inputs.iter().flat_map(|u| u.to_array()).collect();
    Bounds::uniform(m, 0.0, 1.0).project(&mut v);

    let constrained = settings.terminal == TerminalConstraint::Equality;
    let mut mu = match warm.and_then(|w| w.multipliers.clone()) {
        Some(mu) if mu.len() == n => mu,
        // first-order estimates are only meaningful near feasibility
        _ if constrained && max_abs(&prob.residual(&prob.rollout(&v))) < RESTORE_BELOW => {
            prob.least_squares_multipliers(&v)
        }
        _ => vec![0.0; n],
    };
    if !constrained {
        mu.iter_mut().for_each(|x| *x = 0.0);
    }
    let mut rho = warm
        .and_then(|w| w.penalty)
        .unwrap_or(settings.initial_penalty)
        .min(MAX_PENALTY);

    let bounds = Bounds::uniform(m, 0.0, 1.0);
    let mut iterations = 0;
    let mut status = SolverStatus::Infeasible;
    let mut last_residual = f64::INFINITY;
    let outer_rounds = if constrained { settings.max_outer.max(1) } else { 1 };

    for _round in 0..outer_rounds {
        let remaining = budget.saturating_sub(iterations);
        let opt = optim::Settings {
            max_iterations: remaining,
            pg_tol: settings.inner_tol,
            deadline,
            ..optim::Settings::default()
        };
        let (mu_c, rho_c) = (mu.clone(), rho);
        let augmented = |v: &[f64], g: &mut [f64]| {
            let xs = prob.rollout(v);
            let mut val = prob.objective(v, &xs);
            let mut seed = vec![0.0; n];
            if constrained {
                let c = prob.residual(&xs);
                for k in 0..n {
                    val += mu_c[k] * c[k] + 0.5 * rho_c * c[k] * c[k];
                    seed[k] = mu_c[k] + rho_c * c[k];
                }
            }
            prob.adjoint(v, &xs, &seed, true, g);
            val
        };
        let metric = prob.gauss_newton_metric(&v, constrained.then_some(rho));
        let out = optim::minimize(augmented, &v, &bounds, &opt, metric);
        iterations += out.iterations;
        v = out.x;
        if !out.f.is_finite() {
            return Err(Error::ModelDomain(format!(
                "non-finite objective while solving the OCP for r = {r}"
            )));
        }

        let inner_done = matches!(out.termination, Termination::Converged | Termination::Stalled);
        let xs = prob.rollout(&v);
        let mut res = if constrained { max_abs(&prob.residual(&xs)) } else { 0.0 };
        if inner_done && constrained && res >= settings.terminal_tol && res < RESTORE_BELOW {
            let mut trial = v.clone();
            let restored = prob.restore(&mut trial, settings.terminal_tol);
            if restored < settings.terminal_tol {
                v = trial;
                res = restored;
            }
        }
        if !inner_done {
            log::trace!(
                "inner budget spent: f = {:.6e}, residual = {res:.3e}, rho = {rho:.1e}, {} its, pg = {:.2e}",
                out.f,
                out.iterations,
                out.pg_norm
            );
            status = SolverStatus::MaxIter;
            break;
        }
        if res < settings.terminal_tol {
            status = SolverStatus::Converged;
            break;
        }
        log::trace!(
            "outer round: f = {:.6e}, residual = {res:.3e}, rho = {rho:.1e}, inner {} its ({:?}), pg = {:.2e}",
            out.f,
            out.iterations,
            out.termination,
            out.pg_norm
        );
        let c = prob.residual(&prob.rollout(&v));
        for k in 0..n {
            mu[k] += rho * c[k];
        }
        if res > 0.25 * last_residual {
            rho = (2.0 * rho).min(MAX_PENALTY);
        }
        last_residual = res;
        status = SolverStatus::Infeasible;
    }

    let states = prob.rollout(&v);
    let objective = prob.objective(&v, &states);
    if !objective.is_finite() {
        return Err(Error::ModelDomain(format!("non-finite plan cost for r = {r}")));
    }
    let terminal_residual = if constrained { max_abs(&prob.residual(&states)) } else { 0.0 };
    Ok(OcpSolution {
        inputs: to_inputs(&v),
        states,
        objective,
        status,
        iterations,
        terminal_residual,
        multipliers: if constrained { mu } else { Vec::new() },
        penalty: rho,
    })
}
