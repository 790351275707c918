//! Experiment orchestration: data collection, model fitting, closed-loop
//! runs of the three controllers, cost evaluation and the open-loop
//! prediction benchmark.

mod config;
mod log;

pub use config::{Config, ExperimentConfig, IdentificationConfig, MpcConfig, NnarxConfig, Paths, Stream};
pub use log::{ExperimentLog, LogMetadata, LogRecord, LOG_HEADER};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linear::{self, filter_to, KalmanEstimate, LinearFit, LinearModel};
use crate::mpc::{stage_cost, MpcController, PolicyOutput, StageCostParams};
use crate::nnarx::{self, open_loop_predict, pack_state, NnarxModel, Normalizer, TrainingReport};
use crate::pi::{pi_step, PiState};
use crate::plant::{measure, plant_step, PlantState, PLANT_DT};
use crate::signals::{make_reference, InputModulator, ReferenceProfile};
use crate::types::Input;

#[derive(Debug, Clone)]
pub enum Controller {
    Pi,
    LinMpc(LinearModel),
    NnMpc(NnarxModel),
}

impl Controller {
    pub fn tag(&self) -> &'static str {
        match self {
            Controller::Pi => "pi",
            Controller::LinMpc(_) => "lmpc",
            Controller::NnMpc(_) => "nnmpc",
        }
    }
}

enum Active {
    Pi(PiState),
    Lin {
        mpc: MpcController<LinearModel>,
        est: Option<KalmanEstimate>,
    },
    Nn {
        mpc: MpcController<NnarxModel>,
        past_y: Vec<f64>,
        past_u: Vec<[f64; 2]>,
    },
}

fn mpc_period(cfg: &Config) -> usize {
    cfg.identification.resample_factor
}

impl Active {
    fn new(cfg: &Config, controller: &Controller) -> Self {
        let m = &cfg.mpc;
        match controller {
            Controller::Pi => Active::Pi(PiState::new(cfg.pi)),
            Controller::LinMpc(model) => Active::Lin {
                mpc: MpcController::new(model.clone(), m.cost, m.ocp.clone(), m.equilibrium.clone()),
                est: None,
            },
            Controller::NnMpc(model) => Active::Nn {
                mpc: MpcController::new(model.clone(), m.cost, m.ocp.clone(), m.equilibrium.clone()),
                past_y: Vec::new(),
                past_u: Vec::new(),
            },
        }
    }

    /// MPC decision on a controller-clock instant. Histories are padded with
    /// the first measurement and zero input until a full window exists.
    fn decide(&mut self, y: f64, r: f64, budget: Option<usize>) -> Result<PolicyOutput> {
        match self {
            Active::Pi(_) => unreachable!("PI runs on the plant clock"),
            Active::Lin { mpc, est } => {
                mpc.set_budget(budget);
                let next = match est.take() {
                    None => KalmanEstimate::from_measurement(y, mpc.model.q),
                    Some(prev) => linear::kalman_step(&mpc.model, &prev, mpc.last_input(), y)?,
                };
                let out = mpc.step(&next.x, r);
                *est = Some(next);
                Ok(out)
            }
            Active::Nn { mpc, past_y, past_u } => {
                mpc.set_budget(budget);
                let norm: Normalizer = mpc.model.normalizer;
                let n = mpc.model.n_past();
                if past_y.is_empty() {
                    past_y.resize(n, norm.output(y));
                    past_u.resize(n, norm.input(Input::ZERO));
                } else {
                    past_u.remove(0);
                    past_u.push(norm.input(mpc.last_input()));
                    past_y.remove(0);
                    past_y.push(norm.output(y));
                }
                let x = pack_state(past_y, past_u)?;
                Ok(mpc.step(&x.values, r))
            }
        }
    }
}

/// Drives the plant at 1 s under `controller` tracking `profile`.
fn run_loop(
    cfg: &Config,
    controller: &Controller,
    profile: &ReferenceProfile,
    seed: u64,
    zero_budget: Option<(f64, f64)>,
) -> Result<ExperimentLog> {
    let reference = make_reference(profile, PLANT_DT)?;
    let period = mpc_period(cfg);
    let tag = controller.tag();
    let mut meta = log::metadata(tag, seed, cfg.hash(), period as f64 * PLANT_DT);

    let mut plant = PlantState::new(&cfg.plant, seed);
    let mut modulator = InputModulator::default();
    let mut active = Active::new(cfg, controller);
    let mut u = Input::ZERO;
    let mut records = Vec::with_capacity(reference.len());

    for (k, &r) in reference.iter().enumerate() {
        let t = k as f64 * PLANT_DT;
        let y = measure(&mut plant, &cfg.plant);
        let mut diag: Option<PolicyOutput> = None;
        match &mut active {
            Active::Pi(state) => u = pi_step(state, r, y),
            other => {
                if k % period == 0 {
                    let budget = zero_budget.and_then(|(a, b)| (t >= a && t < b).then_some(0));
                    let out = other.decide(y, r, budget)?;
                    u = out.input;
                    diag = Some(out);
                }
            }
        }
        let bits = modulator.step(u)?;
        plant_step(&mut plant, &cfg.plant, bits);
        records.push(LogRecord {
            t,
            u_heat: u.heat,
            u_cool: u.cool,
            bit_heat: bits.heat as u8,
            bit_cool: bits.cool as u8,
            y,
            r,
            controller: tag.to_string(),
            solver_status: diag.as_ref().map(|d| {
                d.status.map_or("no-target", |s| s.as_str()).to_string()
            }),
            solver_iterations: diag.as_ref().map(|d| d.iterations),
            objective: diag.as_ref().and_then(|d| d.objective.is_finite().then_some(d.objective)),
            terminal_residual: diag
                .as_ref()
                .and_then(|d| d.terminal_residual.is_finite().then_some(d.terminal_residual)),
            fallback: diag.as_ref().is_some_and(|d| d.fallback) as u8,
        });
    }
    meta.records = records.len();
    Ok(ExperimentLog {
        metadata: meta,
        records,
    })
}

/// Closed-loop experiment on the evaluation reference with the shared
/// experiment seed.
pub fn run_closed_loop(cfg: &Config, controller: &Controller) -> Result<ExperimentLog> {
    run_loop(
        cfg,
        controller,
        &cfg.experiment.profile,
        cfg.stream_seed(Stream::Experiment),
        cfg.experiment.zero_budget_window,
    )
}

/// Raw plant-clock log plus the resampled model dataset.
#[derive(Debug, Clone)]
pub struct CollectedData {
    pub raw: ExperimentLog,
    pub dataset: Dataset,
    /// Fewer than two reference levels.
    pub poorly_excited: bool,
}

fn collect(cfg: &Config, profile: &ReferenceProfile, stream: Stream) -> Result<CollectedData> {
    let poorly_excited = profile.distinct_levels() < 2;
    if poorly_excited {
        ::log::warn!("reference profile has a single level; the dataset is poorly excited");
    }
    let raw = run_loop(cfg, &Controller::Pi, profile, cfg.stream_seed(stream), None)?;
    let dataset = raw.to_executed_dataset()?.resample(cfg.identification.resample_factor)?;
    Ok(CollectedData {
        raw,
        dataset,
        poorly_excited,
    })
}

/// PI-controlled excitation run used for identification.
pub fn collect_identification_data(cfg: &Config) -> Result<CollectedData> {
    collect(cfg, &cfg.identification.profile, Stream::Identification)
}

/// Independent PI run on the validation reference, held out from fitting.
pub fn collect_validation_data(cfg: &Config) -> Result<CollectedData> {
    collect(cfg, &cfg.identification.validation_profile, Stream::Validation)
}

pub fn fit_linear_model(cfg: &Config, data: &Dataset) -> Result<LinearFit> {
    linear::fit_linear_with(data, &cfg.identification.fit)
}

/// Normalizer fit, seeded initialization, subsequence extraction and
/// training. Training windows come from `data`, validation windows from the
/// separate experiment `validation`.
pub fn train_nnarx_model(
    cfg: &Config,
    data: &Dataset,
    validation: &Dataset,
) -> Result<(NnarxModel, TrainingReport)> {
    let t = &cfg.nnarx.training;
    let norm = Normalizer::fit(data);
    let init = NnarxModel::init(cfg.nnarx.architecture.clone(), norm, t.seed)?;
    let train_set = nnarx::extract_subsequences(data, t.n_train, t.seq_len, t.seed.wrapping_add(1))?;
    let val_set = nnarx::extract_subsequences(validation, t.n_valid, t.seq_len, t.seed.wrapping_add(2))?;
    nnarx::train(&init, &train_set, &val_set, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// Mean of `(y - r)^2`, °C².
    pub tracking: f64,
    /// Mean of `lambda (u_heat + u_cool)`.
    pub energy: f64,
    pub total: f64,
}

/// Time averages over records with `t0 <= t < t_end`.
pub fn evaluate_costs(log: &ExperimentLog, t0: f64, t_end: f64, params: &StageCostParams) -> Result<CostReport> {
    if !(t0 >= 0.0 && t0 < t_end && t_end <= log.end_time()) {
        return Err(Error::domain(format!(
            "cost window [{t0}, {t_end}) is not inside the log [0, {})",
            log.end_time()
        )));
    }
    let mut tracking = 0.0;
    let mut energy = 0.0;
    let mut count = 0usize;
    for rec in log.records.iter().filter(|r| r.t >= t0 && r.t < t_end) {
        let u = rec.input();
        let e = stage_cost(rec.y, Input::ZERO, rec.r, params);
        tracking += e;
        energy += stage_cost(rec.r, u, rec.r, params);
        count += 1;
    }
    let n = count.max(1) as f64;
    let (tracking, energy) = (tracking / n, energy / n);
    Ok(CostReport {
        tracking,
        energy,
        total: tracking + energy,
    })
}

/// The three controllers on identical seeds and references, in parallel.
pub fn run_comparison(cfg: &Config, linear: &LinearModel, nnarx: &NnarxModel) -> Result<Vec<(ExperimentLog, CostReport)>> {
    let controllers = [
        Controller::Pi,
        Controller::LinMpc(linear.clone()),
        Controller::NnMpc(nnarx.clone()),
    ];
    controllers
        .par_iter()
        .map(|c| {
            let log = run_closed_loop(cfg, c)?;
            let report = evaluate_costs(&log, cfg.experiment.t0, cfg.experiment.t_end, &cfg.mpc.cost)?;
            Ok((log, report))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub start: usize,
    pub linear_rmse: f64,
    pub nnarx_rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTable {
    pub horizon: usize,
    pub rows: Vec<PredictionRow>,
}

impl PredictionTable {
    pub fn mean_linear(&self) -> f64 {
        self.rows.iter().map(|r| r.linear_rmse).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_nnarx(&self) -> f64 {
        self.rows.iter().map(|r| r.nnarx_rmse).sum::<f64>() / self.rows.len() as f64
    }
}

/// `count` start indices spread evenly over the admissible range.
pub fn default_start_points(len: usize, n_past: usize, horizon: usize, count: usize) -> Vec<usize> {
    if len <= n_past + horizon || count == 0 {
        return Vec::new();
    }
    let lo = n_past;
    let hi = len - horizon - 1;
    if count == 1 {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * i / (count - 1)).collect()
}

fn rmse(pred: &[f64], actual: &[f64]) -> f64 {
    let s: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    (s / pred.len().max(1) as f64).sqrt()
}

fn check_window(data: &Dataset, start: usize, horizon: usize, n_past: usize) -> Result<()> {
    if start < n_past || start + horizon >= data.len() {
        return Err(Error::domain(format!(
            "start {start} with horizon {horizon} needs {n_past} samples of history within {} samples",
            data.len()
        )));
    }
    Ok(())
}

/// Open-loop RMSE of the linear model; the initial state is the Kalman
/// estimate at `start`.
pub fn linear_prediction_rmse(model: &LinearModel, data: &Dataset, start: usize, horizon: usize) -> Result<f64> {
    check_window(data, start, horizon, 0)?;
    let est = filter_to(model, data, start);
    let pred = model.simulate(est.x, &data.inputs[start..start + horizon]);
    Ok(rmse(&pred, &data.outputs[start + 1..=start + horizon]))
}

/// Open-loop RMSE of the NNARX model from the measured window at `start`.
pub fn nnarx_prediction_rmse(model: &NnarxModel, data: &Dataset, start: usize, horizon: usize) -> Result<f64> {
    check_window(data, start, horizon, model.n_past())?;
    let x0 = model.state_from_data(data, start)?;
    let pred = open_loop_predict(model, &x0, &data.inputs[start..start + horizon]);
    Ok(rmse(&pred, &data.outputs[start + 1..=start + horizon]))
}

pub fn predict_benchmark(
    linear: &LinearModel,
    nnarx: &NnarxModel,
    data: &Dataset,
    horizon: usize,
    starts: &[usize],
) -> Result<PredictionTable> {
    if data.len() <= horizon + nnarx.n_past() {
        return Err(Error::domain(format!(
            "held-out log of {} samples is not longer than N_T + N = {}",
            data.len(),
            horizon + nnarx.n_past()
        )));
    }
    let rows = starts
        .iter()
        .map(|&s| {
            Ok(PredictionRow {
                start: s,
                linear_rmse: linear_prediction_rmse(linear, data, s, horizon)?,
                nnarx_rmse: nnarx_prediction_rmse(nnarx, data, s, horizon)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictionTable { horizon, rows })
}
