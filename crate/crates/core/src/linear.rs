//! Two-state linear thermal model: simulation, Kalman filtering and
//! prediction-error identification.
//!
//! ```text
//! x1[k+1] = x1[k] + b_h u_heat[k] + b_c u_cool[k] + n1
//! x2[k+1] = x2[k] + a (x1[k] - x2[k])           + n2
//! y[k]    = x2[k]                                + ny
//! ```

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::optim::{self, Bounds};
use crate::types::Input;

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub a: f64,
    pub b_h: f64,
    pub b_c: f64,
    /// Process-noise covariance of (n1, n2).
    pub q: Mat2,
    /// Measurement-noise variance of ny.
    pub r: f64,
    /// Seconds per model step.
    pub sample_time: f64,
}

impl LinearModel {
    pub fn nominal(a: f64, b_h: f64, b_c: f64, sample_time: f64) -> Self {
        Self {
            a,
            b_h,
            b_c,
            q: [[1e-4, 0.0], [0.0, 1e-4]],
            r: 1e-2,
            sample_time,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 2.0) {
            return Err(Error::Contract(format!("mixing coefficient a = {} not in (0, 2)", self.a)));
        }
        if !is_psd(&self.q) {
            return Err(Error::Contract("process-noise covariance is not PSD".into()));
        }
        if !(self.r >= 0.0) {
            return Err(Error::Contract(format!("measurement variance {} is negative", self.r)));
        }
        Ok(())
    }

    /// Nominal transition `f_l`.
    pub fn transition(&self, x: [f64; 2], u: Input) -> [f64; 2] {
        [
            x[0] + self.b_h * u.heat + self.b_c * u.cool,
            x[1] + self.a * (x[0] - x[1]),
        ]
    }

    /// Output map `g_l`.
    pub fn output(x: [f64; 2]) -> f64 {
        x[1]
    }

    fn a_matrix(&self) -> Mat2 {
        [[1.0, 0.0], [self.a, 1.0 - self.a]]
    }

    /// Outputs `y[1..=len]` of a noise-free open-loop run from `x0`.
    pub fn simulate(&self, x0: [f64; 2], inputs: &[Input]) -> Vec<f64> {
        let mut x = x0;
        inputs
            .iter()
            .map(|&u| {
                x = self.transition(x, u);
                x[1]
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Noise-free step: returns `(x[k+1], y[k])`.
pub fn linear_step(model: &LinearModel, x: [f64; 2], u: Input) -> ([f64; 2], f64) {
    (model.transition(x, u), LinearModel::output(x))
}

fn is_psd(p: &Mat2) -> bool {
    let scale = 1.0 + p[0][0].abs().max(p[1][1].abs());
    let tol = 1e-9 * scale;
    (p[0][1] - p[1][0]).abs() <= tol
        && p[0][0] >= -tol
        && p[1][1] >= -tol
        && p[0][0] * p[1][1] - p[0][1] * p[1][0] >= -tol * scale
        && p.iter().flatten().all(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanEstimate {
    /// State mean, °C.
    pub x: [f64; 2],
    pub p: Mat2,
}

impl KalmanEstimate {
    /// Starts at `(y, y)` with covariance `p0`.
    pub fn from_measurement(y: f64, p0: Mat2) -> Self {
        Self { x: [y, y], p: p0 }
    }

    pub fn is_psd(&self) -> bool {
        is_psd(&self.p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    /// `y_meas - predicted output`.
    pub value: f64,
    pub variance: f64,
    pub gain: [f64; 2],
}

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

fn filter_cycle(model: &LinearModel, est: &KalmanEstimate, u: Input, y: f64) -> (KalmanEstimate, Innovation) {
    let x_pred = model.transition(est.x, u);
    let a = model.a_matrix();
    let mut p_pred = mat_mul(&mat_mul(&a, &est.p), &transpose(&a));
    for i in 0..2 {
        for j in 0..2 {
            p_pred[i][j] += model.q[i][j];
        }
    }
    let e = y - x_pred[1];
    let s = p_pred[1][1] + model.r;
    if !(s > 1e-300) {
        let est = KalmanEstimate { x: x_pred, p: p_pred };
        return (est, Innovation { value: e, variance: 0.0, gain: [0.0; 2] });
    }
    let k = [p_pred[0][1] / s, p_pred[1][1] / s];
    let x = [x_pred[0] + k[0] * e, x_pred[1] + k[1] * e];
    // Joseph form keeps P symmetric PSD.
    let ikc: Mat2 = [[1.0, -k[0]], [0.0, 1.0 - k[1]]];
    let mut p = mat_mul(&mat_mul(&ikc, &p_pred), &transpose(&ikc));
    for i in 0..2 {
        for j in 0..2 {
            p[i][j] += k[i] * k[j] * model.r;
        }
    }
    let off = 0.5 * (p[0][1] + p[1][0]);
    p[0][1] = off;
    p[1][0] = off;
    (KalmanEstimate { x, p }, Innovation { value: e, variance: s, gain: k })
}

/// Predict with the nominal model under `u`, then correct with `y_meas`.
pub fn kalman_update(
    model: &LinearModel,
    est: &KalmanEstimate,
    u: Input,
    y_meas: f64,
) -> Result<(KalmanEstimate, Innovation)> {
    if !est.is_psd() {
        return Err(Error::Contract(format!("covariance {:?} is not symmetric PSD", est.p)));
    }
    Ok(filter_cycle(model, est, u, y_meas))
}

pub fn kalman_step(model: &LinearModel, est: &KalmanEstimate, u: Input, y_meas: f64) -> Result<KalmanEstimate> {
    kalman_update(model, est, u, y_meas).map(|(e, _)| e)
}

/// Estimation settings for [`fit_linear_with`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub restarts: usize,
    /// Relative spread of the random initial guesses.
    pub init_spread: f64,
    pub seed: u64,
    /// Fit / noise-update rounds.
    pub rounds: usize,
    pub max_iterations: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            restarts: 5,
            init_spread: 0.5,
            seed: 17,
            rounds: 2,
            max_iterations: 400,
        }
    }
}

const MIN_SAMPLES: usize = 100;
const Q_FLOOR: f64 = 1e-12;
const R_FLOOR: f64 = 1e-10;

// Decision vector: [a, b_h, b_c, x1_0 - y_0, x2_0 - y_0].
fn innovation_cost(theta: &[f64], q: &Mat2, r: f64, data: &Dataset) -> f64 {
    let model = LinearModel {
        a: theta[0],
        b_h: theta[1],
        b_c: theta[2],
        q: *q,
        r,
        sample_time: data.sample_time,
    };
    let y0 = data.outputs[0];
    let mut est = KalmanEstimate {
        x: [y0 + theta[3], y0 + theta[4]],
        p: *q,
    };
    let mut cost = 0.0;
    for k in 1..data.len() {
        let (next, innov) = filter_cycle(&model, &est, data.inputs[k - 1], data.outputs[k]);
        cost += innov.value * innov.value;
        est = next;
    }
    cost
}

fn fd_gradient(theta: &[f64], g: &mut [f64], q: &Mat2, r: f64, data: &Dataset) -> f64 {
    let f0 = innovation_cost(theta, q, r, data);
    let mut t = theta.to_vec();
    for i in 0..theta.len() {
        let h = 1e-6 * theta[i].abs().max(if i < 3 { 1e-2 } else { 1.0 });
        t[i] = theta[i] + h;
        let fp = innovation_cost(&t, q, r, data);
        t[i] = theta[i] - h;
        let fm = innovation_cost(&t, q, r, data);
        t[i] = theta[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    f0
}

fn parameter_bounds() -> Bounds {
    Bounds::new(
        vec![1e-6, 0.0, -10.0, -100.0, -100.0],
        vec![1.0, 10.0, 0.0, 100.0, 100.0],
    )
}

fn check_excitation(data: &Dataset) -> Result<()> {
    if data.len() < MIN_SAMPLES {
        return Err(Error::domain(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            data.len()
        )));
    }
    if data.outputs.iter().any(|y| !y.is_finite()) {
        return Err(Error::domain("dataset contains non-finite outputs"));
    }
    let spread = |f: fn(&Input) -> f64| {
        let (lo, hi) = data
            .inputs
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        hi - lo
    };
    if spread(|u| u.heat) < 1e-9 {
        return Err(Error::IllConditioned(
            "heating input is constant, b_h is not identifiable".into(),
        ));
    }
    if spread(|u| u.cool) < 1e-9 {
        return Err(Error::IllConditioned(
            "cooling input is constant, b_c is not identifiable".into(),
        ));
    }
    Ok(())
}

/// Covariance matching from a filter pass: `Q = mean(K e² K')`,
/// `R = mean(ε²) + mean(P22)` with ε the a-posteriori output residual.
fn match_covariances(model: &LinearModel, x0: [f64; 2], data: &Dataset) -> (Mat2, f64) {
    let mut est = KalmanEstimate { x: x0, p: model.q };
    let mut q = [[0.0; 2]; 2];
    let mut r = 0.0;
    let n = (data.len() - 1) as f64;
    for k in 1..data.len() {
        let (next, innov) = filter_cycle(model, &est, data.inputs[k - 1], data.outputs[k]);
        let kv = [innov.gain[0] * innov.value, innov.gain[1] * innov.value];
        for i in 0..2 {
            for j in 0..2 {
                q[i][j] += kv[i] * kv[j] / n;
            }
        }
        let post = data.outputs[k] - next.x[1];
        r += (post * post + next.p[1][1]) / n;
        est = next;
    }
    q[0][0] = q[0][0].max(Q_FLOOR);
    q[1][1] = q[1][1].max(Q_FLOOR);
    // keep strictly PD after flooring
    let det_min = q[0][0] * q[1][1] * (1.0 - 1e-9);
    if q[0][1] * q[0][1] > det_min {
        let c = det_min.sqrt().copysign(q[0][1]);
        q[0][1] = c;
        q[1][0] = c;
    }
    (q, r.max(R_FLOOR))
}

/// Fitted model together with the estimated initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFit {
    pub model: LinearModel,
    pub initial_state: [f64; 2],
    /// Sum of squared one-step innovations at the optimum.
    pub cost: f64,
}

pub fn fit_linear(data: &Dataset) -> Result<LinearModel> {
    fit_linear_with(data, &FitSettings::default()).map(|f| f.model)
}

/// Prediction-error estimate of `(a, b_h, b_c)` and the initial state with
/// multistart quasi-Newton descent, alternated with noise covariance updates.
pub fn fit_linear_with(data: &Dataset, settings: &FitSettings) -> Result<LinearFit> {
    check_excitation(data)?;
    let bounds = parameter_bounds();
    let opt = optim::Settings {
        max_iterations: settings.max_iterations,
        pg_tol: 1e-13,
        ..optim::Settings::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let starts: Vec<Vec<f64>> = (0..settings.restarts.max(1))
        .map(|_| {
            let mut jitter = || 1.0 + settings.init_spread * (2.0 * rng.random::<f64>() - 1.0);
            vec![0.1 * jitter(), 0.05 * jitter(), -0.05 * jitter(), 0.0, 0.0]
        })
        .collect();

    let mut q: Mat2 = [[1e-3, 0.0], [0.0, 1e-3]];
    let mut r = 1e-2;
    let mut best: Option<(Vec<f64>, f64)> = None;

    for round in 0..settings.rounds.max(1) {
        let candidates: Vec<Vec<f64>> = match &best {
            Some((theta, _)) if round > 0 => vec![theta.clone()],
            _ => starts.clone(),
        };
        let results: Vec<(Vec<f64>, f64)> = candidates
            .par_iter()
            .map(|x0| {
                let out = optim::minimize(
                    |t, g| fd_gradient(t, g, &q, r, data),
                    x0,
                    &bounds,
                    &opt,
                    None,
                );
                (out.x, out.f)
            })
            .collect();
        let winner = results
            .into_iter()
            .filter(|(_, f)| f.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or_else(|| Error::IllConditioned("no finite innovation cost".into()))?;
        let theta = &winner.0;
        let model = LinearModel {
            a: theta[0],
            b_h: theta[1],
            b_c: theta[2],
            q,
            r,
            sample_time: data.sample_time,
        };
        let y0 = data.outputs[0];
        (q, r) = match_covariances(&model, [y0 + theta[3], y0 + theta[4]], data);
        best = Some(winner);
    }

    let (theta, _) = best.expect("at least one round");
    let y0 = data.outputs[0];
    let cost = innovation_cost(&theta, &q, r, data);
    Ok(LinearFit {
        model: LinearModel {
            a: theta[0],
            b_h: theta[1],
            b_c: theta[2],
            q,
            r,
            sample_time: data.sample_time,
        },
        initial_state: [y0 + theta[3], y0 + theta[4]],
        cost,
    })
}

/// Runs the filter over `data[..=end]` from `(y0, y0)` and returns the
/// a-posteriori estimate at index `end`.
pub fn filter_to(model: &LinearModel, data: &Dataset, end: usize) -> KalmanEstimate {
    let mut est = KalmanEstimate::from_measurement(data.outputs[0], model.q);
    for k in 1..=end.min(data.len() - 1) {
        est = filter_cycle(model, &est, data.inputs[k - 1], data.outputs[k]).0;
    }
    est
}
