//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use tcu_core::mpc::{stage_cost, PredictionModel};
use tcu_core::nnarx::{Sequence, TrainingConfig};
use tcu_core::{Architecture, Dataset, Input, LinearModel, NnarxModel, Normalizer, StageCostParams};

/// Network weights read back from the JSON schema, evaluated with plain
/// loops on an explicit regressor vector.
pub struct WindowNet {
    layers: Vec<(usize, Vec<f64>, Vec<f64>, Vec<f64>)>,
    readout: Vec<f64>,
    bias: f64,
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

impl WindowNet {
    pub fn from_model(model: &NnarxModel) -> Self {
        let v = serde_json::to_value(model).unwrap();
        let layers = v["layers"]
            .as_array()
            .unwrap()
            .iter()
            .map(|l| {
                (
                    l["width"].as_u64().unwrap() as usize,
                    floats(&l["input_weights"]),
                    floats(&l["state_weights"]),
                    floats(&l["bias"]),
                )
            })
            .collect();
        Self {
            layers,
            readout: floats(&v["readout"]["weights"]),
            bias: v["readout"]["bias"].as_f64().unwrap(),
        }
    }

    pub fn eval(&self, phi: &[f64], u: [f64; 2]) -> f64 {
        let mut h = phi.to_vec();
        for (width, w, uw, b) in &self.layers {
            let fan = h.len();
            let mut next = vec![0.0; *width];
            for j in 0..*width {
                let mut s = b[j] + w[2 * j] * u[0] + w[2 * j + 1] * u[1];
                for i in 0..fan {
                    s += uw[j * fan + i] * h[i];
                }
                next[j] = s.tanh();
            }
            h = next;
        }
        self.bias + self.readout.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Free run of the regression `y_{k+1} = eta(y_k..y_{k-N+1}, u_k..u_{k-N})`
    /// on rolling windows of raw history (oldest first).
    pub fn roll(&self, past_y: &[f64], past_u: &[[f64; 2]], inputs: &[[f64; 2]]) -> Vec<f64> {
        let mut ys = past_y.to_vec();
        let mut us = past_u.to_vec();
        let n = ys.len();
        let mut out = Vec::with_capacity(inputs.len());
        for &u in inputs {
            let mut phi = Vec::with_capacity(3 * n);
            for i in 0..n {
                phi.push(ys[ys.len() - n + i]);
                phi.push(us[us.len() - n + i][0]);
                phi.push(us[us.len() - n + i][1]);
            }
            let y = self.eval(&phi, u);
            ys.push(y);
            us.push(u);
            out.push(y);
        }
        out
    }
}

pub fn random_model(seed: u64, arch: Architecture) -> NnarxModel {
    NnarxModel::init(arch, Normalizer::default(), seed).unwrap()
}

/// Model with every weight drawn in `±scale`, so that units leave the
/// linear regime of tanh.
pub fn scrambled_model(seed: u64, arch: Architecture, scale: f64) -> NnarxModel {
    let mut m = random_model(seed, arch);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in m.params_mut() {
        *p = rng.random_range(-scale..scale);
    }
    m
}

pub fn random_inputs(rng: &mut impl Rng, len: usize) -> Vec<Input> {
    (0..len).map(|_| Input::new(rng.random(), rng.random())).collect()
}

pub fn random_sequence(rng: &mut impl Rng, len: usize) -> Sequence {
    Sequence {
        inputs: (0..len).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
        outputs: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// Largest relative error between the analytic training-loss gradient and
/// central differences over `coords` random parameters.
pub fn gradient_check(model: &NnarxModel, seqs: &[Sequence], washout: usize, coords: usize, seed: u64) -> f64 {
    let (_, grad) = tcu_core::nnarx::one_step_loss_and_gradient(model, seqs, washout);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let i = rng.random_range(0..model.n_params());
        let mut plus = model.clone();
        plus.params_mut()[i] += h;
        let mut minus = model.clone();
        minus.params_mut()[i] -= h;
        let fd = (tcu_core::nnarx::one_step_loss(&plus, seqs, washout)
            - tcu_core::nnarx::one_step_loss(&minus, seqs, washout))
            / (2.0 * h);
        let scale = fd.abs().max(grad[i].abs()).max(1e-8);
        worst = worst.max((fd - grad[i]).abs() / scale);
    }
    worst
}

/// Noise stds of process channels (n1, n2) and measurement.
#[derive(Debug, Clone, Copy)]
pub struct LinearNoise {
    pub process: [f64; 2],
    pub measurement: f64,
}

/// Direct evaluation of the two-state model on `T` steps with PRBS-like
/// exclusive inputs; returns the dataset of inputs and measured outputs.
pub fn linear_dataset(a: f64, b_h: f64, b_c: f64, len: usize, noise: Option<LinearNoise>, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let mut x1 = 50.0;
    let mut x2 = 50.0;
    let mut inputs = Vec::with_capacity(len);
    let mut outputs = Vec::with_capacity(len);
    let mut u = Input::ZERO;
    for k in 0..len {
        let meas = noise.map_or(0.0, |n| n.measurement * std.sample(&mut rng));
        outputs.push(x2 + meas);
        if k % 7 == 0 {
            // keep the integrator inside a band
            let push: f64 = if x1 > 60.0 {
                -1.0
            } else if x1 < 40.0 {
                1.0
            } else {
                rng.random_range(-1.0..1.0)
            };
            u = if push > 0.0 {
                Input::new(push.abs() * rng.random::<f64>().max(0.2), 0.0)
            } else {
                Input::new(0.0, push.abs() * rng.random::<f64>().max(0.2))
            };
        }
        inputs.push(u);
        let (n1, n2) = noise.map_or((0.0, 0.0), |n| {
            (n.process[0] * std.sample(&mut rng), n.process[1] * std.sample(&mut rng))
        });
        let nx1 = x1 + b_h * u.heat + b_c * u.cool + n1;
        let nx2 = x2 + a * (x1 - x2) + n2;
        x1 = nx1;
        x2 = nx2;
    }
    Dataset::new(6.0, inputs, outputs).unwrap()
}

/// Input grid `{0, step, ..., 1}^2`.
pub fn input_grid(step: f64) -> Vec<Input> {
    let n = (1.0 / step).round() as usize;
    let axis: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    axis.iter().flat_map(|&h| axis.iter().map(move |&c| Input::new(h, c))).collect()
}

/// Exhaustive minimum of the free-terminal stage-cost sum over the grid for
/// horizons up to 2. The last input only enters through its own stage cost.
pub fn grid_ocp_optimum<M: PredictionModel>(model: &M, x0: &[f64], r: f64, cost: &StageCostParams, np: usize, step: f64) -> f64 {
    let grid = input_grid(step);
    let y0 = model.output(x0);
    let best_last = grid.iter().map(|&u| cost.lambda * u.effort()).fold(f64::INFINITY, f64::min);
    match np {
        1 => grid.iter().map(|&u| stage_cost(y0, u, r, cost)).fold(f64::INFINITY, f64::min),
        2 => {
            let mut next = vec![0.0; x0.len()];
            grid.iter()
                .map(|&u0| {
                    model.step(x0, u0, &mut next);
                    let y1 = model.output(&next);
                    stage_cost(y0, u0, r, cost) + (y1 - r).powi(2) + best_last
                })
                .fold(f64::INFINITY, f64::min)
        }
        _ => panic!("grid oracle covers horizons 1 and 2"),
    }
}

/// Linear model with the structure of the identified surrogate.
pub fn surrogate_linear() -> LinearModel {
    LinearModel::nominal(1.0, 1.2, -1.35, 6.0)
}

/// Training settings for small synthetic round trips.
pub fn quick_training(epochs: usize, lr: f64) -> TrainingConfig {
    TrainingConfig {
        learning_rate: lr,
        max_epochs: epochs,
        tolerance: 0.0,
        ..TrainingConfig::default()
    }
}
