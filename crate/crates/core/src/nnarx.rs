//! Neural NARX model.
//!
//! The next output is regressed by a feed-forward tanh network on a window of
//! past outputs and inputs. The window is kept as the state
//! `x = [z_1, ..., z_N]` with `z_i = (y_{k-N+i}, u_{k-N-1+i})`, newest slot
//! last, so that one model step drops `z_1` and appends `(eta(x, u), u)`.
//!
//! All quantities inside the network are normalized per channel; the
//! [`Normalizer`] stored in the model maps to and from physical units.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::types::Input;

pub const N_INPUTS: usize = 2;
pub const N_OUTPUTS: usize = 1;
/// Width of one packed slot `z_i`.
pub const SLOT: usize = N_OUTPUTS + N_INPUTS;

/// Activation. Satisfies `psi(0) = 0` and is 1-Lipschitz.
#[inline]
pub fn psi(v: f64) -> f64 {
    v.tanh()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Past window length N.
    pub n_past: usize,
    /// Neurons per hidden layer (M = `hidden.len()`).
    pub hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            n_past: 8,
            hidden: vec![10],
        }
    }
}

impl Architecture {
    pub fn state_dim(&self) -> usize {
        self.n_past * SLOT
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_past == 0 || self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid NNARX architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerView {
    width: usize,
    fan_in: usize,
    /// W_l: width x N_INPUTS.
    w: usize,
    /// U_l: width x fan_in.
    u: usize,
    /// b_l: width.
    b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    layers: Vec<LayerView>,
    /// U_0: 1 x width_M.
    readout: usize,
    /// b_0.
    readout_bias: usize,
    len: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let mut off = 0;
        let mut fan_in = arch.state_dim();
        let mut layers = Vec::with_capacity(arch.hidden.len());
        for &width in &arch.hidden {
            let w = off;
            off += width * N_INPUTS;
            let u = off;
            off += width * fan_in;
            let b = off;
            off += width;
            layers.push(LayerView { width, fan_in, w, u, b });
            fan_in = width;
        }
        let readout = off;
        off += fan_in;
        let readout_bias = off;
        off += 1;
        Self {
            layers,
            readout,
            readout_bias,
            len: off,
        }
    }
}

/// Per-channel affine scaling, `normalized = (physical - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub u_mean: [f64; 2],
    pub u_std: [f64; 2],
    pub y_mean: f64,
    pub y_std: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            u_mean: [0.0; 2],
            u_std: [1.0; 2],
            y_mean: 0.0,
            y_std: 1.0,
        }
    }
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-8 { std } else { 1.0 })
}

impl Normalizer {
    pub fn fit(data: &Dataset) -> Self {
        let (hm, hs) = mean_std(data.inputs.iter().map(|u| u.heat));
        let (cm, cs) = mean_std(data.inputs.iter().map(|u| u.cool));
        let (ym, ys) = mean_std(data.outputs.iter().copied());
        Self {
            u_mean: [hm, cm],
            u_std: [hs, cs],
            y_mean: ym,
            y_std: ys,
        }
    }

    pub fn input(&self, u: Input) -> [f64; 2] {
        [
            (u.heat - self.u_mean[0]) / self.u_std[0],
            (u.cool - self.u_mean[1]) / self.u_std[1],
        ]
    }

    pub fn output(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn denorm_output(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }

    pub fn denorm_input(&self, u: [f64; 2]) -> Input {
        Input::new(
            u[0] * self.u_std[0] + self.u_mean[0],
            u[1] * self.u_std[1] + self.u_mean[1],
        )
    }
}

/// Training metadata stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_validation: f64,
    pub final_training: f64,
    pub reached_tolerance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NnarxFile", try_from = "NnarxFile")]
pub struct NnarxModel {
    pub arch: Architecture,
    params: Vec<f64>,
    pub normalizer: Normalizer,
    pub seed: u64,
    pub training: Option<TrainingSummary>,
    layout: Layout,
}

/// Stacked past-window state, normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct NnarxState {
    pub values: Vec<f64>,
}

impl NnarxState {
    pub fn n_past(&self) -> usize {
        self.values.len() / SLOT
    }

    /// Newest packed output, `C x`.
    pub fn output(&self) -> f64 {
        self.values[self.values.len() - SLOT]
    }

    pub fn unpack(&self) -> (Vec<f64>, Vec<[f64; 2]>) {
        self.values
            .chunks_exact(SLOT)
            .map(|z| (z[0], [z[1], z[2]]))
            .unzip()
    }
}

/// Packs `N` past outputs and `N` past inputs (oldest first) into a state.
pub fn pack_state(past_y: &[f64], past_u: &[[f64; 2]]) -> Result<NnarxState> {
    if past_y.is_empty() || past_y.len() != past_u.len() {
        return Err(Error::domain(format!(
            "need equally many past outputs and inputs, got {} and {}",
            past_y.len(),
            past_u.len()
        )));
    }
    let values = past_y
        .iter()
        .zip(past_u)
        .flat_map(|(&y, u)| [y, u[0], u[1]])
        .collect();
    Ok(NnarxState { values })
}

impl NnarxModel {
    /// Weights drawn uniformly in `±1/sqrt(fan_in)`.
    pub fn init(arch: Architecture, normalizer: Normalizer, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.len];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, p: &mut [f64]| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in &mut p[range] {
                *v = rng.random_range(-bound..bound);
            }
        };
        for l in &layout.layers {
            let fan = l.fan_in + N_INPUTS;
            fill(l.w..l.b + l.width, fan, &mut params);
        }
        let last = layout.layers.last().map_or(0, |l| l.width);
        fill(layout.readout..layout.len, last, &mut params);
        Ok(Self {
            arch,
            params,
            normalizer,
            seed,
            training: None,
            layout,
        })
    }

    /// Model with every weight and bias zero.
    pub fn zeros(arch: Architecture, normalizer: Normalizer) -> Result<Self> {
        let mut m = Self::init(arch, normalizer, 0)?;
        m.params.iter_mut().for_each(|p| *p = 0.0);
        Ok(m)
    }

    pub fn n_past(&self) -> usize {
        self.arch.n_past
    }

    pub fn state_dim(&self) -> usize {
        self.arch.state_dim()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Sets every bias of hidden layer `layer` to `value`.
    pub fn set_hidden_bias(&mut self, layer: usize, value: f64) {
        let l = self.layout.layers[layer];
        self.params[l.b..l.b + l.width].iter_mut().for_each(|p| *p = value);
    }

    /// Sets the readout row `U_0` and bias `b_0`.
    pub fn set_readout(&mut self, weights: &[f64], bias: f64) {
        let r = self.layout.readout;
        self.params[r..r + weights.len()].copy_from_slice(weights);
        self.params[self.layout.readout_bias] = bias;
    }

    fn activations(&self) -> Vec<Vec<f64>> {
        self.layout.layers.iter().map(|l| vec![0.0; l.width]).collect()
    }

    fn forward(&self, x: &[f64], u: [f64; 2], acts: &mut [Vec<f64>]) -> f64 {
        debug_assert_eq!(x.len(), self.state_dim());
        let p = &self.params;
        for (li, l) in self.layout.layers.iter().enumerate() {
            let (done, rest) = acts.split_at_mut(li);
            let input: &[f64] = if li == 0 { x } else { &done[li - 1] };
            let out = &mut rest[0];
            for j in 0..l.width {
                let wrow = &p[l.w + j * N_INPUTS..l.w + (j + 1) * N_INPUTS];
                let urow = &p[l.u + j * l.fan_in..l.u + (j + 1) * l.fan_in];
                let mut s = p[l.b + j] + wrow[0] * u[0] + wrow[1] * u[1];
                for (a, b) in urow.iter().zip(input) {
                    s += a * b;
                }
                out[j] = psi(s);
            }
        }
        let last = acts.last().expect("at least one hidden layer");
        let r = &p[self.layout.readout..self.layout.readout + last.len()];
        p[self.layout.readout_bias] + r.iter().zip(last).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Reverse pass for a scalar seed `d_eta`. Accumulates into whichever
    /// of parameter, state and input gradients are requested.
    fn backward(
        &self,
        x: &[f64],
        u: [f64; 2],
        acts: &[Vec<f64>],
        d_eta: f64,
        mut grad: Option<&mut [f64]>,
        dx: Option<&mut [f64]>,
        du: &mut [f64; 2],
    ) {
        let p = &self.params;
        let layers = &self.layout.layers;
        let m = layers.len();
        let last = &acts[m - 1];
        let r = self.layout.readout;
        if let Some(g) = grad.as_deref_mut() {
            for j in 0..last.len() {
                g[r + j] += d_eta * last[j];
            }
            g[self.layout.readout_bias] += d_eta;
        }
        // delta = dL/d(pre-activation) of the current layer
        let mut delta: Vec<f64> = (0..last.len())
            .map(|j| d_eta * p[r + j] * (1.0 - last[j] * last[j]))
            .collect();
        let mut dx = dx;
        for li in (0..m).rev() {
            let l = layers[li];
            let input: &[f64] = if li == 0 { x } else { &acts[li - 1] };
            if let Some(g) = grad.as_deref_mut() {
                for j in 0..l.width {
                    let d = delta[j];
                    g[l.b + j] += d;
                    g[l.w + j * N_INPUTS] += d * u[0];
                    g[l.w + j * N_INPUTS + 1] += d * u[1];
                    let row = &mut g[l.u + j * l.fan_in..l.u + (j + 1) * l.fan_in];
                    for (gv, iv) in row.iter_mut().zip(input) {
                        *gv += d * iv;
                    }
                }
            }
            for j in 0..l.width {
                du[0] += p[l.w + j * N_INPUTS] * delta[j];
                du[1] += p[l.w + j * N_INPUTS + 1] * delta[j];
            }
            if li == 0 {
                if let Some(dx) = dx.as_deref_mut() {
                    for j in 0..l.width {
                        let row = &p[l.u + j * l.fan_in..l.u + (j + 1) * l.fan_in];
                        for (dv, w) in dx.iter_mut().zip(row) {
                            *dv += delta[j] * w;
                        }
                    }
                }
            } else {
                let prev = &acts[li - 1];
                let mut next = vec![0.0; l.fan_in];
                for j in 0..l.width {
                    let row = &p[l.u + j * l.fan_in..l.u + (j + 1) * l.fan_in];
                    for (nv, w) in next.iter_mut().zip(row) {
                        *nv += delta[j] * w;
                    }
                }
                for (nv, a) in next.iter_mut().zip(prev) {
                    *nv *= 1.0 - a * a;
                }
                delta = next;
            }
        }
    }

    /// Regression `eta(x, u)` on normalized state and input.
    pub fn eta(&self, x: &[f64], u: [f64; 2]) -> f64 {
        let mut acts = self.activations();
        self.forward(x, u, &mut acts)
    }

    /// `eta` with its gradient with respect to the state and the input.
    pub fn eta_with_gradient(&self, x: &[f64], u: [f64; 2]) -> (f64, Vec<f64>, [f64; 2]) {
        let mut acts = self.activations();
        let y = self.forward(x, u, &mut acts);
        let mut dx = vec![0.0; x.len()];
        let mut du = [0.0; 2];
        self.backward(x, u, &acts, 1.0, None, Some(&mut dx), &mut du);
        (y, dx, du)
    }

    /// Gradient of `eta` with respect to every parameter.
    pub fn eta_param_gradient(&self, x: &[f64], u: [f64; 2]) -> Vec<f64> {
        let mut acts = self.activations();
        self.forward(x, u, &mut acts);
        let mut g = vec![0.0; self.params.len()];
        let mut du = [0.0; 2];
        self.backward(x, u, &acts, 1.0, Some(&mut g), None, &mut du);
        g
    }

    /// State of the window ending at index `k` of `data`: outputs
    /// `y[k-N+1..=k]` and inputs `u[k-N..k]`, normalized.
    pub fn state_from_data(&self, data: &Dataset, k: usize) -> Result<NnarxState> {
        let n = self.n_past();
        if k < n || k >= data.len() {
            return Err(Error::domain(format!(
                "state at index {k} needs {n} samples of history within {} samples",
                data.len()
            )));
        }
        let ys: Vec<f64> = (k + 1 - n..=k).map(|i| self.normalizer.output(data.outputs[i])).collect();
        let us: Vec<[f64; 2]> = (k - n..k).map(|i| self.normalizer.input(data.inputs[i])).collect();
        pack_state(&ys, &us)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Feed-forward regression on a packed state.
pub fn ffnn_eval(model: &NnarxModel, x: &NnarxState, u: [f64; 2]) -> f64 {
    model.eta(&x.values, u)
}

/// Shift-structure state update: returns `(x', y')` with `y' = C x'`.
pub fn nnarx_step(model: &NnarxModel, x: &NnarxState, u: [f64; 2]) -> (NnarxState, f64) {
    let y = ffnn_eval(model, x, u);
    let mut values = Vec::with_capacity(x.values.len());
    values.extend_from_slice(&x.values[SLOT..]);
    values.extend_from_slice(&[y, u[0], u[1]]);
    (NnarxState { values }, y)
}

/// Free-run prediction from `x0` under physical inputs; returns °C.
pub fn open_loop_predict(model: &NnarxModel, x0: &NnarxState, inputs: &[Input]) -> Vec<f64> {
    let mut x = x0.clone();
    inputs
        .iter()
        .map(|&u| {
            let (next, y) = nnarx_step(model, &x, model.normalizer.input(u));
            x = next;
            model.normalizer.denorm_output(y)
        })
        .collect()
}

/// Draws `n_t` windows of length `n_s` at uniformly random offsets.
pub fn extract_subsequences(data: &Dataset, n_t: usize, n_s: usize, seed: u64) -> Result<Vec<Dataset>> {
    if n_s == 0 || data.len() < n_s {
        return Err(Error::domain(format!(
            "log of {} samples is too short for subsequences of length {n_s}",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_start = data.len() - n_s;
    (0..n_t)
        .map(|_| {
            let start = rng.random_range(0..=max_start);
            data.slice(start, n_s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub n_train: usize,
    pub n_valid: usize,
    pub seq_len: usize,
    pub washout: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub max_epochs: usize,
    /// Stop when the validation criterion falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            n_train: 84,
            n_valid: 32,
            seq_len: 133,
            washout: 8,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            max_epochs: 5000,
            tolerance: 1e-4,
            seed: 2024,
        }
    }
}

/// A subsequence mapped into normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub inputs: Vec<[f64; 2]>,
    pub outputs: Vec<f64>,
}

impl Sequence {
    pub fn from_dataset(data: &Dataset, norm: &Normalizer) -> Self {
        Self {
            inputs: data.inputs.iter().map(|&u| norm.input(u)).collect(),
            outputs: data.outputs.iter().map(|&y| norm.output(y)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    /// Teacher-forced regressor for target index `t`: outputs `y[t-N..t]`,
    /// inputs `u[t-N-1..t-1]`, indices before 0 padded with sample 0.
    fn window(&self, t: usize, n: usize, x: &mut [f64]) -> [f64; 2] {
        for i in 0..n {
            let yi = (t + i).saturating_sub(n);
            let ui = (t + i).saturating_sub(n + 1);
            x[i * SLOT] = self.outputs[yi];
            x[i * SLOT + 1] = self.inputs[ui][0];
            x[i * SLOT + 2] = self.inputs[ui][1];
        }
        self.inputs[t - 1]
    }
}

fn sequence_loss(
    model: &NnarxModel,
    seq: &Sequence,
    washout: usize,
    grad: Option<&mut [f64]>,
) -> (f64, usize) {
    let n = model.n_past();
    let mut x = vec![0.0; model.state_dim()];
    let mut acts = model.activations();
    let mut sse = 0.0;
    let mut terms = 0;
    let mut du = [0.0; 2];
    let mut grad = grad;
    for t in washout.max(1)..seq.len() {
        let u = seq.window(t, n, &mut x);
        let pred = model.forward(&x, u, &mut acts);
        let err = pred - seq.outputs[t];
        sse += err * err;
        terms += 1;
        if let Some(g) = grad.as_deref_mut() {
            model.backward(&x, u, &acts, 2.0 * err, Some(g), None, &mut du);
        }
    }
    (sse, terms)
}

/// One-step prediction criterion `alpha * sum (y_hat - y)^2` over all
/// sequences after the washout, `alpha = 1 / (number of terms)`.
pub fn one_step_loss(model: &NnarxModel, seqs: &[Sequence], washout: usize) -> f64 {
    let parts: Vec<(f64, usize)> = seqs
        .par_iter()
        .map(|s| sequence_loss(model, s, washout, None))
        .collect();
    let (sse, terms) = parts.iter().fold((0.0, 0), |(a, b), (s, t)| (a + s, b + t));
    if terms == 0 {
        0.0
    } else {
        sse / terms as f64
    }
}

/// Criterion value and its exact gradient with respect to every parameter.
pub fn one_step_loss_and_gradient(model: &NnarxModel, seqs: &[Sequence], washout: usize) -> (f64, Vec<f64>) {
    let np = model.n_params();
    let parts: Vec<(f64, usize, Vec<f64>)> = seqs
        .par_iter()
        .map(|s| {
            let mut g = vec![0.0; np];
            let (sse, terms) = sequence_loss(model, s, washout, Some(&mut g));
            (sse, terms, g)
        })
        .collect();
    let mut grad = vec![0.0; np];
    let mut sse = 0.0;
    let mut terms = 0;
    for (s, t, g) in &parts {
        sse += s;
        terms += t;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    if terms == 0 {
        return (0.0, grad);
    }
    let alpha = 1.0 / terms as f64;
    grad.iter_mut().for_each(|g| *g *= alpha);
    (sse * alpha, grad)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingReport {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub summary: TrainingSummary,
}

impl TrainingReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["epoch", "train_loss", "validation_loss"])?;
        for (e, (t, v)) in self.train_loss.iter().zip(&self.validation_loss).enumerate() {
            wtr.write_record([(e + 1).to_string(), t.to_string(), v.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Full-batch Adam on the one-step criterion. Returns the weights with the
/// best validation criterion; stops early once it drops below the tolerance.
pub fn train(
    model: &NnarxModel,
    train_set: &[Dataset],
    val_set: &[Dataset],
    cfg: &TrainingConfig,
) -> Result<(NnarxModel, TrainingReport)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::domain("training and validation sets must be non-empty"));
    }
    if let Some(s) = train_set.iter().chain(val_set).find(|s| s.len() <= cfg.washout) {
        return Err(Error::domain(format!(
            "subsequence of length {} does not exceed the washout {}",
            s.len(),
            cfg.washout
        )));
    }
    let norm = model.normalizer;
    let train_seqs: Vec<Sequence> = train_set.iter().map(|d| Sequence::from_dataset(d, &norm)).collect();
    let val_seqs: Vec<Sequence> = val_set.iter().map(|d| Sequence::from_dataset(d, &norm)).collect();

    let mut current = model.clone();
    let np = current.n_params();
    let mut m1 = vec![0.0; np];
    let mut m2 = vec![0.0; np];
    let mut report = TrainingReport::default();
    let mut best = current.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut reached = false;

    for epoch in 1..=cfg.max_epochs {
        let (loss, grad) = one_step_loss_and_gradient(&current, &train_seqs, cfg.washout);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch, loss });
        }
        let b1t = 1.0 - cfg.beta1.powi(epoch as i32);
        let b2t = 1.0 - cfg.beta2.powi(epoch as i32);
        for i in 0..np {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let step = cfg.learning_rate * (m1[i] / b1t) / ((m2[i] / b2t).sqrt() + 1e-8);
            current.params[i] -= step;
        }
        let val = one_step_loss(&current, &val_seqs, cfg.washout);
        if !val.is_finite() {
            return Err(Error::Divergence { epoch, loss: val });
        }
        report.train_loss.push(loss);
        report.validation_loss.push(val);
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best.params.copy_from_slice(&current.params);
        }
        if val < cfg.tolerance {
            reached = true;
            break;
        }
    }

    best.training = Some(TrainingSummary {
        epochs: report.train_loss.len(),
        best_epoch,
        best_validation: best_val,
        final_training: report.train_loss.last().copied().unwrap_or(f64::NAN),
        reached_tolerance: reached,
    });
    report.summary = best.training.clone().unwrap_or_default();
    Ok((best, report))
}

// ---- JSON schema ----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerFile {
    width: usize,
    /// W_l, row-major width x 2.
    input_weights: Vec<f64>,
    /// U_l, row-major width x fan_in.
    state_weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReadoutFile {
    weights: Vec<f64>,
    bias: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct NnarxFile {
    n_past: usize,
    n_inputs: usize,
    n_outputs: usize,
    activation: String,
    layers: Vec<LayerFile>,
    readout: ReadoutFile,
    normalizer: Normalizer,
    seed: u64,
    #[serde(default)]
    training: Option<TrainingSummary>,
}

impl From<NnarxModel> for NnarxFile {
    fn from(m: NnarxModel) -> Self {
        let p = &m.params;
        let layers = m
            .layout
            .layers
            .iter()
            .map(|l| LayerFile {
                width: l.width,
                input_weights: p[l.w..l.u].to_vec(),
                state_weights: p[l.u..l.b].to_vec(),
                bias: p[l.b..l.b + l.width].to_vec(),
            })
            .collect();
        NnarxFile {
            n_past: m.arch.n_past,
            n_inputs: N_INPUTS,
            n_outputs: N_OUTPUTS,
            activation: "tanh".into(),
            layers,
            readout: ReadoutFile {
                weights: p[m.layout.readout..m.layout.readout_bias].to_vec(),
                bias: p[m.layout.readout_bias],
            },
            normalizer: m.normalizer,
            seed: m.seed,
            training: m.training,
        }
    }
}

impl TryFrom<NnarxFile> for NnarxModel {
    type Error = Error;

    fn try_from(f: NnarxFile) -> Result<Self> {
        if f.n_inputs != N_INPUTS || f.n_outputs != N_OUTPUTS || f.activation != "tanh" {
            return Err(Error::Config(format!(
                "unsupported NNARX file: {} inputs, {} outputs, activation {}",
                f.n_inputs, f.n_outputs, f.activation
            )));
        }
        let arch = Architecture {
            n_past: f.n_past,
            hidden: f.layers.iter().map(|l| l.width).collect(),
        };
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = Vec::with_capacity(layout.len);
        for (lf, lv) in f.layers.iter().zip(&layout.layers) {
            if lf.input_weights.len() != lv.width * N_INPUTS
                || lf.state_weights.len() != lv.width * lv.fan_in
                || lf.bias.len() != lv.width
            {
                return Err(Error::Config("NNARX layer dimensions are inconsistent".into()));
            }
            params.extend_from_slice(&lf.input_weights);
            params.extend_from_slice(&lf.state_weights);
            params.extend_from_slice(&lf.bias);
        }
        if f.readout.weights.len() != *arch.hidden.last().unwrap_or(&0) {
            return Err(Error::Config("NNARX readout width is inconsistent".into()));
        }
        params.extend_from_slice(&f.readout.weights);
        params.push(f.readout.bias);
        Ok(Self {
            arch,
            params,
            normalizer: f.normalizer,
            seed: f.seed,
            training: f.training,
            layout,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(n: usize, hidden: &[usize]) -> Architecture {
        Architecture {
            n_past: n,
            hidden: hidden.to_vec(),
        }
    }

    #[test]
    fn pack_state_stacks_slots() {
        let x = pack_state(&[1.0, 2.0], &[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(x.values, vec![1.0, 0.0, 0.0, 2.0, 1.0, 0.0]);
        assert_eq!(x.output(), 2.0);
        let (ys, us) = x.unpack();
        assert_eq!(ys, vec![1.0, 2.0]);
        assert_eq!(us, vec![[0.0, 0.0], [1.0, 0.0]]);
        assert!(pack_state(&[1.0], &[]).is_err());
        assert!(pack_state(&[], &[]).is_err());
    }

    #[test]
    fn zero_model_outputs_zero() {
        let m = NnarxModel::zeros(arch(3, &[4]), Normalizer::default()).unwrap();
        let mut x = pack_state(&[0.0; 3], &[[0.0; 2]; 3]).unwrap();
        let inputs = [[1.0, 0.0], [0.5, 0.25], [0.0, 1.0]];
        for u in inputs {
            let (next, y) = nnarx_step(&m, &x, u);
            assert_eq!(y, 0.0);
            x = next;
        }
        let (ys, us) = x.unpack();
        assert_eq!(ys, vec![0.0; 3]);
        assert_eq!(us, inputs.to_vec());
    }

    #[test]
    fn constant_bias_closed_form() {
        let mut m = NnarxModel::zeros(arch(2, &[5]), Normalizer::default()).unwrap();
        m.set_hidden_bias(0, 0.7);
        m.set_readout(&[1.0; 5], 0.0);
        let x = pack_state(&[0.3, -1.0], &[[0.2, 0.0], [0.0, 0.9]]).unwrap();
        assert!((ffnn_eval(&m, &x, [0.4, 0.1]) - 5.0 * 0.7f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn activation_properties() {
        assert_eq!(psi(0.0), 0.0);
        let grid: Vec<f64> = (-60..=60).map(|i| i as f64 * 0.1).collect();
        for &a in &grid {
            for &b in &grid {
                assert!((psi(a) - psi(b)).abs() <= (a - b).abs() + 1e-15);
            }
        }
    }

    #[test]
    fn layout_dimensions() {
        let m = NnarxModel::init(arch(8, &[10]), Normalizer::default(), 1).unwrap();
        // W: 10x2, U: 10x24, b: 10, U_0: 10, b_0: 1
        assert_eq!(m.n_params(), 20 + 240 + 10 + 10 + 1);
        let deep = NnarxModel::init(arch(4, &[6, 3]), Normalizer::default(), 1).unwrap();
        assert_eq!(deep.n_params(), (12 + 72 + 6) + (6 + 18 + 3) + 3 + 1);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = NnarxModel::init(arch(8, &[10]), Normalizer::default(), 5).unwrap();
        let b = NnarxModel::init(arch(8, &[10]), Normalizer::default(), 5).unwrap();
        assert_eq!(a.params(), b.params());
        let bound = 1.0 / 26.0f64.sqrt();
        assert!(a.params()[..270].iter().all(|p| p.abs() <= bound));
    }

    #[test]
    fn json_round_trip_preserves_weights() {
        let m = NnarxModel::init(arch(3, &[4, 2]), Normalizer::default(), 9).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["layers"][0]["state_weights"].as_array().unwrap().len(), 4 * 9);
        let back: NnarxModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn subsequence_extraction() {
        let n = 200;
        let data = Dataset::new(
            6.0,
            (0..n).map(|k| Input::new(k as f64 / n as f64, 0.0)).collect(),
            (0..n).map(|k| k as f64).collect(),
        )
        .unwrap();
        let full = extract_subsequences(&data, 1, n, 3).unwrap();
        assert_eq!(full[0], data);
        let a = extract_subsequences(&data, 10, 50, 3).unwrap();
        let b = extract_subsequences(&data, 10, 50, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.len() == 50));
        assert!(extract_subsequences(&data, 1, n + 1, 3).is_err());
    }

    #[test]
    fn open_loop_with_no_inputs_is_empty() {
        let m = NnarxModel::init(arch(2, &[3]), Normalizer::default(), 1).unwrap();
        let x = pack_state(&[0.0; 2], &[[0.0; 2]; 2]).unwrap();
        assert!(open_loop_predict(&m, &x, &[]).is_empty());
    }

    #[test]
    fn divergence_is_reported() {
        let data = Dataset::new(
            6.0,
            (0..40).map(|k| Input::new((k % 2) as f64, 0.0)).collect(),
            (0..40).map(|k| if k == 20 { f64::NAN } else { 1.0 }).collect(),
        )
        .unwrap();
        let m = NnarxModel::init(arch(2, &[3]), Normalizer::default(), 1).unwrap();
        let cfg = TrainingConfig {
            washout: 2,
            max_epochs: 3,
            ..TrainingConfig::default()
        };
        match train(&m, &[data.clone()], &[data], &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
