//! Software surrogate of the temperature control unit and its external
//! circuit.
//!
//! The unit holds a well-mixed tank heated by a resistance and cooled by a
//! water coil. Fluid leaves the tank at the feed temperature, travels through
//! an external circuit modelled as a pure transport delay with a small loss
//! to ambient, and returns into the tank. Two deliberate nonlinearities keep
//! the plant outside the two-state linear model class: heater efficiency
//! droops with tank temperature, and coil cooling is proportional to the
//! tank/cooling-water temperature difference.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Bits;

/// Plant clock, seconds.
pub const PLANT_DT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Ambient temperature, °C.
    pub ambient: f64,
    /// Cooling-water temperature, °C.
    pub cooling_water: f64,
    /// Tank heating rate at full power and ambient temperature, °C/s.
    pub heat_gain: f64,
    /// Relative heater efficiency loss per °C above ambient.
    pub heater_droop: f64,
    /// Coil cooling rate per °C of tank/cooling-water difference, 1/s.
    pub cool_coeff: f64,
    /// Tank loss toward ambient, 1/s.
    pub loss_coeff: f64,
    /// Fraction of tank volume exchanged with the circuit per second.
    pub flow_rate: f64,
    /// Fraction of the excess over ambient lost during one circuit transit.
    pub pipe_loss: f64,
    /// Transport delay of the external circuit, seconds.
    pub delay_seconds: f64,
    /// Std of the per-second tank temperature disturbance, °C.
    pub process_noise_std: f64,
    /// Std of the feed temperature sensor noise, °C.
    pub measurement_noise_std: f64,
    /// Initial temperature of the whole circuit, °C.
    pub initial_temperature: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            ambient: 20.0,
            cooling_water: 15.0,
            heat_gain: 0.5,
            heater_droop: 0.005,
            cool_coeff: 0.01,
            loss_coeff: 0.0005,
            flow_rate: 0.02,
            pipe_loss: 0.01,
            delay_seconds: 30.0,
            process_noise_std: 0.005,
            measurement_noise_std: 0.02,
            initial_temperature: 30.0,
        }
    }
}

/// Physical saturation band of every simulated temperature.
pub const PHYSICAL_BAND: (f64, f64) = (0.0, 200.0);

impl PlantParams {
    pub fn noiseless(mut self) -> Self {
        self.process_noise_std = 0.0;
        self.measurement_noise_std = 0.0;
        self
    }

    pub fn delay_steps(&self) -> usize {
        ((self.delay_seconds / PLANT_DT).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("heat_gain", self.heat_gain),
            ("cool_coeff", self.cool_coeff),
            ("flow_rate", self.flow_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("plant.{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("heater_droop", self.heater_droop),
            ("loss_coeff", self.loss_coeff),
            ("pipe_loss", self.pipe_loss),
            ("process_noise_std", self.process_noise_std),
            ("measurement_noise_std", self.measurement_noise_std),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("plant.{name} must be non-negative, got {v}")));
            }
        }
        if self.delay_seconds < PLANT_DT {
            return Err(Error::Config(format!(
                "plant.delay_seconds must be at least {PLANT_DT} s"
            )));
        }
        if self.flow_rate + self.loss_coeff + self.heat_gain * self.heater_droop + self.cool_coeff
            >= 1.0
        {
            return Err(Error::Config("plant rates too large for a 1 s step".into()));
        }
        Ok(())
    }

    /// Closed-form steady temperature under constant heating duty `heat`
    /// with the coil closed and noise off.
    pub fn steady_temperature(&self, heat: f64) -> f64 {
        let excess = self.heat_gain * heat
            / (self.flow_rate * self.pipe_loss + self.heat_gain * self.heater_droop * heat + self.loss_coeff);
        self.ambient + excess
    }

    fn heater_efficiency(&self, t: f64) -> f64 {
        (1.0 - self.heater_droop * (t - self.ambient)).clamp(0.0, 1.0)
    }
}

/// Ground-truth simulator state.
#[derive(Debug, Clone)]
pub struct PlantState {
    /// Tank temperature, equal to the feed temperature, °C.
    pub tank: f64,
    /// Fluid in transit through the external circuit, oldest first, °C.
    pub delay_line: VecDeque<f64>,
    /// Cooling-water temperature, °C.
    pub cooling_water: f64,
    rng: ChaCha8Rng,
}

impl PlantState {
    pub fn new(params: &PlantParams, seed: u64) -> Self {
        let t0 = params.initial_temperature;
        Self {
            tank: t0,
            delay_line: std::iter::repeat_n(t0, params.delay_steps()).collect(),
            cooling_water: params.cooling_water,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Temperature of the fluid about to re-enter the tank, °C.
    pub fn return_temperature(&self) -> f64 {
        self.delay_line.front().copied().unwrap_or(self.tank)
    }

    fn normal(&mut self, std: f64) -> f64 {
        if std == 0.0 {
            return 0.0;
        }
        let z: f64 = StandardNormal.sample(&mut self.rng);
        std * z
    }
}

/// Advances the plant by one second under the binary command `bits`.
pub fn plant_step(state: &mut PlantState, params: &PlantParams, bits: Bits) {
    let (lo, hi) = PHYSICAL_BAND;
    let t = state.tank;
    let transit = state.delay_line.pop_front().unwrap_or(t);
    let returned = params.ambient + (transit - params.ambient) * (1.0 - params.pipe_loss);

    let mut dt = params.flow_rate * (returned - t) - params.loss_coeff * (t - params.ambient);
    if bits.heat {
        dt += params.heat_gain * params.heater_efficiency(t);
    }
    if bits.cool {
        dt -= params.cool_coeff * (t - state.cooling_water).max(0.0);
    }
    dt += state.normal(params.process_noise_std);

    state.tank = (t + PLANT_DT * dt).clamp(lo, hi);
    state.delay_line.push_back(state.tank);
}

/// Reads the feed temperature sensor, °C.
pub fn measure(state: &mut PlantState, params: &PlantParams) -> f64 {
    let noise = state.normal(params.measurement_noise_std);
    state.tank + noise
}
