//! Discrete PI controller with a heat/cool split and conditional-integration
//! anti-windup.

use serde::{Deserialize, Serialize};

use crate::types::Input;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiGains {
    /// Proportional gain, 1/°C.
    pub kp: f64,
    /// Integral gain, 1/(°C·step).
    pub ki: f64,
    pub anti_windup: bool,
}

impl Default for PiGains {
    fn default() -> Self {
        Self {
            kp: 0.8,
            ki: 0.01,
            anti_windup: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PiState {
    pub gains: PiGains,
    /// Accumulated tracking error, °C·steps.
    pub integral: f64,
    /// Whether the last output saturated (integral was frozen).
    pub saturated: bool,
}

impl PiState {
    pub fn new(gains: PiGains) -> Self {
        Self {
            gains,
            integral: 0.0,
            saturated: false,
        }
    }
}

/// Splits a signed command in `[-1, 1]` into heating and cooling duties.
pub fn split_command(u_pi: f64) -> Input {
    let heat = if u_pi >= 1.0 {
        1.0
    } else if u_pi <= 0.0 {
        0.0
    } else {
        u_pi
    };
    let cool = if u_pi <= -1.0 {
        1.0
    } else if u_pi >= 0.0 {
        0.0
    } else {
        -u_pi
    };
    Input { heat, cool }
}

/// One controller update for reference `r` and measurement `y`.
///
/// The error sum includes the current error. When anti-windup is enabled
/// and the resulting command saturates (`|u_pi| >= 1`), the sum is left
/// unchanged.
pub fn pi_step(state: &mut PiState, r: f64, y: f64) -> Input {
    let e = r - y;
    let candidate = state.integral + e;
    let u_pi = state.gains.kp * e + state.gains.ki * candidate;
    state.saturated = u_pi.abs() >= 1.0;
    if !(state.gains.anti_windup && state.saturated) {
        state.integral = candidate;
    }
    split_command(u_pi)
}
