//! Delta modulation, clock resampling and reference profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Bits, Input};

/// First-order delta modulator for one actuator channel.
///
/// Emits a 1 whenever the running count of emitted bits is strictly below
/// the running sum of analog commands (new sample included), otherwise 0.
/// For inputs in `[0, 1]` the discrepancy `accum_analog - accum_digital`
/// stays in `(-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeltaModulator {
    accum_analog: f64,
    accum_digital: u64,
}

impl DeltaModulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accum_analog(&self) -> f64 {
        self.accum_analog
    }

    pub fn accum_digital(&self) -> u64 {
        self.accum_digital
    }

    /// Running analog sum minus running bit count.
    pub fn discrepancy(&self) -> f64 {
        self.accum_analog - self.accum_digital as f64
    }

    pub fn step(&mut self, u: f64) -> Result<bool> {
        if !u.is_finite() || !(0.0..=1.0).contains(&u) {
            return Err(Error::domain(format!("analog command {u} not in [0, 1]")));
        }
        self.accum_analog += u;
        let bit = (self.accum_digital as f64) < self.accum_analog;
        if bit {
            self.accum_digital += 1;
        }
        Ok(bit)
    }
}

/// Modulates a single analog command; see [`DeltaModulator::step`].
pub fn modulate_step(modulator: &mut DeltaModulator, u: f64) -> Result<bool> {
    modulator.step(u)
}

/// A pair of channel modulators, one for heating and one for cooling.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InputModulator {
    pub heat: DeltaModulator,
    pub cool: DeltaModulator,
}

impl InputModulator {
    pub fn step(&mut self, u: Input) -> Result<Bits> {
        Ok(Bits {
            heat: self.heat.step(u.heat)?,
            cool: self.cool.step(u.cool)?,
        })
    }
}

fn check_factor(len: usize, factor: usize) -> Result<()> {
    if factor == 0 {
        return Err(Error::domain("resampling factor must be positive"));
    }
    if len == 0 {
        return Err(Error::domain("cannot resample an empty series"));
    }
    if len < factor {
        return Err(Error::domain(format!(
            "series of length {len} is shorter than the resampling factor {factor}"
        )));
    }
    Ok(())
}

/// Keeps the sample at every instant `k * factor`. Used for measured
/// temperatures, which are instantaneous readings.
pub fn decimate(series: &[f64], factor: usize) -> Result<Vec<f64>> {
    check_factor(series.len(), factor)?;
    let n = series.len() / factor;
    Ok((0..n).map(|k| series[k * factor]).collect())
}

/// Averages each full window of `factor` samples. Used for duty-ratio inputs
/// so that the energy delivered over a window is preserved.
pub fn window_mean(series: &[f64], factor: usize) -> Result<Vec<f64>> {
    check_factor(series.len(), factor)?;
    Ok(series
        .chunks_exact(factor)
        .map(|w| w.iter().sum::<f64>() / factor as f64)
        .collect())
}

/// Which resampling rule a column follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resampling {
    Decimate,
    WindowMean,
}

pub fn resample_log(series: &[f64], factor: usize, rule: Resampling) -> Result<Vec<f64>> {
    match rule {
        Resampling::Decimate => decimate(series, factor),
        Resampling::WindowMean => window_mean(series, factor),
    }
}

/// One constant-level segment of a reference profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Seconds.
    pub duration: f64,
    /// Degrees Celsius.
    pub level: f64,
}

/// Piecewise-constant temperature reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferenceProfile {
    pub segments: Vec<Segment>,
}

impl ReferenceProfile {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self::new(
            pairs
                .iter()
                .map(|&(duration, level)| Segment { duration, level })
                .collect(),
        )
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn distinct_levels(&self) -> usize {
        let mut levels: Vec<f64> = self.segments.iter().map(|s| s.level).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        levels.len()
    }

    /// Checks positivity of durations and that every level is in `[t_min, t_max]`.
    pub fn validate(&self, t_min: f64, t_max: f64) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::domain("reference profile has no segments"));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.duration > 0.0 && s.duration.is_finite()) {
                return Err(Error::domain(format!(
                    "segment {i} has non-positive duration {}",
                    s.duration
                )));
            }
            if !(t_min..=t_max).contains(&s.level) {
                return Err(Error::domain(format!(
                    "segment {i} level {} outside safe band [{t_min}, {t_max}]",
                    s.level
                )));
            }
        }
        Ok(())
    }

    /// Level in force at time `t` (seconds from the start). Past the end the
    /// last level holds.
    pub fn level_at(&self, t: f64) -> f64 {
        let mut end = 0.0;
        for s in &self.segments {
            end += s.duration;
            if t < end {
                return s.level;
            }
        }
        self.segments.last().map_or(f64::NAN, |s| s.level)
    }

    /// Staircase used for identification: ten levels across the operating band
    /// followed by a long constant tail, 11760 s in total.
    pub fn identification_default() -> Self {
        Self::from_pairs(&[
            (900.0, 40.0),
            (900.0, 55.0),
            (900.0, 35.0),
            (900.0, 70.0),
            (900.0, 50.0),
            (900.0, 78.0),
            (900.0, 45.0),
            (900.0, 65.0),
            (900.0, 32.0),
            (900.0, 60.0),
            (2760.0, 70.0),
        ])
    }

    /// A differently ordered staircase for held-out validation data.
    pub fn validation_default() -> Self {
        Self::from_pairs(&[
            (900.0, 45.0),
            (900.0, 62.0),
            (900.0, 38.0),
            (900.0, 75.0),
            (900.0, 48.0),
            (900.0, 68.0),
            (900.0, 33.0),
            (900.0, 57.0),
            (900.0, 72.0),
            (900.0, 42.0),
            (2760.0, 58.0),
        ])
    }

    /// 56-minute closed-loop evaluation profile.
    pub fn evaluation_default() -> Self {
        Self::from_pairs(&[
            (600.0, 50.0),
            (480.0, 58.0),
            (480.0, 46.0),
            (600.0, 62.0),
            (600.0, 52.0),
            (600.0, 44.0),
        ])
    }
}

/// Samples a profile every `dt` seconds. Sample `k` takes the level in force
/// at time `k * dt`; the series has `floor(total / dt)` samples, so a
/// duration that is not a multiple of `dt` is truncated rather than rejected.
pub fn make_reference(profile: &ReferenceProfile, dt: f64) -> Result<Vec<f64>> {
    if profile.segments.is_empty() {
        return Err(Error::domain("reference profile has no segments"));
    }
    if !(dt > 0.0) {
        return Err(Error::domain("sampling interval must be positive"));
    }
    let n = (profile.total_duration() / dt + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    let mut seg_end = profile.segments[0].duration;
    for k in 0..n {
        let t = k as f64 * dt;
        while t >= seg_end - 1e-9 && seg + 1 < profile.segments.len() {
            seg += 1;
            seg_end += profile.segments[seg].duration;
        }
        out.push(profile.segments[seg].level);
    }
    Ok(out)
}
