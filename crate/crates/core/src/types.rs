use serde::{Deserialize, Serialize};

/// Analog actuator command: heating and cooling duty ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Input {
    pub heat: f64,
    pub cool: f64,
}

impl Input {
    pub const ZERO: Input = Input { heat: 0.0, cool: 0.0 };

    pub const fn new(heat: f64, cool: f64) -> Self {
        Self { heat, cool }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.heat, self.cool]
    }

    pub fn from_array(a: [f64; 2]) -> Self {
        Self { heat: a[0], cool: a[1] }
    }

    /// Sum of both duty ratios, the quantity the energy penalty acts on.
    pub fn effort(self) -> f64 {
        self.heat + self.cool
    }

    pub fn is_admissible(self) -> bool {
        (0.0..=1.0).contains(&self.heat) && (0.0..=1.0).contains(&self.cool)
    }

    pub fn clamped(self) -> Self {
        Self {
            heat: self.heat.clamp(0.0, 1.0),
            cool: self.cool.clamp(0.0, 1.0),
        }
    }
}

/// Binary actuator command executed by the plant every second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Bits {
    pub heat: bool,
    pub cool: bool,
}

impl Bits {
    pub const fn new(heat: bool, cool: bool) -> Self {
        Self { heat, cool }
    }
}
