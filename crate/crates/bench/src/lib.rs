//! Benchmark fixtures shared by the criterion targets.

use tcu_core::{Architecture, LinearModel, NnarxModel, Normalizer};

/// Linear surrogate with the identified structure.
pub fn linear() -> LinearModel {
    LinearModel::nominal(1.0, 1.2, -1.35, 6.0)
}

/// Default-architecture network scaled around 50 °C.
pub fn network(seed: u64) -> NnarxModel {
    let norm = Normalizer {
        u_mean: [0.2, 0.1],
        u_std: [0.3, 0.2],
        y_mean: 50.0,
        y_std: 10.0,
    };
    NnarxModel::init(Architecture::default(), norm, seed).expect("default architecture is valid")
}
