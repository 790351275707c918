use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcu_core::linear::fit_linear;
use tcu_core::plant::{measure, plant_step};
use tcu_core::signals::InputModulator;
use tcu_core::{Bits, Dataset, Input, PlantParams, PlantState};

fn trajectory(p: &PlantParams, bits: &[Bits]) -> Vec<f64> {
    let mut s = PlantState::new(p, 0);
    bits.iter()
        .map(|&b| {
            plant_step(&mut s, p, b);
            s.tank
        })
        .collect()
}

#[test]
fn more_heating_never_cools() {
    let p = PlantParams::default().noiseless();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let low: Vec<Bits> = (0..2000).map(|_| Bits::new(rng.random_bool(0.3), rng.random_bool(0.2))).collect();
        let high: Vec<Bits> = low.iter().map(|b| Bits::new(b.heat || rng.random_bool(0.2), b.cool)).collect();
        let (a, b) = (trajectory(&p, &low), trajectory(&p, &high));
        assert!(a.iter().zip(&b).all(|(x, y)| y >= x));
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let p = PlantParams::default();
    let run = |seed| {
        let mut s = PlantState::new(&p, seed);
        let mut ys = Vec::new();
        for k in 0..3000 {
            ys.push(measure(&mut s, &p));
            plant_step(&mut s, &p, Bits::new(k % 3 == 0, k % 7 == 0));
        }
        ys
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

/// Duty that holds `t` in steady state with the coil closed.
fn holding_duty(p: &PlantParams, t: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if p.steady_temperature(mid) < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Linear fit to a heating and cooling step sequence around `t`.
fn local_fit(p: &PlantParams, t: f64) -> (f64, f64) {
    let base = holding_duty(p, t);
    let mut s = PlantState::new(p, 0);
    s.tank = t;
    s.delay_line = std::iter::repeat_n(t, p.delay_steps()).collect();
    let mut m = InputModulator::default();
    let mut bits = Vec::new();
    let mut ys = Vec::new();
    let plan = [(600, base), (300, base + 0.15), (300, base), (300, 0.0), (300, base)];
    for (len, duty) in plan {
        let u = if duty == 0.0 { Input::new(0.0, 0.15) } else { Input::new(duty, 0.0) };
        for _ in 0..len {
            ys.push(measure(&mut s, p));
            let b = m.step(u).unwrap();
            bits.push(Input::new(b.heat as u8 as f64, b.cool as u8 as f64));
            plant_step(&mut s, p, b);
        }
    }
    let data = Dataset::new(1.0, bits, ys).unwrap().resample(6).unwrap();
    let model = fit_linear(&data).unwrap();
    (model.b_h, model.b_c)
}

#[test]
fn gains_differ_across_the_operating_band() {
    let p = PlantParams::default().noiseless();
    let (h_lo, c_lo) = local_fit(&p, 35.0);
    let (h_hi, c_hi) = local_fit(&p, 75.0);
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs());
    assert!(rel(h_lo, h_hi) >= 0.1, "heat gain {h_lo} vs {h_hi}");
    assert!(rel(c_lo, c_hi) >= 0.1, "cool gain {c_lo} vs {c_hi}");
}
