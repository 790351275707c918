mod common;

use common::{gradient_check, random_model, random_sequence, scrambled_model, WindowNet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcu_core::nnarx::{
    extract_subsequences, ffnn_eval, nnarx_step, one_step_loss, one_step_loss_and_gradient, open_loop_predict,
    pack_state, train, Sequence,
};
use tcu_core::{Architecture, Dataset, Input, NnarxModel, Normalizer};

fn arch(n_past: usize, hidden: &[usize]) -> Architecture {
    Architecture {
        n_past,
        hidden: hidden.to_vec(),
    }
}

fn random_history(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<[f64; 2]>) {
    let ys = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let us = (0..n).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    (ys, us)
}

#[test]
fn state_space_iteration_matches_rolling_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..20 {
        let a = if seed % 2 == 0 { arch(8, &[10]) } else { arch(3, &[6, 4]) };
        let model = scrambled_model(seed, a.clone(), 1.0);
        let oracle = WindowNet::from_model(&model);
        let (ys, us) = random_history(&mut rng, a.n_past);
        let inputs: Vec<[f64; 2]> = (0..100).map(|_| [rng.random(), rng.random()]).collect();
        let expected = oracle.roll(&ys, &us, &inputs);
        let mut x = pack_state(&ys, &us).unwrap();
        for (k, &u) in inputs.iter().enumerate() {
            let (next, y) = nnarx_step(&model, &x, u);
            assert!((y - expected[k]).abs() < 1e-12, "step {k}: {y} vs {}", expected[k]);
            assert_eq!(next.output(), y);
            x = next;
        }
    }
}

#[test]
fn zero_model_shifts_inputs_through() {
    let model = NnarxModel::zeros(arch(3, &[4]), Normalizer::default()).unwrap();
    let mut x = pack_state(&[0.0; 3], &[[0.0; 2]; 3]).unwrap();
    let inputs = [[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8]];
    for u in inputs {
        let (next, y) = nnarx_step(&model, &x, u);
        assert_eq!(y, 0.0);
        x = next;
    }
    let (ys, us) = x.unpack();
    assert_eq!(ys, vec![0.0; 3]);
    assert_eq!(us, inputs[1..].to_vec());
}

#[test]
fn ffnn_hand_evaluation() {
    let model = random_model(4, arch(1, &[2]));
    let v = serde_json::to_value(&model).unwrap();
    let w = |key: &str| -> Vec<f64> {
        v["layers"][0][key].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
    };
    let (wi, ws, b) = (w("input_weights"), w("state_weights"), w("bias"));
    let ro: Vec<f64> = v["readout"]["weights"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let rb = v["readout"]["bias"].as_f64().unwrap();
    let (y, uh, uc, h, c) = (0.4, -0.3, 0.9, 0.25, -0.6);
    let z0 = (b[0] + wi[0] * h + wi[1] * c + ws[0] * y + ws[1] * uh + ws[2] * uc).tanh();
    let z1 = (b[1] + wi[2] * h + wi[3] * c + ws[3] * y + ws[4] * uh + ws[5] * uc).tanh();
    let expected = rb + ro[0] * z0 + ro[1] * z1;
    let x = pack_state(&[y], &[[uh, uc]]).unwrap();
    assert!((ffnn_eval(&model, &x, [h, c]) - expected).abs() < 1e-15);
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for seed in 0..5 {
        let a = if seed < 3 { arch(8, &[10]) } else { arch(4, &[6, 5]) };
        let model = scrambled_model(100 + seed, a, 0.6);
        let seqs: Vec<Sequence> = (0..4).map(|_| random_sequence(&mut rng, 40)).collect();
        let err = gradient_check(&model, &seqs, 8, 20, seed);
        assert!(err < 1e-5, "model {seed}: relative error {err:e}");
    }
}

#[test]
fn criterion_is_invariant_to_duplicating_the_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let model = scrambled_model(7, arch(8, &[10]), 0.5);
    let seqs: Vec<Sequence> = (0..5).map(|_| random_sequence(&mut rng, 50)).collect();
    let doubled: Vec<Sequence> = seqs.iter().chain(&seqs).cloned().collect();
    let (l1, g1) = one_step_loss_and_gradient(&model, &seqs, 8);
    let (l2, g2) = one_step_loss_and_gradient(&model, &doubled, 8);
    assert!((l1 - l2).abs() <= 1e-14 * l1.abs());
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

/// Free run of `teacher` under random normalized inputs.
fn teacher_data(teacher: &NnarxModel, len: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = teacher.n_past();
    let mut x = pack_state(&vec![0.0; n], &vec![[0.0; 2]; n]).unwrap();
    let mut inputs = Vec::with_capacity(len);
    let mut outputs = Vec::with_capacity(len);
    let mut y = 0.0;
    let mut u = [0.0, 0.0];
    for k in 0..len {
        outputs.push(y);
        if k % 5 == 0 {
            u = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        }
        inputs.push(Input::new(u[0], u[1]));
        (x, y) = nnarx_step(teacher, &x, u);
    }
    Dataset::new(6.0, inputs, outputs).unwrap()
}

#[test]
fn teacher_student_round_trip() {
    let teacher = random_model(21, arch(2, &[4]));
    let data = teacher_data(&teacher, 1200, 1);
    let val = teacher_data(&teacher, 600, 2);
    let cfg = common::quick_training(5000, 1e-2);
    let cfg = tcu_core::nnarx::TrainingConfig { washout: 2, tolerance: 1e-6, ..cfg };
    let train_set = extract_subsequences(&data, 24, 80, 3).unwrap();
    let val_set = extract_subsequences(&val, 8, 80, 4).unwrap();
    let student = random_model(22, arch(2, &[4]));
    let (trained, report) = train(&student, &train_set, &val_set, &cfg).unwrap();
    assert!(report.summary.best_validation < 1e-6, "{:?}", report.summary);
    assert!(trained.training.as_ref().unwrap().reached_tolerance);
}

#[test]
fn teacher_reproduces_its_own_free_run() {
    let teacher = random_model(23, arch(3, &[5]));
    let data = teacher_data(&teacher, 200, 5);
    let x0 = teacher.state_from_data(&data, 50).unwrap();
    let pred = open_loop_predict(&teacher, &x0, &data.inputs[50..120]);
    for (k, p) in pred.iter().enumerate() {
        assert_eq!(*p, data.outputs[51 + k]);
    }
}

#[test]
fn linear_data_is_fitted_as_well_as_the_linear_predictor() {
    // y' = y + a (x1 - y), x1' = x1 + b_h u_h + b_c u_c + w: an ARX system of
    // order two whose best one-step predictor has error variance (a sigma)^2
    let (a, b_h, b_c, sigma) = (0.3, 0.4, -0.5, 0.05);
    let make = |len: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = rand_distr::Normal::new(0.0, sigma).unwrap();
        let (mut x1, mut x2) = (0.0, 0.0);
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut u = Input::ZERO;
        for k in 0..len {
            outputs.push(x2);
            if k % 6 == 0 {
                let up = if x1 > 2.0 { false } else if x1 < -2.0 { true } else { rng.random() };
                u = if up { Input::new(rng.random(), 0.0) } else { Input::new(0.0, rng.random()) };
            }
            inputs.push(u);
            let w: f64 = rand_distr::Distribution::sample(&noise, &mut rng);
            (x1, x2) = (x1 + b_h * u.heat + b_c * u.cool + w, x2 + a * (x1 - x2));
        }
        Dataset::new(6.0, inputs, outputs).unwrap()
    };
    let data = make(4000, 1);
    let val = make(2000, 2);
    let norm = Normalizer::fit(&data);
    let cfg = tcu_core::nnarx::TrainingConfig {
        n_train: 24,
        n_valid: 16,
        washout: 2,
        ..common::quick_training(8000, 1e-2)
    };
    let train_set = extract_subsequences(&data, cfg.n_train, cfg.seq_len, 3).unwrap();
    let val_set = extract_subsequences(&val, cfg.n_valid, cfg.seq_len, 4).unwrap();
    let init = NnarxModel::init(arch(2, &[10]), norm, 5).unwrap();
    let (model, _) = train(&init, &train_set, &val_set, &cfg).unwrap();
    let seqs: Vec<Sequence> = val_set.iter().map(|d| Sequence::from_dataset(d, &norm)).collect();
    let nn_mse = one_step_loss(&model, &seqs, cfg.washout) * norm.y_std.powi(2);
    let linear_mse = (a * sigma).powi(2);
    assert!(nn_mse < 1.1 * linear_mse, "NNARX {nn_mse:e} vs linear {linear_mse:e}");
}

#[test]
fn subsequences_on_a_full_length_log() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let data = Dataset::new(6.0, common::random_inputs(&mut rng, 1960), (0..1960).map(|k| k as f64).collect()).unwrap();
    let windows = extract_subsequences(&data, 84, 133, 9).unwrap();
    assert_eq!(windows.len(), 84);
    for w in &windows {
        assert_eq!(w.len(), 133);
        let start = w.outputs[0] as usize;
        assert!(start + 133 <= 1960);
        assert_eq!(w.outputs[132], (start + 132) as f64);
    }
    assert_eq!(windows, extract_subsequences(&data, 84, 133, 9).unwrap());
    let whole = extract_subsequences(&data, 1, 1960, 9).unwrap();
    assert_eq!(whole[0], data);
}
