mod common;

use common::surrogate_linear;
use tcu_core::harness::{
    collect_identification_data, evaluate_costs, linear_prediction_rmse, nnarx_prediction_rmse, run_closed_loop,
};
use tcu_core::linear::filter_to;
use tcu_core::nnarx::open_loop_predict;
use tcu_core::signals::Segment;
use tcu_core::{Architecture, Config, Controller, NnarxModel, Normalizer, ReferenceProfile};

fn profile(pairs: &[(f64, f64)]) -> ReferenceProfile {
    ReferenceProfile::new(pairs.iter().map(|&(duration, level)| Segment { duration, level }).collect())
}

fn short_cfg(pairs: &[(f64, f64)]) -> Config {
    let mut cfg = Config::default();
    cfg.experiment.profile = profile(pairs);
    cfg.experiment.t0 = 0.0;
    cfg.experiment.t_end = cfg.experiment.profile.total_duration();
    cfg
}

fn scaled_nn() -> NnarxModel {
    let mut m = common::random_model(3, Architecture::default());
    m.normalizer = Normalizer {
        u_mean: [0.1, 0.05],
        u_std: [0.2, 0.1],
        y_mean: 50.0,
        y_std: 10.0,
    };
    m
}

#[test]
fn pi_settles_on_every_level() {
    let cfg = Config::default();
    let log = run_closed_loop(&cfg, &Controller::Pi).unwrap();
    assert_eq!(log.len(), 3360);
    let mut end = 0.0;
    for seg in &cfg.experiment.profile.segments {
        end += seg.duration;
        let tail = log.records.iter().filter(|r| r.t >= end - 30.0 && r.t < end);
        for r in tail {
            assert!((r.y - seg.level).abs() <= 1.0, "t = {}: y = {} for level {}", r.t, r.y, seg.level);
        }
    }
}

#[test]
fn controllers_share_the_reference_column() {
    let cfg = short_cfg(&[(240.0, 45.0), (240.0, 55.0)]);
    let logs: Vec<_> = [
        Controller::Pi,
        Controller::LinMpc(surrogate_linear()),
        Controller::NnMpc(scaled_nn()),
    ]
    .iter()
    .map(|c| run_closed_loop(&cfg, c).unwrap())
    .collect();
    let bits = |log: &tcu_core::ExperimentLog| log.references().iter().map(|r| r.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&logs[0]), bits(&logs[1]));
    assert_eq!(bits(&logs[0]), bits(&logs[2]));
}

#[test]
fn replay_is_deterministic() {
    let cfg = short_cfg(&[(300.0, 48.0), (300.0, 54.0)]);
    let c = Controller::LinMpc(surrogate_linear());
    let a = run_closed_loop(&cfg, &c).unwrap();
    let b = run_closed_loop(&cfg, &c).unwrap();
    assert_eq!(a, b);
    let cost = |log| evaluate_costs(log, 0.0, 600.0, &cfg.mpc.cost).unwrap();
    let (ca, cb) = (cost(&a), cost(&b));
    assert_eq!(ca, cb);
    assert_eq!(ca.total, ca.tracking + ca.energy);
}

#[test]
fn every_command_is_held_for_one_controller_period() {
    let cfg = short_cfg(&[(300.0, 45.0), (300.0, 52.0)]);
    let log = run_closed_loop(&cfg, &Controller::LinMpc(surrogate_linear())).unwrap();
    for window in log.records.chunks(6) {
        assert!(window[0].solver_status.is_some());
        assert!(window[1..].iter().all(|r| r.solver_status.is_none()));
        assert!(window.iter().all(|r| r.u_heat == window[0].u_heat && r.u_cool == window[0].u_cool));
    }
}

#[test]
fn reference_step_heats_without_cooling() {
    let cfg = short_cfg(&[(600.0, 40.0), (600.0, 60.0)]);
    let log = run_closed_loop(&cfg, &Controller::LinMpc(surrogate_linear())).unwrap();
    let before = log.records.iter().rev().find(|r| r.t < 600.0 && r.solver_status.is_some()).unwrap();
    let after = log.records.iter().find(|r| r.t >= 600.0 && r.solver_status.is_some()).unwrap();
    assert!(after.u_heat > before.u_heat);
    let transient = log.records.iter().filter(|r| r.t >= 600.0 && r.y < 59.0);
    for r in transient {
        assert_eq!(r.u_cool, 0.0, "t = {}", r.t);
    }
}

#[test]
fn default_collection_sizes() {
    let cfg = Config::default();
    let a = collect_identification_data(&cfg).unwrap();
    assert_eq!(a.raw.len(), 11760);
    assert_eq!(a.dataset.len(), 1960);
    assert!(!a.poorly_excited);
    let b = collect_identification_data(&cfg).unwrap();
    assert_eq!(a.dataset, b.dataset);
}

#[test]
fn single_level_profile_is_flagged() {
    let mut cfg = Config::default();
    cfg.identification.profile = profile(&[(600.0, 50.0)]);
    let data = collect_identification_data(&cfg).unwrap();
    assert!(data.poorly_excited);
    assert_eq!(data.dataset.len(), 100);
}

#[test]
fn zero_budget_window_holds_the_input() {
    let mut cfg = short_cfg(&[(300.0, 45.0), (300.0, 55.0)]);
    cfg.experiment.zero_budget_window = Some((294.0, 330.0));
    let log = run_closed_loop(&cfg, &Controller::LinMpc(surrogate_linear())).unwrap();
    let held = log.records[293].input();
    for r in &log.records[294..330] {
        assert_eq!(r.input(), held);
        if r.solver_status.is_some() {
            assert_eq!(r.fallback, 1);
        }
    }
    assert_eq!(log.fallback_count(), 6);
    assert_eq!(log.records[330].fallback, 0);
}

#[test]
fn one_step_horizon_is_the_one_step_error() {
    let cfg = Config::default();
    let data = collect_identification_data(&cfg).unwrap().dataset;
    let lin = surrogate_linear();
    let nn = NnarxModel::init(Architecture::default(), Normalizer::fit(&data), 1).unwrap();
    for start in [20, 500, 1500] {
        let est = filter_to(&lin, &data, start);
        let one = lin.transition(est.x, data.inputs[start])[1] - data.outputs[start + 1];
        assert_eq!(linear_prediction_rmse(&lin, &data, start, 1).unwrap(), one.abs());
        let x0 = nn.state_from_data(&data, start).unwrap();
        let p = open_loop_predict(&nn, &x0, &data.inputs[start..=start])[0];
        assert_eq!(nnarx_prediction_rmse(&nn, &data, start, 1).unwrap(), (p - data.outputs[start + 1]).abs());
    }
}
