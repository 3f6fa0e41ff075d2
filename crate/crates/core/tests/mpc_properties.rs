mod common;

use std::time::Instant;

use common::{baseline_frame, small_modnn, window_at};
use modnn::model::{LinearResponse, NormStats, RcOracle, StaticGain};
use modnn::mpc::{
    closed_loop, control_disturbances, control_metrics, loss_and_gradient, mpc_loss, optimize_controls, plan_loss,
    policy_loss, temp_violation, train_control_law, ComfortBand, ControlLawNet, DirectMpc, MpcLossConfig,
    MpcSettings, OnOffController, OptimizerConfig, PolicyHyper, PolicyScenario,
};
use modnn::testbed::{TestbedConfig, TimeSeriesFrame};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

const L: usize = 6;
const M: usize = 8;

fn frame() -> &'static TimeSeriesFrame {
    static FRAME: OnceLock<TimeSeriesFrame> = OnceLock::new();
    FRAME.get_or_init(|| baseline_frame(4, 44))
}

fn loss_cfg(m: usize, w_obj: f64, w_comfort: f64, top: f64) -> MpcLossConfig {
    MpcLossConfig {
        w_obj,
        w_input: 1e3,
        w_comfort,
        price: (0..m).map(|t| if t % 3 == 0 { 5.0 } else { 1.0 }).collect(),
        cop: vec![3.0; m],
        u_low: -4000.0,
        u_high: 0.0,
        band_low: vec![-100.0; m],
        band_high: vec![top; m],
    }
}

#[test]
fn static_gain_reaches_the_closed_form_minimizer() {
    // per step: w_o (a u)² + w_c (d + c u)², minimized at
    // u* = -w_c c d / (w_o a² + w_c c²), with the zone still above the band
    let c = 1e-3;
    let d = 2.0;
    let top = 24.0;
    let model = StaticGain {
        history: L,
        horizon: M,
        gain: c,
    };
    let mut w = window_at(frame(), 50, L, M);
    w.current.t_zone = top + d;
    let cfg = loss_cfg(M, 1.0, 1.0, top);
    let plan = optimize_controls(&model, &w, &cfg, &OptimizerConfig::default(), &[0.0; M]).unwrap();
    for t in 0..M {
        let a = cfg.price[t] / (1000.0 * cfg.cop[t]);
        let expected = -c * d / (a * a + c * c);
        assert!((plan.u[t] - expected).abs() < 1e-6, "step {t}: {} vs {expected}", plan.u[t]);
    }
}

#[test]
fn linear_response_plan_matches_its_stationarity_condition() {
    let model = LinearResponse {
        history: L,
        horizon: M,
        gain: 2e-4,
        drift: 0.3,
    };
    let w = window_at(frame(), 80, L, M);
    let mut cfg = loss_cfg(M, 1.0, 10.0, 24.0);
    cfg.band_high = vec![24.0; M];
    let plan = optimize_controls(&model, &w, &cfg, &OptimizerConfig::default(), &[0.0; M]).unwrap();
    let ctx = w.current.t_zone;
    let (_, grad, _) = loss_and_gradient(&model, &ctx, &plan.u, &cfg).unwrap();
    for t in 0..M {
        let inside = plan.u[t] > cfg.u_low + 1e-9 && plan.u[t] < cfg.u_high - 1e-9;
        if inside {
            assert!(grad[t].abs() < 1e-9, "step {t}: gradient {}", grad[t]);
        }
    }
}

#[test]
fn comfort_gradient_points_toward_more_cooling() {
    let rng = &mut ChaCha8Rng::seed_from_u64(5);
    let f = frame();
    for i in 0..120 {
        let mut model = small_modnn(f, L, M, i);
        model.params.hvac.raw_weight.mapv_inplace(|x| x + rng.gen_range(-2.0..2.0));
        let w = window_at(f, rng.gen_range(L..f.len() - M - 1), L, M);
        let ctx = modnn::model::DynamicsModel::prepare(&model, &w).unwrap();
        let y = modnn::model::predict(&model, &ctx, &w.future_u).unwrap();
        let lowest = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let top = lowest - rng.gen_range(-0.5..1.0);
        let cfg = loss_cfg(M, 0.0, 1.0, top);
        let (b, grad, _) = loss_and_gradient(&model, &ctx, &w.future_u, &cfg).unwrap();
        assert!(b.comfort_penalty > 0.0 || y.iter().all(|&v| v <= top));
        assert!(grad.iter().all(|&g| g >= 0.0), "window {i}: {grad:?}");
    }
}

#[test]
fn nothing_to_gain_returns_the_initial_plan() {
    let model = StaticGain {
        history: L,
        horizon: M,
        gain: 1e-3,
    };
    let w = window_at(frame(), 50, L, M);
    let mut cfg = loss_cfg(M, 1.0, 0.0, 24.0);
    cfg.price = vec![0.0; M];
    let init: Vec<f64> = (0..M).map(|t| -300.0 * t as f64).collect();
    let plan = optimize_controls(&model, &w, &cfg, &OptimizerConfig::default(), &init).unwrap();
    assert!(plan.u.iter().zip(&init).all(|(a, b)| (a - b).abs() < 1e-9));
    assert_eq!(plan.loss(), 0.0);

    // zero price with the zone inside the band: no reason to cool
    let mut cfg = loss_cfg(M, 1.0, 1e3, 40.0);
    cfg.price = vec![0.0; M];
    let plan = optimize_controls(&model, &w, &cfg, &OptimizerConfig::default(), &[0.0; M]).unwrap();
    assert!(plan.u.iter().all(|u| u.abs() < 1e-9));
}

#[test]
fn non_finite_prediction_is_an_optimizer_error() {
    let model = LinearResponse {
        history: L,
        horizon: M,
        gain: 1e-3,
        drift: f64::NAN,
    };
    let w = window_at(frame(), 50, L, M);
    let err = optimize_controls(&model, &w, &loss_cfg(M, 1.0, 1.0, 24.0), &OptimizerConfig::default(), &[0.0; M])
        .unwrap_err();
    assert!(matches!(err, modnn::Error::Optimizer { iterate: 0, .. }), "{err}");
}

#[test]
fn zero_horizon_plan_is_empty() {
    let model = StaticGain {
        history: L,
        horizon: 0,
        gain: 1e-3,
    };
    let w = window_at(frame(), 50, L, 0);
    let plan = optimize_controls(&model, &w, &loss_cfg(0, 1.0, 1.0, 24.0), &OptimizerConfig::default(), &[]).unwrap();
    assert!(plan.u.is_empty() && plan.loss() == 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn plans_stay_in_bounds_and_never_lose_to_their_start(
        seed in 0u64..500,
        anchor in L..(4 * 96 - M - 1),
        start in prop::collection::vec(-1.0f64..0.0, M),
        top in 20.0f64..30.0,
        w_obj in 0.0f64..10.0,
    ) {
        let model = small_modnn(frame(), L, M, seed);
        let w = window_at(frame(), anchor, L, M);
        let cfg = loss_cfg(M, w_obj, 1e3, top);
        let init: Vec<f64> = start.iter().map(|s| s * 4000.0).collect();
        let opt = OptimizerConfig { iters: 30, ..Default::default() };
        let plan = optimize_controls(&model, &w, &cfg, &opt, &init).unwrap();
        prop_assert!(plan.u.iter().all(|&u| (cfg.u_low..=cfg.u_high).contains(&u)));
        let ctx = modnn::model::DynamicsModel::prepare(&model, &w).unwrap();
        let y0 = modnn::model::predict(&model, &ctx, &init).unwrap();
        let start_loss = mpc_loss(&init, &y0, &cfg).unwrap().total();
        prop_assert!(plan.loss() <= start_loss, "{} > {start_loss}", plan.loss());
        let y = modnn::model::predict(&model, &ctx, &plan.u).unwrap();
        prop_assert!((mpc_loss(&plan.u, &y, &cfg).unwrap().total() - plan.loss()).abs() <= 1e-9 * plan.loss().max(1.0));
    }

    #[test]
    fn out_of_range_starts_are_projected(start in prop::collection::vec(-9000.0f64..5000.0, M)) {
        let model = StaticGain { history: L, horizon: M, gain: 1e-3 };
        let w = window_at(frame(), 50, L, M);
        let cfg = loss_cfg(M, 1.0, 1.0, 24.0);
        let opt = OptimizerConfig { iters: 5, ..Default::default() };
        let plan = optimize_controls(&model, &w, &cfg, &opt, &start).unwrap();
        prop_assert!(plan.u.iter().all(|&u| (cfg.u_low..=cfg.u_high).contains(&u)));
    }
}

fn scenarios(model_horizon: usize, stride: usize) -> Vec<PolicyScenario> {
    let cfg = TestbedConfig::default();
    let settings = MpcSettings::default();
    let f = frame();
    (L..f.len() - model_horizon - 1)
        .step_by(stride)
        .map(|a| {
            let window = window_at(f, a, L, model_horizon);
            PolicyScenario {
                loss: settings.loss_config(&cfg, &window.future),
                window,
            }
        })
        .collect()
}

#[test]
fn control_law_outputs_respect_bounds_for_any_input() {
    let f = frame();
    let norm = NormStats::fit(f, 0..f.len());
    let rng = &mut ChaCha8Rng::seed_from_u64(2);
    for s in scenarios(M, 29) {
        let mut net = ControlLawNet::new(M, 8, -2000.0, -100.0, norm, rng.gen());
        net.output.weight.mapv_inplace(|w| w * 1e3);
        for t_zone in [-1e6, 0.0, 24.0, 1e6] {
            let u = net.act(t_zone, &s.window.future, &s.loss).unwrap();
            assert_eq!(u.len(), M);
            assert!(u.iter().all(|&x| (-2000.0..=-100.0).contains(&x)), "{u:?}");
        }
    }
}

#[test]
fn trained_control_law_beats_doing_nothing_and_is_fast() {
    let cfg = TestbedConfig::default();
    let settings = MpcSettings::default();
    let model = RcOracle {
        history: L,
        horizon: M,
        rc: cfg.rc,
    };
    let train = scenarios(M, 3);
    let f = frame();
    let hyper = PolicyHyper {
        hidden: 16,
        epochs: 30,
        lr: 3e-3,
        batch: 16,
        seed: 1,
    };
    let (net, history) =
        train_control_law(&model, &train, &hyper, settings.u_low, settings.u_high, NormStats::fit(f, 0..f.len()))
            .unwrap();
    assert!(history.last().unwrap() < history.first().unwrap());
    let learned = policy_loss(&model, &net, &train).unwrap();
    let idle = plan_loss(&model, &train, |_| Ok(vec![0.0; M])).unwrap();
    assert!(learned < idle, "{learned} vs {idle}");

    let s = &train[0];
    let start = Instant::now();
    for _ in 0..100 {
        net.act(s.window.current.t_zone, &s.window.future, &s.loss).unwrap();
    }
    assert!(start.elapsed().as_secs_f64() / 100.0 < 0.01);
}

fn short_settings(horizon_days: usize) -> MpcSettings {
    MpcSettings {
        warmup_days: 1,
        days: horizon_days,
        optimizer: OptimizerConfig {
            iters: 40,
            ..Default::default()
        },
        ..MpcSettings::default()
    }
}

#[test]
fn closed_loop_is_deterministic_and_metrics_rederive_from_the_frame() {
    let cfg = TestbedConfig::default();
    let settings = short_settings(1);
    let oracle = RcOracle {
        history: L,
        horizon: 16,
        rc: cfg.rc,
    };
    let dist = control_disturbances(&cfg, &settings, 16, 9);
    let run = || {
        let mut mpc = DirectMpc::new(&oracle, "oracle", settings);
        closed_loop(&cfg, &dist, &settings, &mut mpc).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert_eq!(a.len(), 96);

    let band = ComfortBand::occupied(&cfg, settings.comfort_low);
    let base = closed_loop(&cfg, &dist, &settings, &mut OnOffController::default()).unwrap();
    let m = control_metrics("oracle", &a, &base, &band, &cfg.schedule, None).unwrap();
    // independent recount: quarter-hours while anyone is home
    let mut violation = 0.0;
    for i in 0..a.len() {
        if a.occ[i] > 0.0 {
            let t = a.t_zone[i];
            violation += 0.25 * ((t - band.top).max(0.0) + (band.low - t).max(0.0));
        }
    }
    assert!((m.violation_ch - violation).abs() < 1e-9);
    assert!((temp_violation(&a, &band) - violation).abs() < 1e-9);
    let energy: f64 = a.p_elec.iter().map(|p| p * 0.25 / 1000.0).sum();
    assert!((m.energy_kwh - energy).abs() < 1e-9);
    assert!(a.u_hvac.iter().all(|&u| u <= 0.0));
}

#[test]
fn anticipating_controller_does_not_do_worse_than_the_thermostat_on_the_true_model() {
    let cfg = TestbedConfig::default();
    let settings = short_settings(2);
    let oracle = RcOracle {
        history: L,
        horizon: 32,
        rc: cfg.rc,
    };
    let dist = control_disturbances(&cfg, &settings, 32, 3);
    let band = ComfortBand::occupied(&cfg, settings.comfort_low);
    let base = closed_loop(&cfg, &dist, &settings, &mut OnOffController::default()).unwrap();
    let mut mpc = DirectMpc::new(&oracle, "oracle", settings);
    let ctrl = closed_loop(&cfg, &dist, &settings, &mut mpc).unwrap();
    assert!(temp_violation(&ctrl, &band) < temp_violation(&base, &band));
}
