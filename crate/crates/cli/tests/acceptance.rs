//! End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero
//! exit if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::error::Error;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use modnn::config::ExperimentConfig;
use modnn::consistency::{full_report, mmd2, AuditConfig, ConsistencyReport, ResponsePair};
use modnn::model::{
    forward, predict, ConstantOutput, DynamicsModel, ModelVariant, PredictionWindow, Reflected, StaticGain,
    TrainedModel,
};
use modnn::mpc::{
    closed_loop, control_disturbances, control_metrics, loss_and_gradient, optimize_controls, ComfortBand, DirectMpc,
    MpcLossConfig, OnOffController, OptimizerConfig,
};
use modnn::testbed::{load_frame, run_baseline, save_frame, TimeSeriesFrame};
use modnn::training::{build_windows, split_frame, train, DataSplit, TrainHyper, TrainReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), Box<dyn Error>>;

const SEED: u64 = 7;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Default {
    cfg: ExperimentConfig,
    split: DataSplit,
    model: TrainedModel,
    report: TrainReport,
    train_seconds: f64,
    audit: ConsistencyReport,
    constant: ConsistencyReport,
}

struct SeedRun {
    seed: u64,
    modnn: ConsistencyReport,
    lstm: ConsistencyReport,
}

fn default_run() -> Result<Default, Box<dyn Error>> {
    let cfg = ExperimentConfig::with_seed(SEED);
    let (l, m) = (cfg.model.history, cfg.model.horizon);
    let start = Instant::now();
    let frame = run_baseline(&cfg.testbed, cfg.days, cfg.seed)?;
    let split = split_frame(&frame, cfg.train.train_days, cfg.train.val_days)?;
    let tr = build_windows(&split.train, l, m, cfg.train.stride)?;
    let va = build_windows(&split.val, l, m, cfg.train.val_stride)?;
    let mut model = TrainedModel::init(ModelVariant::Modnn, l, m, cfg.model.hidden, cfg.model.flux, split.norm, cfg.seed);
    let report = train(&mut model, &tr, &va, &cfg.train_hyper(), true, &cfg.hash())?;
    let train_seconds = start.elapsed().as_secs_f64();
    let (audit, _) = full_report(&model, "modnn", &split.val, &cfg.audit, cfg.seed, &cfg.hash())?;
    let constant_model = ConstantOutput { history: l, horizon: m };
    let (constant, _) = full_report(&constant_model, "constant", &split.val, &cfg.audit, cfg.seed, &cfg.hash())?;
    Ok(Default {
        cfg,
        split,
        model,
        report,
        train_seconds,
        audit,
        constant,
    })
}

/// ModNN and LSTM trained per seed on the same baseline frame with a
/// lighter schedule (every 8th window, 25 epochs).
fn seed_runs(d: &Default) -> Result<Vec<SeedRun>, Box<dyn Error>> {
    let cfg = &d.cfg;
    let (l, m) = (cfg.model.history, cfg.model.horizon);
    let tr = build_windows(&d.split.train, l, m, 8)?;
    let va = build_windows(&d.split.val, l, m, 8)?;
    let audit = AuditConfig {
        jacobian_windows: 50,
        ..cfg.audit
    };
    let mut out = Vec::new();
    for seed in SEEDS {
        let mut reports = Vec::new();
        for variant in [ModelVariant::Modnn, ModelVariant::Lstm] {
            let mut model = TrainedModel::init(variant, l, m, cfg.model.hidden, cfg.model.flux, d.split.norm, seed);
            let hyper = TrainHyper {
                epochs: 25,
                seed,
                ..cfg.train_hyper()
            };
            train(&mut model, &tr, &va, &hyper, false, "")?;
            let (r, _) = full_report(&model, &variant.to_string(), &d.split.val, &audit, seed, "")?;
            reports.push(r);
        }
        let lstm = reports.pop().expect("two reports");
        let modnn = reports.pop().expect("two reports");
        out.push(SeedRun { seed, modnn, lstm });
    }
    Ok(out)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_1() -> Outcome {
    let frame = common::baseline_frame(3, 5);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let kinds: [(&str, &dyn Fn(u64) -> f64); 5] = [
        ("linear", &common::linear_error),
        ("positive linear", &common::positive_linear_error),
        ("gru", &|s| common::gru_error(s, None)),
        ("lstm", &common::lstm_error),
        ("modnn", &|s| common::modnn_error(&frame, s)),
    ];
    for (name, f) in kinds {
        let max = (1000..1050).map(f).fold(0.0, f64::max);
        worst.push((name, max));
    }
    let pass = worst.iter().all(|(_, e)| *e < common::FD_REL);
    let detail = worst
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((pass, format!("max relative error over 50 instances each: {detail}")))
}

fn criterion_2(d: &Default) -> Outcome {
    let a = &d.audit;
    let pass = a.jacobian_min >= 0.0 && a.trv_plus == 0.0 && a.trv_minus == 0.0 && a.windows_jacobian >= 100;
    Ok((
        pass,
        format!(
            "jacobian_min {:.3e} over {} windows, trv ({}, {}) over {} windows",
            a.jacobian_min, a.windows_jacobian, a.trv_plus, a.trv_minus, a.windows_accuracy
        ),
    ))
}

fn criterion_3(runs: &[SeedRun]) -> Outcome {
    let failing: Vec<String> = runs
        .iter()
        .filter(|r| r.lstm.jacobian_min < 0.0 || r.lstm.trv_plus + r.lstm.trv_minus > 0.0)
        .map(|r| {
            format!(
                "seed {} (jmin {:.2e}, trv {:.2}/{:.2})",
                r.seed, r.lstm.jacobian_min, r.lstm.trv_plus, r.lstm.trv_minus
            )
        })
        .collect();
    Ok((
        !failing.is_empty(),
        format!("LSTM inconsistent on {}/{} seeds: {}", failing.len(), runs.len(), failing.join(", ")),
    ))
}

/// Straight double sum, normalized at the end.
fn brute_mmd2(p: &[ResponsePair], q: &[ResponsePair], sigma: f64) -> f64 {
    let k = |a: &ResponsePair, b: &ResponsePair| {
        (-((a.du - b.du).powi(2) + (a.dt - b.dt).powi(2)) / (2.0 * sigma * sigma)).exp()
    };
    let (n, m) = (p.len() as f64, q.len() as f64);
    let xx: f64 = p.iter().flat_map(|a| p.iter().map(move |b| k(a, b))).sum();
    let yy: f64 = q.iter().flat_map(|a| q.iter().map(move |b| k(a, b))).sum();
    let xy: f64 = p.iter().flat_map(|a| q.iter().map(move |b| k(a, b))).sum();
    xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m)
}

fn criterion_4() -> Outcome {
    let rng = &mut ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut self_max: f64 = 0.0;
    for _ in 0..20 {
        let set = |rng: &mut ChaCha8Rng| -> Vec<ResponsePair> {
            let n = rng.gen_range(1..=200);
            (0..n)
                .map(|_| ResponsePair {
                    du: rng.gen_range(-3.0..3.0),
                    dt: rng.gen_range(-3.0..3.0),
                })
                .collect()
        };
        let (p, q) = (set(rng), set(rng));
        let sigma = rng.gen_range(0.1..3.0);
        worst = worst.max((mmd2(&p, &q, sigma)? - brute_mmd2(&p, &q, sigma)).abs());
        self_max = self_max.max(mmd2(&p, &p, sigma)?.abs());
    }
    let single = mmd2(&[ResponsePair { du: 0.0, dt: 0.0 }], &[ResponsePair { du: 1.0, dt: 0.0 }], 1.0)?;
    let single_err = (single - (2.0 - 2.0 * (-0.5f64).exp())).abs();
    Ok((
        worst < 1e-12 && self_max == 0.0 && single_err < 1e-12,
        format!("oracle gap {worst:.1e}, MMD(P,P) max {self_max}, singleton error {single_err:.1e}"),
    ))
}

fn criterion_5(d: &Default, runs: &[SeedRun]) -> Outcome {
    let med_modnn = median(runs.iter().map(|r| r.modnn.mmd).collect());
    let med_lstm = median(runs.iter().map(|r| r.lstm.mmd).collect());
    let pass = d.audit.mmd < d.constant.mmd && med_modnn <= med_lstm;
    Ok((
        pass,
        format!(
            "seed {SEED}: MMD ModNN {:.4} vs constant {:.4}; median over {} seeds: ModNN {:.4} vs LSTM {:.4}",
            d.audit.mmd,
            d.constant.mmd,
            runs.len(),
            med_modnn,
            med_lstm
        ),
    ))
}

fn criterion_6(d: &Default) -> Outcome {
    let first: Vec<f64> = d.report.epochs.iter().take(5).map(|e| e.val_mse).collect();
    let monotone = first.len() == 5 && first.windows(2).all(|w| w[1] <= w[0]);
    let pass = d.train_seconds < 600.0 && monotone;
    let shown = first.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" ");
    Ok((
        pass,
        format!(
            "{} epochs in {:.0} s (limit 600), val MSE epochs 0-4: {shown}",
            d.report.epochs.len(),
            d.train_seconds
        ),
    ))
}

fn criterion_7(d: &Default) -> Outcome {
    let cfg = &d.cfg;
    let settings = cfg.mpc;
    let seed = cfg.seed + settings.seed_offset;
    let dist = control_disturbances(&cfg.testbed, &settings, cfg.model.horizon, seed);
    let band = ComfortBand::occupied(&cfg.testbed, settings.comfort_low);
    let sched = &cfg.testbed.schedule;
    let baseline = closed_loop(&cfg.testbed, &dist, &settings, &mut OnOffController::default())?;
    let mut good = DirectMpc::new(&d.model, "modnn", settings);
    let good_frame = closed_loop(&cfg.testbed, &dist, &settings, &mut good)?;
    let reflected = Reflected(d.model.clone());
    let mut bad = DirectMpc::new(&reflected, "anti-monotone", settings);
    let bad_frame = closed_loop(&cfg.testbed, &dist, &settings, &mut bad)?;
    let b = control_metrics("baseline", &baseline, &baseline, &band, sched, None)?;
    let g = control_metrics("modnn", &good_frame, &baseline, &band, sched, None)?;
    let a = control_metrics("anti-monotone", &bad_frame, &baseline, &band, sched, None)?;
    let peak = g.peak_reduction_pct.unwrap_or(f64::NAN);
    let pass = g.violation_ch < b.violation_ch && a.violation_ch > b.violation_ch && peak > 20.0;
    Ok((
        pass,
        format!(
            "{} days, violation °C·h: MPC-ModNN {:.2} < baseline {:.2} < MPC-anti-monotone {:.2}; peak reduction {:.1}%",
            settings.days, g.violation_ch, b.violation_ch, a.violation_ch, peak
        ),
    ))
}

fn criterion_8(d: &Default) -> Outcome {
    let m = 8;
    let (c, gap) = (1e-3, 2.0);
    let surrogate = StaticGain {
        history: 4,
        horizon: m,
        gain: c,
    };
    let frame = &d.split.val;
    let mut w = PredictionWindow::from_frame(frame, 10, 4, m)?;
    w.current.t_zone = 24.0 + gap;
    let cfg = MpcLossConfig {
        w_obj: 1.0,
        w_input: 1e3,
        w_comfort: 1.0,
        price: (0..m).map(|t| if t % 2 == 0 { 1.0 } else { 5.0 }).collect(),
        cop: vec![3.0; m],
        u_low: -4000.0,
        u_high: 0.0,
        band_low: vec![-100.0; m],
        band_high: vec![24.0; m],
    };
    let plan = optimize_controls(&surrogate, &w, &cfg, &OptimizerConfig::default(), &vec![0.0; m])?;
    let closed_form_gap = (0..m)
        .map(|t| {
            let a = cfg.price[t] / (1000.0 * cfg.cop[t]);
            (plan.u[t] + c * gap / (a * a + c * c)).abs()
        })
        .fold(0.0, f64::max);

    let model = &d.model;
    let (l, h) = (model.history_len(), model.horizon());
    let rng = &mut ChaCha8Rng::seed_from_u64(8);
    let mut wrong = 0;
    let trials = 100;
    for _ in 0..trials {
        let w = PredictionWindow::from_frame(frame, rng.gen_range(l..frame.len() - h - 1), l, h)?;
        let ctx = model.prepare(&w)?;
        let y = predict(model, &ctx, &w.future_u)?;
        let top = y.iter().cloned().fold(f64::INFINITY, f64::min) - rng.gen_range(-0.5..1.0);
        let cfg = MpcLossConfig {
            w_obj: 0.0,
            w_input: 0.0,
            w_comfort: 1.0,
            price: vec![1.0; h],
            cop: vec![3.0; h],
            u_low: -4052.16,
            u_high: 0.0,
            band_low: vec![-100.0; h],
            band_high: vec![top; h],
        };
        let (_, grad, _) = loss_and_gradient(model, &ctx, &w.future_u, &cfg)?;
        if grad.iter().any(|&g| g < 0.0) {
            wrong += 1;
        }
    }
    Ok((
        closed_form_gap < 1e-6 && wrong == 0,
        format!("closed-form gap {closed_form_gap:.1e} W; comfort gradient sign wrong on {wrong}/{trials} windows"),
    ))
}

const SMALL: &str = "\
seed = 3
days = 8
fixed_epoch = true
model.variants = modnn,lstm
model.history = 8
model.horizon = 8
model.hidden = 4
train.epochs = 2
train.stride = 16
train.val_stride = 16
train.train_days = 5
train.val_days = 2
audit.stride = 16
audit.jacobian_windows = 4
audit.pq_windows = 4
mpc.days = 1
mpc.warmup_days = 1
mpc.iters = 10
";

fn run_cli(cfg: &Path, out: &Path) -> Result<(), Box<dyn Error>> {
    let bin = env!("CARGO_BIN_EXE_modnn");
    let (c, o) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    let ckpt_a = out.join("modnn.ckpt.json");
    let ckpt_b = out.join("lstm.ckpt.json");
    let ckpts = ["--checkpoint", ckpt_a.to_str().unwrap(), "--checkpoint", ckpt_b.to_str().unwrap()];
    for (cmd, extra) in [("simulate", &[][..]), ("train", &[][..]), ("audit", &ckpts[..]), ("control", &ckpts[..])] {
        let status = Command::new(bin)
            .args([cmd, "--config", c, "--out", o])
            .args(extra)
            .output()?
            .status;
        if !status.success() {
            return Err(format!("`modnn {cmd}` exited with {status}").into());
        }
    }
    Ok(())
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir()?;
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, SMALL)?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_cli(&cfg, &a)?;
    run_cli(&cfg, &b)?;
    let mut names: Vec<_> = fs::read_dir(&a)?.map(|e| e.map(|e| e.file_name())).collect::<Result<_, _>>()?;
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        if fs::read(a.join(name))? != fs::read(b.join(name))? {
            differing.push(name.to_string_lossy().into_owned());
        }
    }

    let frame_path = a.join("frame.csv");
    let frame: TimeSeriesFrame = load_frame(&frame_path)?;
    let again = dir.path().join("frame_again.csv");
    let comments: Vec<String> = fs::read_to_string(&frame_path)?
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches("# ").to_string())
        .collect();
    save_frame(&frame, &again, &comments)?;
    let frame_ok = fs::read(&frame_path)? == fs::read(&again)? && load_frame(&again)? == frame;

    let mut ckpt_ok = true;
    for variant in ["modnn", "lstm"] {
        let path = a.join(format!("{variant}.ckpt.json"));
        let model = TrainedModel::load(&path, Some((8, 8)))?;
        let hash = serde_json::from_str::<serde_json::Value>(&fs::read_to_string(&path)?)?["meta"]["config_hash"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        let copy = dir.path().join(format!("{variant}_again.json"));
        model.save(&copy, &hash)?;
        let back = TrainedModel::load(&copy, Some((8, 8)))?;
        let w = PredictionWindow::from_frame(&frame, 20, 8, 8)?;
        let same = forward(&model, &w)?
            .iter()
            .zip(forward(&back, &w)?)
            .all(|(x, y)| x.to_bits() == y.to_bits());
        ckpt_ok &= same && fs::read(&path)? == fs::read(&copy)?;
    }
    Ok((
        differing.is_empty() && frame_ok && ckpt_ok,
        format!(
            "{} output files byte-identical across runs (differing: {:?}); frame round trip {}; checkpoint round trip {}",
            names.len() - differing.len(),
            differing,
            if frame_ok { "lossless" } else { "lossy" },
            if ckpt_ok { "lossless" } else { "lossy" }
        ),
    ))
}

fn report(n: usize, name: &str, outcome: Outcome) -> bool {
    let (pass, detail) = match outcome {
        Ok(x) => x,
        Err(e) => (false, format!("error: {e}")),
    };
    println!("criterion {n} ({name}): {} | {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() {
    let started = Instant::now();
    let mut passed = Vec::new();
    passed.push(report(1, "gradient correctness", criterion_1()));

    let shared = default_run();
    let runs = match &shared {
        Ok(d) => seed_runs(d),
        Err(e) => Err(e.to_string().into()),
    };
    let need = |n: usize, name: &str, f: &dyn Fn(&Default) -> Outcome| match &shared {
        Ok(d) => report(n, name, f(d)),
        Err(e) => report(n, name, Err(format!("default run failed: {e}").into())),
    };
    let need_runs = |n: usize, name: &str, f: &dyn Fn(&Default, &[SeedRun]) -> Outcome| match (&shared, &runs) {
        (Ok(d), Ok(r)) => report(n, name, f(d, r)),
        (Err(e), _) => report(n, name, Err(format!("default run failed: {e}").into())),
        (_, Err(e)) => report(n, name, Err(format!("seed runs failed: {e}").into())),
    };

    passed.push(need(2, "structural consistency", &criterion_2));
    passed.push(need_runs(3, "baseline failure mode", &|_, r| criterion_3(r)));
    passed.push(report(4, "MMD implementation", criterion_4()));
    passed.push(need_runs(5, "MMD ordering", &criterion_5));
    passed.push(need(6, "training tractability", &criterion_6));
    passed.push(need(7, "closed-loop ordering", &criterion_7));
    passed.push(need(8, "MPC optimizer sanity", &criterion_8));
    passed.push(report(9, "determinism and round trips", criterion_9()));

    let ok = passed.iter().filter(|p| **p).count();
    println!(
        "acceptance: {ok}/{} criteria passed in {:.0} s",
        passed.len(),
        started.elapsed().as_secs_f64()
    );
    if ok != passed.len() {
        std::process::exit(1);
    }
}
