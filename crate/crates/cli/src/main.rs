//! `modnn`: simulate the testbed, train models, audit their physical
//! consistency and compare them in closed-loop control.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use modnn::config::ExperimentConfig;
use modnn::consistency::full_report;
use modnn::model::{DynamicsModel, TrainedModel};
use modnn::mpc::{
    closed_loop, control_disturbances, control_metrics, train_control_law, ComfortBand, ControlReport, Controller,
    DirectMpc, OnOffController, PolicyController, PolicyScenario,
};
use modnn::testbed::{load_frame, run_baseline, save_frame, TimeSeriesFrame};
use modnn::training::{build_windows, split_frame, train};
use modnn::Error;

#[derive(Parser)]
#[command(name = "modnn", version, about = "Physics-constrained building models: simulate, train, audit, control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the on-off baseline and write the frame CSV.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Train every configured model variant on a frame.
    Train {
        #[command(flatten)]
        common: Common,
        /// Frame CSV; defaults to `<out>/frame.csv`.
        #[arg(long)]
        frame: Option<PathBuf>,
    },
    /// Accuracy and consistency report for each checkpoint.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        frame: Option<PathBuf>,
    },
    /// Closed-loop comparison of the baseline and MPC with each checkpoint.
    Control {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Frame CSV used to train control laws when `policy.enabled`.
        #[arg(long)]
        frame: Option<PathBuf>,
    },
}

struct Context {
    cfg: ExperimentConfig,
    out: PathBuf,
}

impl Context {
    fn new(common: &Common) -> modnn::Result<Self> {
        let mut cfg = ExperimentConfig::load(&common.config).map_err(|e| match e {
            Error::Io(io) => Error::Config {
                key: "--config".into(),
                message: format!("{}: {io}", common.config.display()),
            },
            other => other,
        })?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out));
        std::fs::create_dir_all(&out)?;
        std::fs::write(
            out.join("config.txt"),
            format!("# {}\n{}", cfg.stamp(), cfg.to_text()),
        )?;
        Ok(Self { cfg, out })
    }

    fn comments(&self) -> Vec<String> {
        vec![self.cfg.stamp(), format!("seed={}", self.cfg.seed)]
    }

    fn frame(&self, path: &Option<PathBuf>) -> modnn::Result<TimeSeriesFrame> {
        let path = path.clone().unwrap_or_else(|| self.out.join("frame.csv"));
        load_frame(&path)
    }

    fn load_model(&self, path: &Path) -> modnn::Result<TrainedModel> {
        let m = &self.cfg.model;
        TrainedModel::load(path, Some((m.history, m.horizon)))
    }
}

fn simulate(ctx: &Context) -> modnn::Result<()> {
    let frame = run_baseline(&ctx.cfg.testbed, ctx.cfg.days, ctx.cfg.seed)?;
    save_frame(&frame, &ctx.out.join("frame.csv"), &ctx.comments())?;
    eprintln!("wrote {} rows to {}", frame.len(), ctx.out.join("frame.csv").display());
    Ok(())
}

fn train_cmd(ctx: &Context, frame: &TimeSeriesFrame) -> modnn::Result<()> {
    let c = &ctx.cfg;
    let split = split_frame(frame, c.train.train_days, c.train.val_days)?;
    let (l, m) = (c.model.history, c.model.horizon);
    let train_w = build_windows(&split.train, l, m, c.train.stride)?;
    let val_w = build_windows(&split.val, l, m, c.train.val_stride)?;
    let hash = c.hash();
    for &variant in &c.model.variants {
        let mut model = TrainedModel::init(variant, l, m, c.model.hidden, c.model.flux, split.norm, c.seed);
        let report = train(&mut model, &train_w, &val_w, &c.train_hyper(), !c.fixed_epoch, &hash)?;
        model.save(&ctx.out.join(format!("{variant}.ckpt.json")), &hash)?;
        report.save(
            &ctx.out.join(format!("train_{variant}.json")),
            &ctx.out.join(format!("train_{variant}.csv")),
            &ctx.comments(),
        )?;
        let last = report.epochs.last();
        eprintln!(
            "{variant}: {} epochs, val mse {:.4}, val trv {:.3}, mae {:.3} °C",
            report.epochs.len(),
            last.map_or(f64::NAN, |e| e.val_mse),
            last.map_or(0.0, |e| e.val_trv),
            report.mae
        );
    }
    Ok(())
}

fn audit_cmd(ctx: &Context, frame: &TimeSeriesFrame, checkpoints: &[PathBuf]) -> modnn::Result<()> {
    let c = &ctx.cfg;
    let split = split_frame(frame, c.train.train_days, c.train.val_days)?;
    for path in checkpoints {
        let model = ctx.load_model(path)?;
        let variant = model.variant();
        let (report, pq) = full_report(&model, &variant.to_string(), &split.val, &c.audit, c.seed, &c.hash())?;
        report.save(&ctx.out.join(format!("audit_{variant}.json")))?;
        let mut buf = Vec::new();
        pq.write_csv(&mut buf, &ctx.comments())?;
        std::fs::write(ctx.out.join(format!("pairs_{variant}.csv")), buf)?;
        eprintln!(
            "{variant}: mae {:.3} °C, trv {:.3}/{:.3} °C·h, jacobian min {:.3e}, mmd {:.4}",
            report.mae, report.trv_plus, report.trv_minus, report.jacobian_min, report.mmd
        );
    }
    Ok(())
}

fn control_cmd(ctx: &Context, checkpoints: &[PathBuf], frame: &Option<PathBuf>) -> modnn::Result<()> {
    let c = &ctx.cfg;
    let models: Vec<TrainedModel> = checkpoints.iter().map(|p| ctx.load_model(p)).collect::<modnn::Result<_>>()?;
    let settings = c.mpc;
    let seed = c.seed.wrapping_add(settings.seed_offset);
    let dist = control_disturbances(&c.testbed, &settings, c.model.horizon, seed);
    let band = ComfortBand::occupied(&c.testbed, settings.comfort_low);
    let schedule = &c.testbed.schedule;

    let baseline = closed_loop(&c.testbed, &dist, &settings, &mut OnOffController::default())?;
    let mut runs = vec![(
        "baseline".to_string(),
        baseline.clone(),
        None,
    )];
    for model in &models {
        let mut mpc = DirectMpc::new(model, model.variant().to_string(), settings);
        let frame = closed_loop(&c.testbed, &dist, &settings, &mut mpc)?;
        runs.push((mpc.label(), frame, Some(mpc.stats())));
    }
    if c.policy.enabled && !models.is_empty() {
        let data = ctx.frame(frame)?;
        let split = split_frame(&data, c.train.train_days, c.train.val_days)?;
        for model in &models {
            let windows = build_windows(&split.train, model.history_len(), model.horizon(), c.policy.stride)?;
            let scenarios: Vec<PolicyScenario> = windows
                .into_iter()
                .map(|w| PolicyScenario {
                    loss: settings.loss_config(&c.testbed, &w.future),
                    window: w,
                })
                .collect();
            let (net, _) = train_control_law(
                model,
                &scenarios,
                &c.policy_hyper(),
                settings.u_low,
                settings.u_high,
                *model.norm(),
            )?;
            let mut law = PolicyController::new(&net, format!("{}-policy", model.variant()), settings);
            let frame = closed_loop(&c.testbed, &dist, &settings, &mut law)?;
            runs.push((law.label(), frame, None));
        }
    }

    let mut entries = Vec::with_capacity(runs.len());
    for (label, frame, stats) in &runs {
        save_frame(frame, &ctx.out.join(format!("control_{label}.csv")), &ctx.comments())?;
        let m = control_metrics(label, frame, &baseline, &band, schedule, *stats)?;
        let peak = m.peak_reduction_pct.map_or("n/a".to_string(), |p| format!("{p:.1}%"));
        eprintln!(
            "{label}: violation {:.3} °C·h, peak reduction {peak}, energy {:.1} kWh",
            m.violation_ch, m.energy_kwh
        );
        entries.push(m);
    }
    ControlReport {
        seed,
        band,
        settings,
        entries,
        config: c.to_text(),
        config_hash: c.hash(),
    }
    .save(&ctx.out.join("control_metrics.json"))
}

fn run(cli: Cli) -> modnn::Result<()> {
    match cli.command {
        Command::Simulate { common } => simulate(&Context::new(&common)?),
        Command::Train { common, frame } => {
            let ctx = Context::new(&common)?;
            let data = ctx.frame(&frame)?;
            train_cmd(&ctx, &data)
        }
        Command::Audit {
            common,
            checkpoint,
            frame,
        } => {
            let ctx = Context::new(&common)?;
            let data = ctx.frame(&frame)?;
            audit_cmd(&ctx, &data, &checkpoint)
        }
        Command::Control {
            common,
            checkpoint,
            frame,
        } => {
            let ctx = Context::new(&common)?;
            control_cmd(&ctx, &checkpoint, &frame)
        }
    }
}

/// 2 config, 3 training, 4 I/O or integrity, 5 numerical.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Training { .. } | Error::Dataset(_) | Error::NonFiniteGradient(_) => 3,
        Error::Io(_) | Error::Integrity(_) | Error::Ingestion { .. } => 4,
        Error::Shape(_)
        | Error::Contract(_)
        | Error::Simulation(_)
        | Error::Actuation(_)
        | Error::Metric(_)
        | Error::Optimizer { .. } => 5,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
