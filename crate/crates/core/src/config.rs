//! Experiment configuration as flat `key = value` text.
//!
//! Blank lines and `#` comments are ignored, every key is optional except
//! `seed`, and unknown keys are rejected. [`ExperimentConfig::to_text`]
//! renders every key in a fixed order; its SHA-256 prefix is the config
//! hash stamped on every output.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consistency::{cooling_floor, AuditConfig, SigmaPolicy, TestSignal};
use crate::error::{Error, Result};
use crate::model::ModelVariant;
use crate::mpc::{MpcSettings, PolicyHyper};
use crate::testbed::{TestbedConfig, STEPS_PER_DAY};
use crate::training::TrainHyper;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub variants: Vec<ModelVariant>,
    pub history: usize,
    pub horizon: usize,
    pub hidden: usize,
    /// Width of the latent heat fluxes.
    pub flux: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            variants: vec![ModelVariant::Modnn],
            history: 96,
            horizon: 96,
            hidden: 16,
            flux: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    /// Steps between training windows.
    pub stride: usize,
    /// Steps between validation windows.
    pub val_stride: usize,
    pub train_days: usize,
    pub val_days: usize,
    pub monitor_windows: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-3,
            batch: 32,
            stride: 4,
            val_stride: 4,
            train_days: 70,
            val_days: 20,
            monitor_windows: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicySettings {
    /// Also train and run the control-law network.
    pub enabled: bool,
    pub hyper: PolicyHyper,
    /// Steps between training scenarios.
    pub stride: usize,
}

impl Default for PolicySettings {
    fn default() -> Self {
        Self {
            enabled: false,
            hyper: PolicyHyper::default(),
            stride: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Length of the simulated baseline run.
    pub days: usize,
    /// Write zero wall-clock times so reruns are byte-identical.
    pub fixed_epoch: bool,
    /// Default output directory.
    pub out: String,
    pub testbed: TestbedConfig,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub audit: AuditConfig,
    pub mpc: MpcSettings,
    pub policy: PolicySettings,
}

impl ExperimentConfig {
    /// Defaults everywhere, with cooling bounds derived from the testbed.
    pub fn with_seed(seed: u64) -> Self {
        let testbed = TestbedConfig::default();
        let mut audit = AuditConfig::default();
        let floor = cooling_floor(&testbed);
        audit.bounds.low = floor;
        audit.pq.u_floor = floor;
        Self {
            seed,
            days: 92,
            fixed_epoch: false,
            out: "out".into(),
            testbed,
            model: ModelSettings::default(),
            train: TrainSettings::default(),
            audit,
            mpc: MpcSettings::for_testbed(&testbed),
            policy: PolicySettings::default(),
        }
    }
}

/// A value that round-trips through config text.
trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                <$t as FromStr>::from_str(s).map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(u64, usize, bool, String);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("must be finite".into())
        }
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl ConfigValue for TestSignal {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse()
    }
    fn render(&self) -> String {
        match self {
            TestSignal::Uniform => "uniform".into(),
            TestSignal::Telegraph => "telegraph".into(),
        }
    }
}

impl ConfigValue for SigmaPolicy {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s == "median" {
            return Ok(SigmaPolicy::Median);
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(SigmaPolicy::Fixed(v)),
            _ => Err(format!("expected `median` or a positive number, got `{s}`")),
        }
    }
    fn render(&self) -> String {
        match self {
            SigmaPolicy::Median => "median".into(),
            SigmaPolicy::Fixed(v) => format!("{v:?}"),
        }
    }
}

impl ConfigValue for Vec<ModelVariant> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let out: Vec<ModelVariant> = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<std::result::Result<_, _>>()?;
        if out.is_empty() {
            return Err("at least one variant".into());
        }
        Ok(out)
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

trait Visitor {
    fn field<T: ConfigValue>(&mut self, key: &'static str, value: &mut T) -> Result<()>;
}

fn visit_all<V: Visitor>(c: &mut ExperimentConfig, v: &mut V) -> Result<()> {
    v.field("seed", &mut c.seed)?;
    v.field("days", &mut c.days)?;
    v.field("fixed_epoch", &mut c.fixed_epoch)?;
    v.field("out", &mut c.out)?;

    let t = &mut c.testbed;
    v.field("rc.c_zone", &mut t.rc.c_zone)?;
    v.field("rc.r_env", &mut t.rc.r_env)?;
    v.field("rc.a_solar", &mut t.rc.a_solar)?;
    v.field("rc.q_person", &mut t.rc.q_person)?;
    v.field("rc.q_base", &mut t.rc.q_base)?;
    v.field("rc.t_init", &mut t.t_init)?;
    v.field("hvac.t_supply", &mut t.hvac.t_supply)?;
    v.field("hvac.flow_max", &mut t.hvac.flow_max)?;
    v.field("hvac.rho_air", &mut t.hvac.rho_air)?;
    v.field("hvac.cp_air", &mut t.hvac.cp_air)?;
    v.field("hvac.cop", &mut t.hvac.cop)?;
    let s = &mut t.schedule;
    v.field("schedule.setpoint_occupied", &mut s.setpoint_occupied)?;
    v.field("schedule.setpoint_unoccupied", &mut s.setpoint_unoccupied)?;
    v.field("schedule.deadband", &mut s.deadband)?;
    v.field("schedule.depart_earliest", &mut s.depart_earliest)?;
    v.field("schedule.depart_latest", &mut s.depart_latest)?;
    v.field("schedule.arrive_earliest", &mut s.arrive_earliest)?;
    v.field("schedule.arrive_latest", &mut s.arrive_latest)?;
    v.field("schedule.peak_start", &mut s.peak_start)?;
    v.field("schedule.peak_end", &mut s.peak_end)?;
    v.field("schedule.occupants", &mut s.occupants)?;
    let w = &mut t.weather;
    v.field("weather.mean_c", &mut w.mean_c)?;
    v.field("weather.amplitude_c", &mut w.amplitude_c)?;
    v.field("weather.peak_hour", &mut w.peak_hour)?;
    v.field("weather.noise_c", &mut w.noise_c)?;
    v.field("weather.daily_spread_c", &mut w.daily_spread_c)?;
    v.field("weather.solar_peak", &mut w.solar_peak)?;
    v.field("weather.sunrise", &mut w.sunrise)?;
    v.field("weather.sunset", &mut w.sunset)?;

    let m = &mut c.model;
    v.field("model.variants", &mut m.variants)?;
    v.field("model.history", &mut m.history)?;
    v.field("model.horizon", &mut m.horizon)?;
    v.field("model.hidden", &mut m.hidden)?;
    v.field("model.flux", &mut m.flux)?;

    let tr = &mut c.train;
    v.field("train.epochs", &mut tr.epochs)?;
    v.field("train.lr", &mut tr.lr)?;
    v.field("train.batch", &mut tr.batch)?;
    v.field("train.stride", &mut tr.stride)?;
    v.field("train.val_stride", &mut tr.val_stride)?;
    v.field("train.train_days", &mut tr.train_days)?;
    v.field("train.val_days", &mut tr.val_days)?;
    v.field("train.monitor_windows", &mut tr.monitor_windows)?;

    let a = &mut c.audit;
    v.field("audit.stride", &mut a.stride)?;
    v.field("audit.jacobian_windows", &mut a.jacobian_windows)?;
    v.field("audit.max_pairs", &mut a.max_pairs)?;
    v.field("audit.u_floor", &mut a.bounds.low)?;
    v.field("audit.u_ceiling", &mut a.bounds.high)?;
    v.field("audit.pq_windows", &mut a.pq.windows)?;
    v.field("audit.signal", &mut a.pq.signal)?;
    v.field("audit.max_segment", &mut a.pq.max_segment)?;
    v.field("audit.sigma", &mut a.pq.sigma)?;
    v.field("audit.sigma_points", &mut a.pq.sigma_points)?;

    let p = &mut c.mpc;
    v.field("mpc.w_obj", &mut p.w_obj)?;
    v.field("mpc.w_input", &mut p.w_input)?;
    v.field("mpc.w_comfort", &mut p.w_comfort)?;
    v.field("mpc.price_off_peak", &mut p.price_off_peak)?;
    v.field("mpc.price_peak", &mut p.price_peak)?;
    v.field("mpc.comfort_low", &mut p.comfort_low)?;
    v.field("mpc.u_low", &mut p.u_low)?;
    v.field("mpc.u_high", &mut p.u_high)?;
    v.field("mpc.iters", &mut p.optimizer.iters)?;
    v.field("mpc.step", &mut p.optimizer.step)?;
    v.field("mpc.tol", &mut p.optimizer.tol)?;
    v.field("mpc.max_backtracks", &mut p.optimizer.max_backtracks)?;
    v.field("mpc.warmup_days", &mut p.warmup_days)?;
    v.field("mpc.days", &mut p.days)?;
    v.field("mpc.seed_offset", &mut p.seed_offset)?;

    let q = &mut c.policy;
    v.field("policy.enabled", &mut q.enabled)?;
    v.field("policy.hidden", &mut q.hyper.hidden)?;
    v.field("policy.epochs", &mut q.hyper.epochs)?;
    v.field("policy.lr", &mut q.hyper.lr)?;
    v.field("policy.batch", &mut q.hyper.batch)?;
    v.field("policy.stride", &mut q.stride)?;
    Ok(())
}

struct Reader {
    values: BTreeMap<String, String>,
    seen: BTreeSet<&'static str>,
}

impl Visitor for Reader {
    fn field<T: ConfigValue>(&mut self, key: &'static str, value: &mut T) -> Result<()> {
        if let Some(text) = self.values.get(key) {
            *value = T::parse_value(text).map_err(|e| Error::config(key, format!("cannot parse `{text}`: {e}")))?;
            self.seen.insert(key);
        }
        Ok(())
    }
}

struct Writer {
    lines: Vec<String>,
}

impl Visitor for Writer {
    fn field<T: ConfigValue>(&mut self, key: &'static str, value: &mut T) -> Result<()> {
        self.lines.push(format!("{key} = {}", value.render()));
        Ok(())
    }
}

fn parse_lines(text: &str) -> Result<BTreeMap<String, String>> {
    let mut values = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`")));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(Error::config(format!("line {}", n + 1), "empty key"));
        }
        if values.insert(key.to_string(), value.to_string()).is_some() {
            return Err(Error::config(key, "given more than once"));
        }
    }
    Ok(values)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let values = parse_lines(text)?;
        let Some(seed) = values.get("seed") else {
            return Err(Error::config("seed", "required key is missing"));
        };
        let seed = u64::parse_value(seed).map_err(|e| Error::config("seed", e))?;
        let mut cfg = Self::with_seed(seed);
        let mut reader = Reader {
            values,
            seen: BTreeSet::new(),
        };
        visit_all(&mut cfg, &mut reader)?;
        if let Some(unknown) = reader.values.keys().find(|k| !reader.seen.contains(k.as_str())) {
            return Err(Error::config(unknown.clone(), "unknown key"));
        }
        // bounds follow the plant unless set explicitly
        if !reader.seen.contains("audit.u_floor") {
            cfg.audit.bounds.low = cooling_floor(&cfg.testbed);
        }
        if !reader.seen.contains("mpc.u_low") {
            cfg.mpc.u_low = cfg.testbed.hvac.max_cooling(cfg.testbed.schedule.setpoint_occupied);
        }
        cfg.audit.pq.u_floor = cfg.audit.bounds.low;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Every key in a fixed order; parsing it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut copy = self.clone();
        let mut w = Writer { lines: Vec::new() };
        visit_all(&mut copy, &mut w).expect("writer never fails");
        let mut out = w.lines.join("\n");
        out.push('\n');
        out
    }

    /// First 16 hex digits of the SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        self.testbed.validate()?;
        self.mpc.validate()?;
        let positive = [
            ("days", self.days),
            ("model.history", self.model.history),
            ("model.hidden", self.model.hidden),
            ("model.flux", self.model.flux),
            ("train.batch", self.train.batch),
            ("train.stride", self.train.stride),
            ("train.val_stride", self.train.val_stride),
            ("train.train_days", self.train.train_days),
            ("train.val_days", self.train.val_days),
            ("audit.stride", self.audit.stride),
            ("audit.pq_windows", self.audit.pq.windows),
            ("audit.max_pairs", self.audit.max_pairs),
            ("audit.max_segment", self.audit.pq.max_segment),
            ("audit.sigma_points", self.audit.pq.sigma_points),
            ("policy.hidden", self.policy.hyper.hidden),
            ("policy.batch", self.policy.hyper.batch),
            ("policy.stride", self.policy.stride),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be >= 1"));
            }
        }
        if !(self.train.lr > 0.0) {
            return Err(Error::config("train.lr", "must be > 0"));
        }
        if !(self.policy.hyper.lr > 0.0) {
            return Err(Error::config("policy.lr", "must be > 0"));
        }
        if self.train.train_days + self.train.val_days > self.days {
            return Err(Error::config(
                "train.val_days",
                format!(
                    "train and validation days ({} + {}) exceed the {}-day run",
                    self.train.train_days, self.train.val_days, self.days
                ),
            ));
        }
        let need = self.model.history + 1 + self.model.horizon;
        if self.train.val_days * STEPS_PER_DAY < need {
            return Err(Error::config(
                "train.val_days",
                format!("validation split is shorter than one {need}-step window"),
            ));
        }
        if self.mpc.warmup_days * STEPS_PER_DAY < self.model.history + 1 {
            return Err(Error::config("mpc.warmup_days", "warm-up is shorter than the model history"));
        }
        if !(self.audit.bounds.low <= self.audit.bounds.high) {
            return Err(Error::config("audit.u_floor", "must not exceed audit.u_ceiling"));
        }
        Ok(())
    }

    pub fn train_hyper(&self) -> TrainHyper {
        TrainHyper {
            epochs: self.train.epochs,
            lr: self.train.lr,
            batch: self.train.batch,
            seed: self.seed,
            monitor_windows: self.train.monitor_windows,
            u_floor: self.audit.bounds.low,
            u_ceiling: self.audit.bounds.high,
        }
    }

    pub fn policy_hyper(&self) -> PolicyHyper {
        PolicyHyper {
            seed: self.seed,
            ..self.policy.hyper
        }
    }

    /// `config_hash=...` line for CSV headers.
    pub fn stamp(&self) -> String {
        format!("config_hash={}", self.hash())
    }
}
