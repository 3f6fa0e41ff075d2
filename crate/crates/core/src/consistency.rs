//! Physical-consistency audit: temperature response violation, Jacobian
//! sign, and the maximum mean discrepancy between model-induced and
//! measured one-step responses.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    forward, jacobian_at, predict, ActuatorBounds, DynamicsModel, PredictionWindow,
};
use crate::testbed::{stream_rng, TestbedConfig, TimeSeriesFrame, STEP_HOURS};
use crate::training::mae_mape;

const PAIR_STREAM: u64 = 11;

/// Violation magnitudes in °C·h.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Trv {
    /// Nominal prediction above the no-cooling prediction.
    pub plus: f64,
    /// Full-cooling prediction above the nominal one.
    pub minus: f64,
}

impl Trv {
    pub fn total(&self) -> f64 {
        self.plus + self.minus
    }
}

/// Most negative HVAC power the audits inject: full flow with the zone two
/// degrees above the unoccupied setpoint, which keeps every logged input
/// inside the range.
pub fn cooling_floor(cfg: &TestbedConfig) -> f64 {
    cfg.hvac.max_cooling(cfg.schedule.setpoint_unoccupied + 2.0)
}

/// Temperature response violation over `windows`, injecting `u_ceiling`
/// (no cooling) and `u_floor` (full cooling) over each whole horizon.
pub fn trv<M: DynamicsModel + ?Sized>(
    model: &M,
    windows: &[&PredictionWindow],
    u_floor: f64,
    u_ceiling: f64,
) -> Result<Trv> {
    if !(u_floor <= u_ceiling) {
        return Err(Error::Contract(format!(
            "u_floor {u_floor} above u_ceiling {u_ceiling}"
        )));
    }
    let bounds = ActuatorBounds {
        low: u_floor,
        high: u_ceiling,
    };
    let mut out = Trv::default();
    for w in windows {
        bounds.check(&w.future_u).map_err(|e| {
            Error::Contract(format!("window at row {}: {e}", w.anchor))
        })?;
        let ctx = model.prepare(w)?;
        let m = model.horizon();
        let nominal = predict(model, &ctx, &w.future_u)?;
        let up = predict(model, &ctx, &vec![u_ceiling; m])?;
        let down = predict(model, &ctx, &vec![u_floor; m])?;
        for t in 0..m {
            out.plus += (nominal[t] - up[t]).max(0.0) * STEP_HOURS;
            out.minus += (down[t] - nominal[t]).max(0.0) * STEP_HOURS;
        }
    }
    Ok(out)
}

/// Minimum causal (`s <= t`) entry of the HVAC Jacobian over `windows`.
/// `+∞` for an empty set.
pub fn jacobian_min<M: DynamicsModel + ?Sized>(model: &M, windows: &[&PredictionWindow]) -> Result<f64> {
    let mut min = f64::INFINITY;
    for w in windows {
        let ctx = model.prepare(w)?;
        let jac = jacobian_at(model, &ctx, &w.future_u)?;
        for t in 0..jac.nrows() {
            for s in 0..=t {
                min = min.min(jac[[t, s]]);
            }
        }
    }
    Ok(min)
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Contract(format!("kernel bandwidth must be > 0, got {sigma}")));
    }
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-d2 / (2.0 * sigma * sigma)).exp())
}

/// One-step HVAC power change and the zone temperature change over the
/// same step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponsePair {
    pub du: f64,
    pub dt: f64,
}

impl ResponsePair {
    fn point(&self) -> [f64; 2] {
        [self.du, self.dt]
    }
}

fn mean_kernel(a: &[ResponsePair], b: &[ResponsePair], inv_two_s2: f64) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            let d0 = x.du - y.du;
            let d1 = x.dt - y.dt;
            total += (-(d0 * d0 + d1 * d1) * inv_two_s2).exp();
        }
    }
    total / (a.len() * b.len()) as f64
}

/// Whether `a` sorts before `b` by length, then by content.
fn canonical_order(a: &[ResponsePair], b: &[ResponsePair]) -> bool {
    if a.len() != b.len() {
        return a.len() < b.len();
    }
    for (x, y) in a.iter().zip(b) {
        let ord = x.du.total_cmp(&y.du).then(x.dt.total_cmp(&y.dt));
        if ord != std::cmp::Ordering::Equal {
            return ord == std::cmp::Ordering::Less;
        }
    }
    true
}

/// Biased (V-statistic) estimate of MMD² with a Gaussian kernel.
pub fn mmd2(p: &[ResponsePair], q: &[ResponsePair], sigma: f64) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::Contract(format!(
            "MMD needs non-empty sets, got |P| = {} and |Q| = {}",
            p.len(),
            q.len()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Contract(format!("kernel bandwidth must be > 0, got {sigma}")));
    }
    let k = 1.0 / (2.0 * sigma * sigma);
    let pp = mean_kernel(p, p, k);
    let qq = mean_kernel(q, q, k);
    // the cross term is symmetric; summing it in a canonical order keeps
    // mmd2(P, Q) == mmd2(Q, P) bit for bit
    let pq = if canonical_order(p, q) {
        mean_kernel(p, q, k)
    } else {
        mean_kernel(q, p, k)
    };
    Ok(pp + qq - 2.0 * pq)
}

/// Square root of a possibly slightly negative MMD² estimate.
pub fn mmd_from(mmd2: f64) -> f64 {
    mmd2.max(0.0).sqrt()
}

/// Indices of `k` evenly spaced items out of `n` (all of them if `k >= n`).
pub fn evenly_spaced(n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    if k == 0 {
        return Vec::new();
    }
    (0..k).map(|i| i * n / k).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum SigmaPolicy {
    /// Median pairwise distance over the pooled, standardized pairs.
    Median,
    Fixed(f64),
}

/// Shape of the random HVAC test sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSignal {
    /// Independent uniform draw in `[u_floor, 0]` at every step.
    Uniform,
    /// Held segments of random length; each segment is off, or on at a
    /// uniform level in `[u_floor, 0]`, with the on fraction matching the
    /// frame's duty cycle.
    Telegraph,
}

impl std::str::FromStr for TestSignal {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(TestSignal::Uniform),
            "telegraph" => Ok(TestSignal::Telegraph),
            other => Err(format!("unknown test signal `{other}` (expected uniform or telegraph)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PqConfig {
    /// Windows the test sequence is injected into.
    pub windows: usize,
    pub u_floor: f64,
    pub signal: TestSignal,
    /// Longest held segment of the telegraph signal, steps.
    pub max_segment: usize,
    pub sigma: SigmaPolicy,
    /// Points used for the median heuristic.
    pub sigma_points: usize,
}

impl Default for PqConfig {
    fn default() -> Self {
        Self {
            windows: 64,
            u_floor: cooling_floor(&TestbedConfig::default()),
            signal: TestSignal::Uniform,
            max_segment: 8,
            sigma: SigmaPolicy::Median,
            sigma_points: 512,
        }
    }
}

/// Joint standardization applied to both pair sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScaling {
    pub du_mean: f64,
    pub du_std: f64,
    pub dt_mean: f64,
    pub dt_std: f64,
}

impl PairScaling {
    fn fit(pairs: &[ResponsePair]) -> Self {
        let n = pairs.len().max(1) as f64;
        let du_mean = pairs.iter().map(|p| p.du).sum::<f64>() / n;
        let dt_mean = pairs.iter().map(|p| p.dt).sum::<f64>() / n;
        let std = |f: &dyn Fn(&ResponsePair) -> f64, mean: f64| {
            let s = (pairs.iter().map(|p| (f(p) - mean).powi(2)).sum::<f64>() / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        };
        Self {
            du_mean,
            du_std: std(&|p| p.du, du_mean),
            dt_mean,
            dt_std: std(&|p| p.dt, dt_mean),
        }
    }

    pub fn apply(&self, p: &ResponsePair) -> ResponsePair {
        ResponsePair {
            du: (p.du - self.du_mean) / self.du_std,
            dt: (p.dt - self.dt_mean) / self.dt_std,
        }
    }
}

/// Model-induced pairs `p`, measured pairs `q` (both in physical units),
/// the scaling and the bandwidth for the standardized sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PqSet {
    pub p: Vec<ResponsePair>,
    pub q: Vec<ResponsePair>,
    pub scaling: PairScaling,
    pub sigma: f64,
}

impl PqSet {
    pub fn p_scaled(&self) -> Vec<ResponsePair> {
        self.p.iter().map(|x| self.scaling.apply(x)).collect()
    }

    pub fn q_scaled(&self) -> Vec<ResponsePair> {
        self.q.iter().map(|x| self.scaling.apply(x)).collect()
    }

    /// `(MMD², MMD)` on at most `max_pairs` evenly spaced pairs per set.
    pub fn mmd(&self, max_pairs: usize) -> Result<(f64, f64)> {
        let p = self.p_scaled();
        let q = self.q_scaled();
        let p: Vec<_> = evenly_spaced(p.len(), max_pairs).into_iter().map(|i| p[i]).collect();
        let q: Vec<_> = evenly_spaced(q.len(), max_pairs).into_iter().map(|i| q[i]).collect();
        let m2 = mmd2(&p, &q, self.sigma)?;
        Ok((m2, mmd_from(m2)))
    }

    /// CSV of both sets for scatter plots: `set,du_w,dt_c`.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "set,du_w,dt_c")?;
        for (tag, set) in [("model", &self.p), ("data", &self.q)] {
            for pair in set.iter() {
                writeln!(w, "{tag},{},{}", pair.du, pair.dt)?;
            }
        }
        Ok(())
    }
}

/// Consecutive-row pairs of a frame: `n - 1` of them.
pub fn frame_pairs(frame: &TimeSeriesFrame) -> Vec<ResponsePair> {
    (1..frame.len())
        .map(|i| ResponsePair {
            du: frame.u_hvac[i] - frame.u_hvac[i - 1],
            dt: frame.t_zone[i] - frame.t_zone[i - 1],
        })
        .collect()
}

fn test_sequence<R: Rng>(rng: &mut R, m: usize, cfg: &PqConfig, duty: f64) -> Vec<f64> {
    match cfg.signal {
        TestSignal::Uniform => (0..m).map(|_| rng.gen_range(cfg.u_floor..=0.0)).collect(),
        TestSignal::Telegraph => {
            let mut out = Vec::with_capacity(m);
            while out.len() < m {
                let len = rng.gen_range(1..=cfg.max_segment.max(1));
                let on = rng.gen_bool(duty.clamp(0.0, 1.0));
                let level = rng.gen_range(cfg.u_floor..=0.0);
                let value = if on { level } else { 0.0 };
                out.extend(std::iter::repeat(value).take(len.min(m - out.len())));
            }
            out
        }
    }
}

/// Median pairwise distance over evenly spaced points.
fn median_distance(points: &[ResponsePair], max_points: usize) -> f64 {
    let idx = evenly_spaced(points.len(), max_points.max(2));
    let mut d = Vec::with_capacity(idx.len() * idx.len() / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let [x0, x1] = points[i].point();
            let [y0, y1] = points[j].point();
            d.push(((x0 - y0).powi(2) + (x1 - y1).powi(2)).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 {
        0.5 * (d[mid - 1] + d[mid])
    } else {
        d[mid]
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Builds the model-induced set `P` by injecting random HVAC sequences into
/// evenly spaced windows of `frame`, and the measured set `Q` from the
/// frame's consecutive rows.
pub fn build_pq<M: DynamicsModel + ?Sized>(
    model: &M,
    frame: &TimeSeriesFrame,
    seed: u64,
    cfg: &PqConfig,
) -> Result<PqSet> {
    let (l, m) = (model.history_len(), model.horizon());
    if frame.len() < l + 1 + m {
        return Err(Error::Dataset(format!(
            "frame of {} rows is shorter than one window ({})",
            frame.len(),
            l + 1 + m
        )));
    }
    let duty = frame.u_hvac.iter().filter(|&&u| u < 0.0).count() as f64 / frame.len() as f64;
    let anchors = frame.len() - l - m;
    let mut rng = stream_rng(seed, PAIR_STREAM);
    let mut p = Vec::new();
    for k in evenly_spaced(anchors, cfg.windows) {
        let w = PredictionWindow::from_frame(frame, l + k, l, m)?;
        let u = test_sequence(&mut rng, m, cfg, duty);
        let ctx = model.prepare(&w)?;
        let y = predict(model, &ctx, &u)?;
        let (mut u_prev, mut y_prev) = (w.current.u_hvac, w.current.t_zone);
        for t in 0..m {
            p.push(ResponsePair {
                du: u[t] - u_prev,
                dt: y[t] - y_prev,
            });
            u_prev = u[t];
            y_prev = y[t];
        }
    }
    let q = frame_pairs(frame);
    let pooled: Vec<ResponsePair> = p.iter().chain(&q).copied().collect();
    let scaling = PairScaling::fit(&pooled);
    let sigma = match cfg.sigma {
        SigmaPolicy::Fixed(s) => s,
        SigmaPolicy::Median => {
            let scaled: Vec<_> = pooled.iter().map(|x| scaling.apply(x)).collect();
            median_distance(&scaled, cfg.sigma_points)
        }
    };
    if !(sigma > 0.0) {
        return Err(Error::Contract(format!("kernel bandwidth must be > 0, got {sigma}")));
    }
    Ok(PqSet { p, q, scaling, sigma })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    /// Stride between evaluated windows, steps.
    pub stride: usize,
    /// Windows sampled for the Jacobian.
    pub jacobian_windows: usize,
    /// Pairs per set used in the MMD estimate.
    pub max_pairs: usize,
    pub pq: PqConfig,
    pub bounds: ActuatorBounds,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            jacobian_windows: 100,
            max_pairs: 2000,
            pq: PqConfig::default(),
            bounds: ActuatorBounds {
                low: cooling_floor(&TestbedConfig::default()),
                high: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub variant: String,
    pub mae: f64,
    pub mape: f64,
    pub trv_plus: f64,
    pub trv_minus: f64,
    pub jacobian_min: f64,
    pub mmd: f64,
    pub mmd2: f64,
    pub sigma: f64,
    pub estimator: String,
    pub kernel: String,
    pub pair_scaling: PairScaling,
    pub windows_accuracy: usize,
    pub windows_jacobian: usize,
    pub pairs_p: usize,
    pub pairs_q: usize,
    pub pairs_used: usize,
    pub seed: u64,
    pub config: AuditConfig,
    pub config_hash: String,
}

/// Accuracy and consistency of `model` on `frame`, with the pair sets.
pub fn full_report<M: DynamicsModel + ?Sized>(
    model: &M,
    variant: &str,
    frame: &TimeSeriesFrame,
    cfg: &AuditConfig,
    seed: u64,
    config_hash: &str,
) -> Result<(ConsistencyReport, PqSet)> {
    let (l, m) = (model.history_len(), model.horizon());
    let windows = crate::training::build_windows(frame, l, m, cfg.stride.max(1))?;
    let refs: Vec<&PredictionWindow> = windows.iter().collect();

    let mut pred = Vec::with_capacity(windows.len() * m);
    let mut truth = Vec::with_capacity(windows.len() * m);
    for w in &refs {
        pred.extend(forward(model, w)?);
        truth.extend(w.truth.as_ref().expect("frame windows carry truth"));
    }
    let (mae, mape) = mae_mape(&pred, &truth)?;
    let t = trv(model, &refs, cfg.bounds.low, cfg.bounds.high)?;
    let jac: Vec<&PredictionWindow> = evenly_spaced(refs.len(), cfg.jacobian_windows)
        .into_iter()
        .map(|i| refs[i])
        .collect();
    let jmin = jacobian_min(model, &jac)?;
    let pq = build_pq(model, frame, seed, &cfg.pq)?;
    let (m2, mmd) = pq.mmd(cfg.max_pairs)?;
    let report = ConsistencyReport {
        variant: variant.to_string(),
        mae,
        mape,
        trv_plus: t.plus,
        trv_minus: t.minus,
        jacobian_min: jmin,
        mmd,
        mmd2: m2,
        sigma: pq.sigma,
        estimator: "biased V-statistic".into(),
        kernel: match cfg.pq.sigma {
            SigmaPolicy::Median => "gaussian, median-heuristic bandwidth on jointly standardized pairs".into(),
            SigmaPolicy::Fixed(_) => "gaussian, fixed bandwidth on jointly standardized pairs".into(),
        },
        pair_scaling: pq.scaling,
        windows_accuracy: refs.len(),
        windows_jacobian: jac.len(),
        pairs_p: pq.p.len(),
        pairs_q: pq.q.len(),
        pairs_used: pq.p.len().min(cfg.max_pairs) + pq.q.len().min(cfg.max_pairs),
        seed,
        config: *cfg,
        config_hash: config_hash.to_string(),
    };
    Ok((report, pq))
}

impl ConsistencyReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_examples() {
        assert_eq!(gaussian_kernel(&[1.0, 2.0], &[1.0, 2.0], 0.3).unwrap(), 1.0);
        let sigma: f64 = 0.7;
        let d = (2.0f64).sqrt() * sigma;
        let k = gaussian_kernel(&[0.0], &[d], sigma).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!(gaussian_kernel(&[0.0], &[1.0], 0.0).is_err());
        assert!(gaussian_kernel(&[0.0], &[1.0], -1.0).is_err());
        let mut prev = 0.0;
        for s in [0.5, 1.0, 2.0, 10.0, 100.0, 1e4] {
            let k = gaussian_kernel(&[0.0, 1.0], &[2.0, -1.0], s).unwrap();
            assert!(k > prev && k <= 1.0);
            prev = k;
        }
        assert!(prev > 0.9999);
    }

    #[test]
    fn mmd_singletons() {
        let p = [ResponsePair { du: 0.0, dt: 0.0 }];
        let q = [ResponsePair { du: 1.0, dt: 0.0 }];
        let v = mmd2(&p, &q, 1.0).unwrap();
        assert!((v - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-12);
        assert!((v - 0.78694).abs() < 1e-5);
        assert!(mmd2(&[], &q, 1.0).is_err());
    }

    #[test]
    fn evenly_spaced_counts() {
        assert_eq!(evenly_spaced(10, 3), vec![0, 3, 6]);
        assert_eq!(evenly_spaced(3, 10), vec![0, 1, 2]);
        assert!(evenly_spaced(5, 0).is_empty());
    }

    #[test]
    fn median_distance_of_line() {
        let pts: Vec<_> = (0..5).map(|i| ResponsePair { du: i as f64, dt: 0.0 }).collect();
        // distances 1,1,1,1,2,2,2,3,3,4 -> median 2
        assert_eq!(median_distance(&pts, 100), 2.0);
    }
}
