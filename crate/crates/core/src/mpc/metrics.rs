//! Comfort, peak and energy metrics of closed-loop frames.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::closed_loop::SolverStats;
use crate::error::{Error, Result};
use crate::testbed::{SchedulePolicy, TestbedConfig, TimeSeriesFrame, STEP_HOURS};

/// Comfort band applied to occupied steps, °C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComfortBand {
    pub top: f64,
    pub low: f64,
}

impl ComfortBand {
    /// The thermostat's own tolerance: the occupied setpoint plus half the
    /// deadband, with `low` as the floor.
    pub fn occupied(cfg: &TestbedConfig, low: f64) -> Self {
        Self {
            top: cfg.schedule.setpoint_occupied + cfg.schedule.deadband / 2.0,
            low,
        }
    }

    fn excess(&self, t: f64) -> f64 {
        (t - self.top).max(0.0) + (self.low - t).max(0.0)
    }
}

/// Degree-hours outside `band` over occupied steps, °C·h.
pub fn temp_violation(frame: &TimeSeriesFrame, band: &ComfortBand) -> f64 {
    (0..frame.len())
        .filter(|&i| frame.occupied(i))
        .map(|i| band.excess(frame.t_zone[i]) * STEP_HOURS)
        .sum()
}

pub fn energy_kwh(frame: &TimeSeriesFrame) -> f64 {
    frame.p_elec.iter().sum::<f64>() * STEP_HOURS / 1000.0
}

/// Row ranges of each calendar day, in order.
fn day_ranges(frame: &TimeSeriesFrame) -> Vec<(NaiveDate, std::ops::Range<usize>)> {
    let mut days: BTreeMap<NaiveDate, std::ops::Range<usize>> = BTreeMap::new();
    for i in 0..frame.len() {
        let d = frame.timestamp(i).date();
        days.entry(d).and_modify(|r| r.end = i + 1).or_insert(i..i + 1);
    }
    days.into_iter().collect()
}

/// Highest electric power inside the peak window of each day, W.
fn daily_peaks(frame: &TimeSeriesFrame, schedule: &SchedulePolicy) -> Vec<(NaiveDate, f64)> {
    day_ranges(frame)
        .into_iter()
        .map(|(d, r)| {
            let peak = r
                .filter(|&i| schedule.in_peak(frame.hour_of_day(i)))
                .map(|i| frame.p_elec[i])
                .fold(0.0, f64::max);
            (d, peak)
        })
        .collect()
}

fn check_aligned(frame: &TimeSeriesFrame, baseline: &TimeSeriesFrame) -> Result<()> {
    if frame.len() != baseline.len() || frame.start != baseline.start {
        return Err(Error::Metric(format!(
            "frames are not aligned: {} rows from {} vs {} rows from {}",
            frame.len(),
            frame.start,
            baseline.len(),
            baseline.start
        )));
    }
    Ok(())
}

/// Per-day `100·(1 − peak / baseline peak)`, averaged over the days whose
/// baseline peak is positive.
pub fn peak_load_reduction(frame: &TimeSeriesFrame, baseline: &TimeSeriesFrame, schedule: &SchedulePolicy) -> Result<f64> {
    check_aligned(frame, baseline)?;
    let ours = daily_peaks(frame, schedule);
    let theirs = daily_peaks(baseline, schedule);
    let reductions: Vec<f64> = ours
        .iter()
        .zip(&theirs)
        .filter(|(_, (_, b))| *b > 0.0)
        .map(|((_, p), (_, b))| 100.0 * (1.0 - p / b))
        .collect();
    if reductions.is_empty() {
        return Err(Error::Metric("baseline never draws power in the peak window".into()));
    }
    Ok(reductions.iter().sum::<f64>() / reductions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMetrics {
    pub date: NaiveDate,
    pub violation_ch: f64,
    pub peak_kw: f64,
    pub energy_kwh: f64,
    /// `None` when the baseline draws nothing in that day's peak window.
    pub peak_reduction_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMetrics {
    pub controller: String,
    pub violation_ch: f64,
    /// `None` when the baseline never draws power in a peak window.
    pub peak_reduction_pct: Option<f64>,
    pub energy_kwh: f64,
    pub solver: Option<SolverStats>,
    pub days: Vec<DayMetrics>,
}

/// All metrics of `frame` against the aligned `baseline` run.
pub fn control_metrics(
    controller: &str,
    frame: &TimeSeriesFrame,
    baseline: &TimeSeriesFrame,
    band: &ComfortBand,
    schedule: &SchedulePolicy,
    solver: Option<SolverStats>,
) -> Result<ControlMetrics> {
    check_aligned(frame, baseline)?;
    let base_peaks = daily_peaks(baseline, schedule);
    let days = day_ranges(frame)
        .into_iter()
        .zip(daily_peaks(frame, schedule))
        .zip(base_peaks)
        .map(|(((date, r), (_, peak)), (_, base))| {
            let day = frame.slice(r);
            DayMetrics {
                date,
                violation_ch: temp_violation(&day, band),
                peak_kw: peak / 1000.0,
                energy_kwh: energy_kwh(&day),
                peak_reduction_pct: (base > 0.0).then(|| 100.0 * (1.0 - peak / base)),
            }
        })
        .collect();
    Ok(ControlMetrics {
        controller: controller.to_string(),
        violation_ch: temp_violation(frame, band),
        peak_reduction_pct: peak_load_reduction(frame, baseline, schedule).ok(),
        energy_kwh: energy_kwh(frame),
        solver,
        days,
    })
}

/// Metrics of every controller of one closed-loop comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReport {
    pub seed: u64,
    pub band: ComfortBand,
    pub settings: super::MpcSettings,
    pub entries: Vec<ControlMetrics>,
    pub config: String,
    pub config_hash: String,
}

impl ControlReport {
    pub fn entry(&self, controller: &str) -> Option<&ControlMetrics> {
        self.entries.iter().find(|e| e.controller == controller)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}
