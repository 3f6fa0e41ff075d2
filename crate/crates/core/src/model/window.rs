//! Prediction windows cut from a frame, and the per-channel normalization
//! fitted on the training split.

use std::f64::consts::PI;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::testbed::TimeSeriesFrame;

/// One measured row: the inputs applied during a step and the zone
/// temperature at its end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t_out: f64,
    pub solar: f64,
    pub occ: f64,
    pub u_hvac: f64,
    pub t_zone: f64,
    /// Hour of day at the start of the step.
    pub hour: f64,
}

/// Disturbances known in advance for one future step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forecast {
    pub t_out: f64,
    pub solar: f64,
    pub occ: f64,
    pub hour: f64,
}

/// Encoder history, current measurement and decoder inputs for one
/// prediction. Values are physical; models normalize internally.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionWindow {
    /// Frame row of `current`.
    pub anchor: usize,
    pub history: Vec<Observation>,
    pub current: Observation,
    pub future: Vec<Forecast>,
    /// HVAC thermal power per future step, W.
    pub future_u: Vec<f64>,
    /// Zone temperature at the end of each future step, when known.
    pub truth: Option<Vec<f64>>,
}

impl Observation {
    pub fn from_frame(frame: &TimeSeriesFrame, i: usize) -> Self {
        Self {
            t_out: frame.t_out[i],
            solar: frame.solar[i],
            occ: frame.occ[i],
            u_hvac: frame.u_hvac[i],
            t_zone: frame.t_zone[i],
            hour: frame.hour_of_day(i),
        }
    }

    fn values(&self) -> [f64; 6] {
        [self.t_out, self.solar, self.occ, self.u_hvac, self.t_zone, self.hour]
    }
}

impl Forecast {
    pub fn from_frame(frame: &TimeSeriesFrame, i: usize) -> Self {
        Self {
            t_out: frame.t_out[i],
            solar: frame.solar[i],
            occ: frame.occ[i],
            hour: frame.hour_of_day(i),
        }
    }
}

impl PredictionWindow {
    /// Window whose current row is `anchor`: history is the `history` rows
    /// before it and the decoder covers the `horizon` rows after it.
    pub fn from_frame(frame: &TimeSeriesFrame, anchor: usize, history: usize, horizon: usize) -> Result<Self> {
        if anchor < history || anchor + horizon >= frame.len() {
            return Err(Error::Dataset(format!(
                "window at row {anchor} needs rows {}..={} of a {}-row frame",
                anchor as i64 - history as i64,
                anchor + horizon,
                frame.len()
            )));
        }
        let rows = anchor + 1..anchor + 1 + horizon;
        Ok(Self {
            anchor,
            history: (anchor - history..anchor)
                .map(|i| Observation::from_frame(frame, i))
                .collect(),
            current: Observation::from_frame(frame, anchor),
            future: rows.clone().map(|i| Forecast::from_frame(frame, i)).collect(),
            future_u: frame.u_hvac[rows.clone()].to_vec(),
            truth: Some(frame.t_zone[rows].to_vec()),
        })
    }

    pub fn horizon(&self) -> usize {
        self.future.len()
    }

    /// Checks lengths against a model's configuration and that every value
    /// is finite.
    pub fn check(&self, history: usize, horizon: usize) -> Result<()> {
        if self.history.len() != history {
            return Err(Error::shape(format!(
                "window history has {} steps, model expects {history}",
                self.history.len()
            )));
        }
        if self.future.len() != horizon || self.future_u.len() != horizon {
            return Err(Error::shape(format!(
                "window horizon has {} forecasts and {} inputs, model expects {horizon}",
                self.future.len(),
                self.future_u.len()
            )));
        }
        if let Some(truth) = &self.truth {
            if truth.len() != horizon {
                return Err(Error::shape(format!(
                    "window truth has {} steps, model expects {horizon}",
                    truth.len()
                )));
            }
        }
        let finite = self
            .history
            .iter()
            .chain(std::iter::once(&self.current))
            .all(|o| o.values().iter().all(|v| v.is_finite()))
            && self
                .future
                .iter()
                .all(|f| [f.t_out, f.solar, f.occ, f.hour].iter().all(|v| v.is_finite()))
            && self.future_u.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Contract(format!(
                "window at row {} has non-finite inputs",
                self.anchor
            )));
        }
        Ok(())
    }
}

/// `(sin, cos)` of the daily phase.
pub fn time_features(hour: f64) -> [f64; 2] {
    let phase = 2.0 * PI * hour / 24.0;
    [phase.sin(), phase.cos()]
}

/// Z-score map for one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub mean: f64,
    pub std: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { mean: 0.0, std: 1.0 };

    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::IDENTITY;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 1e-9 { std } else { 1.0 },
        }
    }

    pub fn norm(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denorm(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }
}

/// Channel statistics from the training split. HVAC power is only scaled,
/// so that zero power stays zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub t_out: Affine,
    pub solar: Affine,
    pub occ: Affine,
    pub t_zone: Affine,
    /// Root mean square HVAC power, W.
    pub u_scale: f64,
}

impl Default for NormStats {
    fn default() -> Self {
        Self {
            t_out: Affine::IDENTITY,
            solar: Affine::IDENTITY,
            occ: Affine::IDENTITY,
            t_zone: Affine::IDENTITY,
            u_scale: 1.0,
        }
    }
}

impl NormStats {
    pub fn fit(frame: &TimeSeriesFrame, rows: std::ops::Range<usize>) -> Self {
        let u = &frame.u_hvac[rows.clone()];
        let rms = if u.is_empty() {
            1.0
        } else {
            (u.iter().map(|v| v * v).sum::<f64>() / u.len() as f64).sqrt()
        };
        Self {
            t_out: Affine::fit(&frame.t_out[rows.clone()]),
            solar: Affine::fit(&frame.solar[rows.clone()]),
            occ: Affine::fit(&frame.occ[rows.clone()]),
            t_zone: Affine::fit(&frame.t_zone[rows]),
            u_scale: if rms >= 1.0 { rms } else { 1.0 },
        }
    }

    pub fn u(&self, u: f64) -> f64 {
        u / self.u_scale
    }
}

/// Stacks one row per window into a `B × width` matrix.
pub(crate) fn stack_rows<F>(windows: &[&PredictionWindow], width: usize, f: F) -> Array2<f64>
where
    F: Fn(&PredictionWindow) -> Vec<f64>,
{
    let mut out = Array2::zeros((windows.len(), width));
    for (b, w) in windows.iter().enumerate() {
        let row = f(w);
        debug_assert_eq!(row.len(), width);
        for (k, v) in row.into_iter().enumerate() {
            out[[b, k]] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::{run_baseline, TestbedConfig};

    #[test]
    fn window_rows_line_up() {
        let f = run_baseline(&TestbedConfig::default(), 2, 1).unwrap();
        let w = PredictionWindow::from_frame(&f, 10, 4, 3).unwrap();
        assert_eq!(w.history.len(), 4);
        assert_eq!(w.history[0].t_zone, f.t_zone[6]);
        assert_eq!(w.current.t_zone, f.t_zone[10]);
        assert_eq!(w.future_u, f.u_hvac[11..14].to_vec());
        assert_eq!(w.truth.as_ref().unwrap(), &f.t_zone[11..14].to_vec());
        assert_eq!(w.future[0].hour, 11.0 * 0.25);
        w.check(4, 3).unwrap();
        assert!(w.check(5, 3).is_err());
    }

    #[test]
    fn window_out_of_range() {
        let f = run_baseline(&TestbedConfig::default(), 1, 1).unwrap();
        assert!(PredictionWindow::from_frame(&f, 3, 4, 3).is_err());
        assert!(PredictionWindow::from_frame(&f, 92, 4, 4).is_err());
        assert!(PredictionWindow::from_frame(&f, 91, 4, 4).is_ok());
    }

    #[test]
    fn affine_round_trip() {
        let a = Affine::fit(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.mean, 2.5);
        assert!((a.denorm(a.norm(3.7)) - 3.7).abs() < 1e-15);
        assert_eq!(Affine::fit(&[5.0, 5.0]).std, 1.0);
    }
}
