//! Window datasets, the train/validation split, MSE training with Adam and
//! the per-epoch report.

use std::io::Write;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::consistency::{evenly_spaced, trv};
use crate::error::{Error, Result};
use crate::model::{forward, NormStats, PredictionWindow, TrainedModel};
use crate::neural::{AdamConfig, AdamState, GradMap, Tape};
use crate::testbed::{stream_rng, TimeSeriesFrame, STEPS_PER_DAY};

const SHUFFLE_STREAM: u64 = 21;

/// Sliding windows over the whole frame with the given stride; anchors are
/// frame rows.
pub fn build_windows(frame: &TimeSeriesFrame, history: usize, horizon: usize, stride: usize) -> Result<Vec<PredictionWindow>> {
    if stride == 0 {
        return Err(Error::Dataset("window stride must be >= 1".into()));
    }
    let need = history + 1 + horizon;
    if frame.len() < need {
        return Err(Error::Dataset(format!(
            "frame has {} rows, one window needs {need}",
            frame.len()
        )));
    }
    let count = (frame.len() - need) / stride + 1;
    (0..count)
        .map(|k| PredictionWindow::from_frame(frame, history + k * stride, history, horizon))
        .collect()
}

/// Train rows first, validation rows last, in whole days.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub train: TimeSeriesFrame,
    pub val: TimeSeriesFrame,
    pub train_rows: Range<usize>,
    pub val_rows: Range<usize>,
    pub norm: NormStats,
}

pub fn split_frame(frame: &TimeSeriesFrame, train_days: usize, val_days: usize) -> Result<DataSplit> {
    let train_len = train_days * STEPS_PER_DAY;
    let val_len = val_days * STEPS_PER_DAY;
    if train_len == 0 || val_len == 0 {
        return Err(Error::config("train.train_days", "train and validation spans must be >= 1 day"));
    }
    if train_len + val_len > frame.len() {
        return Err(Error::Dataset(format!(
            "{train_days} train + {val_days} validation days exceed the {}-row frame",
            frame.len()
        )));
    }
    let train_rows = 0..train_len;
    let val_rows = frame.len() - val_len..frame.len();
    Ok(DataSplit {
        train: frame.slice(train_rows.clone()),
        val: frame.slice(val_rows.clone()),
        norm: NormStats::fit(frame, train_rows.clone()),
        train_rows,
        val_rows,
    })
}

/// Mean absolute error (°C) and mean absolute percentage error (%).
pub fn mae_mape(pred: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::Metric(format!(
            "prediction has {} values, truth has {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Metric("no values to score".into()));
    }
    if let Some(t) = truth.iter().find(|t| !(t.abs() >= 1.0)) {
        return Err(Error::Metric(format!(
            "truth value {t} is within 1 °C of zero; MAPE is ill-defined"
        )));
    }
    let n = pred.len() as f64;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mape = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs() / t.abs())
        .sum::<f64>()
        / n
        * 100.0;
    Ok((mae, mape))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
    /// Windows in the fixed validation subsample used for the TRV monitor.
    pub monitor_windows: usize,
    /// HVAC range injected by the TRV monitor, W.
    pub u_floor: f64,
    pub u_ceiling: f64,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-3,
            batch: 32,
            seed: 0,
            monitor_windows: 16,
            u_floor: crate::consistency::cooling_floor(&crate::testbed::TestbedConfig::default()),
            u_ceiling: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// °C².
    pub train_mse: f64,
    /// °C².
    pub val_mse: f64,
    /// TRV⁺ + TRV⁻ on the monitor subsample, °C·h.
    pub val_trv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: String,
    pub hyper: TrainHyper,
    pub train_windows: usize,
    pub val_windows: usize,
    pub epochs: Vec<EpochRecord>,
    /// Seconds; zero when timing is disabled for reproducible output.
    pub wall_time_s: f64,
    /// On the validation windows, after the last epoch.
    pub mae: f64,
    pub mape: f64,
    pub config_hash: String,
}

impl TrainReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `epoch,train_mse,val_mse,val_trv`, one row per epoch.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "epoch,train_mse,val_mse,val_trv")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{}", e.epoch, e.train_mse, e.val_mse, e.val_trv)?;
        }
        Ok(())
    }

    pub fn save(&self, json: &Path, csv: &Path, comments: &[String]) -> Result<()> {
        std::fs::write(json, self.to_json())?;
        let mut buf = Vec::new();
        self.write_csv(&mut buf, comments)?;
        std::fs::write(csv, buf)?;
        Ok(())
    }
}

/// Predictions for a set of windows in batches, °C per window.
pub fn predict_windows(model: &TrainedModel, windows: &[&PredictionWindow]) -> Result<Vec<Vec<f64>>> {
    windows.iter().map(|w| forward(model, w)).collect()
}

/// Validation MSE in °C².
pub fn evaluate_mse(model: &TrainedModel, windows: &[&PredictionWindow], batch: usize) -> Result<f64> {
    let std = model.norm().t_zone.std;
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in windows.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let (loss, _) = model.loss_graph(&mut tape, chunk, false)?;
        total += tape.scalar(loss) * chunk.len() as f64;
        count += chunk.len();
    }
    if count == 0 {
        return Err(Error::Dataset("no validation windows".into()));
    }
    Ok(total / count as f64 * std * std)
}

/// Trains `model` in place on `train` windows by minimizing the MSE of the
/// rolled-out decoder, with the validation MSE and TRV monitor recorded
/// after every epoch.
pub fn train(
    model: &mut TrainedModel,
    train: &[PredictionWindow],
    val: &[PredictionWindow],
    hyper: &TrainHyper,
    record_time: bool,
    config_hash: &str,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Dataset("no training windows".into()));
    }
    if val.is_empty() {
        return Err(Error::Dataset("no validation windows".into()));
    }
    if hyper.batch == 0 {
        return Err(Error::config("train.batch", "must be >= 1"));
    }
    let started = Instant::now();
    let std = model.norm().t_zone.std;
    let val_refs: Vec<&PredictionWindow> = val.iter().collect();
    let monitor: Vec<&PredictionWindow> = evenly_spaced(val.len(), hyper.monitor_windows)
        .into_iter()
        .map(|i| &val[i])
        .collect();
    let mut adam = AdamState::new(AdamConfig {
        lr: hyper.lr,
        ..AdamConfig::default()
    });
    let mut rng = stream_rng(hyper.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epochs = Vec::with_capacity(hyper.epochs);

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(hyper.batch) {
            let batch: Vec<&PredictionWindow> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let (loss, bound) = model.loss_graph(&mut tape, &batch, true)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("loss became {value}"),
                });
            }
            sum += value * batch.len() as f64;
            let grads = tape.backward(loss)?;
            let map: GradMap = bound.into_iter().map(|(name, v)| (name, grads.wrt(v))).collect();
            adam.update(model, &map).map_err(|e| Error::Training {
                epoch,
                message: e.to_string(),
            })?;
        }
        let val_mse = evaluate_mse(model, &val_refs, hyper.batch.max(64))?;
        if !val_mse.is_finite() {
            return Err(Error::Training {
                epoch,
                message: format!("validation loss became {val_mse}"),
            });
        }
        let monitor_trv = trv(model, &monitor, hyper.u_floor, hyper.u_ceiling)?;
        epochs.push(EpochRecord {
            epoch,
            train_mse: sum / train.len() as f64 * std * std,
            val_mse,
            val_trv: monitor_trv.total(),
        });
    }

    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for (w, p) in val_refs.iter().zip(predict_windows(model, &val_refs)?) {
        pred.extend(p);
        truth.extend(w.truth.as_ref().expect("frame windows carry truth"));
    }
    let (mae, mape) = mae_mape(&pred, &truth)?;
    Ok(TrainReport {
        variant: model.variant().to_string(),
        hyper: *hyper,
        train_windows: train.len(),
        val_windows: val.len(),
        epochs,
        wall_time_s: if record_time {
            started.elapsed().as_secs_f64()
        } else {
            0.0
        },
        mae,
        mape,
        config_hash: config_hash.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::{run_baseline, TestbedConfig};

    #[test]
    fn window_count_formula() {
        let f = run_baseline(&TestbedConfig::default(), 1, 3).unwrap();
        let (l, m) = (40, 30);
        let exact = f.slice(0..l + 1 + m);
        assert_eq!(build_windows(&exact, l, m, 1).unwrap().len(), 1);
        let plus9 = f.slice(0..l + 1 + m + 9);
        assert_eq!(build_windows(&plus9, l, m, 1).unwrap().len(), 10);
        assert_eq!(build_windows(&f, l, m, 4).unwrap().len(), (96 - 71) / 4 + 1);
        assert!(build_windows(&f.slice(0..l + m), l, m, 1).is_err());
    }

    #[test]
    fn stride_m_tiles_decoders() {
        let f = run_baseline(&TestbedConfig::default(), 2, 3).unwrap();
        let ws = build_windows(&f, 10, 12, 12).unwrap();
        for pair in ws.windows(2) {
            assert_eq!(pair[1].anchor, pair[0].anchor + 12);
        }
    }

    #[test]
    fn mae_mape_examples() {
        assert_eq!(mae_mape(&[22.0, 23.0], &[22.0, 23.0]).unwrap(), (0.0, 0.0));
        let (mae, mape) = mae_mape(&[21.0, 23.0], &[22.0, 24.0]).unwrap();
        assert!((mae - 1.0).abs() < 1e-15);
        let expected = (1.0 / 22.0 + 1.0 / 24.0) / 2.0 * 100.0;
        assert!((mape - expected).abs() < 1e-12);
        assert!((mape - 4.356).abs() < 1e-3);
        assert!(matches!(mae_mape(&[1.0, 3.0], &[2.0, 0.5]), Err(Error::Metric(_))));
        assert!(matches!(mae_mape(&[1.0], &[2.0, 3.0]), Err(Error::Metric(_))));
    }

    #[test]
    fn split_is_ordered_and_disjoint() {
        let f = run_baseline(&TestbedConfig::default(), 10, 3).unwrap();
        let s = split_frame(&f, 6, 3).unwrap();
        assert_eq!(s.train_rows, 0..576);
        assert_eq!(s.val_rows, 672..960);
        assert!(s.val.start > s.train.timestamp(s.train.len() - 1));
        assert_eq!(s.norm, NormStats::fit(&f, 0..576));
        assert!(split_frame(&f, 8, 3).is_err());
    }
}
