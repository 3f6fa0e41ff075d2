//! The uniformly sampled multichannel record and its CSV form.
//!
//! CSV layout: optional leading `#` comment lines, then the header
//! `timestamp,t_out_c,solar_wm2,occ,u_hvac_w,p_elec_w,t_zone_c` and one row
//! per 15-minute step with ISO-8601 timestamps. Row `t` holds the inputs
//! applied during step `t` and the zone temperature at the end of it.

use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDateTime, Timelike};

use super::rc::{STEPS_PER_DAY, STEP_HOURS, STEP_SECONDS};
use crate::error::{Error, Result};

pub const COLUMNS: [&str; 7] = [
    "timestamp",
    "t_out_c",
    "solar_wm2",
    "occ",
    "u_hvac_w",
    "p_elec_w",
    "t_zone_c",
];

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    pub start: NaiveDateTime,
    pub t_out: Vec<f64>,
    pub solar: Vec<f64>,
    pub occ: Vec<f64>,
    pub u_hvac: Vec<f64>,
    pub p_elec: Vec<f64>,
    pub t_zone: Vec<f64>,
}

impl TimeSeriesFrame {
    pub fn empty(start: NaiveDateTime) -> Self {
        Self {
            start,
            t_out: Vec::new(),
            solar: Vec::new(),
            occ: Vec::new(),
            u_hvac: Vec::new(),
            p_elec: Vec::new(),
            t_zone: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.t_zone.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_zone.is_empty()
    }

    pub fn push(&mut self, t_out: f64, solar: f64, occ: f64, u_hvac: f64, p_elec: f64, t_zone: f64) {
        self.t_out.push(t_out);
        self.solar.push(solar);
        self.occ.push(occ);
        self.u_hvac.push(u_hvac);
        self.p_elec.push(p_elec);
        self.t_zone.push(t_zone);
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + Duration::seconds(i as i64 * STEP_SECONDS as i64)
    }

    /// Fractional hour of day at the start of step `i`.
    pub fn hour_of_day(&self, i: usize) -> f64 {
        let start = self.start.num_seconds_from_midnight() as f64 / 3600.0;
        (start + i as f64 * STEP_HOURS).rem_euclid(24.0)
    }

    /// Step index of the first midnight at or after the start.
    pub fn first_midnight(&self) -> usize {
        let offset = (self.hour_of_day(0) / STEP_HOURS).round() as usize % STEPS_PER_DAY;
        (STEPS_PER_DAY - offset) % STEPS_PER_DAY
    }

    pub fn occupied(&self, i: usize) -> bool {
        self.occ[i] > 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let lens = [
            self.t_out.len(),
            self.solar.len(),
            self.occ.len(),
            self.u_hvac.len(),
            self.p_elec.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(Error::Dataset(format!(
                "channel lengths differ: {lens:?} vs t_zone {n}"
            )));
        }
        Ok(())
    }

    /// Rows `range`, with the start timestamp moved accordingly.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            start: self.timestamp(range.start),
            t_out: self.t_out[range.clone()].to_vec(),
            solar: self.solar[range.clone()].to_vec(),
            occ: self.occ[range.clone()].to_vec(),
            u_hvac: self.u_hvac[range.clone()].to_vec(),
            p_elec: self.p_elec[range.clone()].to_vec(),
            t_zone: self.t_zone[range].to_vec(),
        }
    }

    pub fn to_csv_string(&self, comments: &[String]) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out, comments).expect("writing to memory");
        String::from_utf8(out).expect("csv is utf-8")
    }

    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(COLUMNS).map_err(csv_io)?;
        for i in 0..self.len() {
            csv.write_record([
                self.timestamp(i).format(TIMESTAMP_FORMAT).to_string(),
                self.t_out[i].to_string(),
                self.solar[i].to_string(),
                self.occ[i].to_string(),
                self.u_hvac[i].to_string(),
                self.p_elec[i].to_string(),
                self.t_zone[i].to_string(),
            ])
            .map_err(csv_io)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(text.as_bytes());

        let header = reader
            .headers()
            .map_err(|e| Error::Ingestion {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let header_line = reader.position().line().max(1) as usize;
        let unknown: Vec<&str> = header.iter().filter(|h| !COLUMNS.contains(h)).collect();
        if !unknown.is_empty() {
            return Err(Error::Ingestion {
                line: header_line,
                message: format!("unknown column(s): {}", unknown.join(", ")),
            });
        }
        let mut index = [0usize; 7];
        for (k, name) in COLUMNS.iter().enumerate() {
            let found: Vec<usize> = header
                .iter()
                .enumerate()
                .filter(|(_, h)| h == name)
                .map(|(i, _)| i)
                .collect();
            match found.as_slice() {
                [i] => index[k] = *i,
                [] => {
                    return Err(Error::Ingestion {
                        line: header_line,
                        message: format!("missing column `{name}`"),
                    })
                }
                _ => {
                    return Err(Error::Ingestion {
                        line: header_line,
                        message: format!("duplicate column `{name}`"),
                    })
                }
            }
        }

        let mut frame: Option<TimeSeriesFrame> = None;
        for record in reader.records() {
            let record = record.map_err(|e| Error::Ingestion {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let field = |k: usize| record.get(index[k]).unwrap_or("");
            let ts = NaiveDateTime::parse_from_str(field(0), TIMESTAMP_FORMAT).map_err(|e| {
                Error::Ingestion {
                    line,
                    message: format!("bad timestamp `{}`: {e}", field(0)),
                }
            })?;
            let mut values = [0.0; 6];
            for (k, v) in values.iter_mut().enumerate() {
                let raw = field(k + 1);
                *v = raw.parse::<f64>().map_err(|_| Error::Ingestion {
                    line,
                    message: format!("column `{}`: cannot parse `{raw}`", COLUMNS[k + 1]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingestion {
                        line,
                        message: format!("column `{}`: non-finite value", COLUMNS[k + 1]),
                    });
                }
            }
            let f = frame.get_or_insert_with(|| TimeSeriesFrame::empty(ts));
            let expected = f.timestamp(f.len());
            if ts != expected {
                return Err(Error::Ingestion {
                    line,
                    message: format!(
                        "timestamp {} breaks the 900 s spacing (expected {})",
                        ts.format(TIMESTAMP_FORMAT),
                        expected.format(TIMESTAMP_FORMAT)
                    ),
                });
            }
            f.push(values[0], values[1], values[2], values[3], values[4], values[5]);
        }
        frame.ok_or(Error::Ingestion {
            line: header_line,
            message: "no data rows".into(),
        })
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

pub fn save_frame(frame: &TimeSeriesFrame, path: &Path, comments: &[String]) -> Result<()> {
    std::fs::write(path, frame.to_csv_string(comments))?;
    Ok(())
}

pub fn load_frame(path: &Path) -> Result<TimeSeriesFrame> {
    TimeSeriesFrame::from_csv_str(&std::fs::read_to_string(path)?)
}

/// Default start of the summer period.
pub fn default_start() -> NaiveDateTime {
    chrono::NaiveDate::from_ymd_opt(2023, 6, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}
