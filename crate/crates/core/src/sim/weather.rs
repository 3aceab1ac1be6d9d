//! Disturbance time series: CSV ingestion with resampling, and a synthetic
//! winter day used when no recorded weather is supplied.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const BUILDING_HEADER: [&str; 3] = ["time", "solar_kw_m2", "t_outdoor_c"];

/// Uniformly sampled disturbance, one column per sampling instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub period_minutes: f64,
    /// Channel names, one per row of `data`.
    pub channels: Vec<String>,
    pub data: DMatrix<f64>,
}

impl Disturbance {
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    /// `n` columns starting at `start`, wrapping around the end of the series.
    pub fn window(&self, start: usize, n: usize) -> DMatrix<f64> {
        let len = self.len();
        DMatrix::from_fn(self.data.nrows(), n, |i, j| self.data[(i, (start + j) % len)])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for c in &self.channels {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for j in 0..self.len() {
            out.push_str(&format!("{}", j as f64 * self.period_minutes));
            for i in 0..self.data.nrows() {
                out.push_str(&format!(",{:.12}", self.data[(i, j)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Reads a CSV disturbance file. When the first column is `time` (minutes),
/// rows are resampled onto a uniform grid with step `period_minutes`; empty
/// cells and skipped times are filled by linear interpolation. Any other
/// header is read as already-uniform samples, one row per period.
pub fn load_disturbance_csv(path: &Path, period_minutes: f64) -> Result<Disturbance> {
    let file = std::fs::File::open(path)?;
    parse_disturbance_csv(file, period_minutes)
}

fn parse_err(row: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        column,
        message: message.into(),
    }
}

pub fn parse_disturbance_csv<R: Read>(reader: R, period_minutes: f64) -> Result<Disturbance> {
    if !(period_minutes > 0.0) {
        return Err(Error::InvalidConfig("sampling period must be positive".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(parse_err(1, 1, "missing header"));
    }
    let timed = header[0].eq_ignore_ascii_case("time");
    let first = usize::from(timed);
    let channels: Vec<String> = header[first..].to_vec();
    let mut times = Vec::new();
    let mut cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); channels.len()];
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 2;
        let rec = rec.map_err(|e| parse_err(row, 1, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(row, rec.len().min(header.len()) + 1, "wrong number of fields"));
        }
        let cell = |c: usize| -> Result<Option<f64>> {
            let s = &rec[c];
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| parse_err(row, c + 1, format!("not a number: {s:?}")))
        };
        if timed {
            let t = cell(0)?.ok_or_else(|| parse_err(row, 1, "missing time"))?;
            if times.last().is_some_and(|&prev| t <= prev) {
                return Err(parse_err(row, 1, "time must be strictly increasing"));
            }
            times.push(t);
        } else {
            times.push(r as f64 * period_minutes);
        }
        for (i, col) in cols.iter_mut().enumerate() {
            col.push(cell(first + i)?);
        }
    }
    if times.is_empty() {
        return Err(parse_err(2, 1, "no data rows"));
    }
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let n = (span / period_minutes + 1e-9).floor() as usize + 1;
    let mut data = DMatrix::zeros(channels.len(), n);
    for (i, col) in cols.iter().enumerate() {
        let known: Vec<(f64, f64)> = times
            .iter()
            .zip(col)
            .filter_map(|(&t, v)| v.map(|v| (t, v)))
            .collect();
        if known.is_empty() {
            return Err(parse_err(2, first + i + 1, "column has no values"));
        }
        for j in 0..n {
            data[(i, j)] = interpolate(&known, t0 + j as f64 * period_minutes);
        }
    }
    Ok(Disturbance {
        period_minutes,
        channels,
        data,
    })
}

/// Piecewise-linear interpolation, constant beyond the end points.
fn interpolate(known: &[(f64, f64)], t: f64) -> f64 {
    let idx = known.partition_point(|&(tk, _)| tk <= t);
    if idx == 0 {
        return known[0].1;
    }
    if idx == known.len() {
        return known[idx - 1].1;
    }
    let (ta, va) = known[idx - 1];
    let (tb, vb) = known[idx];
    if t == ta {
        return va;
    }
    va + (vb - va) * (t - ta) / (tb - ta)
}

/// Shape of the synthetic winter day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinterProfile {
    pub t_min: f64,
    pub t_max: f64,
    /// Hour of the temperature minimum; the maximum follows 12 h later.
    pub coldest_hour: f64,
    pub solar_peak: f64,
    pub sunrise: f64,
    pub sunset: f64,
}

impl Default for WinterProfile {
    fn default() -> Self {
        Self {
            t_min: 8.0,
            t_max: 12.0,
            coldest_hour: 4.0,
            solar_peak: 0.3,
            sunrise: 7.5,
            sunset: 16.5,
        }
    }
}

impl WinterProfile {
    pub fn outdoor(&self, hour: f64) -> f64 {
        let mid = 0.5 * (self.t_min + self.t_max);
        let amp = 0.5 * (self.t_max - self.t_min);
        mid - amp * (2.0 * PI * (hour - self.coldest_hour) / 24.0).cos()
    }

    pub fn solar(&self, hour: f64) -> f64 {
        let h = hour.rem_euclid(24.0);
        if h <= self.sunrise || h >= self.sunset {
            0.0
        } else {
            self.solar_peak * (PI * (h - self.sunrise) / (self.sunset - self.sunrise)).sin()
        }
    }

    /// `days` of samples starting at midnight, rows (solar, outdoor).
    pub fn generate(&self, period_minutes: f64, days: usize) -> Disturbance {
        let n = (days as f64 * 24.0 * 60.0 / period_minutes).round() as usize;
        let data = DMatrix::from_fn(2, n, |i, j| {
            let hour = j as f64 * period_minutes / 60.0;
            if i == 0 {
                self.solar(hour)
            } else {
                self.outdoor(hour)
            }
        });
        Disturbance {
            period_minutes,
            channels: BUILDING_HEADER[1..].iter().map(|s| s.to_string()).collect(),
            data,
        }
    }
}

/// The bundled winter day at the building sampling period.
pub fn bundled_winter_day() -> Result<Disturbance> {
    parse_disturbance_csv(
        include_str!("../../data/winter_day.csv").as_bytes(),
        super::models::BUILDING_STEP_MINUTES,
    )
}
