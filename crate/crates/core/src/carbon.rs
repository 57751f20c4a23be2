//! Carbon-intensity traces: loading, point queries, rolling forecast bounds
//! and exact emission integrals over busy-executor profiles.
//!
//! A trace is a right-continuous step function. Step `k` covers the
//! half-open interval `[k * step, (k + 1) * step)` in simulated seconds
//! relative to the trace start, so a boundary instant belongs to the later
//! step.

use std::io::Read;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod synthetic;

/// Seconds in one hour; intensities are per kWh so integrals divide by this.
pub const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("non-uniform spacing at row {row}: expected {expected} s, found {found} s")]
    NonUniformSpacing { row: usize, expected: f64, found: f64 },
    #[error("timestamps not strictly increasing at row {row}")]
    NonIncreasing { row: usize },
    #[error("negative intensity at row {row}")]
    NegativeIntensity { row: usize },
    #[error("green_fraction outside [0,1] at row {row}")]
    GreenFractionOutOfRange { row: usize },
    #[error("green_fraction has {found} entries, expected {expected}")]
    GreenFractionLength { expected: usize, found: usize },
    #[error("step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("time {t} s outside trace span [0, {duration}) s")]
    OutOfRange { t: f64, duration: f64 },
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(f64),
    #[error("offset step {offset} beyond trace length {len}")]
    InvalidOffset { offset: usize, len: usize },
}

/// Piecewise-constant carbon intensity in gCO2eq/kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonTrace {
    start_epoch: i64,
    step: f64,
    intensities: Vec<f64>,
    green_fraction: Option<Vec<f64>>,
    #[serde(default)]
    wrap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarbonBounds {
    pub lower: f64,
    pub upper: f64,
}

/// One piece of a busy-executor profile: `count` executors busy on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusyInterval {
    pub start: f64,
    pub end: f64,
    pub count: f64,
}

impl CarbonTrace {
    pub fn new(
        start_epoch: i64,
        step: f64,
        intensities: Vec<f64>,
        green_fraction: Option<Vec<f64>>,
    ) -> Result<Self, TraceError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(TraceError::InvalidStep(step));
        }
        if intensities.is_empty() {
            return Err(TraceError::Empty);
        }
        for (i, &c) in intensities.iter().enumerate() {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(TraceError::NegativeIntensity { row: i + 1 });
            }
        }
        if let Some(g) = &green_fraction {
            if g.len() != intensities.len() {
                return Err(TraceError::GreenFractionLength {
                    expected: intensities.len(),
                    found: g.len(),
                });
            }
            for (i, &f) in g.iter().enumerate() {
                if !(0.0..=1.0).contains(&f) {
                    return Err(TraceError::GreenFractionOutOfRange { row: i + 1 });
                }
            }
        }
        Ok(Self {
            start_epoch,
            step,
            intensities,
            green_fraction,
            wrap: false,
        })
    }

    /// Hourly trace starting at epoch 0; convenient for synthetic signals.
    pub fn hourly(intensities: Vec<f64>) -> Result<Self, TraceError> {
        Self::new(0, SECONDS_PER_HOUR, intensities, None)
    }

    /// Enables wrap-around replay: queries past the end continue from the start.
    pub fn with_wrap(mut self, wrap: bool) -> Self {
        self.wrap = wrap;
        self
    }

    /// Replays the same values with a different step length. Used to compress
    /// experiment time (e.g. hourly values replayed once per minute).
    pub fn with_step(mut self, step: f64) -> Result<Self, TraceError> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(TraceError::InvalidStep(step));
        }
        self.step = step;
        Ok(self)
    }

    /// The suffix of the trace starting at step `offset`; simulated time 0 maps to it.
    pub fn slice_from(&self, offset: usize) -> Result<Self, TraceError> {
        if offset >= self.intensities.len() {
            return Err(TraceError::InvalidOffset {
                offset,
                len: self.intensities.len(),
            });
        }
        Ok(Self {
            start_epoch: self.start_epoch + (offset as f64 * self.step).round() as i64,
            step: self.step,
            intensities: self.intensities[offset..].to_vec(),
            green_fraction: self.green_fraction.as_ref().map(|g| g[offset..].to_vec()),
            wrap: self.wrap,
        })
    }

    pub fn start_epoch(&self) -> i64 {
        self.start_epoch
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn wraps(&self) -> bool {
        self.wrap
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn green_fraction(&self) -> Option<&[f64]> {
        self.green_fraction.as_deref()
    }

    /// Span covered by the trace in seconds; infinite when wrapping.
    pub fn duration(&self) -> f64 {
        if self.wrap {
            f64::INFINITY
        } else {
            self.step * self.intensities.len() as f64
        }
    }

    fn check_time(&self, t: f64) -> Result<(), TraceError> {
        if t >= 0.0 && t < self.duration() {
            Ok(())
        } else {
            Err(TraceError::OutOfRange {
                t,
                duration: self.duration(),
            })
        }
    }

    /// Index of the step containing `t` (no range check, no wrap).
    pub fn step_index(&self, t: f64) -> usize {
        let mut k = (t / self.step).floor().max(0.0) as usize;
        // agree with boundaries computed as `k * step`
        if (k + 1) as f64 * self.step <= t {
            k += 1;
        } else if k > 0 && k as f64 * self.step > t {
            k -= 1;
        }
        k
    }

    /// Value of step `k`, honoring wrap-around.
    pub fn value_at_step(&self, k: usize) -> f64 {
        self.intensities[k % self.intensities.len()]
    }

    pub fn green_at_step(&self, k: usize) -> Option<f64> {
        self.green_fraction.as_ref().map(|g| g[k % g.len()])
    }

    pub fn intensity_at(&self, t: f64) -> Result<f64, TraceError> {
        self.check_time(t)?;
        Ok(self.value_at_step(self.step_index(t)))
    }

    /// Min/max over every step intersecting `[t, min(t + horizon, duration))`.
    pub fn bounds_over_window(&self, t: f64, horizon: f64) -> Result<CarbonBounds, TraceError> {
        self.check_time(t)?;
        if horizon.is_nan() || horizon <= 0.0 {
            return Err(TraceError::InvalidHorizon(horizon));
        }
        let end = (t + horizon).min(self.duration());
        let first = self.step_index(t);
        // last step whose start lies strictly before `end`
        let last = ((end / self.step).ceil() as usize).saturating_sub(1).max(first);
        let mut lower = f64::INFINITY;
        let mut upper = f64::NEG_INFINITY;
        for k in first..=last {
            let c = self.value_at_step(k);
            lower = lower.min(c);
            upper = upper.max(c);
        }
        Ok(CarbonBounds { lower, upper })
    }

    /// Grams CO2eq emitted by the given busy profile, splitting every interval
    /// exactly at step boundaries. `power_kw` is the draw of one busy executor.
    pub fn integrate_emissions(&self, profile: &[BusyInterval], power_kw: f64) -> Result<f64, TraceError> {
        let mut total = 0.0;
        for iv in profile {
            if iv.end <= iv.start || iv.count == 0.0 {
                continue;
            }
            self.check_time(iv.start)?;
            if iv.end > self.duration() {
                return Err(TraceError::OutOfRange {
                    t: iv.end,
                    duration: self.duration(),
                });
            }
            total += iv.count * self.intensity_seconds(iv.start, iv.end);
        }
        Ok(total * power_kw / SECONDS_PER_HOUR)
    }

    /// Integral of c(t) dt over `[start, end)` in (g/kWh)·s. Caller checks range.
    pub(crate) fn intensity_seconds(&self, start: f64, end: f64) -> f64 {
        let mut acc = 0.0;
        let mut k = self.step_index(start);
        let mut lo = start;
        while lo < end {
            let boundary = (k + 1) as f64 * self.step;
            let hi = boundary.min(end);
            if hi > lo {
                acc += self.value_at_step(k) * (hi - lo);
            }
            lo = hi;
            k += 1;
        }
        acc
    }

    /// Summary statistics over all steps (population standard deviation).
    pub fn stats(&self) -> TraceStats {
        TraceStats::of(&self.intensities, self.step)
    }

    /// Writes `timestamp,carbon_intensity[,green_fraction]` rows.
    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(sink);
        if self.green_fraction.is_some() {
            w.write_record(["timestamp", "carbon_intensity", "green_fraction"])?;
        } else {
            w.write_record(["timestamp", "carbon_intensity"])?;
        }
        for (k, c) in self.intensities.iter().enumerate() {
            let secs = self.start_epoch + (k as f64 * self.step).round() as i64;
            let ts = DateTime::from_timestamp(secs, 0)
                .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
                .unwrap_or_else(|| secs.to_string());
            match self.green_at_step(k) {
                Some(g) => w.write_record([ts, c.to_string(), g.to_string()])?,
                None => w.write_record([ts, c.to_string()])?,
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub rows: usize,
    pub step_s: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std_dev: f64,
    pub coeff_var: f64,
}

impl TraceStats {
    pub fn of(values: &[f64], step_s: f64) -> Self {
        let n = values.len() as f64;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std_dev = var.sqrt();
        let coeff_var = if mean > 0.0 { std_dev / mean } else { 0.0 };
        Self {
            rows: values.len(),
            step_s,
            min,
            max,
            mean,
            std_dev,
            coeff_var,
        }
    }
}

fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Parses a trace CSV. Rows are `timestamp,carbon_intensity[,green_fraction]`
/// with ISO-8601 timestamps; a header line is accepted and skipped. Data rows
/// are numbered from 1 in error messages.
pub fn load_trace<R: Read>(source: R) -> Result<CarbonTrace, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut stamps: Vec<i64> = Vec::new();
    let mut intensities = Vec::new();
    let mut greens: Vec<f64> = Vec::new();
    let mut has_green: Option<bool> = None;
    let mut row = 0usize;

    for (line_no, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| TraceError::MalformedRow {
            row: row + 1,
            reason: e.to_string(),
        })?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let first = rec.get(0).unwrap_or("");
        if line_no == 0 && parse_timestamp(first).is_none() {
            // header
            continue;
        }
        row += 1;
        if rec.len() < 2 || rec.len() > 3 {
            return Err(TraceError::MalformedRow {
                row,
                reason: format!("expected 2 or 3 fields, found {}", rec.len()),
            });
        }
        let ts = parse_timestamp(first).ok_or_else(|| TraceError::MalformedRow {
            row,
            reason: format!("bad timestamp {first:?}"),
        })?;
        let c: f64 = rec[1].parse().map_err(|_| TraceError::MalformedRow {
            row,
            reason: format!("bad intensity {:?}", &rec[1]),
        })?;
        if !c.is_finite() {
            return Err(TraceError::MalformedRow {
                row,
                reason: "intensity is not finite".into(),
            });
        }
        if c < 0.0 {
            return Err(TraceError::NegativeIntensity { row });
        }
        let green = rec.len() == 3;
        match has_green {
            None => has_green = Some(green),
            Some(h) if h != green => {
                return Err(TraceError::MalformedRow {
                    row,
                    reason: "inconsistent column count".into(),
                })
            }
            _ => {}
        }
        if green {
            let g: f64 = rec[2].parse().map_err(|_| TraceError::MalformedRow {
                row,
                reason: format!("bad green_fraction {:?}", &rec[2]),
            })?;
            if !(0.0..=1.0).contains(&g) {
                return Err(TraceError::GreenFractionOutOfRange { row });
            }
            greens.push(g);
        }
        if let Some(&prev) = stamps.last() {
            if ts <= prev {
                return Err(TraceError::NonIncreasing { row });
            }
            if stamps.len() >= 2 {
                let expected = stamps[1] - stamps[0];
                if ts - prev != expected {
                    return Err(TraceError::NonUniformSpacing {
                        row,
                        expected: expected as f64,
                        found: (ts - prev) as f64,
                    });
                }
            }
        }
        stamps.push(ts);
        intensities.push(c);
    }

    if intensities.is_empty() {
        return Err(TraceError::Empty);
    }
    let step = if stamps.len() >= 2 {
        (stamps[1] - stamps[0]) as f64
    } else {
        SECONDS_PER_HOUR
    };
    CarbonTrace::new(
        stamps[0],
        step,
        intensities,
        has_green.unwrap_or(false).then_some(greens),
    )
}

/// Collapses a list of intervals with counts into a sorted, non-overlapping
/// step profile (counts summed where intervals overlap).
pub fn merge_profile(intervals: impl IntoIterator<Item = BusyInterval>) -> Vec<BusyInterval> {
    let mut deltas: Vec<(f64, f64)> = Vec::new();
    for iv in intervals {
        if iv.end > iv.start && iv.count != 0.0 {
            deltas.push((iv.start, iv.count));
            deltas.push((iv.end, -iv.count));
        }
    }
    deltas.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<BusyInterval> = Vec::new();
    let mut level = 0.0;
    let mut i = 0;
    while i < deltas.len() {
        let t = deltas[i].0;
        while i < deltas.len() && deltas[i].0 == t {
            level += deltas[i].1;
            i += 1;
        }
        if i < deltas.len() {
            let next = deltas[i].0;
            if level.abs() > 1e-12 {
                match out.last_mut() {
                    Some(last) if last.end == t && last.count == level => last.end = next,
                    _ => out.push(BusyInterval {
                        start: t,
                        end: next,
                        count: level,
                    }),
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_step() -> CarbonTrace {
        CarbonTrace::hourly(vec![100.0, 200.0]).unwrap()
    }

    #[test]
    fn step_index_matches_multiplied_boundaries() {
        let t = CarbonTrace::hourly(vec![1.0; 500])
            .unwrap()
            .with_step(53.97462780226026)
            .unwrap();
        for k in 0..500usize {
            let b = k as f64 * t.step();
            assert_eq!(t.step_index(b), k);
            assert_eq!(t.step_index(b + 1e-9), k);
        }
    }

    #[test]
    fn parses_two_rows() {
        let csv = "timestamp,carbon_intensity\n2021-01-01T00:00:00Z,100\n2021-01-01T01:00:00Z,200\n";
        let t = load_trace(csv.as_bytes()).unwrap();
        assert_eq!(t.step(), 3600.0);
        assert_eq!(t.intensities(), &[100.0, 200.0]);
        assert!(t.green_fraction().is_none());
    }

    #[test]
    fn negative_intensity_names_row() {
        let csv = "timestamp,carbon_intensity\n2021-01-01T00:00:00Z,-5\n";
        let err = load_trace(csv.as_bytes()).unwrap_err();
        assert_eq!(err, TraceError::NegativeIntensity { row: 1 });
        assert_eq!(err.to_string(), "negative intensity at row 1");
    }

    #[test]
    fn rejects_bad_rows() {
        let uneven = "2021-01-01T00:00:00Z,1\n2021-01-01T01:00:00Z,2\n2021-01-01T03:00:00Z,3\n";
        assert!(matches!(
            load_trace(uneven.as_bytes()),
            Err(TraceError::NonUniformSpacing { row: 3, .. })
        ));
        let green = "t,c,g\n2021-01-01T00:00:00Z,1,0.5\n2021-01-01T01:00:00Z,2,1.5\n";
        assert_eq!(
            load_trace(green.as_bytes()).unwrap_err(),
            TraceError::GreenFractionOutOfRange { row: 2 }
        );
        let junk = "timestamp,carbon_intensity\n2021-01-01T00:00:00Z,abc\n";
        assert!(matches!(
            load_trace(junk.as_bytes()),
            Err(TraceError::MalformedRow { row: 1, .. })
        ));
        let back = "2021-01-01T01:00:00Z,1\n2021-01-01T00:00:00Z,2\n";
        assert_eq!(
            load_trace(back.as_bytes()).unwrap_err(),
            TraceError::NonIncreasing { row: 2 }
        );
        assert_eq!(
            load_trace("timestamp,carbon_intensity\n".as_bytes()).unwrap_err(),
            TraceError::Empty
        );
    }

    #[test]
    fn green_column_and_naive_timestamps() {
        let csv = "timestamp,carbon_intensity,green_fraction\n2021-01-01 00:00:00,10,0.25\n2021-01-01 00:30:00,20,1\n";
        let t = load_trace(csv.as_bytes()).unwrap();
        assert_eq!(t.step(), 1800.0);
        assert_eq!(t.green_fraction(), Some(&[0.25, 1.0][..]));
    }

    #[test]
    fn step_function_queries() {
        let t = two_step();
        assert_eq!(t.intensity_at(1800.0).unwrap(), 100.0);
        assert_eq!(t.intensity_at(3600.0).unwrap(), 200.0);
        assert!(matches!(t.intensity_at(7200.0), Err(TraceError::OutOfRange { .. })));
        assert!(t.intensity_at(-1.0).is_err());
        let wrapped = t.with_wrap(true);
        assert_eq!(wrapped.intensity_at(7200.0).unwrap(), 100.0);
    }

    #[test]
    fn window_bounds() {
        let t = CarbonTrace::hourly(vec![300.0, 100.0, 500.0, 200.0]).unwrap();
        let b = t.bounds_over_window(0.0, 4.0 * 3600.0).unwrap();
        assert_eq!((b.lower, b.upper), (100.0, 500.0));
        let b = t.bounds_over_window(2.0 * 3600.0, 2.0 * 3600.0).unwrap();
        assert_eq!((b.lower, b.upper), (200.0, 500.0));
        let b = t.bounds_over_window(3.0 * 3600.0, 48.0 * 3600.0).unwrap();
        assert_eq!((b.lower, b.upper), (200.0, 200.0));
        // window ending exactly on a boundary does not include the next step
        let b = t.bounds_over_window(0.0, 3600.0).unwrap();
        assert_eq!((b.lower, b.upper), (300.0, 300.0));
        assert!(t.bounds_over_window(0.0, 0.0).is_err());
    }

    #[test]
    fn emissions_examples() {
        let t = CarbonTrace::hourly(vec![2.0, 4.0]).unwrap();
        let full = [BusyInterval {
            start: 0.0,
            end: 7200.0,
            count: 1.0,
        }];
        assert!((t.integrate_emissions(&full, 1.0).unwrap() - 6.0).abs() < 1e-12);
        let split = [BusyInterval {
            start: 1800.0,
            end: 5400.0,
            count: 1.0,
        }];
        assert!((t.integrate_emissions(&split, 1.0).unwrap() - 3.0).abs() < 1e-12);
        let past = [BusyInterval {
            start: 0.0,
            end: 7201.0,
            count: 1.0,
        }];
        assert!(t.integrate_emissions(&past, 1.0).is_err());
    }

    #[test]
    fn slicing_and_csv_round_trip() {
        let t = CarbonTrace::new(1_600_000_000, 3600.0, vec![1.0, 2.5, 3.0], Some(vec![0.0, 0.5, 1.0])).unwrap();
        let s = t.slice_from(1).unwrap();
        assert_eq!(s.intensities(), &[2.5, 3.0]);
        assert_eq!(s.start_epoch(), 1_600_003_600);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(load_trace(buf.as_slice()).unwrap(), t);
        assert!(t.slice_from(3).is_err());
    }

    #[test]
    fn stats_of_three_values() {
        let s = TraceStats::of(&[1.0, 2.0, 3.0], 3600.0);
        assert_eq!(s.mean, 2.0);
        assert!((s.std_dev - 0.816496580927726).abs() < 1e-12);
        assert!((s.coeff_var - 0.408248290463863).abs() < 1e-12);
    }

    #[test]
    fn merge_profile_overlaps() {
        let p = merge_profile([
            BusyInterval {
                start: 0.0,
                end: 4.0,
                count: 1.0,
            },
            BusyInterval {
                start: 2.0,
                end: 6.0,
                count: 1.0,
            },
        ]);
        let got: Vec<_> = p.iter().map(|i| (i.start, i.end, i.count)).collect();
        assert_eq!(got, vec![(0.0, 2.0, 1.0), (2.0, 4.0, 2.0), (4.0, 6.0, 1.0)]);
    }
}
