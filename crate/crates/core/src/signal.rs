//! Recorded EMG ingestion and envelope processing.
//!
//! The canonical input is a small CSV dialect:
//!
//! ```text
//! # rate_hz=2000 start_time_ms=0
//! ch0,ch1
//! 0.013,-0.002
//! ...
//! ```
//!
//! Everything here is a pure transformation over [`SampleSeries`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Default RMS window length in milliseconds.
pub const DEFAULT_WINDOW_MS: f64 = 64.0;
/// Default post-decimation streaming rate.
pub const DEFAULT_TARGET_RATE_HZ: f64 = 75.0;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("channel {channel} not present ({available} columns)")]
    MissingChannel { channel: usize, available: usize },
    #[error("non-numeric cell {value:?} at row {row} (line {line}), column {column}")]
    NonNumeric {
        row: usize,
        line: usize,
        column: usize,
        value: String,
    },
    #[error("row {row} (line {line}) has {found} columns, expected {expected}")]
    RaggedRow {
        row: usize,
        line: usize,
        found: usize,
        expected: usize,
    },
    #[error("file has no sample rows")]
    EmptyBody,
    #[error("series is empty")]
    EmptySeries,
    #[error("invalid sample rate {0} Hz")]
    InvalidRate(f64),
    #[error("window of {window_ms} ms spans less than one sample at {rate_hz} Hz")]
    WindowTooShort { window_ms: f64, rate_hz: f64 },
    #[error("target rate {target_hz} Hz exceeds input rate {input_hz} Hz")]
    TargetAboveInput { target_hz: f64, input_hz: f64 },
    #[error("invalid calibration: rest {rest} mV, max {max} mV")]
    InvalidCalibration { rest: f64, max: f64 },
}

/// A uniformly sampled signal. Value `i` sits at `start_time_ms + i * 1000 / rate_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSeries {
    start_time_ms: f64,
    rate_hz: f64,
    values: Vec<f64>,
}

impl SampleSeries {
    pub fn new(start_time_ms: f64, rate_hz: f64, values: Vec<f64>) -> Result<Self, SignalError> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(SignalError::InvalidRate(rate_hz));
        }
        if values.is_empty() {
            return Err(SignalError::EmptySeries);
        }
        Ok(Self {
            start_time_ms,
            rate_hz,
            values,
        })
    }

    pub fn start_time_ms(&self) -> f64 {
        self.start_time_ms
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn period_ms(&self) -> f64 {
        1000.0 / self.rate_hz
    }

    /// Offset of sample `i` from the series start.
    pub fn offset_ms(&self, i: usize) -> f64 {
        i as f64 * 1000.0 / self.rate_hz
    }

    pub fn timestamp_ms(&self, i: usize) -> f64 {
        self.start_time_ms + self.offset_ms(i)
    }

    pub fn duration_ms(&self) -> f64 {
        self.offset_ms(self.values.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsConfig {
    pub window_ms: f64,
    pub target_rate_hz: f64,
}

impl Default for RmsConfig {
    fn default() -> Self {
        Self {
            window_ms: DEFAULT_WINDOW_MS,
            target_rate_hz: DEFAULT_TARGET_RATE_HZ,
        }
    }
}

impl RmsConfig {
    /// Checks the config against the rate of the series it will be applied to.
    pub fn validate_for(&self, input_rate_hz: f64) -> Result<(), SignalError> {
        window_samples(self.window_ms, input_rate_hz)?;
        if !(self.target_rate_hz > 0.0) || self.target_rate_hz > input_rate_hz {
            return Err(SignalError::TargetAboveInput {
                target_hz: self.target_rate_hz,
                input_hz: input_rate_hz,
            });
        }
        Ok(())
    }
}

/// Resting and reference-maximum RMS levels used to map an envelope value onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ActivationCalibration {
    rms_rest: f64,
    rms_max: f64,
}

impl ActivationCalibration {
    pub fn new(rms_rest: f64, rms_max: f64) -> Result<Self, SignalError> {
        if !(rms_rest >= 0.0 && rms_rest < rms_max && rms_max.is_finite()) {
            return Err(SignalError::InvalidCalibration {
                rest: rms_rest,
                max: rms_max,
            });
        }
        Ok(Self { rms_rest, rms_max })
    }

    pub fn rms_rest(&self) -> f64 {
        self.rms_rest
    }

    pub fn rms_max(&self) -> f64 {
        self.rms_max
    }
}

impl Default for ActivationCalibration {
    fn default() -> Self {
        Self {
            rms_rest: 0.0,
            rms_max: 1.0,
        }
    }
}

/// Loads one channel of an EMG CSV file.
pub fn load_emg_csv(path: impl AsRef<Path>, channel: usize) -> Result<SampleSeries, SignalError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| SignalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_emg_csv(&text, channel)
}

/// Parses the EMG CSV dialect from an in-memory string.
pub fn parse_emg_csv(text: &str, channel: usize) -> Result<SampleSeries, SignalError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SignalError::MalformedHeader("file is empty".into()))?;
    let (rate_hz, start_time_ms) = parse_header(header)?;

    let columns = lines
        .next()
        .ok_or_else(|| SignalError::MalformedHeader("missing column header line".into()))?;
    let n_columns = columns.split(',').count();
    if columns.trim().is_empty() || channel >= n_columns {
        return Err(SignalError::MissingChannel {
            channel,
            available: if columns.trim().is_empty() { 0 } else { n_columns },
        });
    }

    let mut values = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 1;
        let line_no = idx + 3;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n_columns {
            return Err(SignalError::RaggedRow {
                row,
                line: line_no,
                found: cells.len(),
                expected: n_columns,
            });
        }
        let cell = cells[channel].trim();
        let value: f64 = cell
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| SignalError::NonNumeric {
                row,
                line: line_no,
                column: channel,
                value: cell.to_string(),
            })?;
        values.push(value);
    }
    if values.is_empty() {
        return Err(SignalError::EmptyBody);
    }
    SampleSeries::new(start_time_ms as f64, rate_hz, values)
}

fn parse_header(line: &str) -> Result<(f64, i64), SignalError> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| SignalError::MalformedHeader(format!("expected '#' header, got {line:?}")))?;
    let mut rate = None;
    let mut start = None;
    for pair in body.split_whitespace() {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| SignalError::MalformedHeader(format!("bad field {pair:?}")))?;
        match key {
            "rate_hz" => {
                rate = Some(value.parse::<f64>().map_err(|_| {
                    SignalError::MalformedHeader(format!("rate_hz={value:?} is not a number"))
                })?)
            }
            "start_time_ms" => {
                start = Some(value.parse::<i64>().map_err(|_| {
                    SignalError::MalformedHeader(format!("start_time_ms={value:?} is not an integer"))
                })?)
            }
            _ => {}
        }
    }
    let rate = rate.ok_or_else(|| SignalError::MalformedHeader("missing rate_hz".into()))?;
    let start = start.ok_or_else(|| SignalError::MalformedHeader("missing start_time_ms".into()))?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(SignalError::InvalidRate(rate));
    }
    Ok((rate, start))
}

/// Renders channels in the EMG CSV dialect. All channels must share length.
pub fn format_emg_csv(rate_hz: f64, start_time_ms: i64, channels: &[&[f64]]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# rate_hz={rate_hz} start_time_ms={start_time_ms}");
    let names: Vec<String> = (0..channels.len()).map(|c| format!("ch{c}")).collect();
    out.push_str(&names.join(","));
    out.push('\n');
    let rows = channels.first().map_or(0, |c| c.len());
    for i in 0..rows {
        for (c, ch) in channels.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{:.6}", ch[i]);
        }
        out.push('\n');
    }
    out
}

/// Number of whole samples covered by a window of `window_ms`.
pub fn window_samples(window_ms: f64, rate_hz: f64) -> Result<usize, SignalError> {
    let span = window_ms * rate_hz / 1000.0;
    if !(span.is_finite() && span + 1e-9 >= 1.0) {
        return Err(SignalError::WindowTooShort { window_ms, rate_hz });
    }
    Ok((span + 1e-9).floor() as usize)
}

/// Causal RMS envelope. The first `window - 1` outputs use the samples seen so far.
pub fn rms_envelope(series: &SampleSeries, window_ms: f64) -> Result<SampleSeries, SignalError> {
    if series.is_empty() {
        return Err(SignalError::EmptySeries);
    }
    let window = window_samples(window_ms, series.rate_hz)?;
    let x = series.values();
    let out = (0..x.len())
        .map(|i| window_rms(&x[(i + 1).saturating_sub(window)..=i]))
        .collect();
    SampleSeries::new(series.start_time_ms, series.rate_hz, out)
}

// Summation runs oldest to newest; StreamingRms relies on the same order.
fn window_rms(window: &[f64]) -> f64 {
    let sum_sq: f64 = window.iter().map(|v| v * v).sum();
    (sum_sq / window.len() as f64).sqrt()
}

/// Incremental causal RMS over a fixed sample window.
///
/// Produces bit-identical values to [`rms_envelope`] for the same input.
#[derive(Debug, Clone)]
pub struct StreamingRms {
    ring: Vec<f64>,
    head: usize,
    filled: usize,
    scratch: Vec<f64>,
}

impl StreamingRms {
    pub fn new(window_ms: f64, rate_hz: f64) -> Result<Self, SignalError> {
        let window = window_samples(window_ms, rate_hz)?;
        Ok(Self {
            ring: vec![0.0; window],
            head: 0,
            filled: 0,
            scratch: Vec::with_capacity(window),
        })
    }

    /// Pushes one raw sample and returns the RMS over the current window.
    pub fn push(&mut self, value: f64) -> f64 {
        self.ring[self.head] = value;
        self.head = (self.head + 1) % self.ring.len();
        self.filled = (self.filled + 1).min(self.ring.len());
        self.current()
    }

    pub fn current(&mut self) -> f64 {
        if self.filled == 0 {
            return 0.0;
        }
        let cap = self.ring.len();
        let oldest = (self.head + cap - self.filled) % cap;
        self.scratch.clear();
        self.scratch
            .extend((0..self.filled).map(|k| self.ring[(oldest + k) % cap]));
        window_rms(&self.scratch)
    }
}

/// Index of the decimation bucket holding sample `i`.
pub(crate) fn bucket_of(i: usize, rate_hz: f64, target_rate_hz: f64) -> u64 {
    // offset_i / bucket_width = (i / rate) / (1 / target); exact for integer ratios.
    ((i as f64) * target_rate_hz / rate_hz).floor() as u64
}

/// Source indices kept by time-bucket decimation (last sample of each non-empty bucket).
pub fn decimation_indices(len: usize, rate_hz: f64, target_rate_hz: f64) -> Result<Vec<usize>, SignalError> {
    if !(target_rate_hz > 0.0) || target_rate_hz > rate_hz {
        return Err(SignalError::TargetAboveInput {
            target_hz: target_rate_hz,
            input_hz: rate_hz,
        });
    }
    if target_rate_hz == rate_hz {
        return Ok((0..len).collect());
    }
    let mut kept = Vec::with_capacity((len as f64 * target_rate_hz / rate_hz) as usize + 1);
    for i in 0..len {
        let bucket = bucket_of(i, rate_hz, target_rate_hz);
        let is_last = i + 1 == len || bucket_of(i + 1, rate_hz, target_rate_hz) != bucket;
        if is_last {
            kept.push(i);
        }
    }
    Ok(kept)
}

/// Time-bucket decimation keeping the latest sample in every bucket.
pub fn decimate(series: &SampleSeries, target_rate_hz: f64) -> Result<SampleSeries, SignalError> {
    let idx = decimation_indices(series.len(), series.rate_hz, target_rate_hz)?;
    let values = idx.iter().map(|&i| series.values[i]).collect();
    SampleSeries::new(series.start_time_ms, target_rate_hz, values)
}

/// Maps an RMS level onto [0, 1] relative to the calibration.
pub fn normalize_activation(rms_mv: f64, cal: &ActivationCalibration) -> f64 {
    let a = (rms_mv - cal.rms_rest) / (cal.rms_max - cal.rms_rest);
    if a.is_nan() {
        return 0.0;
    }
    a.clamp(0.0, 1.0)
}

/// Seeded stand-in for a forearm recording: Gaussian noise whose amplitude
/// follows tense/release cycles (5 s tense, 10 s release) over a resting floor.
pub fn synthetic_emg(rate_hz: f64, duration_s: f64, seed: u64) -> Result<SampleSeries, SignalError> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    let n = (duration_s * rate_hz).round().max(0.0) as usize;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n)
        .map(|i| {
            let t = i as f64 / rate_hz;
            let cycle = t % 15.0;
            let tension = if cycle < 5.0 { (cycle / 1.5).min(1.0) } else { (-(cycle - 5.0) / 1.2).exp() };
            let amplitude = 0.05 + 0.4 * tension;
            let z: f64 = StandardNormal.sample(&mut rng);
            amplitude * z
        })
        .collect();
    SampleSeries::new(0.0, rate_hz, values)
}
