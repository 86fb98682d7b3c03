//! Session clocks and the microsecond timestamp used in every stage log.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

/// Where a log's timestamps came from. Written into every log header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClockSource {
    /// Unix-epoch anchored at startup, advanced by the monotonic clock.
    WallMonotonic,
    /// Simulated time, advanced explicitly by an event loop.
    Virtual,
}

impl ClockSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ClockSource::WallMonotonic => "wall-monotonic",
            ClockSource::Virtual => "virtual",
        }
    }
}

impl fmt::Display for ClockSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClockSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wall-monotonic" => Ok(ClockSource::WallMonotonic),
            "virtual" => Ok(ClockSource::Virtual),
            other => Err(format!("unknown clock source {other:?}")),
        }
    }
}

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch (or since the virtual origin).
    fn now_ms(&self) -> f64;
    /// Blocks until `now_ms() >= deadline_ms`. Returns immediately for past deadlines.
    fn sleep_until_ms(&self, deadline_ms: f64);
    fn source(&self) -> ClockSource;
}

/// Epoch-anchored monotonic clock with sub-millisecond resolution.
#[derive(Debug, Clone)]
pub struct SystemClock {
    epoch_ms: f64,
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        let epoch_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64() * 1000.0)
            .unwrap_or(0.0);
        Self {
            epoch_ms,
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

// Below this the thread spins instead of sleeping.
const SPIN_THRESHOLD_MS: f64 = 1.0;

impl Clock for SystemClock {
    fn now_ms(&self) -> f64 {
        self.epoch_ms + self.origin.elapsed().as_secs_f64() * 1000.0
    }

    fn sleep_until_ms(&self, deadline_ms: f64) {
        loop {
            let remaining = deadline_ms - self.now_ms();
            if remaining <= 0.0 {
                return;
            }
            if remaining > SPIN_THRESHOLD_MS {
                std::thread::sleep(Duration::from_secs_f64((remaining - SPIN_THRESHOLD_MS) / 1000.0));
            } else {
                std::thread::yield_now();
            }
        }
    }

    fn source(&self) -> ClockSource {
        ClockSource::WallMonotonic
    }
}

/// Simulated clock. Only moves forward, and only when told to.
#[derive(Debug)]
pub struct VirtualClock {
    now_bits: AtomicU64,
}

impl VirtualClock {
    pub fn new(start_ms: f64) -> Self {
        Self {
            now_bits: AtomicU64::new(start_ms.to_bits()),
        }
    }

    pub fn advance_to(&self, t_ms: f64) {
        let mut cur = self.now_bits.load(Ordering::Acquire);
        while t_ms > f64::from_bits(cur) {
            match self.now_bits.compare_exchange_weak(
                cur,
                t_ms.to_bits(),
                Ordering::AcqRel,
                Ordering::Acquire,
            ) {
                Ok(_) => return,
                Err(actual) => cur = actual,
            }
        }
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> f64 {
        f64::from_bits(self.now_bits.load(Ordering::Acquire))
    }

    fn sleep_until_ms(&self, deadline_ms: f64) {
        self.advance_to(deadline_ms);
    }

    fn source(&self) -> ClockSource {
        ClockSource::Virtual
    }
}

impl<C: Clock + ?Sized> Clock for std::sync::Arc<C> {
    fn now_ms(&self) -> f64 {
        (**self).now_ms()
    }

    fn sleep_until_ms(&self, deadline_ms: f64) {
        (**self).sleep_until_ms(deadline_ms)
    }

    fn source(&self) -> ClockSource {
        (**self).source()
    }
}

/// A timestamp or duration in whole microseconds.
///
/// Logs store milliseconds with exactly three decimals, so every logged value
/// is an integer number of microseconds and stage differences are exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Micros(pub i64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    pub fn from_ms(ms: f64) -> Self {
        Micros((ms * 1000.0).round() as i64)
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Parses a decimal millisecond string without going through floating point.
    pub fn parse_ms(s: &str) -> Option<Self> {
        let s = s.trim();
        let (negative, digits) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
        if int_part.is_empty() && frac_part.is_empty() {
            return None;
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let whole: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
        let mut frac = 0i64;
        for (i, b) in frac_part.bytes().enumerate() {
            let d = (b - b'0') as i64;
            match i {
                0 => frac += d * 100,
                1 => frac += d * 10,
                2 => frac += d,
                // round half up on the fourth decimal, ignore the rest
                3 => {
                    if d >= 5 {
                        frac += 1;
                    }
                }
                _ => break,
            }
        }
        let us = whole.checked_mul(1000)?.checked_add(frac)?;
        Some(Micros(if negative { -us } else { us }))
    }
}

impl std::ops::Sub for Micros {
    type Output = Micros;
    fn sub(self, rhs: Micros) -> Micros {
        Micros(self.0 - rhs.0)
    }
}

impl std::ops::Add for Micros {
    type Output = Micros;
    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

/// Formats as milliseconds with three decimals.
impl fmt::Display for Micros {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:03}", abs / 1000, abs % 1000)
    }
}
