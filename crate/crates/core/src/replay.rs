//! Paced replay of a recorded EMG channel onto the data topic.
//!
//! Packet `k` is due at `session_start + k * 1000 / rate`; the pacing loop sleeps
//! until that absolute deadline, so late wake-ups never accumulate into drift.
//! The sensor timestamp of packet `k` is its deadline (the recording is rebased
//! onto the session clock).

use std::path::PathBuf;

use thiserror::Error;

use crate::clock::{Clock, Micros};
use crate::signal::{self, RmsConfig, SampleSeries, SignalError, StreamingRms};
use crate::stagelog::{LogError, LogHeader, LogWriter, PublishLogEntry};
use crate::transport::{Transport, TransportConfig, TransportError};
use crate::wire::{encode_packet, RmsPacket, TopicMap};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RmsMode {
    /// Envelope computed before the session starts.
    #[default]
    Precomputed,
    /// Envelope updated incrementally as each packet comes due.
    Streaming,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayConfig {
    pub input: PathBuf,
    pub channel: usize,
    pub rms: RmsConfig,
    /// When false every input sample becomes a packet.
    pub decimate: bool,
    pub mode: RmsMode,
    pub transport: TransportConfig,
    pub topics: TopicMap,
    pub duration_limit_s: Option<f64>,
    pub log_path: PathBuf,
}

/// Packet values for one session, in either RMS mode.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    raw: SampleSeries,
    kept: Vec<usize>,
    packet_rate_hz: f64,
    values: Values,
}

#[derive(Debug, Clone)]
enum Values {
    Precomputed(Vec<f64>),
    Streaming { rms: StreamingRms, fed: usize },
}

impl ReplaySource {
    pub fn prepare(raw: SampleSeries, rms: RmsConfig, decimate: bool, mode: RmsMode) -> Result<Self, SignalError> {
        let packet_rate_hz = if decimate { rms.target_rate_hz } else { raw.rate_hz() };
        if decimate {
            rms.validate_for(raw.rate_hz())?;
        }
        let kept = signal::decimation_indices(raw.len(), raw.rate_hz(), packet_rate_hz)?;
        let values = match mode {
            RmsMode::Precomputed => {
                let env = signal::rms_envelope(&raw, rms.window_ms)?;
                Values::Precomputed(kept.iter().map(|&i| env.values()[i]).collect())
            }
            RmsMode::Streaming => Values::Streaming {
                rms: StreamingRms::new(rms.window_ms, raw.rate_hz())?,
                fed: 0,
            },
        };
        Ok(Self {
            raw,
            kept,
            packet_rate_hz,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn packet_rate_hz(&self) -> f64 {
        self.packet_rate_hz
    }

    pub fn mode(&self) -> RmsMode {
        match self.values {
            Values::Precomputed(_) => RmsMode::Precomputed,
            Values::Streaming { .. } => RmsMode::Streaming,
        }
    }

    /// RMS value of packet `k`. Packets must be requested in order in streaming mode.
    fn rms_for(&mut self, k: usize) -> f64 {
        match &mut self.values {
            Values::Precomputed(v) => v[k],
            Values::Streaming { rms, fed } => {
                let upto = self.kept[k];
                let raw = self.raw.values();
                let mut last = rms.current();
                while *fed <= upto {
                    last = rms.push(raw[*fed]);
                    *fed += 1;
                }
                last
            }
        }
    }
}

/// Computes the RMS value for packet `k` and stamps it the moment it is available.
pub fn compute_and_stamp(source: &mut ReplaySource, k: usize, t_sensor: Micros, clock: &dyn Clock) -> RmsPacket {
    let rms_mv = source.rms_for(k);
    let t_rms = Micros::from_ms(clock.now_ms());
    RmsPacket {
        seq: k as u64,
        t_sensor_ms: t_sensor.as_ms(),
        t_rms_ms: t_rms.as_ms(),
        rms_mv,
    }
    .quantized()
}

/// Outcome of a single pacing step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emitted {
    pub entry: PublishLogEntry,
    /// The transport's hand-off queue was full; the packet was logged but not sent.
    pub dropped: bool,
}

/// Pacing state for one publishing session.
#[derive(Debug)]
pub struct ReplaySession {
    source: ReplaySource,
    session_start_ms: f64,
    next: usize,
    limit: usize,
    topic: String,
}

impl ReplaySession {
    pub fn new(source: ReplaySource, session_start_ms: f64, duration_limit_s: Option<f64>, topic: &str) -> Self {
        let limit = match duration_limit_s {
            // packets whose deadline offset falls strictly inside the limit
            Some(s) => {
                let n = (s * source.packet_rate_hz()).ceil().max(0.0) as usize;
                n.min(source.len())
            }
            None => source.len(),
        };
        Self {
            source,
            session_start_ms,
            next: 0,
            limit,
            topic: topic.to_string(),
        }
    }

    pub fn session_start_ms(&self) -> f64 {
        self.session_start_ms
    }

    pub fn planned_packets(&self) -> usize {
        self.limit
    }

    pub fn deadline_ms(&self, k: usize) -> f64 {
        self.session_start_ms + k as f64 * 1000.0 / self.source.packet_rate_hz()
    }

    pub fn next_deadline_ms(&self) -> Option<f64> {
        (self.next < self.limit).then(|| self.deadline_ms(self.next))
    }

    /// Stamps, encodes and publishes the next packet. Call at or after its deadline.
    pub fn emit(&mut self, clock: &dyn Clock, transport: &dyn Transport) -> Result<Emitted, TransportError> {
        let k = self.next;
        let t_sensor = Micros::from_ms(self.deadline_ms(k));
        let packet = compute_and_stamp(&mut self.source, k, t_sensor, clock);
        let payload = encode_packet(&packet);
        let (t_publish_ms, dropped) = match transport.publish(&self.topic, &payload) {
            Ok(t) => (t, false),
            Err(TransportError::QueueFull) => (clock.now_ms(), true),
            Err(e) => return Err(e),
        };
        self.next += 1;
        Ok(Emitted {
            entry: PublishLogEntry {
                seq: packet.seq,
                t_sensor,
                t_rms: Micros::from_ms(packet.t_rms_ms),
                t_publish: Micros::from_ms(t_publish_ms),
            },
            dropped,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySummary {
    pub packets_sent: usize,
    /// Packets refused by a full transport queue.
    pub dropped: usize,
    /// Mean publish rate over the session, from first to last hand-off.
    pub achieved_rate_hz: Option<f64>,
    pub partial: bool,
    pub error: Option<String>,
}

/// Accumulates publish timestamps into a [`ReplaySummary`].
#[derive(Debug, Default)]
pub struct SummaryBuilder {
    sent: usize,
    dropped: usize,
    first: Option<Micros>,
    last: Option<Micros>,
}

impl SummaryBuilder {
    pub fn record(&mut self, e: &Emitted) {
        self.sent += 1;
        self.dropped += e.dropped as usize;
        self.first.get_or_insert(e.entry.t_publish);
        self.last = Some(e.entry.t_publish);
    }

    pub fn finish(self, error: Option<String>) -> ReplaySummary {
        let achieved_rate_hz = match (self.first, self.last) {
            (Some(a), Some(b)) if self.sent > 1 && b > a => Some((self.sent - 1) as f64 * 1000.0 / (b - a).as_ms()),
            _ => None,
        };
        ReplaySummary {
            packets_sent: self.sent,
            dropped: self.dropped,
            achieved_rate_hz,
            partial: error.is_some(),
            error,
        }
    }
}

/// Runs a paced session to completion, logging every packet.
///
/// A transport failure ends the run early: the log gets a `# partial` trailer and
/// the summary is marked partial.
pub fn run_session(
    session: &mut ReplaySession,
    clock: &dyn Clock,
    transport: &dyn Transport,
    log: &mut LogWriter<PublishLogEntry>,
) -> Result<ReplaySummary, ReplayError> {
    let mut summary = SummaryBuilder::default();
    let mut failure = None;
    while let Some(deadline) = session.next_deadline_ms() {
        clock.sleep_until_ms(deadline);
        match session.emit(clock, transport) {
            Ok(e) => {
                log.append(&e.entry)?;
                summary.record(&e);
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    if let Some(err) = &failure {
        log.note(&format!("partial error={err}"))?;
    }
    log.flush()?;
    Ok(summary.finish(failure))
}

/// Loads the input named in `cfg`, then paces it onto `transport`.
pub fn run_replay(cfg: &ReplayConfig, clock: &dyn Clock, transport: &dyn Transport) -> Result<ReplaySummary, ReplayError> {
    let raw = signal::load_emg_csv(&cfg.input, cfg.channel)?;
    let source = ReplaySource::prepare(raw, cfg.rms, cfg.decimate, cfg.mode)?;
    let start = clock.now_ms();
    let mut session = ReplaySession::new(source, start, cfg.duration_limit_s, cfg.topics.data_topic());
    let header = LogHeader {
        clock: clock.source(),
        session_start: Micros::from_ms(start),
    };
    let mut log = LogWriter::<PublishLogEntry>::create(&cfg.log_path, header)?;
    run_session(&mut session, clock, transport, &mut log)
}
