//! Receiver side: stamps arrivals, runs a fixed-timestep frame loop, and logs
//! the three receiver timestamps for every packet.
//!
//! Each frame stamps `t_pre_update`, takes every packet that arrived strictly
//! before that instant, applies the newest one to the scene, performs the
//! (simulated) render work and stamps `t_render`. All packets taken by the frame
//! are logged with that frame's timestamps, so conflation never removes a
//! packet from latency accounting.

use std::collections::VecDeque;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::clock::{Clock, Micros};
use crate::scene::{apply_packet, SceneRule, SceneState};
use crate::stagelog::{LogError, LogWriter, SinkLogEntry};
use crate::transport::{Message, Transport, TransportError, DEFAULT_QUEUE_DEPTH};
use crate::wire::{decode_packet, RmsPacket};

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("invalid frame loop config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Occasional long frames, e.g. `0.01,50,120`: 1% of frames take 50–120 ms extra.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterModel {
    pub probability: f64,
    pub extra_lo_ms: f64,
    pub extra_hi_ms: f64,
}

impl FromStr for JitterModel {
    type Err = SinkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| SinkError::InvalidConfig(format!("jitter {s:?} is not prob,lo_ms,hi_ms")))?;
        let [probability, extra_lo_ms, extra_hi_ms] = parts[..] else {
            return Err(SinkError::InvalidConfig(format!("jitter {s:?} is not prob,lo_ms,hi_ms")));
        };
        let j = Self {
            probability,
            extra_lo_ms,
            extra_hi_ms,
        };
        if !((0.0..=1.0).contains(&probability) && extra_lo_ms >= 0.0 && extra_lo_ms <= extra_hi_ms) {
            return Err(SinkError::InvalidConfig(format!("jitter {s:?} out of range")));
        }
        Ok(j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLoopConfig {
    pub frame_rate_hz: f64,
    pub simulated_render_work_ms: f64,
    pub jitter: Option<JitterModel>,
}

impl Default for FrameLoopConfig {
    fn default() -> Self {
        Self {
            frame_rate_hz: 60.0,
            simulated_render_work_ms: 0.0,
            jitter: None,
        }
    }
}

impl FrameLoopConfig {
    pub fn period_ms(&self) -> f64 {
        1000.0 / self.frame_rate_hz
    }

    pub fn validate(&self) -> Result<(), SinkError> {
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz.is_finite()) {
            return Err(SinkError::InvalidConfig(format!("frame rate {} Hz", self.frame_rate_hz)));
        }
        let work = self.simulated_render_work_ms;
        if !(work >= 0.0 && work < self.period_ms()) {
            return Err(SinkError::InvalidConfig(format!(
                "render work {work} ms must be below the frame period {:.3} ms",
                self.period_ms()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub packet: RmsPacket,
    pub t_recv: Micros,
}

/// Bounded arrival queue between the receive context and the frame loop.
#[derive(Debug)]
pub struct Inbox {
    queue: Mutex<VecDeque<Arrival>>,
    capacity: usize,
    overflow: AtomicU64,
    decode_errors: AtomicU64,
    received: AtomicU64,
}

impl Inbox {
    pub fn new(capacity: usize) -> Self {
        Self {
            queue: Mutex::new(VecDeque::new()),
            capacity,
            overflow: AtomicU64::new(0),
            decode_errors: AtomicU64::new(0),
            received: AtomicU64::new(0),
        }
    }

    pub fn push(&self, arrival: Arrival) {
        let mut q = self.queue.lock().unwrap();
        if q.len() >= self.capacity {
            self.overflow.fetch_add(1, Ordering::Relaxed);
            return;
        }
        q.push_back(arrival);
        self.received.fetch_add(1, Ordering::Relaxed);
    }

    /// Decodes a payload and queues it stamped with `t_recv`.
    pub fn receive(&self, payload: &[u8], t_recv_ms: f64) {
        match decode_packet(payload) {
            Ok(packet) => self.push(Arrival {
                packet,
                t_recv: Micros::from_ms(t_recv_ms),
            }),
            Err(_) => {
                self.decode_errors.fetch_add(1, Ordering::Relaxed);
            }
        }
    }

    /// Removes every arrival stamped strictly before `t`.
    pub fn take_before(&self, t: Micros) -> Vec<Arrival> {
        let mut q = self.queue.lock().unwrap();
        let mut out = Vec::new();
        while q.front().is_some_and(|a| a.t_recv < t) {
            out.push(q.pop_front().unwrap());
        }
        out
    }

    pub fn len(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn received(&self) -> u64 {
        self.received.load(Ordering::Relaxed)
    }

    pub fn overflow(&self) -> u64 {
        self.overflow.load(Ordering::Relaxed)
    }

    pub fn decode_errors(&self) -> u64 {
        self.decode_errors.load(Ordering::Relaxed)
    }
}

impl Default for Inbox {
    fn default() -> Self {
        Self::new(DEFAULT_QUEUE_DEPTH)
    }
}

/// Frame loop state, independent of how time passes.
#[derive(Debug)]
pub struct FrameLoop {
    cfg: FrameLoopConfig,
    rule: SceneRule,
    scene: SceneState,
    session_start_ms: f64,
    frame_index: u64,
    frames: u64,
    rng: ChaCha8Rng,
    current: Option<(Micros, Vec<Arrival>, f64)>,
}

impl FrameLoop {
    pub fn new(cfg: FrameLoopConfig, rule: SceneRule, session_start_ms: f64, seed: u64) -> Result<Self, SinkError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rule,
            scene: SceneState::default(),
            session_start_ms,
            frame_index: 0,
            frames: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            current: None,
        })
    }

    pub fn scene(&self) -> &SceneState {
        &self.scene
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn in_frame(&self) -> bool {
        self.current.is_some()
    }

    /// Start time of the next frame on the fixed-timestep grid.
    pub fn next_tick_ms(&self) -> f64 {
        self.session_start_ms + self.frame_index as f64 * self.cfg.period_ms()
    }

    /// Opens a frame at `t_pre` with the arrivals it consumes; returns this frame's render work in ms.
    pub fn begin_frame(&mut self, t_pre: Micros, arrivals: Vec<Arrival>) -> f64 {
        debug_assert!(arrivals.iter().all(|a| a.t_recv < t_pre));
        if let Some(latest) = arrivals.last() {
            self.scene = apply_packet(&self.scene, &latest.packet, &self.rule);
        }
        let mut work = self.cfg.simulated_render_work_ms;
        if let Some(j) = self.cfg.jitter {
            if j.probability > 0.0 && self.rng.random_bool(j.probability) {
                work += if j.extra_hi_ms > j.extra_lo_ms {
                    self.rng.random_range(j.extra_lo_ms..j.extra_hi_ms)
                } else {
                    j.extra_lo_ms
                };
            }
        }
        self.current = Some((t_pre, arrivals, work));
        work
    }

    /// Closes the open frame and returns one log entry per consumed packet.
    pub fn end_frame(&mut self, t_render: Micros) -> Vec<SinkLogEntry> {
        let (t_pre, arrivals, work) = self.current.take().expect("end_frame without begin_frame");
        let t_render = t_render.max(t_pre + Micros((work * 1000.0).ceil() as i64));
        self.frames += 1;
        // next frame: first grid point after this one that is not already past
        let period = self.cfg.period_ms();
        let after = ((t_render.as_ms() - self.session_start_ms) / period).ceil().max(0.0) as u64;
        self.frame_index = (self.frame_index + 1).max(after);
        if let Some(latest) = arrivals.last() {
            self.scene.last_end_to_end_ms = Some(t_render.as_ms() - latest.packet.t_sensor_ms);
        }
        arrivals
            .iter()
            .map(|a| SinkLogEntry {
                seq: a.packet.seq,
                t_recv: a.t_recv,
                t_pre_update: t_pre,
                t_render,
            })
            .collect()
    }
}

/// When a real-time sink stops.
#[derive(Debug, Clone, Default)]
pub struct StopCondition {
    pub duration_s: Option<f64>,
    /// Stop after this long without arrivals, once at least one packet arrived.
    pub idle_timeout_s: Option<f64>,
    pub max_packets: Option<u64>,
    pub flag: Option<Arc<AtomicBool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkSummary {
    pub packets_logged: u64,
    pub frames: u64,
    pub decode_errors: u64,
    pub overflow: u64,
    pub scene: SceneState,
}

/// Subscribes `inbox` to `topic`, stamping arrivals with `clock`.
pub fn attach_inbox(
    transport: &dyn Transport,
    topic: &str,
    clock: Arc<dyn Clock>,
    inbox: Arc<Inbox>,
) -> Result<(), TransportError> {
    transport.subscribe(
        topic,
        Box::new(move |m: &Message| {
            let t = clock.now_ms();
            inbox.receive(&m.payload, t);
        }),
    )?;
    Ok(())
}

/// Real-time sink: subscribes, then runs the frame loop until `stop` says so.
#[allow(clippy::too_many_arguments)]
pub fn run_sink(
    transport: &dyn Transport,
    clock: Arc<dyn Clock>,
    topic: &str,
    cfg: FrameLoopConfig,
    rule: SceneRule,
    log: &mut LogWriter<SinkLogEntry>,
    session_start_ms: f64,
    stop: &StopCondition,
) -> Result<SinkSummary, SinkError> {
    cfg.validate()?;
    let inbox = Arc::new(Inbox::default());
    attach_inbox(transport, topic, Arc::clone(&clock), Arc::clone(&inbox))?;
    let mut summary = run_frame_loop(&inbox, clock.as_ref(), cfg, rule, log, session_start_ms, stop)?;
    summary.overflow += transport.stats().overflow;
    Ok(summary)
}

/// Frame loop over an already attached inbox.
pub fn run_frame_loop(
    inbox: &Inbox,
    clock: &dyn Clock,
    cfg: FrameLoopConfig,
    rule: SceneRule,
    log: &mut LogWriter<SinkLogEntry>,
    session_start_ms: f64,
    stop: &StopCondition,
) -> Result<SinkSummary, SinkError> {
    let mut frames = FrameLoop::new(cfg, rule, session_start_ms, 0)?;
    let mut logged = 0u64;
    let mut last_activity = clock.now_ms();
    let mut seen = 0u64;

    loop {
        clock.sleep_until_ms(frames.next_tick_ms());
        let t_pre = Micros::from_ms(clock.now_ms());
        let work = frames.begin_frame(t_pre, inbox.take_before(t_pre));
        if work > 0.0 {
            clock.sleep_until_ms(t_pre.as_ms() + work);
        }
        let entries = frames.end_frame(Micros::from_ms(clock.now_ms()));
        for e in &entries {
            if let Err(err) = log.append(e) {
                let _ = log.flush();
                return Err(err.into());
            }
        }
        logged += entries.len() as u64;

        let now = clock.now_ms();
        let received = inbox.received();
        if received != seen {
            seen = received;
            last_activity = now;
        }
        let elapsed_s = (now - session_start_ms) / 1000.0;
        let done = stop.flag.as_ref().is_some_and(|f| f.load(Ordering::Acquire))
            || stop.duration_s.is_some_and(|d| elapsed_s >= d)
            || stop.max_packets.is_some_and(|m| logged >= m)
            || stop
                .idle_timeout_s
                .is_some_and(|t| seen > 0 && (now - last_activity) / 1000.0 >= t);
        if done && inbox.is_empty() {
            break;
        }
    }
    log.flush()?;
    Ok(SinkSummary {
        packets_logged: logged,
        frames: frames.frames(),
        decode_errors: inbox.decode_errors(),
        overflow: inbox.overflow(),
        scene: *frames.scene(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp};

    fn arrival(seq: u64, t_recv_ms: f64) -> Arrival {
        Arrival {
            packet: RmsPacket {
                seq,
                t_sensor_ms: t_recv_ms,
                t_rms_ms: t_recv_ms,
                rms_mv: 0.0,
            },
            t_recv: Micros::from_ms(t_recv_ms),
        }
    }

    /// Event-ordered frame loop over pre-stamped arrivals; ticks win ties.
    fn simulate(cfg: FrameLoopConfig, arrivals: &[Arrival]) -> Vec<SinkLogEntry> {
        let inbox = Inbox::new(usize::MAX);
        let mut fl = FrameLoop::new(cfg, SceneRule::default(), 0.0, 3).unwrap();
        let mut out = Vec::new();
        let mut next = 0;
        while next < arrivals.len() || !inbox.is_empty() {
            let tick = fl.next_tick_ms();
            let t_pre = Micros::from_ms(tick);
            while next < arrivals.len() && arrivals[next].t_recv < t_pre {
                inbox.push(arrivals[next]);
                next += 1;
            }
            let work = fl.begin_frame(t_pre, inbox.take_before(t_pre));
            out.extend(fl.end_frame(Micros::from_ms(tick + work)));
        }
        out
    }

    #[test]
    fn packet_just_after_tick_waits_for_next_frame() {
        let period = 1000.0 / 60.0;
        let out = simulate(FrameLoopConfig::default(), &[arrival(0, 1.0)]);
        let e = out[0];
        assert_eq!(e.t_pre_update, Micros::from_ms(period));
        let rendering = (e.t_render - e.t_recv).as_ms();
        assert!((rendering - (period - 1.0)).abs() < 1e-3, "{rendering}");
        assert!((rendering - 15.7).abs() < 0.05);
    }

    #[test]
    fn arrival_at_tick_boundary_goes_to_next_tick() {
        let period_us = Micros::from_ms(1000.0 / 60.0);
        let out = simulate(FrameLoopConfig::default(), &[arrival(0, period_us.as_ms())]);
        assert!(out[0].t_pre_update > out[0].t_recv);
        assert_eq!(out[0].t_pre_update, Micros::from_ms(2000.0 / 60.0));
    }

    #[test]
    fn every_packet_logged_once_under_conflation() {
        // 300 Hz arrivals against 60 Hz frames: five packets per frame.
        let arrivals: Vec<Arrival> = (0..3000).map(|k| arrival(k, 0.5 + k as f64 * 10.0 / 3.0)).collect();
        let out = simulate(FrameLoopConfig::default(), &arrivals);
        let mut seqs: Vec<u64> = out.iter().map(|e| e.seq).collect();
        seqs.sort_unstable();
        assert_eq!(seqs, (0..3000).collect::<Vec<_>>());
        for e in &out {
            assert!(e.t_render >= e.t_pre_update && e.t_pre_update > e.t_recv);
        }
    }

    #[test]
    fn render_work_is_respected() {
        let cfg = FrameLoopConfig {
            simulated_render_work_ms: 4.0,
            ..Default::default()
        };
        let arrivals: Vec<Arrival> = (0..500).map(|k| arrival(k, k as f64 * 7.3)).collect();
        for e in simulate(cfg, &arrivals) {
            assert!((e.t_render - e.t_pre_update).as_ms() >= 4.0);
        }
    }

    #[test]
    fn poisson_arrivals_average_half_a_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gaps = Exp::new(1.0 / 13.3).unwrap();
        for work in [0.0, 3.0] {
            let mut t = 0.0;
            let arrivals: Vec<Arrival> = (0..6000)
                .map(|k| {
                    t += gaps.sample(&mut rng);
                    arrival(k, t)
                })
                .collect();
            let cfg = FrameLoopConfig {
                simulated_render_work_ms: work,
                ..Default::default()
            };
            let out = simulate(cfg, &arrivals);
            let mean = out.iter().map(|e| (e.t_render - e.t_recv).as_ms()).sum::<f64>() / out.len() as f64;
            let expected = 1000.0 / 60.0 / 2.0 + work;
            assert!((mean - expected).abs() <= 0.15 * expected, "work {work}: mean {mean}");
        }
    }

    #[test]
    fn jitter_stalls_push_the_next_frame() {
        let cfg = FrameLoopConfig {
            jitter: Some("1,50,60".parse().unwrap()),
            ..Default::default()
        };
        let mut fl = FrameLoop::new(cfg, SceneRule::default(), 0.0, 0).unwrap();
        let work = fl.begin_frame(Micros::ZERO, vec![]);
        assert!((50.0..60.0).contains(&work));
        fl.end_frame(Micros::from_ms(work));
        assert!(fl.next_tick_ms() >= work);
        assert!(fl.next_tick_ms() - work < 1000.0 / 60.0);
    }

    #[test]
    fn config_validation() {
        assert!(FrameLoopConfig {
            frame_rate_hz: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FrameLoopConfig {
            simulated_render_work_ms: 17.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!("0.5,10".parse::<JitterModel>().is_err());
        assert!("1.5,10,20".parse::<JitterModel>().is_err());
    }

    #[test]
    fn inbox_counts_bad_payloads_and_overflow() {
        let inbox = Inbox::new(1);
        inbox.receive(b"garbage", 1.0);
        inbox.receive(br#"{"seq":0,"t_sensor_ms":0,"t_rms_ms":0,"rms_mv":0}"#, 1.0);
        inbox.receive(br#"{"seq":1,"t_sensor_ms":0,"t_rms_ms":0,"rms_mv":0}"#, 1.0);
        assert_eq!(inbox.decode_errors(), 1);
        assert_eq!(inbox.overflow(), 1);
        assert_eq!(inbox.take_before(Micros::from_ms(1.0)).len(), 0);
        assert_eq!(inbox.take_before(Micros::from_ms(1.001)).len(), 1);
    }
}
