//! Publisher and sink wired together over an in-process loopback.
//!
//! [`simulate_virtual`] is a discrete-event run on a [`VirtualClock`]: identical
//! inputs give byte-identical logs, and a five-minute session finishes in well
//! under a second. [`run_realtime_loopback`] runs the same pieces on the system
//! clock with a publisher thread and a frame-loop thread.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::clock::{Clock, ClockSource, Micros, SystemClock, VirtualClock};
use crate::replay::{run_session, ReplayError, ReplaySession, ReplaySource, ReplaySummary, SummaryBuilder};
use crate::scene::SceneRule;
use crate::sink::{attach_inbox, run_frame_loop, FrameLoop, FrameLoopConfig, Inbox, SinkError, SinkSummary, StopCondition};
use crate::stagelog::{LogError, LogHeader, LogWriter, PublishLog, PublishLogEntry, SinkLog, SinkLogEntry, StageLog};
use crate::transport::{DelayModel, LoopbackTransport, Transport, TransportError, VirtualLoopback};
use crate::wire::TopicMap;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("sink thread panicked")]
    SinkPanicked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopbackSessionConfig {
    pub delay: DelayModel,
    /// Seeds the network delay draws.
    pub delay_seed: u64,
    pub frame: FrameLoopConfig,
    /// Seeds the render-work jitter draws.
    pub jitter_seed: u64,
    pub rule: SceneRule,
    pub topics: TopicMap,
    pub duration_limit_s: Option<f64>,
}

impl Default for LoopbackSessionConfig {
    fn default() -> Self {
        Self {
            delay: DelayModel::Constant(0.0),
            delay_seed: 0,
            frame: FrameLoopConfig::default(),
            jitter_seed: 0,
            rule: SceneRule::default(),
            topics: TopicMap::default(),
            duration_limit_s: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub publish_log: PublishLog,
    pub sink_log: SinkLog,
    pub replay: ReplaySummary,
    pub sink: SinkSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    // declaration order breaks ties at equal times
    FrameStart,
    FrameEnd,
    Publish,
    Delivery,
}

/// Runs publisher, loopback and sink to completion on a virtual clock starting at 0.
pub fn simulate_virtual(source: ReplaySource, cfg: &LoopbackSessionConfig) -> Result<SessionOutput, SessionError> {
    let clock = Arc::new(VirtualClock::new(0.0));
    let transport = VirtualLoopback::new(Arc::clone(&clock), cfg.delay.clone(), cfg.delay_seed)?;
    let inbox = Arc::new(Inbox::new(usize::MAX));
    attach_inbox(&transport, cfg.topics.data_topic(), clock.clone(), Arc::clone(&inbox))?;

    let start = 0.0;
    let mut session = ReplaySession::new(source, start, cfg.duration_limit_s, cfg.topics.data_topic());
    let mut frames = FrameLoop::new(cfg.frame, cfg.rule, start, cfg.jitter_seed)?;
    let mut frame_end_ms = 0.0;
    let mut publish_entries = Vec::with_capacity(session.planned_packets());
    let mut sink_entries = Vec::with_capacity(session.planned_packets());
    let mut summary = SummaryBuilder::default();
    let mut logged = 0u64;

    loop {
        let publish = session.next_deadline_ms();
        let delivery = transport.next_due_ms();
        if publish.is_none() && delivery.is_none() && inbox.is_empty() && !frames.in_frame() {
            break;
        }
        let frame = if frames.in_frame() {
            (frame_end_ms, Event::FrameEnd)
        } else {
            (frames.next_tick_ms(), Event::FrameStart)
        };
        let (_, event) = [
            Some(frame),
            publish.map(|t| (t, Event::Publish)),
            delivery.map(|t| (t, Event::Delivery)),
        ]
        .into_iter()
        .flatten()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("frame event always present");

        match event {
            Event::FrameStart => {
                clock.advance_to(frame.0);
                let t_pre = Micros::from_ms(clock.now_ms());
                let work = frames.begin_frame(t_pre, inbox.take_before(t_pre));
                frame_end_ms = t_pre.as_ms() + work;
            }
            Event::FrameEnd => {
                clock.advance_to(frame_end_ms);
                let entries = frames.end_frame(Micros::from_ms(clock.now_ms()));
                logged += entries.len() as u64;
                sink_entries.extend(entries);
            }
            Event::Publish => {
                clock.advance_to(publish.expect("publish event"));
                let e = session.emit(clock.as_ref(), &transport)?;
                summary.record(&e);
                publish_entries.push(e.entry);
            }
            Event::Delivery => {
                transport.deliver_next();
            }
        }
    }

    let header = LogHeader {
        clock: ClockSource::Virtual,
        session_start: Micros::from_ms(start),
    };
    Ok(SessionOutput {
        publish_log: StageLog {
            header,
            entries: publish_entries,
            trailers: Vec::new(),
        },
        sink_log: StageLog {
            header,
            entries: sink_entries,
            trailers: Vec::new(),
        },
        replay: summary.finish(None),
        sink: SinkSummary {
            packets_logged: logged,
            frames: frames.frames(),
            decode_errors: inbox.decode_errors(),
            overflow: inbox.overflow() + transport.stats().overflow,
            scene: *frames.scene(),
        },
    })
}

/// Runs publisher and sink in real time over a threaded loopback, writing both logs.
pub fn run_realtime_loopback(
    source: ReplaySource,
    cfg: &LoopbackSessionConfig,
    publish_log: &Path,
    sink_log: &Path,
) -> Result<SessionOutput, SessionError> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let transport = Arc::new(LoopbackTransport::new(Arc::clone(&clock), cfg.delay.clone(), cfg.delay_seed)?);
    let inbox = Arc::new(Inbox::default());
    attach_inbox(transport.as_ref(), cfg.topics.data_topic(), Arc::clone(&clock), Arc::clone(&inbox))?;

    // small lead so both loops start on the same grid
    let start = clock.now_ms() + 20.0;
    let header = LogHeader {
        clock: clock.source(),
        session_start: Micros::from_ms(start),
    };
    let mut pub_writer = LogWriter::<PublishLogEntry>::create(publish_log, header)?;
    let mut sink_writer = LogWriter::<SinkLogEntry>::create(sink_log, header)?;

    let stop_flag = Arc::new(AtomicBool::new(false));
    let stop = StopCondition {
        flag: Some(Arc::clone(&stop_flag)),
        ..Default::default()
    };
    let sink_thread = {
        let (inbox, clock, frame, rule) = (Arc::clone(&inbox), Arc::clone(&clock), cfg.frame, cfg.rule);
        std::thread::Builder::new()
            .name("frame-loop".into())
            .spawn(move || run_frame_loop(&inbox, clock.as_ref(), frame, rule, &mut sink_writer, start, &stop))
            .expect("spawn frame loop")
    };

    let mut session = ReplaySession::new(source, start, cfg.duration_limit_s, cfg.topics.data_topic());
    let replay = run_session(&mut session, clock.as_ref(), transport.as_ref(), &mut pub_writer);
    transport.drain(Duration::from_secs(5));
    stop_flag.store(true, Ordering::Release);
    let sink = sink_thread.join().map_err(|_| SessionError::SinkPanicked)?;
    transport.close();

    let replay = replay?;
    let mut sink = sink?;
    sink.overflow += transport.stats().overflow;
    Ok(SessionOutput {
        publish_log: StageLog::read(publish_log)?,
        sink_log: StageLog::read(sink_log)?,
        replay,
        sink,
    })
}
