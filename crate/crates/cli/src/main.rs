use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use biorelax_core::analysis::{analyze_logs, render_text, write_report, AnalysisConfig, NetworkFrom, ReportFormat};
use biorelax_core::clock::{Clock, Micros, SystemClock};
use biorelax_core::replay::{run_session, ReplaySession, ReplaySource, ReplaySummary, RmsMode};
use biorelax_core::scene::{golden, SceneRule};
use biorelax_core::session::{run_realtime_loopback, simulate_virtual, LoopbackSessionConfig, SessionOutput};
use biorelax_core::signal::{self, ActivationCalibration, RmsConfig};
use biorelax_core::sink::{run_sink, FrameLoopConfig, JitterModel, SinkSummary, StopCondition};
use biorelax_core::stagelog::{LogHeader, LogWriter, PublishLog, PublishLogEntry, SinkLog, SinkLogEntry};
use biorelax_core::transport::{BrokerOptions, BrokerTransport, DelayModel, BROKER_ENV};
use biorelax_core::wire::TopicMap;

#[derive(Parser)]
#[command(name = "biorelax", version, about = "sEMG biofeedback latency pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic EMG recording in the canonical CSV format.
    Synth(SynthArgs),
    /// Pace an EMG channel onto the data topic and log publisher timestamps.
    Replay(ReplayArgs),
    /// Subscribe, run the frame loop and log receiver timestamps.
    Sink(SinkArgs),
    /// Merge publish and sink logs and write the latency report.
    Analyze(AnalyzeArgs),
    /// Write the scene cross-check stream and trajectory.
    SceneGolden {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 292.0)]
    rate: f64,
    #[arg(long, default_value_t = 300.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct TransportArgs {
    /// MQTT broker as host:port (overridden by BIORELAX_BROKER).
    #[arg(long, conflicts_with = "loopback")]
    broker: Option<String>,
    /// Run publisher and sink in this process over an in-memory transport.
    #[arg(long)]
    loopback: bool,
    /// Loopback delay: const:<ms>, uniform:<lo>,<hi>, empirical:<a>,<b>,... or empirical:@<file>.
    #[arg(long, default_value = "const:0")]
    delay: DelayModel,
    /// Seed for delay and jitter draws.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run the loopback session on a simulated clock (finishes immediately).
    #[arg(long = "virtual", requires = "loopback")]
    virtual_clock: bool,
    #[arg(long, default_value = "vrx/emg/rms")]
    topic: String,
}

#[derive(Args, Clone)]
struct FrameArgs {
    #[arg(long, default_value_t = 60.0)]
    fps: f64,
    #[arg(long, default_value_t = 0.0)]
    work_ms: f64,
    /// Render stalls as prob,lo_ms,hi_ms, e.g. 0.01,50,120.
    #[arg(long)]
    jitter: Option<JitterModel>,
    #[arg(long, default_value_t = 0.0)]
    rms_rest: f64,
    #[arg(long, default_value_t = 1.0)]
    rms_max: f64,
}

impl FrameArgs {
    fn frame(&self) -> FrameLoopConfig {
        FrameLoopConfig {
            frame_rate_hz: self.fps,
            simulated_render_work_ms: self.work_ms,
            jitter: self.jitter,
        }
    }

    fn rule(&self) -> Result<SceneRule> {
        Ok(SceneRule {
            calibration: ActivationCalibration::new(self.rms_rest, self.rms_max)?,
            ..SceneRule::default()
        })
    }
}

#[derive(Args, Clone)]
struct SourceArgs {
    /// EMG recording to replay.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    channel: usize,
    /// Packet rate after decimation.
    #[arg(long, default_value_t = 75.0)]
    rate: f64,
    #[arg(long, default_value_t = 64.0)]
    window_ms: f64,
    /// Publish one packet per input sample.
    #[arg(long)]
    no_decimate: bool,
    /// Update the RMS envelope incrementally as packets come due.
    #[arg(long)]
    streaming: bool,
    #[arg(long)]
    duration_s: Option<f64>,
}

impl SourceArgs {
    fn load(&self) -> Result<ReplaySource> {
        let input = self.input.as_ref().context("--input is required")?;
        let raw = signal::load_emg_csv(input, self.channel)?;
        let rms = RmsConfig {
            window_ms: self.window_ms,
            target_rate_hz: self.rate,
        };
        let mode = if self.streaming { RmsMode::Streaming } else { RmsMode::Precomputed };
        Ok(ReplaySource::prepare(raw, rms, !self.no_decimate, mode)?)
    }
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    transport: TransportArgs,
    #[command(flatten)]
    frame: FrameArgs,
    /// Publish log output.
    #[arg(long)]
    log: PathBuf,
    /// Sink log output for --loopback runs.
    #[arg(long)]
    sink_log: Option<PathBuf>,
}

#[derive(Args)]
struct SinkArgs {
    #[command(flatten)]
    transport: TransportArgs,
    #[command(flatten)]
    frame: FrameArgs,
    /// Sink log output.
    #[arg(long)]
    log: PathBuf,
    /// With --loopback: the recording to replay and where to log its publish side.
    #[command(flatten)]
    source: SourceArgs,
    #[arg(long)]
    pub_log: Option<PathBuf>,
    /// Stop after this many seconds.
    #[arg(long)]
    stop_after_s: Option<f64>,
    /// Stop after this long without packets, once the stream has started.
    #[arg(long, default_value_t = 5.0)]
    idle_timeout_s: f64,
    #[arg(long)]
    max_packets: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    pub_log: PathBuf,
    #[arg(long)]
    sink_log: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "30,50")]
    targets: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "text,json,svg")]
    formats: Vec<ReportFormat>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "rms")]
    network_from: NetworkFrom,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth(a) => synth(&a),
        Command::Replay(a) => replay(&a),
        Command::Sink(a) => sink(&a),
        Command::Analyze(a) => analyze(&a),
        Command::SceneGolden { out_dir } => scene_golden(&out_dir),
    }
}

fn synth(a: &SynthArgs) -> Result<()> {
    let s = signal::synthetic_emg(a.rate, a.duration_s, a.seed)?;
    let csv = signal::format_emg_csv(a.rate, 0, &[s.values()]);
    std::fs::write(&a.out, csv).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} samples at {} Hz to {}", s.len(), a.rate, a.out.display());
    Ok(())
}

fn loopback_config(t: &TransportArgs, f: &FrameArgs, duration_s: Option<f64>) -> Result<LoopbackSessionConfig> {
    Ok(LoopbackSessionConfig {
        delay: t.delay.clone(),
        delay_seed: t.seed,
        frame: f.frame(),
        jitter_seed: t.seed,
        rule: f.rule()?,
        topics: TopicMap::new(t.topic.clone(), TopicMap::default().control_topic())?,
        duration_limit_s: duration_s,
    })
}

/// Publisher and sink together in one process.
fn run_loopback(
    source: &SourceArgs,
    t: &TransportArgs,
    f: &FrameArgs,
    pub_log: &Path,
    sink_log: &Path,
) -> Result<SessionOutput> {
    let cfg = loopback_config(t, f, source.duration_s)?;
    let src = source.load()?;
    if t.virtual_clock {
        let out = simulate_virtual(src, &cfg)?;
        std::fs::write(pub_log, out.publish_log.render())?;
        std::fs::write(sink_log, out.sink_log.render())?;
        Ok(out)
    } else {
        Ok(run_realtime_loopback(src, &cfg, pub_log, sink_log)?)
    }
}

fn print_replay(s: &ReplaySummary) {
    let rate = s.achieved_rate_hz.map_or("n/a".into(), |r| format!("{r:.2} Hz"));
    eprintln!("published {} packets ({} refused by full queue), achieved {rate}", s.packets_sent, s.dropped);
    if let Some(e) = &s.error {
        eprintln!("run ended early: {e}");
    }
}

fn print_sink(s: &SinkSummary) {
    eprintln!(
        "logged {} packets over {} frames; {} undecodable, {} overflowed; scene phase {:.4}",
        s.packets_logged, s.frames, s.decode_errors, s.overflow, s.scene.scene_phase
    );
}

fn broker_options(t: &TransportArgs, role: &str) -> Result<BrokerOptions> {
    if t.broker.is_none() && std::env::var_os(BROKER_ENV).is_none() {
        bail!("pass --broker <host:port>, --loopback, or set {BROKER_ENV}");
    }
    let id = format!("biorelax-{role}-{}", std::process::id());
    Ok(BrokerOptions::from_uri_or_env(t.broker.as_deref(), id)?)
}

fn replay(a: &ReplayArgs) -> Result<()> {
    if a.transport.loopback {
        let sink_log = a.sink_log.as_ref().context("--loopback needs --sink-log")?;
        let out = run_loopback(&a.source, &a.transport, &a.frame, &a.log, sink_log)?;
        print_replay(&out.replay);
        print_sink(&out.sink);
        return Ok(());
    }
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let transport = BrokerTransport::connect(&broker_options(&a.transport, "replay")?, Arc::clone(&clock))?;
    let src = a.source.load()?;
    let start = clock.now_ms();
    let mut session = ReplaySession::new(src, start, a.source.duration_s, &a.transport.topic);
    let header = LogHeader {
        clock: clock.source(),
        session_start: Micros::from_ms(start),
    };
    let mut log = LogWriter::<PublishLogEntry>::create(&a.log, header)?;
    let summary = run_session(&mut session, clock.as_ref(), &transport, &mut log)?;
    transport.disconnect();
    print_replay(&summary);
    if summary.partial {
        bail!("replay incomplete");
    }
    Ok(())
}

fn sink(a: &SinkArgs) -> Result<()> {
    if a.transport.loopback {
        let source = &a.source;
        let pub_log = a.pub_log.as_ref().context("--loopback sink needs --pub-log")?;
        let out = run_loopback(source, &a.transport, &a.frame, pub_log, &a.log)?;
        print_replay(&out.replay);
        print_sink(&out.sink);
        return Ok(());
    }
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let transport = BrokerTransport::connect(&broker_options(&a.transport, "sink")?, Arc::clone(&clock))?;
    let start = clock.now_ms();
    let header = LogHeader {
        clock: clock.source(),
        session_start: Micros::from_ms(start),
    };
    let mut log = LogWriter::<SinkLogEntry>::create(&a.log, header)?;
    let stop = StopCondition {
        duration_s: a.stop_after_s.or(a.source.duration_s),
        idle_timeout_s: Some(a.idle_timeout_s),
        max_packets: a.max_packets,
        flag: None,
    };
    eprintln!("listening on {}", a.transport.topic);
    let summary = run_sink(
        &transport,
        Arc::clone(&clock),
        &a.transport.topic,
        a.frame.frame(),
        a.frame.rule()?,
        &mut log,
        start,
        &stop,
    )?;
    transport.disconnect();
    print_sink(&summary);
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let publish = PublishLog::read(&a.pub_log).with_context(|| format!("reading {}", a.pub_log.display()))?;
    let sink = SinkLog::read(&a.sink_log).with_context(|| format!("reading {}", a.sink_log.display()))?;
    for (name, partial) in [("publish", publish.is_partial()), ("sink", sink.is_partial())] {
        if partial {
            eprintln!("warning: {name} log is from a partial run");
        }
    }
    let cfg = AnalysisConfig {
        targets_ms: a.targets.clone(),
        seed: a.seed,
        network_from: a.network_from,
        bootstrap_resamples: a.resamples,
        ..AnalysisConfig::default()
    };
    let report = analyze_logs(&publish, &sink, &cfg)?;
    print!("{}", render_text(&report));
    for path in write_report(&report, &a.out, &a.formats)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn scene_golden(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let packets = golden::stream();
    let states = golden::trajectory(&packets);
    std::fs::write(dir.join("scene_stream.jsonl"), golden::stream_jsonl(&packets))?;
    std::fs::write(dir.join("scene_trajectory.csv"), golden::trajectory_csv(&packets, &states))?;
    eprintln!("wrote {} packets to {}", packets.len(), dir.display());
    Ok(())
}
