#![allow(dead_code)]

use std::path::PathBuf;

use biorelax_core::analysis::{analyze_logs, AnalysisConfig, LatencyReport};
use biorelax_core::replay::{ReplaySource, RmsMode};
use biorelax_core::session::{simulate_virtual, LoopbackSessionConfig, SessionOutput};
use biorelax_core::signal::{synthetic_emg, RmsConfig};
use biorelax_core::sink::FrameLoopConfig;
use biorelax_core::transport::DelayModel;

pub const GOLDEN_PACKETS: usize = 5_000;
pub const GOLDEN_DELAY: (f64, f64) = (2.98, 8.00);

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Set `BIORELAX_BLESS=1` to rewrite golden files from the current output.
pub fn bless() -> bool {
    std::env::var_os("BIORELAX_BLESS").is_some()
}

/// 5000 packets at 75 Hz through a uniform delay into a 60 Hz sink with no render work.
pub fn golden_session() -> SessionOutput {
    let raw = synthetic_emg(292.0, 70.0, 1).unwrap();
    let rms = RmsConfig {
        window_ms: 64.0,
        target_rate_hz: 75.0,
    };
    let source = ReplaySource::prepare(raw, rms, true, RmsMode::Precomputed).unwrap();
    let cfg = LoopbackSessionConfig {
        delay: DelayModel::Uniform {
            lo: GOLDEN_DELAY.0,
            hi: GOLDEN_DELAY.1,
        },
        delay_seed: 7,
        frame: FrameLoopConfig {
            frame_rate_hz: 60.0,
            simulated_render_work_ms: 0.0,
            jitter: None,
        },
        // packet k is due at k/75 s; 66.66 s admits k = 0..4999
        duration_limit_s: Some(66.66),
        ..LoopbackSessionConfig::default()
    };
    simulate_virtual(source, &cfg).unwrap()
}

pub fn golden_report(out: &SessionOutput) -> LatencyReport {
    analyze_logs(&out.publish_log, &out.sink_log, &AnalysisConfig::default()).unwrap()
}
