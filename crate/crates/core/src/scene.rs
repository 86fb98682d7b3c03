//! Dawn-to-dusk scene state driven by muscle activation.
//!
//! The phase advances while the user relaxes:
//!
//! ```text
//! d(phase)/dt = base_rate * (1 - activation)
//! ```
//!
//! integrated per packet over the sensor-time gap since the previous packet,
//! using the new packet's activation, and clamped to [0, 1]. The browser client
//! implements the same rule; `golden` produces the shared cross-check stream.

use serde::{Deserialize, Serialize};

use crate::signal::{normalize_activation, ActivationCalibration};
use crate::wire::RmsPacket;

/// A fully relaxed five-minute session goes from dawn to dusk.
pub const DEFAULT_BASE_RATE_PER_S: f64 = 1.0 / 300.0;

/// Version tag of the phase rule, shared with the browser client.
pub const SCENE_RULE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneRule {
    pub calibration: ActivationCalibration,
    pub base_rate_per_s: f64,
}

impl Default for SceneRule {
    fn default() -> Self {
        Self {
            calibration: ActivationCalibration::default(),
            base_rate_per_s: DEFAULT_BASE_RATE_PER_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneState {
    pub activation: f64,
    /// 0 = dawn, 1 = dusk.
    pub scene_phase: f64,
    pub last_packet_seq: Option<u64>,
    pub last_end_to_end_ms: Option<f64>,
    pub last_t_sensor_ms: Option<f64>,
}

/// One integration step of the phase rule.
pub fn advance_phase(phase: f64, activation: f64, dt_s: f64, base_rate_per_s: f64) -> f64 {
    let step = base_rate_per_s * (1.0 - activation.clamp(0.0, 1.0)) * dt_s.max(0.0);
    (phase + step).clamp(0.0, 1.0)
}

pub fn apply_packet(scene: &SceneState, packet: &RmsPacket, rule: &SceneRule) -> SceneState {
    let activation = normalize_activation(packet.rms_mv, &rule.calibration);
    let dt_s = scene
        .last_t_sensor_ms
        .map_or(0.0, |prev| (packet.t_sensor_ms - prev) / 1000.0);
    SceneState {
        activation,
        scene_phase: advance_phase(scene.scene_phase, activation, dt_s, rule.base_rate_per_s),
        last_packet_seq: Some(packet.seq),
        last_end_to_end_ms: scene.last_end_to_end_ms,
        last_t_sensor_ms: Some(packet.t_sensor_ms),
    }
}

/// Deterministic packet stream and trajectory used to cross-check the browser client.
pub mod golden {
    use std::fmt::Write as _;

    use super::*;
    use crate::wire::encode_packet;

    pub const PACKETS: usize = 1000;
    pub const RATE_HZ: f64 = 75.0;
    pub const RMS_REST: f64 = 0.05;
    pub const RMS_MAX: f64 = 0.45;

    pub fn rule() -> SceneRule {
        SceneRule {
            calibration: ActivationCalibration::new(RMS_REST, RMS_MAX).expect("valid golden calibration"),
            base_rate_per_s: DEFAULT_BASE_RATE_PER_S,
        }
    }

    /// Tense/release cycles with excursions past both calibration ends.
    pub fn stream() -> Vec<RmsPacket> {
        (0..PACKETS)
            .map(|k| {
                let t = k as f64 / RATE_HZ;
                // 4 s tense ramp, 6 s release, repeating; plus a slow tremor term
                let cycle = t % 10.0;
                let level = if cycle < 4.0 { cycle / 4.0 * 1.2 } else { (1.2 - (cycle - 4.0) / 3.0).max(-0.1) };
                let tremor = 0.03 * (2.0 * std::f64::consts::PI * 1.7 * t).sin();
                let rms = (RMS_REST + (RMS_MAX - RMS_REST) * level + tremor).max(0.0);
                let t_sensor_us = (k as i64 * 40_000) / 3; // k * 1000 / 75 ms in whole microseconds
                RmsPacket {
                    seq: k as u64,
                    t_sensor_ms: t_sensor_us as f64 / 1000.0,
                    t_rms_ms: (t_sensor_us + 500) as f64 / 1000.0,
                    rms_mv: rms,
                }
                .quantized()
            })
            .collect()
    }

    pub fn trajectory(packets: &[RmsPacket]) -> Vec<SceneState> {
        let rule = rule();
        let mut state = SceneState::default();
        packets
            .iter()
            .map(|p| {
                state = apply_packet(&state, p, &rule);
                state
            })
            .collect()
    }

    /// One encoded packet per line.
    pub fn stream_jsonl(packets: &[RmsPacket]) -> String {
        let mut out = String::new();
        for p in packets {
            out.push_str(std::str::from_utf8(&encode_packet(p)).expect("ascii"));
            out.push('\n');
        }
        out
    }

    pub fn trajectory_csv(packets: &[RmsPacket], states: &[SceneState]) -> String {
        let mut out = format!(
            "# rule_version={SCENE_RULE_VERSION} rms_rest={RMS_REST} rms_max={RMS_MAX} base_rate_per_s={DEFAULT_BASE_RATE_PER_S}\nseq,activation,scene_phase\n"
        );
        for (p, s) in packets.iter().zip(states) {
            let _ = writeln!(out, "{},{:.12},{:.12}", p.seq, s.activation, s.scene_phase);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn packet(seq: u64, t_sensor_ms: f64, rms_mv: f64) -> RmsPacket {
        RmsPacket {
            seq,
            t_sensor_ms,
            t_rms_ms: t_sensor_ms,
            rms_mv,
        }
    }

    fn drive(rule: &SceneRule, rms: f64, seconds: f64, rate_hz: f64) -> SceneState {
        let n = (seconds * rate_hz).round() as u64;
        let mut s = SceneState::default();
        for k in 0..=n {
            s = apply_packet(&s, &packet(k, k as f64 * 1000.0 / rate_hz, rms), rule);
        }
        s
    }

    #[test]
    fn rest_advances_at_full_rate_and_max_freezes() {
        let rule = SceneRule {
            calibration: ActivationCalibration::new(0.1, 0.5).unwrap(),
            base_rate_per_s: 0.01,
        };
        let s = drive(&rule, 0.1, 10.0, 75.0);
        assert_eq!(s.activation, 0.0);
        assert_relative_eq!(s.scene_phase, 0.1, epsilon = 1e-9);

        let s = drive(&rule, 0.5, 10.0, 75.0);
        assert_eq!(s.activation, 1.0);
        assert_eq!(s.scene_phase, 0.0);
    }

    #[test]
    fn half_activation_for_ten_seconds_advances_five_percent() {
        let rule = SceneRule {
            calibration: ActivationCalibration::new(0.1, 0.5).unwrap(),
            base_rate_per_s: 0.01,
        };
        let s = drive(&rule, 0.3, 10.0, 75.0);
        assert_relative_eq!(s.activation, 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.scene_phase, 0.05, epsilon = 1e-9);
    }

    #[test]
    fn relaxed_five_minutes_reaches_dusk() {
        let s = drive(&SceneRule::default(), 0.0, 300.0, 75.0);
        assert_relative_eq!(s.scene_phase, 1.0, epsilon = 1e-9);
        let s = drive(&SceneRule::default(), 0.0, 400.0, 75.0);
        assert_eq!(s.scene_phase, 1.0);
    }

    #[test]
    fn step_down_resumes_advance_at_next_packet() {
        let rule = SceneRule::default();
        let s = apply_packet(&SceneState::default(), &packet(0, 0.0, 1.0), &rule);
        let s = apply_packet(&s, &packet(1, 1000.0, 1.0), &rule);
        assert_eq!(s.scene_phase, 0.0);
        let s = apply_packet(&s, &packet(2, 2000.0, 0.0), &rule);
        assert_relative_eq!(s.scene_phase, 1.0 / 300.0, epsilon = 1e-15);
        assert_eq!(s.last_packet_seq, Some(2));
    }

    #[test]
    fn phase_is_monotone_and_bounded() {
        let packets = golden::stream();
        let states = golden::trajectory(&packets);
        let mut prev = 0.0;
        for s in &states {
            assert!(s.scene_phase >= prev && s.scene_phase <= 1.0);
            assert!((0.0..=1.0).contains(&s.activation));
            prev = s.scene_phase;
        }
        assert!(states.iter().any(|s| s.activation == 1.0));
        assert!(states.iter().any(|s| s.activation == 0.0));
    }
}
