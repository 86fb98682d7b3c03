//! Closed-loop sEMG biofeedback pipeline: offline replay of recorded EMG as an
//! RMS stream, a frame-locked render sink, and per-stage latency analysis.

pub mod analysis;
pub mod clock;
pub mod replay;
pub mod scene;
pub mod session;
pub mod signal;
pub mod sink;
pub mod stagelog;
pub mod transport;
pub mod wire;

pub use clock::{Clock, ClockSource, Micros, SystemClock, VirtualClock};
pub use wire::{decode_packet, encode_packet, RmsPacket, TopicMap};
