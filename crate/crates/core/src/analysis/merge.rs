//! Joins publisher and sink logs on `seq` and differences the stage timestamps.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Micros;
use crate::stagelog::{PublishLog, SinkLog};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("seq {seq} appears more than once in the {log} log")]
    DuplicateSeq { log: &'static str, seq: u64 },
    #[error("{} sink seq(s) have no publish entry, first {}", .seqs.len(), .seqs[0])]
    SinkOnly { seqs: Vec<u64> },
}

/// Which publisher timestamp starts the network stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkFrom {
    #[default]
    Rms,
    Publish,
}

impl FromStr for NetworkFrom {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rms" => Ok(Self::Rms),
            "publish" => Ok(Self::Publish),
            other => Err(format!("network-from must be rms or publish, got {other:?}")),
        }
    }
}

impl fmt::Display for NetworkFrom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rms => "rms",
            Self::Publish => "publish",
        })
    }
}

/// Stage latencies of one packet, in exact microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatencyRecord {
    pub seq: u64,
    pub processing: Micros,
    pub network: Micros,
    pub rendering: Micros,
    pub end_to_end: Micros,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MergeDiagnostics {
    pub publish_entries: usize,
    pub sink_entries: usize,
    pub records: usize,
    /// Published but never rendered.
    pub dropped_seqs: Vec<u64>,
}

impl MergeDiagnostics {
    pub fn drops(&self) -> usize {
        self.dropped_seqs.len()
    }
}

/// Inner join on `seq`, in publish order.
pub fn merge_logs(
    publish: &PublishLog,
    sink: &SinkLog,
    network_from: NetworkFrom,
) -> Result<(Vec<LatencyRecord>, MergeDiagnostics), MergeError> {
    let mut sink_by_seq = HashMap::with_capacity(sink.entries.len());
    for e in &sink.entries {
        if sink_by_seq.insert(e.seq, e).is_some() {
            return Err(MergeError::DuplicateSeq { log: "sink", seq: e.seq });
        }
    }
    let mut seen = HashMap::with_capacity(publish.entries.len());
    for p in &publish.entries {
        if seen.insert(p.seq, ()).is_some() {
            return Err(MergeError::DuplicateSeq { log: "publish", seq: p.seq });
        }
    }
    let mut phantoms: Vec<u64> = sink.entries.iter().map(|e| e.seq).filter(|s| !seen.contains_key(s)).collect();
    if !phantoms.is_empty() {
        phantoms.sort_unstable();
        return Err(MergeError::SinkOnly { seqs: phantoms });
    }

    let mut records = Vec::with_capacity(sink.entries.len());
    let mut dropped_seqs = Vec::new();
    for p in &publish.entries {
        let Some(s) = sink_by_seq.get(&p.seq) else {
            dropped_seqs.push(p.seq);
            continue;
        };
        let t_sent = match network_from {
            NetworkFrom::Rms => p.t_rms,
            NetworkFrom::Publish => p.t_publish,
        };
        records.push(LatencyRecord {
            seq: p.seq,
            processing: t_sent - p.t_sensor,
            network: s.t_recv - t_sent,
            rendering: s.t_render - s.t_recv,
            end_to_end: s.t_render - p.t_sensor,
        });
    }
    let diagnostics = MergeDiagnostics {
        publish_entries: publish.entries.len(),
        sink_entries: sink.entries.len(),
        records: records.len(),
        dropped_seqs,
    };
    Ok((records, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ClockSource;
    use crate::stagelog::{LogHeader, PublishLogEntry, SinkLogEntry, StageLog};
    use proptest::prelude::*;

    fn header() -> LogHeader {
        LogHeader {
            clock: ClockSource::Virtual,
            session_start: Micros(0),
        }
    }

    fn logs(n: u64, missing: &[u64]) -> (PublishLog, SinkLog) {
        let publish = (0..n)
            .map(|k| {
                let t = Micros(k as i64 * 13_333);
                PublishLogEntry {
                    seq: k,
                    t_sensor: t,
                    t_rms: t + Micros(500),
                    t_publish: t + Micros(520),
                }
            })
            .collect();
        let sink = (0..n)
            .filter(|k| !missing.contains(k))
            .map(|k| {
                let t = Micros(k as i64 * 13_333 + 6_000);
                SinkLogEntry {
                    seq: k,
                    t_recv: t,
                    t_pre_update: t + Micros(4_000),
                    t_render: t + Micros(4_100),
                }
            })
            .collect();
        (
            StageLog {
                header: header(),
                entries: publish,
                trailers: vec![],
            },
            StageLog {
                header: header(),
                entries: sink,
                trailers: vec![],
            },
        )
    }

    #[test]
    fn lossless_join() {
        let (p, s) = logs(100, &[]);
        let (r, d) = merge_logs(&p, &s, NetworkFrom::Rms).unwrap();
        assert_eq!(r.len(), 100);
        assert_eq!(d.drops(), 0);
        assert_eq!(r[0].processing, Micros(500));
        assert_eq!(r[0].network, Micros(5_500));
        assert_eq!(r[0].rendering, Micros(4_100));
    }

    #[test]
    fn drops_are_listed() {
        let (p, s) = logs(100, &[17, 63]);
        let (r, d) = merge_logs(&p, &s, NetworkFrom::Rms).unwrap();
        assert_eq!(r.len(), 98);
        assert_eq!(d.dropped_seqs, vec![17, 63]);
    }

    #[test]
    fn network_from_publish_moves_the_boundary() {
        let (p, s) = logs(3, &[]);
        let (r, _) = merge_logs(&p, &s, NetworkFrom::Publish).unwrap();
        assert_eq!(r[0].processing, Micros(520));
        assert_eq!(r[0].network, Micros(5_480));
        assert_eq!(r[0].processing + r[0].network + r[0].rendering, r[0].end_to_end);
    }

    #[test]
    fn duplicates_and_phantoms_are_errors() {
        let (p, mut s) = logs(5, &[]);
        s.entries.push(s.entries[2]);
        assert_eq!(
            merge_logs(&p, &s, NetworkFrom::Rms).unwrap_err(),
            MergeError::DuplicateSeq { log: "sink", seq: 2 }
        );
        let (p, mut s) = logs(5, &[]);
        s.entries[4].seq = 99;
        let err = merge_logs(&p, &s, NetworkFrom::Rms).unwrap_err();
        assert_eq!(err, MergeError::SinkOnly { seqs: vec![99] });
        let (mut p, s) = logs(5, &[]);
        p.entries[1].seq = 0;
        assert!(matches!(
            merge_logs(&p, &s, NetworkFrom::Rms),
            Err(MergeError::DuplicateSeq { log: "publish", seq: 0 })
        ));
    }

    proptest! {
        #[test]
        fn stage_sum_identity(
            rows in prop::collection::vec((0i64..10_000_000, 0i64..5_000, 0i64..100, -3_000i64..50_000, 0i64..20_000, 0i64..200_000), 1..200),
            from_publish in any::<bool>(),
        ) {
            let mut p = Vec::new();
            let mut s = Vec::new();
            for (k, &(ts, proc_, publ, net, wait, work)) in rows.iter().enumerate() {
                let t_sensor = Micros(ts);
                let t_rms = t_sensor + Micros(proc_);
                let t_publish = t_rms + Micros(publ);
                let t_recv = t_rms + Micros(net);
                let t_pre = t_recv + Micros(wait);
                p.push(PublishLogEntry { seq: k as u64, t_sensor, t_rms, t_publish });
                s.push(SinkLogEntry { seq: k as u64, t_recv, t_pre_update: t_pre, t_render: t_pre + Micros(work) });
            }
            let from = if from_publish { NetworkFrom::Publish } else { NetworkFrom::Rms };
            let publish = StageLog { header: header(), entries: p, trailers: vec![] };
            let sink = StageLog { header: header(), entries: s, trailers: vec![] };
            let (records, _) = merge_logs(&publish, &sink, from).unwrap();
            for r in records {
                prop_assert_eq!(r.processing + r.network + r.rendering, r.end_to_end);
                // and in logged milliseconds
                let sum_ms = r.processing.as_ms() + r.network.as_ms() + r.rendering.as_ms();
                prop_assert!((sum_ms - r.end_to_end.as_ms()).abs() < 1e-9);
            }
        }
    }
}
