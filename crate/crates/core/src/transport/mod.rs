//! Publish/subscribe abstraction with two backends: an MQTT 3.1.1 broker
//! connection and an in-process loopback with injectable delay.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Sender, TrySendError};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

mod broker;
mod loopback;

pub use broker::{parse_broker_uri, BrokerOptions, BrokerTransport, BROKER_ENV};
pub use loopback::{LoopbackTransport, VirtualLoopback};

/// Capacity of every cross-context hand-off queue.
pub const DEFAULT_QUEUE_DEPTH: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("transport is not connected")]
    NotConnected,
    #[error("broker refused connection: {0}")]
    Refused(String),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("outgoing queue full, message dropped")]
    QueueFull,
    #[error("invalid broker uri {0:?}")]
    InvalidUri(String),
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("invalid delay model: {0}")]
    InvalidDelay(String),
}

/// Consumes delivered payloads. Invoked on the transport's receive context.
pub type Handler = Box<dyn FnMut(&Message) + Send>;

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub topic: String,
    pub payload: Arc<[u8]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub id: u64,
    pub topic: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TransportStats {
    pub published: u64,
    pub delivered: u64,
    /// Messages refused by a full hand-off queue.
    pub overflow: u64,
}

pub trait Transport: Send + Sync {
    /// Hands the payload off for delivery and returns the local hand-off time in ms.
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<f64, TransportError>;
    fn subscribe(&self, topic: &str, handler: Handler) -> Result<Subscription, TransportError>;
    fn stats(&self) -> TransportStats;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<f64, TransportError> {
        (**self).publish(topic, payload)
    }

    fn subscribe(&self, topic: &str, handler: Handler) -> Result<Subscription, TransportError> {
        (**self).subscribe(topic, handler)
    }

    fn stats(&self) -> TransportStats {
        (**self).stats()
    }
}

#[derive(Debug, Default)]
pub(crate) struct Counters {
    pub published: AtomicU64,
    pub delivered: AtomicU64,
    pub overflow: AtomicU64,
}

impl Counters {
    pub fn snapshot(&self) -> TransportStats {
        TransportStats {
            published: self.published.load(Ordering::Relaxed),
            delivered: self.delivered.load(Ordering::Relaxed),
            overflow: self.overflow.load(Ordering::Relaxed),
        }
    }
}

/// One subscription's receive context: a bounded queue drained by a dedicated thread,
/// so handler invocations for a subscription never overlap.
pub(crate) struct SubscriberWorker {
    pub topic: String,
    tx: Option<Sender<Message>>,
    thread: Option<JoinHandle<()>>,
    in_flight: Arc<AtomicU64>,
}

impl SubscriberWorker {
    pub fn spawn(topic: &str, mut handler: Handler, depth: usize, counters: Arc<Counters>) -> Self {
        let (tx, rx) = bounded::<Message>(depth);
        let in_flight = Arc::new(AtomicU64::new(0));
        let pending = Arc::clone(&in_flight);
        let thread = std::thread::Builder::new()
            .name(format!("sub:{topic}"))
            .spawn(move || {
                for msg in rx {
                    handler(&msg);
                    counters.delivered.fetch_add(1, Ordering::Relaxed);
                    pending.fetch_sub(1, Ordering::AcqRel);
                }
            })
            .expect("spawn subscriber thread");
        Self {
            topic: topic.to_string(),
            tx: Some(tx),
            thread: Some(thread),
            in_flight,
        }
    }

    /// Non-blocking hand-off. Returns false when the queue is full.
    pub fn offer(&self, msg: Message) -> bool {
        let Some(tx) = &self.tx else { return false };
        self.in_flight.fetch_add(1, Ordering::AcqRel);
        match tx.try_send(msg) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                self.in_flight.fetch_sub(1, Ordering::AcqRel);
                false
            }
        }
    }

    pub fn is_idle(&self) -> bool {
        self.in_flight.load(Ordering::Acquire) == 0
    }
}

impl Drop for SubscriberWorker {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Per-message delay injected by the loopback transport.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayModel {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    /// Delays resampled uniformly with replacement from an observed list.
    Empirical(Vec<f64>),
}

impl DelayModel {
    pub fn validate(&self) -> Result<(), TransportError> {
        let bad = |m: String| Err(TransportError::InvalidDelay(m));
        match self {
            DelayModel::Constant(d) if !(*d >= 0.0 && d.is_finite()) => bad(format!("constant delay {d}")),
            DelayModel::Uniform { lo, hi } if !(*lo >= 0.0 && lo <= hi && hi.is_finite()) => {
                bad(format!("uniform range [{lo}, {hi}]"))
            }
            DelayModel::Empirical(v) if v.is_empty() => bad("empty empirical sample".into()),
            DelayModel::Empirical(v) if v.iter().any(|d| !(*d >= 0.0 && d.is_finite())) => {
                bad("empirical sample contains a negative or non-finite delay".into())
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            DelayModel::Constant(d) => *d,
            DelayModel::Uniform { lo, hi } if lo == hi => *lo,
            DelayModel::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            DelayModel::Empirical(v) => v[rng.random_range(0..v.len())],
        }
    }

    /// Reads an empirical model from a file with one delay (ms) per line.
    pub fn empirical_from_file(path: &Path) -> Result<Self, TransportError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TransportError::InvalidDelay(format!("{}: {e}", path.display())))?;
        let values = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|_| TransportError::InvalidDelay(format!("not a number: {l:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let model = DelayModel::Empirical(values);
        model.validate()?;
        Ok(model)
    }
}

/// `const:5`, `uniform:2.98,8.00`, `empirical:1.2,3.4,...` or `empirical:@delays.txt`.
impl FromStr for DelayModel {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TransportError::InvalidDelay(format!("cannot parse {s:?}"));
        let (kind, args) = s.split_once(':').ok_or_else(err)?;
        let nums = |a: &str| -> Result<Vec<f64>, TransportError> {
            a.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| err()))
                .collect()
        };
        let model = match kind {
            "const" | "constant" => match nums(args)?.as_slice() {
                [d] => DelayModel::Constant(*d),
                _ => return Err(err()),
            },
            "uniform" => match nums(args)?.as_slice() {
                [lo, hi] => DelayModel::Uniform { lo: *lo, hi: *hi },
                _ => return Err(err()),
            },
            "empirical" => match args.strip_prefix('@') {
                Some(path) => return DelayModel::empirical_from_file(Path::new(path)),
                None => DelayModel::Empirical(nums(args)?),
            },
            _ => return Err(err()),
        };
        model.validate()?;
        Ok(model)
    }
}

impl fmt::Display for DelayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayModel::Constant(d) => write!(f, "const:{d}"),
            DelayModel::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            DelayModel::Empirical(v) => write!(f, "empirical:{} values", v.len()),
        }
    }
}

/// Selects a backend.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportConfig {
    Broker(BrokerOptions),
    Loopback { delay: DelayModel, seed: u64 },
}
