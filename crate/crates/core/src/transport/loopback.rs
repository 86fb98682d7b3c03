use std::cmp::{Ordering as CmpOrdering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::sync::atomic::Ordering;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    Counters, DelayModel, Handler, Message, SubscriberWorker, Subscription, Transport, TransportError,
    TransportStats, DEFAULT_QUEUE_DEPTH,
};
use crate::clock::{Clock, VirtualClock};
use crate::wire::validate_topic;

struct Pending {
    due_ms: f64,
    order: u64,
    msg: Message,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == CmpOrdering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> CmpOrdering {
        self.due_ms
            .total_cmp(&other.due_ms)
            .then(self.order.cmp(&other.order))
    }
}

/// Delay sampling plus the per-topic ordering rule shared by both loopbacks.
struct DelayLine {
    delay: DelayModel,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Pending>>,
    order: u64,
    last_due: HashMap<String, f64>,
}

impl DelayLine {
    fn new(delay: DelayModel, seed: u64) -> Result<Self, TransportError> {
        delay.validate()?;
        Ok(Self {
            delay,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: BinaryHeap::new(),
            order: 0,
            last_due: HashMap::new(),
        })
    }

    fn push(&mut self, now_ms: f64, topic: &str, payload: &[u8]) {
        let mut due = now_ms + self.delay.sample(&mut self.rng);
        // Per-topic delivery order follows publish order.
        let last = self.last_due.entry(topic.to_string()).or_insert(f64::NEG_INFINITY);
        if due < *last {
            due = *last;
        }
        *last = due;
        self.queue.push(Reverse(Pending {
            due_ms: due,
            order: self.order,
            msg: Message {
                topic: topic.to_string(),
                payload: Arc::from(payload),
            },
        }));
        self.order += 1;
    }

    fn next_due(&self) -> Option<f64> {
        self.queue.peek().map(|Reverse(p)| p.due_ms)
    }

    fn pop(&mut self) -> Option<Pending> {
        self.queue.pop().map(|Reverse(p)| p)
    }
}

type SharedHandler = Arc<Mutex<Handler>>;

/// Loopback driven by an external event loop on a [`VirtualClock`].
///
/// Nothing is delivered until [`VirtualLoopback::deliver_next`] is called; that call
/// advances the clock to the message's due time and runs the handlers inline.
pub struct VirtualLoopback {
    clock: Arc<VirtualClock>,
    state: Mutex<VirtualState>,
    counters: Counters,
}

struct VirtualState {
    line: DelayLine,
    subs: Vec<(Subscription, SharedHandler)>,
    next_id: u64,
}

impl VirtualLoopback {
    pub fn new(clock: Arc<VirtualClock>, delay: DelayModel, seed: u64) -> Result<Self, TransportError> {
        Ok(Self {
            clock,
            state: Mutex::new(VirtualState {
                line: DelayLine::new(delay, seed)?,
                subs: Vec::new(),
                next_id: 0,
            }),
            counters: Counters::default(),
        })
    }

    pub fn next_due_ms(&self) -> Option<f64> {
        self.state.lock().unwrap().line.next_due()
    }

    pub fn pending(&self) -> usize {
        self.state.lock().unwrap().line.queue.len()
    }

    /// Delivers the earliest pending message. Returns false when nothing is pending.
    pub fn deliver_next(&self) -> bool {
        let (pending, handlers) = {
            let mut st = self.state.lock().unwrap();
            let Some(p) = st.line.pop() else { return false };
            let handlers: Vec<SharedHandler> = st
                .subs
                .iter()
                .filter(|(s, _)| s.topic == p.msg.topic)
                .map(|(_, h)| Arc::clone(h))
                .collect();
            (p, handlers)
        };
        self.clock.advance_to(pending.due_ms);
        for h in handlers {
            (h.lock().unwrap())(&pending.msg);
            self.counters.delivered.fetch_add(1, Ordering::Relaxed);
        }
        true
    }
}

impl Transport for VirtualLoopback {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<f64, TransportError> {
        validate_topic(topic).map_err(|_| TransportError::InvalidTopic(topic.to_string()))?;
        let now = self.clock.now_ms();
        self.state.lock().unwrap().line.push(now, topic, payload);
        self.counters.published.fetch_add(1, Ordering::Relaxed);
        Ok(now)
    }

    fn subscribe(&self, topic: &str, handler: Handler) -> Result<Subscription, TransportError> {
        validate_topic(topic).map_err(|_| TransportError::InvalidTopic(topic.to_string()))?;
        let mut st = self.state.lock().unwrap();
        let sub = Subscription {
            id: st.next_id,
            topic: topic.to_string(),
        };
        st.next_id += 1;
        st.subs.push((sub.clone(), Arc::new(Mutex::new(handler))));
        Ok(sub)
    }

    fn stats(&self) -> TransportStats {
        self.counters.snapshot()
    }
}

/// Real-time loopback: a dispatcher thread releases each message at its due time
/// into per-subscription receive queues.
pub struct LoopbackTransport {
    shared: Arc<Shared>,
    dispatcher: Mutex<Option<JoinHandle<()>>>,
}

struct Shared {
    clock: Arc<dyn Clock>,
    state: Mutex<ThreadedState>,
    wake: Condvar,
    counters: Arc<Counters>,
    depth: usize,
}

struct ThreadedState {
    line: DelayLine,
    workers: Vec<(u64, SubscriberWorker)>,
    next_id: u64,
    shutdown: bool,
}

impl LoopbackTransport {
    pub fn new(clock: Arc<dyn Clock>, delay: DelayModel, seed: u64) -> Result<Self, TransportError> {
        Self::with_queue_depth(clock, delay, seed, DEFAULT_QUEUE_DEPTH)
    }

    pub fn with_queue_depth(
        clock: Arc<dyn Clock>,
        delay: DelayModel,
        seed: u64,
        depth: usize,
    ) -> Result<Self, TransportError> {
        let shared = Arc::new(Shared {
            clock,
            state: Mutex::new(ThreadedState {
                line: DelayLine::new(delay, seed)?,
                workers: Vec::new(),
                next_id: 0,
                shutdown: false,
            }),
            wake: Condvar::new(),
            counters: Arc::new(Counters::default()),
            depth,
        });
        let worker = Arc::clone(&shared);
        let dispatcher = std::thread::Builder::new()
            .name("loopback-dispatch".into())
            .spawn(move || dispatch(&worker))
            .expect("spawn loopback dispatcher");
        Ok(Self {
            shared,
            dispatcher: Mutex::new(Some(dispatcher)),
        })
    }

    /// Waits until every published message has been handled. Returns false on timeout.
    pub fn drain(&self, timeout: Duration) -> bool {
        let start = Instant::now();
        loop {
            {
                let st = self.shared.state.lock().unwrap();
                if st.line.queue.is_empty() && st.workers.iter().all(|(_, w)| w.is_idle()) {
                    return true;
                }
            }
            if start.elapsed() > timeout {
                return false;
            }
            std::thread::sleep(Duration::from_micros(200));
        }
    }

    /// Stops the dispatcher and joins every receive thread.
    pub fn close(&self) {
        let workers = {
            let mut st = self.shared.state.lock().unwrap();
            st.shutdown = true;
            std::mem::take(&mut st.workers)
        };
        self.shared.wake.notify_all();
        if let Some(t) = self.dispatcher.lock().unwrap().take() {
            let _ = t.join();
        }
        drop(workers);
    }
}

impl Drop for LoopbackTransport {
    fn drop(&mut self) {
        self.close();
    }
}

fn dispatch(shared: &Shared) {
    let mut st = shared.state.lock().unwrap();
    loop {
        if st.shutdown {
            return;
        }
        let Some(due) = st.line.next_due() else {
            st = shared.wake.wait(st).unwrap();
            continue;
        };
        let remaining = due - shared.clock.now_ms();
        if remaining > 1.0 {
            let wait = Duration::from_secs_f64((remaining - 1.0) / 1000.0);
            st = shared.wake.wait_timeout(st, wait).unwrap().0;
            continue;
        }
        if remaining > 0.0 {
            drop(st);
            std::thread::yield_now();
            st = shared.state.lock().unwrap();
            continue;
        }
        let p = st.line.pop().expect("peeked");
        for (_, w) in st.workers.iter().filter(|(_, w)| w.topic == p.msg.topic) {
            if !w.offer(p.msg.clone()) {
                shared.counters.overflow.fetch_add(1, Ordering::Relaxed);
            }
        }
    }
}

impl Transport for LoopbackTransport {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<f64, TransportError> {
        validate_topic(topic).map_err(|_| TransportError::InvalidTopic(topic.to_string()))?;
        let now = self.shared.clock.now_ms();
        {
            let mut st = self.shared.state.lock().unwrap();
            if st.shutdown {
                return Err(TransportError::NotConnected);
            }
            st.line.push(now, topic, payload);
        }
        self.shared.counters.published.fetch_add(1, Ordering::Relaxed);
        self.shared.wake.notify_all();
        Ok(now)
    }

    fn subscribe(&self, topic: &str, handler: Handler) -> Result<Subscription, TransportError> {
        validate_topic(topic).map_err(|_| TransportError::InvalidTopic(topic.to_string()))?;
        let mut st = self.shared.state.lock().unwrap();
        if st.shutdown {
            return Err(TransportError::NotConnected);
        }
        let id = st.next_id;
        st.next_id += 1;
        let worker = SubscriberWorker::spawn(topic, handler, self.shared.depth, Arc::clone(&self.shared.counters));
        st.workers.push((id, worker));
        Ok(Subscription {
            id,
            topic: topic.to_string(),
        })
    }

    fn stats(&self) -> TransportStats {
        self.shared.counters.snapshot()
    }
}
