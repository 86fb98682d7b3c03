use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rumqttc::{Client, ClientError, ConnectReturnCode, Connection, ConnectionError, Event, MqttOptions, Packet, QoS};

use super::{
    Counters, Handler, Message, SubscriberWorker, Subscription, Transport, TransportError, TransportStats,
    DEFAULT_QUEUE_DEPTH,
};
use crate::clock::Clock;
use crate::wire::validate_topic;

/// Overrides the broker address given on the command line.
pub const BROKER_ENV: &str = "BIORELAX_BROKER";

const DEFAULT_PORT: u16 = 1883;
const CONNACK_TIMEOUT: Duration = Duration::from_secs(5);
const SUBACK_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq)]
pub struct BrokerOptions {
    pub host: String,
    pub port: u16,
    pub client_id: String,
    pub keep_alive: Duration,
    pub queue_depth: usize,
    /// Sleep before each reconnect attempt; its length is the retry budget.
    pub retry_backoff: Vec<Duration>,
}

impl BrokerOptions {
    pub fn new(host: impl Into<String>, port: u16, client_id: impl Into<String>) -> Self {
        Self {
            host: host.into(),
            port,
            client_id: client_id.into(),
            keep_alive: Duration::from_secs(10),
            queue_depth: DEFAULT_QUEUE_DEPTH,
            retry_backoff: vec![
                Duration::from_millis(500),
                Duration::from_secs(1),
                Duration::from_secs(2),
            ],
        }
    }

    /// Builds options from a `host:port` string, letting `BIORELAX_BROKER` win when set.
    pub fn from_uri_or_env(uri: Option<&str>, client_id: impl Into<String>) -> Result<Self, TransportError> {
        let env = std::env::var(BROKER_ENV).ok().filter(|s| !s.trim().is_empty());
        let uri = env
            .as_deref()
            .or(uri)
            .ok_or_else(|| TransportError::InvalidUri(String::new()))?;
        let (host, port) = parse_broker_uri(uri)?;
        Ok(Self::new(host, port, client_id))
    }
}

/// Accepts `host:port`, `host`, `mqtt://host:port` and `tcp://host:port`.
pub fn parse_broker_uri(uri: &str) -> Result<(String, u16), TransportError> {
    let bad = || TransportError::InvalidUri(uri.to_string());
    let rest = uri
        .strip_prefix("mqtt://")
        .or_else(|| uri.strip_prefix("tcp://"))
        .unwrap_or(uri)
        .trim_end_matches('/');
    if rest.contains("://") || rest.contains('/') {
        return Err(bad());
    }
    let (host, port) = match rest.rsplit_once(':') {
        Some((h, p)) => (h, p.parse::<u16>().map_err(|_| bad())?),
        None => (rest, DEFAULT_PORT),
    };
    if host.is_empty() || port == 0 || host.contains(char::is_whitespace) {
        return Err(bad());
    }
    Ok((host.to_string(), port))
}

struct Shared {
    workers: Mutex<Vec<SubscriberWorker>>,
    counters: Arc<Counters>,
    failure: Mutex<Option<String>>,
    closing: AtomicBool,
    subacks: Mutex<u64>,
    suback_cv: Condvar,
}

/// MQTT 3.1.1 connection, QoS 0, no retained messages.
pub struct BrokerTransport {
    client: Client,
    clock: Arc<dyn Clock>,
    shared: Arc<Shared>,
    events: Mutex<Option<JoinHandle<()>>>,
    next_id: AtomicU64,
    depth: usize,
}

impl BrokerTransport {
    /// Connects, retrying with the configured backoff before giving up.
    pub fn connect(opts: &BrokerOptions, clock: Arc<dyn Clock>) -> Result<Self, TransportError> {
        let mut last_err = TransportError::NotConnected;
        for attempt in 0..=opts.retry_backoff.len() {
            if attempt > 0 {
                std::thread::sleep(opts.retry_backoff[attempt - 1]);
            }
            match try_connect(opts) {
                Ok((client, conn)) => return Ok(Self::start(client, conn, clock, opts.queue_depth)),
                Err(e @ TransportError::Refused(_)) => return Err(e),
                Err(e) => last_err = e,
            }
        }
        Err(last_err)
    }

    fn start(client: Client, mut conn: Connection, clock: Arc<dyn Clock>, depth: usize) -> Self {
        let shared = Arc::new(Shared {
            workers: Mutex::new(Vec::new()),
            counters: Arc::new(Counters::default()),
            failure: Mutex::new(None),
            closing: AtomicBool::new(false),
            subacks: Mutex::new(0),
            suback_cv: Condvar::new(),
        });
        let s = Arc::clone(&shared);
        let events = std::thread::Builder::new()
            .name("mqtt-events".into())
            .spawn(move || {
                for event in conn.iter() {
                    match event {
                        Ok(Event::Incoming(Packet::Publish(p))) => {
                            let msg = Message {
                                topic: p.topic.clone(),
                                payload: Arc::from(&p.payload[..]),
                            };
                            for w in s.workers.lock().unwrap().iter().filter(|w| w.topic == msg.topic) {
                                if !w.offer(msg.clone()) {
                                    s.counters.overflow.fetch_add(1, Ordering::Relaxed);
                                }
                            }
                        }
                        Ok(Event::Incoming(Packet::SubAck(_))) => {
                            *s.subacks.lock().unwrap() += 1;
                            s.suback_cv.notify_all();
                        }
                        Ok(_) => {}
                        Err(e) => {
                            if !s.closing.load(Ordering::Acquire) {
                                *s.failure.lock().unwrap() = Some(e.to_string());
                            }
                            s.suback_cv.notify_all();
                            break;
                        }
                    }
                }
            })
            .expect("spawn mqtt event thread");
        Self {
            client,
            clock,
            shared,
            events: Mutex::new(Some(events)),
            next_id: AtomicU64::new(0),
            depth,
        }
    }

    /// Set when the connection dropped mid-run.
    pub fn failure(&self) -> Option<String> {
        self.shared.failure.lock().unwrap().clone()
    }

    pub fn disconnect(&self) {
        self.shared.closing.store(true, Ordering::Release);
        let _ = self.client.try_disconnect();
        if let Some(t) = self.events.lock().unwrap().take() {
            let _ = t.join();
        }
        self.shared.workers.lock().unwrap().clear();
    }

    fn check_alive(&self) -> Result<(), TransportError> {
        match self.failure() {
            Some(e) => Err(TransportError::ConnectionLost(e)),
            None if self.shared.closing.load(Ordering::Acquire) => Err(TransportError::NotConnected),
            None => Ok(()),
        }
    }
}

impl Drop for BrokerTransport {
    fn drop(&mut self) {
        self.disconnect();
    }
}

fn try_connect(opts: &BrokerOptions) -> Result<(Client, Connection), TransportError> {
    let mut mqtt = MqttOptions::new(opts.client_id.clone(), opts.host.clone(), opts.port);
    mqtt.set_keep_alive(opts.keep_alive).set_clean_session(true);
    let (client, mut conn) = Client::new(mqtt, opts.queue_depth);
    loop {
        match conn.recv_timeout(CONNACK_TIMEOUT) {
            Ok(Ok(Event::Incoming(Packet::ConnAck(ack)))) => {
                return if ack.code == ConnectReturnCode::Success {
                    Ok((client, conn))
                } else {
                    Err(TransportError::Refused(format!("{:?}", ack.code)))
                };
            }
            Ok(Ok(_)) => continue,
            Ok(Err(ConnectionError::ConnectionRefused(code))) => {
                return Err(TransportError::Refused(format!("{code:?}")));
            }
            Ok(Err(e)) => return Err(TransportError::ConnectionLost(e.to_string())),
            Err(_) => return Err(TransportError::ConnectionLost("no CONNACK from broker".into())),
        }
    }
}

impl Transport for BrokerTransport {
    fn publish(&self, topic: &str, payload: &[u8]) -> Result<f64, TransportError> {
        validate_topic(topic).map_err(|_| TransportError::InvalidTopic(topic.to_string()))?;
        self.check_alive()?;
        let now = self.clock.now_ms();
        match self.client.try_publish(topic, QoS::AtMostOnce, false, payload.to_vec()) {
            Ok(()) => {
                self.shared.counters.published.fetch_add(1, Ordering::Relaxed);
                Ok(now)
            }
            Err(ClientError::TryRequest(_)) | Err(ClientError::Request(_)) => {
                self.shared.counters.overflow.fetch_add(1, Ordering::Relaxed);
                Err(TransportError::QueueFull)
            }
        }
    }

    fn subscribe(&self, topic: &str, handler: Handler) -> Result<Subscription, TransportError> {
        validate_topic(topic).map_err(|_| TransportError::InvalidTopic(topic.to_string()))?;
        self.check_alive()?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let worker = SubscriberWorker::spawn(topic, handler, self.depth, Arc::clone(&self.shared.counters));
        self.shared.workers.lock().unwrap().push(worker);

        let before = *self.shared.subacks.lock().unwrap();
        self.client
            .subscribe(topic, QoS::AtMostOnce)
            .map_err(|_| TransportError::NotConnected)?;
        let guard = self.shared.subacks.lock().unwrap();
        let (guard, timeout) = self
            .shared
            .suback_cv
            .wait_timeout_while(guard, SUBACK_TIMEOUT, |n| {
                *n == before && self.shared.failure.lock().unwrap().is_none()
            })
            .unwrap();
        drop(guard);
        self.check_alive()?;
        if timeout.timed_out() {
            return Err(TransportError::ConnectionLost("no SUBACK from broker".into()));
        }
        Ok(Subscription {
            id,
            topic: topic.to_string(),
        })
    }

    fn stats(&self) -> TransportStats {
        self.shared.counters.snapshot()
    }
}
