//! In-process publish/subscribe broker with per-topic retained messages.
//!
//! A single state mutex serializes publishes, which gives the ordering
//! contract for free: subscribers observe each publisher's messages in
//! publish order, per topic. Subscriber queues are bounded and never block
//! a publisher; overflow follows the configured policy (drop-oldest by
//! default) and drops are counted and exposed.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use super::topic::{Topic, TopicFilter};
use super::{validate_payload, MessageKind, TelemetryMessage, TransportError};

pub const DEFAULT_QUEUE_CAPACITY: usize = 4096;

/// What to do when a subscriber queue is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverflowPolicy {
    /// Evict the oldest queued message to make room (default).
    #[default]
    DropOldest,
    /// Drop the incoming message.
    DropNewest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishAck {
    /// Subscribers the message was enqueued for (drops included).
    pub subscribers: usize,
}

struct SubShared {
    filter: TopicFilter,
    capacity: usize,
    policy: OverflowPolicy,
    queue: Mutex<VecDeque<TelemetryMessage>>,
    ready: Condvar,
    closed: AtomicBool,
    dropped: AtomicU64,
}

impl SubShared {
    fn push(&self, msg: TelemetryMessage) {
        let mut q = self.queue.lock().unwrap();
        if q.len() >= self.capacity {
            match self.policy {
                OverflowPolicy::DropOldest => {
                    q.pop_front();
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                }
                OverflowPolicy::DropNewest => {
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                    return;
                }
            }
        }
        q.push_back(msg);
        drop(q);
        self.ready.notify_one();
    }
}

/// A subscription stream; consumed by exactly one consumer.
pub struct Subscription {
    shared: Arc<SubShared>,
}

impl Subscription {
    /// Blocks until a message arrives. Returns `None` once the
    /// subscription is closed and drained.
    pub fn recv(&self) -> Option<TelemetryMessage> {
        let mut q = self.shared.queue.lock().unwrap();
        loop {
            if let Some(msg) = q.pop_front() {
                return Some(msg);
            }
            if self.shared.closed.load(Ordering::SeqCst) {
                return None;
            }
            q = self.shared.ready.wait(q).unwrap();
        }
    }

    pub fn try_recv(&self) -> Option<TelemetryMessage> {
        self.shared.queue.lock().unwrap().pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<TelemetryMessage> {
        let deadline = Instant::now() + timeout;
        let mut q = self.shared.queue.lock().unwrap();
        loop {
            if let Some(msg) = q.pop_front() {
                return Some(msg);
            }
            if self.shared.closed.load(Ordering::SeqCst) {
                return None;
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            let (guard, _timeout_result) = self
                .shared
                .ready
                .wait_timeout(q, deadline - now)
                .unwrap();
            q = guard;
        }
    }

    /// Messages dropped on this queue due to overflow.
    pub fn dropped(&self) -> u64 {
        self.shared.dropped.load(Ordering::Relaxed)
    }

    pub fn close(&self) {
        self.shared.closed.store(true, Ordering::SeqCst);
        self.shared.ready.notify_all();
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.close();
    }
}

struct TopicEntry {
    kind: MessageKind,
    retained: Option<TelemetryMessage>,
}

struct BrokerState {
    topics: HashMap<String, TopicEntry>,
    subs: Vec<Arc<SubShared>>,
}

/// Cheaply clonable handle to one broker instance.
#[derive(Clone)]
pub struct Broker {
    state: Arc<Mutex<BrokerState>>,
    default_capacity: usize,
    default_policy: OverflowPolicy,
}

impl Default for Broker {
    fn default() -> Self {
        Self::new()
    }
}

impl Broker {
    pub fn new() -> Self {
        Self::with_defaults(DEFAULT_QUEUE_CAPACITY, OverflowPolicy::default())
    }

    pub fn with_defaults(capacity: usize, policy: OverflowPolicy) -> Self {
        Broker {
            state: Arc::new(Mutex::new(BrokerState {
                topics: HashMap::new(),
                subs: Vec::new(),
            })),
            default_capacity: capacity.max(1),
            default_policy: policy,
        }
    }

    /// Registers a topic with its payload kind. Re-registration with the
    /// same kind is a no-op.
    pub fn register(&self, topic: &Topic, kind: MessageKind) -> Result<(), TransportError> {
        let mut state = self.state.lock().unwrap();
        match state.topics.get(topic.as_str()) {
            Some(entry) if entry.kind != kind => Err(TransportError::KindMismatch {
                topic: topic.as_str().to_string(),
                registered: entry.kind,
            }),
            Some(_) => Ok(()),
            None => {
                state.topics.insert(
                    topic.as_str().to_string(),
                    TopicEntry {
                        kind,
                        retained: None,
                    },
                );
                Ok(())
            }
        }
    }

    /// Publishes to all current subscribers of the topic and retains the
    /// message for `fetch`. Per-topic FIFO order per publisher holds
    /// because the whole operation runs under one lock.
    pub fn publish(&self, msg: TelemetryMessage) -> Result<PublishAck, TransportError> {
        let mut state = self.state.lock().unwrap();
        let entry = state
            .topics
            .get(msg.topic.as_str())
            .ok_or_else(|| TransportError::UnknownTopic(msg.topic.as_str().to_string()))?;
        if entry.kind != msg.kind {
            return Err(TransportError::SchemaViolation {
                kind: entry.kind,
                reason: format!("message kind {:?} does not match topic registration", msg.kind),
            });
        }
        validate_payload(msg.kind, &msg.payload)?;

        // Prune closed subscriptions opportunistically.
        state.subs.retain(|s| !s.closed.load(Ordering::SeqCst));

        let mut receivers = 0usize;
        for sub in &state.subs {
            if sub.filter.matches(&msg.topic) {
                sub.push(msg.clone());
                receivers += 1;
            }
        }
        state
            .topics
            .get_mut(msg.topic.as_str())
            .expect("entry exists")
            .retained = Some(msg);
        Ok(PublishAck {
            subscribers: receivers,
        })
    }

    /// Subscribes to all topics matching `filter`; yields messages
    /// published after this call.
    pub fn subscribe(&self, filter: &str) -> Result<Subscription, TransportError> {
        self.subscribe_with_capacity(filter, self.default_capacity)
    }

    pub fn subscribe_with_capacity(
        &self,
        filter: &str,
        capacity: usize,
    ) -> Result<Subscription, TransportError> {
        let filter = TopicFilter::parse(filter)?;
        let shared = Arc::new(SubShared {
            filter,
            capacity: capacity.max(1),
            policy: self.default_policy,
            queue: Mutex::new(VecDeque::new()),
            ready: Condvar::new(),
            closed: AtomicBool::new(false),
            dropped: AtomicU64::new(0),
        });
        self.state.lock().unwrap().subs.push(shared.clone());
        Ok(Subscription { shared })
    }

    /// Latest retained message on a topic, without consuming it.
    pub fn fetch(&self, topic: &Topic) -> Result<TelemetryMessage, TransportError> {
        let state = self.state.lock().unwrap();
        state
            .topics
            .get(topic.as_str())
            .ok_or_else(|| TransportError::UnknownTopic(topic.as_str().to_string()))?
            .retained
            .clone()
            .ok_or_else(|| TransportError::NotFound(topic.as_str().to_string()))
    }

    pub fn registered_kind(&self, topic: &Topic) -> Option<MessageKind> {
        self.state
            .lock()
            .unwrap()
            .topics
            .get(topic.as_str())
            .map(|e| e.kind)
    }
}
