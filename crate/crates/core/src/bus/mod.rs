//! In-process pub-sub bus carrying timestamped messages between simulated
//! devices, the translation layer, the recorder and the inference loop.
//!
//! Delivery is exactly-once and FIFO per topic for in-process subscribers.
//! Each subscriber owns a bounded queue; on overflow the oldest message is
//! dropped and counted against its topic. [`tcp`] carries the same messages
//! between processes with at-least-once semantics.

mod topic;
pub mod tcp;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::time::{Duration, Instant};

use thiserror::Error;

pub use topic::{Topic, TopicPattern};

pub const DEFAULT_QUEUE_CAPACITY: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("invalid topic {0:?}")]
    InvalidTopic(String),
    #[error("invalid subscription pattern {0:?}")]
    InvalidPattern(String),
    #[error("timestamp regression from source {source_id:?}: {t_ns} < {last_t_ns}")]
    TimestampRegression { source_id: String, t_ns: i64, last_t_ns: i64 },
    #[error("bus closed")]
    BusClosed,
}

/// A native (pre-translation) message as it travels on the bus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMessage {
    pub topic: Topic,
    pub source_id: String,
    pub seq: u64,
    pub t_ns: i64,
    pub payload: Vec<u8>,
}

struct QueueState {
    items: VecDeque<(Instant, RawMessage)>,
    dropped: BTreeMap<Topic, u64>,
    closed: bool,
}

struct Queue {
    state: Mutex<QueueState>,
    ready: Condvar,
    capacity: usize,
}

impl Queue {
    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn push(&self, msg: RawMessage) {
        let mut q = self.lock();
        if q.closed {
            return;
        }
        if q.items.len() >= self.capacity {
            if let Some((_, old)) = q.items.pop_front() {
                *q.dropped.entry(old.topic).or_default() += 1;
            }
        }
        q.items.push_back((Instant::now(), msg));
        drop(q);
        self.ready.notify_all();
    }

    fn close(&self) {
        self.lock().closed = true;
        self.ready.notify_all();
    }
}

#[derive(Default)]
struct BusState {
    closed: bool,
    next_sub_id: u64,
    subs: Vec<(u64, TopicPattern, Arc<Queue>)>,
    next_seq: HashMap<(Topic, String), u64>,
    last_t_ns: HashMap<String, i64>,
}

struct Inner {
    state: Mutex<BusState>,
}

impl Inner {
    fn lock(&self) -> MutexGuard<'_, BusState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Cheaply cloneable handle to a shared bus.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<Inner>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        Bus { inner: Arc::new(Inner { state: Mutex::new(BusState::default()) }) }
    }

    /// Publish a payload. The bus assigns the per-(topic, source) sequence number.
    pub fn publish(
        &self,
        topic: &Topic,
        source_id: &str,
        t_ns: i64,
        payload: Vec<u8>,
    ) -> Result<u64, BusError> {
        let mut st = self.inner.lock();
        if st.closed {
            return Err(BusError::BusClosed);
        }
        if let Some(&last) = st.last_t_ns.get(source_id) {
            if t_ns < last {
                return Err(BusError::TimestampRegression {
                    source_id: source_id.to_owned(),
                    t_ns,
                    last_t_ns: last,
                });
            }
        }
        st.last_t_ns.insert(source_id.to_owned(), t_ns);
        let counter = st.next_seq.entry((topic.clone(), source_id.to_owned())).or_insert(0);
        let seq = *counter;
        *counter += 1;
        let msg = RawMessage { topic: topic.clone(), source_id: source_id.to_owned(), seq, t_ns, payload };
        fan_out(&st, msg);
        Ok(seq)
    }

    /// Deliver a message whose sequence number was assigned upstream (TCP
    /// ingress, translation republish). No ordering checks are applied.
    pub fn deliver(&self, msg: RawMessage) -> Result<(), BusError> {
        let st = self.inner.lock();
        if st.closed {
            return Err(BusError::BusClosed);
        }
        fan_out(&st, msg);
        Ok(())
    }

    pub fn subscribe(&self, pattern: &str) -> Result<Subscription, BusError> {
        self.subscribe_with_capacity(pattern, DEFAULT_QUEUE_CAPACITY)
    }

    pub fn subscribe_with_capacity(
        &self,
        pattern: &str,
        capacity: usize,
    ) -> Result<Subscription, BusError> {
        let pattern = TopicPattern::new(pattern)?;
        let mut st = self.inner.lock();
        if st.closed {
            return Err(BusError::BusClosed);
        }
        let id = st.next_sub_id;
        st.next_sub_id += 1;
        let queue = Arc::new(Queue {
            state: Mutex::new(QueueState {
                items: VecDeque::new(),
                dropped: BTreeMap::new(),
                closed: false,
            }),
            ready: Condvar::new(),
            capacity: capacity.max(1),
        });
        st.subs.push((id, pattern.clone(), queue.clone()));
        Ok(Subscription { id, pattern, queue, bus: Arc::downgrade(&self.inner) })
    }

    /// Idempotent. Wakes every blocked subscriber.
    pub fn close(&self) {
        let mut st = self.inner.lock();
        st.closed = true;
        for (_, _, q) in st.subs.drain(..) {
            q.close();
        }
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().closed
    }
}

fn fan_out(st: &BusState, msg: RawMessage) {
    let targets: Vec<&Arc<Queue>> =
        st.subs.iter().filter(|(_, p, _)| p.matches(&msg.topic)).map(|(_, _, q)| q).collect();
    if let Some((last, rest)) = targets.split_last() {
        for q in rest {
            q.push(msg.clone());
        }
        last.push(msg);
    }
}

/// A live subscription. Dropping it unsubscribes.
pub struct Subscription {
    id: u64,
    pattern: TopicPattern,
    queue: Arc<Queue>,
    bus: Weak<Inner>,
}

impl Subscription {
    pub fn pattern(&self) -> &TopicPattern {
        &self.pattern
    }

    /// Wait until `deadline`, then return every message delivered before it.
    /// Returns early if the bus closes.
    pub fn drain(&self, deadline: Instant) -> Vec<RawMessage> {
        let mut q = self.queue.lock();
        loop {
            let now = Instant::now();
            if q.closed || now >= deadline {
                break;
            }
            q = self.queue.ready.wait_timeout(q, deadline - now).unwrap_or_else(|p| p.into_inner()).0;
        }
        let n = q.items.iter().take_while(|(at, _)| *at < deadline).count();
        q.items.drain(..n).map(|(_, m)| m).collect()
    }

    /// Everything currently queued, without waiting.
    pub fn drain_now(&self) -> Vec<RawMessage> {
        self.queue.lock().items.drain(..).map(|(_, m)| m).collect()
    }

    pub fn try_recv(&self) -> Option<RawMessage> {
        self.queue.lock().items.pop_front().map(|(_, m)| m)
    }

    /// Block up to `timeout` for the next message. `None` on timeout or bus shutdown.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<RawMessage> {
        let deadline = Instant::now() + timeout;
        let mut q = self.queue.lock();
        loop {
            if let Some((_, m)) = q.items.pop_front() {
                return Some(m);
            }
            let now = Instant::now();
            if q.closed || now >= deadline {
                return None;
            }
            q = self.queue.ready.wait_timeout(q, deadline - now).unwrap_or_else(|p| p.into_inner()).0;
        }
    }

    /// Messages discarded because the queue was full, by topic.
    pub fn dropped(&self) -> BTreeMap<Topic, u64> {
        self.queue.lock().dropped.clone()
    }

    pub fn is_closed(&self) -> bool {
        self.queue.lock().closed
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(inner) = self.bus.upgrade() {
            inner.lock().subs.retain(|(id, _, _)| *id != self.id);
        }
    }
}
