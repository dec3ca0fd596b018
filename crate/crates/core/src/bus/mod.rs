//! Topic-based publish/subscribe transport.
//!
//! Topics are dot-separated lowercase paths (`capture.frames`). A
//! subscription names a topic prefix and receives every later message whose
//! topic equals the prefix or extends it by whole segments. Each subscriber
//! owns a bounded queue; when it is full the oldest message is dropped and
//! counted, so a slow reader never pushes back on a publisher.
//!
//! [`Bus`] is the in-process broker. [`tcp`] carries the same semantics over
//! TCP using the framing in [`wire`].

pub mod tcp;
pub mod wire;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControlEvent;
use crate::frame::{CaptureFrame, RobotFrame};
use crate::playback::LipsyncFrame;
use crate::telemetry::{Telemetry, TelemetrySample};

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
pub const DEFAULT_BUS_PORT: u16 = 7010;

pub mod topics {
    pub const CAPTURE_FRAMES: &str = "capture.frames";
    pub const BEHAVIOR_FRAMES: &str = "behavior.frames";
    pub const LIPSYNC_FRAMES: &str = "lipsync.frames";
    pub const BEHAVIOR_SET: &str = "control.behavior.set";
    pub const PLAYBACK_COMMANDS: &str = "control.playback.command";
    pub const PLAYBACK_EVENTS: &str = "control.playback.events";
    pub const SESSION_EVENTS: &str = "control.session.events";
    pub const TELEMETRY: &str = "telemetry";
    pub const SUBSCRIBE: &str = "bus.subscribe";
}

#[derive(Debug, Error)]
pub enum BusError {
    #[error("invalid topic `{0}`")]
    InvalidTopic(String),
    #[error("invalid subscription pattern `{0}`")]
    InvalidPattern(String),
    #[error("topic `{topic}` carries `{expected}` payloads, got `{got}`")]
    SchemaMismatch {
        topic: String,
        expected: SchemaKind,
        got: SchemaKind,
    },
    #[error("codec: {0}")]
    Codec(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("transport closed")]
    Closed,
}

/// Schema tag carried in the `kind` field on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaKind {
    CaptureFrame,
    RobotFrame,
    LipsyncFrame,
    ControlEvent,
    TelemetrySample,
    Subscribe,
}

impl std::fmt::Display for SchemaKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SchemaKind::CaptureFrame => "capture_frame",
            SchemaKind::RobotFrame => "robot_frame",
            SchemaKind::LipsyncFrame => "lipsync_frame",
            SchemaKind::ControlEvent => "control_event",
            SchemaKind::TelemetrySample => "telemetry_sample",
            SchemaKind::Subscribe => "subscribe",
        };
        f.write_str(s)
    }
}

/// Request sent by a remote subscriber; echoed back as an acknowledgement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscribeRequest {
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Payload {
    CaptureFrame(CaptureFrame),
    RobotFrame(RobotFrame),
    LipsyncFrame(LipsyncFrame),
    ControlEvent(ControlEvent),
    TelemetrySample(TelemetrySample),
    Subscribe(SubscribeRequest),
}

impl Payload {
    pub fn kind(&self) -> SchemaKind {
        match self {
            Payload::CaptureFrame(_) => SchemaKind::CaptureFrame,
            Payload::RobotFrame(_) => SchemaKind::RobotFrame,
            Payload::LipsyncFrame(_) => SchemaKind::LipsyncFrame,
            Payload::ControlEvent(_) => SchemaKind::ControlEvent,
            Payload::TelemetrySample(_) => SchemaKind::TelemetrySample,
            Payload::Subscribe(_) => SchemaKind::Subscribe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusMessage {
    pub topic: String,
    pub t: i64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl BusMessage {
    pub fn new(topic: &str, t: i64, payload: Payload) -> Result<Self, BusError> {
        let msg = Self {
            topic: topic.to_string(),
            t,
            payload,
        };
        msg.check_topic()?;
        Ok(msg)
    }

    pub(crate) fn check_topic(&self) -> Result<(), BusError> {
        if is_valid_topic(&self.topic) {
            Ok(())
        } else {
            Err(BusError::InvalidTopic(self.topic.clone()))
        }
    }
}

/// `[a-z]+(\.[a-z_]+)*`
pub fn is_valid_topic(topic: &str) -> bool {
    let mut segments = topic.split('.');
    let first_ok = segments
        .next()
        .is_some_and(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase()));
    first_ok && segments.all(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_'))
}

/// Normalize a subscription pattern: `""` and `"*"` match everything, a
/// trailing `.*` is the same as the bare prefix.
fn normalize_pattern(pattern: &str) -> Result<String, BusError> {
    let p = pattern.strip_suffix(".*").unwrap_or(pattern);
    if p.is_empty() || p == "*" {
        return Ok(String::new());
    }
    if is_valid_topic(p) {
        Ok(p.to_string())
    } else {
        Err(BusError::InvalidPattern(pattern.to_string()))
    }
}

/// Segment-wise prefix match.
pub fn pattern_matches(prefix: &str, topic: &str) -> bool {
    prefix.is_empty()
        || topic == prefix
        || (topic.starts_with(prefix) && topic.as_bytes().get(prefix.len()) == Some(&b'.'))
}

/// Topic prefix → payload schema. The longest registered prefix wins;
/// unregistered topics accept any payload.
#[derive(Debug, Clone)]
pub struct SchemaRegistry {
    entries: Vec<(String, SchemaKind)>,
}

impl Default for SchemaRegistry {
    fn default() -> Self {
        let mut r = Self { entries: Vec::new() };
        r.register(topics::CAPTURE_FRAMES, SchemaKind::CaptureFrame);
        r.register(topics::BEHAVIOR_FRAMES, SchemaKind::RobotFrame);
        r.register(topics::LIPSYNC_FRAMES, SchemaKind::LipsyncFrame);
        r.register("control", SchemaKind::ControlEvent);
        r.register(topics::TELEMETRY, SchemaKind::TelemetrySample);
        r.register("bus", SchemaKind::Subscribe);
        r
    }
}

impl SchemaRegistry {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn register(&mut self, prefix: &str, kind: SchemaKind) {
        self.entries.retain(|(p, _)| p != prefix);
        self.entries.push((prefix.to_string(), kind));
    }

    pub fn lookup(&self, topic: &str) -> Option<SchemaKind> {
        self.entries
            .iter()
            .filter(|(p, _)| pattern_matches(p, topic))
            .max_by_key(|(p, _)| p.len())
            .map(|(_, k)| *k)
    }

    pub fn check(&self, msg: &BusMessage) -> Result<(), BusError> {
        match self.lookup(&msg.topic) {
            Some(expected) if expected != msg.payload.kind() => Err(BusError::SchemaMismatch {
                topic: msg.topic.clone(),
                expected,
                got: msg.payload.kind(),
            }),
            _ => Ok(()),
        }
    }
}

/// Bounded drop-oldest queue behind one [`Subscription`].
#[derive(Debug)]
pub(crate) struct MessageQueue {
    prefix: String,
    capacity: usize,
    items: Mutex<VecDeque<BusMessage>>,
    ready: Condvar,
    dropped: AtomicU64,
    closed: AtomicBool,
    telemetry: Option<Arc<Telemetry>>,
}

impl MessageQueue {
    pub(crate) fn new(prefix: String, capacity: usize, telemetry: Option<Arc<Telemetry>>) -> Self {
        Self {
            prefix,
            capacity: capacity.max(1),
            items: Mutex::new(VecDeque::with_capacity(capacity.min(4096))),
            ready: Condvar::new(),
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
            telemetry,
        }
    }

    pub(crate) fn push(&self, msg: BusMessage) {
        let mut items = self.items.lock().unwrap();
        if items.len() >= self.capacity {
            items.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
            if let Some(t) = &self.telemetry {
                t.incr("bus.dropped");
            }
        }
        items.push_back(msg);
        drop(items);
        self.ready.notify_one();
    }

    pub(crate) fn pop_timeout(&self, timeout: Duration) -> Option<BusMessage> {
        let deadline = Instant::now() + timeout;
        let mut items = self.items.lock().unwrap();
        loop {
            if let Some(m) = items.pop_front() {
                return Some(m);
            }
            if self.closed.load(Ordering::Acquire) {
                return None;
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            items = self.ready.wait_timeout(items, deadline - now).unwrap().0;
        }
    }

    pub(crate) fn close(&self) {
        self.closed.store(true, Ordering::Release);
        self.ready.notify_all();
    }

    pub(crate) fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Acquire)
    }
}

/// Receiving end of a subscription. Dropping it unsubscribes.
#[derive(Debug)]
pub struct Subscription {
    queue: Arc<MessageQueue>,
}

impl Subscription {
    pub(crate) fn from_queue(queue: Arc<MessageQueue>) -> Self {
        Self { queue }
    }

    pub fn pattern(&self) -> &str {
        &self.queue.prefix
    }

    pub fn capacity(&self) -> usize {
        self.queue.capacity
    }

    pub fn try_recv(&self) -> Option<BusMessage> {
        self.queue.items.lock().unwrap().pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<BusMessage> {
        self.queue.pop_timeout(timeout)
    }

    /// Everything queued right now, oldest first.
    pub fn drain(&self) -> Vec<BusMessage> {
        self.queue.items.lock().unwrap().drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.items.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Messages discarded by the drop-oldest policy on this subscription.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }

    /// True once the remote end (if any) has gone away.
    pub fn is_closed(&self) -> bool {
        self.queue.is_closed()
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.queue.close();
    }
}

/// Anything that can publish and subscribe: the in-process [`Bus`] or a
/// [`tcp::RemoteBus`].
pub trait Transport: Send + Sync {
    fn publish_message(&self, msg: BusMessage) -> Result<(), BusError>;

    fn subscribe(&self, pattern: &str) -> Result<Subscription, BusError>;

    fn publish(&self, topic: &str, t: i64, payload: Payload) -> Result<(), BusError> {
        self.publish_message(BusMessage::new(topic, t, payload)?)
    }
}

struct BusInner {
    subscribers: Mutex<Vec<Weak<MessageQueue>>>,
    registry: SchemaRegistry,
    capacity: usize,
    telemetry: Arc<Telemetry>,
}

/// In-process broker. Cheap to clone; clones share the same subscribers.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<BusInner>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::with_options(SchemaRegistry::default(), DEFAULT_QUEUE_CAPACITY, Arc::new(Telemetry::new()))
    }

    pub fn with_options(registry: SchemaRegistry, capacity: usize, telemetry: Arc<Telemetry>) -> Self {
        Self {
            inner: Arc::new(BusInner {
                subscribers: Mutex::new(Vec::new()),
                registry,
                capacity,
                telemetry,
            }),
        }
    }

    pub fn telemetry(&self) -> &Arc<Telemetry> {
        &self.inner.telemetry
    }

    pub fn subscribe_with_capacity(&self, pattern: &str, capacity: usize) -> Result<Subscription, BusError> {
        let prefix = normalize_pattern(pattern)?;
        let queue = Arc::new(MessageQueue::new(prefix, capacity, Some(self.inner.telemetry.clone())));
        self.inner.subscribers.lock().unwrap().push(Arc::downgrade(&queue));
        Ok(Subscription::from_queue(queue))
    }

    pub fn subscriber_count(&self) -> usize {
        let mut subs = self.inner.subscribers.lock().unwrap();
        subs.retain(|w| w.upgrade().is_some_and(|q| !q.is_closed()));
        subs.len()
    }
}

impl Transport for Bus {
    fn publish_message(&self, msg: BusMessage) -> Result<(), BusError> {
        msg.check_topic()?;
        self.inner.registry.check(&msg)?;
        let mut subs = self.inner.subscribers.lock().unwrap();
        subs.retain(|w| {
            let Some(q) = w.upgrade() else { return false };
            if q.is_closed() {
                return false;
            }
            if pattern_matches(&q.prefix, &msg.topic) {
                q.push(msg.clone());
            }
            true
        });
        Ok(())
    }

    fn subscribe(&self, pattern: &str) -> Result<Subscription, BusError> {
        self.subscribe_with_capacity(pattern, self.inner.capacity)
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn publish_message(&self, msg: BusMessage) -> Result<(), BusError> {
        (**self).publish_message(msg)
    }

    fn subscribe(&self, pattern: &str) -> Result<Subscription, BusError> {
        (**self).subscribe(pattern)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::CaptureFrame;
    use proptest::prelude::*;

    fn frame(i: u64) -> Payload {
        Payload::CaptureFrame(CaptureFrame::neutral(i as i64, i))
    }

    fn seq_of(m: &BusMessage) -> u64 {
        match &m.payload {
            Payload::CaptureFrame(f) => f.seq,
            _ => panic!("unexpected payload"),
        }
    }

    #[test]
    fn topic_grammar() {
        for ok in ["capture", "capture.frames", "control.behavior.set", "a.b_c"] {
            assert!(is_valid_topic(ok), "{ok}");
        }
        for bad in ["", "Capture", "capture.", ".x", "a_b", "capture..frames", "a.b1", "a b"] {
            assert!(!is_valid_topic(bad), "{bad}");
        }
    }

    #[test]
    fn single_subscriber_receives_in_order() {
        let bus = Bus::new();
        let sub = bus.subscribe("capture.frames").unwrap();
        for i in 0..5 {
            bus.publish("capture.frames", i as i64, frame(i)).unwrap();
        }
        let got: Vec<u64> = sub.drain().iter().map(seq_of).collect();
        assert_eq!(got, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn publish_without_subscribers_is_ok() {
        let bus = Bus::new();
        bus.publish("capture.frames", 0, frame(0)).unwrap();
    }

    #[test]
    fn prefix_matching() {
        let bus = Bus::new();
        let capture = bus.subscribe("capture").unwrap();
        let frames_only = bus.subscribe("capture.frames").unwrap();
        let everything = bus.subscribe("").unwrap();
        let lookalike = bus.subscribe("capture.frame").unwrap();
        bus.publish("capture.frames", 0, frame(0)).unwrap();
        bus.publish(
            "behavior.frames",
            0,
            Payload::RobotFrame(crate::frame::RobotFrame::neutral(0)),
        )
        .unwrap();
        assert_eq!(capture.len(), 1);
        assert_eq!(frames_only.len(), 1);
        assert_eq!(everything.len(), 2);
        assert_eq!(lookalike.len(), 0);
    }

    #[test]
    fn wildcard_suffix_is_prefix() {
        let bus = Bus::new();
        let sub = bus.subscribe("control.playback.*").unwrap();
        assert_eq!(sub.pattern(), "control.playback");
        assert!(bus.subscribe("Bad").is_err());
    }

    #[test]
    fn fan_out_to_two() {
        let bus = Bus::new();
        let a = bus.subscribe("capture").unwrap();
        let b = bus.subscribe("capture").unwrap();
        bus.publish("capture.frames", 0, frame(7)).unwrap();
        assert_eq!(a.drain().len(), 1);
        assert_eq!(b.drain().len(), 1);
    }

    #[test]
    fn no_replay_for_late_subscribers() {
        let bus = Bus::new();
        bus.publish("capture.frames", 0, frame(0)).unwrap();
        let sub = bus.subscribe("capture").unwrap();
        assert!(sub.is_empty());
    }

    #[test]
    fn stalled_consumer_keeps_most_recent() {
        let bus = Bus::new();
        let sub = bus.subscribe("capture.frames").unwrap();
        for i in 0..10_000u64 {
            bus.publish("capture.frames", i as i64, frame(i)).unwrap();
        }
        assert_eq!(sub.dropped(), 8976);
        assert_eq!(bus.telemetry().count("bus.dropped"), 8976);
        let got: Vec<u64> = sub.drain().iter().map(seq_of).collect();
        assert_eq!(got.len(), 1024);
        assert_eq!(got[0], 10_000 - 1024);
        assert_eq!(*got.last().unwrap(), 9_999);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let bus = Bus::new();
        let err = bus
            .publish("capture.frames", 0, Payload::RobotFrame(crate::frame::RobotFrame::neutral(0)))
            .unwrap_err();
        assert!(matches!(err, BusError::SchemaMismatch { .. }));
        assert!(matches!(
            bus.publish("Capture", 0, frame(0)),
            Err(BusError::InvalidTopic(_))
        ));
        // unregistered topics accept anything
        bus.publish("scratch.pad", 0, frame(0)).unwrap();
    }

    #[test]
    fn dropped_subscription_is_pruned() {
        let bus = Bus::new();
        let sub = bus.subscribe("capture").unwrap();
        assert_eq!(bus.subscriber_count(), 1);
        drop(sub);
        bus.publish("capture.frames", 0, frame(0)).unwrap();
        assert_eq!(bus.subscriber_count(), 0);
    }

    #[test]
    fn blocking_recv_across_threads() {
        let bus = Bus::new();
        let sub = bus.subscribe("capture").unwrap();
        let publisher = bus.clone();
        let h = std::thread::spawn(move || {
            for i in 0..100 {
                publisher.publish("capture.frames", i, frame(i as u64)).unwrap();
            }
        });
        let mut got = Vec::new();
        while got.len() < 100 {
            if let Some(m) = sub.recv_timeout(Duration::from_secs(2)) {
                got.push(seq_of(&m));
            } else {
                break;
            }
        }
        h.join().unwrap();
        assert_eq!(got, (0..100).collect::<Vec<_>>());
    }

    proptest! {
        // FIFO per publisher, no duplication, and loss fully accounted for.
        #[test]
        fn order_and_accounting(n in 0usize..3000, cap in 1usize..600) {
            let bus = Bus::new();
            let sub = bus.subscribe_with_capacity("capture", cap).unwrap();
            for i in 0..n as u64 {
                bus.publish("capture.frames", i as i64, frame(i)).unwrap();
            }
            let got: Vec<u64> = sub.drain().iter().map(seq_of).collect();
            prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(got.len() as u64 + sub.dropped(), n as u64);
            prop_assert_eq!(got.len(), n.min(cap));
        }
    }
}
