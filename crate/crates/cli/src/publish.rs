//! Periodic telemetry on the bus, so the harness can show live rates.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use gesture_relay::bus::topics;
use gesture_relay::telemetry::TelemetrySample;
use gesture_relay::{Clock, Payload, Telemetry, Transport};

pub const PUBLISH_PERIOD: Duration = Duration::from_millis(500);

/// Counter deltas over `secs`, as `<name>.rate` samples.
pub fn rates(prev: &BTreeMap<String, u64>, now: &BTreeMap<String, u64>, secs: f64) -> Vec<TelemetrySample> {
    if secs <= 0.0 {
        return Vec::new();
    }
    now.iter()
        .map(|(name, v)| TelemetrySample {
            name: format!("{name}.rate"),
            value: v.saturating_sub(prev.get(name).copied().unwrap_or(0)) as f64 / secs,
        })
        .collect()
}

/// Publish every sample plus counter rates each period until `stop`.
pub fn spawn_publisher(
    bus: Arc<dyn Transport>,
    telemetry: Arc<Telemetry>,
    clock: Arc<dyn Clock>,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name("telemetry".into())
        .spawn(move || {
            let mut prev = telemetry.counters();
            let mut last = Instant::now();
            while !stop.load(Ordering::Acquire) {
                std::thread::sleep(PUBLISH_PERIOD);
                let counters = telemetry.counters();
                let elapsed = last.elapsed().as_secs_f64();
                last = Instant::now();
                let now = clock.now_ms();
                for s in telemetry.snapshot().into_iter().chain(rates(&prev, &counters, elapsed)) {
                    if let Err(e) = bus.publish(topics::TELEMETRY, now, Payload::TelemetrySample(s)) {
                        log::warn!("telemetry publish failed: {e}");
                        return;
                    }
                }
                prev = counters;
            }
        })
        .expect("spawn telemetry thread")
}
