//! Named counters and gauges shared across services.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// One telemetry reading as published on `telemetry.*` topics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Default)]
pub struct Telemetry {
    counters: Mutex<BTreeMap<String, u64>>,
    gauges: Mutex<BTreeMap<String, f64>>,
}

impl Telemetry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn incr(&self, name: &str) {
        self.add(name, 1);
    }

    pub fn add(&self, name: &str, n: u64) {
        let mut c = self.counters.lock().unwrap();
        *c.entry(name.to_string()).or_insert(0) += n;
    }

    pub fn count(&self, name: &str) -> u64 {
        self.counters.lock().unwrap().get(name).copied().unwrap_or(0)
    }

    pub fn set_gauge(&self, name: &str, value: f64) {
        self.gauges.lock().unwrap().insert(name.to_string(), value);
    }

    pub fn gauge(&self, name: &str) -> Option<f64> {
        self.gauges.lock().unwrap().get(name).copied()
    }

    pub fn counters(&self) -> BTreeMap<String, u64> {
        self.counters.lock().unwrap().clone()
    }

    /// All counters and gauges, sorted by name.
    pub fn snapshot(&self) -> Vec<TelemetrySample> {
        let mut out: Vec<TelemetrySample> = self
            .counters
            .lock()
            .unwrap()
            .iter()
            .map(|(k, v)| TelemetrySample {
                name: k.clone(),
                value: *v as f64,
            })
            .collect();
        out.extend(self.gauges.lock().unwrap().iter().map(|(k, v)| TelemetrySample {
            name: k.clone(),
            value: *v,
        }));
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counters_accumulate() {
        let t = Telemetry::new();
        t.incr("bus.dropped");
        t.add("bus.dropped", 4);
        assert_eq!(t.count("bus.dropped"), 5);
        assert_eq!(t.count("nope"), 0);
        t.set_gauge("render.fps", 125.0);
        let snap = t.snapshot();
        assert_eq!(snap.len(), 2);
        assert_eq!(snap[0].name, "bus.dropped");
    }
}
