//! Capture-source listener. Sources are served one at a time; each sends
//! newline-delimited records.

use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};

use super::{Gateway, GatewayError};
use crate::bus::Transport;
use crate::clock::Clock;

/// Read records from `reader` until end of stream. Returns the number of
/// frames published.
pub fn pump<R: BufRead>(
    reader: R,
    gateway: &mut Gateway,
    bus: &dyn Transport,
    clock: &dyn Clock,
) -> Result<u64, GatewayError> {
    let mut published = 0;
    for line in reader.split(b'\n') {
        let line = line?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match gateway.ingest_and_publish(&line, bus, clock.now_ms()) {
            Ok(_) => published += 1,
            Err(GatewayError::Bus(e)) => return Err(e.into()),
            Err(e) => log::debug!("skipped capture record: {e}"),
        }
    }
    Ok(published)
}

/// Accept capture sources until `stop` is set.
pub fn serve(
    listener: TcpListener,
    gateway: &mut Gateway,
    bus: &dyn Transport,
    clock: &dyn Clock,
    stop: &AtomicBool,
) -> Result<(), GatewayError> {
    listener.set_nonblocking(true)?;
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                stream.set_nonblocking(false)?;
                log::info!("capture source connected: {peer}");
                let n = pump(BufReader::new(stream), gateway, bus, clock)?;
                log::info!("capture source {peer} closed after {n} frames");
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(std::time::Duration::from_millis(10))
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::Bus;
    use crate::clock::SimClock;
    use crate::gateway::RawRecord;
    use crate::telemetry::Telemetry;
    use std::sync::Arc;

    #[test]
    fn pump_skips_bad_lines() {
        let bus = Bus::new();
        let sub = bus.subscribe("capture").unwrap();
        let mut gw = Gateway::canonical(Arc::new(Telemetry::new()));
        let good = |t: i64, seq: u64| {
            RawRecord {
                t,
                seq,
                bs: Default::default(),
                rot: [0.0; 3],
            }
            .to_line()
        };
        let input = format!("{}garbage\n\n{}{}", good(10, 1), good(5, 2), good(30, 3));
        let clock = SimClock::new(0);
        let n = pump(input.as_bytes(), &mut gw, &bus, clock.as_ref()).unwrap();
        assert_eq!(n, 2);
        assert_eq!(sub.len(), 2);
        assert_eq!(gw.telemetry().count("gateway.parse_errors"), 1);
        assert_eq!(gw.telemetry().count("gateway.out_of_order"), 1);
    }
}
