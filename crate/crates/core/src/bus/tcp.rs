//! TCP transport for the bus.
//!
//! A [`BusServer`] fronts an in-process [`Bus`]. Clients send framed
//! messages to publish. To subscribe, a client opens a connection and sends a
//! `subscribe` frame on topic `bus.subscribe`; the server echoes it as an
//! acknowledgement and then forwards every matching message on that
//! connection. The server-side subscription queue applies the same
//! drop-oldest policy as in-process subscribers.

use std::io::{BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::wire::{read_message, write_message};
use super::{
    normalize_pattern, topics, Bus, BusError, BusMessage, MessageQueue, Payload, SubscribeRequest,
    Subscription, Transport, DEFAULT_QUEUE_CAPACITY,
};

const POLL: Duration = Duration::from_millis(50);

pub struct BusServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl BusServer {
    /// Bind and start accepting connections on a background thread.
    pub fn start<A: ToSocketAddrs>(addr: A, bus: Bus) -> Result<Self, BusError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let acceptor = thread::Builder::new()
            .name("bus-accept".into())
            .spawn(move || accept_loop(listener, bus, stop_flag))?;
        Ok(Self {
            addr,
            stop,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BusServer {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

fn accept_loop(listener: TcpListener, bus: Bus, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let bus = bus.clone();
                let stop = stop.clone();
                let _ = stream.set_nonblocking(false);
                let _ = thread::Builder::new()
                    .name(format!("bus-conn-{peer}"))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, bus, stop) {
                            log::debug!("bus connection {peer} ended: {e}");
                        }
                    });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("bus accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

fn serve_connection(stream: TcpStream, bus: Bus, stop: Arc<AtomicBool>) -> Result<(), BusError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    while let Some(msg) = read_message(&mut reader)? {
        if let Payload::Subscribe(req) = &msg.payload {
            let sub = bus.subscribe(&req.pattern)?;
            let mut writer = BufWriter::new(stream.try_clone()?);
            write_message(&mut writer, &msg)?;
            forward(sub, writer, &stop);
            let _ = stream.shutdown(Shutdown::Both);
            return Ok(());
        }
        if let Err(e) = bus.publish_message(msg) {
            log::warn!("rejected remote publish: {e}");
        }
    }
    Ok(())
}

fn forward(sub: Subscription, mut writer: BufWriter<TcpStream>, stop: &AtomicBool) {
    while !stop.load(Ordering::Acquire) {
        if let Some(m) = sub.recv_timeout(POLL) {
            if write_message(&mut writer, &m).is_err() {
                return;
            }
        }
    }
}

/// Client side of the TCP transport.
pub struct RemoteBus {
    addr: SocketAddr,
    outgoing: Arc<MessageQueue>,
    writer: Option<JoinHandle<()>>,
}

impl RemoteBus {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, BusError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let addr = stream.peer_addr()?;
        let outgoing = Arc::new(MessageQueue::new(String::new(), DEFAULT_QUEUE_CAPACITY, None));
        let queue = outgoing.clone();
        let writer = thread::Builder::new()
            .name("bus-publish".into())
            .spawn(move || {
                let mut w = BufWriter::new(stream);
                loop {
                    match queue.pop_timeout(POLL) {
                        Some(m) => {
                            if write_message(&mut w, &m).is_err() {
                                queue.close();
                                return;
                            }
                        }
                        None if queue.is_closed() => return,
                        None => {}
                    }
                }
            })?;
        Ok(Self {
            addr,
            outgoing,
            writer: Some(writer),
        })
    }

    /// Outgoing messages discarded because the connection could not keep up.
    pub fn dropped(&self) -> u64 {
        self.outgoing.dropped.load(Ordering::Relaxed)
    }

    /// Wait until everything queued so far has been handed to the socket.
    pub fn flush(&self, timeout: Duration) -> bool {
        let deadline = std::time::Instant::now() + timeout;
        while std::time::Instant::now() < deadline {
            if self.outgoing.items.lock().unwrap().is_empty() {
                return true;
            }
            thread::sleep(Duration::from_millis(1));
        }
        false
    }

    pub fn subscribe_with_capacity(&self, pattern: &str, capacity: usize) -> Result<Subscription, BusError> {
        let prefix = normalize_pattern(pattern)?;
        let stream = TcpStream::connect(self.addr)?;
        stream.set_nodelay(true)?;
        let mut w = BufWriter::new(stream.try_clone()?);
        let req = BusMessage::new(
            topics::SUBSCRIBE,
            0,
            Payload::Subscribe(SubscribeRequest {
                pattern: pattern.to_string(),
            }),
        )?;
        write_message(&mut w, &req)?;
        let mut reader = BufReader::new(stream);
        match read_message(&mut reader)? {
            Some(BusMessage {
                payload: Payload::Subscribe(_),
                ..
            }) => {}
            _ => return Err(BusError::Closed),
        }
        let queue = Arc::new(MessageQueue::new(prefix, capacity, None));
        let q = Arc::downgrade(&queue);
        thread::Builder::new().name("bus-subscribe".into()).spawn(move || loop {
            let next = read_message(&mut reader);
            let Some(q) = q.upgrade() else {
                let _ = reader.get_ref().shutdown(Shutdown::Both);
                return;
            };
            match next {
                Ok(Some(m)) => q.push(m),
                _ => {
                    q.close();
                    return;
                }
            }
        })?;
        Ok(Subscription::from_queue(queue))
    }
}

impl Transport for RemoteBus {
    fn publish_message(&self, msg: BusMessage) -> Result<(), BusError> {
        msg.check_topic()?;
        if self.outgoing.is_closed() {
            return Err(BusError::Closed);
        }
        self.outgoing.push(msg);
        Ok(())
    }

    fn subscribe(&self, pattern: &str) -> Result<Subscription, BusError> {
        self.subscribe_with_capacity(pattern, DEFAULT_QUEUE_CAPACITY)
    }
}

impl Drop for RemoteBus {
    fn drop(&mut self) {
        self.flush(Duration::from_millis(500));
        self.outgoing.close();
        if let Some(h) = self.writer.take() {
            let _ = h.join();
        }
    }
}
