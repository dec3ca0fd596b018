use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::frame::{BlendshapeCommand, ServoCommand};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RobotCommand {
    Servo(ServoCommand),
    Blendshape(BlendshapeCommand),
}

impl RobotCommand {
    pub fn t(&self) -> i64 {
        match self {
            RobotCommand::Servo(c) => c.t,
            RobotCommand::Blendshape(c) => c.t,
        }
    }
}

/// One line of a command log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedCommand {
    pub emit_t: i64,
    #[serde(flatten)]
    pub command: RobotCommand,
}

/// Receives commands in emission order.
pub trait RobotSink: Send {
    fn send(&mut self, cmd: &RobotCommand) -> std::io::Result<()>;
}

/// In-memory log stamped with receive time.
#[derive(Clone)]
pub struct SimSink {
    clock: Arc<dyn Clock>,
    log: Arc<Mutex<Vec<LoggedCommand>>>,
}

impl SimSink {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            log: Arc::default(),
        }
    }

    pub fn commands(&self) -> Vec<LoggedCommand> {
        self.log.lock().expect("sink log").clone()
    }

    pub fn len(&self) -> usize {
        self.log.lock().expect("sink log").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RobotSink for SimSink {
    fn send(&mut self, cmd: &RobotCommand) -> std::io::Result<()> {
        let emit_t = self.clock.now_ms();
        self.log.lock().expect("sink log").push(LoggedCommand {
            emit_t,
            command: cmd.clone(),
        });
        Ok(())
    }
}

/// JSON-lines writer; used for the record file and the network sink.
pub struct LineSink<W: Write + Send> {
    out: W,
    clock: Arc<dyn Clock>,
}

impl<W: Write + Send> LineSink<W> {
    pub fn new(out: W, clock: Arc<dyn Clock>) -> Self {
        Self { out, clock }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write + Send> RobotSink for LineSink<W> {
    fn send(&mut self, cmd: &RobotCommand) -> std::io::Result<()> {
        let line = LoggedCommand {
            emit_t: self.clock.now_ms(),
            command: cmd.clone(),
        };
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")?;
        if matches!(cmd, RobotCommand::Blendshape(_)) {
            self.out.flush()?;
        }
        Ok(())
    }
}

pub fn record_sink(path: &Path, clock: Arc<dyn Clock>) -> std::io::Result<LineSink<std::io::BufWriter<std::fs::File>>> {
    Ok(LineSink::new(std::io::BufWriter::new(std::fs::File::create(path)?), clock))
}

pub fn net_sink(addr: impl ToSocketAddrs, clock: Arc<dyn Clock>) -> std::io::Result<LineSink<TcpStream>> {
    let s = TcpStream::connect(addr)?;
    s.set_nodelay(true)?;
    Ok(LineSink::new(s, clock))
}

/// Logs commands at debug level only.
pub struct LogSink;

impl RobotSink for LogSink {
    fn send(&mut self, cmd: &RobotCommand) -> std::io::Result<()> {
        log::debug!("{}", serde_json::to_string(cmd).unwrap_or_default());
        Ok(())
    }
}

/// Parse a record-sink file.
pub fn read_command_log(text: &str) -> Result<Vec<LoggedCommand>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
