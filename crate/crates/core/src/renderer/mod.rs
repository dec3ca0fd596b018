//! Frame renderer: merges behavior and lipsync into a latest-state cell and
//! emits robot commands on a fixed clock.
//!
//! Servo commands go out every 8 ms (125 Hz) after FIR smoothing of the
//! rotation; blendshape commands on every fifth servo tick (25 Hz), unfiltered.
//! Upstream silence holds the last state.

mod fir;
mod sink;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use arc_swap::{ArcSwap, ArcSwapOption};
use serde::Serialize;

use crate::bus::{topics, BusError, BusMessage, Payload, Subscription, Transport};
use crate::clock::{Clock, SimClock};
use crate::frame::{default_lip_channels, BlendshapeCommand, FrameSource, RobotFrame, ServoCommand};
use crate::playback::LipsyncFrame;
use crate::telemetry::Telemetry;

pub use fir::{
    default_taps, design_lowpass, FilterError, FirFilter, RotationFilter, DEFAULT_CUTOFF_HZ, DEFAULT_TAPS,
    SERVO_RATE_HZ,
};
pub use sink::{
    net_sink, read_command_log, record_sink, LineSink, LogSink, LoggedCommand, RobotCommand, RobotSink, SimSink,
};

pub const SERVO_PERIOD_MS: i64 = 8;
pub const BLENDSHAPE_DIVIDER: u64 = 5;
pub const DEFAULT_STALENESS_MS: i64 = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct RendererConfig {
    pub fir_taps: Vec<f64>,
    pub lip_channels: Vec<String>,
    pub staleness_ms: i64,
}

impl Default for RendererConfig {
    fn default() -> Self {
        Self {
            fir_taps: default_taps(),
            lip_channels: default_lip_channels(),
            staleness_ms: DEFAULT_STALENESS_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipsyncStamp {
    pub frame: LipsyncFrame,
    pub received_at: i64,
}

/// Snapshot of the cell at one instant.
#[derive(Debug, Clone)]
pub struct RenderState {
    pub latest_behavior: Arc<RobotFrame>,
    pub latest_lipsync: Option<Arc<LipsyncStamp>>,
}

impl RenderState {
    pub fn lipsync_active(&self, now: i64, staleness_ms: i64) -> bool {
        self.latest_lipsync
            .as_ref()
            .is_some_and(|l| now - l.received_at <= staleness_ms)
    }
}

/// Last-value-wins cell. Writers swap a pointer; readers never wait.
pub struct StateCell {
    behavior: ArcSwap<RobotFrame>,
    lipsync: ArcSwapOption<LipsyncStamp>,
}

impl Default for StateCell {
    fn default() -> Self {
        Self {
            behavior: ArcSwap::from_pointee(RobotFrame::neutral(0)),
            lipsync: ArcSwapOption::empty(),
        }
    }
}

impl StateCell {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn update_behavior(&self, f: RobotFrame) {
        self.behavior.store(Arc::new(f));
    }

    pub fn update_lipsync(&self, frame: LipsyncFrame, received_at: i64) {
        self.lipsync.store(Some(Arc::new(LipsyncStamp { frame, received_at })));
    }

    pub fn snapshot(&self) -> RenderState {
        RenderState {
            latest_behavior: self.behavior.load_full(),
            latest_lipsync: self.lipsync.load_full(),
        }
    }

    /// Route one bus message into the cell. Returns whether it was used.
    pub fn ingest(&self, msg: BusMessage, now: i64) -> bool {
        match msg.payload {
            Payload::RobotFrame(f) => self.update_behavior(f),
            Payload::LipsyncFrame(f) => self.update_lipsync(f, now),
            _ => return false,
        }
        true
    }
}

/// Rotation from behavior; lip channels from a fresh lipsync frame, every
/// other channel from behavior.
pub fn merge(state: &RenderState, now: i64, lip_channels: &[String], staleness_ms: i64) -> RobotFrame {
    let mut out = (*state.latest_behavior).clone();
    if let (true, Some(lip)) = (state.lipsync_active(now, staleness_ms), &state.latest_lipsync) {
        for c in lip_channels {
            if let Some(w) = lip.frame.bs.get(c) {
                out.blendshapes.set(c.clone(), w);
            }
        }
        out.source = FrameSource::Merged;
    }
    out.t = now;
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub servo: ServoCommand,
    pub blendshape: Option<BlendshapeCommand>,
}

pub struct Renderer {
    cell: Arc<StateCell>,
    filter: RotationFilter,
    config: RendererConfig,
    sink: Box<dyn RobotSink>,
    ticks: u64,
    telemetry: Arc<Telemetry>,
}

impl Renderer {
    pub fn new(
        cell: Arc<StateCell>,
        config: RendererConfig,
        sink: Box<dyn RobotSink>,
        telemetry: Arc<Telemetry>,
    ) -> Result<Self, FilterError> {
        Ok(Self {
            cell,
            filter: RotationFilter::new(config.fir_taps.clone())?,
            config,
            sink,
            ticks: 0,
            telemetry,
        })
    }

    pub fn cell(&self) -> &Arc<StateCell> {
        &self.cell
    }

    pub fn config(&self) -> &RendererConfig {
        &self.config
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// One servo tick; every fifth tick, starting with the first, also
    /// emits blendshapes.
    pub fn tick(&mut self, now: i64) -> TickOutput {
        let state = self.cell.snapshot();
        let merged = merge(&state, now, &self.config.lip_channels, self.config.staleness_ms);
        let servo = self.tick_servo(now, &merged);
        let blendshape = self.ticks.is_multiple_of(BLENDSHAPE_DIVIDER).then(|| self.tick_blendshape(now, &merged));
        self.ticks += 1;
        TickOutput { servo, blendshape }
    }

    fn tick_servo(&mut self, now: i64, merged: &RobotFrame) -> ServoCommand {
        let cmd = ServoCommand {
            t: now,
            rotation: self.filter.push(merged.rotation).clamped(),
        };
        self.emit(&RobotCommand::Servo(cmd));
        cmd
    }

    fn tick_blendshape(&mut self, now: i64, merged: &RobotFrame) -> BlendshapeCommand {
        let cmd = BlendshapeCommand {
            t: now,
            blendshapes: merged.blendshapes.clone().clamped(),
        };
        self.emit(&RobotCommand::Blendshape(cmd.clone()));
        cmd
    }

    fn emit(&mut self, cmd: &RobotCommand) {
        if let Err(e) = self.sink.send(cmd) {
            self.telemetry.incr("renderer.sink_errors");
            log::warn!("robot sink: {e}");
        }
    }
}

/// Subscribe to both input topics.
pub fn subscribe_inputs(bus: &dyn Transport) -> Result<[Subscription; 2], BusError> {
    Ok([bus.subscribe(topics::BEHAVIOR_FRAMES)?, bus.subscribe(topics::LIPSYNC_FRAMES)?])
}

/// Drain whatever is queued on `subs` into the cell.
pub fn ingest_pending(subs: &[Subscription], cell: &StateCell, now: i64) -> usize {
    let mut n = 0;
    for s in subs {
        while let Some(m) = s.try_recv() {
            n += usize::from(cell.ingest(m, now));
        }
    }
    n
}

/// Ingestion thread, independent of the emit clock.
pub fn spawn_ingest(
    subs: [Subscription; 2],
    cell: Arc<StateCell>,
    clock: Arc<dyn Clock>,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name("renderer-ingest".into())
        .spawn(move || {
            let [behavior, lipsync] = subs;
            while !stop.load(Ordering::Acquire) {
                if let Some(m) = behavior.recv_timeout(Duration::from_millis(2)) {
                    cell.ingest(m, clock.now_ms());
                }
                ingest_pending(std::slice::from_ref(&behavior), &cell, clock.now_ms());
                ingest_pending(std::slice::from_ref(&lipsync), &cell, clock.now_ms());
            }
        })
        .expect("spawn ingest thread")
}

/// Lateness of tick starts against their deadlines, in microseconds.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct JitterStats {
    pub ticks: u64,
    pub p50_us: u64,
    pub p99_us: u64,
    pub max_us: u64,
}

impl JitterStats {
    pub fn from_samples(mut lateness_us: Vec<u64>) -> Self {
        if lateness_us.is_empty() {
            return Self::default();
        }
        lateness_us.sort_unstable();
        let q = |p: f64| lateness_us[((lateness_us.len() - 1) as f64 * p).round() as usize];
        Self {
            ticks: lateness_us.len() as u64,
            p50_us: q(0.5),
            p99_us: q(0.99),
            max_us: *lateness_us.last().expect("non-empty"),
        }
    }
}

/// Wall-clock loop on absolute deadlines: coarse sleep, then spin. Runs until
/// `stop` is set or `max_ticks` is reached.
pub fn run_realtime(
    renderer: &mut Renderer,
    clock: &dyn Clock,
    stop: &AtomicBool,
    max_ticks: Option<u64>,
) -> JitterStats {
    const SPIN: Duration = Duration::from_micros(1500);
    let period = Duration::from_millis(SERVO_PERIOD_MS as u64);
    let start = Instant::now();
    let mut lateness = Vec::new();
    let mut k: u32 = 0;
    while !stop.load(Ordering::Acquire) && max_ticks.is_none_or(|m| u64::from(k) < m) {
        let deadline = start + period * k;
        let now = Instant::now();
        if deadline > now {
            let wait = deadline - now;
            if wait > SPIN {
                std::thread::sleep(wait - SPIN);
            }
            while Instant::now() < deadline {
                std::hint::spin_loop();
            }
        }
        let late = Instant::now().saturating_duration_since(deadline);
        lateness.push(late.as_micros() as u64);
        renderer.tick(clock.now_ms());
        k += 1;
        // a long stall skips missed ticks rather than bursting
        let behind = Instant::now().saturating_duration_since(start + period * k);
        if behind > period {
            let skip = (behind.as_nanos() / period.as_nanos()) as u32;
            renderer.telemetry.add("renderer.missed_ticks", u64::from(skip));
            k += skip;
        }
    }
    JitterStats::from_samples(lateness)
}

/// Simulated run: `before_tick(now)` may feed the cell, then one tick, then
/// the clock advances by exactly one period.
pub fn run_simulated(
    renderer: &mut Renderer,
    clock: &SimClock,
    ticks: u64,
    mut before_tick: impl FnMut(i64, &StateCell),
) -> Vec<TickOutput> {
    let mut out = Vec::with_capacity(ticks as usize);
    for _ in 0..ticks {
        let now = clock.now_ms();
        before_tick(now, &renderer.cell);
        out.push(renderer.tick(now));
        clock.advance(SERVO_PERIOD_MS);
    }
    out
}
