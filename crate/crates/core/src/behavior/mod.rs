//! Behavior engine: turns the user's capture frames into robot gesture
//! frames through a swappable strategy.
//!
//! Three strategies ship: `still` (neutral pose), `natural` (looped
//! playback of a recorded track) and `copy` (the user's own frames after a
//! fixed delay, 4 s by default). Anything implementing [`GestureSource`] can
//! be plugged in with [`BehaviorEngine::set_source`].
//!
//! Strategy switches and natural-track loop seams are crossfaded over
//! 500 ms. The engine emits one frame per input frame; rate conversion is the
//! renderer's job.

mod delay_line;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{topics, BusError, BusMessage, Payload, Subscription, Transport};
use crate::control::ControlEvent;
use crate::frame::{BlendshapeVector, CaptureFrame, ChannelSet, RobotFrame};
use crate::telemetry::Telemetry;
use crate::track::{GestureTrack, TrackError, TrackFrame};

pub use delay_line::{DelayLine, NonMonotone, DEFAULT_MARGIN_MS, MAX_INPUT_RATE_HZ};

pub const DEFAULT_COPY_DELAY_S: f64 = 4.0;
pub const CROSSFADE_MS: i64 = 500;

fn default_delay() -> f64 {
    DEFAULT_COPY_DELAY_S
}

#[derive(Debug, Error)]
pub enum BehaviorError {
    #[error("copy delay must be positive, got {0}")]
    InvalidDelay(f64),
    #[error("unknown natural track `{0}`")]
    UnknownTrack(String),
    #[error("natural track `{0}` is empty")]
    EmptyTrack(String),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopPolicy {
    #[default]
    Loop,
    /// Play once, then hold the last frame.
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BehaviorStrategy {
    Still,
    Natural {
        track: String,
        #[serde(default)]
        loop_policy: LoopPolicy,
    },
    Copy {
        #[serde(default = "default_delay")]
        delay_s: f64,
    },
}

impl BehaviorStrategy {
    pub fn copy() -> Self {
        BehaviorStrategy::Copy {
            delay_s: DEFAULT_COPY_DELAY_S,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            BehaviorStrategy::Still => "still",
            BehaviorStrategy::Natural { .. } => "natural",
            BehaviorStrategy::Copy { .. } => "copy",
        }
    }
}

/// A behavior submodule. `frame` is called once per input frame with the
/// shared delay line already holding that frame.
pub trait GestureSource: Send {
    fn frame(&mut self, t: i64, line: &DelayLine) -> RobotFrame;
}

/// Neutral pose at `t`: all weights zero, rotation zero.
pub fn still_frame(t: i64) -> RobotFrame {
    RobotFrame::neutral(t)
}

fn full_vector(partial: &BlendshapeVector) -> BlendshapeVector {
    let mut v = BlendshapeVector::neutral(ChannelSet::canonical());
    for (k, w) in partial.iter() {
        v.set(k, w);
    }
    v
}

fn robot_from_track(f: &TrackFrame, t: i64) -> RobotFrame {
    RobotFrame {
        t,
        blendshapes: full_vector(&f.bs),
        rotation: f.rot,
        source: crate::frame::FrameSource::Behavior,
    }
}

/// Sample a looped track started at `t_start`. Over the last 500 ms of each
/// pass (at most half the track) the output fades toward the first frame so
/// the wrap is continuous.
pub fn natural_frame(track: &GestureTrack, t_start: i64, t: i64) -> Result<RobotFrame, BehaviorError> {
    natural_frame_with(track, t_start, t, LoopPolicy::Loop)
}

fn natural_frame_with(
    track: &GestureTrack,
    t_start: i64,
    t: i64,
    policy: LoopPolicy,
) -> Result<RobotFrame, BehaviorError> {
    let first = track
        .frames()
        .first()
        .ok_or_else(|| BehaviorError::EmptyTrack(String::new()))?;
    let start_rel = first.t_rel;
    let duration = track.duration_ms() - start_rel;
    if duration <= 0 {
        return Ok(robot_from_track(first, t));
    }
    let elapsed = t - t_start;
    if policy == LoopPolicy::Hold && elapsed >= duration {
        return Ok(robot_from_track(track.frames().last().expect("non-empty"), t));
    }
    let phase = elapsed.rem_euclid(duration);
    let sample = track.sample(start_rel + phase).expect("non-empty");
    let window = CROSSFADE_MS.min(duration / 2);
    let fade_start = duration - window;
    let out = robot_from_track(&sample, t);
    if policy == LoopPolicy::Loop && window > 0 && phase >= fade_start {
        let alpha = (phase - fade_start) as f64 / window as f64;
        let head = robot_from_track(first, t);
        return Ok(RobotFrame::blend(&out, &head, alpha, t));
    }
    Ok(out)
}

/// The input as it was `delay_s` ago; neutral until the buffer reaches back
/// that far.
pub fn copy_frame(line: &DelayLine, t: i64, delay_s: f64) -> RobotFrame {
    let target = t - (delay_s * 1000.0).round() as i64;
    match line.sample(target) {
        Some(f) => {
            let mut r = RobotFrame::from_capture(&f);
            r.t = t;
            r
        }
        None => still_frame(t),
    }
}

struct StillSource;

impl GestureSource for StillSource {
    fn frame(&mut self, t: i64, _line: &DelayLine) -> RobotFrame {
        still_frame(t)
    }
}

struct NaturalSource {
    track: Arc<GestureTrack>,
    t_start: i64,
    policy: LoopPolicy,
}

impl GestureSource for NaturalSource {
    fn frame(&mut self, t: i64, _line: &DelayLine) -> RobotFrame {
        natural_frame_with(&self.track, self.t_start, t, self.policy).unwrap_or_else(|_| still_frame(t))
    }
}

struct CopySource {
    delay_s: f64,
}

impl GestureSource for CopySource {
    fn frame(&mut self, t: i64, line: &DelayLine) -> RobotFrame {
        copy_frame(line, t, self.delay_s)
    }
}

/// Linear blend from one source into another over `duration` ms.
struct Crossfade {
    from: Box<dyn GestureSource>,
    to: Box<dyn GestureSource>,
    start: i64,
    duration: i64,
}

impl Crossfade {
    fn done(&self, t: i64) -> bool {
        t >= self.start + self.duration
    }
}

impl GestureSource for Crossfade {
    fn frame(&mut self, t: i64, line: &DelayLine) -> RobotFrame {
        let to = self.to.frame(t, line);
        if self.done(t) {
            return to;
        }
        let from = self.from.frame(t, line);
        let alpha = (t - self.start).max(0) as f64 / self.duration as f64;
        RobotFrame::blend(&from, &to, alpha, t)
    }
}

enum Active {
    Steady(Box<dyn GestureSource>),
    Fading(Crossfade),
}

/// Natural-movement tracks by id.
#[derive(Debug, Clone, Default)]
pub struct TrackLibrary {
    tracks: BTreeMap<String, Arc<GestureTrack>>,
}

impl TrackLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, track: GestureTrack) {
        self.tracks.insert(id.into(), Arc::new(track));
    }

    pub fn get(&self, id: &str) -> Option<&Arc<GestureTrack>> {
        self.tracks.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.tracks.keys().map(String::as_str)
    }

    /// Every `*.jsonl` file in `dir`, keyed by file stem.
    pub fn load_dir(dir: &Path) -> Result<Self, BehaviorError> {
        let mut lib = Self::new();
        let mut paths: Vec<_> = std::fs::read_dir(dir)
            .map_err(TrackError::from)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for p in paths {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            lib.insert(id, GestureTrack::load(&p)?);
        }
        Ok(lib)
    }
}

pub struct BehaviorEngine {
    line: DelayLine,
    active: Active,
    strategy: Option<BehaviorStrategy>,
    tracks: TrackLibrary,
    telemetry: Arc<Telemetry>,
}

impl BehaviorEngine {
    /// Starts in the still strategy.
    pub fn new(tracks: TrackLibrary, telemetry: Arc<Telemetry>) -> Self {
        Self {
            line: DelayLine::new((DEFAULT_COPY_DELAY_S * 1000.0) as i64, DEFAULT_MARGIN_MS),
            active: Active::Steady(Box::new(StillSource)),
            strategy: Some(BehaviorStrategy::Still),
            tracks,
            telemetry,
        }
    }

    pub fn strategy(&self) -> Option<&BehaviorStrategy> {
        self.strategy.as_ref()
    }

    pub fn delay_line(&self) -> &DelayLine {
        &self.line
    }

    fn build(&mut self, s: &BehaviorStrategy, now: i64) -> Result<Box<dyn GestureSource>, BehaviorError> {
        Ok(match s {
            BehaviorStrategy::Still => Box::new(StillSource),
            BehaviorStrategy::Copy { delay_s } => {
                if !(delay_s.is_finite() && *delay_s > 0.0) {
                    return Err(BehaviorError::InvalidDelay(*delay_s));
                }
                let delay_ms = (delay_s * 1000.0).round() as i64;
                // never shrink: the outgoing source may still be sampling
                if delay_ms > self.line.delay_ms() {
                    self.line.set_delay(delay_ms);
                }
                Box::new(CopySource { delay_s: *delay_s })
            }
            BehaviorStrategy::Natural { track, loop_policy } => {
                let t = self
                    .tracks
                    .get(track)
                    .ok_or_else(|| BehaviorError::UnknownTrack(track.clone()))?;
                if t.is_empty() {
                    return Err(BehaviorError::EmptyTrack(track.clone()));
                }
                Box::new(NaturalSource {
                    track: t.clone(),
                    t_start: now,
                    policy: *loop_policy,
                })
            }
        })
    }

    /// Switch strategy; output crossfades from the old one starting at `now`.
    pub fn set_strategy(&mut self, s: BehaviorStrategy, now: i64) -> Result<(), BehaviorError> {
        let source = self.build(&s, now)?;
        self.switch(source, now);
        self.strategy = Some(s);
        Ok(())
    }

    /// Install a custom source (e.g. a generative model).
    pub fn set_source(&mut self, source: Box<dyn GestureSource>, now: i64) {
        self.switch(source, now);
        self.strategy = None;
    }

    fn switch(&mut self, to: Box<dyn GestureSource>, now: i64) {
        let from: Box<dyn GestureSource> = match std::mem::replace(&mut self.active, Active::Steady(Box::new(StillSource))) {
            Active::Steady(s) => s,
            Active::Fading(c) => Box::new(c),
        };
        self.active = Active::Fading(Crossfade {
            from,
            to,
            start: now,
            duration: CROSSFADE_MS,
        });
    }

    /// Feed one capture frame and produce the robot frame for its timestamp.
    /// Non-monotone frames are rejected and counted.
    pub fn on_capture(&mut self, f: CaptureFrame) -> Option<RobotFrame> {
        let t = f.t;
        if self.line.push(f).is_err() {
            self.telemetry.incr("behavior.rejected");
            return None;
        }
        Some(self.frame_at(t))
    }

    /// Output at `t` from the current strategy state.
    pub fn frame_at(&mut self, t: i64) -> RobotFrame {
        if let Active::Fading(c) = &self.active {
            if c.done(t) {
                let Active::Fading(c) = std::mem::replace(&mut self.active, Active::Steady(Box::new(StillSource))) else {
                    unreachable!()
                };
                self.active = Active::Steady(c.to);
            }
        }
        let mut out = match &mut self.active {
            Active::Steady(s) => s.frame(t, &self.line),
            Active::Fading(c) => c.frame(t, &self.line),
        };
        out.blendshapes.clamp();
        out.rotation = out.rotation.clamped();
        out
    }
}

/// Bus adapter: `capture.frames` in, `behavior.frames` out, strategy changes
/// from `control.behavior.set` applied between frames.
pub struct BehaviorService<T: Transport> {
    engine: BehaviorEngine,
    bus: T,
    frames: Subscription,
    control: Subscription,
}

impl<T: Transport> BehaviorService<T> {
    pub fn new(engine: BehaviorEngine, bus: T) -> Result<Self, BehaviorError> {
        let frames = bus.subscribe(topics::CAPTURE_FRAMES)?;
        let control = bus.subscribe(topics::BEHAVIOR_SET)?;
        Ok(Self {
            engine,
            bus,
            frames,
            control,
        })
    }

    pub fn engine(&self) -> &BehaviorEngine {
        &self.engine
    }

    fn apply_control(&mut self) {
        while let Some(msg) = self.control.try_recv() {
            if let BusMessage {
                t,
                payload: Payload::ControlEvent(ControlEvent::SetBehavior { strategy }),
                ..
            } = msg
            {
                if let Err(e) = self.engine.set_strategy(strategy, t) {
                    log::warn!("rejected strategy change: {e}");
                    self.engine.telemetry.incr("behavior.bad_strategy");
                }
            }
        }
    }

    fn handle(&mut self, msg: BusMessage) -> Result<bool, BehaviorError> {
        self.apply_control();
        if let Payload::CaptureFrame(f) = msg.payload {
            if let Some(out) = self.engine.on_capture(f) {
                self.bus.publish(topics::BEHAVIOR_FRAMES, out.t, Payload::RobotFrame(out))?;
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// Process everything queued. Returns the number of frames published.
    pub fn poll(&mut self) -> Result<usize, BehaviorError> {
        self.apply_control();
        let mut n = 0;
        while let Some(msg) = self.frames.try_recv() {
            n += usize::from(self.handle(msg)?);
        }
        Ok(n)
    }

    /// Block up to `timeout` for the next frame, then drain.
    pub fn poll_blocking(&mut self, timeout: std::time::Duration) -> Result<usize, BehaviorError> {
        match self.frames.recv_timeout(timeout) {
            Some(msg) => Ok(usize::from(self.handle(msg)?) + self.poll()?),
            None => {
                self.apply_control();
                Ok(0)
            }
        }
    }
}
