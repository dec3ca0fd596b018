//! Prompt playback: plays a recorded voice prompt and streams its lipsync
//! blendshapes at their recorded timing.

mod library;

use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{topics, BusError, Payload, Subscription, Transport};
use crate::control::ControlEvent;
use crate::frame::BlendshapeVector;
use crate::track::{GestureTrack, TrackFrame};

pub use library::{
    load_library, load_library_as, wav_duration_ms, write_silent_wav, LoadError, LoadedLibrary, ManifestEntry,
    ManifestVariant, PromptCategory, PromptLibrary, PromptRecording, PromptVariant, DURATION_TOLERANCE_MS,
    MANIFEST_FILE, PROMPTS_PER_ACTOR,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipsyncFrame {
    pub t_rel: i64,
    pub bs: BlendshapeVector,
}

#[derive(Debug, Error, PartialEq)]
pub enum LipsyncError {
    #[error("t_rel {0} not strictly increasing")]
    NotIncreasing(i64),
    #[error("channel `{0}` is not a lip channel")]
    NotLipChannel(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipsyncTrack {
    frames: Vec<LipsyncFrame>,
    duration_ms: i64,
}

impl LipsyncTrack {
    pub fn new(frames: Vec<LipsyncFrame>, lip_channels: &[String]) -> Result<Self, LipsyncError> {
        let mut prev = None;
        for f in &frames {
            if prev.is_some_and(|p| f.t_rel <= p) {
                return Err(LipsyncError::NotIncreasing(f.t_rel));
            }
            if let Some(c) = f.bs.channels().find(|c| !lip_channels.iter().any(|l| l == c)) {
                return Err(LipsyncError::NotLipChannel(c.to_string()));
            }
            prev = Some(f.t_rel);
        }
        let duration_ms = frames.last().map_or(0, |f| f.t_rel);
        Ok(Self { frames, duration_ms })
    }

    pub fn from_gesture_track(track: &GestureTrack, lip_channels: &[String]) -> Result<Self, LipsyncError> {
        Self::new(
            track
                .frames()
                .iter()
                .map(|f| LipsyncFrame {
                    t_rel: f.t_rel,
                    bs: f.bs.clone(),
                })
                .collect(),
            lip_channels,
        )
    }

    pub fn to_gesture_track(&self, channels: Vec<String>, fps: f64) -> GestureTrack {
        let frames = self
            .frames
            .iter()
            .map(|f| TrackFrame {
                t_rel: f.t_rel,
                bs: f.bs.clone(),
                rot: Default::default(),
            })
            .collect();
        GestureTrack::new(channels, fps, frames).expect("lipsync invariants imply track invariants")
    }

    pub fn frames(&self) -> &[LipsyncFrame] {
        &self.frames
    }

    pub fn duration_ms(&self) -> i64 {
        self.duration_ms
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantPolicy {
    #[default]
    Random,
    Fixed(usize),
}

#[derive(Debug, Error)]
pub enum PlaybackError {
    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),
    #[error("prompt `{prompt}` has {count} variant(s), requested {index}")]
    NoSuchVariant { prompt: String, index: usize, count: usize },
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// Audio output. Real devices are thin adapters; tests use [`TimingSink`].
pub trait AudioSink: Send {
    fn play(&mut self, audio: &Path, duration_ms: i64, now: i64);
    fn stop(&mut self, now: i64);
}

#[derive(Debug, Clone, PartialEq)]
pub enum SinkEvent {
    Play { audio: String, duration_ms: i64, at: i64 },
    Stop { at: i64 },
}

/// Records calls without producing sound.
#[derive(Debug, Clone, Default)]
pub struct TimingSink {
    log: Arc<Mutex<Vec<SinkEvent>>>,
}

impl TimingSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<SinkEvent> {
        self.log.lock().expect("sink log").clone()
    }
}

impl AudioSink for TimingSink {
    fn play(&mut self, audio: &Path, duration_ms: i64, now: i64) {
        self.log.lock().expect("sink log").push(SinkEvent::Play {
            audio: audio.display().to_string(),
            duration_ms,
            at: now,
        });
    }

    fn stop(&mut self, now: i64) {
        self.log.lock().expect("sink log").push(SinkEvent::Stop { at: now });
    }
}

/// Runs an external player (e.g. `aplay`) per prompt.
pub struct CommandSink {
    program: String,
    child: Option<std::process::Child>,
}

impl CommandSink {
    pub fn new(program: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            child: None,
        }
    }
}

impl AudioSink for CommandSink {
    fn play(&mut self, audio: &Path, _duration_ms: i64, now: i64) {
        self.stop(now);
        match std::process::Command::new(&self.program).arg(audio).spawn() {
            Ok(c) => self.child = Some(c),
            Err(e) => log::error!("audio player `{}` failed: {e}", self.program),
        }
    }

    fn stop(&mut self, _now: i64) {
        if let Some(mut c) = self.child.take() {
            let _ = c.kill();
            let _ = c.wait();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaybackHandle {
    pub prompt_id: String,
    pub variant: usize,
    pub started_at: i64,
    pub duration_ms: i64,
}

struct Active {
    handle: PlaybackHandle,
    track: LipsyncTrack,
    next: usize,
}

/// Single-voice prompt player. Time is passed in explicitly so the same code
/// runs under wall and simulated clocks.
pub struct Player<T: Transport> {
    library: Arc<PromptLibrary>,
    bus: T,
    sink: Box<dyn AudioSink>,
    rng: ChaCha8Rng,
    active: Option<Active>,
}

impl<T: Transport> Player<T> {
    pub fn new(library: Arc<PromptLibrary>, bus: T, sink: Box<dyn AudioSink>, seed: u64) -> Self {
        Self {
            library,
            bus,
            sink,
            rng: ChaCha8Rng::seed_from_u64(seed),
            active: None,
        }
    }

    pub fn library(&self) -> &PromptLibrary {
        &self.library
    }

    pub fn active(&self) -> Option<&PlaybackHandle> {
        self.active.as_ref().map(|a| &a.handle)
    }

    /// Start a prompt. A prompt already playing is stopped first.
    pub fn play_prompt(&mut self, id: &str, policy: VariantPolicy, now: i64) -> Result<PlaybackHandle, PlaybackError> {
        let rec = self
            .library
            .get(id)
            .ok_or_else(|| PlaybackError::UnknownPrompt(id.to_string()))?;
        let count = rec.variants.len();
        let index = match policy {
            VariantPolicy::Fixed(i) if i < count => i,
            VariantPolicy::Fixed(i) => {
                return Err(PlaybackError::NoSuchVariant {
                    prompt: id.to_string(),
                    index: i,
                    count,
                })
            }
            VariantPolicy::Random => self.rng.gen_range(0..count),
        };
        let variant = rec.variants[index].clone();
        self.stop(now)?;
        let handle = PlaybackHandle {
            prompt_id: id.to_string(),
            variant: index,
            started_at: now,
            duration_ms: variant.track.duration_ms(),
        };
        self.sink.play(&variant.audio, handle.duration_ms, now);
        self.bus.publish(
            topics::PLAYBACK_EVENTS,
            now,
            Payload::ControlEvent(ControlEvent::PlaybackStarted {
                prompt_id: handle.prompt_id.clone(),
                variant: index,
                duration_ms: handle.duration_ms,
            }),
        )?;
        self.active = Some(Active {
            handle: handle.clone(),
            track: variant.track,
            next: 0,
        });
        self.poll(now)?;
        Ok(handle)
    }

    /// Stop the active prompt, if any. Returns whether one was stopped.
    pub fn stop(&mut self, now: i64) -> Result<bool, PlaybackError> {
        let Some(a) = self.active.take() else {
            return Ok(false);
        };
        self.sink.stop(now);
        self.bus.publish(
            topics::PLAYBACK_EVENTS,
            now,
            Payload::ControlEvent(ControlEvent::PlaybackStopped {
                prompt_id: a.handle.prompt_id,
            }),
        )?;
        Ok(true)
    }

    /// Publish every frame due by `now`, then the finished event once the
    /// track is over. Frames are stamped with their scheduled time.
    pub fn poll(&mut self, now: i64) -> Result<usize, PlaybackError> {
        let Some(a) = self.active.as_mut() else {
            return Ok(0);
        };
        let start = a.handle.started_at;
        let mut sent = 0;
        while let Some(f) = a.track.frames().get(a.next) {
            if start + f.t_rel > now {
                break;
            }
            self.bus
                .publish(topics::LIPSYNC_FRAMES, start + f.t_rel, Payload::LipsyncFrame(f.clone()))?;
            a.next += 1;
            sent += 1;
        }
        let end = start + a.handle.duration_ms;
        if a.next >= a.track.frames().len() && now >= end {
            let a = self.active.take().expect("checked");
            self.sink.stop(now);
            self.bus.publish(
                topics::PLAYBACK_EVENTS,
                end,
                Payload::ControlEvent(ControlEvent::PlaybackFinished {
                    prompt_id: a.handle.prompt_id,
                }),
            )?;
        }
        Ok(sent)
    }

    /// When the next frame or the finished event is due.
    pub fn next_deadline(&self) -> Option<i64> {
        let a = self.active.as_ref()?;
        let start = a.handle.started_at;
        Some(
            a.track
                .frames()
                .get(a.next)
                .map_or(start + a.handle.duration_ms, |f| start + f.t_rel),
        )
    }

    /// Apply a playback command. Non-playback events are ignored.
    pub fn handle(&mut self, ev: &ControlEvent, now: i64) -> Result<Option<PlaybackHandle>, PlaybackError> {
        match ev {
            ControlEvent::PlayPrompt { prompt_id, variant } => self.play_prompt(prompt_id, *variant, now).map(Some),
            ControlEvent::StopPrompt => self.stop(now).map(|_| None),
            _ => Ok(None),
        }
    }
}

/// Bus adapter: commands from `control.playback.command`.
pub struct PlaybackService<T: Transport> {
    player: Player<T>,
    commands: Subscription,
}

impl<T: Transport> PlaybackService<T> {
    pub fn new(player: Player<T>, bus: &dyn Transport) -> Result<Self, PlaybackError> {
        let commands = bus.subscribe(topics::PLAYBACK_COMMANDS)?;
        Ok(Self { player, commands })
    }

    pub fn player(&self) -> &Player<T> {
        &self.player
    }

    /// Apply queued commands, then emit due frames.
    pub fn step(&mut self, now: i64) -> Result<usize, PlaybackError> {
        while let Some(msg) = self.commands.try_recv() {
            if let Payload::ControlEvent(ev) = &msg.payload {
                if let Err(e) = self.player.handle(ev, now) {
                    log::warn!("playback command rejected: {e}");
                }
            }
        }
        self.player.poll(now)
    }
}
