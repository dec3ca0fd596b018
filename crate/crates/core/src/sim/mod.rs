//! Desk-scale stand-ins for the phone, the participant and the robot:
//! synthetic capture, track recording and replay, synthetic prompt
//! libraries, headless sessions and the copy-delay measurement.

mod delay;
mod e2e;
mod prompts;
mod record;
mod synth;

use thiserror::Error;

use crate::behavior::BehaviorError;
use crate::bus::BusError;
use crate::gateway::GatewayError;
use crate::harness::{HarnessError, ScheduleError};
use crate::playback::PlaybackError;
use crate::renderer::FilterError;
use crate::track::TrackError;

pub use delay::{correlation_peak, measure_copy_delay, DelayMeasurement, DelayProbe};
pub use e2e::{run_e2e, synthetic_natural_track, E2eConfig, E2eOutcome, InitialRanking, ParticipantPolicy};
pub use prompts::{prompt_id, synthetic_library, write_prompt_library, CATEGORY_COUNTS, LIPSYNC_FRAME_MS};
pub use record::{replay, replay_messages, Recorder, Recording};
pub use synth::{estimate_frequency, SynthProfile, SynthSource, MAX_SYNTH_FPS};

/// Start of simulated time.
pub const SIM_EPOCH_MS: i64 = 1_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("run aborted at t={t} during `{step}`: {reason}")]
    Aborted { t: i64, step: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Behavior(#[from] BehaviorError),
    #[error(transparent)]
    Playback(#[from] PlaybackError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}
