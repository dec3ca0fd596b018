//! Real-time facial-gesture middleware for a social robot head, plus the
//! tooling to run and analyse a wizard-of-oz mimicry experiment.
//!
//! Data flows capture source → [`gateway`] → [`bus`] → [`behavior`] →
//! [`renderer`] → robot sink, with [`playback`] feeding lipsync alongside.

pub mod behavior;
pub mod bus;
pub mod clock;
pub mod config;
pub mod control;
pub mod frame;
pub mod gateway;
pub mod harness;
pub mod playback;
pub mod renderer;
pub mod sim;
pub mod stats;
pub mod telemetry;
pub mod track;

pub use bus::{Bus, BusMessage, Payload, Transport};
pub use clock::{Clock, SimClock, SystemClock};
pub use control::ControlEvent;
pub use frame::{BlendshapeVector, CaptureFrame, ChannelSet, HeadRotation, RobotFrame};
pub use telemetry::Telemetry;
