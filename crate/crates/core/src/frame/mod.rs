//! Shared frame types.
//!
//! A [`CaptureFrame`] is one timestamped sample of blendshape weights and
//! head rotation. Everything downstream of the capture gateway speaks in
//! these frames or in the robot-side [`RobotFrame`] and command types.
//!
//! Rotation components are device-axis Euler angles in degrees (`x`, `y`,
//! `z`), clamped to `[-90, 90]`. Blendshape weights are clamped to `[0, 1]`.

pub mod channels;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use channels::{default_lip_channels, ChannelSet, CHANNEL_COUNT, DEFAULT_LIP_CHANNELS};

/// Per-axis rotation bound in degrees.
pub const ROTATION_LIMIT_DEG: f64 = 90.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FrameError {
    #[error("interpolation time {t} outside [{start}, {end}]")]
    OutOfInterval { t: i64, start: i64, end: i64 },
    #[error("invalid channel list: {0}")]
    ChannelList(String),
}

/// Blendshape weights keyed by channel name.
///
/// Full vectors carry every canonical channel; lipsync frames carry only the
/// lip subset. Keys are kept sorted so the serialized form is stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlendshapeVector {
    weights: BTreeMap<String, f64>,
}

impl BlendshapeVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// All channels of `set` at weight zero.
    pub fn neutral(set: &ChannelSet) -> Self {
        Self {
            weights: set.names().iter().map(|n| (n.clone(), 0.0)).collect(),
        }
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self {
            weights: pairs.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn get(&self, channel: &str) -> Option<f64> {
        self.weights.get(channel).copied()
    }

    pub fn set(&mut self, channel: impl Into<String>, weight: f64) {
        self.weights.insert(channel.into(), weight);
    }

    pub fn remove(&mut self, channel: &str) -> Option<f64> {
        self.weights.remove(channel)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn channels(&self) -> impl Iterator<Item = &str> {
        self.weights.keys().map(String::as_str)
    }

    /// Clamp every weight into `[0, 1]`. NaN becomes 0.
    pub fn clamp(&mut self) {
        for w in self.weights.values_mut() {
            *w = clamp_weight(*w);
        }
    }

    pub fn clamped(mut self) -> Self {
        self.clamp();
        self
    }

    /// Keep only the listed channels.
    pub fn restricted_to(&self, channels: &[String]) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .filter(|(k, _)| channels.iter().any(|c| c == *k))
                .map(|(k, v)| (k.clone(), *v))
                .collect(),
        }
    }

    /// Component-wise `a + (b - a) * alpha` over the union of channels;
    /// a channel missing on one side counts as zero there.
    pub fn lerp(a: &Self, b: &Self, alpha: f64) -> Self {
        let mut weights = BTreeMap::new();
        for (k, va) in &a.weights {
            let vb = b.weights.get(k).copied().unwrap_or(0.0);
            weights.insert(k.clone(), lerp(*va, vb, alpha));
        }
        for (k, vb) in &b.weights {
            if !a.weights.contains_key(k) {
                weights.insert(k.clone(), lerp(0.0, *vb, alpha));
            }
        }
        Self { weights }
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for BlendshapeVector {
    fn from_iter<T: IntoIterator<Item = (S, f64)>>(iter: T) -> Self {
        Self::from_pairs(iter)
    }
}

pub(crate) fn clamp_weight(w: f64) -> f64 {
    if w.is_nan() {
        0.0
    } else {
        w.clamp(0.0, 1.0)
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, alpha: f64) -> f64 {
    a + (b - a) * alpha
}

/// Head rotation in degrees about the device axes. Serialized as `[x, y, z]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct HeadRotation {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl HeadRotation {
    pub const ZERO: HeadRotation = HeadRotation { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn clamped(self) -> Self {
        let c = |v: f64| {
            if v.is_nan() {
                0.0
            } else {
                v.clamp(-ROTATION_LIMIT_DEG, ROTATION_LIMIT_DEG)
            }
        };
        Self::new(c(self.x), c(self.y), c(self.z))
    }

    pub fn lerp(a: Self, b: Self, alpha: f64) -> Self {
        Self::new(lerp(a.x, b.x, alpha), lerp(a.y, b.y, alpha), lerp(a.z, b.z, alpha))
    }

    pub fn axis(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn set_axis(&mut self, axis: Axis, v: f64) {
        match axis {
            Axis::X => self.x = v,
            Axis::Y => self.y = v,
            Axis::Z => self.z = v,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for HeadRotation {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<HeadRotation> for [f64; 3] {
    fn from(r: HeadRotation) -> Self {
        r.to_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(format!("unknown axis `{other}`")),
        }
    }
}

/// One capture sample from the user's face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureFrame {
    /// Device capture time, ms since epoch.
    pub t: i64,
    /// Per-stream sequence number.
    pub seq: u64,
    #[serde(rename = "bs")]
    pub blendshapes: BlendshapeVector,
    #[serde(rename = "rot")]
    pub rotation: HeadRotation,
}

impl CaptureFrame {
    pub fn neutral(t: i64, seq: u64) -> Self {
        Self {
            t,
            seq,
            blendshapes: BlendshapeVector::neutral(ChannelSet::canonical()),
            rotation: HeadRotation::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameSource {
    Behavior,
    Lipsync,
    Merged,
}

/// A frame on the robot side of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotFrame {
    pub t: i64,
    #[serde(rename = "bs")]
    pub blendshapes: BlendshapeVector,
    #[serde(rename = "rot")]
    pub rotation: HeadRotation,
    pub source: FrameSource,
}

impl RobotFrame {
    /// All weights zero, rotation zero.
    pub fn neutral(t: i64) -> Self {
        Self {
            t,
            blendshapes: BlendshapeVector::neutral(ChannelSet::canonical()),
            rotation: HeadRotation::ZERO,
            source: FrameSource::Behavior,
        }
    }

    pub fn from_capture(f: &CaptureFrame) -> Self {
        Self {
            t: f.t,
            blendshapes: f.blendshapes.clone(),
            rotation: f.rotation,
            source: FrameSource::Behavior,
        }
    }

    /// Convex blend of two robot frames; `alpha = 0` gives `a`.
    pub fn blend(a: &RobotFrame, b: &RobotFrame, alpha: f64, t: i64) -> RobotFrame {
        let alpha = alpha.clamp(0.0, 1.0);
        RobotFrame {
            t,
            blendshapes: BlendshapeVector::lerp(&a.blendshapes, &b.blendshapes, alpha),
            rotation: HeadRotation::lerp(a.rotation, b.rotation, alpha),
            source: b.source,
        }
    }
}

/// Head rotation command for the neck servos (125 Hz stream).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoCommand {
    pub t: i64,
    #[serde(rename = "rot")]
    pub rotation: HeadRotation,
}

/// Facial blendshape command (25 Hz stream).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlendshapeCommand {
    pub t: i64,
    #[serde(rename = "bs")]
    pub blendshapes: BlendshapeVector,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    WeightOutOfRange { channel: String, value: f64 },
    MissingChannel(String),
    UnknownChannel(String),
    RotationOutOfRange { axis: Axis, value: f64 },
    TimestampRegression { previous: i64, t: i64 },
    SequenceRegression { previous: u64, seq: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::WeightOutOfRange { channel, value } => {
                write!(f, "weight out of range: {channel}={value}")
            }
            Violation::MissingChannel(c) => write!(f, "missing channel: {c}"),
            Violation::UnknownChannel(c) => write!(f, "unknown channel: {c}"),
            Violation::RotationOutOfRange { axis, value } => {
                write!(f, "rotation out of range: {axis:?}={value}")
            }
            Violation::TimestampRegression { previous, t } => {
                write!(f, "timestamp regression: {t} after {previous}")
            }
            Violation::SequenceRegression { previous, seq } => {
                write!(f, "sequence regression: {seq} after {previous}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationResult {
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check a frame against the channel set, the value bounds and, when given,
/// the previous frame of the same stream. Never fails; reports instead.
pub fn validate_frame(
    frame: &CaptureFrame,
    previous: Option<&CaptureFrame>,
    channels: &ChannelSet,
) -> ValidationResult {
    let mut violations = Vec::new();
    for name in channels.names() {
        if frame.blendshapes.get(name).is_none() {
            violations.push(Violation::MissingChannel(name.clone()));
        }
    }
    for (name, w) in frame.blendshapes.iter() {
        if !channels.contains(name) {
            violations.push(Violation::UnknownChannel(name.to_string()));
        }
        if !(0.0..=1.0).contains(&w) {
            violations.push(Violation::WeightOutOfRange {
                channel: name.to_string(),
                value: w,
            });
        }
    }
    for axis in Axis::ALL {
        let v = frame.rotation.axis(axis);
        if !(-ROTATION_LIMIT_DEG..=ROTATION_LIMIT_DEG).contains(&v) {
            violations.push(Violation::RotationOutOfRange { axis, value: v });
        }
    }
    if let Some(prev) = previous {
        if frame.t <= prev.t {
            violations.push(Violation::TimestampRegression {
                previous: prev.t,
                t: frame.t,
            });
        }
        if frame.seq <= prev.seq {
            violations.push(Violation::SequenceRegression {
                previous: prev.seq,
                seq: frame.seq,
            });
        }
    }
    ValidationResult { violations }
}

/// Linear interpolation between two frames of one stream at time `t`.
pub fn lerp_frames(a: &CaptureFrame, b: &CaptureFrame, t: i64) -> Result<CaptureFrame, FrameError> {
    if a.t >= b.t || t < a.t || t > b.t {
        return Err(FrameError::OutOfInterval {
            t,
            start: a.t,
            end: b.t,
        });
    }
    let alpha = (t - a.t) as f64 / (b.t - a.t) as f64;
    Ok(CaptureFrame {
        t,
        seq: if t == b.t { b.seq } else { a.seq },
        blendshapes: BlendshapeVector::lerp(&a.blendshapes, &b.blendshapes, alpha),
        rotation: HeadRotation::lerp(a.rotation, b.rotation, alpha),
    })
}
