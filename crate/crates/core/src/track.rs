//! Gesture track files.
//!
//! A track is a JSON-lines file. The first line is a header
//! `{"format":"gesture-track","version":1,"fps":<f64>,"channels":[...]}`,
//! every following line one frame `{"t_rel":<ms>,"bs":{...},"rot":[x,y,z]}`.
//! Frames are strictly increasing in `t_rel` and only carry declared
//! channels. Natural-movement sources, prompt lipsync and session
//! recordings all use this format.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{lerp, BlendshapeVector, CaptureFrame, HeadRotation, RobotFrame};

pub const TRACK_FORMAT: &str = "gesture-track";
pub const TRACK_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("track line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("track frame at t_rel={t_rel}: {msg}")]
    Invalid { t_rel: i64, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackHeader {
    pub format: String,
    pub version: u32,
    pub fps: f64,
    pub channels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub t_rel: i64,
    pub bs: BlendshapeVector,
    pub rot: HeadRotation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureTrack {
    header: TrackHeader,
    frames: Vec<TrackFrame>,
}

impl GestureTrack {
    pub fn new(channels: Vec<String>, fps: f64, frames: Vec<TrackFrame>) -> Result<Self, TrackError> {
        let track = Self {
            header: TrackHeader {
                format: TRACK_FORMAT.into(),
                version: TRACK_VERSION,
                fps,
                channels,
            },
            frames,
        };
        track.check()?;
        Ok(track)
    }

    /// Build from a stream of capture frames; `t_rel = t - t_first`.
    pub fn from_capture_frames<'a, I>(channels: Vec<String>, fps: f64, frames: I) -> Result<Self, TrackError>
    where
        I: IntoIterator<Item = &'a CaptureFrame>,
    {
        let mut out = Vec::new();
        let mut first = None;
        for f in frames {
            let t0 = *first.get_or_insert(f.t);
            out.push(TrackFrame {
                t_rel: f.t - t0,
                bs: f.blendshapes.restricted_to(&channels),
                rot: f.rotation,
            });
        }
        Self::new(channels, fps, out)
    }

    fn check(&self) -> Result<(), TrackError> {
        let mut prev: Option<i64> = None;
        for f in &self.frames {
            if f.t_rel < 0 {
                return Err(TrackError::Invalid {
                    t_rel: f.t_rel,
                    msg: "negative t_rel".into(),
                });
            }
            if prev.is_some_and(|p| f.t_rel <= p) {
                return Err(TrackError::Invalid {
                    t_rel: f.t_rel,
                    msg: "t_rel not strictly increasing".into(),
                });
            }
            if let Some(c) = f.bs.channels().find(|c| !self.header.channels.iter().any(|d| d == c)) {
                return Err(TrackError::Invalid {
                    t_rel: f.t_rel,
                    msg: format!("undeclared channel `{c}`"),
                });
            }
            prev = Some(f.t_rel);
        }
        Ok(())
    }

    pub fn header(&self) -> &TrackHeader {
        &self.header
    }

    pub fn channels(&self) -> &[String] {
        &self.header.channels
    }

    pub fn frames(&self) -> &[TrackFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `t_rel` of the last frame.
    pub fn duration_ms(&self) -> i64 {
        self.frames.last().map_or(0, |f| f.t_rel)
    }

    /// Linear interpolation at `t_rel`, clamped to the track's extent.
    pub fn sample(&self, t_rel: i64) -> Option<TrackFrame> {
        let first = self.frames.first()?;
        if t_rel <= first.t_rel {
            return Some(first.clone());
        }
        let idx = self.frames.partition_point(|f| f.t_rel <= t_rel);
        if idx >= self.frames.len() {
            return self.frames.last().cloned();
        }
        let (a, b) = (&self.frames[idx - 1], &self.frames[idx]);
        let alpha = (t_rel - a.t_rel) as f64 / (b.t_rel - a.t_rel) as f64;
        Some(TrackFrame {
            t_rel,
            bs: BlendshapeVector::lerp(&a.bs, &b.bs, alpha),
            rot: HeadRotation::new(
                lerp(a.rot.x, b.rot.x, alpha),
                lerp(a.rot.y, b.rot.y, alpha),
                lerp(a.rot.z, b.rot.z, alpha),
            ),
        })
    }

    /// Serialize to the JSON-lines form. Byte-stable for equal tracks.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TrackError> {
        serde_json::to_writer(&mut w, &self.header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for f in &self.frames {
            serde_json::to_writer(&mut w, f).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<(), TrackError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, TrackError> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
        let (_, header_line) = lines.next().ok_or(TrackError::Malformed {
            line: 1,
            msg: "missing header".into(),
        })?;
        let header: TrackHeader = serde_json::from_str(&header_line?).map_err(|e| TrackError::Malformed {
            line: 1,
            msg: e.to_string(),
        })?;
        if header.format != TRACK_FORMAT || header.version != TRACK_VERSION {
            return Err(TrackError::Malformed {
                line: 1,
                msg: format!("unsupported track format {} v{}", header.format, header.version),
            });
        }
        let mut frames = Vec::new();
        for (i, line) in lines {
            let frame: TrackFrame = serde_json::from_str(&line?).map_err(|e| TrackError::Malformed {
                line: i + 1,
                msg: e.to_string(),
            })?;
            frames.push(frame);
        }
        let track = Self { header, frames };
        track.check()?;
        Ok(track)
    }

    pub fn parse(text: &str) -> Result<Self, TrackError> {
        Self::read_from(text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, TrackError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

impl TrackFrame {
    pub fn from_robot(f: &RobotFrame, t_rel: i64, channels: &[String]) -> Self {
        Self {
            t_rel,
            bs: f.blendshapes.restricted_to(channels),
            rot: f.rotation,
        }
    }
}
