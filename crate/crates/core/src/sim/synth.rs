use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::frame::{Axis, ChannelSet};
use crate::gateway::RawRecord;
use crate::track::GestureTrack;

use super::SimError;

pub const MAX_SYNTH_FPS: u32 = 120;

/// What the synthetic device shows.
#[derive(Debug, Clone, PartialEq)]
pub enum SynthProfile {
    Neutral,
    /// Rotation `amplitude_deg · sin(2π f t)` about one device axis. When
    /// `channel` is set, that blendshape follows `0.5 + 0.5 · sin(2π f t)`.
    Sinusoid {
        freq_hz: f64,
        axis: Axis,
        amplitude_deg: f64,
        channel: Option<String>,
    },
    /// Replay a recorded track verbatim, timestamps shifted to `t0`.
    Scripted(Arc<GestureTrack>),
}

/// Device-format records at a fixed rate, starting at `t0`.
///
/// An infinite `duration_s` gives an endless neutral or sinusoid stream, or
/// the whole track for a scripted profile.
#[derive(Debug, Clone)]
pub struct SynthSource {
    profile: SynthProfile,
    fps: u32,
    t0: i64,
    end_rel_ms: f64,
    index: u64,
}

impl SynthSource {
    pub fn new(profile: SynthProfile, fps: u32, duration_s: f64, t0: i64) -> Result<Self, SimError> {
        if !(1..=MAX_SYNTH_FPS).contains(&fps) {
            return Err(SimError::Usage(format!("fps must be in 1..={MAX_SYNTH_FPS}, got {fps}")));
        }
        if duration_s.is_nan() || duration_s <= 0.0 {
            return Err(SimError::Usage(format!("duration must be positive, got {duration_s}")));
        }
        if let SynthProfile::Sinusoid {
            freq_hz,
            amplitude_deg,
            channel,
            ..
        } = &profile
        {
            let nyquist = f64::from(fps) / 2.0;
            if !(*freq_hz > 0.0 && *freq_hz < nyquist) {
                return Err(SimError::Usage(format!(
                    "frequency {freq_hz} Hz violates Nyquist for {fps} fps (must be in (0, {nyquist}))"
                )));
            }
            if !(amplitude_deg.abs() <= crate::frame::ROTATION_LIMIT_DEG) {
                return Err(SimError::Usage(format!("amplitude {amplitude_deg}° exceeds ±90°")));
            }
            if let Some(c) = channel {
                if !ChannelSet::canonical().contains(c) {
                    return Err(SimError::Usage(format!("unknown channel `{c}`")));
                }
            }
        }
        Ok(Self {
            profile,
            fps,
            t0,
            end_rel_ms: duration_s * 1000.0,
            index: 0,
        })
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    /// Timestamp of frame `i`, rounded to the millisecond.
    pub fn frame_time(&self, i: u64) -> i64 {
        let fps = u64::from(self.fps);
        self.t0 + ((i * 1000 + fps / 2) / fps) as i64
    }

    fn sinusoid_record(&self, t: i64, freq_hz: f64, axis: Axis, amplitude_deg: f64, channel: Option<&str>) -> RawRecord {
        let phase = 2.0 * PI * freq_hz * (t - self.t0) as f64 / 1000.0;
        let mut rot = [0.0; 3];
        rot[axis.index()] = amplitude_deg * phase.sin();
        let mut bs = neutral_weights();
        if let Some(c) = channel {
            bs.insert(c.to_string(), 0.5 + 0.5 * phase.sin());
        }
        RawRecord {
            t,
            seq: self.index,
            bs,
            rot,
        }
    }
}

fn neutral_weights() -> BTreeMap<String, f64> {
    ChannelSet::canonical().names().iter().map(|n| (n.clone(), 0.0)).collect()
}

impl Iterator for SynthSource {
    type Item = RawRecord;

    fn next(&mut self) -> Option<RawRecord> {
        let rec = match &self.profile {
            SynthProfile::Scripted(track) => {
                let f = track.frames().get(self.index as usize)?;
                if f.t_rel as f64 >= self.end_rel_ms {
                    return None;
                }
                RawRecord {
                    t: self.t0 + f.t_rel,
                    seq: self.index,
                    bs: f.bs.iter().map(|(k, v)| (k.to_string(), v)).collect(),
                    rot: f.rot.to_array(),
                }
            }
            profile => {
                let t = self.frame_time(self.index);
                if (t - self.t0) as f64 >= self.end_rel_ms {
                    return None;
                }
                match profile {
                    SynthProfile::Neutral => RawRecord {
                        t,
                        seq: self.index,
                        bs: neutral_weights(),
                        rot: [0.0; 3],
                    },
                    SynthProfile::Sinusoid {
                        freq_hz,
                        axis,
                        amplitude_deg,
                        channel,
                    } => self.sinusoid_record(t, *freq_hz, *axis, *amplitude_deg, channel.as_deref()),
                    SynthProfile::Scripted(_) => unreachable!(),
                }
            }
        };
        self.index += 1;
        Some(rec)
    }
}

/// Frequency of a roughly sinusoidal series from its mean crossings.
/// Crossing instants are linearly interpolated between samples.
pub fn estimate_frequency(samples: &[(i64, f64)]) -> Option<f64> {
    if samples.len() < 3 {
        return None;
    }
    let mean = samples.iter().map(|s| s.1).sum::<f64>() / samples.len() as f64;
    let mut crossings = Vec::new();
    for w in samples.windows(2) {
        let (t0, a) = (w[0].0 as f64, w[0].1 - mean);
        let (t1, b) = (w[1].0 as f64, w[1].1 - mean);
        if (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0) {
            crossings.push(if a == b { t0 } else { t0 + (t1 - t0) * a / (a - b) });
        }
    }
    if crossings.len() < 2 {
        return None;
    }
    let span_ms = crossings.last()? - crossings.first()?;
    Some((crossings.len() - 1) as f64 / 2.0 / (span_ms / 1000.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64) -> SynthProfile {
        SynthProfile::Sinusoid {
            freq_hz: freq,
            axis: Axis::X,
            amplitude_deg: 10.0,
            channel: None,
        }
    }

    #[test]
    fn neutral_count() {
        let frames: Vec<_> = SynthSource::new(SynthProfile::Neutral, 60, 1.0, 0).unwrap().collect();
        assert_eq!(frames.len(), 60);
        assert!(frames.iter().all(|r| r.rot == [0.0; 3] && r.bs.values().all(|&w| w == 0.0)));
        assert_eq!(frames[1].t, 17);
        assert_eq!(frames[59].t, 983);
    }

    #[test]
    fn sinusoid_peak_at_two_seconds() {
        let mut src = SynthSource::new(sine(0.125), 60, 3.0, 5_000).unwrap();
        let at_2s = src.find(|r| r.t == 7_000).unwrap();
        assert!((at_2s.rot[0] - 10.0).abs() < 1e-12);
        assert_eq!((at_2s.rot[1], at_2s.rot[2]), (0.0, 0.0));
    }

    #[test]
    fn usage_errors() {
        assert!(SynthSource::new(SynthProfile::Neutral, 0, 1.0, 0).is_err());
        assert!(SynthSource::new(SynthProfile::Neutral, 121, 1.0, 0).is_err());
        assert!(SynthSource::new(sine(30.0), 60, 1.0, 0).is_err());
        assert!(SynthSource::new(sine(29.9), 60, 1.0, 0).is_ok());
        assert!(SynthSource::new(SynthProfile::Neutral, 60, 0.0, 0).is_err());
    }

    #[test]
    fn frequency_from_crossings() {
        let s: Vec<(i64, f64)> = SynthSource::new(sine(0.5), 60, 20.0, 0)
            .unwrap()
            .map(|r| (r.t, r.rot[0]))
            .collect();
        let f = estimate_frequency(&s).unwrap();
        assert!((f - 0.5).abs() / 0.5 < 0.01, "{f}");
    }
}
