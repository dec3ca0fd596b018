use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use crate::bus::{BusMessage, Payload, Subscription, Transport};
use crate::frame::{CaptureFrame, ChannelSet, FrameSource, HeadRotation, RobotFrame};
use crate::playback::LipsyncFrame;
use crate::track::{GestureTrack, TrackFrame};

use super::SimError;

/// A finished recording; `warning` is set for an empty window.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub track: GestureTrack,
    pub warning: Option<String>,
}

/// Collects frame payloads from one subscription into a track.
pub struct Recorder {
    sub: Subscription,
    samples: Vec<(i64, TrackFrame)>,
    skipped: u64,
}

impl Recorder {
    pub fn new(bus: &dyn Transport, topic: &str) -> Result<Self, SimError> {
        Ok(Self {
            sub: bus.subscribe(topic)?,
            samples: Vec::new(),
            skipped: 0,
        })
    }

    /// Drain whatever is queued. Returns the number of frames taken.
    pub fn poll(&mut self) -> usize {
        let mut n = 0;
        while let Some(m) = self.sub.try_recv() {
            n += usize::from(self.take(m));
        }
        n
    }

    /// Record for `window` of wall-clock time.
    pub fn record_for(&mut self, window: Duration) -> usize {
        let end = Instant::now() + window;
        let mut n = 0;
        while let Some(left) = end.checked_duration_since(Instant::now()) {
            if let Some(m) = self.sub.recv_timeout(left.min(Duration::from_millis(20))) {
                n += usize::from(self.take(m));
            }
        }
        n + self.poll()
    }

    fn take(&mut self, m: BusMessage) -> bool {
        let (bs, rot) = match m.payload {
            Payload::CaptureFrame(f) => (f.blendshapes, f.rotation),
            Payload::RobotFrame(f) => (f.blendshapes, f.rotation),
            Payload::LipsyncFrame(f) => (f.bs, HeadRotation::ZERO),
            _ => return false,
        };
        if self.samples.last().is_some_and(|(t, _)| m.t <= *t) {
            self.skipped += 1;
            return false;
        }
        self.samples.push((m.t, TrackFrame { t_rel: 0, bs, rot }));
        true
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn finish(self) -> Result<Recording, SimError> {
        let t_first = self.samples.first().map_or(0, |s| s.0);
        let times: Vec<i64> = self.samples.iter().map(|s| s.0).collect();
        let channels = channels_of(self.samples.iter().map(|s| &s.1));
        let frames = self
            .samples
            .into_iter()
            .map(|(t, mut f)| {
                f.t_rel = t - t_first;
                f
            })
            .collect::<Vec<_>>();
        let warning = frames.is_empty().then(|| "no frames recorded; track is empty".to_string());
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        let track = GestureTrack::new(channels, nominal_fps(&times), frames)?;
        Ok(Recording { track, warning })
    }
}

/// Canonical channels present in the frames, in canonical order, then any
/// others sorted by name.
fn channels_of<'a>(frames: impl Iterator<Item = &'a TrackFrame>) -> Vec<String> {
    let seen: BTreeSet<String> = frames.flat_map(|f| f.bs.channels().map(str::to_string)).collect();
    let canonical = ChannelSet::canonical();
    let mut out: Vec<String> = canonical.names().iter().filter(|n| seen.contains(*n)).cloned().collect();
    out.extend(seen.into_iter().filter(|n| !canonical.contains(n)));
    out
}

/// 1000 / median frame interval, rounded to 0.01 fps.
fn nominal_fps(times: &[i64]) -> f64 {
    let mut d: Vec<i64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    if d.is_empty() {
        return 0.0;
    }
    d.sort_unstable();
    let median = d[d.len() / 2] as f64;
    (100_000.0 / median).round() / 100.0
}

/// Which payload a replayed track becomes, judged from the topic name.
fn payload_for(topic: &str, t: i64, seq: u64, f: &TrackFrame) -> Payload {
    if topic.starts_with("lipsync") {
        Payload::LipsyncFrame(LipsyncFrame {
            t_rel: f.t_rel,
            bs: f.bs.clone(),
        })
    } else if topic.starts_with("behavior") {
        Payload::RobotFrame(RobotFrame {
            t,
            blendshapes: f.bs.clone(),
            rotation: f.rot,
            source: FrameSource::Behavior,
        })
    } else {
        Payload::CaptureFrame(CaptureFrame {
            t,
            seq,
            blendshapes: f.bs.clone(),
            rotation: f.rot,
        })
    }
}

/// Bus messages replaying `track` on `topic` from `t0`. The content is not
/// re-normalized, so a recording of `capture.frames` replays unchanged.
pub fn replay_messages(track: &GestureTrack, topic: &str, t0: i64) -> Result<Vec<BusMessage>, SimError> {
    track
        .frames()
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let t = t0 + f.t_rel;
            BusMessage::new(topic, t, payload_for(topic, t, i as u64, f)).map_err(SimError::from)
        })
        .collect()
}

/// Publish a replay, paced against wall-clock time when `realtime` is set.
pub fn replay(track: &GestureTrack, topic: &str, bus: &dyn Transport, t0: i64, realtime: bool) -> Result<usize, SimError> {
    let start = Instant::now();
    let msgs = replay_messages(track, topic, t0)?;
    let n = msgs.len();
    for m in msgs {
        if realtime {
            let due = start + Duration::from_millis((m.t - t0).max(0) as u64);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
        bus.publish_message(m)?;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::{topics, Bus};

    #[test]
    fn record_replay_record_is_stable() {
        let bus = Bus::new();
        let mut rec = Recorder::new(&bus, topics::CAPTURE_FRAMES).unwrap();
        for i in 0..30 {
            let mut f = CaptureFrame::neutral(1_000 + i * 33, i as u64);
            f.rotation = HeadRotation::new(i as f64 * 0.1, -1.0, 0.5);
            f.blendshapes.set("jawOpen", (i as f64 / 30.0).min(1.0));
            bus.publish(topics::CAPTURE_FRAMES, f.t, Payload::CaptureFrame(f)).unwrap();
        }
        rec.poll();
        let first = rec.finish().unwrap();
        assert!(first.warning.is_none());
        assert_eq!(first.track.header().fps, 30.3);

        let mut rec = Recorder::new(&bus, topics::CAPTURE_FRAMES).unwrap();
        replay(&first.track, topics::CAPTURE_FRAMES, &bus, 90_000, false).unwrap();
        rec.poll();
        let second = rec.finish().unwrap();
        assert_eq!(first.track.to_jsonl(), second.track.to_jsonl());
    }

    #[test]
    fn empty_window_warns() {
        let bus = Bus::new();
        let rec = Recorder::new(&bus, topics::BEHAVIOR_FRAMES).unwrap();
        let r = rec.finish().unwrap();
        assert!(r.track.is_empty());
        assert!(r.warning.is_some());
    }
}
