//! Inputs shared by the pipeline benchmarks.

use gesture_relay::frame::HeadRotation;
use gesture_relay::gateway::RawRecord;
use gesture_relay::sim::{SynthProfile, SynthSource};
use gesture_relay::stats::RepeatedMeasures;
use gesture_relay::CaptureFrame;

/// `n` capture frames at 60 fps with a slow nod and a moving brow.
pub fn capture_frames(n: usize) -> Vec<CaptureFrame> {
    (0..n)
        .map(|i| {
            let t = (i as i64 * 1000) / 60;
            let phase = i as f64 / 60.0 * std::f64::consts::TAU * 0.5;
            let mut f = CaptureFrame::neutral(t, i as u64);
            f.rotation = HeadRotation::new(10.0 * phase.sin(), 5.0 * phase.cos(), 0.0);
            f.blendshapes.set("browInnerUp", 0.5 + 0.5 * phase.sin());
            f
        })
        .collect()
}

/// Raw device records as the gateway receives them.
pub fn raw_lines(n: usize) -> Vec<String> {
    let profile = SynthProfile::Sinusoid {
        freq_hz: 0.5,
        axis: gesture_relay::frame::Axis::X,
        amplitude_deg: 10.0,
        channel: Some("jawOpen".into()),
    };
    SynthSource::new(profile, 60, n as f64 / 60.0, 0)
        .expect("valid profile")
        .map(|r: RawRecord| r.to_line())
        .collect()
}

/// Likert-like scores, `n` participants by 3 conditions.
pub fn likert_scores(n: usize) -> RepeatedMeasures {
    let rows = (0..n)
        .map(|i| (0..3).map(|j| ((i * 7 + j * 3) % 7 + 1) as f64).collect())
        .collect();
    RepeatedMeasures::new(rows, None).expect("rectangular")
}
