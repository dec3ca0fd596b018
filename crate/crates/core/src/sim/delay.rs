use std::sync::Arc;

use crate::behavior::{BehaviorEngine, BehaviorService, BehaviorStrategy, TrackLibrary};
use crate::bus::{topics, Bus, Payload, Transport};
use crate::clock::{Clock, SimClock};
use crate::control::ControlEvent;
use crate::frame::{Axis, HeadRotation};
use crate::gateway::{remap_axes, Gateway, RawRecord};
use crate::renderer::{
    ingest_pending, subscribe_inputs, RendererConfig, Renderer, RobotCommand, SimSink, SERVO_PERIOD_MS,
};
use crate::telemetry::Telemetry;

use super::synth::{SynthProfile, SynthSource};
use super::{SimError, SIM_EPOCH_MS};

/// Stimulus for the copy-delay measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayProbe {
    pub freq_hz: f64,
    pub amplitude_deg: f64,
    pub axis: Axis,
    /// Blendshape driven in phase with the rotation.
    pub channel: String,
    pub fps: u32,
    pub duration_s: f64,
    pub delay_s: f64,
    /// Lags searched: `0..=max_lag_ms`.
    pub max_lag_ms: i64,
}

impl Default for DelayProbe {
    fn default() -> Self {
        Self {
            freq_hz: 0.125,
            amplitude_deg: 10.0,
            axis: Axis::X,
            channel: "browInnerUp".into(),
            fps: 60,
            duration_s: 60.0,
            delay_s: 4.0,
            max_lag_ms: 8_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayMeasurement {
    /// Correlation peak of the servo stream, filter delay included.
    pub servo_peak_ms: i64,
    pub fir_delay_ms: f64,
    /// `servo_peak_ms − fir_delay_ms`.
    pub servo_delay_ms: f64,
    pub servo_correlation: f64,
    /// Correlation peak of the unfiltered blendshape stream.
    pub blendshape_delay_ms: i64,
    pub blendshape_correlation: f64,
    pub servo_commands: usize,
    pub blendshape_commands: usize,
}

/// Input series resampled onto a 1 ms grid by linear interpolation.
struct Grid {
    t_first: i64,
    values: Vec<f64>,
}

impl Grid {
    fn new(samples: &[(i64, f64)]) -> Option<Self> {
        let (t_first, t_last) = (samples.first()?.0, samples.last()?.0);
        let mut values = Vec::with_capacity((t_last - t_first + 1) as usize);
        for w in samples.windows(2) {
            let ((t0, a), (t1, b)) = (w[0], w[1]);
            for t in t0..t1 {
                values.push(a + (b - a) * (t - t0) as f64 / (t1 - t0) as f64);
            }
        }
        values.push(samples.last()?.1);
        Some(Self { t_first, values })
    }

    fn at(&self, t: i64) -> Option<f64> {
        let i = t - self.t_first;
        (i >= 0).then(|| self.values.get(i as usize).copied()).flatten()
    }
}

/// Lag (ms) in `0..=max_lag` maximizing the Pearson correlation between
/// `output(t)` and `input(t − lag)`, over outputs at or after `from`.
pub fn correlation_peak(input: &[(i64, f64)], output: &[(i64, f64)], max_lag: i64, from: i64) -> Option<(i64, f64)> {
    let grid = Grid::new(input)?;
    let out: Vec<(i64, f64)> = output.iter().copied().filter(|s| s.0 >= from).collect();
    let mut best: Option<(i64, f64)> = None;
    for lag in 0..=max_lag {
        let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for &(t, y) in &out {
            if let Some(x) = grid.at(t - lag) {
                n += 1.0;
                sx += x;
                sy += y;
                sxx += x * x;
                syy += y * y;
                sxy += x * y;
            }
        }
        if n < 3.0 {
            continue;
        }
        let cov = sxy - sx * sy / n;
        let den = ((sxx - sx * sx / n) * (syy - sy * sy / n)).sqrt();
        if den <= 0.0 {
            continue;
        }
        let r = cov / den;
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((lag, r));
        }
    }
    best
}

/// Robot axis carrying a device axis after the gateway remap, and its sign.
fn robot_axis(device: Axis) -> (usize, f64) {
    let mut unit = HeadRotation::ZERO;
    unit.set_axis(device, 1.0);
    let r = remap_axes(unit).to_array();
    let i = r.iter().position(|v| *v != 0.0).expect("remap keeps unit length");
    (i, r[i].signum())
}

/// Synthetic sinusoid → gateway → bus → copy strategy → renderer → sim sink,
/// all under a simulated clock; the lag is then read off by cross-correlation.
pub fn measure_copy_delay(p: &DelayProbe) -> Result<DelayMeasurement, SimError> {
    let t0 = SIM_EPOCH_MS;
    let clock = SimClock::new(t0);
    let bus = Bus::new();
    let telemetry = Arc::new(Telemetry::new());
    let mut gateway = Gateway::canonical(telemetry.clone());
    let engine = BehaviorEngine::new(TrackLibrary::new(), telemetry.clone());
    let mut behavior = BehaviorService::new(engine, bus.clone())?;
    let sink = SimSink::new(clock.clone() as Arc<dyn Clock>);
    let mut renderer = Renderer::new(
        crate::renderer::StateCell::new(),
        RendererConfig::default(),
        Box::new(sink.clone()),
        telemetry,
    )?;
    let group_delay_ms = renderer_group_delay(&renderer);
    let inputs = subscribe_inputs(&bus)?;

    bus.publish(
        topics::BEHAVIOR_SET,
        t0,
        Payload::ControlEvent(ControlEvent::SetBehavior {
            strategy: BehaviorStrategy::Copy { delay_s: p.delay_s },
        }),
    )?;

    let profile = SynthProfile::Sinusoid {
        freq_hz: p.freq_hz,
        axis: p.axis,
        amplitude_deg: p.amplitude_deg,
        channel: Some(p.channel.clone()),
    };
    let records: Vec<RawRecord> = SynthSource::new(profile, p.fps, p.duration_s, t0)?.collect();
    let ticks = (p.duration_s * 1000.0 / SERVO_PERIOD_MS as f64).round() as u64;
    let mut next = 0;
    for _ in 0..ticks {
        let now = clock.now_ms();
        while let Some(r) = records.get(next).filter(|r| r.t <= now) {
            gateway.ingest_and_publish(r.to_line().as_bytes(), &bus, now)?;
            next += 1;
        }
        behavior.poll()?;
        ingest_pending(&inputs, renderer.cell(), now);
        renderer.tick(now);
        clock.advance(SERVO_PERIOD_MS);
    }

    let (out_axis, sign) = robot_axis(p.axis);
    let in_rot: Vec<(i64, f64)> = records.iter().map(|r| (r.t, r.rot[p.axis.index()])).collect();
    let in_bs: Vec<(i64, f64)> = records.iter().map(|r| (r.t, r.bs[&p.channel])).collect();
    let mut servo = Vec::new();
    let mut shapes = Vec::new();
    for c in sink.commands() {
        match c.command {
            RobotCommand::Servo(s) => servo.push((s.t, sign * s.rotation.to_array()[out_axis])),
            RobotCommand::Blendshape(b) => shapes.push((b.t, b.blendshapes.get(&p.channel).unwrap_or(0.0))),
        }
    }
    // skip warm-up and the initial crossfade
    let settle = t0 + (p.delay_s * 1000.0) as i64 + 2_000;
    let none = || SimError::Usage("signal too short to correlate".into());
    let (servo_peak_ms, servo_correlation) =
        correlation_peak(&in_rot, &servo, p.max_lag_ms, settle).ok_or_else(none)?;
    let (blendshape_delay_ms, blendshape_correlation) =
        correlation_peak(&in_bs, &shapes, p.max_lag_ms, settle).ok_or_else(none)?;
    Ok(DelayMeasurement {
        servo_peak_ms,
        fir_delay_ms: group_delay_ms,
        servo_delay_ms: servo_peak_ms as f64 - group_delay_ms,
        servo_correlation,
        blendshape_delay_ms,
        blendshape_correlation,
        servo_commands: servo.len(),
        blendshape_commands: shapes.len(),
    })
}

fn renderer_group_delay(r: &Renderer) -> f64 {
    (r.config().fir_taps.len() - 1) as f64 / 2.0 * SERVO_PERIOD_MS as f64
}
