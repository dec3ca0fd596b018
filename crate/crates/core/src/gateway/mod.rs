//! Capture gateway: turns raw device records into canonical
//! [`CaptureFrame`]s and republishes them on `capture.frames`.
//!
//! Per record: parse, rename channels through the [`ChannelMapping`], clamp
//! weights, remap the rotation axes, clamp rotation, then drop anything that
//! does not advance the stream's timestamp.

mod mapping;
pub mod tcp;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{topics, BusError, Payload, Transport};
use crate::frame::{validate_frame, BlendshapeVector, CaptureFrame, ChannelSet, HeadRotation};
use crate::telemetry::Telemetry;

pub use mapping::ChannelMapping;

pub const DEFAULT_CAPTURE_PORT: u16 = 7011;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("malformed record: {0}")]
    Parse(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("invalid mapping: {0}")]
    Mapping(String),
    #[error("out-of-order frame t={t} (last accepted t={last})")]
    OutOfOrder { t: i64, last: i64 },
    #[error("frame failed validation: {0}")]
    Invalid(String),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// A device record before normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub t: i64,
    pub seq: u64,
    pub bs: BTreeMap<String, f64>,
    pub rot: [f64; 3],
}

impl RawRecord {
    /// One newline-terminated JSON line.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("raw record serializes");
        s.push('\n');
        s
    }
}

/// Device-format adapter. The default reads one JSON object per line.
pub trait RecordParser: Send {
    fn parse(&self, raw: &[u8]) -> Result<RawRecord, GatewayError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct JsonLineParser;

impl RecordParser for JsonLineParser {
    fn parse(&self, raw: &[u8]) -> Result<RawRecord, GatewayError> {
        let text = std::str::from_utf8(raw).map_err(|e| GatewayError::Parse(e.to_string()))?;
        serde_json::from_str(text.trim_end()).map_err(|e| GatewayError::Parse(e.to_string()))
    }
}

/// Device axes to robot axes: a +90° turn about z applied to the x/y
/// components, `(x, y, z) -> (-y, x, z)`.
pub fn remap_axes(r: HeadRotation) -> HeadRotation {
    // `+ 0.0` folds a negated zero back to +0.
    HeadRotation::new(-r.y + 0.0, r.x, r.z)
}

/// Rename device channels to robot channels and clamp weights to `[0, 1]`.
/// Mapped channels absent from the input are filled with 0 and counted.
pub fn rename_channels(
    raw: &BTreeMap<String, f64>,
    mapping: &ChannelMapping,
    telemetry: Option<&Telemetry>,
) -> Result<BlendshapeVector, GatewayError> {
    let mut out = BlendshapeVector::new();
    for (name, w) in raw {
        let target = mapping
            .target(name)
            .ok_or_else(|| GatewayError::UnknownChannel(name.clone()))?;
        out.set(target, crate::frame::clamp_weight(*w));
    }
    for (source, target) in mapping.entries() {
        if !raw.contains_key(source) {
            out.set(target.as_str(), 0.0);
            if let Some(t) = telemetry {
                t.incr("gateway.missing_channel");
            }
            log::debug!("capture record missing channel `{source}`, filled with 0");
        }
    }
    Ok(out)
}

pub struct Gateway {
    mapping: ChannelMapping,
    channels: ChannelSet,
    parser: Box<dyn RecordParser>,
    last: Option<CaptureFrame>,
    telemetry: Arc<Telemetry>,
}

impl Gateway {
    /// `mapping` must map its sources one-to-one onto `channels`.
    pub fn new(mapping: ChannelMapping, channels: ChannelSet, telemetry: Arc<Telemetry>) -> Result<Self, GatewayError> {
        mapping.check_against(&channels)?;
        Ok(Self {
            mapping,
            channels,
            parser: Box::new(JsonLineParser),
            last: None,
            telemetry,
        })
    }

    /// Identity mapping over the canonical channel set.
    pub fn canonical(telemetry: Arc<Telemetry>) -> Self {
        let channels = ChannelSet::canonical().clone();
        Self::new(ChannelMapping::identity(&channels), channels, telemetry).expect("identity mapping is valid")
    }

    pub fn with_parser(mut self, parser: Box<dyn RecordParser>) -> Self {
        self.parser = parser;
        self
    }

    pub fn telemetry(&self) -> &Arc<Telemetry> {
        &self.telemetry
    }

    /// Normalize one raw record. Errors are counted; the stream continues.
    pub fn ingest(&mut self, raw: &[u8]) -> Result<CaptureFrame, GatewayError> {
        let result = self.normalize(raw);
        match &result {
            Ok(f) => self.last = Some(f.clone()),
            Err(GatewayError::Parse(_)) => self.telemetry.incr("gateway.parse_errors"),
            Err(GatewayError::UnknownChannel(_)) => self.telemetry.incr("gateway.mapping_errors"),
            Err(GatewayError::OutOfOrder { .. }) => self.telemetry.incr("gateway.out_of_order"),
            Err(_) => self.telemetry.incr("gateway.rejected"),
        }
        result
    }

    fn normalize(&self, raw: &[u8]) -> Result<CaptureFrame, GatewayError> {
        let rec = self.parser.parse(raw)?;
        let blendshapes = rename_channels(&rec.bs, &self.mapping, Some(&self.telemetry))?;
        let rotation = remap_axes(HeadRotation::from(rec.rot)).clamped();
        let frame = CaptureFrame {
            t: rec.t,
            seq: rec.seq,
            blendshapes,
            rotation,
        };
        if let Some(last) = &self.last {
            if frame.t <= last.t || frame.seq <= last.seq {
                return Err(GatewayError::OutOfOrder { t: frame.t, last: last.t });
            }
        }
        let report = validate_frame(&frame, None, &self.channels);
        if let Some(v) = report.violations.first() {
            return Err(GatewayError::Invalid(v.to_string()));
        }
        Ok(frame)
    }

    /// Ingest and publish on `capture.frames`. `received_at` is the gateway's
    /// own clock, used only for the latency gauge.
    pub fn ingest_and_publish(
        &mut self,
        raw: &[u8],
        bus: &dyn Transport,
        received_at: i64,
    ) -> Result<CaptureFrame, GatewayError> {
        let frame = self.ingest(raw)?;
        self.telemetry
            .set_gauge("gateway.latency_ms", (received_at - frame.t) as f64);
        bus.publish(topics::CAPTURE_FRAMES, frame.t, Payload::CaptureFrame(frame.clone()))?;
        Ok(frame)
    }
}
