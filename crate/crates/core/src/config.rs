//! Service configuration: a TOML file plus `GR_*` environment overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::DEFAULT_BUS_PORT;
use crate::frame::default_lip_channels;
use crate::gateway::DEFAULT_CAPTURE_PORT;
use crate::renderer::{
    design_lowpass, FilterError, FirFilter, RendererConfig, DEFAULT_CUTOFF_HZ, DEFAULT_STALENESS_MS, DEFAULT_TAPS,
    SERVO_RATE_HZ,
};

pub const DEFAULT_CONTROL_PORT: u16 = 7080;
pub const ENV_BUS_PORT: &str = "GR_BUS_PORT";
pub const ENV_CONTROL_PORT: &str = "GR_CONTROL_PORT";
pub const ENV_CAPTURE_PORT: &str = "GR_CAPTURE_PORT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Io(#[from] std::io::Error),
    #[error("{var}: `{value}` is not a port number")]
    Env { var: &'static str, value: String },
    #[error("renderer: {0}")]
    Renderer(#[from] FilterError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BusSection {
    pub port: u16,
}

impl Default for BusSection {
    fn default() -> Self {
        Self { port: DEFAULT_BUS_PORT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub port: u16,
}

impl Default for ControlSection {
    fn default() -> Self {
        Self {
            port: DEFAULT_CONTROL_PORT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptureSection {
    pub port: u16,
}

impl Default for CaptureSection {
    fn default() -> Self {
        Self {
            port: DEFAULT_CAPTURE_PORT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RendererSection {
    /// Tap count for the default low-pass design; ignored when `taps` is set.
    pub fir_taps: usize,
    pub fir_cutoff_hz: f64,
    /// Explicit filter coefficients.
    pub taps: Option<Vec<f64>>,
    pub lip_channels: Vec<String>,
    pub staleness_ms: i64,
}

impl Default for RendererSection {
    fn default() -> Self {
        Self {
            fir_taps: DEFAULT_TAPS,
            fir_cutoff_hz: DEFAULT_CUTOFF_HZ,
            taps: None,
            lip_channels: default_lip_channels(),
            staleness_ms: DEFAULT_STALENESS_MS,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub bus: BusSection,
    pub control: ControlSection,
    pub capture: CaptureSection,
    pub renderer: RendererSection,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// File (if any), then the process environment.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut c = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.apply_env(|k| std::env::var(k).ok())?;
        Ok(c)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        for (var, slot) in [
            (ENV_BUS_PORT, &mut self.bus.port),
            (ENV_CONTROL_PORT, &mut self.control.port),
            (ENV_CAPTURE_PORT, &mut self.capture.port),
        ] {
            if let Some(v) = get(var) {
                *slot = v.trim().parse().map_err(|_| ConfigError::Env { var, value: v })?;
            }
        }
        Ok(())
    }

    pub fn renderer_config(&self) -> Result<RendererConfig, ConfigError> {
        let r = &self.renderer;
        let fir_taps = match &r.taps {
            Some(t) => t.clone(),
            None => design_lowpass(r.fir_taps, r.fir_cutoff_hz, SERVO_RATE_HZ)?,
        };
        FirFilter::new(fir_taps.clone())?;
        Ok(RendererConfig {
            fir_taps,
            lip_channels: r.lip_channels.clone(),
            staleness_ms: r.staleness_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let mut c = Config::parse("[bus]\nport = 9000\n[renderer]\nstaleness_ms = 150\n").unwrap();
        assert_eq!((c.bus.port, c.control.port, c.renderer.staleness_ms), (9000, 7080, 150));
        c.apply_env(|k| (k == ENV_CONTROL_PORT).then(|| "7181".to_string())).unwrap();
        assert_eq!(c.control.port, 7181);
        assert!(c.apply_env(|k| (k == ENV_BUS_PORT).then(|| "x".to_string())).is_err());
        assert!(Config::parse("[bus]\nprot = 1\n").is_err());
    }

    #[test]
    fn default_renderer_matches_builtin() {
        assert_eq!(Config::default().renderer_config().unwrap(), RendererConfig::default());
        let mut c = Config::default();
        c.renderer.taps = Some(vec![0.5, 0.6]);
        assert!(c.renderer_config().is_err());
    }
}
