use std::collections::BTreeSet;

use super::GatewayError;
use crate::frame::ChannelSet;

/// Device channel name → robot channel name, loaded from a two-column text
/// file (`source whitespace target`, `#` comments, optional
/// `# version: <v>` line).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelMapping {
    version: String,
    entries: Vec<(String, String)>,
}

impl ChannelMapping {
    pub fn parse(text: &str) -> Result<Self, GatewayError> {
        let mut version = String::from("unversioned");
        let mut entries: Vec<(String, String)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version:") {
                    version = v.trim().to_string();
                }
                continue;
            }
            let mut cols = line.split_whitespace();
            let (Some(src), Some(dst), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(GatewayError::Mapping(format!("line {}: expected two columns", lineno + 1)));
            };
            if entries.iter().any(|(s, _)| s == src) {
                return Err(GatewayError::Mapping(format!("source `{src}` mapped twice")));
            }
            if entries.iter().any(|(_, d)| d == dst) {
                return Err(GatewayError::Mapping(format!("target `{dst}` used twice")));
            }
            entries.push((src.to_string(), dst.to_string()));
        }
        Ok(Self { version, entries })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, GatewayError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn identity(set: &ChannelSet) -> Self {
        Self {
            version: format!("identity/{}", set.version()),
            entries: set.names().iter().map(|n| (n.clone(), n.clone())).collect(),
        }
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &String)> {
        self.entries.iter().map(|(s, d)| (s, d))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn target(&self, source: &str) -> Option<&str> {
        self.entries.iter().find(|(s, _)| s == source).map(|(_, d)| d.as_str())
    }

    /// Total and injective onto `channels`: every canonical channel is the
    /// target of exactly one source.
    pub fn check_against(&self, channels: &ChannelSet) -> Result<(), GatewayError> {
        let targets: BTreeSet<&str> = self.entries.iter().map(|(_, d)| d.as_str()).collect();
        if targets.len() != self.entries.len() {
            return Err(GatewayError::Mapping("mapping is not injective".into()));
        }
        if let Some(extra) = targets.iter().find(|t| !channels.contains(t)) {
            return Err(GatewayError::Mapping(format!("target `{extra}` is not a canonical channel")));
        }
        if let Some(missing) = channels.names().iter().find(|n| !targets.contains(n.as_str())) {
            return Err(GatewayError::Mapping(format!("no source maps to `{missing}`")));
        }
        Ok(())
    }
}
