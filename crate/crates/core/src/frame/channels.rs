//! Canonical blendshape channel set.
//!
//! The set is shipped as a plain-text config, one name per line, order
//! significant. Lines starting with `#` are comments; a `# version: <v>`
//! comment names the revision.

use std::sync::OnceLock;

use super::FrameError;

const CANONICAL_TEXT: &str = include_str!("../../data/channels.txt");

/// Number of channels in the canonical capture set.
pub const CHANNEL_COUNT: usize = 52;

/// Jaw and mouth channels driven by lipsync tracks unless configured otherwise.
pub const DEFAULT_LIP_CHANNELS: [&str; 27] = [
    "jawForward",
    "jawLeft",
    "jawOpen",
    "jawRight",
    "mouthClose",
    "mouthDimpleLeft",
    "mouthDimpleRight",
    "mouthFrownLeft",
    "mouthFrownRight",
    "mouthFunnel",
    "mouthLeft",
    "mouthLowerDownLeft",
    "mouthLowerDownRight",
    "mouthPressLeft",
    "mouthPressRight",
    "mouthPucker",
    "mouthRight",
    "mouthRollLower",
    "mouthRollUpper",
    "mouthShrugLower",
    "mouthShrugUpper",
    "mouthSmileLeft",
    "mouthSmileRight",
    "mouthStretchLeft",
    "mouthStretchRight",
    "mouthUpperUpLeft",
    "mouthUpperUpRight",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSet {
    version: String,
    names: Vec<String>,
}

impl ChannelSet {
    /// The built-in 52-channel set.
    pub fn canonical() -> &'static ChannelSet {
        static SET: OnceLock<ChannelSet> = OnceLock::new();
        SET.get_or_init(|| ChannelSet::parse(CANONICAL_TEXT).expect("bundled channel list is valid"))
    }

    pub fn parse(text: &str) -> Result<Self, FrameError> {
        let mut version = String::from("unversioned");
        let mut names: Vec<String> = Vec::new();
        for line in text.lines() {
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
            if names.iter().any(|n| n == line) {
                return Err(FrameError::ChannelList(format!("duplicate channel `{line}`")));
            }
            names.push(line.to_string());
        }
        if names.is_empty() {
            return Err(FrameError::ChannelList("no channels".into()));
        }
        Ok(Self { version, names })
    }

    pub fn from_names<I, S>(version: &str, names: I) -> Result<Self, FrameError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut text = format!("# version: {version}\n");
        for n in names {
            text.push_str(&n.into());
            text.push('\n');
        }
        Self::parse(&text)
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

pub fn default_lip_channels() -> Vec<String> {
    DEFAULT_LIP_CHANNELS.iter().map(|s| s.to_string()).collect()
}
