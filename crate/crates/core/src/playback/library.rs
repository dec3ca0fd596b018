use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::LipsyncTrack;
use crate::track::GestureTrack;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
/// Largest tolerated difference between audio and lipsync durations.
pub const DURATION_TOLERANCE_MS: i64 = 50;
/// Library size recorded per actor.
pub const PROMPTS_PER_ACTOR: usize = 232;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptCategory {
    Greeting,
    ItemDescription,
    Proposal,
    Filler,
    Answer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptVariant {
    pub audio: PathBuf,
    /// Known for WAV files only.
    pub audio_duration_ms: Option<i64>,
    pub track: LipsyncTrack,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRecording {
    pub prompt_id: String,
    pub category: PromptCategory,
    pub variants: Vec<PromptVariant>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PromptLibrary {
    pub actor_id: String,
    prompts: BTreeMap<String, PromptRecording>,
}

impl PromptLibrary {
    pub fn new(actor_id: impl Into<String>) -> Self {
        Self {
            actor_id: actor_id.into(),
            prompts: BTreeMap::new(),
        }
    }

    /// Fails on a duplicate id or a recording without variants.
    pub fn insert(&mut self, rec: PromptRecording) -> Result<(), LoadError> {
        if rec.variants.is_empty() {
            return Err(LoadError::single(format!("prompt `{}` has no variants", rec.prompt_id)));
        }
        if self.prompts.contains_key(&rec.prompt_id) {
            return Err(LoadError::single(format!("duplicate prompt id `{}`", rec.prompt_id)));
        }
        self.prompts.insert(rec.prompt_id.clone(), rec);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&PromptRecording> {
        self.prompts.get(id)
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.prompts.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptRecording> {
        self.prompts.values()
    }
}

/// Every problem found while loading, in manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct LoadError {
    pub problems: Vec<String>,
}

impl LoadError {
    fn single(p: String) -> Self {
        Self { problems: vec![p] }
    }
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "prompt library has {} problem(s)", self.problems.len())?;
        for p in &self.problems {
            write!(f, "\n  {p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub category: PromptCategory,
    pub variants: Vec<ManifestVariant>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestVariant {
    pub audio: String,
    pub track: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedLibrary {
    pub library: PromptLibrary,
    pub warnings: Vec<String>,
}

/// Load and fully validate the library in `dir`. The actor id defaults to the
/// directory name.
pub fn load_library(dir: &Path, lip_channels: &[String]) -> Result<LoadedLibrary, LoadError> {
    let actor = dir.file_name().and_then(|s| s.to_str()).unwrap_or("actor");
    load_library_as(dir, actor, lip_channels)
}

pub fn load_library_as(dir: &Path, actor_id: &str, lip_channels: &[String]) -> Result<LoadedLibrary, LoadError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| LoadError::single(format!("{}: {e}", manifest_path.display())))?;
    let mut problems = Vec::new();
    let mut warnings = Vec::new();
    let mut library = PromptLibrary::new(actor_id);
    let mut seen = BTreeSet::new();

    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let entry: ManifestEntry = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) => {
                problems.push(format!("manifest line {lineno}: {e}"));
                continue;
            }
        };
        if !seen.insert(entry.id.clone()) {
            problems.push(format!("manifest line {lineno}: duplicate prompt id `{}`", entry.id));
            continue;
        }
        if entry.variants.is_empty() {
            problems.push(format!("prompt `{}`: no variants", entry.id));
            continue;
        }
        let mut variants = Vec::new();
        for (vi, v) in entry.variants.iter().enumerate() {
            match load_variant(dir, v, lip_channels) {
                Ok(var) => variants.push(var),
                Err(p) => problems.push(format!("prompt `{}` variant {vi}: {p}", entry.id)),
            }
        }
        if variants.len() == entry.variants.len() {
            library
                .insert(PromptRecording {
                    prompt_id: entry.id,
                    category: entry.category,
                    variants,
                })
                .expect("checked above");
        }
    }

    if !problems.is_empty() {
        return Err(LoadError { problems });
    }
    if library.is_empty() {
        let w = format!("prompt library {} is empty", dir.display());
        log::warn!("{w}");
        warnings.push(w);
    }
    Ok(LoadedLibrary { library, warnings })
}

fn load_variant(dir: &Path, v: &ManifestVariant, lip_channels: &[String]) -> Result<PromptVariant, String> {
    let audio = dir.join(&v.audio);
    if !audio.is_file() {
        return Err(format!("missing audio file {}", v.audio));
    }
    let track_path = dir.join(&v.track);
    let track = GestureTrack::load(&track_path).map_err(|e| format!("malformed track {}: {e}", v.track))?;
    let track = LipsyncTrack::from_gesture_track(&track, lip_channels).map_err(|e| format!("track {}: {e}", v.track))?;
    let audio_duration_ms = if audio.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
        let d = wav_duration_ms(&audio).map_err(|e| format!("audio {}: {e}", v.audio))?;
        if (d - track.duration_ms()).abs() > DURATION_TOLERANCE_MS {
            return Err(format!(
                "duration mismatch: audio {d} ms, lipsync {} ms",
                track.duration_ms()
            ));
        }
        Some(d)
    } else {
        None
    };
    Ok(PromptVariant {
        audio,
        audio_duration_ms,
        track,
    })
}

/// Duration of a RIFF/WAVE file from its `fmt ` and `data` chunk headers.
pub fn wav_duration_ms(path: &Path) -> Result<i64, String> {
    let mut f = std::fs::File::open(path).map_err(|e| e.to_string())?;
    let mut head = [0u8; 12];
    f.read_exact(&mut head).map_err(|_| "truncated header".to_string())?;
    if &head[0..4] != b"RIFF" || &head[8..12] != b"WAVE" {
        return Err("not a RIFF/WAVE file".into());
    }
    let mut byte_rate: Option<u32> = None;
    loop {
        let mut ch = [0u8; 8];
        if f.read_exact(&mut ch).is_err() {
            return Err("no data chunk".into());
        }
        let size = u32::from_le_bytes([ch[4], ch[5], ch[6], ch[7]]);
        match &ch[0..4] {
            b"fmt " => {
                let mut body = vec![0u8; size as usize];
                f.read_exact(&mut body).map_err(|_| "truncated fmt chunk".to_string())?;
                if body.len() < 12 {
                    return Err("short fmt chunk".into());
                }
                byte_rate = Some(u32::from_le_bytes([body[8], body[9], body[10], body[11]]));
                if size % 2 == 1 {
                    std::io::copy(&mut (&mut f).take(1), &mut std::io::sink()).map_err(|e| e.to_string())?;
                }
            }
            b"data" => {
                let rate = byte_rate.filter(|r| *r > 0).ok_or("data chunk before fmt chunk")?;
                return Ok((size as f64 * 1000.0 / rate as f64).round() as i64);
            }
            _ => {
                let skip = size as u64 + (size as u64 % 2);
                let n = std::io::copy(&mut (&mut f).take(skip), &mut std::io::sink()).map_err(|e| e.to_string())?;
                if n < skip {
                    return Err("truncated chunk".into());
                }
            }
        }
    }
}

/// Minimal 16-bit mono PCM header followed by silence.
pub fn write_silent_wav(path: &Path, duration_ms: i64, sample_rate: u32) -> std::io::Result<()> {
    let samples = (duration_ms.max(0) as u64 * sample_rate as u64 / 1000) as u32;
    let data_len = samples * 2;
    let mut buf = Vec::with_capacity(44 + data_len as usize);
    buf.extend_from_slice(b"RIFF");
    buf.extend_from_slice(&(36 + data_len).to_le_bytes());
    buf.extend_from_slice(b"WAVEfmt ");
    buf.extend_from_slice(&16u32.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&1u16.to_le_bytes());
    buf.extend_from_slice(&sample_rate.to_le_bytes());
    buf.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    buf.extend_from_slice(&2u16.to_le_bytes());
    buf.extend_from_slice(&16u16.to_le_bytes());
    buf.extend_from_slice(b"data");
    buf.extend_from_slice(&data_len.to_le_bytes());
    buf.resize(44 + data_len as usize, 0);
    std::fs::write(path, buf)
}
