use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame::BlendshapeVector;
use crate::playback::{
    write_silent_wav, LipsyncFrame, LipsyncTrack, ManifestEntry, ManifestVariant, PromptCategory, PromptLibrary,
    PromptRecording, PromptVariant, MANIFEST_FILE, PROMPTS_PER_ACTOR,
};

use super::SimError;

/// Lipsync frame spacing of synthetic tracks.
pub const LIPSYNC_FRAME_MS: i64 = 40;
const WAV_SAMPLE_RATE: u32 = 8_000;

/// Prompt counts per category for a full synthetic library.
pub const CATEGORY_COUNTS: [(PromptCategory, usize); 5] = [
    (PromptCategory::Greeting, 8),
    (PromptCategory::ItemDescription, 120),
    (PromptCategory::Proposal, 40),
    (PromptCategory::Filler, 32),
    (PromptCategory::Answer, 32),
];

fn category_slug(c: PromptCategory) -> &'static str {
    match c {
        PromptCategory::Greeting => "greeting",
        PromptCategory::ItemDescription => "item-description",
        PromptCategory::Proposal => "proposal",
        PromptCategory::Filler => "filler",
        PromptCategory::Answer => "answer",
    }
}

/// Id of the `n`-th (1-based) synthetic prompt of a category.
pub fn prompt_id(category: PromptCategory, n: usize) -> String {
    format!("{}-{n:03}", category_slug(category))
}

/// Category layout for `count` prompts: the full layout scaled down, at
/// least one prompt per category.
fn layout(count: usize) -> Vec<(PromptCategory, usize)> {
    if count >= PROMPTS_PER_ACTOR {
        return CATEGORY_COUNTS.to_vec();
    }
    let mut out: Vec<(PromptCategory, usize)> = CATEGORY_COUNTS
        .iter()
        .map(|&(c, n)| (c, (n * count / PROMPTS_PER_ACTOR).max(1)))
        .collect();
    let total: usize = out.iter().map(|x| x.1).sum();
    if total < count {
        out[1].1 += count - total;
    }
    out
}

/// Jaw and lip motion at roughly syllable rate; duration is the last `t_rel`.
fn synthetic_lipsync(duration_ms: i64, rng: &mut ChaCha8Rng, lip_channels: &[String]) -> LipsyncTrack {
    let rate_hz = rng.gen_range(3.0..5.0);
    let phase: f64 = rng.gen_range(0.0..2.0 * PI);
    let jaw = lip_channels.iter().find(|c| *c == "jawOpen").cloned();
    let lips = lip_channels.iter().find(|c| *c == "mouthFunnel").cloned();
    let mut frames = Vec::new();
    let mut t = 0;
    loop {
        let s = (2.0 * PI * rate_hz * t as f64 / 1000.0 + phase).sin();
        let mut bs = BlendshapeVector::new();
        if let Some(c) = &jaw {
            bs.set(c.clone(), 0.3 + 0.3 * s);
        }
        if let Some(c) = &lips {
            bs.set(c.clone(), 0.2 - 0.2 * s);
        }
        frames.push(LipsyncFrame { t_rel: t, bs });
        if t == duration_ms {
            break;
        }
        t = (t + LIPSYNC_FRAME_MS).min(duration_ms);
    }
    LipsyncTrack::new(frames, lip_channels).expect("synthetic track uses lip channels only")
}

struct Spec {
    id: String,
    category: PromptCategory,
    variants: Vec<(String, LipsyncTrack)>,
}

fn specs(actor: &str, count: usize, variants: usize, seed: u64, lip_channels: &[String]) -> Vec<Spec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(actor.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(u64::from(b))));
    let mut out = Vec::new();
    for (category, n) in layout(count) {
        for k in 1..=n {
            let id = prompt_id(category, k);
            let variants = (0..variants.max(1))
                .map(|v| {
                    let duration = rng.gen_range(6..=40) * 100;
                    (format!("{id}.{v}"), synthetic_lipsync(duration, &mut rng, lip_channels))
                })
                .collect();
            out.push(Spec { id, category, variants });
        }
    }
    out
}

/// In-memory library with placeholder audio paths, for simulated playback.
pub fn synthetic_library(actor: &str, count: usize, variants: usize, seed: u64, lip_channels: &[String]) -> PromptLibrary {
    let mut lib = PromptLibrary::new(actor);
    for s in specs(actor, count, variants, seed, lip_channels) {
        lib.insert(PromptRecording {
            prompt_id: s.id,
            category: s.category,
            variants: s
                .variants
                .into_iter()
                .map(|(stem, track)| PromptVariant {
                    audio: format!("audio/{stem}.wav").into(),
                    audio_duration_ms: Some(track.duration_ms()),
                    track,
                })
                .collect(),
        })
        .expect("synthetic ids are unique");
    }
    lib
}

/// Write a loadable library directory: manifest, silent WAVs whose length
/// matches the lipsync tracks, and track files.
pub fn write_prompt_library(
    dir: &Path,
    actor: &str,
    count: usize,
    variants: usize,
    seed: u64,
    lip_channels: &[String],
) -> Result<usize, SimError> {
    fs::create_dir_all(dir.join("audio"))?;
    fs::create_dir_all(dir.join("tracks"))?;
    let mut manifest = String::new();
    let specs = specs(actor, count, variants, seed, lip_channels);
    for s in &specs {
        let mut entry = ManifestEntry {
            id: s.id.clone(),
            category: s.category,
            variants: Vec::new(),
        };
        for (stem, track) in &s.variants {
            let audio = format!("audio/{stem}.wav");
            let track_file = format!("tracks/{stem}.jsonl");
            write_silent_wav(&dir.join(&audio), track.duration_ms(), WAV_SAMPLE_RATE)?;
            track
                .to_gesture_track(lip_channels.to_vec(), 1000.0 / LIPSYNC_FRAME_MS as f64)
                .save(&dir.join(&track_file))?;
            entry.variants.push(ManifestVariant {
                audio,
                track: track_file,
            });
        }
        manifest.push_str(&serde_json::to_string(&entry).expect("manifest entry serializes"));
        manifest.push('\n');
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(specs.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::default_lip_channels;
    use crate::playback::load_library;

    #[test]
    fn full_library_has_232_prompts() {
        let lib = synthetic_library("actor_f1", PROMPTS_PER_ACTOR, 1, 3, &default_lip_channels());
        assert_eq!(lib.len(), 232);
        assert!(lib.get("greeting-001").is_some());
        assert!(lib.get("item-description-120").is_some());
    }

    #[test]
    fn written_library_loads_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let lips = default_lip_channels();
        let n = write_prompt_library(dir.path(), "actor_m1", 12, 2, 9, &lips).unwrap();
        assert_eq!(n, 12);
        let loaded = load_library(dir.path(), &lips).unwrap();
        assert_eq!(loaded.library.len(), 12);
        assert!(loaded.warnings.is_empty());
        let mem = synthetic_library("actor_m1", 12, 2, 9, &lips);
        for rec in mem.iter() {
            let disk = loaded.library.get(&rec.prompt_id).unwrap();
            for (a, b) in rec.variants.iter().zip(&disk.variants) {
                assert_eq!(a.track, b.track);
                assert_eq!(Some(a.track.duration_ms()), b.audio_duration_ms);
            }
        }
    }
}
