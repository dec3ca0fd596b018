use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::iter::Peekable;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::behavior::{BehaviorEngine, BehaviorService, TrackLibrary};
use crate::bus::{Bus, Subscription};
use crate::clock::{Clock, SimClock};
use crate::control::ControlEvent;
use crate::frame::{default_lip_channels, Axis, BlendshapeVector, HeadRotation};
use crate::gateway::Gateway;
use crate::harness::{
    entries_to_jsonl, generate_schedule, ExperimentSchedule, LogEntry, SessionController, SessionLog,
    INTERACTIONS_PER_SESSION, ITEMS_TO_DISCUSS, PROPOSALS_PER_INTERACTION, QUESTIONNAIRE_ITEMS, SESSION_FILE_PREFIX,
};
use crate::playback::{PlaybackService, Player, PromptCategory, PromptLibrary, TimingSink, VariantPolicy, PROMPTS_PER_ACTOR};
use crate::renderer::{
    ingest_pending, subscribe_inputs, LoggedCommand, Renderer, RendererConfig, SimSink, StateCell, SERVO_PERIOD_MS,
};
use crate::telemetry::Telemetry;
use crate::track::{GestureTrack, TrackFrame};

use super::prompts::synthetic_library;
use super::synth::{SynthProfile, SynthSource};
use super::{SimError, SIM_EPOCH_MS};

/// How the scripted participant answers proposals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParticipantPolicy {
    AcceptAll,
    DeclineAll,
    /// Accept each proposal with this probability, from a seeded stream.
    Probability(f64),
}

impl FromStr for ParticipantPolicy {
    type Err = SimError;

    /// `accept-all`, `decline-all`, or `p=<probability>`.
    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "accept-all" => Ok(Self::AcceptAll),
            "decline-all" => Ok(Self::DeclineAll),
            other => {
                let p = other
                    .strip_prefix("p=")
                    .or_else(|| other.strip_prefix("probability="))
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|p| (0.0..=1.0).contains(p))
                    .ok_or_else(|| {
                        SimError::Usage(format!("unknown policy `{other}` (accept-all, decline-all, p=<0..1>)"))
                    })?;
                Ok(Self::Probability(p))
            }
        }
    }
}

impl fmt::Display for ParticipantPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AcceptAll => f.write_str("accept-all"),
            Self::DeclineAll => f.write_str("decline-all"),
            Self::Probability(p) => write!(f, "p={p}"),
        }
    }
}

/// The participant's own ranking before any proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialRanking {
    /// Seeded shuffle of the item order.
    Shuffled,
    /// Already the expert order.
    Optimal,
}

impl FromStr for InitialRanking {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "shuffled" => Ok(Self::Shuffled),
            "optimal" => Ok(Self::Optimal),
            other => Err(SimError::Usage(format!("unknown ranking `{other}` (shuffled, optimal)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct E2eConfig {
    pub seed: u64,
    /// Schedule size; must satisfy the counterbalancing constraints.
    pub participants: usize,
    pub participant: String,
    pub policy: ParticipantPolicy,
    pub initial_ranking: InitialRanking,
    pub capture: SynthProfile,
    pub capture_fps: u32,
    pub prompts_per_actor: usize,
    pub variants_per_prompt: usize,
}

impl Default for E2eConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            participants: 12,
            participant: "P01".into(),
            policy: ParticipantPolicy::AcceptAll,
            initial_ranking: InitialRanking::Shuffled,
            capture: SynthProfile::Sinusoid {
                freq_hz: 0.2,
                axis: Axis::X,
                amplitude_deg: 8.0,
                channel: Some("browInnerUp".into()),
            },
            capture_fps: 60,
            prompts_per_actor: PROMPTS_PER_ACTOR,
            variants_per_prompt: 2,
        }
    }
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct E2eOutcome {
    pub schedule: ExperimentSchedule,
    pub log: SessionLog,
    pub entries: Vec<LogEntry>,
    pub commands: Vec<LoggedCommand>,
    pub started_at: i64,
    pub finished_at: i64,
}

impl E2eOutcome {
    /// `schedule.json`, `session_<id>.jsonl` and `commands.jsonl`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("schedule.json"), self.schedule.to_json())?;
        fs::write(
            dir.join(format!("{SESSION_FILE_PREFIX}{}.jsonl", self.log.participant_id)),
            entries_to_jsonl(&self.entries),
        )?;
        let mut cmds = String::new();
        for c in &self.commands {
            cmds.push_str(&serde_json::to_string(c).expect("command serializes"));
            cmds.push('\n');
        }
        fs::write(dir.join("commands.jsonl"), cmds)?;
        Ok(())
    }
}

/// Slow head sway plus blinks, standing in for a recorded conversation.
pub fn synthetic_natural_track(seed: u64, duration_s: f64) -> GestureTrack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let comps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.gen_range(0.05..0.4), rng.gen_range(2.0..8.0), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let channels: Vec<String> = ["browInnerUp", "eyeBlinkLeft", "eyeBlinkRight", "mouthSmileLeft", "mouthSmileRight"]
        .map(String::from)
        .to_vec();
    let mut next_blink = rng.gen_range(1_000..4_000);
    let mut frames = Vec::new();
    let step = 33;
    let mut t = 0;
    while (t as f64) < duration_s * 1000.0 {
        let s = t as f64 / 1000.0;
        let wave = |k: usize| comps[k].1 * (2.0 * PI * comps[k].0 * s + comps[k].2).sin();
        let blink = if t >= next_blink && t < next_blink + 150 {
            1.0
        } else {
            if t >= next_blink + 150 {
                next_blink += rng.gen_range(2_000..6_000);
            }
            0.0
        };
        let smile = 0.25 + 0.15 * (2.0 * PI * 0.07 * s).sin();
        let bs = BlendshapeVector::from_pairs([
            ("browInnerUp", (0.2 + 0.1 * (2.0 * PI * 0.3 * s).sin()).clamp(0.0, 1.0)),
            ("eyeBlinkLeft", blink),
            ("eyeBlinkRight", blink),
            ("mouthSmileLeft", smile),
            ("mouthSmileRight", smile),
        ]);
        frames.push(TrackFrame {
            t_rel: t,
            bs,
            rot: HeadRotation::new(wave(0), wave(1), 0.5 * wave(2)),
        });
        t += step;
    }
    GestureTrack::new(channels, 1000.0 / step as f64, frames).expect("synthetic track is well formed")
}

struct Rig {
    clock: Arc<SimClock>,
    bus: Bus,
    gateway: Gateway,
    capture: Peekable<SynthSource>,
    behavior: BehaviorService<Bus>,
    playback: Option<PlaybackService<Bus>>,
    libraries: BTreeMap<String, Arc<PromptLibrary>>,
    renderer: Renderer,
    inputs: [Subscription; 2],
    controller: SessionController,
    entries: Vec<LogEntry>,
    seed: u64,
}

impl Rig {
    fn tick(&mut self) -> Result<(), SimError> {
        let now = self.clock.now_ms();
        while let Some(r) = self.capture.next_if(|r| r.t <= now) {
            self.gateway.ingest_and_publish(r.to_line().as_bytes(), &self.bus, now)?;
        }
        self.behavior.poll()?;
        if let Some(p) = self.playback.as_mut() {
            p.step(now)?;
        }
        ingest_pending(&self.inputs, self.renderer.cell(), now);
        self.renderer.tick(now);
        self.clock.advance(SERVO_PERIOD_MS);
        Ok(())
    }

    fn wait(&mut self, ms: i64) -> Result<(), SimError> {
        let end = self.clock.now_ms() + ms;
        while self.clock.now_ms() < end {
            self.tick()?;
        }
        Ok(())
    }

    fn send(&mut self, ev: ControlEvent) -> Result<(), SimError> {
        let now = self.clock.now_ms();
        let name = ev.name();
        let start = matches!(ev, ControlEvent::StartInteraction);
        let new = self
            .controller
            .handle(ev, now, &self.bus)
            .map_err(|e| SimError::Aborted {
                t: now,
                step: name.to_string(),
                reason: e.to_string(),
            })?;
        self.entries.extend(new);
        if start {
            self.switch_actor()?;
        }
        Ok(())
    }

    /// Each actor has a separate prompt library; playback follows the
    /// interaction's actor.
    fn switch_actor(&mut self) -> Result<(), SimError> {
        let actor = self
            .controller
            .current()
            .map(|c| c.interaction.actor_id.clone())
            .expect("interaction just started");
        let lib = self
            .libraries
            .get(&actor)
            .cloned()
            .ok_or_else(|| SimError::Usage(format!("no prompt library for actor `{actor}`")))?;
        let pos = self.controller.current().map_or(0, |c| c.interaction.position) as u64;
        let player = Player::new(lib, self.bus.clone(), Box::new(TimingSink::new()), self.seed ^ (pos << 32));
        self.playback = Some(PlaybackService::new(player, &self.bus)?);
        Ok(())
    }

    fn prompt(&self, category: PromptCategory, k: usize) -> ControlEvent {
        let actor = self.controller.current().map(|c| c.interaction.actor_id.clone()).unwrap_or_default();
        let ids: Vec<&str> = self.libraries[&actor]
            .iter()
            .filter(|r| r.category == category)
            .map(|r| r.prompt_id.as_str())
            .collect();
        ControlEvent::PlayPrompt {
            prompt_id: ids[k % ids.len()].to_string(),
            variant: VariantPolicy::Random,
        }
    }
}

/// One full scripted session under a simulated clock. Deterministic given
/// the config.
pub fn run_e2e(cfg: &E2eConfig) -> Result<E2eOutcome, SimError> {
    let schedule = Arc::new(generate_schedule(cfg.participants, cfg.seed)?);
    let t0 = SIM_EPOCH_MS;
    let clock = SimClock::new(t0);
    let bus = Bus::new();
    let telemetry = Arc::new(Telemetry::new());
    let lips = default_lip_channels();

    let mut tracks = TrackLibrary::new();
    for (i, id) in schedule
        .interactions()
        .filter_map(|i| i.natural_track.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
    {
        tracks.insert(id, synthetic_natural_track(cfg.seed.wrapping_add(i as u64), 30.0));
    }
    let libraries: BTreeMap<String, Arc<PromptLibrary>> = schedule
        .actors
        .iter()
        .map(|a| {
            let lib = synthetic_library(&a.id, cfg.prompts_per_actor, cfg.variants_per_prompt, cfg.seed, &lips);
            (a.id.clone(), Arc::new(lib))
        })
        .collect();
    let catalog = libraries
        .values()
        .flat_map(|l| l.ids().map(str::to_string).collect::<Vec<_>>())
        .collect::<Vec<_>>();

    let sink = SimSink::new(clock.clone() as Arc<dyn Clock>);
    let renderer = Renderer::new(
        StateCell::new(),
        RendererConfig::default(),
        Box::new(sink.clone()),
        telemetry.clone(),
    )?;
    let controller = SessionController::new(schedule.clone(), &cfg.participant, t0)?.with_prompt_catalog(catalog);
    let mut rig = Rig {
        clock: clock.clone(),
        inputs: subscribe_inputs(&bus)?,
        behavior: BehaviorService::new(BehaviorEngine::new(tracks, telemetry.clone()), bus.clone())?,
        gateway: Gateway::canonical(telemetry),
        capture: SynthSource::new(cfg.capture.clone(), cfg.capture_fps, f64::INFINITY, t0)?.peekable(),
        bus,
        playback: None,
        libraries,
        renderer,
        controller,
        entries: Vec::new(),
        seed: cfg.seed,
    };
    rig.entries.extend(rig.controller.entries().iter().cloned());

    let mut participant = ChaCha8Rng::seed_from_u64(cfg.seed);
    participant.set_stream(cfg.participant.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(u64::from(b))));

    for k in 0..INTERACTIONS_PER_SESSION {
        rig.send(ControlEvent::StartInteraction)?;
        rig.wait(500)?;
        rig.send(rig.prompt(PromptCategory::Greeting, k))?;
        rig.wait(3_000)?;
        rig.send(ControlEvent::StartItems)?;
        for item in 0..usize::from(ITEMS_TO_DISCUSS) {
            rig.send(rig.prompt(PromptCategory::ItemDescription, k * 5 + item))?;
            rig.wait(4_000)?;
            rig.send(ControlEvent::NextItem)?;
        }
        rig.wait(1_000)?;
        let cur = rig.controller.current().expect("interaction running");
        let ranking = match cfg.initial_ranking {
            InitialRanking::Optimal => cur.scenario.items.clone(),
            InitialRanking::Shuffled => {
                let mut r = cur.interaction.item_order.clone();
                r.shuffle(&mut participant);
                r
            }
        };
        rig.send(ControlEvent::SubmitRanking { ranking })?;
        rig.wait(1_000)?;
        for j in 0..usize::from(PROPOSALS_PER_INTERACTION) {
            rig.send(rig.prompt(PromptCategory::Proposal, k * 3 + j))?;
            rig.wait(4_000)?;
            let accepted = match cfg.policy {
                ParticipantPolicy::AcceptAll => true,
                ParticipantPolicy::DeclineAll => false,
                ParticipantPolicy::Probability(p) => participant.gen_bool(p),
            };
            rig.send(ControlEvent::RecordOutcome { accepted })?;
            rig.wait(500)?;
        }
        rig.wait(1_000)?;
        let answers = (0..QUESTIONNAIRE_ITEMS).map(|_| participant.gen_range(1..=7)).collect();
        rig.send(ControlEvent::SubmitQuestionnaire {
            answers,
            free_text: String::new(),
        })?;
        rig.wait(2_000)?;
    }
    rig.send(ControlEvent::SubmitFinalQuestionnaire {
        differences: "scripted participant".into(),
        comments: String::new(),
    })?;
    rig.wait(500)?;

    let log = SessionLog::from_entries(&rig.entries)?;
    Ok(E2eOutcome {
        schedule: (*schedule).clone(),
        log,
        entries: rig.entries,
        commands: sink.commands(),
        started_at: t0,
        finished_at: clock.now_ms(),
    })
}
