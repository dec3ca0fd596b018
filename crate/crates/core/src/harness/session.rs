//! Per-interaction phase machine and the live session controller.
//!
//! Intro → ItemDiscussion(1..5) → ParticipantRanking → Proposal(1..3) →
//! Questionnaire → Done. Prompts may be played in any phase. A rejected
//! event leaves the state untouched.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::log::{FinalQuestionnaire, InteractionLog, LogEntry, ProposalRecord, PromptRecord, SessionLog, Transition};
use super::{
    apply_outcome, propose_change, Condition, ExperimentSchedule, HarnessError, Interaction, Proposal,
    SurvivalScenario,
};
use crate::behavior::{BehaviorStrategy, LoopPolicy};
use crate::bus::{topics, Payload, Transport};
use crate::control::ControlEvent;

pub const ITEMS_TO_DISCUSS: u8 = 5;
pub const PROPOSALS_PER_INTERACTION: u8 = 3;
pub const QUESTIONNAIRE_ITEMS: usize = 28;
pub const LIKERT_MAX: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Intro,
    ItemDiscussion { item: u8 },
    ParticipantRanking,
    Proposal { index: u8 },
    Questionnaire,
    Done,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Intro => f.write_str("intro"),
            Phase::ItemDiscussion { item } => write!(f, "item_discussion({item})"),
            Phase::ParticipantRanking => f.write_str("participant_ranking"),
            Phase::Proposal { index } => write!(f, "proposal({index})"),
            Phase::Questionnaire => f.write_str("questionnaire"),
            Phase::Done => f.write_str("done"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("event `{event}` is not allowed in phase {phase}")]
    Illegal { event: &'static str, phase: Phase },
    #[error("ranking is not a permutation of the scenario items: {0}")]
    InvalidRanking(String),
    #[error("expected {QUESTIONNAIRE_ITEMS} answers, got {0}")]
    AnswerCount(usize),
    #[error("answers out of range 1..=7 at index {}", join(.0))]
    AnswerRange(Vec<usize>),
    #[error("no interaction is running; send start_interaction")]
    NoInteraction,
    #[error("interaction {0} is still running")]
    InteractionRunning(usize),
    #[error("all interactions of this session are done")]
    SessionComplete,
    #[error("unknown prompt `{0}`")]
    UnknownPrompt(String),
}

fn join(v: &[usize]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}

/// 28 Likert values in 1..=7. Offending indices are 0-based.
pub fn check_answers(answers: &[u8]) -> Result<(), SessionError> {
    if answers.len() != QUESTIONNAIRE_ITEMS {
        return Err(SessionError::AnswerCount(answers.len()));
    }
    let bad: Vec<usize> = answers
        .iter()
        .enumerate()
        .filter(|(_, a)| !(1..=LIKERT_MAX).contains(*a))
        .map(|(i, _)| i)
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(SessionError::AnswerRange(bad))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireResponse {
    pub answers: Vec<u8>,
    #[serde(default)]
    pub free_text: String,
}

/// State of one interaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InteractionState {
    pub interaction: Interaction,
    pub scenario: SurvivalScenario,
    pub phase: Phase,
    pub initial_ranking: Option<Vec<String>>,
    pub ranking: Option<Vec<String>>,
    pub declined: BTreeSet<String>,
    pub pending: Option<Proposal>,
    pub proposals: Vec<ProposalRecord>,
    pub questionnaire: Option<QuestionnaireResponse>,
    pub transitions: Vec<Transition>,
    pub prompts: Vec<PromptRecord>,
    pub started_at: i64,
}

impl InteractionState {
    pub fn new(interaction: Interaction, scenario: SurvivalScenario, now: i64) -> Self {
        Self {
            interaction,
            scenario,
            phase: Phase::Intro,
            initial_ranking: None,
            ranking: None,
            declined: BTreeSet::new(),
            pending: None,
            proposals: Vec::new(),
            questionnaire: None,
            transitions: Vec::new(),
            prompts: Vec::new(),
            started_at: now,
        }
    }

    pub fn accepted_count(&self) -> usize {
        self.proposals.iter().filter(|p| p.accepted).count()
    }

    fn propose(&self, ranking: &[String], j: u8) -> Proposal {
        let mut rng = ChaCha8Rng::seed_from_u64(self.interaction.rng_seed ^ u64::from(j));
        propose_change(ranking, &self.scenario, &self.declined, &mut rng)
    }

    /// Apply one event. On error the state is unchanged.
    pub fn advance(&self, ev: &ControlEvent, now: i64) -> Result<Self, SessionError> {
        let mut next = self.clone();
        let illegal = || SessionError::Illegal {
            event: ev.name(),
            phase: self.phase,
        };
        let to = match (self.phase, ev) {
            (_, ControlEvent::PlayPrompt { prompt_id, .. }) => {
                next.prompts.push(PromptRecord {
                    t: now,
                    prompt_id: prompt_id.clone(),
                    phase: self.phase,
                });
                return Ok(next);
            }
            (_, ControlEvent::StopPrompt) => return Ok(next),
            (Phase::Intro, ControlEvent::StartItems) => Phase::ItemDiscussion { item: 1 },
            (Phase::ItemDiscussion { item }, ControlEvent::NextItem) if item < ITEMS_TO_DISCUSS => {
                Phase::ItemDiscussion { item: item + 1 }
            }
            (Phase::ItemDiscussion { .. }, ControlEvent::NextItem) => Phase::ParticipantRanking,
            (Phase::ParticipantRanking, ControlEvent::SubmitRanking { ranking }) => {
                if !self.scenario.is_permutation(ranking) {
                    return Err(SessionError::InvalidRanking(ranking.join(",")));
                }
                next.initial_ranking = Some(ranking.clone());
                next.ranking = Some(ranking.clone());
                next.pending = Some(next.propose(ranking, 1));
                Phase::Proposal { index: 1 }
            }
            (Phase::Proposal { index }, ControlEvent::RecordOutcome { accepted }) => {
                let p = self.pending.clone().expect("proposal phase has a pending proposal");
                let cur = self.ranking.as_deref().expect("ranking submitted");
                let after = apply_outcome(cur, &p, *accepted, &mut next.declined);
                next.proposals.push(ProposalRecord {
                    t: now,
                    proposal: p,
                    accepted: *accepted,
                    ranking_after: after.clone(),
                });
                next.ranking = Some(after.clone());
                if index < PROPOSALS_PER_INTERACTION {
                    next.pending = Some(next.propose(&after, index + 1));
                    Phase::Proposal { index: index + 1 }
                } else {
                    next.pending = None;
                    Phase::Questionnaire
                }
            }
            (Phase::Questionnaire, ControlEvent::SubmitQuestionnaire { answers, free_text }) => {
                check_answers(answers)?;
                next.questionnaire = Some(QuestionnaireResponse {
                    answers: answers.clone(),
                    free_text: free_text.clone(),
                });
                Phase::Done
            }
            _ => return Err(illegal()),
        };
        next.transitions.push(Transition {
            t: now,
            from: self.phase,
            to,
            event: ev.name().to_string(),
        });
        next.phase = to;
        Ok(next)
    }

    pub fn to_log(&self) -> InteractionLog {
        InteractionLog {
            position: self.interaction.position,
            condition: self.interaction.condition,
            actor_id: self.interaction.actor_id.clone(),
            face_id: self.interaction.face_id.clone(),
            scenario: self.interaction.scenario,
            item_order: self.interaction.item_order.clone(),
            initial_ranking: self.initial_ranking.clone().unwrap_or_default(),
            final_ranking: self.ranking.clone().unwrap_or_default(),
            proposals: self.proposals.clone(),
            accepted_count: self.accepted_count(),
            transitions: self.transitions.clone(),
            prompts: self.prompts.clone(),
            questionnaire: self.questionnaire.clone(),
        }
    }
}

/// Behavior strategy for a condition.
pub fn strategy_for(i: &Interaction) -> BehaviorStrategy {
    match i.condition {
        Condition::Still => BehaviorStrategy::Still,
        Condition::Copy => BehaviorStrategy::copy(),
        Condition::Natural => BehaviorStrategy::Natural {
            track: i.natural_track.clone().unwrap_or_else(|| "natural".into()),
            loop_policy: LoopPolicy::Loop,
        },
    }
}

/// Snapshot for the wizard console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub participant_id: String,
    pub interaction_index: Option<usize>,
    pub condition: Option<Condition>,
    pub actor_id: Option<String>,
    pub face_id: Option<String>,
    pub scenario: Option<String>,
    pub item_order: Vec<String>,
    pub phase: Option<Phase>,
    pub ranking: Option<Vec<String>>,
    pub pending_proposal: Option<Proposal>,
    pub accepted_count: usize,
    pub completed_interactions: usize,
    pub complete: bool,
}

/// One participant's live session. Every event goes through [`handle`]
/// and is appended to the log.
///
/// [`handle`]: SessionController::handle
pub struct SessionController {
    schedule: Arc<ExperimentSchedule>,
    participant_id: String,
    interactions: Vec<Interaction>,
    current: Option<InteractionState>,
    next_index: usize,
    completed: Vec<InteractionLog>,
    final_questionnaire: Option<FinalQuestionnaire>,
    entries: Vec<LogEntry>,
    prompt_ids: Option<BTreeSet<String>>,
}

impl SessionController {
    pub fn new(schedule: Arc<ExperimentSchedule>, participant_id: &str, now: i64) -> Result<Self, HarnessError> {
        let session = schedule
            .session(participant_id)
            .ok_or_else(|| HarnessError::UnknownParticipant(participant_id.to_string()))?
            .clone();
        let entries = vec![LogEntry::SessionStarted {
            t: now,
            participant_id: participant_id.to_string(),
            schedule_seed: schedule.seed,
        }];
        Ok(Self {
            schedule,
            participant_id: participant_id.to_string(),
            interactions: session.interactions,
            current: None,
            next_index: 0,
            completed: Vec::new(),
            final_questionnaire: None,
            entries,
            prompt_ids: None,
        })
    }

    /// Reject prompt ids outside this catalog before they reach playback.
    pub fn with_prompt_catalog(mut self, ids: impl IntoIterator<Item = String>) -> Self {
        self.prompt_ids = Some(ids.into_iter().collect());
        self
    }

    pub fn participant_id(&self) -> &str {
        &self.participant_id
    }

    pub fn current(&self) -> Option<&InteractionState> {
        self.current.as_ref()
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn is_complete(&self) -> bool {
        self.final_questionnaire.is_some()
    }

    pub fn log(&self) -> SessionLog {
        SessionLog {
            participant_id: self.participant_id.clone(),
            schedule_seed: self.schedule.seed,
            interactions: self.completed.clone(),
            final_questionnaire: self.final_questionnaire.clone(),
        }
    }

    pub fn view(&self) -> SessionView {
        let cur = self.current.as_ref();
        SessionView {
            participant_id: self.participant_id.clone(),
            interaction_index: cur.map(|c| c.interaction.position),
            condition: cur.map(|c| c.interaction.condition),
            actor_id: cur.map(|c| c.interaction.actor_id.clone()),
            face_id: cur.map(|c| c.interaction.face_id.clone()),
            scenario: cur.map(|c| c.interaction.scenario.to_string()),
            item_order: cur.map(|c| c.interaction.item_order.clone()).unwrap_or_default(),
            phase: cur.map(|c| c.phase),
            ranking: cur.and_then(|c| c.ranking.clone()),
            pending_proposal: cur.and_then(|c| c.pending.clone()),
            accepted_count: cur.map_or(0, |c| c.accepted_count()),
            completed_interactions: self.completed.len(),
            complete: self.is_complete(),
        }
    }

    /// Apply a wizard event at `now`, publishing any resulting commands.
    /// New log entries are returned for appending to the session file.
    pub fn handle(&mut self, ev: ControlEvent, now: i64, bus: &dyn Transport) -> Result<Vec<LogEntry>, HarnessError> {
        let start = self.entries.len();
        match &ev {
            ControlEvent::StartInteraction => self.start_interaction(now, bus)?,
            ControlEvent::SetBehavior { .. } => {
                bus.publish(topics::BEHAVIOR_SET, now, Payload::ControlEvent(ev.clone()))?;
                self.record_event(&ev, now);
            }
            ControlEvent::PlayPrompt { prompt_id, .. } => {
                if self.prompt_ids.as_ref().is_some_and(|ids| !ids.contains(prompt_id)) {
                    return Err(SessionError::UnknownPrompt(prompt_id.clone()).into());
                }
                self.apply_to_current(&ev, now, true)?;
                bus.publish(topics::PLAYBACK_COMMANDS, now, Payload::ControlEvent(ev.clone()))?;
            }
            ControlEvent::StopPrompt => {
                self.apply_to_current(&ev, now, true)?;
                bus.publish(topics::PLAYBACK_COMMANDS, now, Payload::ControlEvent(ev.clone()))?;
            }
            ControlEvent::SubmitFinalQuestionnaire { differences, comments } => {
                if self.is_complete() {
                    return Err(SessionError::SessionComplete.into());
                }
                if self.completed.len() < self.interactions.len() {
                    return Err(SessionError::Illegal {
                        event: ev.name(),
                        phase: self.current.as_ref().map_or(Phase::Intro, |c| c.phase),
                    }
                    .into());
                }
                let fq = FinalQuestionnaire {
                    differences: differences.clone(),
                    comments: comments.clone(),
                };
                self.final_questionnaire = Some(fq.clone());
                self.entries.push(LogEntry::FinalQuestionnaire { t: now, questionnaire: fq });
                self.entries.push(LogEntry::SessionCompleted { t: now });
            }
            _ => {
                self.apply_to_current(&ev, now, false)?;
                if let Some(c) = &self.current {
                    if c.phase == Phase::Done && self.completed.len() < c.interaction.position {
                        let log = c.to_log();
                        self.completed.push(log.clone());
                        self.entries.push(LogEntry::InteractionCompleted { t: now, log });
                    }
                }
            }
        }
        bus.publish(topics::SESSION_EVENTS, now, Payload::ControlEvent(ev))?;
        Ok(self.entries[start..].to_vec())
    }

    fn apply_to_current(&mut self, ev: &ControlEvent, now: i64, optional: bool) -> Result<(), HarnessError> {
        match self.current.as_ref() {
            Some(c) => {
                let next = c.advance(ev, now)?;
                self.current = Some(next);
                self.record_event(ev, now);
                Ok(())
            }
            None if optional => {
                self.record_event(ev, now);
                Ok(())
            }
            None => Err(SessionError::NoInteraction.into()),
        }
    }

    fn record_event(&mut self, ev: &ControlEvent, now: i64) {
        self.entries.push(LogEntry::Event {
            t: now,
            position: self.current.as_ref().map(|c| c.interaction.position),
            event: ev.clone(),
            phase_after: self.current.as_ref().map(|c| c.phase),
        });
    }

    fn start_interaction(&mut self, now: i64, bus: &dyn Transport) -> Result<(), HarnessError> {
        if let Some(c) = &self.current {
            if c.phase != Phase::Done {
                return Err(SessionError::InteractionRunning(c.interaction.position).into());
            }
        }
        let Some(i) = self.interactions.get(self.next_index).cloned() else {
            return Err(SessionError::SessionComplete.into());
        };
        let scenario = self
            .schedule
            .scenario(i.scenario)
            .ok_or_else(|| HarnessError::Data(format!("schedule lacks scenario {}", i.scenario)))?
            .clone();
        bus.publish(
            topics::BEHAVIOR_SET,
            now,
            Payload::ControlEvent(ControlEvent::SetBehavior {
                strategy: strategy_for(&i),
            }),
        )?;
        self.entries.push(LogEntry::InteractionStarted {
            t: now,
            position: i.position,
            condition: i.condition,
            actor_id: i.actor_id.clone(),
            face_id: i.face_id.clone(),
            scenario: i.scenario,
        });
        self.current = Some(InteractionState::new(i, scenario, now));
        self.next_index += 1;
        Ok(())
    }
}
