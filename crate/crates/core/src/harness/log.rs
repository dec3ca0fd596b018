//! Session logs: append-only JSON lines per session, folded back into a
//! [`SessionLog`] for analysis, plus a per-interaction CSV export.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::session::{Phase, QuestionnaireResponse};
use super::{Condition, HarnessError, Proposal, ScenarioKey};
use crate::control::ControlEvent;
use crate::stats::QuestionnaireTopics;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub t: i64,
    pub proposal: Proposal,
    pub accepted: bool,
    pub ranking_after: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub t: i64,
    pub prompt_id: String,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub t: i64,
    pub from: Phase,
    pub to: Phase,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionLog {
    pub position: usize,
    pub condition: Condition,
    pub actor_id: String,
    pub face_id: String,
    pub scenario: ScenarioKey,
    pub item_order: Vec<String>,
    pub initial_ranking: Vec<String>,
    pub final_ranking: Vec<String>,
    pub proposals: Vec<ProposalRecord>,
    /// 0..=3
    pub accepted_count: usize,
    pub transitions: Vec<Transition>,
    pub prompts: Vec<PromptRecord>,
    pub questionnaire: Option<QuestionnaireResponse>,
}

impl InteractionLog {
    /// Ranking submitted, three outcomes recorded and questionnaire filled.
    pub fn is_complete(&self) -> bool {
        self.proposals.len() == 3 && self.questionnaire.is_some() && !self.initial_ranking.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalQuestionnaire {
    pub differences: String,
    pub comments: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionLog {
    pub participant_id: String,
    pub schedule_seed: u64,
    pub interactions: Vec<InteractionLog>,
    pub final_questionnaire: Option<FinalQuestionnaire>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum LogEntry {
    SessionStarted {
        t: i64,
        participant_id: String,
        schedule_seed: u64,
    },
    InteractionStarted {
        t: i64,
        position: usize,
        condition: Condition,
        actor_id: String,
        face_id: String,
        scenario: ScenarioKey,
    },
    Event {
        t: i64,
        position: Option<usize>,
        event: ControlEvent,
        phase_after: Option<Phase>,
    },
    InteractionCompleted {
        t: i64,
        log: InteractionLog,
    },
    FinalQuestionnaire {
        t: i64,
        questionnaire: FinalQuestionnaire,
    },
    SessionCompleted {
        t: i64,
    },
}

impl SessionLog {
    /// Fold a stream of entries. Fails without a `session_started` entry.
    pub fn from_entries<'a>(entries: impl IntoIterator<Item = &'a LogEntry>) -> Result<Self, HarnessError> {
        let mut log: Option<SessionLog> = None;
        for e in entries {
            match e {
                LogEntry::SessionStarted {
                    participant_id,
                    schedule_seed,
                    ..
                } => {
                    log = Some(SessionLog {
                        participant_id: participant_id.clone(),
                        schedule_seed: *schedule_seed,
                        interactions: Vec::new(),
                        final_questionnaire: None,
                    })
                }
                LogEntry::InteractionCompleted { log: i, .. } => log
                    .as_mut()
                    .ok_or_else(|| HarnessError::Data("log entry before session start".into()))?
                    .interactions
                    .push(i.clone()),
                LogEntry::FinalQuestionnaire { questionnaire, .. } => {
                    log.as_mut()
                        .ok_or_else(|| HarnessError::Data("log entry before session start".into()))?
                        .final_questionnaire = Some(questionnaire.clone())
                }
                _ => {}
            }
        }
        log.ok_or_else(|| HarnessError::Data("no session_started entry".into()))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, HarnessError> {
        let mut entries = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| HarnessError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str::<LogEntry>(&line)
                    .map_err(|e| HarnessError::Data(format!("log line {}: {e}", i + 1)))?,
            );
        }
        Self::from_entries(&entries)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let f = std::fs::File::open(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::read_from(std::io::BufReader::new(f))
    }

    /// Every `session_*.jsonl` log in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>, HarnessError> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "jsonl")
                    && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(SESSION_FILE_PREFIX))
            })
            .collect();
        paths.sort();
        paths.iter().map(|p| Self::load(p)).collect()
    }
}

/// File-name prefix of session logs within a log directory.
pub const SESSION_FILE_PREFIX: &str = "session_";

/// Appends entries to a session file as they happen.
pub struct SessionLogWriter<W: Write> {
    out: W,
}

impl SessionLogWriter<std::io::BufWriter<std::fs::File>> {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Ok(Self::new(std::io::BufWriter::new(f)))
    }
}

impl<W: Write> SessionLogWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn append(&mut self, entries: &[LogEntry]) -> Result<(), HarnessError> {
        for e in entries {
            serde_json::to_writer(&mut self.out, e).map_err(|e| HarnessError::Io(e.to_string()))?;
            self.out.write_all(b"\n").map_err(|e| HarnessError::Io(e.to_string()))?;
        }
        self.out.flush().map_err(|e| HarnessError::Io(e.to_string()))
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn entries_to_jsonl(entries: &[LogEntry]) -> String {
    let mut w = SessionLogWriter::new(Vec::new());
    w.append(entries).expect("in-memory write");
    String::from_utf8(w.into_inner()).expect("json is utf-8")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionRow {
    pub participant: String,
    pub position: usize,
    pub condition: Condition,
    pub actor: String,
    pub face: String,
    pub scenario: String,
    pub accepted_count: usize,
    pub credibility: Option<f64>,
    pub likeability: Option<f64>,
    pub trust: Option<f64>,
}

pub fn interaction_rows(logs: &[SessionLog], topics: &QuestionnaireTopics) -> Vec<InteractionRow> {
    logs.iter()
        .flat_map(|s| {
            s.interactions.iter().map(move |i| {
                let scores = i.questionnaire.as_ref().and_then(|q| topics.scores(&q.answers).ok());
                InteractionRow {
                    participant: s.participant_id.clone(),
                    position: i.position,
                    condition: i.condition,
                    actor: i.actor_id.clone(),
                    face: i.face_id.clone(),
                    scenario: i.scenario.to_string(),
                    accepted_count: i.accepted_count,
                    credibility: scores.map(|s| s.credibility),
                    likeability: scores.map(|s| s.likeability),
                    trust: scores.map(|s| s.trust),
                }
            })
        })
        .collect()
}

/// One row per interaction.
pub fn export_csv<W: Write>(logs: &[SessionLog], topics: &QuestionnaireTopics, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for row in interaction_rows(logs, topics) {
        w.serialize(row).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))
}
