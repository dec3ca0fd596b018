//! Experiment harness: survival-task scenarios, counterbalanced schedules,
//! the proposal engine, the session phase machine and session logs.

pub mod log;
mod proposal;
mod scenario;
mod schedule;
mod session;

use thiserror::Error;

use crate::bus::BusError;

pub use log::{
    entries_to_jsonl, export_csv, interaction_rows, SESSION_FILE_PREFIX, FinalQuestionnaire, InteractionLog, InteractionRow, LogEntry,
    ProposalRecord, PromptRecord, SessionLog, SessionLogWriter, Transition,
};
pub use proposal::{
    apply_move, apply_outcome, displacement, fallback_applies, movable_misplaced, propose_change,
    ImprovingMaxDisplacement, MaxDisplacement, Proposal, ProposalKind, ProposalStrategy,
};
pub use scenario::{builtin_scenarios, Item, ItemList, ItemSet, ScenarioKey, SurvivalScenario, TaskType, SCENARIO_SIZE};
pub use schedule::{
    check_parity, generate_schedule, generate_schedule_with, validate_schedule, Actor, Condition, ConstraintCheck,
    ExperimentSchedule, Gender, Interaction, ScheduleError, ScheduleOptions, Session, ValidationReport,
    DEFAULT_MAX_ATTEMPTS, DEFAULT_NODE_BUDGET, INTERACTIONS_PER_SESSION,
};
pub use session::{
    check_answers, strategy_for, InteractionState, Phase, QuestionnaireResponse, SessionController, SessionError,
    SessionView, ITEMS_TO_DISCUSS, LIKERT_MAX, PROPOSALS_PER_INTERACTION, QUESTIONNAIRE_ITEMS,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("unknown participant `{0}`")]
    UnknownParticipant(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
}
