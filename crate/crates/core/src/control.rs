//! Control-plane events carried on `control.*` topics and posted to the
//! session API by the wizard.

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorStrategy;
use crate::playback::VariantPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ControlEvent {
    SetBehavior {
        strategy: BehaviorStrategy,
    },
    PlayPrompt {
        prompt_id: String,
        #[serde(default)]
        variant: VariantPolicy,
    },
    StopPrompt,
    PlaybackStarted {
        prompt_id: String,
        variant: usize,
        duration_ms: i64,
    },
    PlaybackFinished {
        prompt_id: String,
    },
    PlaybackStopped {
        prompt_id: String,
    },
    /// Begin the next scheduled interaction of the live session.
    StartInteraction,
    StartItems,
    NextItem,
    SubmitRanking {
        ranking: Vec<String>,
    },
    RecordOutcome {
        accepted: bool,
    },
    SubmitQuestionnaire {
        answers: Vec<u8>,
        #[serde(default)]
        free_text: String,
    },
    SubmitFinalQuestionnaire {
        differences: String,
        #[serde(default)]
        comments: String,
    },
}

impl ControlEvent {
    pub fn name(&self) -> &'static str {
        match self {
            ControlEvent::SetBehavior { .. } => "set_behavior",
            ControlEvent::PlayPrompt { .. } => "play_prompt",
            ControlEvent::StopPrompt => "stop_prompt",
            ControlEvent::PlaybackStarted { .. } => "playback_started",
            ControlEvent::PlaybackFinished { .. } => "playback_finished",
            ControlEvent::PlaybackStopped { .. } => "playback_stopped",
            ControlEvent::StartInteraction => "start_interaction",
            ControlEvent::StartItems => "start_items",
            ControlEvent::NextItem => "next_item",
            ControlEvent::SubmitRanking { .. } => "submit_ranking",
            ControlEvent::RecordOutcome { .. } => "record_outcome",
            ControlEvent::SubmitQuestionnaire { .. } => "submit_questionnaire",
            ControlEvent::SubmitFinalQuestionnaire { .. } => "submit_final_questionnaire",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let e = ControlEvent::RecordOutcome { accepted: true };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"event":"record_outcome","accepted":true}"#
        );
        let p: ControlEvent = serde_json::from_str(r#"{"event":"play_prompt","prompt_id":"greet"}"#).unwrap();
        assert_eq!(
            p,
            ControlEvent::PlayPrompt {
                prompt_id: "greet".into(),
                variant: VariantPolicy::Random
            }
        );
        let s: ControlEvent =
            serde_json::from_str(r#"{"event":"set_behavior","strategy":{"kind":"copy","delay_s":4.0}}"#).unwrap();
        assert_eq!(s.name(), "set_behavior");
        assert!(serde_json::from_str::<ControlEvent>(r#"{"event":"set_behavior","strategy":{"kind":"dance"}}"#).is_err());
    }
}
