use std::sync::Arc;

use gesture_relay::bus::topics;
use gesture_relay::frame::Axis;
use gesture_relay::gateway::Gateway;
use gesture_relay::harness::{ProposalKind, QUESTIONNAIRE_ITEMS};
use gesture_relay::renderer::RobotCommand;
use gesture_relay::sim::{
    estimate_frequency, measure_copy_delay, run_e2e, DelayProbe, E2eConfig, InitialRanking, ParticipantPolicy,
    Recorder, SynthProfile, SynthSource,
};
use gesture_relay::stats::{summarize, QuestionnaireTopics, SummaryOptions};
use gesture_relay::{Bus, Telemetry};

fn small(policy: ParticipantPolicy) -> E2eConfig {
    E2eConfig {
        seed: 11,
        policy,
        prompts_per_actor: 40,
        ..E2eConfig::default()
    }
}

#[test]
fn accept_all_session_completes() {
    let out = run_e2e(&small(ParticipantPolicy::AcceptAll)).unwrap();
    assert!(out.log.final_questionnaire.is_some());
    assert_eq!(out.log.interactions.len(), 3);
    for i in &out.log.interactions {
        assert_eq!(i.accepted_count, 3);
        assert_eq!(i.questionnaire.as_ref().unwrap().answers.len(), QUESTIONNAIRE_ITEMS);
        assert!(!i.prompts.is_empty());
    }
    let servo = out.commands.iter().filter(|c| matches!(c.command, RobotCommand::Servo(_))).count();
    let shapes = out.commands.len() - servo;
    let ticks = ((out.finished_at - out.started_at) / 8) as usize;
    assert_eq!(servo, ticks);
    assert_eq!(shapes, ticks.div_ceil(5));
}

#[test]
fn decline_all_from_optimal_uses_fallbacks() {
    let cfg = E2eConfig {
        initial_ranking: InitialRanking::Optimal,
        ..small(ParticipantPolicy::DeclineAll)
    };
    let out = run_e2e(&cfg).unwrap();
    for i in &out.log.interactions {
        assert_eq!(i.accepted_count, 0);
        assert_eq!(i.proposals.len(), 3);
        for p in &i.proposals {
            assert_eq!(p.proposal.kind, ProposalKind::Fallback);
            assert!(p.proposal.to < p.proposal.from);
        }
        assert_eq!(i.final_ranking, i.initial_ranking);
    }
}

#[test]
fn same_seed_same_log() {
    let cfg = small(ParticipantPolicy::Probability(0.5));
    let a = run_e2e(&cfg).unwrap();
    let b = run_e2e(&cfg).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(
        serde_json::to_string(&a.log).unwrap(),
        serde_json::to_string(&b.log).unwrap()
    );
    assert_eq!(a.commands, b.commands);
    let c = run_e2e(&E2eConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn e2e_output_feeds_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for (pid, policy) in [("P01", "accept-all"), ("P02", "decline-all"), ("P03", "p=0.5")] {
        let cfg = E2eConfig {
            participant: pid.into(),
            ..small(policy.parse().unwrap())
        };
        let out = run_e2e(&cfg).unwrap();
        out.write_dir(dir.path()).unwrap();
        logs.push(out.log);
    }
    let loaded = gesture_relay::harness::SessionLog::load_dir(dir.path()).unwrap();
    assert_eq!(loaded, logs);
    let table = summarize(&loaded, &QuestionnaireTopics::builtin(), SummaryOptions::default()).unwrap();
    assert_eq!(table.rows.len(), 12);
    assert_eq!(table.tests.len(), 4);
}

#[test]
fn copy_delay_is_four_seconds() {
    let m = measure_copy_delay(&DelayProbe::default()).unwrap();
    assert!((m.servo_delay_ms - 4000.0).abs() <= 17.0, "{m:?}");
    assert!((m.blendshape_delay_ms - 4000).abs() <= 17, "{m:?}");
    assert_eq!(m.fir_delay_ms, 96.0);
    assert!(m.servo_correlation > 0.99 && m.blendshape_correlation > 0.99, "{m:?}");
}

#[test]
fn recorded_sinusoid_keeps_its_frequency() {
    let bus = Bus::new();
    let mut rec = Recorder::new(&bus, topics::CAPTURE_FRAMES).unwrap();
    let mut gw = Gateway::canonical(Arc::new(Telemetry::new()));
    let profile = SynthProfile::Sinusoid {
        freq_hz: 0.7,
        axis: Axis::Y,
        amplitude_deg: 20.0,
        channel: None,
    };
    for r in SynthSource::new(profile, 30, 20.0, 0).unwrap() {
        gw.ingest_and_publish(r.to_line().as_bytes(), &bus, r.t).unwrap();
    }
    rec.poll();
    let track = rec.finish().unwrap().track;
    // device y lands on robot x, negated
    let xs: Vec<(i64, f64)> = track.frames().iter().map(|f| (f.t_rel, f.rot.x)).collect();
    let f = estimate_frequency(&xs).unwrap();
    assert!((f - 0.7).abs() / 0.7 < 0.01, "{f}");
}
