use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use gesture_relay::harness::{validate_schedule, ExperimentSchedule, SessionLog};
use gesture_relay::playback::load_library;
use gesture_relay::frame::default_lip_channels;
use gesture_relay_cli::cli::{Cli, Command as Sub, SinkSpec};

fn relay(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_gesture-relay"))
        .args(args)
        .env_remove("GR_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    out
}

fn ok(args: &[&str]) -> String {
    let out = relay(args);
    assert!(
        out.status.success(),
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn sink_specs_parse() {
    assert_eq!("sim".parse::<SinkSpec>(), Ok(SinkSpec::Sim));
    assert_eq!("record:out.jsonl".parse::<SinkSpec>(), Ok(SinkSpec::Record("out.jsonl".into())));
    assert_eq!("net:10.0.0.2:9000".parse::<SinkSpec>(), Ok(SinkSpec::Net("10.0.0.2:9000".into())));
    assert!("record:".parse::<SinkSpec>().is_err());
    assert!("speaker".parse::<SinkSpec>().is_err());
    assert_eq!(SinkSpec::Record("a b".into()).to_string(), "record:a b");
}

#[test]
fn argument_errors_are_caught_by_the_parser() {
    assert!(Cli::try_parse_from(["gesture-relay", "synth", "--profile", "scripted"]).is_err());
    assert!(Cli::try_parse_from(["gesture-relay", "e2e", "--out", "x", "--policy", "maybe"]).is_err());
    assert!(Cli::try_parse_from(["gesture-relay", "renderer", "--sink", "speaker"]).is_err());
    let cli = Cli::try_parse_from(["gesture-relay", "e2e", "--out", "x", "--policy", "p=0.25"]).unwrap();
    let Sub::E2e(a) = cli.command else { panic!() };
    assert_eq!(a.policy.to_string(), "p=0.25");
}

#[test]
fn schedule_generates_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("schedule.json");
    ok(&["schedule", "-n", "12", "--seed", "4", "--out", p(&path)]);
    let s = ExperimentSchedule::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(s.sessions.len(), 12);
    assert!(validate_schedule(&s).all_passed());
    ok(&["schedule", "--check", p(&path)]);

    let out = relay(&["schedule", "-n", "10"]);
    assert!(!out.status.success());
}

#[test]
fn e2e_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let logs = dir.path().join("run");
    for (pid, policy) in [("P01", "accept-all"), ("P02", "decline-all"), ("P03", "p=0.5")] {
        let out = ok(&[
            "e2e", "--seed", "3", "--policy", policy, "--participant", pid,
            "--prompts-per-actor", "30", "--out", p(&logs),
        ]);
        assert_eq!(out.lines().filter(|l| l.starts_with("interaction")).count(), 3, "{out}");
    }
    let loaded = SessionLog::load_dir(&logs).unwrap();
    assert_eq!(loaded.len(), 3);
    assert!(loaded[0].interactions.iter().all(|i| i.accepted_count == 3));
    assert!(loaded[1].interactions.iter().all(|i| i.accepted_count == 0));

    let md = ok(&["analyze", "--logs", p(&logs), "--exact"]);
    assert!(md.contains("Credibility"), "{md}");
    let csv = dir.path().join("table.csv");
    let rows = dir.path().join("rows.csv");
    ok(&["analyze", "--logs", p(&logs), "--out", p(&csv), "--rows", p(&rows)]);
    assert!(std::fs::read_to_string(&csv).unwrap().lines().count() > 12);
    assert_eq!(std::fs::read_to_string(&rows).unwrap().lines().count(), 1 + 9);

    let bad = relay(&["analyze", "--logs", p(&logs), "--out", "table.txt"]);
    assert!(!bad.status.success());
}

#[test]
fn prompts_writes_a_loadable_library() {
    let dir = tempfile::tempdir().unwrap();
    let lib = dir.path().join("actor_f1");
    ok(&["prompts", "--out", p(&lib), "--actor", "actor_f1", "--count", "10", "--variants", "1"]);
    let loaded = load_library(&lib, &default_lip_channels()).unwrap();
    assert_eq!(loaded.library.len(), 10);
    assert_eq!(loaded.library.actor_id, "actor_f1");
}

#[test]
fn synth_writes_one_record_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("capture.jsonl");
    ok(&["synth", "--fps", "30", "--duration", "2", "--channel", "jawOpen", "--out", p(&path)]);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 60);
    let stdout = ok(&["synth", "--profile", "neutral", "--fps", "10", "--duration", "1"]);
    assert_eq!(stdout.lines().count(), 10);
    let bad = relay(&["synth", "--fps", "30", "--freq", "20"]);
    assert!(!bad.status.success());
}

#[test]
fn delay_reports_four_seconds() {
    let out = ok(&["delay", "--duration", "30"]);
    let line = out.lines().find(|l| l.starts_with("servo delay")).unwrap();
    let ms: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((ms - 4000.0).abs() <= 17.0, "{out}");
}
