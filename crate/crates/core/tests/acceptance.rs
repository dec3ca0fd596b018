//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p gesture-relay-core --test acceptance [filter]`. Set
//! `GOLDEN_BLESS=1` to rewrite the golden files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use gesture_relay::bus::{topics, wire, SubscribeRequest};
use gesture_relay::control::ControlEvent;
use gesture_relay::frame::FrameSource;
use gesture_relay::gateway::remap_axes;
use gesture_relay::harness::{
    apply_move, builtin_scenarios, displacement, entries_to_jsonl, fallback_applies, generate_schedule,
    propose_change, validate_schedule, ProposalKind, SurvivalScenario,
};
use gesture_relay::playback::{LipsyncFrame, VariantPolicy};
use gesture_relay::renderer::{
    default_taps, run_realtime, run_simulated, FirFilter, RendererConfig, Renderer, RobotCommand, RobotSink,
    SimSink, StateCell,
};
use gesture_relay::sim::{measure_copy_delay, run_e2e, DelayProbe, E2eConfig, ParticipantPolicy, SIM_EPOCH_MS};
use gesture_relay::stats::{
    bonferroni, chi2_sf, format_p, friedman, friedman_exact, summarize, Category, QuestionnaireTopics,
    RepeatedMeasures, SummaryOptions, TABLE_CONDITIONS,
};
use gesture_relay::telemetry::TelemetrySample;
use gesture_relay::track::{GestureTrack, TrackFrame};
use gesture_relay::{BlendshapeVector, BusMessage, CaptureFrame, HeadRotation, Payload, RobotFrame, SimClock, SystemClock, Telemetry};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = (&'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    ("delay fidelity", delay_fidelity),
    ("dual-rate emission", dual_rate_emission),
    ("axis remap", axis_remap),
    ("fir contract", fir_contract),
    ("schedule constraints", schedule_constraints),
    ("proposal engine", proposal_engine),
    ("friedman and bonferroni", friedman_and_bonferroni),
    ("end-to-end determinism", end_to_end_determinism),
    ("wire golden files", wire_golden_files),
];

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (name, _) in CRITERIA {
            println!("{name}: test");
        }
        return;
    }
    let filter: Option<&String> = args.iter().find(|a| !a.starts_with('-'));
    let mut ran = 0;
    let mut failed = Vec::new();
    for (name, check) in CRITERIA {
        if filter.is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {} [{:.2} s]", outcome.detail, start.elapsed().as_secs_f64());
        if !outcome.pass {
            failed.push(name);
        }
    }
    println!("\n{} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}

fn delay_fidelity() -> Outcome {
    let start = Instant::now();
    let m = match measure_copy_delay(&DelayProbe::default()) {
        Ok(m) => m,
        Err(e) => return Outcome::new(false, format!("measurement failed: {e}")),
    };
    let elapsed = start.elapsed();
    let servo_ok = (m.servo_delay_ms - 4000.0).abs() <= 17.0;
    let shape_ok = (m.blendshape_delay_ms - 4000).abs() <= 17;
    let time_ok = elapsed < Duration::from_secs(10);
    Outcome::new(
        servo_ok && shape_ok && time_ok,
        format!(
            "servo {:.1} ms (peak {} ms less {} ms filter, r={:.4}), blendshape {} ms (r={:.4}), runtime {:.2} s",
            m.servo_delay_ms,
            m.servo_peak_ms,
            m.fir_delay_ms,
            m.servo_correlation,
            m.blendshape_delay_ms,
            m.blendshape_correlation,
            elapsed.as_secs_f64()
        ),
    )
}

struct StampSink(Arc<Mutex<Vec<(bool, Instant)>>>);

impl RobotSink for StampSink {
    fn send(&mut self, cmd: &RobotCommand) -> std::io::Result<()> {
        let servo = matches!(cmd, RobotCommand::Servo(_));
        self.0.lock().unwrap().push((servo, Instant::now()));
        Ok(())
    }
}

fn rate_hz(stamps: &[Instant]) -> f64 {
    match (stamps.first(), stamps.last()) {
        (Some(a), Some(b)) if stamps.len() > 1 => (stamps.len() - 1) as f64 / (*b - *a).as_secs_f64(),
        _ => 0.0,
    }
}

fn dual_rate_emission() -> Outcome {
    let clock = SimClock::new(SIM_EPOCH_MS);
    let sink = SimSink::new(clock.clone());
    let mut renderer = Renderer::new(
        StateCell::new(),
        RendererConfig::default(),
        Box::new(sink.clone()),
        Arc::new(Telemetry::new()),
    )
    .expect("default taps");
    run_simulated(&mut renderer, &clock, 60_000 / 8, |_, _| {});
    let cmds = sink.commands();
    let servo = cmds.iter().filter(|c| matches!(c.command, RobotCommand::Servo(_))).count();
    let shapes = cmds.len() - servo;
    let sim_ok = servo == 7500 && shapes == 1500;

    let log = Arc::new(Mutex::new(Vec::new()));
    let mut renderer = Renderer::new(
        StateCell::new(),
        RendererConfig::default(),
        Box::new(StampSink(log.clone())),
        Arc::new(Telemetry::new()),
    )
    .expect("default taps");
    let jitter = run_realtime(&mut renderer, &SystemClock, &AtomicBool::new(false), Some(625));
    let log = log.lock().unwrap();
    let servo_t: Vec<Instant> = log.iter().filter(|(s, _)| *s).map(|(_, t)| *t).collect();
    let shape_t: Vec<Instant> = log.iter().filter(|(s, _)| !*s).map(|(_, t)| *t).collect();
    let (servo_hz, shape_hz) = (rate_hz(&servo_t), rate_hz(&shape_t));
    let wall_ok = (servo_hz - 125.0).abs() / 125.0 <= 0.01
        && (shape_hz - 25.0).abs() / 25.0 <= 0.01
        && jitter.p99_us <= 4000;
    Outcome::new(
        sim_ok && wall_ok,
        format!(
            "simulated 60 s: {servo} servo, {shapes} blendshape; wall clock {} ticks: {servo_hz:.2} Hz servo, \
             {shape_hz:.2} Hz blendshape, jitter p50 {} us p99 {} us max {} us",
            jitter.ticks, jitter.p50_us, jitter.p99_us, jitter.max_us
        ),
    )
}

fn axis_remap() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 10_000,
        failure_persistence: None,
        ..Config::default()
    });
    let angle = -180.0..180.0f64;
    let result = runner.run(&(angle.clone(), angle.clone(), angle), |(x, y, z)| {
        let r = HeadRotation::new(x, y, z);
        let once = remap_axes(r);
        prop_assert_eq!((once.x, once.y, once.z), (-y, x, z));
        let four = remap_axes(remap_axes(remap_axes(once)));
        prop_assert_eq!((four.x, four.y, four.z), (x, y, z));
        Ok(())
    });
    match result {
        Ok(()) => Outcome::new(true, "10000 random rotations: (x,y,z) -> (-y,x,z), fourth power is the identity"),
        Err(e) => Outcome::new(false, format!("{e}")),
    }
}

fn dtft_magnitude(taps: &[f64], freq_hz: f64, fs_hz: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq_hz / fs_hz;
    let (re, im) = taps
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(re, im), (n, h)| (re + h * (w * n as f64).cos(), im - h * (w * n as f64).sin()));
    re.hypot(im)
}

fn filtered(taps: &[f64], xs: &[f64]) -> Vec<f64> {
    let mut f = FirFilter::new(taps.to_vec()).expect("valid taps");
    xs.iter().map(|x| f.push(*x)).collect()
}

fn fir_contract() -> Outcome {
    let taps = default_taps();
    let dc: f64 = taps.iter().sum();
    let ones = filtered(&taps, &[1.0; 200]);
    let settled = ones[taps.len()..].iter().all(|y| (y - 1.0).abs() <= 1e-9);
    let h20 = dtft_magnitude(&taps, 20.0, 125.0);
    let atten_db = -20.0 * h20.log10();
    let reported = FirFilter::new(taps.clone()).expect("valid taps").magnitude_at(20.0, 125.0);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-90.0..90.0)).collect();
        let y: Vec<f64> = (0..256).map(|_| rng.gen_range(-90.0..90.0)).collect();
        let (a, b) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(x, y)| a * x + b * y).collect();
        let lhs = filtered(&taps, &mixed);
        let (fx, fy) = (filtered(&taps, &x), filtered(&taps, &y));
        for i in 0..lhs.len() {
            let rhs = a * fx[i] + b * fy[i];
            let scale = (a * fx[i]).abs() + (b * fy[i]).abs();
            worst = worst.max((lhs[i] - rhs).abs() / scale.max(f64::MIN_POSITIVE));
        }
    }
    let pass = (dc - 1.0).abs() <= 1e-9
        && settled
        && atten_db >= 20.0
        && (reported - h20).abs() <= 1e-12
        && worst <= 1e-9;
    Outcome::new(
        pass,
        format!(
            "{} taps, DC gain {dc:.12}, 20 Hz attenuation {atten_db:.1} dB, worst linearity error {worst:.1e}",
            taps.len()
        ),
    )
}

fn schedule_constraints() -> Outcome {
    let start = Instant::now();
    let mut problems = Vec::new();
    for seed in 0..100u64 {
        let s = match generate_schedule(12, seed) {
            Ok(s) => s,
            Err(e) => {
                problems.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        if !validate_schedule(&s).all_passed() {
            problems.push(format!("seed {seed}: validation failed"));
        }
        let mut counts: BTreeMap<(&str, String), usize> = BTreeMap::new();
        for i in s.interactions() {
            let cond = format!("{:?}", i.condition);
            for key in [
                ("condition", cond.clone()),
                ("condition-position", format!("{cond}@{}", i.position)),
                ("actor", i.actor_id.clone()),
                ("condition-actor", format!("{cond}/{}", i.actor_id)),
                ("scenario", format!("{:?}", i.scenario)),
            ] {
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        let expected = [
            ("condition", 3, 12),
            ("condition-position", 9, 4),
            ("actor", 4, 9),
            ("condition-actor", 12, 3),
            ("scenario", 4, 9),
        ];
        for (kind, cells, each) in expected {
            let got: Vec<usize> = counts.iter().filter(|((k, _), _)| *k == kind).map(|(_, n)| *n).collect();
            if got.len() != cells || got.iter().any(|n| *n != each) {
                problems.push(format!("seed {seed}: {kind} counts {got:?}"));
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(30) {
        problems.push(format!("runtime {:.1} s", elapsed.as_secs_f64()));
    }
    let detail = if problems.is_empty() {
        format!("100 seeds valid with exact counts, runtime {:.2} s", elapsed.as_secs_f64())
    } else {
        problems.join("; ")
    };
    Outcome::new(problems.is_empty(), detail)
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

fn sum_abs_displacement(ranking: &[String], optimal: &[String]) -> usize {
    ranking
        .iter()
        .enumerate()
        .map(|(i, item)| i.abs_diff(optimal.iter().position(|o| o == item).unwrap()))
        .sum()
}

fn proposal_engine() -> Outcome {
    let start = Instant::now();
    let scenario: SurvivalScenario = builtin_scenarios().remove(0);
    let optimal = scenario.items.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut states, mut main_states, mut fallback_states) = (0usize, 0usize, 0usize);
    let (mut trigger_mismatch, mut fallback_bad, mut main_bad_item, mut not_decreasing, mut no_improving) =
        (0usize, 0usize, 0usize, 0usize, 0usize);
    let mut example = None;
    for ranking in permutations(&optimal) {
        let misplaced: Vec<&String> = ranking.iter().enumerate().filter(|(i, it)| optimal[*i] != **it).map(|(_, it)| it).collect();
        for mask in 0u32..32 {
            states += 1;
            let declined: BTreeSet<String> =
                optimal.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, it)| it.clone()).collect();
            let expect_fallback = misplaced.iter().all(|it| declined.contains(*it));
            if fallback_applies(&ranking, &scenario, &declined) != expect_fallback {
                trigger_mismatch += 1;
            }
            let before = sum_abs_displacement(&ranking, &optimal);
            if displacement(&ranking, &scenario) != before {
                trigger_mismatch += 1;
            }
            let p = propose_change(&ranking, &scenario, &declined, &mut rng);
            if (p.kind == ProposalKind::Fallback) != expect_fallback {
                trigger_mismatch += 1;
                continue;
            }
            if expect_fallback {
                fallback_states += 1;
                if p.from < 2 || p.to + 1 != p.from || ranking[p.from - 1] != p.item {
                    fallback_bad += 1;
                }
                continue;
            }
            main_states += 1;
            if declined.contains(&p.item) || !misplaced.contains(&&p.item) || ranking[p.from - 1] != p.item {
                main_bad_item += 1;
            }
            let after = sum_abs_displacement(&apply_move(&ranking, &p.item, p.to), &optimal);
            if after >= before {
                not_decreasing += 1;
                let improvable = misplaced.iter().filter(|it| !declined.contains(**it)).any(|it| {
                    (1..=ranking.len()).any(|to| sum_abs_displacement(&apply_move(&ranking, it, to), &optimal) < before)
                });
                if !improvable {
                    no_improving += 1;
                }
                example.get_or_insert_with(|| {
                    let ranks: Vec<usize> =
                        ranking.iter().map(|it| scenario.optimal_rank(it).unwrap()).collect();
                    let dec: Vec<usize> = declined.iter().map(|it| scenario.optimal_rank(it).unwrap()).collect();
                    format!("ranking {ranks:?} with {dec:?} declined")
                });
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = trigger_mismatch == 0
        && fallback_bad == 0
        && main_bad_item == 0
        && not_decreasing == 0
        && elapsed < Duration::from_secs(5);
    let mut detail = format!(
        "{states} states: fallback trigger mismatches {trigger_mismatch}, malformed fallbacks {fallback_bad} of \
         {fallback_states}; main path {main_states} states, bad item choice {main_bad_item}, not strictly decreasing \
         {not_decreasing} (no strictly improving move exists in {no_improving}); runtime {:.2} s",
        elapsed.as_secs_f64()
    );
    if let Some(e) = example {
        detail.push_str(&format!("; e.g. {e}"));
    }
    Outcome::new(pass, detail)
}

fn oracle_midranks(row: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        let below = row.iter().filter(|v| **v < row[i]).count() as f64;
        let equal = row.iter().filter(|v| **v == row[i]).count() as f64;
        out[i] = below + (equal + 1.0) / 2.0;
    }
    out
}

fn oracle_statistic(sums: &[f64; 3], n: usize, correction: f64) -> f64 {
    let n = n as f64;
    let ss: f64 = sums.iter().map(|s| s * s).sum();
    (12.0 / (n * 3.0 * 4.0) * ss - 3.0 * n * 4.0) / correction
}

/// Friedman statistic and permutation p-value by enumerating all 6^n
/// within-row orderings.
fn oracle(rows: &[[f64; 3]]) -> (f64, f64) {
    let ranks: Vec<[f64; 3]> = rows.iter().map(oracle_midranks).collect();
    let n = rows.len();
    let mut ties = 0.0;
    for r in rows {
        let mut seen = Vec::new();
        for v in r {
            if !seen.contains(v) {
                seen.push(*v);
                let t = r.iter().filter(|w| *w == v).count() as f64;
                ties += t * t * t - t;
            }
        }
    }
    let correction = 1.0 - ties / (n as f64 * 24.0);
    if correction <= 1e-12 {
        return (0.0, 1.0);
    }
    let mut observed = [0.0; 3];
    for r in &ranks {
        for j in 0..3 {
            observed[j] += r[j];
        }
    }
    let q_obs = oracle_statistic(&observed, n, correction);
    const ORDERS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let (mut hits, mut total) = (0u64, 0u64);
    let mut stack = vec![(0usize, [0.0f64; 3])];
    while let Some((depth, sums)) = stack.pop() {
        if depth == n {
            total += 1;
            if oracle_statistic(&sums, n, correction) >= q_obs - 1e-9 {
                hits += 1;
            }
            continue;
        }
        let r = ranks[depth];
        for o in ORDERS {
            stack.push((depth + 1, [sums[0] + r[o[0]], sums[1] + r[o[1]], sums[2] + r[o[2]]]));
        }
    }
    (q_obs, hits as f64 / total as f64)
}

fn multisets(kinds: usize, size: usize, from: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == size {
        out.push(current.clone());
        return;
    }
    for k in from..kinds {
        current.push(k);
        multisets(kinds, size, k, current, out);
        current.pop();
    }
}

fn friedman_and_bonferroni() -> Outcome {
    let mut problems = Vec::new();

    // rows in {0..3}^3 reduce to their midrank pattern; the statistic and
    // its permutation distribution depend only on the multiset of patterns
    let mut patterns: Vec<[f64; 3]> = Vec::new();
    let mut seen: Vec<[f64; 3]> = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                let row = [a as f64, b as f64, c as f64];
                let r = oracle_midranks(&row);
                if !seen.contains(&r) {
                    seen.push(r);
                    patterns.push(row);
                }
            }
        }
    }
    let check = |rows: &[[f64; 3]], problems: &mut Vec<String>| {
        let data = RepeatedMeasures::new(rows.iter().map(|r| r.to_vec()).collect(), None).expect("valid shape");
        let (q, p) = oracle(rows);
        let got = friedman(&data);
        let exact = friedman_exact(&data).expect("k = 3, n <= 6");
        if (got.chi2 - q).abs() > 1e-9 || (exact - p).abs() > 1e-9 {
            problems.push(format!("{rows:?}: chi2 {} vs {q}, p {exact} vs {p}", got.chi2));
        }
    };
    let mut datasets = 0;
    for n in 2..=6 {
        let mut sets = Vec::new();
        multisets(patterns.len(), n, 0, &mut Vec::new(), &mut sets);
        for set in sets {
            let rows: Vec<[f64; 3]> = set.iter().map(|i| patterns[*i]).collect();
            check(&rows, &mut problems);
            datasets += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let n = rng.gen_range(2..=6);
        let rows: Vec<[f64; 3]> = (0..n)
            .map(|_| [0; 3].map(|_: i32| rng.gen_range(0..4) as f64))
            .collect();
        check(&rows, &mut problems);
    }

    // −2 ln p is the df = 2 upper quantile
    let quantiles = [
        (0.5, 1.386_294_361_119_890_6),
        (0.1, 4.605_170_185_988_091),
        (0.05, 5.991_464_547_107_979),
        (0.025, 7.377_758_908_227_871),
        (0.01, 9.210_340_371_976_182),
        (0.005, 10.596_634_733_096_073),
        (0.001, 13.815_510_557_964_274),
    ];
    for (p, x) in quantiles {
        let got = chi2_sf(x, 2);
        if (got - p).abs() > 1e-6 {
            problems.push(format!("chi2_sf({x}, 2) = {got}, want {p}"));
        }
    }

    let mut clamp_checked = 0;
    for i in 0..=750 {
        let p = 0.25 + i as f64 / 1000.0;
        let adj = bonferroni(&[p], 4).expect("valid p");
        if adj[0] != 1.0 || format_p(adj[0]) != "1" {
            problems.push(format!("bonferroni({p}, 4) = {}", adj[0]));
        }
        clamp_checked += 1;
    }
    let reported_chi2 = [0.25, 1.56, 1.96, 0.79];
    let raw: Vec<f64> = reported_chi2.iter().map(|x| chi2_sf(*x, 2)).collect();
    let adj = bonferroni(&raw, 4).expect("valid p");
    if adj.iter().any(|p| format_p(*p) != "1") {
        problems.push(format!("reported statistics adjust to {adj:?}"));
    }
    if (bonferroni(&[0.2], 4).unwrap()[0] - 0.8).abs() > 1e-15 {
        problems.push("bonferroni scales below the clamp".into());
    }

    let detail = if problems.is_empty() {
        format!(
            "{datasets} pattern datasets (n = 2..6) plus 2000 random ones match the permutation oracle; \
             {} df=2 quantiles within 1e-6; {clamp_checked} p_raw >= 0.25 clamp to 1 with m=4",
            quantiles.len()
        )
    } else {
        format!("{} problems, first: {}", problems.len(), problems[0])
    };
    Outcome::new(problems.is_empty(), detail)
}

fn end_to_end_determinism() -> Outcome {
    let mut problems = Vec::new();
    let cfg = E2eConfig {
        seed: 3,
        policy: ParticipantPolicy::Probability(0.5),
        ..E2eConfig::default()
    };
    let (a, b) = match (run_e2e(&cfg), run_e2e(&cfg)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("run failed: {e}")),
    };
    let (ja, jb) = (entries_to_jsonl(&a.entries), entries_to_jsonl(&b.entries));
    if ja != jb || serde_json::to_vec(&a.log).unwrap() != serde_json::to_vec(&b.log).unwrap() || a.log != b.log {
        problems.push("same seed gave different logs".to_string());
    }

    let mut logs = Vec::new();
    for (pid, policy) in [
        ("P01", ParticipantPolicy::AcceptAll),
        ("P02", ParticipantPolicy::DeclineAll),
        ("P03", ParticipantPolicy::Probability(0.5)),
    ] {
        let cfg = E2eConfig {
            participant: pid.into(),
            policy,
            prompts_per_actor: 40,
            ..E2eConfig::default()
        };
        match run_e2e(&cfg) {
            Ok(out) => {
                if pid == "P01" && out.log.interactions.iter().any(|i| i.accepted_count != 3) {
                    let got: Vec<usize> = out.log.interactions.iter().map(|i| i.accepted_count).collect();
                    problems.push(format!("accept-all accepted {got:?}"));
                }
                logs.push(out.log);
            }
            Err(e) => problems.push(format!("{pid}: {e}")),
        }
    }
    let table = match summarize(&logs, &QuestionnaireTopics::builtin(), SummaryOptions::default()) {
        Ok(t) => t,
        Err(e) => return Outcome::new(false, format!("summarize failed: {e}")),
    };
    let layout: Vec<_> = table.rows.iter().map(|r| (r.category, r.condition)).collect();
    let expected: Vec<_> = Category::ALL
        .iter()
        .flat_map(|c| TABLE_CONDITIONS.iter().map(move |k| (*c, *k)))
        .collect();
    if layout != expected {
        problems.push(format!("row layout {layout:?}"));
    }
    if table.rows.iter().any(|r| !(r.stats.median.is_finite() && r.stats.mean.is_finite() && r.stats.sd.is_finite())) {
        problems.push("non-finite descriptive".into());
    }
    let md = table.to_markdown();
    let body: Vec<&str> = md.lines().skip(2).filter(|l| l.starts_with('|')).collect();
    if body.len() != 12 || body.iter().any(|l| !l.contains('±')) {
        problems.push(format!("markdown has {} rows", body.len()));
    }
    let detail = if problems.is_empty() {
        format!(
            "{} log entries identical across runs; accept-all accepted 3 per interaction; \
             {} rows (4 categories x 3 conditions, median and mean±sd)",
            a.entries.len(),
            table.rows.len()
        )
    } else {
        problems.join("; ")
    };
    Outcome::new(problems.is_empty(), detail)
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn golden_messages() -> Vec<BusMessage> {
    let bs = BlendshapeVector::from_pairs([("jawOpen", 0.25), ("browInnerUp", 0.5), ("eyeBlinkLeft", 1.0)]);
    let msg = |topic: &str, t: i64, payload| BusMessage::new(topic, t, payload).expect("valid topic");
    vec![
        msg(
            topics::CAPTURE_FRAMES,
            1_000_000,
            Payload::CaptureFrame(CaptureFrame {
                t: 1_000_000,
                seq: 42,
                blendshapes: bs.clone(),
                rotation: HeadRotation::new(-2.5, 10.0, 0.125),
            }),
        ),
        msg(
            topics::BEHAVIOR_FRAMES,
            1_000_008,
            Payload::RobotFrame(RobotFrame {
                t: 1_000_008,
                blendshapes: bs.clone(),
                rotation: HeadRotation::new(-10.0, -2.5, 0.125),
                source: FrameSource::Behavior,
            }),
        ),
        msg(
            topics::LIPSYNC_FRAMES,
            1_000_016,
            Payload::LipsyncFrame(LipsyncFrame {
                t_rel: 40,
                bs: BlendshapeVector::from_pairs([("jawOpen", 0.75), ("mouthClose", 0.0)]),
            }),
        ),
        msg(
            topics::PLAYBACK_COMMANDS,
            1_000_024,
            Payload::ControlEvent(ControlEvent::PlayPrompt {
                prompt_id: "greeting_01".into(),
                variant: VariantPolicy::default(),
            }),
        ),
        msg(
            topics::TELEMETRY,
            1_000_032,
            Payload::TelemetrySample(TelemetrySample {
                name: "bus.dropped".into(),
                value: 3.0,
            }),
        ),
        msg(
            topics::SUBSCRIBE,
            1_000_040,
            Payload::Subscribe(SubscribeRequest {
                pattern: "control.*".into(),
            }),
        ),
    ]
}

fn golden_track() -> GestureTrack {
    let channels: Vec<String> = ["browInnerUp", "jawOpen", "mouthSmileLeft"].map(String::from).to_vec();
    let frame = |t_rel, w: f64, rot| TrackFrame {
        t_rel,
        bs: BlendshapeVector::from_pairs([("browInnerUp", w), ("jawOpen", w / 2.0), ("mouthSmileLeft", 0.0)]),
        rot,
    };
    GestureTrack::new(
        channels,
        60.0,
        vec![
            frame(0, 0.0, HeadRotation::new(0.0, 0.0, 0.0)),
            frame(16, 0.25, HeadRotation::new(1.5, -0.5, 0.0)),
            frame(33, 0.5, HeadRotation::new(3.0, -1.0, 0.25)),
        ],
    )
    .expect("valid track")
}

fn compare_golden(name: &str, bytes: &[u8], bless: bool) -> Result<(), String> {
    let path = golden_dir().join(name);
    if bless {
        fs::create_dir_all(golden_dir()).map_err(|e| e.to_string())?;
        fs::write(&path, bytes).map_err(|e| e.to_string())?;
    }
    let stored = fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if stored != bytes {
        let at = stored.iter().zip(bytes).position(|(a, b)| a != b).unwrap_or(stored.len().min(bytes.len()));
        return Err(format!("{name} differs at byte {at} ({} stored, {} produced)", stored.len(), bytes.len()));
    }
    Ok(())
}

fn wire_golden_files() -> Outcome {
    let bless = std::env::var_os("GOLDEN_BLESS").is_some();
    let mut problems = Vec::new();

    let messages = golden_messages();
    let mut frames = Vec::new();
    for m in &messages {
        match wire::encode(m) {
            Ok(b) => frames.extend(b),
            Err(e) => problems.push(format!("encode {}: {e}", m.topic)),
        }
    }
    if let Err(e) = compare_golden("bus_frames.bin", &frames, bless) {
        problems.push(e);
    }
    if let Ok(stored) = fs::read(golden_dir().join("bus_frames.bin")) {
        let mut cursor = stored.as_slice();
        let mut decoded = Vec::new();
        loop {
            match wire::read_message(&mut cursor) {
                Ok(Some(m)) => decoded.push(m),
                Ok(None) => break,
                Err(e) => {
                    problems.push(format!("decode: {e}"));
                    break;
                }
            }
        }
        if decoded != messages {
            problems.push(format!("decoded {} messages that differ from the originals", decoded.len()));
        }
    }

    let track = golden_track();
    if let Err(e) = compare_golden("track.jsonl", track.to_jsonl().as_bytes(), bless) {
        problems.push(e);
    }
    if let Ok(stored) = fs::read_to_string(golden_dir().join("track.jsonl")) {
        match GestureTrack::parse(&stored) {
            Ok(t) if t == track => {}
            Ok(_) => problems.push("parsed track differs".into()),
            Err(e) => problems.push(format!("parse track: {e}")),
        }
    }
    let detail = if problems.is_empty() {
        format!(
            "{} bus frames ({} bytes) and a {}-frame track match their golden files and decode back{}",
            messages.len(),
            frames.len(),
            track.len(),
            if bless { " (blessed)" } else { "" }
        )
    } else {
        problems.join("; ")
    };
    Outcome::new(problems.is_empty(), detail)
}
