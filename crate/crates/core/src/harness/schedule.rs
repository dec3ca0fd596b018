//! Counterbalanced experiment schedules.
//!
//! Every participant sees all three conditions, each with a different actor
//! voice, robot face and survival scenario. The generator fills the
//! assignment stage by stage (conditions, actors, scenarios, faces, item
//! orders) with randomized backtracking under count caps; equal caps that sum
//! to the slot count force exact balance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{builtin_scenarios, ScenarioKey, SurvivalScenario, SCENARIO_SIZE};

pub const INTERACTIONS_PER_SESSION: usize = 3;
pub const DEFAULT_NODE_BUDGET: u64 = 1_000_000;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Still,
    Natural,
    Copy,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Still, Condition::Natural, Condition::Copy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Still => "still",
            Condition::Natural => "natural",
            Condition::Copy => "copy",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub id: String,
    pub gender: Gender,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    /// 1-based position within the session.
    pub position: usize,
    pub condition: Condition,
    pub actor_id: String,
    pub face_id: String,
    pub scenario: ScenarioKey,
    /// Order in which the robot introduces the items.
    pub item_order: Vec<String>,
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub natural_track: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub participant_id: String,
    pub interactions: Vec<Interaction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSchedule {
    pub seed: u64,
    pub actors: Vec<Actor>,
    pub faces: Vec<String>,
    pub scenarios: Vec<SurvivalScenario>,
    pub sessions: Vec<Session>,
}

impl ExperimentSchedule {
    pub fn interactions(&self) -> impl Iterator<Item = &Interaction> {
        self.sessions.iter().flat_map(|s| s.interactions.iter())
    }

    pub fn scenario(&self, key: ScenarioKey) -> Option<&SurvivalScenario> {
        self.scenarios.iter().find(|s| s.key == key)
    }

    pub fn session(&self, participant_id: &str) -> Option<&Session> {
        self.sessions.iter().find(|s| s.participant_id == participant_id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone)]
pub struct ScheduleOptions {
    pub actors: Vec<Actor>,
    pub faces: Vec<String>,
    pub scenarios: Vec<SurvivalScenario>,
    /// Assigned round-robin to natural-condition interactions.
    pub natural_tracks: Vec<String>,
    pub node_budget: u64,
    pub max_attempts: u32,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        let actor = |id: &str, gender| Actor { id: id.into(), gender };
        Self {
            actors: vec![
                actor("actor_f1", Gender::Female),
                actor("actor_f2", Gender::Female),
                actor("actor_m1", Gender::Male),
                actor("actor_m2", Gender::Male),
            ],
            faces: (1..=4).map(|i| format!("face_{i}")).collect(),
            scenarios: builtin_scenarios(),
            natural_tracks: vec!["natural".into()],
            node_budget: DEFAULT_NODE_BUDGET,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("{constraint} cannot hold for {n} participants: {reason}")]
    Unsatisfiable {
        constraint: &'static str,
        n: usize,
        reason: String,
    },
    #[error("no schedule found after {attempts} attempts ({nodes} search nodes)")]
    Exhausted { attempts: u32, nodes: u64 },
    #[error("bad options: {0}")]
    Options(String),
}

/// The first parity requirement `n` violates, if any.
pub fn check_parity(n: usize, opts: &ScheduleOptions) -> Result<(), ScheduleError> {
    let a = opts.actors.len();
    let f = opts.faces.len();
    let total = INTERACTIONS_PER_SESSION * n;
    let fail = |constraint, reason: String| Err(ScheduleError::Unsatisfiable { constraint, n, reason });
    if n == 0 || !n.is_multiple_of(a) {
        return fail(
            "C1",
            format!("{total} interactions cannot cover {} condition-actor pairs equally", 3 * a),
        );
    }
    if !n.is_multiple_of(3) {
        return fail("C2", format!("{n} sessions cannot put each condition in each position equally"));
    }
    if a < INTERACTIONS_PER_SESSION {
        return fail("C3", format!("{a} actors cannot give 3 distinct actors per session"));
    }
    let males = opts.actors.iter().filter(|x| x.gender == Gender::Male).count();
    if 2 * males != a {
        return fail("C4", format!("{males} male of {a} actors is not balanced"));
    }
    if !n.is_multiple_of(2) || !total.is_multiple_of(4) {
        return fail("C5", format!("{n} sessions cannot alternate task types with balanced scenarios"));
    }
    if !n.is_multiple_of(4) {
        return fail("C6", format!("{n} interactions per condition cannot cover 4 scenarios equally"));
    }
    if f < INTERACTIONS_PER_SESSION || !total.is_multiple_of(f) {
        return fail("C7", format!("{total} interactions cannot use {f} faces equally"));
    }
    if total / 4 < SCENARIO_SIZE {
        return fail(
            "C8",
            format!("{} uses per scenario cannot put 5 items first and last", total / 4),
        );
    }
    Ok(())
}

struct Budget {
    left: u64,
    used: u64,
}

/// Depth-first fill of `slots` values from `0..domain`, candidates shuffled
/// per node. `ok(prefix, v)` decides whether `v` may follow `prefix`.
fn backtrack(
    slots: usize,
    domain: usize,
    rng: &mut ChaCha8Rng,
    budget: &mut Budget,
    ok: impl Fn(&[usize], usize) -> bool,
) -> Option<Vec<usize>> {
    let mut assigned: Vec<usize> = Vec::with_capacity(slots);
    let mut stack: Vec<Vec<usize>> = Vec::with_capacity(slots);
    let fresh = |rng: &mut ChaCha8Rng| {
        let mut c: Vec<usize> = (0..domain).collect();
        c.shuffle(rng);
        c
    };
    stack.push(fresh(rng));
    loop {
        if assigned.len() == slots {
            return Some(assigned);
        }
        let top = stack.last_mut()?;
        match top.pop() {
            Some(v) => {
                if budget.left == 0 {
                    return None;
                }
                budget.left -= 1;
                budget.used += 1;
                if ok(&assigned, v) {
                    assigned.push(v);
                    if assigned.len() < slots {
                        stack.push(fresh(rng));
                    }
                }
            }
            None => {
                stack.pop();
                assigned.pop()?;
            }
        }
    }
}

fn session_of(i: usize) -> usize {
    i / INTERACTIONS_PER_SESSION
}

fn same_session(prefix: &[usize], i: usize) -> &[usize] {
    &prefix[session_of(i) * INTERACTIONS_PER_SESSION..i]
}

/// Deterministic given `seed`.
pub fn generate_schedule(n: usize, seed: u64) -> Result<ExperimentSchedule, ScheduleError> {
    generate_schedule_with(n, seed, &ScheduleOptions::default())
}

pub fn generate_schedule_with(n: usize, seed: u64, opts: &ScheduleOptions) -> Result<ExperimentSchedule, ScheduleError> {
    if opts.scenarios.len() != ScenarioKey::ALL.len()
        || ScenarioKey::ALL.iter().any(|k| !opts.scenarios.iter().any(|s| s.key == *k))
    {
        return Err(ScheduleError::Options("need exactly the four scenarios".into()));
    }
    check_parity(n, opts)?;
    let mut nodes = 0;
    for attempt in 0..opts.max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(attempt));
        let mut budget = Budget {
            left: opts.node_budget,
            used: 0,
        };
        let found = attempt_schedule(n, seed, opts, &mut rng, &mut budget);
        nodes += budget.used;
        if let Some(s) = found {
            return Ok(s);
        }
        log::debug!("schedule attempt {attempt} failed after {} nodes", budget.used);
    }
    Err(ScheduleError::Exhausted {
        attempts: opts.max_attempts,
        nodes,
    })
}

fn attempt_schedule(
    n: usize,
    seed: u64,
    opts: &ScheduleOptions,
    rng: &mut ChaCha8Rng,
    budget: &mut Budget,
) -> Option<ExperimentSchedule> {
    let slots = INTERACTIONS_PER_SESSION * n;
    let a = opts.actors.len();
    let f = opts.faces.len();
    let pos = |i: usize| i % INTERACTIONS_PER_SESSION;

    // conditions: a permutation per session, balanced over positions
    let per_position = n / 3;
    let conds = backtrack(slots, 3, rng, budget, |p, v| {
        let i = p.len();
        !same_session(p, i).contains(&v)
            && p.iter().enumerate().filter(|(j, c)| pos(*j) == pos(i) && **c == v).count() < per_position
    })?;

    // actors: distinct per session, balanced per condition
    let per_cond_actor = n / a;
    let actors = backtrack(slots, a, rng, budget, |p, v| {
        let i = p.len();
        !same_session(p, i).contains(&v)
            && p.iter()
                .enumerate()
                .filter(|(j, x)| **x == v && conds[*j] == conds[i])
                .count()
                < per_cond_actor
    })?;

    // scenarios: task type alternates, balanced per condition
    let per_cond_scenario = n / 4;
    let task = |k: usize| ScenarioKey::ALL[k].task_type;
    let scenarios = backtrack(slots, 4, rng, budget, |p, v| {
        let i = p.len();
        if pos(i) > 0 && task(p[i - 1]) == task(v) {
            return false;
        }
        p.iter()
            .enumerate()
            .filter(|(j, x)| **x == v && conds[*j] == conds[i])
            .count()
            < per_cond_scenario
    })?;

    // faces: distinct per session, equal use
    let per_face = slots / f;
    let faces = backtrack(slots, f, rng, budget, |p, v| {
        let i = p.len();
        !same_session(p, i).contains(&v) && p.iter().filter(|x| **x == v).count() < per_face
    })?;

    let orders = item_orders(&scenarios, opts, rng)?;

    let mut natural = opts.natural_tracks.iter().cycle();
    let sessions = (0..n)
        .map(|s| Session {
            participant_id: format!("P{:02}", s + 1),
            interactions: (0..INTERACTIONS_PER_SESSION)
                .map(|p| {
                    let i = s * INTERACTIONS_PER_SESSION + p;
                    let condition = Condition::ALL[conds[i]];
                    Interaction {
                        position: p + 1,
                        condition,
                        actor_id: opts.actors[actors[i]].id.clone(),
                        face_id: opts.faces[faces[i]].clone(),
                        scenario: ScenarioKey::ALL[scenarios[i]],
                        item_order: orders[i].clone(),
                        rng_seed: rng.next_u64(),
                        natural_track: (condition == Condition::Natural)
                            .then(|| natural.next().cloned())
                            .flatten(),
                    }
                })
                .collect(),
        })
        .collect();
    Some(ExperimentSchedule {
        seed,
        actors: opts.actors.clone(),
        faces: opts.faces.clone(),
        scenarios: ScenarioKey::ALL
            .iter()
            .map(|k| opts.scenarios.iter().find(|s| s.key == *k).expect("checked").clone())
            .collect(),
        sessions,
    })
}

/// Presentation orders such that, per scenario, every item leads at least
/// once and closes at least once.
fn item_orders(scenarios: &[usize], opts: &ScheduleOptions, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<String>>> {
    let mut out = vec![Vec::new(); scenarios.len()];
    for (k, key) in ScenarioKey::ALL.iter().enumerate() {
        let items = &opts.scenarios.iter().find(|s| s.key == *key)?.items;
        let uses: Vec<usize> = (0..scenarios.len()).filter(|i| scenarios[*i] == k).collect();
        let m = uses.len();
        if m < items.len() {
            return None;
        }
        let cover = |rng: &mut ChaCha8Rng| {
            let mut v: Vec<usize> = (0..items.len()).collect();
            v.extend((items.len()..m).map(|_| rng.gen_range(0..items.len())));
            v.shuffle(rng);
            v
        };
        let first = cover(rng);
        let mut last = cover(rng);
        // resolve first == last by swapping lasts between uses
        for _ in 0..100 {
            let Some(j) = (0..m).find(|&j| first[j] == last[j]) else {
                break;
            };
            let mut ks: Vec<usize> = (0..m).filter(|&k| last[k] != first[j] && last[j] != first[k]).collect();
            ks.shuffle(rng);
            let k = *ks.first()?;
            last.swap(j, k);
        }
        if (0..m).any(|j| first[j] == last[j]) {
            return None;
        }
        for (j, &i) in uses.iter().enumerate() {
            let mut middle: Vec<usize> = (0..items.len()).filter(|x| *x != first[j] && *x != last[j]).collect();
            middle.shuffle(rng);
            let mut order = vec![first[j]];
            order.extend(middle);
            order.push(last[j]);
            out[i] = order.into_iter().map(|x| items[x].clone()).collect();
        }
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConstraintCheck {
    pub id: &'static str,
    pub description: &'static str,
    pub passed: bool,
    /// Number of counterexamples found.
    pub violations: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ConstraintCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, id: &str) -> Option<&ConstraintCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn failed(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.id).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let status = if c.passed { "pass" } else { "FAIL" };
            write!(f, "{} {status} {}", c.id, c.description)?;
            if !c.passed {
                write!(f, " ({} violation(s): {})", c.violations, c.detail)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Cells of `counts` (over `keys`) that differ from the common value.
fn unequal<K: Ord + Clone + fmt::Debug>(keys: &[K], counts: &BTreeMap<K, usize>) -> (usize, String) {
    let total: usize = keys.iter().map(|k| counts.get(k).copied().unwrap_or(0)).sum();
    if keys.is_empty() {
        return (0, String::new());
    }
    let expected = total / keys.len();
    let exact = total.is_multiple_of(keys.len());
    let bad: Vec<_> = keys
        .iter()
        .filter(|k| !exact || counts.get(*k).copied().unwrap_or(0) != expected)
        .collect();
    let detail = bad
        .iter()
        .take(4)
        .map(|k| format!("{k:?}={}", counts.get(*k).copied().unwrap_or(0)))
        .collect::<Vec<_>>()
        .join(", ");
    (bad.len(), if exact { format!("expected {expected}: {detail}") } else { detail })
}

fn tally<K: Ord>(it: impl Iterator<Item = K>) -> BTreeMap<K, usize> {
    let mut m = BTreeMap::new();
    for k in it {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

fn make_check(id: &'static str, description: &'static str, violations: usize, detail: String) -> ConstraintCheck {
    ConstraintCheck {
        id,
        description,
        passed: violations == 0,
        violations,
        detail,
    }
}

pub fn validate_schedule(s: &ExperimentSchedule) -> ValidationReport {
    let all: Vec<&Interaction> = s.interactions().collect();
    let actor_ids: Vec<String> = s.actors.iter().map(|a| a.id.clone()).collect();
    let mut checks = Vec::new();

    // structure
    let mut bad_shape = 0;
    for sess in &s.sessions {
        let conds: BTreeSet<_> = sess.interactions.iter().map(|i| i.condition).collect();
        let positions: Vec<_> = sess.interactions.iter().map(|i| i.position).collect();
        if sess.interactions.len() != INTERACTIONS_PER_SESSION || conds.len() != 3 || positions != [1, 2, 3] {
            bad_shape += 1;
        }
    }
    let unknown = all
        .iter()
        .filter(|i| !actor_ids.contains(&i.actor_id) || !s.faces.contains(&i.face_id) || s.scenario(i.scenario).is_none())
        .count();
    checks.push(make_check(
        "S",
        "sessions hold three interactions covering all conditions",
        bad_shape + unknown,
        format!("{bad_shape} malformed session(s), {unknown} unknown reference(s)"),
    ));

    let pairs: Vec<(Condition, String)> = Condition::ALL
        .iter()
        .flat_map(|c| actor_ids.iter().map(move |a| (*c, a.clone())))
        .collect();
    let (v, d) = unequal(&pairs, &tally(all.iter().map(|i| (i.condition, i.actor_id.clone()))));
    checks.push(make_check("C1", "each condition-actor pair equally often", v, d));

    let cp: Vec<(Condition, usize)> = Condition::ALL
        .iter()
        .flat_map(|c| (1..=INTERACTIONS_PER_SESSION).map(move |p| (*c, p)))
        .collect();
    let (v, d) = unequal(&cp, &tally(all.iter().map(|i| (i.condition, i.position))));
    checks.push(make_check("C2", "each condition equally often in each position", v, d));

    let (mut v, d) = unequal(&actor_ids, &tally(all.iter().map(|i| i.actor_id.clone())));
    let repeats = s
        .sessions
        .iter()
        .filter(|sess| sess.interactions.iter().map(|i| &i.actor_id).collect::<BTreeSet<_>>().len() != sess.interactions.len())
        .count();
    v += repeats;
    checks.push(make_check(
        "C3",
        "actors equally often, distinct within a session",
        v,
        format!("{d}; {repeats} session(s) repeat an actor"),
    ));

    let gender = |id: &str| s.actors.iter().find(|a| a.id == id).map(|a| a.gender);
    let males = s.actors.iter().filter(|a| a.gender == Gender::Male).count();
    let mut v = usize::from(2 * males != s.actors.len());
    for c in Condition::ALL {
        let m = all.iter().filter(|i| i.condition == c && gender(&i.actor_id) == Some(Gender::Male)).count();
        let fm = all.iter().filter(|i| i.condition == c && gender(&i.actor_id) == Some(Gender::Female)).count();
        v += usize::from(m != fm);
    }
    checks.push(make_check(
        "C4",
        "male and female voices balanced per condition",
        v,
        format!("{males} male of {} actors", s.actors.len()),
    ));

    let (mut v, d) = unequal(&ScenarioKey::ALL, &tally(all.iter().map(|i| i.scenario)));
    let mut repeats = 0;
    for sess in &s.sessions {
        for w in sess.interactions.windows(2) {
            if w[0].scenario.task_type == w[1].scenario.task_type {
                repeats += 1;
            }
        }
    }
    v += repeats;
    checks.push(make_check(
        "C5",
        "scenarios equally often, task type never repeated consecutively",
        v,
        format!("{d}; {repeats} consecutive repeat(s)"),
    ));

    let cs: Vec<(Condition, ScenarioKey)> = Condition::ALL
        .iter()
        .flat_map(|c| ScenarioKey::ALL.iter().map(move |k| (*c, *k)))
        .collect();
    let (v, d) = unequal(&cs, &tally(all.iter().map(|i| (i.condition, i.scenario))));
    checks.push(make_check("C6", "task type and item set balanced across conditions", v, d));

    let (mut v, d) = unequal(&s.faces, &tally(all.iter().map(|i| i.face_id.clone())));
    let repeats = s
        .sessions
        .iter()
        .filter(|sess| sess.interactions.iter().map(|i| &i.face_id).collect::<BTreeSet<_>>().len() != sess.interactions.len())
        .count();
    v += repeats;
    checks.push(make_check(
        "C7",
        "faces equally often, distinct within a session",
        v,
        format!("{d}; {repeats} session(s) repeat a face"),
    ));

    let mut v = 0;
    let mut detail = Vec::new();
    let used: BTreeSet<ScenarioKey> = all.iter().map(|i| i.scenario).collect();
    for key in used {
        let Some(sc) = s.scenario(key) else { continue };
        let orders: Vec<&Vec<String>> = all.iter().filter(|i| i.scenario == key).map(|i| &i.item_order).collect();
        v += orders.iter().filter(|o| !sc.is_permutation(o)).count();
        for item in &sc.items {
            let first = orders.iter().any(|o| o.first() == Some(item));
            let last = orders.iter().any(|o| o.last() == Some(item));
            if !first || !last {
                v += 1;
                detail.push(format!("{item} (first: {first}, last: {last})"));
            }
        }
    }
    checks.push(make_check(
        "C8",
        "every item presented first and last at least once",
        v,
        detail.join(", "),
    ));

    ValidationReport { checks }
}
