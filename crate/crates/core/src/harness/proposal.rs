//! Survival-task proposal engine.
//!
//! After the participant ranks the five items the robot asks, three times in
//! a row, to move one item so the ranking better matches the optimal order.
//! When nothing movable is out of place it instead asks to move a random item
//! one position up.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::SurvivalScenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalKind {
    Main,
    Fallback,
}

/// Move `item` from position `from` to `to` (both 1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub item: String,
    pub from: usize,
    pub to: usize,
    pub kind: ProposalKind,
}

/// Σ |position − optimal rank| over all items.
pub fn displacement(ranking: &[String], scenario: &SurvivalScenario) -> usize {
    ranking
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let opt = scenario.optimal_rank(item).expect("ranking is a permutation of the scenario");
            (i + 1).abs_diff(opt)
        })
        .sum()
}

/// Remove the item and reinsert it at the target; others shift.
pub fn apply_move(ranking: &[String], item: &str, to: usize) -> Vec<String> {
    let mut out: Vec<String> = ranking.iter().filter(|i| *i != item).cloned().collect();
    out.insert(to - 1, item.to_string());
    out
}

/// Ranking after the participant's answer; declined items are remembered.
pub fn apply_outcome(
    ranking: &[String],
    p: &Proposal,
    accepted: bool,
    declined: &mut BTreeSet<String>,
) -> Vec<String> {
    if accepted {
        apply_move(ranking, &p.item, p.to)
    } else {
        declined.insert(p.item.clone());
        ranking.to_vec()
    }
}

/// Misplaced items that have not been declined.
pub fn movable_misplaced<'a>(
    ranking: &'a [String],
    scenario: &SurvivalScenario,
    declined: &BTreeSet<String>,
) -> Vec<(&'a String, usize, usize)> {
    ranking
        .iter()
        .enumerate()
        .filter_map(|(i, item)| {
            let opt = scenario.optimal_rank(item)?;
            (opt != i + 1 && !declined.contains(item)).then_some((item, i + 1, opt))
        })
        .collect()
}

/// True when the fallback rule applies: nothing movable is misplaced.
pub fn fallback_applies(ranking: &[String], scenario: &SurvivalScenario, declined: &BTreeSet<String>) -> bool {
    movable_misplaced(ranking, scenario, declined).is_empty()
}

pub trait ProposalStrategy: Send + Sync {
    fn propose(
        &self,
        current: &[String],
        scenario: &SurvivalScenario,
        declined: &BTreeSet<String>,
        rng: &mut dyn RngCore,
    ) -> Proposal;
}

fn fallback(current: &[String], rng: &mut dyn RngCore) -> Proposal {
    let from = *(2..=current.len())
        .collect::<Vec<_>>()
        .choose(rng)
        .expect("at least two items");
    Proposal {
        item: current[from - 1].clone(),
        from,
        to: from - 1,
        kind: ProposalKind::Fallback,
    }
}

/// Candidates by displacement, largest first; ties go to the earlier optimal
/// rank.
fn ranked_candidates<'a>(
    current: &'a [String],
    scenario: &SurvivalScenario,
    declined: &BTreeSet<String>,
) -> Vec<(&'a String, usize, usize)> {
    let mut c = movable_misplaced(current, scenario, declined);
    c.sort_by_key(|(_, pos, opt)| (std::cmp::Reverse(pos.abs_diff(*opt)), *opt));
    c
}

/// Most displaced movable item straight to its optimal rank.
#[derive(Debug, Clone, Copy, Default)]
pub struct MaxDisplacement;

impl ProposalStrategy for MaxDisplacement {
    fn propose(
        &self,
        current: &[String],
        scenario: &SurvivalScenario,
        declined: &BTreeSet<String>,
        rng: &mut dyn RngCore,
    ) -> Proposal {
        match ranked_candidates(current, scenario, declined).first() {
            Some((item, from, opt)) => Proposal {
                item: (*item).clone(),
                from: *from,
                to: *opt,
                kind: ProposalKind::Main,
            },
            None => fallback(current, rng),
        }
    }
}

/// Like [`MaxDisplacement`], but never proposes a move that leaves the
/// ranking no closer to optimal when an improving one exists. Declined items
/// block positions, so the optimal-rank target can be a sideways step.
#[derive(Debug, Clone, Copy, Default)]
pub struct ImprovingMaxDisplacement;

impl ProposalStrategy for ImprovingMaxDisplacement {
    fn propose(
        &self,
        current: &[String],
        scenario: &SurvivalScenario,
        declined: &BTreeSet<String>,
        rng: &mut dyn RngCore,
    ) -> Proposal {
        let candidates = ranked_candidates(current, scenario, declined);
        let Some(&(top, top_from, top_opt)) = candidates.first() else {
            return fallback(current, rng);
        };
        let before = displacement(current, scenario);
        for &(item, from, opt) in &candidates {
            let gain = |to: usize| before as i64 - displacement(&apply_move(current, item, to), scenario) as i64;
            if gain(opt) > 0 {
                return Proposal {
                    item: item.clone(),
                    from,
                    to: opt,
                    kind: ProposalKind::Main,
                };
            }
            // best improving target, nearest to the optimal rank on ties
            let best = (1..=current.len())
                .filter(|&to| to != from)
                .map(|to| (gain(to), std::cmp::Reverse(to.abs_diff(opt)), to))
                .max();
            if let Some((g, _, to)) = best.filter(|(g, _, _)| *g > 0) {
                debug_assert!(g > 0);
                return Proposal {
                    item: item.clone(),
                    from,
                    to,
                    kind: ProposalKind::Main,
                };
            }
        }
        Proposal {
            item: top.clone(),
            from: top_from,
            to: top_opt,
            kind: ProposalKind::Main,
        }
    }
}

/// The engine used by sessions.
pub fn propose_change(
    current: &[String],
    scenario: &SurvivalScenario,
    declined: &BTreeSet<String>,
    rng: &mut dyn RngCore,
) -> Proposal {
    ImprovingMaxDisplacement.propose(current, scenario, declined, rng)
}
