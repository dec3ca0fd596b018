use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::{bonferroni, friedman, friedman_exact, QuestionnaireTopics, RepeatedMeasures, StatsError, TestResult};
use crate::harness::{Condition, SessionLog};

pub const DEFAULT_FAMILY_SIZE: usize = 4;

/// Table row order: natural, copy, still.
pub const TABLE_CONDITIONS: [Condition; 3] = [Condition::Natural, Condition::Copy, Condition::Still];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Accepted,
    Credibility,
    Likeability,
    Trust,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Accepted, Category::Credibility, Category::Likeability, Category::Trust];

    pub fn label(self) -> &'static str {
        match self {
            Category::Accepted => "Accepted robot suggestions",
            Category::Credibility => "Credibility",
            Category::Likeability => "Likeability",
            Category::Trust => "Trust",
        }
    }
}

pub fn condition_label(c: Condition) -> &'static str {
    match c {
        Condition::Natural => "Natural movement",
        Condition::Copy => "Copy",
        Condition::Still => "Still",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Descriptive {
    pub n: usize,
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation; 0 when n = 1.
    pub sd: f64,
}

impl Descriptive {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        };
        let mean = v.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { n, median, mean, sd })
    }

    /// `1.4±0.9`
    pub fn mean_sd(&self) -> String {
        format!("{:.1}±{:.1}", self.mean, self.sd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub category: Category,
    pub condition: Condition,
    pub stats: Descriptive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryTest {
    pub category: Category,
    pub result: TestResult,
    pub exact_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    pub tests: Vec<CategoryTest>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SummaryOptions {
    pub m: usize,
    pub exact: bool,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        Self {
            m: DEFAULT_FAMILY_SIZE,
            exact: false,
        }
    }
}

/// Descriptives per condition and category, plus one Friedman test per
/// category over the participants with all three conditions complete.
pub fn summarize(
    logs: &[SessionLog],
    topics: &QuestionnaireTopics,
    opts: SummaryOptions,
) -> Result<SummaryTable, StatsError> {
    let mut warnings = Vec::new();
    // category -> participant -> condition -> value
    let mut values: BTreeMap<Category, BTreeMap<String, BTreeMap<Condition, f64>>> = BTreeMap::new();
    let mut complete_sessions = 0;
    for s in logs {
        let mut any = false;
        for i in &s.interactions {
            if !i.is_complete() {
                warnings.push(format!(
                    "{} interaction {}: incomplete, excluded",
                    s.participant_id, i.position
                ));
                continue;
            }
            any = true;
            let mut put = |c: Category, v: f64| {
                values
                    .entry(c)
                    .or_default()
                    .entry(s.participant_id.clone())
                    .or_default()
                    .insert(i.condition, v);
            };
            put(Category::Accepted, i.accepted_count as f64);
            let q = i.questionnaire.as_ref().expect("complete interaction");
            match topics.scores(&q.answers) {
                Ok(sc) => {
                    put(Category::Credibility, sc.credibility);
                    put(Category::Likeability, sc.likeability);
                    put(Category::Trust, sc.trust);
                }
                Err(e) => warnings.push(format!("{} interaction {}: {e}", s.participant_id, i.position)),
            }
        }
        complete_sessions += usize::from(any);
    }
    if complete_sessions == 0 {
        return Err(StatsError::NoData);
    }

    let mut rows = Vec::new();
    let mut tests = Vec::new();
    for cat in Category::ALL {
        let Some(by_participant) = values.get(&cat) else {
            warnings.push(format!("{}: no data, row omitted", cat.label()));
            continue;
        };
        for cond in TABLE_CONDITIONS {
            let v: Vec<f64> = by_participant.values().filter_map(|m| m.get(&cond).copied()).collect();
            match Descriptive::of(&v) {
                Some(stats) => {
                    if stats.n == 1 {
                        warnings.push(format!("{} / {}: n=1, sd reported as 0", cat.label(), condition_label(cond)));
                    }
                    rows.push(SummaryRow {
                        category: cat,
                        condition: cond,
                        stats,
                    })
                }
                None => warnings.push(format!("{} / {}: no data, row omitted", cat.label(), condition_label(cond))),
            }
        }
        let full: Vec<Vec<f64>> = by_participant
            .values()
            .filter(|m| m.len() == 3)
            .map(|m| TABLE_CONDITIONS.iter().map(|c| m[c]).collect())
            .collect();
        if full.len() < 2 {
            warnings.push(format!("{}: fewer than 2 complete participants, no test", cat.label()));
            continue;
        }
        let labels = TABLE_CONDITIONS.iter().map(|c| c.name().to_string()).collect();
        let data = RepeatedMeasures::new(full, Some(labels))?;
        let result = friedman(&data);
        let exact_p = if opts.exact { friedman_exact(&data).ok() } else { None };
        tests.push(CategoryTest {
            category: cat,
            result,
            exact_p,
        });
    }
    let raw: Vec<f64> = tests.iter().map(|t| t.result.p_raw).collect();
    let adjusted = bonferroni(&raw, opts.m.max(raw.len()))?;
    for (t, p) in tests.iter_mut().zip(adjusted) {
        t.result.m = opts.m.max(raw.len());
        t.result.p_adjusted = p;
    }
    Ok(SummaryTable { rows, tests, warnings })
}

impl SummaryTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Condition | Category | Median | Average |\n|---|---|---|---|\n");
        let mut last = None;
        for r in &self.rows {
            let group = if last == Some(r.category) { "" } else { r.category.label() };
            last = Some(r.category);
            let _ = writeln!(
                s,
                "| {group} | {} | {:.1} | {} |",
                condition_label(r.condition),
                r.stats.median,
                r.stats.mean_sd()
            );
        }
        if !self.tests.is_empty() {
            s.push('\n');
            for t in &self.tests {
                let _ = write!(s, "- {}: {} ({})", t.category.label(), t.result.format_short(), t.result.variant());
                if let Some(p) = t.exact_p {
                    let _ = write!(s, ", exact p={}", super::format_p(p));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category", "condition", "n", "median", "mean", "sd", "chi2", "p_raw", "p_adjusted"])
            .expect("in-memory csv");
        for r in &self.rows {
            let t = self.tests.iter().find(|t| t.category == r.category);
            w.write_record([
                format!("{:?}", r.category).to_lowercase(),
                r.condition.name().to_string(),
                r.stats.n.to_string(),
                format!("{}", r.stats.median),
                format!("{}", r.stats.mean),
                format!("{}", r.stats.sd),
                t.map(|t| format!("{}", t.result.chi2)).unwrap_or_default(),
                t.map(|t| format!("{}", t.result.p_raw)).unwrap_or_default(),
                t.map(|t| format!("{}", t.result.p_adjusted)).unwrap_or_default(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("csv is utf-8")
    }
}
