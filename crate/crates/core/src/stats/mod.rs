//! Analysis of session logs: questionnaire topic scores, the tie-corrected
//! Friedman test with Bonferroni adjustment, and the summary table.

mod friedman;
mod gamma;
mod summary;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use friedman::{bonferroni, format_p, friedman, friedman_exact, midranks, TestResult, EXACT_MAX_N};
pub use gamma::{chi2_cdf, chi2_sf, gamma_p, gamma_q, ln_gamma};
pub use summary::{
    condition_label, summarize, Category, CategoryTest, Descriptive, SummaryOptions, SummaryRow, SummaryTable,
    DEFAULT_FAMILY_SIZE, TABLE_CONDITIONS,
};

const TOPICS_TOML: &str = include_str!("../../data/questionnaire_topics.toml");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least 2 subjects and 2 conditions, got {n}x{k}")]
    Shape { n: usize, k: usize },
    #[error("row {0} has a different number of conditions")]
    Ragged(usize),
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("expected {expected} answers, got {got}")]
    AnswerCount { expected: usize, got: usize },
    #[error("topic config: {0}")]
    Topics(String),
    #[error("family size {m} is smaller than the {tests} test(s) given")]
    FamilySize { m: usize, tests: usize },
    #[error("p-value {0} outside [0, 1]")]
    PValue(f64),
    #[error("exact test supports k = 3 and n <= 12, got n={n}, k={k}")]
    ExactUnsupported { n: usize, k: usize },
    #[error("no complete session to summarize")]
    NoData,
}

/// n subjects × k conditions, no missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedMeasures {
    data: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl RepeatedMeasures {
    pub fn new(data: Vec<Vec<f64>>, labels: Option<Vec<String>>) -> Result<Self, StatsError> {
        let n = data.len();
        let k = data.first().map_or(0, Vec::len);
        if n < 2 || k < 2 {
            return Err(StatsError::Shape { n, k });
        }
        for (i, r) in data.iter().enumerate() {
            if r.len() != k {
                return Err(StatsError::Ragged(i));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::NonFinite(i));
            }
        }
        let labels = labels.unwrap_or_else(|| (1..=k).map(|j| format!("c{j}")).collect());
        Ok(Self { data, labels })
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.iter().map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TopicScores {
    pub credibility: f64,
    pub likeability: f64,
    pub trust: f64,
}

/// Which questionnaire items (1-based) belong to which topic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionnaireTopics {
    pub credibility: Vec<usize>,
    pub likeability: Vec<usize>,
    pub trust: Vec<usize>,
}

impl QuestionnaireTopics {
    pub fn parse(text: &str) -> Result<Self, StatsError> {
        let t: Self = toml::from_str(text).map_err(|e| StatsError::Topics(e.to_string()))?;
        t.check()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, StatsError> {
        let text = std::fs::read_to_string(path).map_err(|e| StatsError::Topics(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn builtin() -> Self {
        Self::parse(TOPICS_TOML).expect("bundled topic config is valid")
    }

    pub fn len(&self) -> usize {
        self.credibility.len() + self.likeability.len() + self.trust.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The three lists must partition 1..=len.
    fn check(&self) -> Result<(), StatsError> {
        let mut all: Vec<usize> = [&self.credibility, &self.likeability, &self.trust]
            .into_iter()
            .flatten()
            .copied()
            .collect();
        all.sort_unstable();
        if all != (1..=all.len()).collect::<Vec<_>>() || [&self.credibility, &self.likeability, &self.trust].iter().any(|v| v.is_empty()) {
            return Err(StatsError::Topics("topics must partition the question indices 1..=n".into()));
        }
        Ok(())
    }

    pub fn scores(&self, answers: &[u8]) -> Result<TopicScores, StatsError> {
        if answers.len() != self.len() {
            return Err(StatsError::AnswerCount {
                expected: self.len(),
                got: answers.len(),
            });
        }
        let mean = |qs: &[usize]| qs.iter().map(|&q| f64::from(answers[q - 1])).sum::<f64>() / qs.len() as f64;
        Ok(TopicScores {
            credibility: mean(&self.credibility),
            likeability: mean(&self.likeability),
            trust: mean(&self.trust),
        })
    }
}

/// Topic averages with the bundled item assignment.
pub fn topic_scores(answers: &[u8]) -> Result<TopicScores, StatsError> {
    QuestionnaireTopics::builtin().scores(answers)
}
