use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;

const LUNAR_JSON: &str = include_str!("../../data/lunar.json");
const DESERT_JSON: &str = include_str!("../../data/desert.json");

/// Items per scenario.
pub const SCENARIO_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Lunar,
    Desert,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemSet {
    Better,
    Worse,
}

impl TaskType {
    pub const ALL: [TaskType; 2] = [TaskType::Lunar, TaskType::Desert];
}

impl ItemSet {
    pub const ALL: [ItemSet; 2] = [ItemSet::Better, ItemSet::Worse];
}

/// (task type, item set); four in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ScenarioKey {
    pub task_type: TaskType,
    pub item_set: ItemSet,
}

impl ScenarioKey {
    pub const ALL: [ScenarioKey; 4] = [
        ScenarioKey::new(TaskType::Lunar, ItemSet::Better),
        ScenarioKey::new(TaskType::Lunar, ItemSet::Worse),
        ScenarioKey::new(TaskType::Desert, ItemSet::Better),
        ScenarioKey::new(TaskType::Desert, ItemSet::Worse),
    ];

    pub const fn new(task_type: TaskType, item_set: ItemSet) -> Self {
        Self { task_type, item_set }
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|k| *k == self).expect("all keys listed")
    }
}

impl fmt::Display for ScenarioKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = match self.task_type {
            TaskType::Lunar => "lunar",
            TaskType::Desert => "desert",
        };
        let s = match self.item_set {
            ItemSet::Better => "better",
            ItemSet::Worse => "worse",
        };
        write!(f, "{t}-{s}")
    }
}

impl FromStr for ScenarioKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKey::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub name: String,
    pub expert_rank: u32,
}

/// A full expert-ranked list as shipped in the data files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemList {
    pub task_type: TaskType,
    pub items: Vec<Item>,
}

impl ItemList {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut list: ItemList = serde_json::from_str(text).map_err(|e| HarnessError::Data(e.to_string()))?;
        list.items.sort_by_key(|i| i.expert_rank);
        let ranks: Vec<u32> = list.items.iter().map(|i| i.expert_rank).collect();
        if ranks != (1..=list.items.len() as u32).collect::<Vec<_>>() {
            return Err(HarnessError::Data("expert ranks must be 1..n without gaps".into()));
        }
        Ok(list)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn builtin(task: TaskType) -> Self {
        let text = match task {
            TaskType::Lunar => LUNAR_JSON,
            TaskType::Desert => DESERT_JSON,
        };
        Self::parse(text).expect("bundled item list is valid")
    }

    /// The ten items in the middle of the list, split into the upper and
    /// lower five.
    pub fn scenario(&self, set: ItemSet) -> Result<SurvivalScenario, HarnessError> {
        let n = self.items.len();
        if n < 2 * SCENARIO_SIZE {
            return Err(HarnessError::Data(format!("need at least 10 items, got {n}")));
        }
        let skip = (n - 2 * SCENARIO_SIZE) / 2;
        let middle = &self.items[skip..skip + 2 * SCENARIO_SIZE];
        let chosen = match set {
            ItemSet::Better => &middle[..SCENARIO_SIZE],
            ItemSet::Worse => &middle[SCENARIO_SIZE..],
        };
        SurvivalScenario::new(
            ScenarioKey::new(self.task_type, set),
            chosen.iter().map(|i| (i.id.clone(), i.name.clone())).collect(),
        )
    }
}

/// Five items and their optimal order (1 = most important).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalScenario {
    pub key: ScenarioKey,
    /// Item ids in optimal order.
    pub items: Vec<String>,
    pub names: BTreeMap<String, String>,
}

impl SurvivalScenario {
    pub fn new(key: ScenarioKey, items_in_optimal_order: Vec<(String, String)>) -> Result<Self, HarnessError> {
        if items_in_optimal_order.len() != SCENARIO_SIZE {
            return Err(HarnessError::Data(format!(
                "scenario needs {SCENARIO_SIZE} items, got {}",
                items_in_optimal_order.len()
            )));
        }
        let names: BTreeMap<_, _> = items_in_optimal_order.iter().cloned().collect();
        if names.len() != SCENARIO_SIZE {
            return Err(HarnessError::Data("duplicate item in scenario".into()));
        }
        Ok(Self {
            key,
            items: items_in_optimal_order.into_iter().map(|(id, _)| id).collect(),
            names,
        })
    }

    /// 1-based optimal rank.
    pub fn optimal_rank(&self, item: &str) -> Option<usize> {
        self.items.iter().position(|i| i == item).map(|p| p + 1)
    }

    pub fn optimal_ranks(&self) -> BTreeMap<String, usize> {
        self.items.iter().enumerate().map(|(i, id)| (id.clone(), i + 1)).collect()
    }

    /// Is `ranking` a permutation of this scenario's items?
    pub fn is_permutation(&self, ranking: &[String]) -> bool {
        let mut a = ranking.to_vec();
        let mut b = self.items.clone();
        a.sort();
        b.sort();
        a == b
    }
}

/// The four scenarios built from the bundled lists.
pub fn builtin_scenarios() -> Vec<SurvivalScenario> {
    ScenarioKey::ALL
        .iter()
        .map(|k| ItemList::builtin(k.task_type).scenario(k.item_set).expect("bundled lists have 15 items"))
        .collect()
}
