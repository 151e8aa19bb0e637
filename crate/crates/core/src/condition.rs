//! The five task conditions and their selection budgets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Per-element budget in the element-wise fixed condition and the quota size.
pub const PER_ELEMENT_K: usize = 5;
/// Pooled fixed budget.
pub const POOLED_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskCondition {
    /// Element-wise free choice.
    #[serde(rename = "1-1")]
    C1_1,
    /// Element-wise fixed choice, exactly five per element.
    #[serde(rename = "1-2")]
    C1_2,
    /// Pooled unlabeled free choice.
    #[serde(rename = "2-1")]
    C2_1,
    /// Pooled unlabeled fixed choice, exactly twenty.
    #[serde(rename = "2-2")]
    C2_2,
    /// Pooled labeled, twenty in total with five from each element.
    #[serde(rename = "3")]
    C3,
}

/// Selection budget implied by a condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Budget {
    /// Any number `k >= 0` (per element list or pooled).
    Free,
    /// Exactly `k` from each element list.
    PerElement(usize),
    /// Exactly `k` from the pooled list.
    Pooled(usize),
    /// `total` from the pooled list with exactly `per_element` from each element.
    Quota { total: usize, per_element: usize },
}

impl TaskCondition {
    pub const ALL: [TaskCondition; 5] = [
        TaskCondition::C1_1,
        TaskCondition::C1_2,
        TaskCondition::C2_1,
        TaskCondition::C2_2,
        TaskCondition::C3,
    ];

    pub fn code(self) -> &'static str {
        match self {
            TaskCondition::C1_1 => "1-1",
            TaskCondition::C1_2 => "1-2",
            TaskCondition::C2_1 => "2-1",
            TaskCondition::C2_2 => "2-2",
            TaskCondition::C3 => "3",
        }
    }

    pub fn budget(self) -> Budget {
        match self {
            TaskCondition::C1_1 | TaskCondition::C2_1 => Budget::Free,
            TaskCondition::C1_2 => Budget::PerElement(PER_ELEMENT_K),
            TaskCondition::C2_2 => Budget::Pooled(POOLED_K),
            TaskCondition::C3 => Budget::Quota {
                total: POOLED_K,
                per_element: PER_ELEMENT_K,
            },
        }
    }

    /// Element labels are shown for element-wise and labeled pooled tasks.
    pub fn labels_visible(self) -> bool {
        !matches!(self, TaskCondition::C2_1 | TaskCondition::C2_2)
    }

    /// Element-wise conditions present one candidate list per element.
    pub fn is_element_wise(self) -> bool {
        matches!(self, TaskCondition::C1_1 | TaskCondition::C1_2)
    }

    pub fn is_free_choice(self) -> bool {
        self.budget() == Budget::Free
    }
}

impl fmt::Display for TaskCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for TaskCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().replace(['_', '–'], "-");
        let t = t.trim_start_matches(['C', 'c']);
        TaskCondition::ALL
            .into_iter()
            .find(|c| c.code() == t)
            .ok_or_else(|| format!("unknown task condition `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_codes() {
        assert_eq!("2-2".parse::<TaskCondition>().unwrap(), TaskCondition::C2_2);
        assert_eq!("C1_2".parse::<TaskCondition>().unwrap(), TaskCondition::C1_2);
        assert_eq!("3".parse::<TaskCondition>().unwrap(), TaskCondition::C3);
        assert!("4".parse::<TaskCondition>().is_err());
    }

    #[test]
    fn budgets() {
        assert_eq!(TaskCondition::C1_2.budget(), Budget::PerElement(5));
        assert_eq!(TaskCondition::C2_2.budget(), Budget::Pooled(20));
        assert!(TaskCondition::C2_1.is_free_choice());
        assert!(!TaskCondition::C2_2.labels_visible());
        assert!(TaskCondition::C3.labels_visible());
    }

    #[test]
    fn serde_uses_codes() {
        let s = serde_json::to_string(&TaskCondition::C2_2).unwrap();
        assert_eq!(s, "\"2-2\"");
    }
}
