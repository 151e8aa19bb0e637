//! Budget and quota checks on a resolved selection.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::condition::{Budget, TaskCondition};
use crate::library::{ConstraintPool, Element};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationStatus {
    Valid,
    Invalid,
    ParseError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Duplicate { id: String },
    UnknownId { id: String },
    NotPresented { id: String },
    Total { expected: usize, found: usize },
    ElementCount { element: Element, expected: usize, found: usize },
    Parse { detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Duplicate { id } => write!(f, "duplicate selection {id}"),
            Violation::UnknownId { id } => write!(f, "{id} is not in the library"),
            Violation::NotPresented { id } => write!(f, "{id} was not presented"),
            Violation::Total { expected, found } => {
                write!(f, "selected {found}, expected exactly {expected}")
            }
            Violation::ElementCount {
                element,
                expected,
                found,
            } => write!(f, "{element}: selected {found}, expected exactly {expected}"),
            Violation::Parse { detail } => write!(f, "parse: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub status: ValidationStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

impl ValidationResult {
    pub fn is_valid(&self) -> bool {
        self.status == ValidationStatus::Valid
    }

    /// Elements named in element-count violations.
    pub fn offending_elements(&self) -> Vec<Element> {
        self.violations
            .iter()
            .filter_map(|v| match v {
                Violation::ElementCount { element, .. } => Some(*element),
                _ => None,
            })
            .collect()
    }
}

/// Checks duplicates, library membership and the condition's budget.
pub fn validate_selection(
    selections: &[String],
    condition: TaskCondition,
    pool: &ConstraintPool,
) -> ValidationResult {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    let mut per_element: BTreeMap<Element, usize> = Element::ALL.iter().map(|&e| (e, 0)).collect();
    for id in selections {
        if !seen.insert(id.as_str()) {
            violations.push(Violation::Duplicate { id: id.clone() });
            continue;
        }
        match pool.element_of(id) {
            Some(e) => *per_element.get_mut(&e).expect("all elements present") += 1,
            None => violations.push(Violation::UnknownId { id: id.clone() }),
        }
    }
    let total: usize = per_element.values().sum();
    let check_elements = |k: usize, out: &mut Vec<Violation>| {
        for (&element, &found) in &per_element {
            if found != k {
                out.push(Violation::ElementCount {
                    element,
                    expected: k,
                    found,
                });
            }
        }
    };
    match condition.budget() {
        Budget::Free => {}
        Budget::PerElement(k) => check_elements(k, &mut violations),
        Budget::Pooled(k) => {
            if total != k {
                violations.push(Violation::Total {
                    expected: k,
                    found: total,
                });
            }
        }
        Budget::Quota {
            total: k,
            per_element,
        } => {
            if total != k {
                violations.push(Violation::Total {
                    expected: k,
                    found: total,
                });
            }
            check_elements(per_element, &mut violations);
        }
    }
    ValidationResult {
        status: if violations.is_empty() {
            ValidationStatus::Valid
        } else {
            ValidationStatus::Invalid
        },
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pick(pool: &ConstraintPool, counts: [usize; 4]) -> Vec<String> {
        Element::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&e, k)| {
                pool.indices_in(e)
                    .into_iter()
                    .take(k)
                    .map(|i| pool.get(i).id.clone())
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    #[test]
    fn pooled_twenty_is_valid() {
        let pool = ConstraintPool::canonical();
        let r = validate_selection(&pick(&pool, [2, 10, 4, 4]), TaskCondition::C2_2, &pool);
        assert!(r.is_valid(), "{:?}", r.violations);
    }

    #[test]
    fn quota_violation_names_elements() {
        let pool = ConstraintPool::canonical();
        // Event 4, Style 6, Character 5, Setting 5
        let r = validate_selection(&pick(&pool, [4, 6, 5, 5]), TaskCondition::C3, &pool);
        assert_eq!(r.status, ValidationStatus::Invalid);
        let mut named = r.offending_elements();
        named.sort();
        assert_eq!(named, vec![Element::Event, Element::Style]);
    }

    #[test]
    fn free_choice_accepts_empty() {
        let pool = ConstraintPool::canonical();
        assert!(validate_selection(&[], TaskCondition::C2_1, &pool).is_valid());
        assert!(validate_selection(&[], TaskCondition::C1_1, &pool).is_valid());
    }

    #[test]
    fn duplicates_and_unknowns() {
        let pool = ConstraintPool::canonical();
        let mut s = pick(&pool, [5, 5, 5, 4]);
        s.push(s[0].clone());
        let r = validate_selection(&s, TaskCondition::C2_2, &pool);
        assert!(r.violations.contains(&Violation::Duplicate { id: s[0].clone() }));
        let r = validate_selection(&["nope".into()], TaskCondition::C2_1, &pool);
        assert!(r.violations.contains(&Violation::UnknownId { id: "nope".into() }));
    }

    #[test]
    fn element_wise_fixed() {
        let pool = ConstraintPool::canonical();
        assert!(validate_selection(&pick(&pool, [5, 5, 5, 5]), TaskCondition::C1_2, &pool).is_valid());
        let r = validate_selection(&pick(&pool, [5, 5, 5, 6]), TaskCondition::C1_2, &pool);
        assert_eq!(r.offending_elements(), vec![Element::Setting]);
    }
}
