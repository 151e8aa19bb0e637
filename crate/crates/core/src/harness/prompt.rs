//! Candidate-list permutation and user-prompt assembly.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{sub_seed, RunConfig};
use crate::condition::TaskCondition;
use crate::library::{subset_for_condition, CandidateList, ConstraintPool, Element, ListScope};

/// Shuffles a candidate list with Fisher-Yates driven by `seed`.
pub fn permute_pool(candidates: &CandidateList, seed: u64) -> CandidateList {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = candidates.items.clone();
    items.shuffle(&mut rng);
    CandidateList {
        scope: candidates.scope,
        labels_visible: candidates.labels_visible,
        items,
    }
}

/// Permutes every list a condition presents, each from its own seed stream.
pub fn permuted_lists(pool: &ConstraintPool, condition: TaskCondition, seed: u64) -> Vec<CandidateList> {
    subset_for_condition(pool, condition)
        .iter()
        .enumerate()
        .map(|(i, l)| permute_pool(l, sub_seed(seed, &format!("list-{i}"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown template placeholder `{{{0}}}`")]
    UnknownPlaceholder(String),
    #[error("unterminated placeholder in template")]
    Unterminated,
    #[error("condition {condition} expects {expected}, got {found}")]
    WrongLists {
        condition: TaskCondition,
        expected: String,
        found: String,
    },
}

/// Substitutes `{name}` placeholders; `{{` and `}}` are literal braces.
pub fn render_template(template: &str, vars: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 1024);
    let mut chars = template.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some(ch) => name.push(ch),
                        None => return Err(PromptError::Unterminated),
                    }
                }
                match vars.get(name.as_str()) {
                    Some(v) => out.push_str(v),
                    None => return Err(PromptError::UnknownPlaceholder(name)),
                }
            }
            _ => out.push(c),
        }
    }
    Ok(out)
}

const TEMPLATE: &str = "As you plan to write a story, identify the specific constraints that would be most useful for writing a single fictional narrative, and explain your reasoning for why each constraint would help write a better narrative.

Task:
- {given}
- Read through all 200 constraints carefully.
- {select}
- For each selected constraint, explain your reason for choosing it.
- After explaining your individual selections, assess the dynamics among your chosen constraints by explicitly identifying which specific constraints enhance each other and which might interfere with one another. Based on these interactions, evaluate the overall compatibility of your constraint combination and whether it would strengthen or weaken the resulting narrative when applied together in writing.
- There are no restrictions on the length or style of your explanations. Feel free to elaborate as much or as little as you wish.
- You do not need to mention constraints you are not selecting unless you wish to explain why you excluded them.
- List your selections using the specified output format for easy parsing.

Output Format:
- {format_count} The order in which you list them does not matter.
- For each, write only the selected constraint as a JSON object, then your reason in the \"reason\" field.
- Each constraint and its reason must appear as a separate element in a single JSON array containing all elements.
- After listing all selected constraints, include only one paragraph that explains the overall compatibility among all your chosen constraints as a JSON object in the form {{\"compatibility\": \"[your explanation]\"}}, and place it at the end of the array.

Example Output: {example}
Constraint List: {constraints}";

const EXAMPLE: &str = r#"[
  {"constraint": "[selected constraint]", "reason": "[your reason]"},
  {"constraint": "[selected constraint]", "reason": "[your reason]"},
  {"compatibility": "[your explanation]"}
]"#;

fn condition_phrases(condition: TaskCondition) -> (&'static str, &'static str, &'static str) {
    match condition {
        TaskCondition::C1_1 => (
            "You will be given four lists of 50 possible narrative constraints, one list for each narrative element (Event, Style, Character, Setting).",
            "For each element, select as many constraints as you consider useful for writing a fictional narrative. You may select any number, including none.",
            "Select any number of constraints for each element.",
        ),
        TaskCondition::C1_2 => (
            "You will be given four lists of 50 possible narrative constraints, one list for each narrative element (Event, Style, Character, Setting).",
            "For each element, select exactly 5 constraints you consider most useful for writing a fictional narrative.",
            "Select exactly 5 constraints for each element.",
        ),
        TaskCondition::C2_1 => (
            "You will be given a list of 200 possible narrative constraints.",
            "Select as many constraints as you consider useful for writing a fictional narrative. You may select any number, including none.",
            "Select any number of constraints.",
        ),
        TaskCondition::C2_2 => (
            "You will be given a list of 200 possible narrative constraints.",
            "Select exactly 20 constraints you consider most useful for writing a fictional narrative.",
            "Select exactly 20 constraints.",
        ),
        TaskCondition::C3 => (
            "You will be given a list of 200 possible narrative constraints, each labeled with its narrative element (Event, Style, Character, Setting).",
            "Select exactly 20 constraints in total that you consider most useful for writing a fictional narrative, with exactly 5 from each element (Event, Style, Character, Setting).",
            "Select exactly 20 constraints, 5 from each element.",
        ),
    }
}

fn check_lists(
    pool: &ConstraintPool,
    condition: TaskCondition,
    lists: &[CandidateList],
) -> Result<(), PromptError> {
    let wrong = |expected: String, found: String| PromptError::WrongLists {
        condition,
        expected,
        found,
    };
    if condition.is_element_wise() {
        if lists.len() != Element::ALL.len() {
            return Err(wrong("4 element lists".into(), format!("{} lists", lists.len())));
        }
        for (l, e) in lists.iter().zip(Element::ALL) {
            let want = pool.indices_in(e).len();
            if l.scope != ListScope::Element(e) || !l.labels_visible {
                return Err(wrong(format!("a labeled {e} list"), format!("{:?}", l.scope)));
            }
            if l.len() != want || l.items.iter().any(|&i| pool.get(i).element != e) {
                return Err(wrong(
                    format!("{want} {e} constraints"),
                    format!("{} items", l.len()),
                ));
            }
        }
    } else {
        if lists.len() != 1 || lists[0].scope != ListScope::Pooled {
            return Err(wrong("one pooled list".into(), format!("{} lists", lists.len())));
        }
        let l = &lists[0];
        if l.len() != pool.len() {
            return Err(wrong(format!("{} constraints", pool.len()), format!("{} items", l.len())));
        }
        if l.labels_visible != condition.labels_visible() {
            return Err(wrong(
                format!("labels_visible = {}", condition.labels_visible()),
                format!("labels_visible = {}", l.labels_visible),
            ));
        }
    }
    Ok(())
}

/// Renders the constraint list block in presentation order. Axis
/// annotations are never shown.
fn render_constraints(pool: &ConstraintPool, lists: &[CandidateList]) -> String {
    let mut out = String::new();
    for l in lists {
        if let ListScope::Element(e) = l.scope {
            out.push_str(&format!("\n\n{e} constraints:"));
        }
        for &i in &l.items {
            let c = pool.get(i);
            if l.labels_visible && l.scope == ListScope::Pooled {
                out.push_str(&format!("\n- [{}] {}", c.element, c.text));
            } else {
                out.push_str(&format!("\n- {}", c.text));
            }
        }
    }
    out
}

/// Builds the system and user prompts for one run from already permuted lists.
pub fn assemble_prompt(
    config: &RunConfig,
    pool: &ConstraintPool,
    lists: &[CandidateList],
) -> Result<PromptBundle, PromptError> {
    check_lists(pool, config.condition, lists)?;
    let (given, select, format_count) = condition_phrases(config.condition);
    let mut vars = BTreeMap::new();
    vars.insert("given", given.to_string());
    vars.insert("select", select.to_string());
    vars.insert("format_count", format_count.to_string());
    vars.insert("example", format!("\n{EXAMPLE}"));
    vars.insert("constraints", render_constraints(pool, lists));
    Ok(PromptBundle {
        system_text: config.persona.system_text().to_string(),
        user_text: render_template(TEMPLATE, &vars)?,
    })
}
