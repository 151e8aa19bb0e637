//! The annotated narrative-constraint library.
//!
//! The library file is UTF-8 text, one record per line:
//!
//! ```text
//! id<TAB>element<TAB>category<TAB>axes(comma-separated)<TAB>text
//! ```
//!
//! Lines starting with `#` are comments. A canonical copy ships with the crate
//! and is available through [`ConstraintPool::canonical`].

mod taxonomy;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::TaskCondition;
pub use taxonomy::{AxisDimension, AxisKey, Category, Element};

const CANONICAL_LIBRARY: &str = include_str!("../../data/constraints.tsv");

/// Constraints per category and categories per element.
pub const PER_CATEGORY: usize = 10;
pub const PER_ELEMENT: usize = 50;
pub const POOL_SIZE: usize = 200;

/// Word-length band that constraint sentences aim for.
pub const WORD_RANGE: std::ops::RangeInclusive<usize> = 15..=20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub id: String,
    pub element: Element,
    pub category: Category,
    pub axes: Vec<String>,
    pub text: String,
}

impl Constraint {
    /// Axis keys of this constraint in annotation order.
    pub fn axis_keys(&self) -> impl Iterator<Item = AxisKey> + '_ {
        self.axes.iter().enumerate().map(|(i, code)| AxisKey {
            category: self.category,
            dimension: i,
            code: code.clone(),
        })
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

#[derive(Debug, Error)]
pub enum LibraryError {
    #[error("library is empty")]
    Empty,
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate constraint id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown element `{value}`")]
    UnknownElement { line: usize, value: String },
    #[error("line {line}: unknown category `{value}`")]
    UnknownCategory { line: usize, value: String },
    #[error("line {line}: category `{category}` does not belong to element `{element}`")]
    CategoryMismatch {
        line: usize,
        element: Element,
        category: Category,
    },
    #[error("line {line}: axis code `{code}` is not legal for {category} (position {position})")]
    UnknownAxis {
        line: usize,
        category: Category,
        position: usize,
        code: String,
    },
    #[error("library failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("reading library: {0}")]
    Io(#[from] std::io::Error),
}

/// An immutable set of constraints indexed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintPool {
    constraints: Vec<Constraint>,
    index: HashMap<String, usize>,
}

impl ConstraintPool {
    /// Builds a pool from records, checking only id uniqueness.
    pub fn new(constraints: Vec<Constraint>) -> Result<Self, LibraryError> {
        let mut index = HashMap::with_capacity(constraints.len());
        for (i, c) in constraints.iter().enumerate() {
            if index.insert(c.id.clone(), i).is_some() {
                return Err(LibraryError::DuplicateId {
                    line: i + 1,
                    id: c.id.clone(),
                });
            }
        }
        Ok(Self { constraints, index })
    }

    /// The library shipped with the crate.
    pub fn canonical() -> Self {
        load_library(CANONICAL_LIBRARY.as_bytes()).expect("bundled library is valid")
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn get(&self, idx: usize) -> &Constraint {
        &self.constraints[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&Constraint> {
        self.index_of(id).map(|i| &self.constraints[i])
    }

    pub fn element_of(&self, id: &str) -> Option<Element> {
        self.by_id(id).map(|c| c.element)
    }

    /// Pool indices of the constraints in `element`, in file order.
    pub fn indices_in(&self, element: Element) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.constraints[i].element == element)
            .collect()
    }

    /// Serializes the pool back to the library file format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# narrative constraint library, format version 1\n");
        out.push_str("# id\telement\tcategory\taxes\ttext\n");
        for c in &self.constraints {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                c.id,
                c.element,
                c.category,
                c.axes.join(","),
                c.text
            ));
        }
        out
    }
}

/// Parses and validates a library. Hard validation violations are errors.
pub fn load_library<R: BufRead>(source: R) -> Result<ConstraintPool, LibraryError> {
    let pool = parse_library(source)?;
    let report = validate_pool(&pool);
    if !report.hard.is_empty() {
        return Err(LibraryError::Invalid(report));
    }
    Ok(pool)
}

/// Parses records without enforcing the pool-level count invariants.
pub fn parse_library<R: BufRead>(source: R) -> Result<ConstraintPool, LibraryError> {
    let mut constraints = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 5 {
            return Err(LibraryError::Malformed {
                line: line_no,
                reason: format!("expected 5 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(LibraryError::Malformed {
                line: line_no,
                reason: "empty id".into(),
            });
        }
        if seen.insert(id.to_string(), line_no).is_some() {
            return Err(LibraryError::DuplicateId {
                line: line_no,
                id: id.to_string(),
            });
        }
        let element: Element = fields[1].parse().map_err(|_| LibraryError::UnknownElement {
            line: line_no,
            value: fields[1].to_string(),
        })?;
        let category: Category =
            fields[2].parse().map_err(|_| LibraryError::UnknownCategory {
                line: line_no,
                value: fields[2].to_string(),
            })?;
        if category.element() != element {
            return Err(LibraryError::CategoryMismatch {
                line: line_no,
                element,
                category,
            });
        }
        let axes: Vec<String> = fields[3]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        let dims = category.dimensions();
        if axes.is_empty() || axes.len() != dims.len() {
            return Err(LibraryError::Malformed {
                line: line_no,
                reason: format!(
                    "{category} expects {} axis codes, found {}",
                    dims.len(),
                    axes.len()
                ),
            });
        }
        for (pos, (code, d)) in axes.iter().zip(dims).enumerate() {
            if !d.accepts(code) {
                return Err(LibraryError::UnknownAxis {
                    line: line_no,
                    category,
                    position: pos + 1,
                    code: code.clone(),
                });
            }
        }
        let text = fields[4].trim();
        if text.is_empty() {
            return Err(LibraryError::Malformed {
                line: line_no,
                reason: "empty constraint text".into(),
            });
        }
        constraints.push(Constraint {
            id: id.to_string(),
            element,
            category,
            axes,
            text: text.to_string(),
        });
    }
    if constraints.is_empty() {
        return Err(LibraryError::Empty);
    }
    ConstraintPool::new(constraints)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum HardViolation {
    PoolSize { found: usize },
    ElementCount { element: Element, found: usize },
    CategoryCount { category: Category, found: usize },
    AxisTaxonomy { id: String, detail: String },
}

impl fmt::Display for HardViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HardViolation::PoolSize { found } => {
                write!(f, "pool has {found} of {POOL_SIZE} constraints")
            }
            HardViolation::ElementCount { element, found } => {
                write!(f, "element {element} has {found} of {PER_ELEMENT}")
            }
            HardViolation::CategoryCount { category, found } => {
                write!(f, "category {category} has {found} of {PER_CATEGORY}")
            }
            HardViolation::AxisTaxonomy { id, detail } => write!(f, "{id}: {detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WordCountWarning {
    pub id: String,
    pub words: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub hard: Vec<HardViolation>,
    pub soft: Vec<WordCountWarning>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.hard.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hard: Vec<String> = self.hard.iter().map(|v| v.to_string()).collect();
        write!(
            f,
            "{} hard violation(s){}{}; {} word-count warning(s)",
            hard.len(),
            if hard.is_empty() { "" } else { ": " },
            hard.join("; "),
            self.soft.len()
        )
    }
}

/// Checks the pool against the 4x5x10 layout and the axis taxonomy, and
/// warns about sentences outside the 15-20 word band. The *Write like X*
/// items are short by construction and exempt from the word check.
pub fn validate_pool(pool: &ConstraintPool) -> ValidationReport {
    let mut report = ValidationReport::default();
    if pool.len() != POOL_SIZE {
        report.hard.push(HardViolation::PoolSize { found: pool.len() });
    }
    let mut per_element: BTreeMap<Element, usize> = BTreeMap::new();
    let mut per_category: BTreeMap<Category, usize> = BTreeMap::new();
    for c in pool.constraints() {
        *per_element.entry(c.element).or_default() += 1;
        *per_category.entry(c.category).or_default() += 1;

        let dims = c.category.dimensions();
        if c.category.element() != c.element {
            report.hard.push(HardViolation::AxisTaxonomy {
                id: c.id.clone(),
                detail: format!("category {} is not part of {}", c.category, c.element),
            });
        }
        if c.axes.len() != dims.len() {
            report.hard.push(HardViolation::AxisTaxonomy {
                id: c.id.clone(),
                detail: format!("expected {} axis codes, found {}", dims.len(), c.axes.len()),
            });
        }
        for (code, d) in c.axes.iter().zip(dims) {
            if !d.accepts(code) {
                report.hard.push(HardViolation::AxisTaxonomy {
                    id: c.id.clone(),
                    detail: format!("axis code {code} not legal for {} {}", c.category, d.name),
                });
            }
        }

        let words = c.word_count();
        if c.category != Category::WriteLikeX && !WORD_RANGE.contains(&words) {
            report.soft.push(WordCountWarning {
                id: c.id.clone(),
                words,
            });
        }
    }
    for e in Element::ALL {
        let found = per_element.get(&e).copied().unwrap_or(0);
        if found != PER_ELEMENT {
            report.hard.push(HardViolation::ElementCount { element: e, found });
        }
    }
    for cat in Category::ALL {
        let found = per_category.get(&cat).copied().unwrap_or(0);
        if found != PER_CATEGORY {
            report.hard.push(HardViolation::CategoryCount {
                category: cat,
                found,
            });
        }
    }
    report
}

/// Which part of the library a candidate list covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ListScope {
    Pooled,
    Element(Element),
}

/// An ordered list of pool indices presented to a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateList {
    pub scope: ListScope,
    pub labels_visible: bool,
    pub items: Vec<usize>,
}

impl CandidateList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Candidate lists shown under `condition`, in library order (not permuted).
///
/// Element-wise conditions get four labeled per-element lists; pooled
/// conditions get one list, labeled only for the quota condition.
pub fn subset_for_condition(pool: &ConstraintPool, condition: TaskCondition) -> Vec<CandidateList> {
    if condition.is_element_wise() {
        Element::ALL
            .into_iter()
            .map(|e| CandidateList {
                scope: ListScope::Element(e),
                labels_visible: true,
                items: pool.indices_in(e),
            })
            .collect()
    } else {
        vec![CandidateList {
            scope: ListScope::Pooled,
            labels_visible: condition.labels_visible(),
            items: (0..pool.len()).collect(),
        }]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn canonical_pool_shape() {
        let pool = ConstraintPool::canonical();
        assert_eq!(pool.len(), 200);
        for e in Element::ALL {
            assert_eq!(pool.indices_in(e).len(), 50);
        }
        assert_eq!(pool.by_id("event_9").unwrap().category, Category::EpistemologicalTransformation);
        assert_eq!(pool.by_id("style_48").unwrap().category, Category::NarrativePerspective);
        assert_eq!(pool.by_id("setting_18").unwrap().axes, vec!["NR", "XTR"]);
    }

    #[test]
    fn canonical_pool_has_no_hard_violations() {
        let report = validate_pool(&ConstraintPool::canonical());
        assert!(report.hard.is_empty(), "{report}");
        let pool = ConstraintPool::canonical();
        for w in &report.soft {
            assert_ne!(pool.by_id(&w.id).unwrap().category, Category::WriteLikeX);
        }
    }

    #[test]
    fn empty_stream_is_an_error() {
        let err = load_library("".as_bytes()).unwrap_err();
        assert!(matches!(err, LibraryError::Empty));
        let err = load_library("# only a comment\n\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LibraryError::Empty));
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = "a_1\tEvent\tDiffusion\tV,S,R\tone\na_1\tEvent\tDiffusion\tV,S,R\ttwo\n";
        match parse_library(text.as_bytes()).unwrap_err() {
            LibraryError::DuplicateId { line, id } => {
                assert_eq!(id, "a_1");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_codes_report_line() {
        let text = "# header\nx\tPlot\tDiffusion\tV,S,R\tt\n";
        assert!(matches!(
            parse_library(text.as_bytes()).unwrap_err(),
            LibraryError::UnknownElement { line: 2, .. }
        ));
        let text = "x\tEvent\tMystery\tV,S,R\tt\n";
        assert!(matches!(
            parse_library(text.as_bytes()).unwrap_err(),
            LibraryError::UnknownCategory { line: 1, .. }
        ));
        let text = "x\tEvent\tDiffusion\tV,S,Q\tt\n";
        assert!(matches!(
            parse_library(text.as_bytes()).unwrap_err(),
            LibraryError::UnknownAxis { line: 1, position: 3, .. }
        ));
        let text = "x\tStyle\tDiffusion\tV,S,R\tt\n";
        assert!(matches!(
            parse_library(text.as_bytes()).unwrap_err(),
            LibraryError::CategoryMismatch { .. }
        ));
        let text = "x\tEvent\tDiffusion\tV,S,R\n";
        assert!(matches!(
            parse_library(text.as_bytes()).unwrap_err(),
            LibraryError::Malformed { line: 1, .. }
        ));
    }

    #[test]
    fn missing_setting_constraint_is_a_hard_violation() {
        let pool = ConstraintPool::canonical();
        let kept: Vec<Constraint> = pool
            .constraints()
            .iter()
            .filter(|c| c.id != "setting_3")
            .cloned()
            .collect();
        let report = validate_pool(&ConstraintPool::new(kept).unwrap());
        let msgs: Vec<String> = report.hard.iter().map(|v| v.to_string()).collect();
        assert!(
            msgs.contains(&"category Temporal Setting has 9 of 10".to_string()),
            "{msgs:?}"
        );
        assert!(msgs.contains(&"element Setting has 49 of 50".to_string()));
        assert!(msgs.contains(&"pool has 199 of 200 constraints".to_string()));
        // the loader refuses such a pool
        let tsv = ConstraintPool::new(
            pool.constraints()
                .iter()
                .filter(|c| c.id != "setting_3")
                .cloned()
                .collect(),
        )
        .unwrap()
        .to_tsv();
        assert!(matches!(
            load_library(tsv.as_bytes()).unwrap_err(),
            LibraryError::Invalid(_)
        ));
    }

    #[test]
    fn long_sentence_is_only_a_warning() {
        let pool = ConstraintPool::canonical();
        let mut cs = pool.constraints().to_vec();
        let forty = vec!["word"; 40].join(" ");
        cs[0].text = forty.clone();
        let report = validate_pool(&ConstraintPool::new(cs.clone()).unwrap());
        assert!(report.hard.is_empty());
        assert!(report.soft.contains(&WordCountWarning {
            id: "event_1".into(),
            words: 40
        }));
        // Write like X entries are exempt
        let wl = cs.iter().position(|c| c.id == "style_1").unwrap();
        cs[wl].text = forty;
        let report = validate_pool(&ConstraintPool::new(cs).unwrap());
        assert!(!report.soft.iter().any(|w| w.id == "style_1"));
    }

    #[test]
    fn word_count_is_whitespace_tokens() {
        let c = Constraint {
            id: "x".into(),
            element: Element::Event,
            category: Category::Diffusion,
            axes: vec![],
            text: "  two\twords \n and  more ".into(),
        };
        assert_eq!(c.word_count(), 4);
    }

    #[test]
    fn subsets_per_condition() {
        let pool = ConstraintPool::canonical();
        let lists = subset_for_condition(&pool, TaskCondition::C2_2);
        assert_eq!(lists.len(), 1);
        assert_eq!(lists[0].len(), 200);
        assert!(!lists[0].labels_visible);

        let lists = subset_for_condition(&pool, TaskCondition::C1_2);
        assert_eq!(lists.len(), 4);
        assert!(lists.iter().all(|l| l.len() == 50 && l.labels_visible));

        let lists = subset_for_condition(&pool, TaskCondition::C3);
        assert_eq!(lists.len(), 1);
        assert_eq!(lists[0].len(), 200);
        assert!(lists[0].labels_visible);
    }

    #[test]
    fn subsets_cover_pool_exactly_once() {
        let pool = ConstraintPool::canonical();
        for cond in TaskCondition::ALL {
            let mut seen = HashSet::new();
            for l in subset_for_condition(&pool, cond) {
                for i in l.items {
                    assert!(seen.insert(i), "{cond}: {i} repeated");
                }
            }
            assert_eq!(seen.len(), pool.len(), "{cond}");
        }
    }

    #[test]
    fn tsv_round_trip() {
        let pool = ConstraintPool::canonical();
        let again = load_library(pool.to_tsv().as_bytes()).unwrap();
        assert_eq!(pool, again);
    }
}
