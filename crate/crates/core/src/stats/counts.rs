//! Per-run cell counts with exposures and supplies.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::condition::TaskCondition;
use crate::harness::{Persona, RunRecord};
use crate::library::{Category, ConstraintPool, Element};

/// Unit of analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grain {
    /// Run x element; K = run total, n = element supply, N = pool size.
    Element,
    /// Run x category within element; K = selections in that element,
    /// n = category supply, N = element supply. Runs with none selected in an
    /// element are left out of that element's rows.
    Category,
    /// Run x category over the whole pool; K = run total, N = pool size.
    CategoryPooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cell {
    Element(Element),
    Category(Category),
}

impl Cell {
    pub fn element(self) -> Element {
        match self {
            Cell::Element(e) => e,
            Cell::Category(c) => c.element(),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Element(e) => write!(f, "{e}"),
            Cell::Category(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub run_id: String,
    pub model: String,
    pub persona: Persona,
    pub condition: TaskCondition,
    pub cell: Cell,
    pub y: f64,
    /// Exposure K.
    pub k: f64,
    /// Cell supply n.
    pub n: f64,
    /// Unit supply N.
    pub big_n: f64,
}

impl CountRow {
    pub fn share(&self) -> f64 {
        self.y / self.k
    }

    pub fn supply_share(&self) -> f64 {
        self.n / self.big_n
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunCountsTable {
    pub grain: Grain,
    pub rows: Vec<CountRow>,
}

/// Which runs enter a table. Empty lists mean "all".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunFilter {
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub personas: Vec<Persona>,
    #[serde(default)]
    pub conditions: Vec<TaskCondition>,
    /// Include runs whose validation failed.
    #[serde(default)]
    pub include_invalid: bool,
}

impl RunFilter {
    pub fn conditions(conditions: &[TaskCondition]) -> Self {
        Self {
            conditions: conditions.to_vec(),
            ..Default::default()
        }
    }

    pub fn accepts(&self, r: &RunRecord) -> bool {
        (self.include_invalid || r.is_valid())
            && (self.models.is_empty() || self.models.contains(&r.config.model))
            && (self.personas.is_empty() || self.personas.contains(&r.config.persona))
            && (self.conditions.is_empty() || self.conditions.contains(&r.config.condition))
    }
}

/// Filters and orders records by run id.
pub fn select_runs<'a>(records: &'a [RunRecord], filter: &RunFilter) -> Vec<&'a RunRecord> {
    let mut v: Vec<&RunRecord> = records.iter().filter(|r| filter.accepts(r)).collect();
    v.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    v
}

pub fn build_counts_table(
    records: &[RunRecord],
    pool: &ConstraintPool,
    grain: Grain,
    filter: &RunFilter,
) -> Result<RunCountsTable, StatsError> {
    let runs = select_runs(records, filter);
    let mut element_supply: BTreeMap<Element, f64> = BTreeMap::new();
    let mut category_supply: BTreeMap<Category, f64> = BTreeMap::new();
    for c in pool.constraints() {
        *element_supply.entry(c.element).or_default() += 1.0;
        *category_supply.entry(c.category).or_default() += 1.0;
    }
    let pool_n = pool.len() as f64;
    let mut rows = Vec::new();
    for r in runs {
        let mut by_element: BTreeMap<Element, f64> = BTreeMap::new();
        let mut by_category: BTreeMap<Category, f64> = BTreeMap::new();
        for id in &r.selections {
            let c = pool.by_id(id).ok_or_else(|| StatsError::UnknownConstraint(id.clone()))?;
            *by_element.entry(c.element).or_default() += 1.0;
            *by_category.entry(c.category).or_default() += 1.0;
        }
        let total = r.selections.len() as f64;
        if total == 0.0 {
            continue;
        }
        let row = |cell: Cell, y: f64, k: f64, n: f64, big_n: f64| CountRow {
            run_id: r.run_id.clone(),
            model: r.config.model.clone(),
            persona: r.config.persona,
            condition: r.config.condition,
            cell,
            y,
            k,
            n,
            big_n,
        };
        match grain {
            Grain::Element => {
                for e in Element::ALL {
                    let y = by_element.get(&e).copied().unwrap_or(0.0);
                    rows.push(row(Cell::Element(e), y, total, element_supply[&e], pool_n));
                }
            }
            Grain::Category => {
                for e in Element::ALL {
                    let k = by_element.get(&e).copied().unwrap_or(0.0);
                    if k == 0.0 {
                        continue;
                    }
                    for c in e.categories() {
                        let y = by_category.get(&c).copied().unwrap_or(0.0);
                        rows.push(row(Cell::Category(c), y, k, category_supply[&c], element_supply[&e]));
                    }
                }
            }
            Grain::CategoryPooled => {
                for c in Category::ALL {
                    let y = by_category.get(&c).copied().unwrap_or(0.0);
                    rows.push(row(Cell::Category(c), y, total, category_supply[&c], pool_n));
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(StatsError::EmptyTable);
    }
    Ok(RunCountsTable { grain, rows })
}

impl RunCountsTable {
    pub fn n_clusters(&self) -> usize {
        let mut ids: Vec<&str> = self.rows.iter().map(|r| r.run_id.as_str()).collect();
        ids.dedup();
        ids.len()
    }

    /// Distinct cells in order of first appearance.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells: Vec<Cell> = Vec::new();
        for r in &self.rows {
            if !cells.contains(&r.cell) {
                cells.push(r.cell);
            }
        }
        cells.sort();
        cells
    }

    pub fn models(&self) -> Vec<String> {
        let mut m: Vec<String> = self.rows.iter().map(|r| r.model.clone()).collect();
        m.sort();
        m.dedup();
        m
    }

    pub fn personas(&self) -> Vec<Persona> {
        let mut p: Vec<Persona> = self.rows.iter().map(|r| r.persona).collect();
        p.sort();
        p.dedup();
        p
    }

    pub fn conditions(&self) -> Vec<TaskCondition> {
        let mut c: Vec<TaskCondition> = self.rows.iter().map(|r| r.condition).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Rows of the same run are contiguous; returns their index ranges.
    pub fn clusters(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.rows.len() {
            if i == self.rows.len() || self.rows[i].run_id != self.rows[start].run_id {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    /// Tab-separated export with a parameter header.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# grain={:?}\n", self.grain);
        out.push_str("run_id\tmodel\tpersona\tcondition\tcell\ty\tK\tn\tN\tshare\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\n",
                r.run_id, r.model, r.persona, r.condition, r.cell, r.y, r.k, r.n, r.big_n, r.share()
            ));
        }
        out
    }
}
