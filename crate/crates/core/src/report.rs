//! Analysis tables and the report bundle written under an output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::condition::TaskCondition;
use crate::harness::{sub_seed, Persona, RunRecord};
use crate::library::{Category, ConstraintPool, Element};
use crate::manifest::{AnalysisSpec, EmbedderKind};
use crate::network::{
    build_cooccurrence, build_ppmi, compare_rankings, node_strength_topk, persona_rank_divergence, CompareOptions,
    NetworkError,
};
use crate::permutation::{
    axis_enrichment, flag_significant, permutation_test, runs_from_records, EnrichmentOptions, FlagOptions, Grouping,
    PermutationError, PermutationOptions,
};
use crate::reasoning::{
    cliffs_delta_posthoc, distinctive_phrases, embed_corpus, grouped_distances, kruskal_wallis, EmbeddingCache,
    Embedder, GroupBy, HashingEmbedder, OpenAiEmbedder, ReasoningCorpus, ReasoningError,
};
use crate::stats::{
    baseline_family, build_counts_table, condition_contrast, dispersion_diagnostics, fit_poisson_gee,
    model_heterogeneity, pairwise_family, persona_difference, rr_contrasts, Cell, ConditionPair, ContrastOptions,
    ContrastResult, GeeFit, GeeOptions, Grain, RunCountsTable, RunFilter, StatsError, Weighting,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{analysis} analysis needs {what}")]
    Prerequisite { analysis: Analysis, what: String },
    #[error("{analysis}: {source}")]
    Stats { analysis: Analysis, source: StatsError },
    #[error("axes: {0}")]
    Permutation(#[from] PermutationError),
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("reasoning: {0}")]
    Reasoning(#[from] ReasoningError),
    #[error("writing {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Elements,
    Categories,
    Conditions,
    Axes,
    Network,
    Reasoning,
}

impl Analysis {
    pub const ALL: [Analysis; 6] = [
        Analysis::Elements,
        Analysis::Categories,
        Analysis::Conditions,
        Analysis::Axes,
        Analysis::Network,
        Analysis::Reasoning,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Elements => "elements",
            Analysis::Categories => "categories",
            Analysis::Conditions => "conditions",
            Analysis::Axes => "axes",
            Analysis::Network => "network",
            Analysis::Reasoning => "reasoning",
        }
    }

    /// Analyses switched on in the manifest.
    pub fn enabled(spec: &AnalysisSpec) -> Vec<Analysis> {
        let on = [
            spec.elements,
            spec.categories,
            spec.conditions,
            spec.axes,
            spec.network,
            spec.reasoning,
        ];
        Analysis::ALL.into_iter().zip(on).filter(|(_, b)| *b).map(|(a, _)| a).collect()
    }
}

impl fmt::Display for Analysis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Analysis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Analysis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown analysis `{s}`"))
    }
}

/// A delimiter-separated table with the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub params: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            params: Vec::new(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn param(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    fn params(mut self, p: &[(String, String)]) -> Self {
        self.params.extend_from_slice(p);
        self
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.params {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str(&self.columns.join("\t"));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Fixed six decimals; negative zero prints as zero.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else if x == 0.0 {
        "0.000000".into()
    } else {
        format!("{x:.6}")
    }
}

/// Serde name of a unit enum value.
fn tag<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_else(|| "NA".into())
}

pub struct ReportContext<'a> {
    pub records: &'a [RunRecord],
    pub pool: &'a ConstraintPool,
    pub spec: &'a AnalysisSpec,
    pub seed: u64,
}

impl ReportContext<'_> {
    fn filter(&self, conditions: &[TaskCondition]) -> RunFilter {
        RunFilter {
            include_invalid: self.spec.include_invalid,
            ..RunFilter::conditions(conditions)
        }
    }

    fn gee_options(&self) -> GeeOptions {
        GeeOptions {
            offset: self.spec.offset,
            corr: self.spec.corr,
            se: self.spec.se,
            ..GeeOptions::default()
        }
    }

    fn valid_runs(&self, condition: TaskCondition) -> Vec<RunRecord> {
        self.records
            .iter()
            .filter(|r| r.config.condition == condition && r.is_valid())
            .cloned()
            .collect()
    }
}

pub fn analyze(ctx: &ReportContext<'_>, analysis: Analysis) -> Result<Vec<Table>, ReportError> {
    match analysis {
        Analysis::Elements => elements(ctx),
        Analysis::Categories => categories(ctx),
        Analysis::Conditions => conditions(ctx),
        Analysis::Axes => axes(ctx),
        Analysis::Network => network(ctx),
        Analysis::Reasoning => reasoning(ctx),
    }
}

fn stats_err(analysis: Analysis) -> impl Fn(StatsError) -> ReportError {
    move |source| ReportError::Stats { analysis, source }
}

fn counts_table(name: &str, t: &RunCountsTable) -> Table {
    let mut out = Table::new(name, &["run_id", "model", "persona", "condition", "cell", "y", "K", "n", "N"])
        .param("grain", tag(&t.grain));
    for r in &t.rows {
        out.push(vec![
            r.run_id.clone(),
            r.model.clone(),
            r.persona.to_string(),
            r.condition.to_string(),
            r.cell.to_string(),
            r.y.to_string(),
            r.k.to_string(),
            r.n.to_string(),
            r.big_n.to_string(),
        ]);
    }
    out
}

fn fit_params(fit: &GeeFit, spec: &AnalysisSpec) -> Vec<(String, String)> {
    let dropped: Vec<String> = fit
        .dropped
        .iter()
        .map(|d| format!("{}/{}/{}", d.model, d.persona, d.cell))
        .collect();
    vec![
        ("model".into(), "poisson_gee_log".into()),
        ("offset".into(), tag(&spec.offset)),
        ("corr".into(), tag(&spec.corr)),
        ("se".into(), tag(&spec.se)),
        ("alpha".into(), opt_num(fit.alpha)),
        ("alpha_clamped".into(), fit.alpha_clamped.to_string()),
        ("phi".into(), num(fit.phi)),
        ("clusters".into(), fit.n_clusters.to_string()),
        ("observations".into(), fit.n_obs.to_string()),
        ("iterations".into(), fit.iterations.to_string()),
        ("converged".into(), fit.converged.to_string()),
        ("q_threshold".into(), spec.q_threshold.to_string()),
        ("delta_floor_pct".into(), spec.delta_floor.to_string()),
        ("separated_strata".into(), if dropped.is_empty() { "none".into() } else { dropped.join(",") }),
        (
            "dropped_columns".into(),
            if fit.dropped_columns.is_empty() { "none".into() } else { fit.dropped_columns.join(",") },
        ),
    ]
}

const RR_COLUMNS: [&str; 10] = ["family", "contrast", "rr", "ci_low", "ci_high", "delta_pct", "se_log", "p", "q", "reported"];

fn push_rr(t: &mut Table, family: &str, rows: &[ContrastResult]) {
    for r in rows {
        t.push(vec![
            family.to_string(),
            r.label.clone(),
            num(r.estimate),
            num(r.ci_low),
            num(r.ci_high),
            opt_num(r.delta_pct),
            num(r.se),
            num(r.p),
            num(r.q),
            r.reported.to_string(),
        ]);
    }
}

fn coefficient_table(name: &str, fit: &GeeFit, params: &[(String, String)]) -> Table {
    let mut t = Table::new(name, &["term", "beta", "se_robust", "se_naive"]).params(params);
    let p = fit.p();
    for (i, term) in fit.names.iter().enumerate() {
        t.push(vec![
            term.clone(),
            num(fit.beta[i]),
            num(fit.cov_robust[i * p + i].max(0.0).sqrt()),
            num(fit.cov_naive[i * p + i].max(0.0).sqrt()),
        ]);
    }
    t
}

fn persona_family(fit: &GeeFit, cells: &[Cell]) -> Vec<crate::stats::Contrast> {
    let mut family = Vec::new();
    let ps = &fit.personas;
    for &cell in cells {
        for i in 0..ps.len() {
            for j in i + 1..ps.len() {
                family.push(persona_difference(fit, cell, ps[j], ps[i]));
            }
        }
    }
    family
}

fn dispersion_row(t: &mut Table, label: &str, fit: &GeeFit) -> Result<(), StatsError> {
    let d = dispersion_diagnostics(fit)?;
    t.push(vec![
        label.to_string(),
        num(d.pearson_chi2),
        num(d.deviance),
        d.df.to_string(),
        num(d.pearson_chi2_per_df),
        num(d.deviance_per_df),
    ]);
    Ok(())
}

const DISPERSION_COLUMNS: [&str; 6] = ["fit", "pearson_chi2", "deviance", "df", "pearson_per_df", "deviance_per_df"];

fn elements(ctx: &ReportContext<'_>) -> Result<Vec<Table>, ReportError> {
    let a = Analysis::Elements;
    let err = stats_err(a);
    let table = build_counts_table(ctx.records, ctx.pool, Grain::Element, &ctx.filter(&[TaskCondition::C2_2]))
        .map_err(&err)?;
    if table.rows.is_empty() {
        return Err(ReportError::Prerequisite {
            analysis: a,
            what: "runs of condition 2-2".into(),
        });
    }
    let fit = fit_poisson_gee(&table, &ctx.gee_options()).map_err(&err)?;
    let params = fit_params(&fit, ctx.spec);
    let cells: Vec<Cell> = Element::ALL.iter().map(|&e| Cell::Element(e)).collect();
    let (q, floor) = (ctx.spec.q_threshold, ctx.spec.delta_floor);

    let mut rr = Table::new("elements_rr", &RR_COLUMNS).params(&params).param("baseline", Element::Event);
    let base = rr_contrasts(&fit, &baseline_family(&fit, &cells, Cell::Element(Element::Event)), q, floor).map_err(&err)?;
    push_rr(&mut rr, "vs_event", &base);
    let mut pairwise = Table::new("elements_pairwise", &RR_COLUMNS).params(&params);
    let pw = rr_contrasts(&fit, &pairwise_family(&fit, &cells), q, floor).map_err(&err)?;
    push_rr(&mut pairwise, "pairwise", &pw);
    let mut tables = vec![counts_table("elements_counts", &table), coefficient_table("elements_coefficients", &fit, &params), rr, pairwise];
    if fit.personas.len() > 1 {
        let mut persona = Table::new("elements_persona", &RR_COLUMNS).params(&params);
        let rows = rr_contrasts(&fit, &persona_family(&fit, &cells), q, floor).map_err(&err)?;
        push_rr(&mut persona, "persona", &rows);
        tables.push(persona);
    }
    let mut disp = Table::new("elements_dispersion", &DISPERSION_COLUMNS).params(&params);
    dispersion_row(&mut disp, "elements", &fit).map_err(&err)?;
    tables.push(disp);
    Ok(tables)
}

fn categories(ctx: &ReportContext<'_>) -> Result<Vec<Table>, ReportError> {
    let a = Analysis::Categories;
    let err = stats_err(a);
    let table = build_counts_table(ctx.records, ctx.pool, Grain::Category, &ctx.filter(&[TaskCondition::C2_2]))
        .map_err(&err)?;
    if table.rows.is_empty() {
        return Err(ReportError::Prerequisite {
            analysis: a,
            what: "runs of condition 2-2".into(),
        });
    }
    let (q, floor) = (ctx.spec.q_threshold, ctx.spec.delta_floor);
    let mut columns = vec!["element"];
    columns.extend(RR_COLUMNS);
    let base_params = [
        ("offset".to_string(), tag(&ctx.spec.offset)),
        ("corr".to_string(), tag(&ctx.spec.corr)),
        ("se".to_string(), tag(&ctx.spec.se)),
        ("q_threshold".to_string(), ctx.spec.q_threshold.to_string()),
        ("delta_floor_pct".to_string(), ctx.spec.delta_floor.to_string()),
        ("multiplicity".to_string(), "bh_within_element_family".to_string()),
    ];
    let mut rr = Table::new("categories_rr", &columns).params(&base_params);
    let mut fits = Table::new(
        "categories_fits",
        &["element", "alpha", "phi", "clusters", "observations", "iterations", "converged", "separated_strata"],
    )
    .params(&base_params);
    let mut disp = Table::new("categories_dispersion", &DISPERSION_COLUMNS).params(&base_params);
    for e in Element::ALL {
        let sub = RunCountsTable {
            grain: table.grain,
            rows: table.rows.iter().filter(|r| r.cell.element() == e).cloned().collect(),
        };
        if sub.rows.is_empty() {
            continue;
        }
        let fit = fit_poisson_gee(&sub, &ctx.gee_options()).map_err(&err)?;
        let cells: Vec<Cell> = Category::ALL
            .iter()
            .filter(|c| c.element() == e)
            .map(|&c| Cell::Category(c))
            .collect();
        let mut emit = |family: &str, rows: Vec<ContrastResult>| {
            let mut tmp = Table::new("", &RR_COLUMNS);
            push_rr(&mut tmp, family, &rows);
            for mut row in tmp.rows {
                row.insert(0, e.to_string());
                rr.push(row);
            }
        };
        emit(
            "vs_first",
            rr_contrasts(&fit, &baseline_family(&fit, &cells, cells[0]), q, floor).map_err(&err)?,
        );
        emit("pairwise", rr_contrasts(&fit, &pairwise_family(&fit, &cells), q, floor).map_err(&err)?);
        fits.push(vec![
            e.to_string(),
            opt_num(fit.alpha),
            num(fit.phi),
            fit.n_clusters.to_string(),
            fit.n_obs.to_string(),
            fit.iterations.to_string(),
            fit.converged.to_string(),
            fit.dropped.len().to_string(),
        ]);
        dispersion_row(&mut disp, &e.to_string(), &fit).map_err(&err)?;
    }
    Ok(vec![counts_table("categories_counts", &table), rr, fits, disp])
}

fn conditions(ctx: &ReportContext<'_>) -> Result<Vec<Table>, ReportError> {
    let a = Analysis::Conditions;
    let err = stats_err(a);
    let params = [
        ("estimate".to_string(), "risk_difference_pp".to_string()),
        ("se".to_string(), tag(&ctx.spec.se)),
        ("multiplicity".to_string(), "bh_within_pair_and_weighting".to_string()),
    ];
    let mut rd = Table::new(
        "conditions_rd",
        &["pair", "grain", "weighting", "cell", "rd_pp", "se", "ci_low", "ci_high", "p", "q"],
    )
    .params(&params);
    let mut het = Table::new("conditions_heterogeneity", &["pair", "weighting", "wald", "df", "p"]).params(&params);
    for pair in ConditionPair::PLANNED {
        let table = build_counts_table(
            ctx.records,
            ctx.pool,
            pair.grain(),
            &ctx.filter(&[pair.treatment, pair.control]),
        )
        .map_err(&err)?;
        let present = table.conditions();
        for c in [pair.treatment, pair.control] {
            if !present.contains(&c) {
                return Err(ReportError::Prerequisite {
                    analysis: a,
                    what: format!("runs of condition {c} for {}", pair.label()),
                });
            }
        }
        for weighting in [Weighting::Ols, Weighting::WlsK] {
            let options = ContrastOptions {
                weighting,
                se: ctx.spec.se,
            };
            let w = tag(&weighting);
            let cc = condition_contrast(&table, pair, options).map_err(&err)?;
            for r in &cc.results {
                rd.push(vec![
                    pair.label(),
                    tag(&cc.grain),
                    w.clone(),
                    r.label.clone(),
                    num(r.estimate),
                    num(r.se),
                    num(r.ci_low),
                    num(r.ci_high),
                    num(r.p),
                    num(r.q),
                ]);
            }
            if table.models().len() > 1 {
                let (_, test) = model_heterogeneity(&table, pair, options).map_err(&err)?;
                het.push(vec![pair.label(), w, num(test.statistic), test.df.to_string(), num(test.p)]);
            }
        }
    }
    Ok(vec![rd, het])
}

fn axes(ctx: &ReportContext<'_>) -> Result<Vec<Table>, ReportError> {
    let records = ctx.valid_runs(TaskCondition::C2_2);
    if records.is_empty() {
        return Err(ReportError::Prerequisite {
            analysis: Analysis::Axes,
            what: "valid runs of condition 2-2".into(),
        });
    }
    let runs = runs_from_records(&records, ctx.pool)?;
    let seed = sub_seed(ctx.seed, "axes");
    let mut results = permutation_test(
        &runs,
        ctx.pool,
        PermutationOptions {
            replicates: ctx.spec.permutation_replicates,
            seed,
        },
    )?;
    let flag = FlagOptions {
        q_threshold: ctx.spec.permutation_q,
        fallback_p: ctx.spec.fallback_p,
        min_runs: ctx.spec.degenerate_min_runs,
    };
    let flagged = flag_significant(&mut results, flag);
    let params = [
        ("replicates".to_string(), ctx.spec.permutation_replicates.to_string()),
        ("seed".to_string(), seed.to_string()),
        ("q_threshold".to_string(), flag.q_threshold.to_string()),
        ("fallback_p".to_string(), flag.fallback_p.to_string()),
        ("degenerate_min_runs".to_string(), flag.min_runs.to_string()),
        ("strata".to_string(), "model_persona_category".to_string()),
    ];
    let columns = [
        "model", "persona", "element", "category", "constraint", "runs", "y_obs", "expected", "share_obs", "share_exp",
        "rd_share", "rr_smoothed", "p_two", "p_over", "p_under", "q", "direction", "flagged", "fallback",
    ];
    let to_row = |r: &crate::permutation::PermutationResult| {
        vec![
            r.model.clone(),
            r.persona.to_string(),
            r.element.to_string(),
            r.category.to_string(),
            r.id.clone(),
            r.runs.to_string(),
            r.y_obs.to_string(),
            num(r.expected),
            num(r.share_obs),
            num(r.share_exp),
            num(r.rd_share),
            num(r.rr_smoothed),
            num(r.p_two),
            num(r.p_over),
            num(r.p_under),
            num(r.q),
            r.direction.to_string(),
            r.flagged.to_string(),
            r.fallback.to_string(),
        ]
    };
    let mut all = Table::new("axes_permutation", &columns).params(&params);
    for r in &results {
        all.push(to_row(r));
    }
    let mut flag_t = Table::new("axes_flagged", &columns).params(&params);
    for r in &flagged {
        flag_t.push(to_row(r));
    }
    let mut tables = vec![all, flag_t];
    for (grouping, name) in [(Grouping::ModelPersona, "axes_enrichment"), (Grouping::Persona, "axes_enrichment_persona")] {
        let opts = EnrichmentOptions {
            grouping,
            baseline: ctx.spec.enrichment_baseline,
            top_k: Some(ctx.spec.top_axes),
        };
        let rows = axis_enrichment(&flagged, ctx.pool, opts);
        let mut t = Table::new(
            name,
            &["group", "direction", "axis", "dimension", "label", "support", "enrich", "share_pct", "global_pct"],
        )
        .params(&params)
        .param("baseline", tag(&opts.baseline))
        .param("top_k", ctx.spec.top_axes);
        for e in rows {
            t.push(vec![
                e.group,
                e.direction.to_string(),
                e.axis.to_string(),
                e.dimension,
                e.label,
                e.support.to_string(),
                num(e.enrichment),
                num(100.0 * e.share),
                num(100.0 * e.baseline),
            ]);
        }
        tables.push(t);
    }
    Ok(tables)
}

fn network(ctx: &ReportContext<'_>) -> Result<Vec<Table>, ReportError> {
    let a = Analysis::Network;
    let records = ctx.valid_runs(TaskCondition::C2_2);
    let mut slices: BTreeMap<(String, Persona), Vec<Vec<String>>> = BTreeMap::new();
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|x, y| x.run_id.cmp(&y.run_id));
    for r in sorted {
        if r.selections.len() >= 2 {
            slices
                .entry((r.config.model.clone(), r.config.persona))
                .or_default()
                .push(r.selections.clone());
        }
    }
    if slices.is_empty() {
        return Err(ReportError::Prerequisite {
            analysis: a,
            what: "valid runs of condition 2-2 with at least two selections".into(),
        });
    }
    if let Some(((m, p), runs)) = slices.iter().find(|(_, runs)| runs.len() < 2) {
        return Err(ReportError::Prerequisite {
            analysis: a,
            what: format!("at least 2 valid 2-2 runs in slice {m}/{p}, found {}", runs.len()),
        });
    }
    let nodes: Vec<String> = ctx.pool.constraints().iter().map(|c| c.id.clone()).collect();
    let k = ctx.spec.network_top_k;
    let params = [
        ("top_k".to_string(), k.to_string()),
        ("spearman_replicates".to_string(), ctx.spec.spearman_replicates.to_string()),
        ("ppmi".to_string(), "max(0,ln(c*T/(r_i*r_j)))".to_string()),
        ("ties".to_string(), "natural_id_order".to_string()),
    ];
    let mut comparison = Table::new(
        "network_comparison",
        &[
            "model", "persona", "runs", "k", "overlap", "jaccard", "spearman_rho", "spearman_p", "n_union",
            "inclusion_cooc", "inclusion_ppmi",
        ],
    )
    .params(&params);
    let mut hubs = Table::new("network_hubs", &["model", "persona", "graph", "rank", "constraint", "strength"]).params(&params);
    let mut edges: Vec<Table> = Vec::new();
    let mut by_model: BTreeMap<String, BTreeMap<Persona, Vec<String>>> = BTreeMap::new();
    for ((model, persona), runs) in &slices {
        let cooc = build_cooccurrence(&nodes, runs)?;
        let ppmi = build_ppmi(&cooc)?;
        let seed = sub_seed(ctx.seed, &format!("network/{model}/{persona}"));
        let cmp = compare_rankings(
            &cooc,
            &ppmi,
            runs,
            CompareOptions {
                k,
                replicates: ctx.spec.spearman_replicates,
                seed,
            },
        )?;
        comparison.push(vec![
            model.clone(),
            persona.to_string(),
            runs.len().to_string(),
            cmp.k.to_string(),
            cmp.overlap.to_string(),
            num(cmp.jaccard),
            num(cmp.spearman_rho),
            num(cmp.spearman_p),
            cmp.n_union.to_string(),
            num(cmp.avg_inclusion_cooc),
            num(cmp.avg_inclusion_ppmi),
        ]);
        for (label, g) in [("cooc", &cooc), ("ppmi", &ppmi)] {
            let top = node_strength_topk(g, k)?;
            for (i, (id, s)) in top.ids.iter().zip(&top.strengths).enumerate() {
                hubs.push(vec![
                    model.clone(),
                    persona.to_string(),
                    label.to_string(),
                    (i + 1).to_string(),
                    id.clone(),
                    num(*s),
                ]);
            }
            if label == "cooc" {
                by_model.entry(model.clone()).or_default().insert(*persona, top.ids.clone());
            }
            let mut t = Table::new(format!("network_edges_{label}_{model}_{persona}"), &["source", "target", "weight"])
                .params(&params)
                .param("graph", label)
                .param("model", model)
                .param("persona", persona);
            for (s, tgt, w) in g.edges() {
                t.push(vec![g.nodes[s].clone(), g.nodes[tgt].clone(), num(w)]);
            }
            edges.push(t);
        }
    }
    let mut div = Table::new(
        "network_divergence",
        &["model", "constraint", "rank_basic", "rank_quality", "rank_creativity", "avg_bq", "delta", "missing"],
    )
    .params(&params);
    for (model, rankings) in &by_model {
        if rankings.len() < Persona::ALL.len() {
            continue;
        }
        for r in persona_rank_divergence(rankings) {
            div.push(vec![
                model.clone(),
                r.id,
                num(r.rank_basic),
                num(r.rank_quality),
                num(r.rank_creativity),
                num(r.avg_bq),
                num(r.delta),
                r.missing.to_string(),
            ]);
        }
    }
    let mut out = vec![comparison, hubs, div];
    out.extend(edges);
    Ok(out)
}

fn reasoning(ctx: &ReportContext<'_>) -> Result<Vec<Table>, ReportError> {
    let a = Analysis::Reasoning;
    let records = ctx.valid_runs(TaskCondition::C2_2);
    let mut corpus = ReasoningCorpus::from_records(&records);
    if corpus.is_empty() {
        return Err(ReportError::Prerequisite {
            analysis: a,
            what: "reason texts from valid runs of condition 2-2".into(),
        });
    }
    let embedder: Box<dyn Embedder> = match ctx.spec.embedder {
        EmbedderKind::Hashing => Box::new(HashingEmbedder::new(ctx.spec.embedding_dim)),
        EmbedderKind::Openai => Box::new(
            OpenAiEmbedder::from_env(ctx.spec.embedding_model.clone(), None, Duration::from_secs(120))
                .map_err(|e| ReasoningError::from(e))?,
        ),
    };
    let cache = ctx.spec.embedding_cache.as_ref().map(EmbeddingCache::new);
    embed_corpus(&mut corpus, embedder.as_ref(), cache.as_ref(), 64)?;
    let params = [
        ("embedder".to_string(), embedder.name().to_string()),
        ("scalar".to_string(), "distance_to_global_centroid".to_string()),
        ("documents".to_string(), corpus.len().to_string()),
    ];
    let mut kw = Table::new("reasoning_kruskal", &["by", "groups", "n", "h", "df", "p", "epsilon2"]).params(&params);
    let mut cliff = Table::new("reasoning_cliffs", &["by", "a", "b", "delta", "p", "q"]).params(&params);
    let mut any = false;
    for (by, label) in [(GroupBy::Model, "model"), (GroupBy::Persona, "persona")] {
        let groups = grouped_distances(&corpus, by)?;
        if groups.len() < 2 {
            continue;
        }
        any = true;
        let values: Vec<Vec<f64>> = groups.iter().map(|(_, v)| v.clone()).collect();
        let t = kruskal_wallis(&values)?;
        kw.push(vec![
            label.into(),
            groups.len().to_string(),
            t.n.to_string(),
            num(t.h),
            t.df.to_string(),
            num(t.p),
            num(t.epsilon2),
        ]);
        for c in cliffs_delta_posthoc(&groups)? {
            cliff.push(vec![label.into(), c.a, c.b, num(c.delta), num(c.p), num(c.q)]);
        }
    }
    if !any {
        return Err(ReportError::Prerequisite {
            analysis: a,
            what: "at least two models or personas".into(),
        });
    }
    let po = ctx.spec.phrases;
    let mut phrases = Table::new("reasoning_phrases", &["by", "group", "rank", "phrase", "count", "ratio"])
        .params(&params)
        .param("ngram", format!("{}..{}", po.min_n, po.max_n))
        .param("min_ratio", po.ratio)
        .param("min_support", po.min_support)
        .param("top_k", po.top_k);
    for (label, key) in [
        ("model", Box::new(|d: &crate::reasoning::Document| d.model.clone()) as Box<dyn Fn(&_) -> String>),
        ("persona", Box::new(|d: &crate::reasoning::Document| d.persona.to_string())),
    ] {
        let docs: Vec<(String, String)> = corpus.docs.iter().map(|d| (key(d), d.text.clone())).collect();
        for (group, list) in distinctive_phrases(&docs, po) {
            for p in list {
                phrases.push(vec![
                    label.into(),
                    group.clone(),
                    p.rank.to_string(),
                    p.phrase,
                    p.count.to_string(),
                    num(p.ratio),
                ]);
            }
        }
    }
    Ok(vec![kw, cliff, phrases])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableEntry {
    pub analysis: Analysis,
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub params: BTreeMap<String, String>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportIndex {
    pub runs: usize,
    pub valid_runs: usize,
    pub seed: u64,
    pub analyses: Vec<Analysis>,
    pub tables: Vec<TableEntry>,
}

/// Runs the selected analyses and writes one TSV per table plus
/// `index.json` under `out_dir`. The first failing analysis aborts.
pub fn emit_tables(ctx: &ReportContext<'_>, analyses: &[Analysis], out_dir: &Path) -> Result<ReportIndex, ReportError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut entries = Vec::new();
    for &a in analyses {
        for t in analyze(ctx, a)? {
            let file = format!("{}.tsv", t.name);
            let text = t.to_tsv();
            let path = out_dir.join(&file);
            fs::write(&path, &text).map_err(io(&path))?;
            entries.push(TableEntry {
                analysis: a,
                name: t.name.clone(),
                file,
                rows: t.rows.len(),
                params: t.params.iter().cloned().collect(),
                sha256: hex::encode(Sha256::digest(text.as_bytes())),
            });
        }
    }
    let index = ReportIndex {
        runs: ctx.records.len(),
        valid_runs: ctx.records.iter().filter(|r| r.is_valid()).count(),
        seed: ctx.seed,
        analyses: analyses.to_vec(),
        tables: entries,
    };
    let path = out_dir.join("index.json");
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, json + "\n").map_err(io(&path))?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::RunLog;
    use crate::manifest::{build_providers, execute_manifest, synthetic_manifest, ExecuteOptions};
    use crate::synthetic::reference_rates;

    fn simulate(models: usize, stage1: u32, stage2: u32, seed: u64) -> (Vec<RunRecord>, ConstraintPool) {
        let m = synthetic_manifest("t", seed, models, stage1, stage2, reference_rates());
        let pool = m.load_pool().unwrap();
        let providers = build_providers(&m, &pool).unwrap();
        let log = RunLog::in_memory();
        let s = execute_manifest(&m, &providers, &pool, &log, ExecuteOptions::default()).unwrap();
        assert!(s.is_complete());
        (log.records(), pool)
    }

    fn quick_spec() -> AnalysisSpec {
        AnalysisSpec {
            permutation_replicates: 200,
            spearman_replicates: 200,
            ..AnalysisSpec::default()
        }
    }

    #[test]
    fn bundle_is_byte_stable() {
        let (records, pool) = simulate(2, 3, 8, 11);
        let spec = quick_spec();
        let ctx = ReportContext {
            records: &records,
            pool: &pool,
            spec: &spec,
            seed: 5,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ia = emit_tables(&ctx, &Analysis::ALL, a.path()).unwrap();
        // shuffled record order must not matter
        let mut rev = records.clone();
        rev.reverse();
        let ctx2 = ReportContext { records: &rev, ..ctx };
        let ib = emit_tables(&ctx2, &Analysis::ALL, b.path()).unwrap();
        assert_eq!(ia, ib);
        assert!(ia.tables.len() > 10);
        for e in &ia.tables {
            let x = fs::read(a.path().join(&e.file)).unwrap();
            let y = fs::read(b.path().join(&e.file)).unwrap();
            assert_eq!(x, y, "{}", e.file);
        }
        assert_eq!(
            fs::read(a.path().join("index.json")).unwrap(),
            fs::read(b.path().join("index.json")).unwrap()
        );
        let rr = fs::read_to_string(a.path().join("elements_rr.tsv")).unwrap();
        assert!(rr.starts_with("# grain=") || rr.starts_with("# model=poisson_gee_log"));
    }

    #[test]
    fn network_needs_two_runs() {
        let (records, pool) = simulate(1, 0, 1, 3);
        let one: Vec<RunRecord> = records
            .into_iter()
            .filter(|r| r.config.condition == TaskCondition::C2_2)
            .take(1)
            .collect();
        assert_eq!(one.len(), 1);
        let spec = quick_spec();
        let ctx = ReportContext {
            records: &one,
            pool: &pool,
            spec: &spec,
            seed: 1,
        };
        assert!(matches!(
            analyze(&ctx, Analysis::Network),
            Err(ReportError::Prerequisite { analysis: Analysis::Network, .. })
        ));
    }

    #[test]
    fn element_rr_column_tracks_generating_rates() {
        let (records, pool) = simulate(2, 0, 160, 21);
        let spec = quick_spec();
        let ctx = ReportContext {
            records: &records,
            pool: &pool,
            spec: &spec,
            seed: 1,
        };
        let tables = analyze(&ctx, Analysis::Elements).unwrap();
        let rr = tables.iter().find(|t| t.name == "elements_rr").unwrap();
        let (lc, rc) = (rr.column("contrast").unwrap(), rr.column("rr").unwrap());
        let truth = reference_rates();
        assert_eq!(rr.rows.len(), 3);
        for row in &rr.rows {
            let e: Element = row[lc].split(" vs ").next().unwrap().parse().unwrap();
            let got: f64 = row[rc].parse().unwrap();
            assert!((got - truth[&e]).abs() < 0.1, "{e}: {got} vs {}", truth[&e]);
        }
    }

    #[test]
    fn formats_fixed_decimals() {
        assert_eq!(num(-0.0), "0.000000");
        assert_eq!(num(1.0 / 3.0), "0.333333");
        assert_eq!(num(f64::INFINITY), "inf");
    }
}
