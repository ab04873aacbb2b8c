//! Route-quality metrics and the evaluation harness.
//!
//! Metrics compare a predicted route against the optimal route for the same
//! query: signal coverage (linear-power ratio), path optimality, success rate
//! and normalized edit distance. Predicted cells are always re-scored against
//! the coverage map; any RSS values a planner reports are ignored.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gridgraph::{CellId, GridGraph};
use crate::llm_bridge::{parse_route_text, parse_route_text_lenient, Planner, PlannerError};
use crate::propagation::CoverageMap;
use crate::routing::{plan_signal_aware, Route, RouteError};

/// Relative tolerance for treating a predicted cost as optimal.
pub const OPTIMALITY_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("route is empty or inconsistent")]
    InvalidRoute,
    #[error("routes do not share endpoints")]
    EndpointMismatch,
    #[error("empty coordinate sequence")]
    EmptyPath,
    #[error("planner failed on query {index}: {source}")]
    Planner {
        index: usize,
        #[source]
        source: PlannerError,
    },
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ValidityReason {
    Ok,
    OutOfBounds,
    NonAdjacentStep,
    BlockedCell,
    RepeatedCell,
    WrongEndpoints,
    EmptyPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ValidityVerdict {
    pub valid: bool,
    pub reason: ValidityReason,
}

impl ValidityVerdict {
    fn of(reason: ValidityReason) -> Self {
        Self {
            valid: reason == ValidityReason::Ok,
            reason,
        }
    }
}

/// Geometric validity of a cell sequence for the query `s -> d`.
/// Checks run in a fixed order and the first failure wins.
pub fn validate_route(map: &CoverageMap, cells: &[CellId], s: CellId, d: CellId) -> ValidityVerdict {
    use ValidityReason::*;
    let reason = if cells.is_empty() {
        EmptyPath
    } else if cells[0] != s || cells[cells.len() - 1] != d {
        WrongEndpoints
    } else if cells.iter().any(|c| !map.in_grid(c.col, c.row)) {
        OutOfBounds
    } else if cells.iter().any(|c| map.is_blocked_cell(c.col, c.row)) {
        BlockedCell
    } else if cells.windows(2).any(|w| !w[0].is_adjacent(w[1])) {
        NonAdjacentStep
    } else {
        let mut seen = vec![false; map.cols * map.rows];
        let repeated = cells.iter().any(|c| {
            let i = map.index(c.col, c.row);
            std::mem::replace(&mut seen[i], true)
        });
        if repeated {
            RepeatedCell
        } else {
            Ok
        }
    };
    ValidityVerdict::of(reason)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RssDomain {
    Linear,
    DbmSum,
}

pub fn cumulative_rss(route: &Route, domain: RssDomain) -> Result<f64, EvalError> {
    if route.cells.is_empty() || route.rss_trace_dbm.len() != route.cells.len() {
        return Err(EvalError::InvalidRoute);
    }
    Ok(match domain {
        RssDomain::Linear => route.rss_trace_dbm.iter().map(|&v| crate::dbm_to_linear(v)).sum(),
        RssDomain::DbmSum => route.rss_trace_dbm.iter().sum(),
    })
}

fn same_endpoints(a: &Route, b: &Route) -> Result<(), EvalError> {
    if a.cells.is_empty() || b.cells.is_empty() {
        return Err(EvalError::InvalidRoute);
    }
    if a.source() != b.source() || a.dest() != b.dest() {
        return Err(EvalError::EndpointMismatch);
    }
    Ok(())
}

/// `100 * linear_sum(pred) / linear_sum(oracle)`.
pub fn signal_coverage(pred: &Route, oracle: &Route) -> Result<f64, EvalError> {
    same_endpoints(pred, oracle)?;
    Ok(100.0 * cumulative_rss(pred, RssDomain::Linear)? / cumulative_rss(oracle, RssDomain::Linear)?)
}

/// 100 when the predicted cost matches the optimum, otherwise the coverage
/// ratio capped at 100.
pub fn path_optimality(pred: &Route, oracle: &Route) -> Result<f64, EvalError> {
    same_endpoints(pred, oracle)?;
    let (p, o) = (pred.cumulative_cost, oracle.cumulative_cost);
    if (p - o).abs() <= OPTIMALITY_REL_TOL * o.abs().max(f64::MIN_POSITIVE) {
        return Ok(100.0);
    }
    Ok(signal_coverage(pred, oracle)?.min(100.0))
}

/// Levenshtein distance over cell tokens.
pub fn levenshtein(a: &[CellId], b: &[CellId]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance normalized by the longer sequence.
pub fn edit_distance(pred: &[CellId], oracle: &[CellId]) -> Result<f64, EvalError> {
    if pred.is_empty() || oracle.is_empty() {
        return Err(EvalError::EmptyPath);
    }
    Ok(levenshtein(pred, oracle) as f64 / pred.len().max(oracle.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RouteStats {
    pub mean_dbm: f64,
    pub std_dbm: f64,
}

/// Mean and population standard deviation of the RSS trace.
pub fn route_stats(route: &Route) -> Result<RouteStats, EvalError> {
    let t = &route.rss_trace_dbm;
    if t.is_empty() || t.len() != route.cells.len() {
        return Err(EvalError::InvalidRoute);
    }
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(RouteStats {
        mean_dbm: mean,
        std_dbm: var.sqrt(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub lenient: bool,
    /// Predictions in flight at once; 1 queries the planner sequentially.
    pub concurrency: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryRow {
    pub index: usize,
    pub source: CellId,
    pub dest: CellId,
    pub verdict: ValidityVerdict,
    pub parse_error: Option<String>,
    pub coverage_pct: Option<f64>,
    pub optimality_pct: Option<f64>,
    pub edit_distance: Option<f64>,
    pub pred_rss_dbm_sum: Option<f64>,
    pub oracle_rss_dbm_sum: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SkippedQuery {
    pub index: usize,
    pub source: CellId,
    pub dest: CellId,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub model: String,
    pub coverage_pct: f64,
    pub optimality_pct: f64,
    pub success_pct: f64,
    pub mean_edit_distance: f64,
    pub n_queries: usize,
    pub n_valid: usize,
    pub n_parsed: usize,
    /// Set when no prediction was valid; coverage and optimality then read 0.
    pub no_valid_predictions: bool,
    /// Set when nothing parsed; the edit distance then reads 1.
    pub no_parsed_predictions: bool,
    pub skipped: Vec<SkippedQuery>,
    pub per_query: Vec<QueryRow>,
}

pub const TABLE_HEADER: &str = "Model,Coverage (%),Optimality (%),Success (%),Edit Dist.";

impl EvalReport {
    pub fn table_row(&self) -> String {
        format!(
            "{},{:.1},{:.1},{:.1},{:.2}",
            self.model.replace(',', ";"),
            self.coverage_pct,
            self.optimality_pct,
            self.success_pct,
            self.mean_edit_distance
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{TABLE_HEADER}").unwrap();
        writeln!(out, "{}", self.table_row()).unwrap();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores one prediction text against the oracle route. Pure in its inputs.
pub fn score_prediction(
    graph: &GridGraph,
    map: &CoverageMap,
    index: usize,
    oracle: &Route,
    text: &str,
    lenient: bool,
) -> QueryRow {
    let (s, d) = (oracle.source(), oracle.dest());
    let oracle_sum = oracle.rss_trace_dbm.iter().sum();
    let parsed = if lenient {
        parse_route_text_lenient(text)
    } else {
        parse_route_text(text)
    };
    let mut row = QueryRow {
        index,
        source: s,
        dest: d,
        verdict: ValidityVerdict::of(ValidityReason::EmptyPath),
        parse_error: None,
        coverage_pct: None,
        optimality_pct: None,
        edit_distance: None,
        pred_rss_dbm_sum: None,
        oracle_rss_dbm_sum: oracle_sum,
    };
    let cells = match parsed {
        Ok(p) => p.cells,
        Err(e) => {
            row.parse_error = Some(e.to_string());
            return row;
        }
    };
    // an empty answer is maximally far from any route
    row.edit_distance = Some(edit_distance(&cells, &oracle.cells).unwrap_or(1.0));
    row.verdict = validate_route(map, &cells, s, d);
    if row.verdict.valid {
        let pred = Route::from_cells(graph, cells).expect("validated route");
        row.coverage_pct = signal_coverage(&pred, oracle).ok();
        row.optimality_pct = path_optimality(&pred, oracle).ok();
        row.pred_rss_dbm_sum = cumulative_rss(&pred, RssDomain::DbmSum).ok();
    }
    row
}

/// Runs `planner` over every query and aggregates the four metrics.
///
/// Success is over all scored queries, coverage and optimality over valid
/// predictions, edit distance over parseable predictions. Queries whose
/// optimal route does not exist are skipped and listed.
pub fn evaluate_planner(
    planner: &dyn Planner,
    pairs: &[(CellId, CellId)],
    graph: &GridGraph,
    map: &CoverageMap,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let mut skipped = Vec::new();
    let mut jobs = Vec::new();
    for (index, &(s, d)) in pairs.iter().enumerate() {
        match plan_signal_aware(graph, s, d) {
            Ok(oracle) => jobs.push((index, oracle)),
            Err(e) => skipped.push(SkippedQuery {
                index,
                source: s,
                dest: d,
                reason: e.to_string(),
            }),
        }
    }

    let predict = |(index, oracle): &(usize, Route)| {
        planner
            .predict(*index, oracle.source(), oracle.dest())
            .map_err(|source| EvalError::Planner { index: *index, source })
    };
    let texts: Vec<String> = if options.concurrency <= 1 {
        jobs.iter().map(predict).collect::<Result<_, _>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(options.concurrency)
            .build()
            .map_err(|e| EvalError::Pool(e.to_string()))?
            .install(|| jobs.par_iter().map(predict).collect::<Result<_, _>>())?
    };

    let rows: Vec<QueryRow> = jobs
        .par_iter()
        .zip(texts.par_iter())
        .map(|((index, oracle), text)| score_prediction(graph, map, *index, oracle, text, options.lenient))
        .collect();

    let n = rows.len();
    let valid: Vec<&QueryRow> = rows.iter().filter(|r| r.verdict.valid).collect();
    let coverage: Vec<f64> = valid.iter().filter_map(|r| r.coverage_pct).collect();
    let optimality: Vec<f64> = valid.iter().filter_map(|r| r.optimality_pct).collect();
    let edits: Vec<f64> = rows.iter().filter_map(|r| r.edit_distance).collect();

    Ok(EvalReport {
        model: planner.name(),
        coverage_pct: mean(&coverage).unwrap_or(0.0),
        optimality_pct: mean(&optimality).unwrap_or(0.0),
        success_pct: if n == 0 { 0.0 } else { 100.0 * valid.len() as f64 / n as f64 },
        mean_edit_distance: mean(&edits).unwrap_or(1.0),
        n_queries: n,
        n_valid: valid.len(),
        n_parsed: edits.len(),
        no_valid_predictions: valid.is_empty(),
        no_parsed_predictions: edits.is_empty(),
        skipped,
        per_query: rows,
    })
}
