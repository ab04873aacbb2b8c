//! Instruction-tuning dataset: query/response records built from optimal
//! routes, serialized as three-message chat exchanges in JSON Lines.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::gridgraph::{dbm_to_linear, CellId, GridGraph};
use crate::llm_bridge::parse_route_text;
use crate::propagation::CoverageMap;
use crate::routing::{plan_signal_aware, Route, RouteError};

pub const SYSTEM_PROMPT: &str =
    "You are a navigation assistant specialized in wireless connectivity optimization.";
pub const DEFAULT_TEMPLATE: &str = "coverage";
pub const DEFAULT_MIN_SEPARATION_M: f64 = 50.0;
pub const DEFAULT_SPLIT_RATIO: f64 = 0.8;
/// Draw attempts allowed per requested pair.
pub const PAIR_RETRY_BUDGET: usize = 1000;
pub const FORMAT_NAME: &str = "ctmap-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("unknown query template {0:?}")]
    UnknownTemplate(String),
    #[error("could only place {placed} of {requested} pairs within the retry budget")]
    Exhausted { placed: usize, requested: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("split ratio must be in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Route(#[from] RouteError),
}

/// Renders the user query for a template id.
pub fn render_query(template_id: &str, s: CellId, d: CellId) -> Result<String, DatasetError> {
    let (sc, sr, dc, dr) = (s.col, s.row, d.col, d.row);
    match template_id {
        "coverage" => Ok(format!(
            "Find the strongest-signal path from ({sc}, {sr}) to ({dc}, {dr}) using mmWave coverage data."
        )),
        "plain" => Ok(format!(
            "Find the strongest-signal path from ({sc}, {sr}) to ({dc}, {dr})."
        )),
        other => Err(DatasetError::UnknownTemplate(other.to_string())),
    }
}

/// Assistant text for a route:
/// `PATH: (c,r): v dBm; ...; TOTAL_HOPS: n; TOTAL_RSS_DBM_SUM: x`.
///
/// Per-cell values print at f32 precision (the coverage grid's precision),
/// which parses back bit-exactly. The sum is informational and rounded.
pub fn render_response(cells: &[CellId], rss_dbm: &[f64]) -> String {
    let mut out = String::from("PATH: ");
    for (c, v) in cells.iter().zip(rss_dbm) {
        out.push_str(&format!("({},{}): {} dBm; ", c.col, c.row, *v as f32));
    }
    let sum: f64 = rss_dbm.iter().sum();
    out.push_str(&format!(
        "TOTAL_HOPS: {}; TOTAL_RSS_DBM_SUM: {:.2}",
        cells.len().saturating_sub(1),
        sum
    ));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub query_text: String,
    pub source: CellId,
    pub dest: CellId,
    pub response_cells: Vec<CellId>,
    pub response_rss_dbm: Vec<f64>,
    pub path_length: usize,
    pub total_rss_lin: f64,
    pub total_rss_dbm_sum: f64,
}

impl PlanRecord {
    pub fn response_text(&self) -> String {
        render_response(&self.response_cells, &self.response_rss_dbm)
    }

    pub fn to_message_line(&self) -> String {
        json!({
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": self.query_text},
                {"role": "assistant", "content": self.response_text()},
            ]
        })
        .to_string()
    }
}

fn record_from_parts(
    query_text: String,
    source: CellId,
    dest: CellId,
    cells: Vec<CellId>,
    rss: Vec<f64>,
) -> PlanRecord {
    PlanRecord {
        query_text,
        source,
        dest,
        path_length: cells.len().saturating_sub(1),
        total_rss_lin: rss.iter().map(|&v| dbm_to_linear(v)).sum(),
        total_rss_dbm_sum: rss.iter().sum(),
        response_cells: cells,
        response_rss_dbm: rss,
    }
}

pub fn build_record(route: &Route, template_id: &str) -> Result<PlanRecord, DatasetError> {
    let (s, d) = (route.source(), route.dest());
    let query = render_query(template_id, s, d)?;
    Ok(record_from_parts(
        query,
        s,
        d,
        route.cells.clone(),
        route.rss_trace_dbm.clone(),
    ))
}

/// Samples distinct source/destination pairs of free cells at least
/// `min_separation_m` apart.
pub fn sample_pairs(
    map: &CoverageMap,
    n: usize,
    seed: u64,
    min_separation_m: f64,
) -> Result<Vec<(CellId, CellId)>, DatasetError> {
    sample_pairs_where(map, n, seed, min_separation_m, |_, _| true)
}

/// [`sample_pairs`] with an extra acceptance predicate (e.g. reachability).
pub fn sample_pairs_where(
    map: &CoverageMap,
    n: usize,
    seed: u64,
    min_separation_m: f64,
    accept: impl Fn(CellId, CellId) -> bool,
) -> Result<Vec<(CellId, CellId)>, DatasetError> {
    let free: Vec<CellId> = (0..map.rows)
        .flat_map(|row| (0..map.cols).map(move |col| CellId::new(col, row)))
        .filter(|c| !map.blocked[map.index(c.col, c.row)])
        .collect();
    let requested = n;
    if n == 0 || free.len() < 2 {
        return Err(DatasetError::Exhausted { placed: 0, requested });
    }
    let res = f64::from(map.resolution_m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(n);
    let budget = n.saturating_mul(PAIR_RETRY_BUDGET);
    for _ in 0..budget {
        if pairs.len() == n {
            break;
        }
        let s = free[rng.random_range(0..free.len())];
        let d = free[rng.random_range(0..free.len())];
        if s == d {
            continue;
        }
        let dx = (s.col as f64 - d.col as f64) * res;
        let dy = (s.row as f64 - d.row as f64) * res;
        if dx.hypot(dy) < min_separation_m || seen.contains(&(s, d)) || !accept(s, d) {
            continue;
        }
        seen.insert((s, d));
        pairs.push((s, d));
    }
    if pairs.len() < n {
        return Err(DatasetError::Exhausted {
            placed: pairs.len(),
            requested,
        });
    }
    Ok(pairs)
}

/// Plans the optimal route for every pair and turns each into a record.
/// Output order follows `pairs`.
pub fn records_for_pairs(
    graph: &GridGraph,
    pairs: &[(CellId, CellId)],
    template_id: &str,
) -> Result<Vec<PlanRecord>, DatasetError> {
    render_query(template_id, CellId::new(0, 0), CellId::new(0, 0))?;
    pairs
        .par_iter()
        .map(|&(s, d)| build_record(&plan_signal_aware(graph, s, d)?, template_id))
        .collect()
}

/// Samples `n` mutually reachable pairs and builds their records.
pub fn generate_dataset(
    map: &CoverageMap,
    graph: &GridGraph,
    n: usize,
    seed: u64,
    min_separation_m: f64,
    template_id: &str,
) -> Result<Vec<PlanRecord>, DatasetError> {
    let labels = graph.component_labels();
    let pairs = sample_pairs_where(map, n, seed, min_separation_m, |s, d| {
        labels[graph.index(s)] == labels[graph.index(d)]
    })?;
    records_for_pairs(graph, &pairs, template_id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
    pub ratio: f64,
}

/// Seeded shuffle, then the first `round(ratio * N)` items go to train.
pub fn split_dataset<T: Clone>(
    records: &[T],
    ratio: f64,
    seed: u64,
) -> Result<DatasetSplit<T>, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratio * records.len() as f64).round() as usize;
    let pick = |ids: &[usize]| ids.iter().map(|&i| records[i].clone()).collect();
    Ok(DatasetSplit {
        train: pick(&order[..n_train]),
        test: pick(&order[n_train..]),
        seed,
        ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub resolution_m: f64,
    pub count: usize,
}

pub fn to_jsonl(records: &[PlanRecord], resolution_m: f64) -> String {
    let header = DatasetHeader {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        resolution_m,
        count: records.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in records {
        out.push_str(&r.to_message_line());
        out.push('\n');
    }
    out
}

pub fn write_jsonl(records: &[PlanRecord], resolution_m: f64, path: &Path) -> Result<(), DatasetError> {
    fs::write(path, to_jsonl(records, resolution_m))?;
    Ok(())
}

#[derive(Deserialize)]
struct MessageLine {
    messages: Vec<Message>,
}

#[derive(Deserialize)]
struct Message {
    role: String,
    content: String,
}

fn coordinate_pattern() -> Regex {
    Regex::new(r"\((\d+), (\d+)\)").expect("static regex")
}

/// Source and destination embedded in a query.
pub fn query_endpoints(query: &str) -> Option<(CellId, CellId)> {
    let caps: Vec<CellId> = coordinate_pattern()
        .captures_iter(query)
        .filter_map(|c| Some(CellId::new(c[1].parse().ok()?, c[2].parse().ok()?)))
        .collect();
    match caps.as_slice() {
        [s, d] => Some((*s, *d)),
        _ => None,
    }
}

fn parse_record_line(text: &str) -> Result<PlanRecord, String> {
    let line: MessageLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let roles: Vec<&str> = line.messages.iter().map(|m| m.role.as_str()).collect();
    if roles != ["system", "user", "assistant"] {
        return Err(format!("expected system/user/assistant messages, got {roles:?}"));
    }
    if line.messages[0].content != SYSTEM_PROMPT {
        return Err("unexpected system instruction".into());
    }
    let query = line.messages[1].content.clone();
    let (s, d) = query_endpoints(&query).ok_or("query must embed exactly two coordinates")?;
    let parsed = parse_route_text(&line.messages[2].content).map_err(|e| e.to_string())?;
    if parsed.cells.first() != Some(&s) || parsed.cells.last() != Some(&d) {
        return Err("response endpoints do not match the query".into());
    }
    Ok(record_from_parts(query, s, d, parsed.cells, parsed.rss_dbm))
}

pub fn parse_jsonl(text: &str) -> Result<(DatasetHeader, Vec<PlanRecord>), DatasetError> {
    let err = |line: usize, message: String| DatasetError::Parse { line, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| err(1, "missing header line".into()))?;
    let header: DatasetHeader =
        serde_json::from_str(first).map_err(|e| err(1, format!("bad header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(err(1, format!("unknown format {:?}", header.format)));
    }
    let records = lines
        .map(|(i, l)| parse_record_line(l).map_err(|m| err(i + 1, m)))
        .collect::<Result<Vec<_>, _>>()?;
    if records.len() != header.count {
        return Err(err(
            1,
            format!("header declares {} records, found {}", header.count, records.len()),
        ));
    }
    Ok((header, records))
}

pub fn read_jsonl(path: &Path) -> Result<(DatasetHeader, Vec<PlanRecord>), DatasetError> {
    parse_jsonl(&fs::read_to_string(path)?)
}
