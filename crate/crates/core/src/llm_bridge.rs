//! Planner abstraction: built-in planners, a deterministic mock for harness
//! testing, and an HTTP client for hosted chat-completion models.
//!
//! Every planner answers with assistant text in the dataset grammar; the
//! evaluator parses that text, so parse failures surface as invalid
//! predictions rather than errors.

use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset::{render_query, render_response, DatasetError, DEFAULT_TEMPLATE, SYSTEM_PROMPT};
use crate::gridgraph::{CellId, GridGraph};
use crate::propagation::BLOCKED_SENTINEL_DBM;
use crate::routing::{plan_greedy_alg1, plan_shortest, plan_signal_aware, Route, RouteError};

pub const DEFAULT_TOKEN_ENV_VAR: &str = "CTMAP_API_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatExchange {
    pub system_text: String,
    pub user_text: String,
    pub assistant_text: String,
}

/// Prompt for a query, identical to what the dataset emits for the same
/// pair and template. The assistant side is left empty.
pub fn format_prompt(s: CellId, d: CellId) -> ChatExchange {
    format_prompt_with(DEFAULT_TEMPLATE, s, d).expect("default template exists")
}

pub fn format_prompt_with(template_id: &str, s: CellId, d: CellId) -> Result<ChatExchange, DatasetError> {
    Ok(ChatExchange {
        system_text: SYSTEM_PROMPT.to_string(),
        user_text: render_query(template_id, s, d)?,
        assistant_text: String::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse failure at byte {position}: {message}")]
pub struct ParseFailure {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRoute {
    pub cells: Vec<CellId>,
    /// Per-cell values as written by the model; empty for lenient parses.
    pub rss_dbm: Vec<f64>,
    pub total_hops: Option<usize>,
    pub total_rss_dbm_sum: Option<f64>,
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn fail<T>(&self, message: impl Into<String>) -> Result<T, ParseFailure> {
        Err(ParseFailure {
            position: self.offset + self.pos,
            message: message.into(),
        })
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn eat(&mut self, lit: &str) -> bool {
        if self.rest().starts_with(lit) {
            self.pos += lit.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str) -> Result<(), ParseFailure> {
        if self.eat(lit) {
            Ok(())
        } else {
            self.fail(format!("expected {lit:?}"))
        }
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> &'a str {
        let rest = self.rest();
        let end = rest.find(|c: char| !f(c)).unwrap_or(rest.len());
        self.pos += end;
        &rest[..end]
    }

    fn uint(&mut self, what: &str) -> Result<usize, ParseFailure> {
        let start = self.pos;
        let digits = self.take_while(|c| c.is_ascii_digit());
        digits.parse().or_else(|_| {
            self.pos = start;
            self.fail(format!("expected unsigned integer for {what}"))
        })
    }

    fn number(&mut self, what: &str) -> Result<&'a str, ParseFailure> {
        let start = self.pos;
        let tok = self.take_while(|c| c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E'));
        if tok.is_empty() || tok.parse::<f64>().map(|v| !v.is_finite()).unwrap_or(true) {
            self.pos = start;
            return self.fail(format!("expected number for {what}"));
        }
        Ok(tok)
    }
}

/// Strict parser for `PATH: (c,r): v dBm; ...; TOTAL_HOPS: n; TOTAL_RSS_DBM_SUM: x`.
/// Only whitespace around the whole text is tolerated.
pub fn parse_route_text(text: &str) -> Result<ParsedRoute, ParseFailure> {
    let trimmed = text.trim();
    let offset = text.len() - text.trim_start().len();
    let mut cur = Cursor {
        text: trimmed,
        pos: 0,
        offset,
    };
    cur.expect("PATH: ")?;
    let mut cells = Vec::new();
    let mut rss_dbm = Vec::new();
    while cur.rest().starts_with('(') {
        cur.expect("(")?;
        let col = cur.uint("column")?;
        cur.expect(",")?;
        let row = cur.uint("row")?;
        cur.expect("): ")?;
        // values are written at f32 precision
        let v: f32 = cur.number("rss")?.parse().expect("validated number");
        cur.expect(" dBm;")?;
        if !cur.rest().is_empty() {
            cur.expect(" ")?;
        }
        cells.push(CellId::new(col, row));
        rss_dbm.push(f64::from(v));
    }
    if cur.rest().is_empty() {
        return cur.fail("missing TOTAL_HOPS");
    }
    cur.expect("TOTAL_HOPS: ")?;
    let hops = cur.uint("TOTAL_HOPS")?;
    if cur.rest().is_empty() {
        return cur.fail("missing TOTAL_RSS_DBM_SUM");
    }
    cur.expect("; TOTAL_RSS_DBM_SUM: ")?;
    let sum: f64 = cur.number("TOTAL_RSS_DBM_SUM")?.parse().expect("validated number");
    if !cur.rest().is_empty() {
        return cur.fail("unexpected trailing text");
    }
    Ok(ParsedRoute {
        cells,
        rss_dbm,
        total_hops: Some(hops),
        total_rss_dbm_sum: Some(sum),
    })
}

/// Strict parse first; otherwise the first `[...]` list of `(x, y)` pairs.
pub fn parse_route_text_lenient(text: &str) -> Result<ParsedRoute, ParseFailure> {
    let strict_err = match parse_route_text(text) {
        Ok(p) => return Ok(p),
        Err(e) => e,
    };
    let list = regex::Regex::new(r"\[([^\]]*)\]").expect("static regex");
    let pair = regex::Regex::new(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)").expect("static regex");
    for m in list.captures_iter(text) {
        let cells: Vec<CellId> = pair
            .captures_iter(&m[1])
            .filter_map(|c| Some(CellId::new(c[1].parse().ok()?, c[2].parse().ok()?)))
            .collect();
        if !cells.is_empty() {
            return Ok(ParsedRoute {
                cells,
                rss_dbm: Vec::new(),
                total_hops: None,
                total_rss_dbm_sum: None,
            });
        }
    }
    Err(strict_err)
}

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("rate limited (HTTP 429) after {0} attempts")]
    RateLimited(usize),
    #[error("request rejected (HTTP {0})")]
    Rejected(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub timeout_ms: u64,
    pub max_retries: usize,
    pub auth_token_env_var: String,
    /// First retry delay; doubles per attempt.
    pub backoff_base_ms: u64,
}

impl RemoteConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            timeout_ms: 30_000,
            max_retries: 2,
            auth_token_env_var: DEFAULT_TOKEN_ENV_VAR.into(),
            backoff_base_ms: 250,
        }
    }
}

pub fn request_body(config: &RemoteConfig, exchange: &ChatExchange) -> Value {
    json!({
        "model": config.model_name,
        "messages": [
            {"role": "system", "content": exchange.system_text},
            {"role": "user", "content": exchange.user_text},
        ]
    })
}

enum Attempt {
    Done(String),
    Fatal(RemoteError),
    Retry(RemoteError),
}

fn attempt(
    client: &reqwest::blocking::Client,
    config: &RemoteConfig,
    body: &str,
    token: Option<&str>,
    attempts_so_far: usize,
) -> Attempt {
    let mut req = client
        .post(&config.endpoint_url)
        .header(reqwest::header::CONTENT_TYPE, "application/json")
        .body(body.to_owned());
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = match req.send() {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(RemoteError::Transport(e.to_string())),
    };
    let status = resp.status().as_u16();
    match status {
        200..=299 => {}
        401 | 403 => return Attempt::Fatal(RemoteError::Auth(status)),
        429 => return Attempt::Retry(RemoteError::RateLimited(attempts_so_far + 1)),
        500..=599 => {
            return Attempt::Retry(RemoteError::Transport(format!("server returned HTTP {status}")))
        }
        _ => return Attempt::Fatal(RemoteError::Rejected(status)),
    }
    let text = match resp.text() {
        Ok(t) => t,
        Err(e) => return Attempt::Retry(RemoteError::Transport(e.to_string())),
    };
    let value: Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => return Attempt::Fatal(RemoteError::MalformedResponse(e.to_string())),
    };
    match value.pointer("/choices/0/message/content").and_then(Value::as_str) {
        Some(content) => Attempt::Done(content.to_string()),
        None => Attempt::Fatal(RemoteError::MalformedResponse(
            "missing choices[0].message.content".into(),
        )),
    }
}

/// Sends one chat-completion request and returns the first choice's content.
///
/// Transport failures, 5xx and 429 are retried up to `max_retries` times
/// with exponential backoff; 4xx responses are never retried.
pub fn remote_plan(config: &RemoteConfig, exchange: &ChatExchange) -> Result<String, RemoteError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(config.timeout_ms.max(1)))
        .build()
        .map_err(|e| RemoteError::Transport(e.to_string()))?;
    let token = std::env::var(&config.auth_token_env_var)
        .ok()
        .filter(|t| !t.is_empty());
    let body = request_body(config, exchange).to_string();

    let mut last = RemoteError::Transport("no attempt made".into());
    for n in 0..=config.max_retries {
        if n > 0 {
            let delay = config.backoff_base_ms.saturating_mul(1 << (n - 1).min(16));
            log::debug!("retry {n} after {delay} ms: {last}");
            thread::sleep(Duration::from_millis(delay));
        }
        match attempt(&client, config, &body, token.as_deref(), n) {
            Attempt::Done(s) => return Ok(s),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Retry(e) => last = e,
        }
    }
    Err(last)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    None,
    /// Replace a straight run of `k` cells with a parallel offset run.
    Detour { seed: u64, k: usize },
    /// With probability `p`, swap one cell for a non-adjacent one.
    Corrupt { seed: u64, p: f64 },
    /// Always answer with an empty path.
    Empty,
}

impl Perturbation {
    fn reseeded(self, query_index: usize) -> Self {
        let mix = |seed: u64| {
            let mut z = seed ^ (query_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        match self {
            Perturbation::Detour { seed, k } => Perturbation::Detour { seed: mix(seed), k },
            Perturbation::Corrupt { seed, p } => Perturbation::Corrupt { seed: mix(seed), p },
            other => other,
        }
    }
}

fn cell_rss(graph: &GridGraph, c: CellId) -> f64 {
    if graph.in_grid(c) {
        graph.rss_dbm(c)
    } else {
        f64::from(BLOCKED_SENTINEL_DBM)
    }
}

fn detour_cells(graph: &GridGraph, cells: &[CellId], k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<CellId>> {
    if k == 0 || cells.len() < k + 2 {
        return None;
    }
    let step = |a: CellId, b: CellId| (b.col as i64 - a.col as i64, b.row as i64 - a.row as i64);
    let shift = |c: CellId, (dc, dr): (i64, i64)| -> Option<CellId> {
        let col = usize::try_from(c.col as i64 + dc).ok()?;
        let row = usize::try_from(c.row as i64 + dr).ok()?;
        Some(CellId::new(col, row))
    };
    let on_route: std::collections::HashSet<CellId> = cells.iter().copied().collect();
    let mut options = Vec::new();
    for i in 0..=cells.len() - (k + 2) {
        let run = &cells[i..i + k + 2];
        let dir = step(run[0], run[1]);
        if run.windows(2).any(|w| step(w[0], w[1]) != dir) {
            continue;
        }
        for normal in [(dir.1, dir.0), (-dir.1, -dir.0)] {
            let offset: Option<Vec<CellId>> = run.iter().map(|&c| shift(c, normal)).collect();
            if let Some(offset) = offset {
                if offset.iter().all(|&c| graph.is_node(c) && !on_route.contains(&c)) {
                    options.push((i, offset));
                }
            }
        }
    }
    if options.is_empty() {
        return None;
    }
    let (i, offset) = options.swap_remove(rng.random_range(0..options.len()));
    let mut out = cells[..=i].to_vec();
    out.extend(offset);
    out.extend_from_slice(&cells[i + k + 1..]);
    Some(out)
}

/// Mock model answer derived from the optimal route.
///
/// A detour that cannot be placed (no straight run of `k + 2` cells with a
/// free side) leaves the route unchanged.
pub fn mock_plan(graph: &GridGraph, oracle: &Route, perturbation: Perturbation) -> String {
    let cells = match perturbation {
        Perturbation::None => oracle.cells.clone(),
        Perturbation::Empty => Vec::new(),
        Perturbation::Detour { seed, k } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            detour_cells(graph, &oracle.cells, k, &mut rng).unwrap_or_else(|| oracle.cells.clone())
        }
        Perturbation::Corrupt { seed, p } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cells = oracle.cells.clone();
            if rng.random_bool(p.clamp(0.0, 1.0)) {
                let i = rng.random_range(0..cells.len());
                // three cells away on both axes: never adjacent to anything
                // the original cell touched
                cells[i] = CellId::new(cells[i].col + 3, cells[i].row + 3);
            }
            cells
        }
    };
    let rss: Vec<f64> = cells.iter().map(|&c| cell_rss(graph, c)).collect();
    render_response(&cells, &rss)
}

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Route(#[from] RouteError),
    #[error(transparent)]
    Remote(#[from] RemoteError),
}

/// Anything that answers route queries with assistant text.
pub trait Planner: Sync {
    fn name(&self) -> String;
    fn predict(&self, query_index: usize, s: CellId, d: CellId) -> Result<String, PlannerError>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlannerKind {
    Oracle,
    ShortestBaseline,
    GreedyAlg1,
    Mock(Perturbation),
    Remote(RemoteConfig),
}

impl PlannerKind {
    pub fn label(&self) -> String {
        match self {
            PlannerKind::Oracle => "Oracle Dijkstra".into(),
            PlannerKind::ShortestBaseline => "Shortest-distance Dijkstra".into(),
            PlannerKind::GreedyAlg1 => "Greedy best-first".into(),
            PlannerKind::Mock(p) => format!("Mock ({p:?})"),
            PlannerKind::Remote(c) => format!("Remote ({})", c.model_name),
        }
    }
}

/// A [`PlannerKind`] bound to the graph it plans over.
pub struct GraphPlanner<'g> {
    pub graph: &'g GridGraph,
    pub kind: PlannerKind,
}

impl<'g> GraphPlanner<'g> {
    pub fn new(graph: &'g GridGraph, kind: PlannerKind) -> Self {
        Self { graph, kind }
    }
}

impl Planner for GraphPlanner<'_> {
    fn name(&self) -> String {
        self.kind.label()
    }

    fn predict(&self, query_index: usize, s: CellId, d: CellId) -> Result<String, PlannerError> {
        let g = self.graph;
        let text = |r: Route| render_response(&r.cells, &r.rss_trace_dbm);
        Ok(match &self.kind {
            PlannerKind::Oracle => text(plan_signal_aware(g, s, d)?),
            PlannerKind::ShortestBaseline => text(plan_shortest(g, s, d)?),
            PlannerKind::GreedyAlg1 => text(plan_greedy_alg1(g, s, d)?),
            PlannerKind::Mock(p) => {
                let oracle = plan_signal_aware(g, s, d)?;
                mock_plan(g, &oracle, p.reseeded(query_index))
            }
            PlannerKind::Remote(config) => remote_plan(config, &format_prompt(s, d))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_record, DEFAULT_TEMPLATE};
    use crate::gridgraph::{build_graph, DEFAULT_EPSILON};
    use crate::propagation::CoverageMap;

    fn graph(cols: usize, rows: usize) -> GridGraph {
        let rss = (0..cols * rows).map(|i| -40.0 - (i % 11) as f32 * 0.5).collect();
        build_graph(&CoverageMap::from_grid(cols, rows, rss, vec![false; cols * rows]), DEFAULT_EPSILON)
            .unwrap()
    }

    #[test]
    fn prompt_substitution() {
        let p = format_prompt(CellId::new(0, 0), CellId::new(5, 5));
        assert!(p.user_text.contains("from (0, 0) to (5, 5)"));
        assert_eq!(
            p.system_text,
            "You are a navigation assistant specialized in wireless connectivity optimization."
        );
    }

    #[test]
    fn prompt_matches_dataset_record() {
        let g = graph(10, 10);
        let r = plan_signal_aware(&g, CellId::new(1, 2), CellId::new(7, 8)).unwrap();
        let rec = build_record(&r, DEFAULT_TEMPLATE).unwrap();
        let p = format_prompt(CellId::new(1, 2), CellId::new(7, 8));
        assert_eq!(p.user_text, rec.query_text);
        assert!(rec.to_message_line().contains(&serde_json::to_string(&p.system_text).unwrap()));
    }

    #[test]
    fn three_cell_round_trip() {
        let cells = vec![CellId::new(0, 0), CellId::new(1, 0), CellId::new(1, 1)];
        let rss = vec![-40.25, f64::from(-54.27f32), -200.0];
        let text = render_response(&cells, &rss);
        let p = parse_route_text(&format!("  {text}\n")).unwrap();
        assert_eq!(p.cells, cells);
        assert_eq!(p.rss_dbm, rss);
        assert_eq!(p.total_hops, Some(2));
    }

    #[test]
    fn refusal_fails_at_zero() {
        let e = parse_route_text("sorry, I cannot help").unwrap_err();
        assert_eq!(e.position, 0);
    }

    #[test]
    fn truncation_names_missing_field() {
        let text = render_response(&[CellId::new(0, 0), CellId::new(0, 1)], &[-40.0, -41.0]);
        let cut = &text[..text.find("TOTAL_HOPS").unwrap()];
        let e = parse_route_text(cut).unwrap_err();
        assert!(e.message.contains("TOTAL_HOPS"), "{e}");
        let cut = &text[..text.find("; TOTAL_RSS").unwrap()];
        let e = parse_route_text(cut).unwrap_err();
        assert!(e.message.contains("TOTAL_RSS_DBM_SUM"), "{e}");
    }

    #[test]
    fn strictness() {
        let ok = "PATH: (1,2): -40 dBm; TOTAL_HOPS: 0; TOTAL_RSS_DBM_SUM: -40.00";
        assert!(parse_route_text(ok).is_ok());
        for bad in [
            "PATH: (1, 2): -40 dBm; TOTAL_HOPS: 0; TOTAL_RSS_DBM_SUM: -40.00",
            "PATH: (-1,2): -40 dBm; TOTAL_HOPS: 0; TOTAL_RSS_DBM_SUM: -40.00",
            "PATH: (1,2): -40 dBm; TOTAL_HOPS: 0; TOTAL_RSS_DBM_SUM: -40.00 thanks",
            "path: (1,2): -40 dBm; TOTAL_HOPS: 0; TOTAL_RSS_DBM_SUM: -40.00",
            "PATH: (1,2): NaN dBm; TOTAL_HOPS: 0; TOTAL_RSS_DBM_SUM: -40.00",
        ] {
            assert!(parse_route_text(bad).is_err(), "{bad}");
        }
        let empty = parse_route_text("PATH: TOTAL_HOPS: 0; TOTAL_RSS_DBM_SUM: 0.00").unwrap();
        assert!(empty.cells.is_empty());
    }

    #[test]
    fn lenient_extracts_first_list() {
        let text = "Sure! The route is [(1, 2), (1,3), ( 2 , 3 )] with good signal. [(9,9)]";
        assert!(parse_route_text(text).is_err());
        let p = parse_route_text_lenient(text).unwrap();
        assert_eq!(p.cells, vec![CellId::new(1, 2), CellId::new(1, 3), CellId::new(2, 3)]);
        assert!(parse_route_text_lenient("no list here").is_err());
    }

    #[test]
    fn mock_identity_and_corrupt() {
        let g = graph(20, 20);
        let oracle = plan_signal_aware(&g, CellId::new(2, 2), CellId::new(15, 12)).unwrap();
        let text = mock_plan(&g, &oracle, Perturbation::None);
        assert_eq!(parse_route_text(&text).unwrap().cells, oracle.cells);

        let bad = mock_plan(&g, &oracle, Perturbation::Corrupt { seed: 1, p: 1.0 });
        let cells = parse_route_text(&bad).unwrap().cells;
        assert_eq!(cells.len(), oracle.cells.len());
        let changed: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] != oracle.cells[i]).collect();
        assert_eq!(changed.len(), 1);

        let same = mock_plan(&g, &oracle, Perturbation::Corrupt { seed: 1, p: 0.0 });
        assert_eq!(same, text);
        assert_eq!(
            mock_plan(&g, &oracle, Perturbation::Corrupt { seed: 4, p: 0.5 }),
            mock_plan(&g, &oracle, Perturbation::Corrupt { seed: 4, p: 0.5 })
        );
    }

    #[test]
    fn detour_is_a_simple_adjacent_path() {
        let g = graph(20, 20);
        let oracle = plan_signal_aware(&g, CellId::new(2, 10), CellId::new(17, 10)).unwrap();
        let text = mock_plan(&g, &oracle, Perturbation::Detour { seed: 3, k: 4 });
        let cells = parse_route_text(&text).unwrap().cells;
        assert_eq!(cells.len(), oracle.cells.len() + 2);
        assert!(cells.windows(2).all(|w| w[0].is_adjacent(w[1])));
        let uniq: std::collections::HashSet<_> = cells.iter().collect();
        assert_eq!(uniq.len(), cells.len());
        assert_eq!(cells.first(), oracle.cells.first());
        assert_eq!(cells.last(), oracle.cells.last());
    }
}
