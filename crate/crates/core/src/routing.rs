//! Route planners over a [`GridGraph`].
//!
//! * [`plan_signal_aware`] minimizes the summed inverse-signal cost and is the
//!   oracle every other planner is scored against.
//! * [`plan_greedy_alg1`] is the max-signal best-first search, transcribed
//!   step for step. It does not accumulate path costs and is not optimal.
//! * [`plan_shortest`] is the hop-count baseline.
//! * [`brute_force_optimal`] is an exhaustive simple-path search used to
//!   check the oracle on small graphs.
//!
//! All heap-based planners break priority ties by the smaller `(row, col)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::envmodel::{BaseStation, Environment};
use crate::gridgraph::{build_graph, CellId, GraphError, GridGraph};
use crate::propagation::{compute_coverage, CoverageError, PropagationParams};

/// Node limit for [`brute_force_optimal`].
pub const BRUTE_FORCE_NODE_CAP: usize = 400;

#[derive(Debug, Error, PartialEq)]
pub enum RouteError {
    #[error("no path from {0} to {1}")]
    Unreachable(CellId, CellId),
    #[error("endpoint {0} is blocked or outside the grid")]
    InvalidEndpoint(CellId),
    #[error("graph has {nodes} nodes, exhaustive search is capped at {cap}")]
    TooLarge { nodes: usize, cap: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub cells: Vec<CellId>,
    pub rss_trace_dbm: Vec<f64>,
    /// Sum of edge costs; the source cell contributes nothing.
    pub cumulative_cost: f64,
    /// Sum of linear signal over every cell, source included.
    pub cumulative_rss_lin: f64,
    pub hop_count: usize,
}

impl Route {
    /// Builds a route from a cell sequence, recomputing every derived field.
    pub fn from_cells(graph: &GridGraph, cells: Vec<CellId>) -> Result<Route, RouteError> {
        let first = *cells.first().ok_or(GraphError::EmptyGraph)?;
        if !graph.is_node(first) {
            return Err(RouteError::InvalidEndpoint(first));
        }
        let mut cost = 0.0;
        for w in cells.windows(2) {
            cost += graph.edge_cost(w[0], w[1])?;
        }
        let rss_trace_dbm: Vec<f64> = cells.iter().map(|&c| graph.rss_dbm(c)).collect();
        let cumulative_rss_lin = cells.iter().map(|&c| graph.s_lin(c)).sum();
        Ok(Route {
            hop_count: cells.len() - 1,
            cells,
            rss_trace_dbm,
            cumulative_cost: cost,
            cumulative_rss_lin,
        })
    }

    pub fn source(&self) -> CellId {
        self.cells[0]
    }

    pub fn dest(&self) -> CellId {
        *self.cells.last().expect("route is non-empty")
    }
}

fn check_endpoints(graph: &GridGraph, s: CellId, d: CellId) -> Result<(), RouteError> {
    for c in [s, d] {
        if !graph.is_node(c) {
            return Err(RouteError::InvalidEndpoint(c));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct MinEntry {
    key: f64,
    cell: CellId,
}

impl PartialEq for MinEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for MinEntry {}
impl PartialOrd for MinEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for MinEntry {
    // BinaryHeap pops the greatest: smallest key, then smallest cell.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

fn backtrack(graph: &GridGraph, pred: &[usize], s: CellId, d: CellId) -> Vec<CellId> {
    let mut path = vec![d];
    let mut i = graph.index(d);
    let si = graph.index(s);
    while i != si {
        i = pred[i];
        path.push(graph.cell(i));
    }
    path.reverse();
    path
}

/// Binary-heap Dijkstra with lazy deletion; `weight(v)` is the cost of
/// entering `v`.
fn dijkstra(
    graph: &GridGraph,
    s: CellId,
    d: CellId,
    weight: impl Fn(CellId) -> f64,
) -> Result<Vec<CellId>, RouteError> {
    check_endpoints(graph, s, d)?;
    let n = graph.cols() * graph.rows();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[graph.index(s)] = 0.0;
    heap.push(MinEntry { key: 0.0, cell: s });

    while let Some(MinEntry { key, cell: u }) = heap.pop() {
        let ui = graph.index(u);
        if done[ui] || key > dist[ui] {
            continue;
        }
        done[ui] = true;
        if u == d {
            return Ok(backtrack(graph, &pred, s, d));
        }
        for v in graph.neighbors(u) {
            let vi = graph.index(v);
            if done[vi] {
                continue;
            }
            let alt = key + weight(v);
            if alt < dist[vi] {
                dist[vi] = alt;
                pred[vi] = ui;
                heap.push(MinEntry { key: alt, cell: v });
            }
        }
    }
    Err(RouteError::Unreachable(s, d))
}

/// Minimum inverse-signal-cost route.
pub fn plan_signal_aware(graph: &GridGraph, s: CellId, d: CellId) -> Result<Route, RouteError> {
    let cells = dijkstra(graph, s, d, |v| graph.head_cost(v))?;
    Route::from_cells(graph, cells)
}

/// Minimum-hop route.
pub fn plan_shortest(graph: &GridGraph, s: CellId, d: CellId) -> Result<Route, RouteError> {
    let cells = dijkstra(graph, s, d, |_| 1.0)?;
    Route::from_cells(graph, cells)
}

#[derive(Debug, Clone, Copy)]
struct MaxEntry {
    signal: f64,
    cell: CellId,
}

impl PartialEq for MaxEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for MaxEntry {}
impl PartialOrd for MaxEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for MaxEntry {
    // Largest signal first, then smallest cell.
    fn cmp(&self, other: &Self) -> Ordering {
        self.signal
            .total_cmp(&other.signal)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

/// Best-first search that always expands the strongest queued cell.
///
/// `visited[v]` holds the best signal observed at `v` and `pred[v]` its
/// parent; a neighbor is (re)queued when unseen or when its signal beats the
/// recorded value. The search stops when `d` is extracted.
pub fn plan_greedy_alg1(graph: &GridGraph, s: CellId, d: CellId) -> Result<Route, RouteError> {
    check_endpoints(graph, s, d)?;
    let n = graph.cols() * graph.rows();
    let mut visited: Vec<Option<f64>> = vec![None; n];
    let mut pred = vec![usize::MAX; n];
    let mut queue = BinaryHeap::new();

    queue.push(MaxEntry {
        signal: graph.s_lin(s),
        cell: s,
    });
    visited[graph.index(s)] = Some(graph.s_lin(s));

    let mut reached = false;
    while let Some(MaxEntry { cell: u, .. }) = queue.pop() {
        if u == d {
            reached = true;
            break;
        }
        for v in graph.neighbors(u) {
            let vi = graph.index(v);
            let sv = graph.s_lin(v);
            if visited[vi].is_none_or(|seen| sv > seen) {
                visited[vi] = Some(sv);
                queue.push(MaxEntry { signal: sv, cell: v });
                pred[vi] = graph.index(u);
            }
        }
    }
    if !reached {
        return Err(RouteError::Unreachable(s, d));
    }
    Route::from_cells(graph, backtrack(graph, &pred, s, d))
}

/// Exhaustive search for the minimum-cost simple path.
///
/// Depth-first enumeration of simple paths, pruned two ways: a partial path
/// whose cost already reaches the best complete path is dropped, and so is
/// one that reaches a cell no cheaper than an earlier partial path did (any
/// completion of it is matched by the earlier prefix after shortcutting
/// loops, since costs are positive). Neither prune can discard the optimum.
pub fn brute_force_optimal(
    graph: &GridGraph,
    s: CellId,
    d: CellId,
    max_cells: usize,
) -> Result<Route, RouteError> {
    let cap = max_cells.min(BRUTE_FORCE_NODE_CAP);
    if graph.node_count() > cap {
        return Err(RouteError::TooLarge {
            nodes: graph.node_count(),
            cap,
        });
    }
    check_endpoints(graph, s, d)?;
    if s == d {
        return Route::from_cells(graph, vec![s]);
    }

    struct Search<'g> {
        graph: &'g GridGraph,
        dest: CellId,
        on_path: Vec<bool>,
        label: Vec<f64>,
        path: Vec<CellId>,
        best_cost: f64,
        best_path: Vec<CellId>,
    }

    impl Search<'_> {
        fn extend(&mut self, u: CellId, cost: f64) {
            let next: Vec<CellId> = self.graph.neighbors(u).collect();
            for v in next {
                let vi = self.graph.index(v);
                if self.on_path[vi] {
                    continue;
                }
                let c = cost + self.graph.head_cost(v);
                if c >= self.best_cost || c >= self.label[vi] {
                    continue;
                }
                self.label[vi] = c;
                self.path.push(v);
                if v == self.dest {
                    self.best_cost = c;
                    self.best_path = self.path.clone();
                } else {
                    self.on_path[vi] = true;
                    self.extend(v, c);
                    self.on_path[vi] = false;
                }
                self.path.pop();
            }
        }
    }

    let n = graph.cols() * graph.rows();
    let mut search = Search {
        graph,
        dest: d,
        on_path: vec![false; n],
        label: vec![f64::INFINITY; n],
        path: vec![s],
        best_cost: f64::INFINITY,
        best_path: Vec::new(),
    };
    search.on_path[graph.index(s)] = true;
    search.label[graph.index(s)] = 0.0;
    search.extend(s, 0.0);

    if search.best_path.is_empty() {
        return Err(RouteError::Unreachable(s, d));
    }
    Route::from_cells(graph, search.best_path)
}

/// Everything needed to rebuild the signal state from scratch.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub env: Environment,
    pub stations: Vec<BaseStation>,
    pub params: PropagationParams,
    pub epsilon: f64,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Route(#[from] RouteError),
}

impl PipelineInputs {
    pub fn build_graph(&self) -> Result<GridGraph, PipelineError> {
        let map = compute_coverage(&self.env, &self.stations, &self.params)?;
        Ok(build_graph(&map, self.epsilon)?)
    }
}

/// Recomputes coverage and graph from the (changed) inputs and replans.
/// Holds no state between calls.
pub fn replan_on_update(inputs: &PipelineInputs, s: CellId, d: CellId) -> Result<Route, PipelineError> {
    let graph = inputs.build_graph()?;
    Ok(plan_signal_aware(&graph, s, d)?)
}
