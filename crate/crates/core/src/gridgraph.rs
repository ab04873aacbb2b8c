//! Grid graph over the free cells of a coverage map.
//!
//! Edge costs follow the inverse-signal rule `1 / (S(head) + eps)`, with `S`
//! taken in linear milliwatts so that every weight is strictly positive.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::CoverageMap;

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("every cell is blocked")]
    EmptyGraph,
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("{0} and {1} are not adjacent free cells")]
    NotAdjacent(CellId, CellId),
}

/// Grid cell index. Ordered by `(row, col)`, which is also the tie-break
/// order of every planner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub col: usize,
    pub row: usize,
}

impl CellId {
    pub const fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }

    pub fn manhattan(self, other: CellId) -> usize {
        self.col.abs_diff(other.col) + self.row.abs_diff(other.row)
    }

    pub fn is_adjacent(self, other: CellId) -> bool {
        self.manhattan(other) == 1
    }
}

impl Ord for CellId {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.row, self.col).cmp(&(other.row, other.col))
    }
}

impl PartialOrd for CellId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.col, self.row)
    }
}

pub fn dbm_to_linear(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

#[derive(Debug, Clone)]
pub struct GridGraph {
    cols: usize,
    rows: usize,
    epsilon: f64,
    free: Vec<bool>,
    rss_dbm: Vec<f64>,
    s_lin: Vec<f64>,
    node_count: usize,
}

pub fn build_graph(map: &CoverageMap, epsilon: f64) -> Result<GridGraph, GraphError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(GraphError::InvalidEpsilon(epsilon));
    }
    let free: Vec<bool> = map.blocked.iter().map(|b| !b).collect();
    let node_count = free.iter().filter(|&&f| f).count();
    if node_count == 0 {
        return Err(GraphError::EmptyGraph);
    }
    let rss_dbm: Vec<f64> = map.rss_dbm.iter().map(|&v| f64::from(v)).collect();
    let s_lin = rss_dbm
        .iter()
        .zip(&free)
        .map(|(&v, &f)| if f { dbm_to_linear(v) } else { 0.0 })
        .collect();
    Ok(GridGraph {
        cols: map.cols,
        rows: map.rows,
        epsilon,
        free,
        rss_dbm,
        s_lin,
        node_count,
    })
}

impl GridGraph {
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn blocked_count(&self) -> usize {
        self.cols * self.rows - self.node_count
    }

    #[inline]
    pub fn index(&self, c: CellId) -> usize {
        c.row * self.cols + c.col
    }

    #[inline]
    pub fn cell(&self, index: usize) -> CellId {
        CellId::new(index % self.cols, index / self.cols)
    }

    pub fn in_grid(&self, c: CellId) -> bool {
        c.col < self.cols && c.row < self.rows
    }

    pub fn is_node(&self, c: CellId) -> bool {
        self.in_grid(c) && self.free[self.index(c)]
    }

    /// Linear signal in mW; 0 for blocked cells.
    pub fn s_lin(&self, c: CellId) -> f64 {
        self.s_lin[self.index(c)]
    }

    pub fn rss_dbm(&self, c: CellId) -> f64 {
        self.rss_dbm[self.index(c)]
    }

    /// Cost of entering `v`, no adjacency check.
    #[inline]
    pub fn head_cost(&self, v: CellId) -> f64 {
        1.0 / (self.s_lin[self.index(v)] + self.epsilon)
    }

    pub fn edge_cost(&self, u: CellId, v: CellId) -> Result<f64, GraphError> {
        if !(self.is_node(u) && self.is_node(v) && u.is_adjacent(v)) {
            return Err(GraphError::NotAdjacent(u, v));
        }
        Ok(self.head_cost(v))
    }

    /// Free 4-neighbors in a fixed order: down, left, right, up (by row).
    pub fn neighbors(&self, c: CellId) -> impl Iterator<Item = CellId> + '_ {
        let (col, row) = (c.col, c.row);
        let cand = [
            (row > 0).then(|| CellId::new(col, row - 1)),
            (col > 0).then(|| CellId::new(col - 1, row)),
            (col + 1 < self.cols).then(|| CellId::new(col + 1, row)),
            (row + 1 < self.rows).then(|| CellId::new(col, row + 1)),
        ];
        cand.into_iter().flatten().filter(move |n| self.free[self.index(*n)])
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> usize {
        let mut n = 0;
        for row in 0..self.rows {
            for col in 0..self.cols {
                let c = CellId::new(col, row);
                if !self.is_node(c) {
                    continue;
                }
                if col + 1 < self.cols && self.is_node(CellId::new(col + 1, row)) {
                    n += 1;
                }
                if row + 1 < self.rows && self.is_node(CellId::new(col, row + 1)) {
                    n += 1;
                }
            }
        }
        n
    }

    /// Connected-component label per cell (`u32::MAX` for blocked cells).
    pub fn component_labels(&self) -> Vec<u32> {
        let mut label = vec![u32::MAX; self.cols * self.rows];
        let mut next = 0u32;
        let mut queue = VecDeque::new();
        for start in 0..label.len() {
            if !self.free[start] || label[start] != u32::MAX {
                continue;
            }
            label[start] = next;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                for n in self.neighbors(self.cell(i)) {
                    let j = self.index(n);
                    if label[j] == u32::MAX {
                        label[j] = next;
                        queue.push_back(j);
                    }
                }
            }
            next += 1;
        }
        label
    }
}
