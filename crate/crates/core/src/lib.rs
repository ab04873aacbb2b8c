//! Connectivity-aware route planning over synthetic radio coverage maps.
//!
//! The pipeline runs scene → coverage map → grid graph → routes, and on top
//! of that builds chat-style instruction datasets and scores arbitrary route
//! planners (the optimal planner, baselines, a mock, or a remote chat model)
//! against the optimal route.

pub mod cli;
pub mod dataset;
pub mod envmodel;
pub mod gridgraph;
pub mod llm_bridge;
pub mod planner_eval;
pub mod propagation;
pub mod render;
pub mod routing;

pub use envmodel::{BaseStation, Environment, Point, Rect};
pub use gridgraph::{build_graph, dbm_to_linear, CellId, GridGraph};
pub use propagation::{compute_coverage, CoverageMap, PropagationParams};
pub use routing::{plan_greedy_alg1, plan_shortest, plan_signal_aware, Route};
