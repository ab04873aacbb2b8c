use ctmap::gridgraph::{GraphError, DEFAULT_EPSILON};
use ctmap::{build_graph, dbm_to_linear, CellId, CoverageMap};
use proptest::prelude::*;

#[test]
fn center_blocked_lattice() {
    let mut blocked = vec![false; 9];
    blocked[4] = true;
    let g = build_graph(&CoverageMap::from_grid(3, 3, vec![-50.0; 9], blocked), DEFAULT_EPSILON).unwrap();
    assert_eq!(g.node_count(), 8);
    assert_eq!(g.edge_count(), 8);
    assert_eq!(g.node_count() + g.blocked_count(), 9);
}

#[test]
fn cost_examples() {
    let map = CoverageMap::from_grid(3, 1, vec![0.0, -54.27, -60.0], vec![false; 3]);
    let g = build_graph(&map, DEFAULT_EPSILON).unwrap();
    let c = |i| CellId::new(i, 0);
    assert!((g.edge_cost(c(1), c(0)).unwrap() - 1.0).abs() < 1e-9);
    let expected = 1.0 / (10f64.powf(-5.427) + 1e-12);
    assert!((g.edge_cost(c(0), c(1)).unwrap() / expected - 1.0).abs() < 1e-6);
    assert!((expected - 2.673e5).abs() / 2.673e5 < 1e-3);
    assert_eq!(g.edge_cost(c(0), c(2)), Err(GraphError::NotAdjacent(c(0), c(2))));
}

#[test]
fn fully_blocked_map_is_empty() {
    let map = CoverageMap::from_grid(2, 2, vec![-200.0; 4], vec![true; 4]);
    assert_eq!(build_graph(&map, DEFAULT_EPSILON).unwrap_err(), GraphError::EmptyGraph);
}

fn arb_map() -> impl Strategy<Value = CoverageMap> {
    (2usize..8, 2usize..8).prop_flat_map(|(c, r)| {
        (
            proptest::collection::vec(-120.0f32..0.0, c * r),
            proptest::collection::vec(proptest::bool::weighted(0.2), c * r),
        )
            .prop_map(move |(v, mut b)| {
                b[0] = false;
                CoverageMap::from_grid(c, r, v, b)
            })
    })
}

proptest! {
    #[test]
    fn adjacency_is_symmetric(map in arb_map()) {
        let g = build_graph(&map, DEFAULT_EPSILON).unwrap();
        for i in 0..map.cols * map.rows {
            let u = g.cell(i);
            if !g.is_node(u) {
                continue;
            }
            for v in g.neighbors(u) {
                prop_assert!(g.is_node(u) && g.is_node(v) && u.is_adjacent(v));
                prop_assert!(g.neighbors(v).any(|w| w == u));
                let cost = g.edge_cost(u, v).unwrap();
                prop_assert!(cost > 0.0 && cost.is_finite());
            }
        }
        prop_assert_eq!(g.node_count() + g.blocked_count(), map.cols * map.rows);
    }

    #[test]
    fn stronger_head_is_cheaper(a in -130.0f64..10.0, b in -130.0f64..10.0) {
        prop_assume!((a - b).abs() > 1e-6);
        let map = CoverageMap::from_grid(3, 1, vec![-50.0, a as f32, b as f32], vec![false; 3]);
        let g = build_graph(&map, DEFAULT_EPSILON).unwrap();
        let (u, v1, v2) = (CellId::new(0, 0), CellId::new(1, 0), CellId::new(2, 0));
        prop_assume!((a as f32) != (b as f32));
        let (c1, c2) = (g.head_cost(v1), g.head_cost(v2));
        prop_assert_eq!(dbm_to_linear(f64::from(a as f32)) > dbm_to_linear(f64::from(b as f32)), c1 < c2);
        prop_assert_eq!(g.edge_cost(u, v1).unwrap(), c1);
    }
}
