use flowbal::graph::{build_graph, partition_edges};
use flowbal::Error;
use proptest::prelude::*;

/// The three-node cycle used across the fixed tests: edges (2,1), (3,2), (1,3).
fn triangle() -> flowbal::graph::NetworkGraph {
    build_graph(3, &[(2, 1), (3, 2), (1, 3)]).unwrap()
}

#[test]
fn incidence_signs_follow_edge_orientation() {
    let g = triangle();
    assert_eq!((g.n(), g.m()), (3, 3));
    let b = g.incidence();
    // Column k carries +1 at the head and −1 at the tail.
    let expected = [[-1.0, 0.0, 1.0], [1.0, -1.0, 0.0], [0.0, 1.0, -1.0]];
    for i in 0..3 {
        for k in 0..3 {
            assert_eq!(b[(i, k)], expected[i][k], "entry ({i},{k})");
        }
    }
    // Edges are exposed 0-based.
    assert_eq!(g.edges(), &[(1, 0), (2, 1), (0, 2)]);
}

#[test]
fn single_node_graph_is_connected_and_edgeless() {
    let g = build_graph(1, &[]).unwrap();
    assert!(g.is_connected());
    assert_eq!(g.m(), 0);
}

#[test]
fn two_disconnected_pairs_are_detected() {
    let g = build_graph(4, &[(1, 2), (3, 4)]).unwrap();
    assert!(!g.is_connected());
    match partition_edges(&g) {
        Err(Error::AssumptionViolated(msg)) => assert!(msg.contains("connected"), "{msg}"),
        other => panic!("expected a connectivity error, got {other:?}"),
    }
}

#[test]
fn rejects_self_loops_and_out_of_range_nodes() {
    assert!(matches!(
        build_graph(3, &[(1, 1)]),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        build_graph(3, &[(1, 4)]),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        build_graph(3, &[(0, 2)]),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn triangle_partition_keeps_first_two_edges_as_tree() {
    let part = partition_edges(&triangle()).unwrap();
    assert_eq!(part.a_indices, vec![0, 1]);
    assert_eq!(part.b_indices, vec![2]);
    assert_eq!(part.perm, vec![0, 1, 2]);
}

#[test]
fn parallel_edges_land_in_the_cycle_part() {
    // Two copies of the same physical link: the second is redundant.
    let g = build_graph(2, &[(1, 2), (2, 1)]).unwrap();
    let part = partition_edges(&g).unwrap();
    assert_eq!(part.a_indices, vec![0]);
    assert_eq!(part.b_indices, vec![1]);
}

/// Strategy: a connected graph given as a random attachment tree plus a few
/// random extra pairs (duplicates allowed — they become cycle edges).
fn connected_graph_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..=7)
        .prop_flat_map(|n| {
            let tree = proptest::collection::vec(0usize..1_000_000, n - 1);
            let extras = proptest::collection::vec((1usize..=7, 1usize..=7), 0..4);
            (Just(n), tree, extras)
        })
        .prop_map(|(n, attach, extras)| {
            let mut edges: Vec<(usize, usize)> =
                (1..n).map(|i| (i + 1, attach[i - 1] % i + 1)).collect();
            for (a, b) in extras {
                let (a, b) = (a % n + 1, b % n + 1);
                if a != b {
                    edges.push((a, b));
                }
            }
            (n, edges)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn incidence_columns_sum_to_zero((n, edges) in connected_graph_strategy()) {
        let g = build_graph(n, &edges).unwrap();
        for k in 0..g.m() {
            prop_assert_eq!(g.incidence().column(k).sum(), 0.0);
        }
    }

    #[test]
    fn partition_always_yields_a_spanning_tree((n, edges) in connected_graph_strategy()) {
        let g = build_graph(n, &edges).unwrap();
        let part = partition_edges(&g).unwrap();
        prop_assert_eq!(part.a_indices.len(), n - 1);
        prop_assert_eq!(part.a_indices.len() + part.b_indices.len(), g.m());
        // Disjoint and jointly exhaustive.
        let mut seen = vec![false; g.m()];
        for &k in part.a_indices.iter().chain(&part.b_indices) {
            prop_assert!(!seen[k]);
            seen[k] = true;
        }
        prop_assert!(seen.iter().all(|&s| s));
        // The tree columns alone span a connected graph on all nodes.
        let tree_edges: Vec<(usize, usize)> = part
            .a_indices
            .iter()
            .map(|&k| {
                let (h, t) = g.edges()[k];
                (h + 1, t + 1)
            })
            .collect();
        let tree = build_graph(n, &tree_edges).unwrap();
        prop_assert!(tree.is_connected());
    }
}
