//! Undirected oriented network graphs and their incidence structure.
//!
//! Every edge carries an orientation `(head, tail)`: the head is the
//! positive end of the edge and the tail the negative end, so column `k` of
//! the incidence matrix `B` has `+1` in the head row and `−1` in the tail
//! row. Orientation fixes the sign of the flow variable on the edge; the
//! underlying graph is undirected.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Minimum eigenvalue of `B_aᵀB_a` accepted as "full column rank".
///
/// Incidence entries are integers, so a true rank deficiency produces an
/// exact zero eigenvalue; any strictly positive threshold well above
/// accumulated roundoff works, and 1e-9 leaves seven orders of headroom.
const RANK_TOL: f64 = 1e-9;

/// An immutable undirected graph with oriented edges and incidence matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    b: DMatrix<f64>,
}

impl NetworkGraph {
    /// Number of nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of edges.
    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// Oriented edges as 0-based `(head, tail)` pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// The n×m incidence matrix: `+1` at each edge's head, `−1` at its tail.
    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Per-node adjacency (ignoring orientation), used for graph search.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(h, t) in &self.edges {
            adj[h].push(t);
            adj[t].push(h);
        }
        adj
    }

    /// True iff the underlying undirected graph is connected.
    ///
    /// A single node with no edges counts as connected.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == self.n
    }
}

/// Construct a graph from 1-based oriented edge pairs.
///
/// `edges[k] = (head, tail)` declares node `head` the positive end of edge
/// `k`. Self-loops and out-of-range endpoints are rejected.
pub fn build_graph(n: usize, edges: &[(usize, usize)]) -> Result<NetworkGraph> {
    if n == 0 {
        return Err(Error::invalid("a graph needs at least one node"));
    }
    let mut zero_based = Vec::with_capacity(edges.len());
    for (k, &(head, tail)) in edges.iter().enumerate() {
        if head == 0 || head > n || tail == 0 || tail > n {
            return Err(Error::invalid(format!(
                "edge {} endpoint out of range: ({head}, {tail}) with {n} nodes (1-based)",
                k + 1
            )));
        }
        if head == tail {
            return Err(Error::invalid(format!(
                "edge {} is a self-loop at node {head}",
                k + 1
            )));
        }
        zero_based.push((head - 1, tail - 1));
    }
    let mut b = DMatrix::<f64>::zeros(n, zero_based.len());
    for (k, &(h, t)) in zero_based.iter().enumerate() {
        b[(h, k)] = 1.0;
        b[(t, k)] = -1.0;
    }
    Ok(NetworkGraph {
        n,
        edges: zero_based,
        b,
    })
}

/// A split of the edge set into a spanning-tree part and the redundant rest.
///
/// `B_a` (columns `a_indices`) has full column rank `n − 1`; the remaining
/// columns `B_b` close cycles and receive static controllers downstream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgePartition {
    /// Edge indices in the order `a_indices ++ b_indices`.
    pub perm: Vec<usize>,
    /// The n−1 spanning-tree edge indices (0-based, ascending).
    pub a_indices: Vec<usize>,
    /// The remaining m−n+1 cycle-closing edge indices (0-based, ascending).
    pub b_indices: Vec<usize>,
}

/// Select a deterministic spanning tree and partition the edges around it.
///
/// Edges are scanned in input order and greedily kept whenever they join two
/// components not yet connected (union-find). The scan keeps the first
/// spanning tree the input order admits, so when the input lists a tree in
/// its first `n − 1` edges those columns become `B_a` — the conventional
/// "first n−1 columns are independent" arrangement.
///
/// Errors if the graph is disconnected (the synthesis requires connectivity)
/// and double-checks the resulting `B_aᵀB_a` is positive definite.
pub fn partition_edges(g: &NetworkGraph) -> Result<EdgePartition> {
    if !g.is_connected() {
        return Err(Error::assumption(
            "the network graph must be connected; synthesis has no solution on a disconnected graph",
        ));
    }
    let mut parent: Vec<usize> = (0..g.n()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut a_indices = Vec::with_capacity(g.n().saturating_sub(1));
    let mut b_indices = Vec::new();
    for (k, &(h, t)) in g.edges().iter().enumerate() {
        let (rh, rt) = (find(&mut parent, h), find(&mut parent, t));
        if rh != rt {
            parent[rh] = rt;
            a_indices.push(k);
        } else {
            b_indices.push(k);
        }
    }
    debug_assert_eq!(a_indices.len(), g.n() - 1);

    let ba = g.incidence().select_columns(&a_indices);
    let gram = ba.transpose() * &ba;
    let min_eig = gram
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    // Spanning-tree columns of an incidence matrix are independent by
    // construction; a failure here indicates a broken invariant, not bad input.
    if g.n() > 1 && !(min_eig > RANK_TOL) {
        return Err(Error::numeric(
            format!("edge partition lost rank: min eig(B_aᵀB_a) = {min_eig:.3e}"),
            None,
        ));
    }
    let mut perm = a_indices.clone();
    perm.extend_from_slice(&b_indices);
    Ok(EdgePartition {
        perm,
        a_indices,
        b_indices,
    })
}
