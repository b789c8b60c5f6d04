//! Directed communication graphs among followers plus leader pinning links,
//! and the coupling matrices derived from them.
//!
//! Edge convention: `adjacency[(i, j)] = a_ij` is the weight of the edge
//! from node `j` to node `i`, i.e. information flows j -> i.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Directed weighted follower graph with leader pinning gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    n_followers: usize,
    adjacency: DMatrix<f64>,
    leader_gains: DVector<f64>,
}

/// Degree, Laplacian and leader-coupling matrices of a [`Topology`].
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrices {
    pub degree: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
    /// H = L + diag(b_i0); nonsingular whenever the leader reaches all followers.
    pub h_matrix: DMatrix<f64>,
}

/// Validate and build a topology from a follower adjacency matrix and leader gains.
pub fn build_topology(adjacency: DMatrix<f64>, leader_gains: DVector<f64>) -> Result<Topology> {
    let n = adjacency.nrows();
    if adjacency.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "adjacency must be square, got {}x{}",
            adjacency.nrows(),
            adjacency.ncols()
        )));
    }
    if leader_gains.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "leader gains length {} does not match {} followers",
            leader_gains.len(),
            n
        )));
    }
    for i in 0..n {
        if adjacency[(i, i)] != 0.0 {
            return Err(Error::SelfLoop(i));
        }
        for j in 0..n {
            let w = adjacency[(i, j)];
            if w < 0.0 || !w.is_finite() {
                return Err(Error::NegativeWeight { row: i, col: j, value: w });
            }
        }
    }
    for (i, &b) in leader_gains.iter().enumerate() {
        if b < 0.0 || !b.is_finite() {
            return Err(Error::NegativeWeight { row: i, col: i, value: b });
        }
    }
    Ok(Topology { n_followers: n, adjacency, leader_gains })
}

impl Topology {
    pub fn n_followers(&self) -> usize {
        self.n_followers
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn leader_gains(&self) -> &DVector<f64> {
        &self.leader_gains
    }
}

/// Derive degree, Laplacian (L = D - A) and coupling matrix H = L + diag(b).
pub fn coupling(t: &Topology) -> CouplingMatrices {
    let n = t.n_followers;
    let mut degree = DMatrix::zeros(n, n);
    for i in 0..n {
        degree[(i, i)] = t.adjacency.row(i).sum();
    }
    let laplacian = &degree - &t.adjacency;
    let h_matrix = &laplacian + DMatrix::from_diagonal(&t.leader_gains);
    CouplingMatrices { degree, laplacian, h_matrix }
}

/// True iff every follower is reachable from the leader in the augmented
/// digraph (leader node plus edges leader -> i where b_i0 > 0).
pub fn leader_reachable(t: &Topology) -> bool {
    let n = t.n_followers;
    if n == 0 {
        return true;
    }
    let mut visited = vec![false; n];
    let mut queue: Vec<usize> = (0..n).filter(|&i| t.leader_gains[i] > 0.0).collect();
    for &i in &queue {
        visited[i] = true;
    }
    while let Some(j) = queue.pop() {
        // edge j -> i exists when a_ij > 0
        for i in 0..n {
            if !visited[i] && t.adjacency[(i, j)] > 0.0 {
                visited[i] = true;
                queue.push(i);
            }
        }
    }
    visited.iter().all(|&v| v)
}

/// Built-in five-follower topologies, each satisfying leader reachability.
pub const TOPOLOGY_PRESETS: [&str; 3] = ["ring", "two-hub", "chain"];

/// Look up a built-in topology by name.
pub fn topology_preset(name: &str) -> Option<Topology> {
    let n = 5;
    let mut adjacency = DMatrix::zeros(n, n);
    let mut gains = DVector::zeros(n);
    match name {
        // cyclic: each follower listens to its predecessor; leader pins node 0
        "ring" => {
            for i in 0..n {
                adjacency[(i, (i + n - 1) % n)] = 1.0;
            }
            gains[0] = 1.0;
        }
        // leader pins nodes 0 and 2; each hub serves two peripherals
        "two-hub" => {
            adjacency[(1, 0)] = 1.0;
            adjacency[(4, 0)] = 1.0;
            adjacency[(3, 2)] = 1.0;
            adjacency[(4, 2)] = 1.0;
            gains[0] = 1.0;
            gains[2] = 1.0;
        }
        // leader pins node 0; information relayed down the line
        "chain" => {
            for i in 1..n {
                adjacency[(i, i - 1)] = 1.0;
            }
            gains[0] = 1.0;
        }
        _ => return None,
    }
    Some(build_topology(adjacency, gains).expect("preset topologies are valid"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let r = rows.len();
        let c = rows[0].len();
        DMatrix::from_fn(r, c, |i, j| rows[i][j])
    }

    #[test]
    fn empty_follower_graph_gives_identity_h() {
        let t = build_topology(DMatrix::zeros(2, 2), DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let c = coupling(&t);
        assert_eq!(c.laplacian, DMatrix::zeros(2, 2));
        assert_eq!(c.h_matrix, DMatrix::identity(2, 2));
    }

    #[test]
    fn two_node_exchange_hand_computed() {
        let t = build_topology(
            mat(&[&[0.0, 1.0], &[1.0, 0.0]]),
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let c = coupling(&t);
        assert_eq!(c.laplacian, mat(&[&[1.0, -1.0], &[-1.0, 1.0]]));
        assert_eq!(c.h_matrix, mat(&[&[2.0, -1.0], &[-1.0, 1.0]]));
    }

    #[test]
    fn self_loop_rejected() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 0)] = 1.0;
        let err = build_topology(a, DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::SelfLoop(0)));
    }

    #[test]
    fn negative_weight_rejected() {
        let mut a = DMatrix::zeros(2, 2);
        a[(0, 1)] = -0.5;
        let err = build_topology(a, DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::NegativeWeight { .. }));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = build_topology(DMatrix::zeros(2, 3), DVector::zeros(2)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
        let err = build_topology(DMatrix::zeros(2, 2), DVector::zeros(3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn ring_of_three_rows_sum_to_zero() {
        let mut a = DMatrix::zeros(3, 3);
        for i in 0..3 {
            a[(i, (i + 2) % 3)] = 1.0;
        }
        let t = build_topology(a, DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        let c = coupling(&t);
        for i in 0..3 {
            assert!(c.laplacian.row(i).sum().abs() < 1e-15);
        }
        let expected_h = &c.laplacian + DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, 0.0]));
        assert_eq!(c.h_matrix, expected_h);
    }

    #[test]
    fn single_follower_gain_two() {
        let t = build_topology(DMatrix::zeros(1, 1), DVector::from_vec(vec![2.0])).unwrap();
        let c = coupling(&t);
        assert_eq!(c.h_matrix, mat(&[&[2.0]]));
    }

    #[test]
    fn complete_digraph_degree_two() {
        let a = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let t = build_topology(a, DVector::zeros(3)).unwrap();
        let c = coupling(&t);
        for i in 0..3 {
            assert_eq!(c.degree[(i, i)], 2.0);
        }
    }

    #[test]
    fn reachability_direct_links() {
        let t = build_topology(DMatrix::zeros(3, 3), DVector::from_vec(vec![0.3, 1.0, 2.0])).unwrap();
        assert!(leader_reachable(&t));
    }

    #[test]
    fn reachability_chain() {
        let mut a = DMatrix::zeros(3, 3);
        a[(1, 0)] = 1.0;
        a[(2, 1)] = 1.0;
        let t = build_topology(a, DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        assert!(leader_reachable(&t));
    }

    #[test]
    fn unreachable_without_leader_edges() {
        let mut a = DMatrix::zeros(3, 3);
        a[(1, 0)] = 1.0;
        a[(2, 1)] = 1.0;
        let t = build_topology(a, DVector::zeros(3)).unwrap();
        assert!(!leader_reachable(&t));
    }

    #[test]
    fn presets_exist_and_satisfy_reachability() {
        for name in TOPOLOGY_PRESETS {
            let t = topology_preset(name).unwrap();
            assert_eq!(t.n_followers(), 5);
            assert!(leader_reachable(&t), "preset {name} must reach all followers");
            let c = coupling(&t);
            // H must be nonsingular for a reachable topology with 0/1 weights
            assert!(c.h_matrix.determinant().abs() > 1e-9, "preset {name} has singular H");
        }
        assert!(topology_preset("nonexistent").is_none());
    }

    /// Transitive-closure oracle: reachable set via boolean matrix powers.
    fn reachable_oracle(t: &Topology) -> bool {
        let n = t.n_followers();
        if n == 0 {
            return true;
        }
        // augmented (n+1)-node boolean adjacency, node n = leader
        let mut reach = vec![vec![false; n + 1]; n + 1];
        for i in 0..=n {
            reach[i][i] = true;
        }
        for i in 0..n {
            for j in 0..n {
                if t.adjacency()[(i, j)] > 0.0 {
                    reach[j][i] = true; // j -> i
                }
            }
            if t.leader_gains()[i] > 0.0 {
                reach[n][i] = true;
            }
        }
        for _ in 0..=n {
            for a in 0..=n {
                for b in 0..=n {
                    if !reach[a][b] {
                        reach[a][b] = (0..=n).any(|k| reach[a][k] && reach[k][b]);
                    }
                }
            }
        }
        (0..n).all(|i| reach[n][i])
    }

    #[test]
    fn reachability_matches_closure_oracle_exhaustive_small() {
        // all digraphs on 3 nodes with 0/1 weights and 0/1 leader gains
        let n = 3usize;
        let edges: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect();
        for mask in 0u32..(1 << edges.len()) {
            for gmask in 0u32..(1 << n) {
                let mut a = DMatrix::zeros(n, n);
                for (k, &(i, j)) in edges.iter().enumerate() {
                    if mask & (1 << k) != 0 {
                        a[(i, j)] = 1.0;
                    }
                }
                let g = DVector::from_fn(n, |i, _| if gmask & (1 << i) != 0 { 1.0 } else { 0.0 });
                let t = build_topology(a, g).unwrap();
                assert_eq!(leader_reachable(&t), reachable_oracle(&t));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        // weights bounded away from zero when present, so near-singular H
        // cannot arise from vanishing edges
        fn arb_weight() -> impl Strategy<Value = f64> {
            prop_oneof![Just(0.0), 0.5f64..4.0]
        }

        fn arb_topology(max_n: usize) -> impl Strategy<Value = Topology> {
            (1..=max_n).prop_flat_map(|n| {
                let weights = proptest::collection::vec(arb_weight(), n * n);
                let gains = proptest::collection::vec(arb_weight(), n);
                (weights, gains).prop_map(move |(w, g)| {
                    let mut a = DMatrix::from_vec(n, n, w);
                    for i in 0..n {
                        a[(i, i)] = 0.0;
                    }
                    build_topology(a, DVector::from_vec(g)).unwrap()
                })
            })
        }

        proptest! {
            #[test]
            fn laplacian_rows_sum_to_zero(t in arb_topology(6)) {
                let c = coupling(&t);
                for i in 0..t.n_followers() {
                    prop_assert!(c.laplacian.row(i).sum().abs() < 1e-12);
                }
            }

            #[test]
            fn reachability_matches_oracle(t in arb_topology(5)) {
                prop_assert_eq!(leader_reachable(&t), reachable_oracle(&t));
            }

            #[test]
            fn h_nonsingular_when_reachable(t in arb_topology(6)) {
                if leader_reachable(&t) {
                    let c = coupling(&t);
                    prop_assert!(c.h_matrix.determinant().abs() > 1e-9);
                }
            }
        }
    }
}
