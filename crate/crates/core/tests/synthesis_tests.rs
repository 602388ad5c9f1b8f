use flowbal::exosystem::{build_structured, Harmonic, SignalSpec};
use flowbal::graph::{build_graph, partition_edges, NetworkGraph};
use flowbal::plant::{NodeDynamics, NodeFn};
use flowbal::synthesis::{
    build_q, compute_m, compute_m_nonlinear, integrate_x_star, is_balanced, reference,
};
use flowbal::Error;
use nalgebra::{DMatrix, DVector};

fn triangle() -> NetworkGraph {
    build_graph(3, &[(2, 1), (3, 2), (1, 3)]).unwrap()
}

fn spec(offset: f64, harmonics: &[(f64, f64, f64)]) -> SignalSpec {
    SignalSpec {
        offset,
        harmonics: harmonics
            .iter()
            .map(|&(amp, omega, phase)| Harmonic { amp, omega, phase })
            .collect(),
    }
}

#[test]
fn feedforward_matches_hand_solution_on_the_triangle() {
    let g = triangle();
    let part = partition_edges(&g).unwrap();
    let p = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
    let ss = compute_m(&g, &part, &p).unwrap();
    let expected = DMatrix::from_row_slice(
        3,
        2,
        &[2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, -1.0 / 3.0, 0.0, 0.0],
    );
    assert!((ss.m - expected).abs().max() < 1e-12);
    assert!(ss.residual <= 1e-10);
}

#[test]
fn cycle_edge_rows_are_exactly_zero() {
    let g = triangle();
    let part = partition_edges(&g).unwrap();
    let p = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, -1.0, 0.2, 0.9]);
    let ss = compute_m(&g, &part, &p).unwrap();
    for &k in &part.b_indices {
        assert_eq!(
            ss.m.row(k).amax(),
            0.0,
            "edge {k} should carry no feedforward"
        );
    }
}

#[test]
fn defining_identity_holds_on_a_meshed_graph() {
    // 5 nodes, spanning tree plus two chords.
    let g = build_graph(5, &[(2, 1), (3, 1), (4, 2), (5, 4), (3, 5), (1, 4)]).unwrap();
    let part = partition_edges(&g).unwrap();
    let p = DMatrix::from_row_slice(
        5,
        3,
        &[
            1.7, -0.4, 0.0, -2.1, 0.9, 1.3, 0.5, 0.5, -0.8, 0.0, -1.6, 0.2, 1.1, 0.3, -0.7,
        ],
    );
    let ss = compute_m(&g, &part, &p).unwrap();
    let residual = (g.incidence() * &ss.m - &ss.y * &p).abs().max();
    assert!(residual <= 1e-10, "residual {residual:e}");
    // Y is the projection onto balanced directions.
    let n = 5.0;
    for i in 0..5 {
        for j in 0..5 {
            let expected = 1.0 / n - if i == j { 1.0 } else { 0.0 };
            assert!((ss.y[(i, j)] - expected).abs() < 1e-15);
        }
    }
}

#[test]
fn tree_elimination_matches_the_pseudo_inverse_on_trees() {
    // On a tree, B has full column rank, so M = B⁺ Y P_eff is the unique
    // solution; the Cholesky elimination must agree with it.
    let g = build_graph(4, &[(2, 1), (3, 2), (4, 2)]).unwrap();
    let part = partition_edges(&g).unwrap();
    let p = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, -0.6, 1.2, 0.9, -2.0, -1.3, 0.5]);
    let ss = compute_m(&g, &part, &p).unwrap();
    let rhs = &ss.y * &p;
    let pinv_m = g
        .incidence()
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .unwrap();
    assert!((ss.m - pinv_m).abs().max() <= 1e-10);
}

#[test]
fn rejects_mismatched_disturbance_map() {
    let g = triangle();
    let part = partition_edges(&g).unwrap();
    let p = DMatrix::zeros(4, 2);
    assert!(matches!(
        compute_m(&g, &part, &p),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn nonlinear_maps_extend_the_linear_solution() {
    let g = triangle();
    let part = partition_edges(&g).unwrap();
    let p = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
    let linear = compute_m(&g, &part, &p).unwrap();
    let nss = compute_m_nonlinear(&g, &part, &p).unwrap();
    // The disturbance map is unchanged by node drifts.
    assert_eq!(nss.m2, linear.m);
    // The drift map solves B M₁ = Y, with cycle rows zero.
    let residual = (g.incidence() * &nss.m1 - &linear.y).abs().max();
    assert!(residual <= 1e-10, "residual {residual:e}");
    for &k in &part.b_indices {
        assert_eq!(nss.m1.row(k).amax(), 0.0);
    }
}

#[test]
fn balanced_complement_basis_properties() {
    for n in 2..=7 {
        let q = build_q(n).unwrap();
        assert_eq!((q.nrows(), q.ncols()), (n - 1, n));
        let ones = DVector::from_element(n, 1.0);
        assert!((&q * &ones).amax() < 1e-12, "Q·1 ≠ 0 at n = {n}");
        let qqt = &q * q.transpose();
        assert!((qqt - DMatrix::identity(n - 1, n - 1)).abs().max() < 1e-12);
        let qtq = q.transpose() * &q;
        for i in 0..n {
            for j in 0..n {
                let expected = if i == j {
                    1.0 - 1.0 / n as f64
                } else {
                    -1.0 / n as f64
                };
                assert!((qtq[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }
    assert!(matches!(build_q(1), Err(Error::InvalidInput(_))));
}

#[test]
fn balance_is_decided_per_excited_block() {
    // Balanced column: inflow at node 1 exactly matches outflow at node 2.
    let balanced_col = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 0.0]);
    let harmonic = build_structured(&[spec(0.0, &[(1.0, 1.0, 0.0)])], false).unwrap();
    assert!(is_balanced(
        &(&balanced_col * harmonic.gamma()),
        &harmonic,
        1e-12
    ));

    // Net inflow on an excited constant mode: unbalanced.
    let lopsided = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
    let offset = build_structured(&[spec(2.0, &[])], false).unwrap();
    assert!(!is_balanced(&lopsided, &offset, 1e-12));
    assert!(!is_balanced(
        &(&lopsided * harmonic.gamma()),
        &harmonic,
        1e-12
    ));

    // A harmonic whose initial state is zero never injects anything, so a
    // nonzero row on that block does not break balance.
    let silent = flowbal::exosystem::build_raw(
        &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
        &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        &DVector::zeros(2),
    )
    .unwrap();
    let p_eff = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    assert!(is_balanced(&p_eff, &silent, 1e-12));

    // Dimension mismatch is simply "not balanced".
    assert!(!is_balanced(&lopsided, &harmonic, 1e-12));
}

#[test]
fn reference_trajectory_follows_the_cumulative_imbalance() {
    // Channel 1: 2 + sin t into node 1, drawn from node 2; channel 2: the
    // same base level feeding node 1 only — net inflow 1ᵀP_eff w = sin t.
    let g = triangle();
    let part = partition_edges(&g).unwrap();
    let e = build_structured(&[spec(2.0, &[(1.0, 1.0, 0.0)]), spec(2.0, &[])], true).unwrap();
    assert_eq!(e.p(), 3);
    let p = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
    let p_eff = &p * e.gamma();
    let ss = compute_m(&g, &part, &p_eff).unwrap();
    let r = reference(&g, &ss, &e, 0.5);
    for &t in &[0.0, 0.9, 3.2, 10.0] {
        let sample = r.sample(t);
        let expected_imb = (1.0 - t.cos()) / 3.0;
        assert!((sample.imbalance - expected_imb).abs() < 1e-12, "t = {t}");
        assert!((sample.x_star - (0.5 + expected_imb)).abs() < 1e-12);
        let (w, _) = e.evaluate(t);
        assert!((&sample.lambda_w - &ss.m * &w).amax() < 1e-13);
        assert!((r.imbalance(t) - expected_imb).abs() < 1e-12);
    }
}

#[test]
fn scalar_reference_matches_closed_form_for_storage_nodes() {
    // With no node drift, ẋ* = 1ᵀP_eff w / n integrates to (1 − cos t)/3.
    let e = build_structured(&[spec(2.0, &[(1.0, 1.0, 0.0)]), spec(2.0, &[])], true).unwrap();
    let p = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
    let p_eff = &p * e.gamma();
    let path = integrate_x_star(&NodeDynamics::Linear, &e, &p_eff, 0.0, 10.0, 1e-3).unwrap();
    assert_eq!(path.values.len(), 10_001);
    for k in [0usize, 1000, 5000, 10000] {
        let t = k as f64 * path.step;
        assert!(
            (path.at(k) - (1.0 - t.cos()) / 3.0).abs() < 1e-10,
            "k = {k}"
        );
    }
}

#[test]
fn scalar_reference_escape_is_reported_with_a_time() {
    // A bounded drift against a huge constant inflow grows linearly and
    // crosses the overflow guard around t = 10.
    let e = build_structured(&[spec(1.0, &[])], false).unwrap();
    let p_eff = DMatrix::from_row_slice(1, 1, &[1e8]);
    let dynamics = NodeDynamics::Gradient(vec![NodeFn::NegTanh { k: 1.0 }]);
    match integrate_x_star(&dynamics, &e, &p_eff, 0.0, 20.0, 0.01) {
        Err(Error::NumericFailure { what, time }) => {
            assert!(what.contains("escaped"), "{what}");
            let t = time.expect("escape should carry a time");
            assert!((9.0..11.0).contains(&t), "escape time {t}");
        }
        other => panic!("expected an escape failure, got {other:?}"),
    }
}

#[test]
fn scalar_reference_rejects_bad_steps() {
    let e = build_structured(&[spec(1.0, &[])], false).unwrap();
    let p_eff = DMatrix::from_row_slice(1, 1, &[1.0]);
    assert!(matches!(
        integrate_x_star(&NodeDynamics::Linear, &e, &p_eff, 0.0, 1.0, 0.0),
        Err(Error::InvalidInput(_))
    ));
    assert!(matches!(
        integrate_x_star(&NodeDynamics::Linear, &e, &p_eff, 0.0, 0.5, 1.0),
        Err(Error::InvalidInput(_))
    ));
}
