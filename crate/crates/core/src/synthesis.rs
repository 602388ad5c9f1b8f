//! Steady-state synthesis: the feedforward flows that nullify all relative
//! measurements, the common reference trajectory, and the projection basis.
//!
//! For the linear network `ẋ = Bλ + P_eff w` a flow profile `λʷ(t) = M w(t)`
//! keeps the state on the consensus line iff `B M = Y P_eff` with
//! `Y = 1 1ᵀ/n − I`. The system is solvable for every connected graph
//! because `Y P_eff` maps into `1⊥ = range(B)`; setting the cycle-edge flows
//! to zero and solving on the spanning tree gives the particular solution
//! used throughout: `M_a = (B_aᵀB_a)⁻¹ B_aᵀ Y P_eff`, zero rows elsewhere.
//! With nonlinear node dynamics the same elimination yields two maps: `M₁`
//! applied to `f(x*1)` and `M₂` applied to `w` (`M₂` coincides with `M`).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exosystem::Exosystem;
use crate::graph::{EdgePartition, NetworkGraph};
use crate::plant::NodeDynamics;

/// Accepted sup-norm residual of `B M − Y P_eff` (exact in theory).
const RESIDUAL_TOL: f64 = 1e-10;

/// State-magnitude bound treated as numeric escape in reference integration.
const OVERFLOW_GUARD: f64 = 1e9;

/// The linear steady-state objects for one graph and disturbance map.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// Projection onto the balanced directions: `Y = 1 1ᵀ/n − I`.
    pub y: DMatrix<f64>,
    /// Feedforward matrix (m×p): `λʷ = M w`, rows at cycle edges zero.
    pub m: DMatrix<f64>,
    /// The edge partition the elimination was performed on.
    pub partition: EdgePartition,
    /// Effective disturbance map `P_eff = P Γ` the synthesis was run against.
    pub p_eff: DMatrix<f64>,
    /// Achieved sup-norm residual of `B M − Y P_eff`.
    pub residual: f64,
}

/// Nonlinear-node steady-state maps.
#[derive(Debug, Clone)]
pub struct NonlinearSteadyState {
    /// m×n map applied to the node drift at consensus, `M₁ f(x*1)`.
    pub m1: DMatrix<f64>,
    /// m×p map applied to the exosystem state, `M₂ w` (equals the linear `M`).
    pub m2: DMatrix<f64>,
    pub partition: EdgePartition,
    pub p_eff: DMatrix<f64>,
}

fn y_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        let avg = 1.0 / n as f64;
        if i == j {
            avg - 1.0
        } else {
            avg
        }
    })
}

/// Factorization of the spanning-tree normal equations, reused per column.
fn tree_solver(
    g: &NetworkGraph,
    part: &EdgePartition,
) -> Result<(DMatrix<f64>, Cholesky<f64, nalgebra::Dyn>)> {
    let ba = g.incidence().select_columns(&part.a_indices);
    let gram = ba.transpose() * &ba;
    let chol = Cholesky::new(gram).ok_or_else(|| {
        Error::numeric(
            "B_aᵀB_a is not positive definite; edge partition is broken",
            None,
        )
    })?;
    Ok((ba, chol))
}

/// Scatter a solved (n−1)×p tree block into full m×p form; cycle-edge rows
/// are never written and stay exactly zero.
fn scatter_rows(m_a: &DMatrix<f64>, part: &EdgePartition, m_edges: usize) -> DMatrix<f64> {
    let p = m_a.ncols();
    let mut full = DMatrix::zeros(m_edges, p);
    for (slot, &edge) in part.a_indices.iter().enumerate() {
        for j in 0..p {
            full[(edge, j)] = m_a[(slot, j)];
        }
    }
    full
}

/// Compute `Y` and the feedforward matrix `M` for a connected graph.
///
/// `p_eff` is the effective disturbance map `P Γ` (n×p). The defining
/// identity `B M = Y P_eff` is re-checked column-wise and its sup-norm
/// residual stored; exceeding the tolerance indicates a broken partition
/// rather than an unsolvable problem, hence a numeric error.
pub fn compute_m(
    g: &NetworkGraph,
    part: &EdgePartition,
    p_eff: &DMatrix<f64>,
) -> Result<SteadyState> {
    if p_eff.nrows() != g.n() {
        return Err(Error::invalid(format!(
            "disturbance map has {} rows, graph has {} nodes",
            p_eff.nrows(),
            g.n()
        )));
    }
    let y = y_matrix(g.n());
    let rhs = &y * p_eff;
    let (ba, chol) = tree_solver(g, part)?;
    let m_a = chol.solve(&(ba.transpose() * &rhs));
    let m = scatter_rows(&m_a, part, g.m());
    let residual = (g.incidence() * &m - &rhs).abs().max();
    if residual > RESIDUAL_TOL {
        return Err(Error::numeric(
            format!("feedforward residual {residual:.3e} exceeds {RESIDUAL_TOL:.0e}"),
            None,
        ));
    }
    Ok(SteadyState {
        y,
        m,
        partition: part.clone(),
        p_eff: p_eff.clone(),
        residual,
    })
}

/// Compute the nonlinear-case maps `M₁` (drift) and `M₂` (disturbance).
///
/// Substituting `x = x*1` into the node dynamics and eliminating on the
/// spanning tree gives `B λʷ = Y f(x*1) + Y P_eff w`; the sign of the
/// disturbance term is fixed by consistency with the linear case (`f ≡ 0`
/// must reduce to `M`), and the identity is re-validated by residual.
pub fn compute_m_nonlinear(
    g: &NetworkGraph,
    part: &EdgePartition,
    p_eff: &DMatrix<f64>,
) -> Result<NonlinearSteadyState> {
    let linear = compute_m(g, part, p_eff)?;
    let (ba, chol) = tree_solver(g, part)?;
    let m1_a = chol.solve(&(ba.transpose() * &linear.y));
    let m1 = scatter_rows(&m1_a, part, g.m());
    Ok(NonlinearSteadyState {
        m1,
        m2: linear.m,
        partition: linear.partition,
        p_eff: p_eff.clone(),
    })
}

/// A sample of the reference objects at one time.
#[derive(Debug, Clone)]
pub struct RefSample {
    /// Common node reference `x*ʷ(t)`.
    pub x_star: f64,
    /// Steady-state flows `λʷ(t) = M w(t)`.
    pub lambda_w: DVector<f64>,
    /// Cumulative imbalance `∫₀ᵗ 1ᵀ P_eff w(s)/n ds`.
    pub imbalance: f64,
}

/// Closed-form reference trajectory of the regulated network.
///
/// All node states converge (up to a common constant) to
/// `x*ʷ(t) = x*ʷ(0) + ∫₀ᵗ 1ᵀ P_eff w/n ds` — the running net inflow per
/// node — while the steady flows follow `λʷ(t) = M w(t)`.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    pub x_star0: f64,
    m: DMatrix<f64>,
    /// `1ᵀ P_eff / n`, the per-node net-inflow row.
    imbalance_row: DVector<f64>,
    exo: Exosystem,
}

impl ReferenceTrajectory {
    /// Evaluate the reference at time `t` (closed form, any `t ≥ 0`).
    pub fn sample(&self, t: f64) -> RefSample {
        let (w, _) = self.exo.evaluate(t);
        let imbalance = self.imbalance_row.dot(&self.exo.integral_w(t));
        RefSample {
            x_star: self.x_star0 + imbalance,
            lambda_w: &self.m * &w,
            imbalance,
        }
    }

    /// The cumulative imbalance alone (used by the trajectory recorder).
    pub fn imbalance(&self, t: f64) -> f64 {
        self.imbalance_row.dot(&self.exo.integral_w(t))
    }
}

/// Build the closed-form reference for a synthesized steady state.
pub fn reference(
    g: &NetworkGraph,
    ss: &SteadyState,
    e: &Exosystem,
    x_star0: f64,
) -> ReferenceTrajectory {
    let n = g.n() as f64;
    let imbalance_row = DVector::from_fn(e.p(), |j, _| ss.p_eff.column(j).sum() / n);
    ReferenceTrajectory {
        x_star0,
        m: ss.m.clone(),
        imbalance_row,
        exo: e.clone(),
    }
}

/// RK4 samples of the scalar nonlinear reference equation
/// `ẋ* = 1ᵀ f(x*1)/n + 1ᵀ P_eff w/n`.
#[derive(Debug, Clone)]
pub struct XStarPath {
    pub step: f64,
    /// Samples at `t = k·step`, `k = 0..=⌈horizon/step⌉`.
    pub values: Vec<f64>,
}

impl XStarPath {
    pub fn at(&self, k: usize) -> f64 {
        self.values[k]
    }
}

/// Integrate the scalar reference ODE over `[0, horizon]`.
///
/// Errors with the escape time if the solution leaves `|x*| ≤ 1e9` or turns
/// non-finite — the nonlinear design requires the reference to exist for
/// all time, so unboundedness disqualifies the scenario.
pub fn integrate_x_star(
    dynamics: &NodeDynamics,
    e: &Exosystem,
    p_eff: &DMatrix<f64>,
    x_star0: f64,
    horizon: f64,
    step: f64,
) -> Result<XStarPath> {
    if !(step > 0.0) || !(horizon >= step) {
        return Err(Error::invalid(format!(
            "need 0 < step ≤ horizon, got step {step}, horizon {horizon}"
        )));
    }
    let n = p_eff.nrows();
    let nf = n as f64;
    let imbalance_row = DVector::from_fn(e.p(), |j, _| p_eff.column(j).sum() / nf);
    let mut w = DVector::zeros(e.p());
    let drift = |t: f64, x: f64, w: &mut DVector<f64>| -> f64 {
        e.write_w(t, w);
        let mean_f = (0..n).map(|i| dynamics.eval_node(i, x)).sum::<f64>() / nf;
        mean_f + imbalance_row.dot(w)
    };
    let steps = (horizon / step).ceil() as usize;
    let mut values = Vec::with_capacity(steps + 1);
    let mut x = x_star0;
    values.push(x);
    for k in 0..steps {
        let t = k as f64 * step;
        let k1 = drift(t, x, &mut w);
        let k2 = drift(t + 0.5 * step, x + 0.5 * step * k1, &mut w);
        let k3 = drift(t + 0.5 * step, x + 0.5 * step * k2, &mut w);
        let k4 = drift(t + step, x + step * k3, &mut w);
        x += step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !x.is_finite() || x.abs() > OVERFLOW_GUARD {
            return Err(Error::numeric(
                "reference trajectory escaped (nonlinear steady state must stay bounded)",
                Some(t + step),
            ));
        }
        values.push(x);
    }
    Ok(XStarPath { step, values })
}

/// Orthonormal basis of `1ₙ⊥` as the rows of an (n−1)×n matrix.
///
/// Helmert construction: row `i` (1-based) is `(1, …, 1, −i, 0, …)/√(i(i+1))`.
/// Satisfies `Q 1 = 0`, `Q Qᵀ = I`, and `QᵀQ = I − 1 1ᵀ/n`.
pub fn build_q(n: usize) -> Result<DMatrix<f64>> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "the balanced complement needs n ≥ 2 nodes, got {n}"
        )));
    }
    Ok(DMatrix::from_fn(n - 1, n, |i, j| {
        let k = (i + 1) as f64;
        let norm = (k * (k + 1.0)).sqrt();
        if j < i + 1 {
            1.0 / norm
        } else if j == i + 1 {
            -k / norm
        } else {
            0.0
        }
    }))
}

/// Whether total demand and supply cancel along the exosystem's motion:
/// `1ᵀ P_eff w(t) ≡ 0` for the trajectory launched from `w(0)`.
///
/// Decided exactly from the block structure instead of by sampling: the
/// trajectory's reachable set is the union of the excited blocks' planes
/// (a rotation mixes its two coordinates, a zero block holds its offset),
/// so the identity holds iff the row `1ᵀ P_eff` vanishes on every excited
/// coordinate. Blocks whose initial state is zero never contribute and are
/// ignored.
pub fn is_balanced(p_eff: &DMatrix<f64>, e: &Exosystem, tol: f64) -> bool {
    if p_eff.ncols() != e.p() {
        return false;
    }
    let row = p_eff.row_sum(); // 1ᵀ P_eff
    let w0 = e.w0();
    e.blocks().iter().all(|block| match *block {
        crate::exosystem::Block::Zero { idx } => w0[idx] == 0.0 || row[idx].abs() <= tol,
        crate::exosystem::Block::Rotation { idx, .. } => {
            (w0[idx] == 0.0 && w0[idx + 1] == 0.0)
                || (row[idx].abs() <= tol && row[idx + 1].abs() <= tol)
        }
    })
}
