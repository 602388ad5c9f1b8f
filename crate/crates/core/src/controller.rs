//! Per-edge regulators: internal-model controllers, static laws for
//! redundant or disturbance-free edges, and the saturated consensus law.
//!
//! A dynamic edge embeds a copy of the exosystem generator,
//!
//! ```text
//! η̇_k = S η_k − H_kᵀ z_k,      λ_k = H_k η_k − K_k z_k,
//! ```
//!
//! with `H_k` the edge's row of the feedforward matrix; on the exosystem's
//! steady motion the copy reproduces `λ_kʷ(t)` exactly while the `−K z`
//! term dissipates transients. Edges whose feedforward row is zero need no
//! internal state and collapse to the static law `λ_k = −K_k z_k`. Every
//! controller reads only its own edge measurement `z_k`, which is what makes
//! the scheme distributed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exosystem::Exosystem;
use crate::plant::NodeDynamics;
use crate::synthesis::{is_balanced, NonlinearSteadyState, SteadyState};

/// Rows with sup-norm at or below this are treated as exactly zero
/// (solver roundoff on structurally zero feedforward entries).
const ZERO_ROW_TOL: f64 = 1e-12;

/// Exact-balance tolerance for the identical-dynamics bank precondition.
const BALANCE_TOL: f64 = 1e-12;

/// The law attached to one edge.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeLaw {
    /// Internal-model controller with output row `h` and initial state `eta0`.
    Dynamic { h: DVector<f64>, eta0: DVector<f64> },
    /// Pure proportional law `λ_k = −K_k z_k`.
    Static,
}

/// One edge's controller assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeController {
    /// Edge index this controller is attached to.
    pub edge: usize,
    pub law: EdgeLaw,
}

/// The full set of `m` edge controllers in stacked form.
///
/// The stacked internal state `η` concatenates the dynamic edges' states in
/// ascending edge order, `p` entries each.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerBank {
    controllers: Vec<EdgeController>,
    /// Shared internal-model generator (the exosystem copy, p×p).
    s: DMatrix<f64>,
    /// Positive diagonal gains, one per edge.
    k: DVector<f64>,
    p: usize,
    /// Edge index of each dynamic slot, ascending.
    dyn_edges: Vec<usize>,
}

impl ControllerBank {
    /// Number of edges.
    pub fn m(&self) -> usize {
        self.controllers.len()
    }

    /// Internal-model state dimension per dynamic edge.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Total stacked internal state dimension.
    pub fn eta_dim(&self) -> usize {
        self.p * self.dyn_edges.len()
    }

    /// Edge index of each dynamic slot, ascending.
    pub fn dynamic_edges(&self) -> &[usize] {
        &self.dyn_edges
    }

    pub fn controllers(&self) -> &[EdgeController] {
        &self.controllers
    }

    /// The shared generator copy.
    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    /// Per-edge gains.
    pub fn gains(&self) -> &DVector<f64> {
        &self.k
    }

    /// Stacked initial internal state.
    pub fn eta0(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.eta_dim());
        for (slot, &edge) in self.dyn_edges.iter().enumerate() {
            if let EdgeLaw::Dynamic { eta0, .. } = &self.controllers[edge].law {
                out.rows_mut(slot * self.p, self.p).copy_from(eta0);
            }
        }
        out
    }

    /// Start every internal model at the exosystem's initial state.
    ///
    /// With `η_k(0) = w(0)` each copy reproduces its feedforward flow
    /// exactly from the first instant (the replication property used by the
    /// reproduction suite).
    pub fn set_eta0_replica(&mut self, e: &Exosystem) -> Result<()> {
        if e.p() != self.p {
            return Err(Error::invalid(format!(
                "exosystem dimension {} does not match bank dimension {}",
                e.p(),
                self.p
            )));
        }
        for ctrl in &mut self.controllers {
            if let EdgeLaw::Dynamic { eta0, .. } = &mut ctrl.law {
                eta0.copy_from(e.w0());
            }
        }
        Ok(())
    }

    /// Advance the bank: `(η̇, λ)` from the stacked state and measurements.
    pub fn step(
        &self,
        eta: &DVector<f64>,
        z: &DVector<f64>,
    ) -> Result<(DVector<f64>, DVector<f64>)> {
        if eta.len() != self.eta_dim() || z.len() != self.m() {
            return Err(Error::invalid(format!(
                "controller step dimension mismatch: eta {}, z {} (expected {}, {})",
                eta.len(),
                z.len(),
                self.eta_dim(),
                self.m()
            )));
        }
        let mut eta_dot = DVector::zeros(self.eta_dim());
        let mut lambda = DVector::zeros(self.m());
        self.step_into(eta, z, &mut eta_dot, &mut lambda);
        Ok((eta_dot, lambda))
    }

    /// Allocation-free variant for the integration hot loop.
    pub(crate) fn step_into(
        &self,
        eta: &DVector<f64>,
        z: &DVector<f64>,
        eta_dot: &mut DVector<f64>,
        lambda: &mut DVector<f64>,
    ) {
        self.lambda_into(eta, z, lambda);
        for (slot, &edge) in self.dyn_edges.iter().enumerate() {
            if let EdgeLaw::Dynamic { h, .. } = &self.controllers[edge].law {
                let eta_k = eta.rows(slot * self.p, self.p);
                let mut dot_k = eta_dot.rows_mut(slot * self.p, self.p);
                // η̇_k = S η_k − Hᵀ z_k
                dot_k.gemv(1.0, &self.s, &eta_k, 0.0);
                dot_k.axpy(-z[edge], h, 1.0);
            }
        }
    }

    /// Flow commands only: `λ_k = H_k η_k − K_k z_k` (static: `−K_k z_k`).
    pub(crate) fn lambda_into(
        &self,
        eta: &DVector<f64>,
        z: &DVector<f64>,
        lambda: &mut DVector<f64>,
    ) {
        for (edge, ctrl) in self.controllers.iter().enumerate() {
            lambda[edge] = -self.k[edge] * z[edge];
            debug_assert_eq!(ctrl.edge, edge);
        }
        for (slot, &edge) in self.dyn_edges.iter().enumerate() {
            if let EdgeLaw::Dynamic { h, .. } = &self.controllers[edge].law {
                lambda[edge] += h.dot(&eta.rows(slot * self.p, self.p));
            }
        }
    }
}

fn validate_gains(k: &DVector<f64>, m: usize) -> Result<()> {
    if k.len() != m {
        return Err(Error::invalid(format!(
            "gain vector has length {}, graph has {} edges",
            k.len(),
            m
        )));
    }
    if let Some(bad) = k.iter().find(|&&g| !(g > 0.0) || !g.is_finite()) {
        return Err(Error::assumption(format!(
            "edge gains must be strictly positive, got {bad}"
        )));
    }
    Ok(())
}

fn bank_from_rows(m_rows: &DMatrix<f64>, s: &DMatrix<f64>, k: DVector<f64>) -> ControllerBank {
    let p = m_rows.ncols();
    let mut controllers = Vec::with_capacity(m_rows.nrows());
    let mut dyn_edges = Vec::new();
    for edge in 0..m_rows.nrows() {
        let row = m_rows.row(edge);
        let law = if row.amax() > ZERO_ROW_TOL {
            dyn_edges.push(edge);
            EdgeLaw::Dynamic {
                h: row.transpose(),
                eta0: DVector::zeros(p),
            }
        } else {
            EdgeLaw::Static
        };
        controllers.push(EdgeController { edge, law });
    }
    ControllerBank {
        controllers,
        s: s.clone(),
        k,
        p,
        dyn_edges,
    }
}

/// Build the edge-controller bank from a linear steady state.
///
/// Every edge with a nonzero feedforward row gets an internal-model
/// controller (`H_k` = that row, internal state starting at zero); zero rows
/// — all cycle edges, and tree edges a zero-disturbance direction leaves
/// unexcited — reduce to the static proportional law. `gains` defaults to
/// the identity, which recovers the plain consensus + internal-model design;
/// other positive diagonals realize the gained output feedback.
pub fn synthesize_bank(
    ss: &SteadyState,
    e: &Exosystem,
    gains: Option<DVector<f64>>,
) -> Result<ControllerBank> {
    if ss.m.ncols() != e.p() {
        return Err(Error::invalid(format!(
            "feedforward matrix has {} columns, exosystem dimension is {}",
            ss.m.ncols(),
            e.p()
        )));
    }
    let m_edges = ss.m.nrows();
    let k = gains.unwrap_or_else(|| DVector::from_element(m_edges, 1.0));
    validate_gains(&k, m_edges)?;
    Ok(bank_from_rows(&ss.m, e.s(), k))
}

/// Build the bank for identical nonlinear node dynamics.
///
/// With identical nodes the drift contribution to the steady flows vanishes
/// (`Y f(x*1) = 0`), so the controllers only need the disturbance map `M₂`.
/// Preconditions enforced here: identical dynamics (non-identical
/// realizations are out of scope) and balanced demand on the exosystem's
/// reachable motion (`1ᵀ P_eff w(t) ≡ 0`), which the nonlinear convergence
/// argument requires.
pub fn corollary1_bank(
    nss: &NonlinearSteadyState,
    e: &Exosystem,
    dynamics: &NodeDynamics,
    gains: Option<DVector<f64>>,
) -> Result<ControllerBank> {
    if nss.m2.ncols() != e.p() {
        return Err(Error::invalid(format!(
            "feedforward matrix has {} columns, exosystem dimension is {}",
            nss.m2.ncols(),
            e.p()
        )));
    }
    if !dynamics.is_identical() {
        return Err(Error::assumption(
            "the identical-dynamics bank requires the same drift function on every node",
        ));
    }
    if !is_balanced(&nss.p_eff, e, BALANCE_TOL) {
        return Err(Error::assumption(
            "demand/supply must be balanced (1ᵀ P_eff w(t) ≡ 0) for the nonlinear design",
        ));
    }
    let m_edges = nss.m2.nrows();
    let k = gains.unwrap_or_else(|| DVector::from_element(m_edges, 1.0));
    validate_gains(&k, m_edges)?;
    Ok(bank_from_rows(&nss.m2, e.s(), k))
}

/// The saturated consensus law `λ = −μ(Bᵀx) + M ŵ(t)`, where
/// `μ_k(s) = (c/4)·tanh(γ s)` and `ŵ(t) = w(t) + e₀·e^{−ρt}` models an
/// exosystem estimate whose error decays at a known rate.
///
/// The `μ` range `(−c/4, c/4)` plus the feasibility margin on `‖M w‖_∞`
/// guarantee the commanded flow leaves saturation after a finite transient.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturationController {
    /// Edge capacity.
    pub c: f64,
    /// Slope gain of `μ`.
    pub gamma: f64,
    /// Feedforward matrix (m×p).
    pub m: DMatrix<f64>,
    /// Initial estimator error.
    pub e0: DVector<f64>,
    /// Estimator error decay rate.
    pub rho: f64,
}

impl SaturationController {
    pub fn new(c: f64, gamma: f64, m: DMatrix<f64>, e0: DVector<f64>, rho: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::invalid(format!(
                "capacity must be positive, got {c}"
            )));
        }
        if !(gamma > 0.0) {
            return Err(Error::invalid(format!(
                "mu gain must be positive, got {gamma}"
            )));
        }
        if !(rho > 0.0) {
            return Err(Error::invalid(format!(
                "estimator decay rate must be positive, got {rho}"
            )));
        }
        if e0.len() != m.ncols() {
            return Err(Error::invalid(format!(
                "estimator error has length {}, feedforward expects {}",
                e0.len(),
                m.ncols()
            )));
        }
        Ok(SaturationController {
            c,
            gamma,
            m,
            e0,
            rho,
        })
    }

    /// The monotone flow-shaping map, range strictly inside `[−c/4, c/4]`.
    pub fn mu(&self, s: f64) -> f64 {
        0.25 * self.c * (self.gamma * s).tanh()
    }

    /// Commanded flows at time `t` given measurements `z = Bᵀx`.
    pub fn law(&self, z: &DVector<f64>, t: f64, e: &Exosystem) -> Result<DVector<f64>> {
        if z.len() != self.m.nrows() || e.p() != self.m.ncols() {
            return Err(Error::invalid(format!(
                "saturation law dimension mismatch: z {}, p {} (expected {}, {})",
                z.len(),
                e.p(),
                self.m.nrows(),
                self.m.ncols()
            )));
        }
        let mut w_hat = DVector::zeros(e.p());
        let mut lambda = DVector::zeros(self.m.nrows());
        self.law_into(z, t, e, &mut w_hat, &mut lambda);
        Ok(lambda)
    }

    /// Allocation-free variant for the integration hot loop.
    pub(crate) fn law_into(
        &self,
        z: &DVector<f64>,
        t: f64,
        e: &Exosystem,
        w_hat: &mut DVector<f64>,
        lambda: &mut DVector<f64>,
    ) {
        e.write_w(t, w_hat);
        w_hat.axpy((-self.rho * t).exp(), &self.e0, 1.0);
        for k in 0..lambda.len() {
            lambda[k] = -self.mu(z[k]);
        }
        if self.m.ncols() > 0 {
            lambda.gemv(1.0, &self.m, w_hat, 1.0);
        }
    }

    /// Verify `sup_t ‖M w(t)‖_∞ < c` by dense sampling over the horizon.
    ///
    /// The steady flows must fit inside the capacity with room for the `μ`
    /// band, otherwise regulation under saturation is impossible; scenarios
    /// failing the bound are rejected before any integration. Returns the
    /// sampled supremum.
    pub fn feasibility(&self, e: &Exosystem, horizon: f64) -> Result<f64> {
        let samples = 2000;
        let mut sup = 0.0f64;
        let mut w = DVector::zeros(e.p());
        let mut mw = DVector::zeros(self.m.nrows());
        for i in 0..=samples {
            let t = horizon * i as f64 / samples as f64;
            e.write_w(t, &mut w);
            if self.m.ncols() > 0 {
                mw.gemv(1.0, &self.m, &w, 0.0);
            }
            sup = sup.max(mw.amax());
        }
        if !(sup < self.c) {
            return Err(Error::assumption(format!(
                "infeasible saturation scenario: sup‖M w‖_∞ = {sup:.6} does not leave capacity room below c = {}",
                self.c
            )));
        }
        Ok(sup)
    }
}
