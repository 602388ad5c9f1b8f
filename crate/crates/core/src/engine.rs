//! Closed-loop integration and the numeric certificates extracted from runs.
//!
//! The engine advances the interconnection of plant, exosystem, and edge
//! controllers with a fixed-step classical Runge–Kutta scheme (or a
//! projected explicit Euler scheme when the state must stay in the positive
//! orthant), recording the quantities the verification layers consume:
//! states, relative measurements, applied flows, the storage function, total
//! mass, and the cumulative demand/supply imbalance. Diagnostics that would
//! be distorted by coarse recording — storage-function monotonicity, the
//! minimum state component, saturation activity — are tracked online at
//! every integration step regardless of the recording stride.

use std::io::{self, Write};

use nalgebra::DVector;
use serde::Serialize;

use crate::controller::{ControllerBank, SaturationController};
use crate::error::{Error, Result};
use crate::exosystem::Exosystem;
use crate::plant::{Constraint, NodeDynamics, PlantConfig};
use crate::synthesis::is_balanced;

/// Per-step storage-function increase counted as a violation, relative to
/// `1 + V(0)`. Set well above RK4 truncation noise and well below any real
/// instability.
const LYAP_STEP_TOL: f64 = 1e-8;

/// Orthant undershoot tolerated (and clamped to zero) by the projected
/// integrator; anything worse means the substep is too coarse.
const UNDERSHOOT_TOL: f64 = 1e-14;

/// Projected-Euler substeps per nominal step.
const SUBSTEPS: usize = 10;

/// Balance tolerance used to classify a run for the conservation check.
const BALANCE_TOL: f64 = 1e-12;

/// Default bound on any state magnitude before the run aborts.
pub const DEFAULT_OVERFLOW_GUARD: f64 = 1e9;

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Classical fixed-step fourth-order Runge–Kutta.
    Rk4,
    /// Explicit Euler with tangent-cone projection, substepped at a tenth
    /// of the nominal step. Reserved for positivity-constrained runs.
    ProjectedEuler,
}

/// Integration parameters.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Nominal step size.
    pub step: f64,
    /// Requested final time; rounded to a whole number of steps.
    pub horizon: f64,
    /// Record every k-th step (the initial and final states are always
    /// recorded). Online diagnostics are unaffected by the stride.
    pub record_stride: usize,
    pub method: Method,
    /// Any state magnitude beyond this aborts the run as a numeric escape.
    pub overflow_guard: f64,
}

impl SimConfig {
    pub fn new(step: f64, horizon: f64) -> Self {
        SimConfig {
            step,
            horizon,
            record_stride: 1,
            method: Method::Rk4,
            overflow_guard: DEFAULT_OVERFLOW_GUARD,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::invalid(format!(
                "step must be positive and finite, got {}",
                self.step
            )));
        }
        if !(self.horizon >= self.step) || !self.horizon.is_finite() {
            return Err(Error::invalid(format!(
                "horizon must cover at least one step, got {} with step {}",
                self.horizon, self.step
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::invalid("record stride must be at least 1"));
        }
        if !(self.overflow_guard > 0.0) {
            return Err(Error::invalid("overflow guard must be positive"));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        ((self.horizon / self.step).round() as usize).max(1)
    }
}

/// The feedback attached to the network's edges.
#[derive(Debug, Clone)]
pub enum ControlLaw {
    /// Internal-model / static edge-controller bank.
    Bank(ControllerBank),
    /// Saturated consensus law with exosystem feedforward.
    Saturated(SaturationController),
}

/// A recorded closed-loop run.
///
/// Samples are stored row-major at the recording stride; the scalar
/// diagnostics below were accumulated at every integration step. The
/// storage function `V` is the squared tracking error:
/// `½‖x − x_ref(t)·1‖²` plus, for internal-model runs,
/// `½ Σ_k ‖η_k − w(t)‖²` (each controller's distance from the exosystem
/// replica it converges to). For saturated runs the flow-shaping transient
/// can make `V` rise temporarily, so its monotonicity is a certificate only
/// for controller-bank runs.
#[derive(Debug, Clone)]
pub struct Trajectory {
    n: usize,
    m: usize,
    eta_dim: usize,
    times: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
    /// Applied flows: post-saturation whenever a capacity is configured.
    lambda: Vec<f64>,
    eta: Vec<f64>,
    v: Vec<f64>,
    mass: Vec<f64>,
    imbalance: Vec<f64>,
    /// Steps on which `V` increased by more than the per-step tolerance.
    pub lyap_violations: usize,
    /// Smallest state component seen at any (sub)step boundary.
    pub min_state: f64,
    /// Steps on which some commanded flow exceeded the capacity (saturated
    /// plants only).
    pub sat_steps: usize,
    /// Latest time at which a commanded flow exceeded the capacity.
    pub last_sat_time: Option<f64>,
    /// Substeps on which the orthant projection actually altered the field
    /// or clamped an undershoot (mass can change on exactly these).
    pub projection_clamps: usize,
    /// Whether total demand/supply cancels along the exosystem motion.
    pub balanced: bool,
    /// Whether total mass is a structural invariant of this run: balanced
    /// demand and no node drift (node drifts inject or remove mass).
    pub mass_invariant: bool,
    /// Initial storage value.
    pub v0: f64,
    pub step: f64,
    /// Effective final time (whole number of steps).
    pub horizon: f64,
}

impl Trajectory {
    /// Number of recorded samples.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eta_dim(&self) -> usize {
        self.eta_dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.n..(k + 1) * self.n]
    }

    pub fn z_at(&self, k: usize) -> &[f64] {
        &self.z[k * self.m..(k + 1) * self.m]
    }

    pub fn lambda_at(&self, k: usize) -> &[f64] {
        &self.lambda[k * self.m..(k + 1) * self.m]
    }

    pub fn eta_at(&self, k: usize) -> &[f64] {
        &self.eta[k * self.eta_dim..(k + 1) * self.eta_dim]
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Cumulative net injection per node, `1ᵀP_eff ∫w / n`.
    pub fn imbalance(&self) -> &[f64] {
        &self.imbalance
    }

    /// Index of the first sample inside the tail window (final 10 % of the
    /// horizon), on which the steady-state certificates are evaluated.
    pub fn tail_start(&self) -> usize {
        let t_tail = 0.9 * self.horizon;
        self.times.partition_point(|&t| t < t_tail)
    }
}

/// Steady-state and dissipation facts extracted from one run.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    /// Sup-norm of the relative measurements over the tail window.
    pub z_tail_sup: f64,
    /// Integration steps on which the storage function rose measurably.
    pub lyap_violations: usize,
    /// Largest centered-difference residual `|ΔV/Δt + ‖z‖²|` over recorded
    /// samples: the dissipation identity check. Meaningful for
    /// controller-bank runs recorded at a fine stride.
    pub vdot_match_err: f64,
    /// Largest deviation of total mass from its initial value; `None` for
    /// unbalanced runs, where mass is not an invariant.
    pub mass_drift: Option<f64>,
    /// Tail sup of the node spread `max_i x_i − min_i x_i`.
    pub disagreement_tail: f64,
    /// Standard deviation of the consensus-offset samples over the tail —
    /// near zero when the offset has settled to a constant.
    pub c_prime_std: f64,
    /// Smallest state component seen during the whole run.
    pub min_state: f64,
}

/// Pre-sized scratch space plus everything the closed-loop field needs.
struct Engine<'a> {
    plant: &'a PlantConfig,
    e: &'a Exosystem,
    law: &'a ControlLaw,
    n: usize,
    eta_dim: usize,
    dim: usize,
    track_xstar: bool,
    /// `1ᵀ P_eff / n`: maps `w` to the mean net injection rate.
    imb_row: DVector<f64>,
    /// Mean of the initial state — the reference level's constant part.
    xbar0: f64,
    x_buf: DVector<f64>,
    xdot_buf: DVector<f64>,
    eta_buf: DVector<f64>,
    eta_dot_buf: DVector<f64>,
    z_buf: DVector<f64>,
    lambda_buf: DVector<f64>,
    w_buf: DVector<f64>,
    w_hat_buf: DVector<f64>,
    integ_buf: DVector<f64>,
    /// Sup-norm of the last commanded (pre-clamp) flow vector.
    last_cmd_sup: f64,
}

impl Engine<'_> {
    /// Closed-loop vector field at `(t, s)`, written into `out`.
    ///
    /// Leaves the applied flow in `lambda_buf` (clamped when a capacity is
    /// configured) and the commanded sup-norm in `last_cmd_sup`.
    fn deriv(&mut self, t: f64, s: &DVector<f64>, out: &mut DVector<f64>) {
        self.x_buf.copy_from(&s.rows(0, self.n));
        self.z_buf
            .gemv_tr(1.0, self.plant.graph.incidence(), &self.x_buf, 0.0);
        match self.law {
            ControlLaw::Bank(bank) => {
                self.eta_buf.copy_from(&s.rows(self.n, self.eta_dim));
                bank.step_into(
                    &self.eta_buf,
                    &self.z_buf,
                    &mut self.eta_dot_buf,
                    &mut self.lambda_buf,
                );
                out.rows_mut(self.n, self.eta_dim)
                    .copy_from(&self.eta_dot_buf);
            }
            ControlLaw::Saturated(sc) => {
                sc.law_into(
                    &self.z_buf,
                    t,
                    self.e,
                    &mut self.w_hat_buf,
                    &mut self.lambda_buf,
                );
            }
        }
        self.last_cmd_sup = self.lambda_buf.amax();
        self.e.write_w(t, &mut self.w_buf);
        self.plant.rhs_into(
            &self.x_buf,
            &mut self.lambda_buf,
            &self.w_buf,
            &mut self.xdot_buf,
        );
        out.rows_mut(0, self.n).copy_from(&self.xdot_buf);
        if self.track_xstar {
            // Mean-field reference: ẋ* = mean_i f_i(x*) + 1ᵀP_eff w / n.
            let xs = s[self.dim - 1];
            let mut drift = 0.0;
            for i in 0..self.n {
                drift += self.plant.dynamics.eval_node(i, xs);
            }
            out[self.dim - 1] = drift / self.n as f64 + self.imb_row.dot(&self.w_buf);
        }
    }

    /// Relative measurements and applied flows at `(t, s)`, left in
    /// `z_buf` / `lambda_buf` (recording helper).
    fn measure(&mut self, t: f64, s: &DVector<f64>) {
        self.x_buf.copy_from(&s.rows(0, self.n));
        self.z_buf
            .gemv_tr(1.0, self.plant.graph.incidence(), &self.x_buf, 0.0);
        match self.law {
            ControlLaw::Bank(bank) => {
                self.eta_buf.copy_from(&s.rows(self.n, self.eta_dim));
                bank.lambda_into(&self.eta_buf, &self.z_buf, &mut self.lambda_buf);
            }
            ControlLaw::Saturated(sc) => {
                sc.law_into(
                    &self.z_buf,
                    t,
                    self.e,
                    &mut self.w_hat_buf,
                    &mut self.lambda_buf,
                );
            }
        }
        if let Constraint::EdgeSaturation { c } = self.plant.constraint {
            for v in self.lambda_buf.iter_mut() {
                *v = v.clamp(-c, c);
            }
        }
    }

    /// Cumulative per-node net injection `1ᵀP_eff ∫₀ᵗ w / n`.
    fn imb(&mut self, t: f64) -> f64 {
        self.e.write_integral_w(t, &mut self.integ_buf);
        self.imb_row.dot(&self.integ_buf)
    }

    /// Storage function at `(t, s)`.
    fn v_of(&mut self, t: f64, s: &DVector<f64>) -> f64 {
        let level = if self.track_xstar {
            s[self.dim - 1]
        } else {
            self.xbar0 + self.imb(t)
        };
        let mut acc = 0.0;
        for i in 0..self.n {
            let d = s[i] - level;
            acc += d * d;
        }
        if self.eta_dim > 0 {
            self.e.write_w(t, &mut self.w_buf);
            let p = self.w_buf.len();
            let slots = self.eta_dim / p;
            for slot in 0..slots {
                for j in 0..p {
                    let d = s[self.n + slot * p + j] - self.w_buf[j];
                    acc += d * d;
                }
            }
        }
        0.5 * acc
    }
}

fn guard_state(s: &DVector<f64>, bound: f64, t: f64) -> Result<()> {
    for &v in s.iter() {
        if !v.is_finite() || v.abs() > bound {
            return Err(Error::numeric(
                format!("state escaped the overflow guard ({v:.3e} beyond {bound:.1e})"),
                Some(t),
            ));
        }
    }
    Ok(())
}

/// Integrate the closed loop and record a trajectory.
///
/// The run pairing is validated up front: the positivity constraint demands
/// the projected integrator, a nonnegative initial state, linear node
/// dynamics, and the controller bank; the projected integrator is reserved
/// for exactly those runs; the saturated law pairs with linear dynamics
/// (its reference bookkeeping assumes the linear consensus level).
pub fn simulate(
    plant: &PlantConfig,
    e: &Exosystem,
    law: &ControlLaw,
    x0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = plant.graph.n();
    let m_edges = plant.graph.m();
    if x0.len() != n {
        return Err(Error::invalid(format!(
            "initial state has {} entries, graph has {} nodes",
            x0.len(),
            n
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state must be finite"));
    }
    if plant.p_eff.ncols() != e.p() {
        return Err(Error::invalid(format!(
            "plant disturbance map has {} columns, exosystem dimension is {}",
            plant.p_eff.ncols(),
            e.p()
        )));
    }
    let (law_m, law_p) = match law {
        ControlLaw::Bank(bank) => (bank.m(), bank.p()),
        ControlLaw::Saturated(sc) => (sc.m.nrows(), sc.m.ncols()),
    };
    if law_m != m_edges || law_p != e.p() {
        return Err(Error::invalid(format!(
            "control law sized for {law_m} edges and exosystem dimension {law_p}, run has {m_edges} and {}",
            e.p()
        )));
    }
    let positivity = matches!(plant.constraint, Constraint::Positivity);
    match cfg.method {
        Method::ProjectedEuler if !positivity => {
            return Err(Error::invalid(
                "the projected integrator is reserved for positivity-constrained runs",
            ));
        }
        Method::Rk4 if positivity => {
            return Err(Error::invalid(
                "positivity-constrained runs require the projected integrator",
            ));
        }
        _ => {}
    }
    if positivity {
        if !matches!(law, ControlLaw::Bank(_)) {
            return Err(Error::invalid(
                "positivity-constrained runs support the controller bank only",
            ));
        }
        if !matches!(plant.dynamics, NodeDynamics::Linear) {
            return Err(Error::invalid(
                "positivity-constrained runs support linear node dynamics only",
            ));
        }
        if x0.iter().any(|&v| v < 0.0) {
            return Err(Error::invalid(
                "positivity-constrained runs need a nonnegative initial state",
            ));
        }
    }
    if matches!(law, ControlLaw::Saturated(_)) && !matches!(plant.dynamics, NodeDynamics::Linear) {
        return Err(Error::invalid(
            "the saturated law supports linear node dynamics only",
        ));
    }

    let eta_dim = match law {
        ControlLaw::Bank(bank) => bank.eta_dim(),
        ControlLaw::Saturated(_) => 0,
    };
    let track_xstar =
        matches!(law, ControlLaw::Bank(_)) && matches!(plant.dynamics, NodeDynamics::Gradient(_));
    let dim = n + eta_dim + usize::from(track_xstar);
    let xbar0 = x0.sum() / n as f64;

    let mut s = DVector::zeros(dim);
    s.rows_mut(0, n).copy_from(x0);
    if let ControlLaw::Bank(bank) = law {
        s.rows_mut(n, eta_dim).copy_from(&bank.eta0());
    }
    if track_xstar {
        s[dim - 1] = xbar0;
    }

    let p = e.p();
    let mut engine = Engine {
        plant,
        e,
        law,
        n,
        eta_dim,
        dim,
        track_xstar,
        imb_row: (plant.p_eff.row_sum() / n as f64).transpose(),
        xbar0,
        x_buf: DVector::zeros(n),
        xdot_buf: DVector::zeros(n),
        eta_buf: DVector::zeros(eta_dim),
        eta_dot_buf: DVector::zeros(eta_dim),
        z_buf: DVector::zeros(m_edges),
        lambda_buf: DVector::zeros(m_edges),
        w_buf: DVector::zeros(p),
        w_hat_buf: DVector::zeros(p),
        integ_buf: DVector::zeros(p),
        last_cmd_sup: 0.0,
    };

    let steps = cfg.steps();
    let h = cfg.step;
    let capacity = match plant.constraint {
        Constraint::EdgeSaturation { c } => Some(c),
        _ => None,
    };

    let samples_hint = steps / cfg.record_stride + 2;
    let mut traj = Trajectory {
        n,
        m: m_edges,
        eta_dim,
        times: Vec::with_capacity(samples_hint),
        x: Vec::with_capacity(samples_hint * n),
        z: Vec::with_capacity(samples_hint * m_edges),
        lambda: Vec::with_capacity(samples_hint * m_edges),
        eta: Vec::with_capacity(samples_hint * eta_dim),
        v: Vec::with_capacity(samples_hint),
        mass: Vec::with_capacity(samples_hint),
        imbalance: Vec::with_capacity(samples_hint),
        lyap_violations: 0,
        min_state: x0.min(),
        sat_steps: 0,
        last_sat_time: None,
        projection_clamps: 0,
        balanced: is_balanced(&plant.p_eff, e, BALANCE_TOL),
        mass_invariant: false,
        v0: 0.0,
        step: h,
        horizon: steps as f64 * h,
    };
    traj.mass_invariant = traj.balanced && matches!(plant.dynamics, NodeDynamics::Linear);

    let mut v_prev = engine.v_of(0.0, &s);
    traj.v0 = v_prev;
    let vtol = LYAP_STEP_TOL * (1.0 + v_prev);

    let record = |traj: &mut Trajectory, engine: &mut Engine, t: f64, s: &DVector<f64>, v: f64| {
        engine.measure(t, s);
        traj.times.push(t);
        traj.x.extend(s.rows(0, n).iter());
        traj.z.extend(engine.z_buf.iter());
        traj.lambda.extend(engine.lambda_buf.iter());
        traj.eta.extend(s.rows(n, eta_dim).iter());
        traj.v.push(v);
        traj.mass.push(s.rows(0, n).sum());
        traj.imbalance.push(engine.imb(t));
    };
    record(&mut traj, &mut engine, 0.0, &s, v_prev);

    let mut s_stage = DVector::zeros(dim);
    let mut k1 = DVector::zeros(dim);
    let mut k2 = DVector::zeros(dim);
    let mut k3 = DVector::zeros(dim);
    let mut k4 = DVector::zeros(dim);

    for k_step in 0..steps {
        let t = k_step as f64 * h;
        let t_next = (k_step + 1) as f64 * h;
        match cfg.method {
            Method::Rk4 => {
                engine.deriv(t, &s, &mut k1);
                if let Some(c) = capacity {
                    if engine.last_cmd_sup > c {
                        traj.sat_steps += 1;
                        traj.last_sat_time = Some(t);
                    }
                }
                s_stage.copy_from(&s);
                s_stage.axpy(0.5 * h, &k1, 1.0);
                engine.deriv(t + 0.5 * h, &s_stage, &mut k2);
                s_stage.copy_from(&s);
                s_stage.axpy(0.5 * h, &k2, 1.0);
                engine.deriv(t + 0.5 * h, &s_stage, &mut k3);
                s_stage.copy_from(&s);
                s_stage.axpy(h, &k3, 1.0);
                engine.deriv(t_next, &s_stage, &mut k4);
                s.axpy(h / 6.0, &k1, 1.0);
                s.axpy(h / 3.0, &k2, 1.0);
                s.axpy(h / 3.0, &k3, 1.0);
                s.axpy(h / 6.0, &k4, 1.0);
            }
            Method::ProjectedEuler => {
                let sub_h = h / SUBSTEPS as f64;
                for j in 0..SUBSTEPS {
                    let t_sub = t + j as f64 * sub_h;
                    engine.deriv(t_sub, &s, &mut k1);
                    // Tangent-cone projection: on the boundary, drop the
                    // outward component of the field.
                    let mut touched = false;
                    for i in 0..n {
                        if s[i] == 0.0 && k1[i] < 0.0 {
                            k1[i] = 0.0;
                            touched = true;
                        }
                    }
                    s.axpy(sub_h, &k1, 1.0);
                    for i in 0..n {
                        if s[i] < 0.0 {
                            if s[i] >= -UNDERSHOOT_TOL {
                                s[i] = 0.0;
                                touched = true;
                            } else {
                                return Err(Error::numeric(
                                    format!(
                                        "positivity undershoot {:.3e} exceeds the clamp band; reduce the step",
                                        s[i]
                                    ),
                                    Some(t_sub + sub_h),
                                ));
                            }
                        }
                        traj.min_state = traj.min_state.min(s[i]);
                    }
                    if touched {
                        traj.projection_clamps += 1;
                    }
                }
            }
        }
        guard_state(&s, cfg.overflow_guard, t_next)?;
        if cfg.method == Method::Rk4 {
            for i in 0..n {
                traj.min_state = traj.min_state.min(s[i]);
            }
        }
        let v_now = engine.v_of(t_next, &s);
        if v_now - v_prev > vtol {
            traj.lyap_violations += 1;
        }
        v_prev = v_now;
        if (k_step + 1) % cfg.record_stride == 0 || k_step + 1 == steps {
            record(&mut traj, &mut engine, t_next, &s, v_now);
        }
    }
    Ok(traj)
}

/// Extract the dissipation and steady-state certificates from a run.
pub fn lyapunov(traj: &Trajectory) -> CertificateReport {
    let len = traj.len();
    let tail = traj.tail_start();
    let mut z_tail_sup = 0.0f64;
    for k in tail..len {
        for &z in traj.z_at(k) {
            z_tail_sup = z_tail_sup.max(z.abs());
        }
    }
    // Centered differences cancel the O(Δt) bias of one-sided quotients,
    // leaving only curvature error in the identity V̇ = −‖z‖².
    let mut vdot_match_err = 0.0f64;
    for k in 1..len.saturating_sub(1) {
        let dt = traj.times[k + 1] - traj.times[k - 1];
        let slope = (traj.v[k + 1] - traj.v[k - 1]) / dt;
        let z_sq: f64 = traj.z_at(k).iter().map(|z| z * z).sum();
        vdot_match_err = vdot_match_err.max((slope + z_sq).abs());
    }
    let mass_drift = traj.balanced.then(|| {
        let m0 = traj.mass[0];
        traj.mass
            .iter()
            .fold(0.0f64, |acc, &m| acc.max((m - m0).abs()))
    });
    let (disagreement_tail, c_prime_std) = check_tracking(traj);
    CertificateReport {
        z_tail_sup,
        lyap_violations: traj.lyap_violations,
        vdot_match_err,
        mass_drift,
        disagreement_tail,
        c_prime_std,
        min_state: traj.min_state,
    }
}

/// Verify mass conservation on a run where mass is a structural invariant.
///
/// Returns the largest deviation of total mass from its initial value.
/// Unbalanced runs are rejected — their mass follows the cumulative
/// imbalance instead of staying constant — and so are runs with node
/// drifts, whose drift term injects or removes mass.
pub fn check_conservation(traj: &Trajectory) -> Result<f64> {
    if !traj.balanced {
        let final_imb = traj.imbalance.last().copied().unwrap_or(0.0);
        return Err(Error::invalid(format!(
            "conservation only holds for balanced demand; this run accumulated a per-node imbalance of {final_imb:.6e}"
        )));
    }
    if !traj.mass_invariant {
        return Err(Error::invalid(
            "conservation does not apply: node drifts make total mass a non-invariant on this run",
        ));
    }
    let m0 = traj.mass[0];
    Ok(traj
        .mass
        .iter()
        .fold(0.0f64, |acc, &m| acc.max((m - m0).abs())))
}

/// Tail tracking quality: `(disagreement_tail, c_prime_std)`.
///
/// The residuals `r_i(t) = x_i(t) − imbalance(t)` should agree across nodes.
/// The first value is the tail sup of the spread `max_i r_i − min_i r_i`
/// (the common shift cancels, so this equals the spread of `x` itself); the
/// second is the standard deviation of the consensus offset `r̄` over the
/// tail, which should settle to a constant.
pub fn check_tracking(traj: &Trajectory) -> (f64, f64) {
    let len = traj.len();
    let tail = traj.tail_start();
    if tail >= len {
        return (0.0, 0.0);
    }
    let mut disagreement = 0.0f64;
    let mut offsets = Vec::with_capacity(len - tail);
    for k in tail..len {
        let x = traj.x_at(k);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &xi in x {
            lo = lo.min(xi);
            hi = hi.max(xi);
        }
        disagreement = disagreement.max(hi - lo);
        offsets.push(x.iter().sum::<f64>() / traj.n as f64 - traj.imbalance[k]);
    }
    let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
    let var = offsets.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / offsets.len() as f64;
    (disagreement, var.sqrt())
}

/// Write the run as CSV: header
/// `t,x_1..x_n,z_1..z_m,lambda_1..lambda_m,V,mass,imbalance`, one row per
/// recorded sample, full-precision scientific notation.
pub fn write_csv(traj: &Trajectory, out: &mut impl Write) -> io::Result<()> {
    write!(out, "t")?;
    for i in 1..=traj.n {
        write!(out, ",x_{i}")?;
    }
    for k in 1..=traj.m {
        write!(out, ",z_{k}")?;
    }
    for k in 1..=traj.m {
        write!(out, ",lambda_{k}")?;
    }
    writeln!(out, ",V,mass,imbalance")?;
    for k in 0..traj.len() {
        write!(out, "{:.16e}", traj.times[k])?;
        for v in traj.x_at(k) {
            write!(out, ",{v:.16e}")?;
        }
        for v in traj.z_at(k) {
            write!(out, ",{v:.16e}")?;
        }
        for v in traj.lambda_at(k) {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(
            out,
            ",{:.16e},{:.16e},{:.16e}",
            traj.v[k], traj.mass[k], traj.imbalance[k]
        )?;
    }
    Ok(())
}
