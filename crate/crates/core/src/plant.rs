//! Node dynamics variants of the flow network.
//!
//! The base model is `ẋ = f(x) + B λ + P_eff w` with `f ≡ 0` for pure
//! storage nodes. The gradient variant equips each node with a non-increasing
//! scalar drift `f_i` (so `−f_i` is incrementally passive, which the
//! convergence argument requires); two optional constraints modify how the
//! field is applied: edge-capacity saturation clamps flows to `[−c, c]`
//! inside the dynamics, and positivity projects the field on the boundary of
//! the positive orthant.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::NetworkGraph;

/// Built-in non-increasing node drift functions.
///
/// Restricting to a declared library (rather than arbitrary closures) keeps
/// the monotonicity requirement checkable and scenario files declarative.
#[derive(Debug, Clone, Copy, PartialEq)]
#[allow(clippy::enum_variant_names)] // the shared Neg prefix states the sign contract
pub enum NodeFn {
    /// `f(x) = −k·x`
    NegLinear { k: f64 },
    /// `f(x) = −k·x³`
    NegCubic { k: f64 },
    /// `f(x) = −k·tanh(x)`
    NegTanh { k: f64 },
}

impl NodeFn {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            NodeFn::NegLinear { k } => -k * x,
            NodeFn::NegCubic { k } => -k * x * x * x,
            NodeFn::NegTanh { k } => -k * x.tanh(),
        }
    }

    fn gain(&self) -> f64 {
        match *self {
            NodeFn::NegLinear { k } | NodeFn::NegCubic { k } | NodeFn::NegTanh { k } => k,
        }
    }
}

/// Per-node drift: absent (linear network) or one declared function per node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeDynamics {
    Linear,
    Gradient(Vec<NodeFn>),
}

impl NodeDynamics {
    /// Validate gains and the node count against the graph.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            NodeDynamics::Linear => Ok(()),
            NodeDynamics::Gradient(fns) => {
                if fns.len() != n {
                    return Err(Error::invalid(format!(
                        "gradient dynamics list {} node functions for {} nodes",
                        fns.len(),
                        n
                    )));
                }
                if let Some(f) = fns.iter().find(|f| !(f.gain() >= 0.0)) {
                    return Err(Error::invalid(format!(
                        "node drift gain must be non-negative, got {:?}",
                        f
                    )));
                }
                Ok(())
            }
        }
    }

    /// Evaluate node `i`'s drift at state value `x`.
    pub fn eval_node(&self, i: usize, x: f64) -> f64 {
        match self {
            NodeDynamics::Linear => 0.0,
            NodeDynamics::Gradient(fns) => fns[i].eval(x),
        }
    }

    /// True when every node carries the same drift function.
    pub fn is_identical(&self) -> bool {
        match self {
            NodeDynamics::Linear => true,
            NodeDynamics::Gradient(fns) => fns.windows(2).all(|w| w[0] == w[1]),
        }
    }
}

/// Optional state/flow constraint on the network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    None,
    /// Keep every node state in the positive orthant (projected dynamics).
    Positivity,
    /// Clamp every edge flow to `[−c, c]` inside the dynamics.
    EdgeSaturation {
        c: f64,
    },
}

/// The full plant: graph, disturbance map, node drift, constraint.
#[derive(Debug, Clone)]
pub struct PlantConfig {
    pub graph: NetworkGraph,
    /// Effective disturbance map `P_eff = P Γ` (n×p).
    pub p_eff: DMatrix<f64>,
    pub dynamics: NodeDynamics,
    pub constraint: Constraint,
}

impl PlantConfig {
    pub fn new(
        graph: NetworkGraph,
        p_eff: DMatrix<f64>,
        dynamics: NodeDynamics,
        constraint: Constraint,
    ) -> Result<Self> {
        if p_eff.nrows() != graph.n() {
            return Err(Error::invalid(format!(
                "disturbance map has {} rows, graph has {} nodes",
                p_eff.nrows(),
                graph.n()
            )));
        }
        dynamics.validate(graph.n())?;
        if let Constraint::EdgeSaturation { c } = constraint {
            if !(c > 0.0) {
                return Err(Error::invalid(format!(
                    "edge capacity must be positive, got {c}"
                )));
            }
        }
        Ok(PlantConfig {
            graph,
            p_eff,
            dynamics,
            constraint,
        })
    }

    /// State derivative `f(x) + B·(λ or sat(λ)) + P_eff w`.
    ///
    /// Saturation (when configured) applies inside the dynamics — the
    /// physical edge cannot carry more than its capacity regardless of the
    /// commanded flow. Positivity is *not* applied here; the projected
    /// integrator handles it (see the engine).
    pub fn rhs(
        &self,
        x: &DVector<f64>,
        lambda: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        if x.len() != self.graph.n()
            || lambda.len() != self.graph.m()
            || w.len() != self.p_eff.ncols()
        {
            return Err(Error::invalid(format!(
                "rhs dimension mismatch: x {}, lambda {}, w {} for n {}, m {}, p {}",
                x.len(),
                lambda.len(),
                w.len(),
                self.graph.n(),
                self.graph.m(),
                self.p_eff.ncols()
            )));
        }
        if x.iter()
            .chain(lambda.iter())
            .chain(w.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::numeric("non-finite value in plant inputs", None));
        }
        let mut out = DVector::zeros(self.graph.n());
        let mut lambda_buf = lambda.clone();
        self.rhs_into(x, &mut lambda_buf, w, &mut out);
        Ok(out)
    }

    /// Allocation-free variant for the integration hot loop.
    ///
    /// `lambda` is clamped in place when saturation is configured, so the
    /// caller observes the flow that was physically applied.
    pub(crate) fn rhs_into(
        &self,
        x: &DVector<f64>,
        lambda: &mut DVector<f64>,
        w: &DVector<f64>,
        out: &mut DVector<f64>,
    ) {
        if let Constraint::EdgeSaturation { c } = self.constraint {
            saturate_in_place(lambda, c);
        }
        for i in 0..x.len() {
            out[i] = self.dynamics.eval_node(i, x[i]);
        }
        out.gemv(1.0, self.graph.incidence(), lambda, 1.0);
        if self.p_eff.ncols() > 0 {
            out.gemv(1.0, &self.p_eff, w, 1.0);
        }
    }
}

/// Project a candidate derivative onto the positive orthant's tangent cone.
///
/// Component `i` is zeroed exactly when the state sits on the boundary
/// (`x_i = 0`) and the field points outward (`ζ_i < 0`); everywhere else the
/// field passes through. Negative states are rejected — the integrator must
/// keep the orthant invariant.
pub fn project_rhs(x: &DVector<f64>, zeta: &DVector<f64>) -> Result<DVector<f64>> {
    let mut out = zeta.clone();
    project_rhs_in_place(x, &mut out)?;
    Ok(out)
}

pub(crate) fn project_rhs_in_place(x: &DVector<f64>, zeta: &mut DVector<f64>) -> Result<()> {
    for i in 0..x.len() {
        if x[i] < 0.0 {
            return Err(Error::numeric(
                format!("state left the positive orthant: x[{i}] = {:.3e}", x[i]),
                None,
            ));
        }
        if x[i] == 0.0 && zeta[i] < 0.0 {
            zeta[i] = 0.0;
        }
    }
    Ok(())
}

/// Componentwise clamp of the flow vector to `[−c, c]`.
pub fn saturate(lambda: &DVector<f64>, c: f64) -> DVector<f64> {
    let mut out = lambda.clone();
    saturate_in_place(&mut out, c);
    out
}

pub(crate) fn saturate_in_place(lambda: &mut DVector<f64>, c: f64) {
    for v in lambda.iter_mut() {
        *v = v.clamp(-c, c);
    }
}
