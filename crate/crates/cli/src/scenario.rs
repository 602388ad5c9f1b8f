//! Scenario JSON schema and translation into core model objects.
//!
//! A scenario bundles everything one closed-loop run needs: the graph, the
//! signal generator, the demand channel matrix, node dynamics, the flow
//! constraint, the controller choice, the initial state, and integration
//! settings. The declared `balanced` flag is cross-checked against the
//! computed imbalance test before anything runs.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use flowbal::exosystem::{build_raw, build_structured, Exosystem, Harmonic, SignalSpec};
use flowbal::graph::{build_graph, NetworkGraph};
use flowbal::plant::{Constraint, NodeDynamics, NodeFn};
use flowbal::synthesis::is_balanced;
use flowbal::{Error, Result};

/// Tolerance for the declared-balance cross-check.
const BALANCE_TOL: f64 = 1e-12;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub graph: GraphSpec,
    pub signals: SignalsSpec,
    /// Demand channel matrix, `n` rows of `q` entries: node i receives
    /// `(P d(t))_i` net external flow.
    pub p: Vec<Vec<f64>>,
    #[serde(default)]
    pub dynamics: DynamicsSpec,
    #[serde(default)]
    pub constraint: ConstraintSpec,
    /// Declared balance flag; must match the computed test `1ᵀ P_eff w ≡ 0`
    /// on the exosystem's reachable subspace.
    pub balanced: bool,
    pub controller: Option<ControllerSpec>,
    pub x0: Option<Vec<f64>>,
    pub sim: Option<SimSpec>,
    #[serde(default)]
    pub certificates: CertSpec,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub nodes: usize,
    /// 1-based `[head, tail]` pairs; positive flow enters the head.
    pub edges: Vec<[usize; 2]>,
}

/// Either a structured per-channel description or a raw generator triple.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalsSpec {
    pub specs: Option<Vec<ChannelSpec>>,
    #[serde(default)]
    pub share_constant_mode: bool,
    pub raw: Option<RawSignals>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub harmonics: Vec<HarmonicSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicSpec {
    pub amp: f64,
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSignals {
    pub s: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub w0: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsSpec {
    #[default]
    Linear,
    Gradient {
        nodes: Vec<NodeFnSpec>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::enum_variant_names)] // the shared Neg prefix states the sign contract
pub enum NodeFnSpec {
    NegLinear { k: f64 },
    NegCubic { k: f64 },
    NegTanh { k: f64 },
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    #[default]
    None,
    EdgeSaturation {
        c: f64,
    },
    Positivity,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    /// Per-edge internal-model controllers (static where the steady flow
    /// vanishes). `gains` defaults to unit gains; `eta0` chooses between a
    /// zero start and a replica start at the generator's initial state.
    InternalModel {
        gains: Option<Vec<f64>>,
        #[serde(default)]
        eta0: Eta0Spec,
    },
    /// Bounded flows: `λ = −μ(z) + M ŵ` with an exponentially converging
    /// feedforward estimate.
    Saturation { gamma: f64, e0: Vec<f64>, rho: f64 },
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eta0Spec {
    #[default]
    Zero,
    Replica,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub step: f64,
    pub horizon: f64,
    #[serde(default = "default_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub method: MethodSpec,
    pub overflow_guard: Option<f64>,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    #[default]
    Rk4,
    ProjectedEuler,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertSpec {
    /// When set, the run must end with `sup‖z‖_∞ ≤ z_tail_tol` over the
    /// trailing window for the simulate command to exit 0.
    pub z_tail_tol: Option<f64>,
}

/// Core objects assembled from a validated scenario.
pub struct Model {
    pub graph: NetworkGraph,
    pub e: Exosystem,
    /// Demand channel matrix P (n×q).
    pub p: DMatrix<f64>,
    /// Effective drive P·Γ acting on the internal state (n×p).
    pub p_eff: DMatrix<f64>,
    pub dynamics: NodeDynamics,
    pub constraint: Constraint,
}

pub fn load(path: &std::path::Path) -> std::result::Result<Scenario, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read scenario file {}: {e}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| format!("invalid scenario JSON in {}: {e}", path.display()))
}

pub fn build_model(sc: &Scenario) -> Result<Model> {
    let edges: Vec<(usize, usize)> = sc.graph.edges.iter().map(|&[h, t]| (h, t)).collect();
    let graph = build_graph(sc.graph.nodes, &edges)?;
    let e = build_exosystem(&sc.signals)?;

    let n = graph.n();
    if sc.p.len() != n {
        return Err(Error::InvalidInput(format!(
            "channel matrix has {} rows, the graph has {n} nodes",
            sc.p.len()
        )));
    }
    let q = sc.p.first().map_or(0, Vec::len);
    if q == 0 || sc.p.iter().any(|row| row.len() != q) {
        return Err(Error::InvalidInput(
            "channel matrix rows must be non-empty and of equal length".into(),
        ));
    }
    if q != e.q() {
        return Err(Error::InvalidInput(format!(
            "channel matrix has {q} columns, the signal description has {} channels",
            e.q()
        )));
    }
    let p = DMatrix::from_fn(n, q, |i, j| sc.p[i][j]);
    let p_eff = &p * e.gamma();

    let computed = is_balanced(&p_eff, &e, BALANCE_TOL);
    if computed != sc.balanced {
        return Err(Error::InvalidInput(format!(
            "scenario declares balanced = {}, but the imbalance test computes {}",
            sc.balanced, computed
        )));
    }

    let dynamics = match &sc.dynamics {
        DynamicsSpec::Linear => NodeDynamics::Linear,
        DynamicsSpec::Gradient { nodes } => {
            if nodes.len() != n {
                return Err(Error::InvalidInput(format!(
                    "gradient dynamics list {} node functions, the graph has {n} nodes",
                    nodes.len()
                )));
            }
            NodeDynamics::Gradient(
                nodes
                    .iter()
                    .map(|f| match *f {
                        NodeFnSpec::NegLinear { k } => NodeFn::NegLinear { k },
                        NodeFnSpec::NegCubic { k } => NodeFn::NegCubic { k },
                        NodeFnSpec::NegTanh { k } => NodeFn::NegTanh { k },
                    })
                    .collect(),
            )
        }
    };
    let constraint = match sc.constraint {
        ConstraintSpec::None => Constraint::None,
        ConstraintSpec::EdgeSaturation { c } => Constraint::EdgeSaturation { c },
        ConstraintSpec::Positivity => Constraint::Positivity,
    };

    Ok(Model {
        graph,
        e,
        p,
        p_eff,
        dynamics,
        constraint,
    })
}

fn build_exosystem(spec: &SignalsSpec) -> Result<Exosystem> {
    match (&spec.specs, &spec.raw) {
        (Some(specs), None) => {
            let channel_specs: Vec<SignalSpec> = specs
                .iter()
                .map(|c| SignalSpec {
                    offset: c.offset,
                    harmonics: c
                        .harmonics
                        .iter()
                        .map(|h| Harmonic {
                            amp: h.amp,
                            omega: h.omega,
                            phase: h.phase,
                        })
                        .collect(),
                })
                .collect();
            build_structured(&channel_specs, spec.share_constant_mode)
        }
        (None, Some(raw)) => {
            let p = raw.s.len();
            if raw.s.iter().any(|row| row.len() != p) {
                return Err(Error::InvalidInput(
                    "raw generator matrix must be square".into(),
                ));
            }
            let q = raw.gamma.len();
            if raw.gamma.iter().any(|row| row.len() != p) {
                return Err(Error::InvalidInput(format!(
                    "raw output matrix rows must have {p} entries to match the generator"
                )));
            }
            let s = DMatrix::from_fn(p, p, |i, j| raw.s[i][j]);
            let gamma = DMatrix::from_fn(q, p, |i, j| raw.gamma[i][j]);
            let w0 = DVector::from_vec(raw.w0.clone());
            build_raw(&s, &gamma, &w0)
        }
        (Some(_), Some(_)) => Err(Error::InvalidInput(
            "signals must give either structured specs or a raw triple, not both".into(),
        )),
        (None, None) => Err(Error::InvalidInput(
            "signals must give structured specs or a raw {s, gamma, w0} triple".into(),
        )),
    }
}
