//! Seeded randomized verification suites.
//!
//! Each suite quantifies one of the library's guarantees over randomized
//! scenarios (or the pinned reference scenarios where randomization adds
//! nothing) and returns a machine-readable report. All randomness flows
//! from a caller-supplied seed through a counter-mode generator, so every
//! report is reproducible; independent closed-loop runs inside a suite are
//! integrated on separate threads and merged in draw order.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::controller::{corollary1_bank, synthesize_bank, SaturationController};
use crate::engine::{simulate, ControlLaw, Method, SimConfig, Trajectory};
use crate::error::{Error, Result};
use crate::exosystem::{build_structured, Exosystem, Harmonic, SignalSpec};
use crate::graph::{build_graph, partition_edges, NetworkGraph};
use crate::plant::{Constraint, NodeDynamics, NodeFn, PlantConfig};
use crate::synthesis::{compute_m, compute_m_nonlinear, integrate_x_star};

/// One checked fact.
#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub passed: bool,
    /// Measured quantities, human-readable.
    pub details: String,
}

/// Outcome of a whole suite.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub cases: Vec<CaseReport>,
}

impl SuiteReport {
    fn new(suite: &str, seed: u64) -> Self {
        SuiteReport {
            suite: suite.to_string(),
            seed,
            passed: true,
            cases: Vec::new(),
        }
    }

    fn push(&mut self, name: impl Into<String>, passed: bool, details: String) {
        self.passed &= passed;
        self.cases.push(CaseReport {
            name: name.into(),
            passed,
            details,
        });
    }

    fn absorb(&mut self, case: CaseReport) {
        self.passed &= case.passed;
        self.cases.push(case);
    }
}

/// A random connected graph: spanning tree plus extra edges with
/// probability 0.35 per remaining pair, random orientations throughout.
fn random_graph(rng: &mut ChaCha8Rng, n_max: usize) -> NetworkGraph {
    let n = rng.random_range(2..=n_max);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        edges.push((i, j));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let present = edges.iter().any(|&(a, b)| (a.min(b), a.max(b)) == (i, j));
            if !present && rng.random_bool(0.35) {
                edges.push(if rng.random_bool(0.5) { (j, i) } else { (i, j) });
            }
        }
    }
    let oriented: Vec<(usize, usize)> = edges
        .iter()
        .map(|&(a, b)| {
            let flip = rng.random_bool(0.5);
            let (h, t) = if flip { (b, a) } else { (a, b) };
            (h + 1, t + 1)
        })
        .collect();
    build_graph(n, &oriented).expect("generated graphs are simple and connected")
}

/// A random spanning tree (no cycle edges).
fn random_tree(rng: &mut ChaCha8Rng, n_max: usize) -> NetworkGraph {
    let n = rng.random_range(2..=n_max);
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        let (h, t) = if rng.random_bool(0.5) { (i, j) } else { (j, i) };
        edges.push((h + 1, t + 1));
    }
    build_graph(n, &edges).expect("generated trees are simple and connected")
}

/// Random per-channel signal content: optional offset, one or two
/// harmonics with well-separated frequencies in `[0.1, 5]`.
fn random_exosystem(rng: &mut ChaCha8Rng, q_max: usize) -> (Exosystem, usize) {
    let q = rng.random_range(1..=q_max);
    let mut specs = Vec::with_capacity(q);
    for _ in 0..q {
        let offset = if rng.random_bool(0.5) {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.random_range(0.5..1.5)
        } else {
            0.0
        };
        let nh = rng.random_range(1..=2usize);
        let mut harmonics: Vec<Harmonic> = Vec::with_capacity(nh);
        for _ in 0..nh {
            let mut omega = rng.random_range(0.1..5.0);
            while harmonics.iter().any(|h| (h.omega - omega).abs() < 0.1) {
                omega = rng.random_range(0.1..5.0);
            }
            harmonics.push(Harmonic {
                amp: rng.random_range(0.4..1.2),
                omega,
                phase: rng.random_range(0.0..TAU),
            });
        }
        specs.push(SignalSpec { offset, harmonics });
    }
    let e = build_structured(&specs, false).expect("generated signal specs are valid");
    (e, q)
}

fn random_channel_map(rng: &mut ChaCha8Rng, n: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, q, |_, _| {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        sign * rng.random_range(1.0..2.0)
    })
}

/// One randomized closed-loop scenario.
struct Draw {
    graph: NetworkGraph,
    e: Exosystem,
    p_eff: DMatrix<f64>,
    x0: DVector<f64>,
}

/// The autonomous incremental closed loop `(x̃, η̃)` of a controller-bank run
/// with unit gains:
/// `x̃̇ = −B Bᵀ x̃ + B H̄ η̃`, `η̃̇ = −H̄ᵀ Bᵀ x̃ + S̄ η̃`, starting from the
/// mean-centered state and `η̃(0) = −w(0)` per dynamic edge. Returns the
/// system matrix and initial state; the first `n` coordinates are `x̃`.
fn incremental_loop(
    graph: &NetworkGraph,
    e: &Exosystem,
    m: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = graph.n();
    let p = e.p();
    let b = graph.incidence();
    let dyn_edges: Vec<usize> = (0..graph.m())
        .filter(|&k| m.row(k).amax() > 1e-12)
        .collect();
    let d = dyn_edges.len();
    let dim = n + d * p;
    let mut a = DMatrix::zeros(dim, dim);
    a.view_mut((0, 0), (n, n))
        .copy_from(&(-(b * b.transpose())));
    for (slot, &k) in dyn_edges.iter().enumerate() {
        let col = n + slot * p;
        // B H̄ block: edge k's incidence column times its feedforward row.
        for i in 0..n {
            for j in 0..p {
                a[(i, col + j)] = b[(i, k)] * m[(k, j)];
                a[(col + j, i)] = -m[(k, j)] * b[(i, k)];
            }
        }
        a.view_mut((col, col), (p, p)).copy_from(e.s());
    }
    let mut s0 = DVector::zeros(dim);
    let xbar = x0.mean();
    for i in 0..n {
        s0[i] = x0[i] - xbar;
    }
    for slot in 0..d {
        for j in 0..p {
            s0[n + slot * p + j] = -e.w0()[j];
        }
    }
    (a, s0)
}

/// Predicted tail sup of `‖z‖_∞`, sampled every 5 s over `[450, 500]`, from
/// the exact linear closed loop propagated by matrix exponentials. A draw is
/// admitted when the prediction sits two orders below the tolerance the
/// suite asserts, so the assertion has margin over integration error.
fn predicted_tail(graph: &NetworkGraph, e: &Exosystem, m: &DMatrix<f64>, x0: &DVector<f64>) -> f64 {
    let n = graph.n();
    let (a, s0) = incremental_loop(graph, e, m, x0);
    let b = graph.incidence();
    let e450 = (a.clone() * 450.0).exp();
    let e5 = (a * 5.0).exp();
    let mut s = e450 * s0;
    let mut sup = 0.0f64;
    for _ in 0..11 {
        let z = b.transpose() * s.rows(0, n);
        sup = sup.max(z.amax());
        s = &e5 * s;
    }
    sup
}

/// Predicted node spread `max_i x̃_i − min_i x̃_i` at time `t` from the exact
/// linear closed loop (projection effects excluded — a fast-decaying linear
/// loop is what the admission needs to find).
fn predicted_spread_at(
    graph: &NetworkGraph,
    e: &Exosystem,
    m: &DMatrix<f64>,
    x0: &DVector<f64>,
    t: f64,
) -> f64 {
    let n = graph.n();
    let (a, s0) = incremental_loop(graph, e, m, x0);
    let s = (a * t).exp() * s0;
    let x = s.rows(0, n);
    x.max() - x.min()
}

/// Draw scenarios until one passes the steady-state admission certificate.
fn admitted_draw(rng: &mut ChaCha8Rng) -> Draw {
    loop {
        let graph = random_graph(rng, 6);
        let (e, q) = random_exosystem(rng, 2);
        let p_mat = random_channel_map(rng, graph.n(), q);
        let p_eff = &p_mat * e.gamma();
        let x0 = DVector::from_fn(graph.n(), |_, _| rng.random_range(-2.0..2.0));
        let part = match partition_edges(&graph) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let ss = match compute_m(&graph, &part, &p_eff) {
            Ok(s) => s,
            Err(_) => continue,
        };
        if predicted_tail(&graph, &e, &ss.m, &x0) <= 1e-7 {
            return Draw {
                graph,
                e,
                p_eff,
                x0,
            };
        }
    }
}

/// Remove each column's mean so that `1ᵀ P_eff = 0` exactly: balanced
/// demand by construction.
fn balance_columns(p_eff: &mut DMatrix<f64>) {
    let n = p_eff.nrows() as f64;
    for mut col in p_eff.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
}

fn run_cases_parallel<T, F>(inputs: Vec<T>, f: F) -> Vec<CaseReport>
where
    T: Sync,
    F: Fn(usize, &T) -> CaseReport + Sync,
{
    std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = inputs
            .iter()
            .enumerate()
            .map(|(i, input)| scope.spawn(move || f(i, input)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("suite worker panicked"))
            .collect()
    })
}

/// Feedforward synthesis suite: the defining identity `B M = Y P_eff` holds
/// to 1e−10 on random connected graphs, and on trees — where the flow
/// solution is unique — the elimination formula agrees with the
/// pseudo-inverse solution `B⁺ Y P_eff` to 1e−10.
pub fn run_feedforward(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("feedforward-residuals", seed);

    let mut worst_residual = 0.0f64;
    for _ in 0..50 {
        let graph = random_graph(&mut rng, 6);
        let (e, q) = random_exosystem(&mut rng, 2);
        let p_eff = random_channel_map(&mut rng, graph.n(), q) * e.gamma();
        let part = partition_edges(&graph)?;
        let ss = compute_m(&graph, &part, &p_eff)?;
        worst_residual = worst_residual.max(ss.residual);
    }
    report.push(
        "identity-residual",
        worst_residual <= 1e-10,
        format!("max ‖B·M − Y·P_eff‖_max = {worst_residual:.3e} over 50 random graphs (tol 1e-10)"),
    );

    let mut worst_dev = 0.0f64;
    for _ in 0..50 {
        let tree = random_tree(&mut rng, 8);
        let (e, q) = random_exosystem(&mut rng, 2);
        let p_eff = random_channel_map(&mut rng, tree.n(), q) * e.gamma();
        let part = partition_edges(&tree)?;
        let ss = compute_m(&tree, &part, &p_eff)?;
        let rhs = ss.y.clone() * &p_eff;
        let pinv = tree
            .incidence()
            .clone()
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .expect("tree incidence has full column rank");
        worst_dev = worst_dev.max((ss.m.clone() - pinv).amax());
    }
    report.push(
        "tree-pseudoinverse-equivalence",
        worst_dev <= 1e-10,
        format!("max |M_elimination − M_pinv| = {worst_dev:.3e} over 50 random trees (tol 1e-10)"),
    );
    Ok(report)
}

/// Internal-model replication suite: with `η(0) = w(0)` and no measurement
/// drive, each dynamic edge's output reproduces its feedforward flow,
/// `sup_{t ≤ 50} |H_k η_k(t) − (M w(t))_k| ≤ 1e−9`, comparing a numerically
/// integrated controller state against the closed-form exosystem.
pub fn run_replication(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("internal-model-replication", seed);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let graph = random_graph(&mut rng, 6);
        let (e, q) = random_exosystem(&mut rng, 2);
        let p_eff = random_channel_map(&mut rng, graph.n(), q) * e.gamma();
        let part = partition_edges(&graph)?;
        let ss = compute_m(&graph, &part, &p_eff)?;
        let mut bank = synthesize_bank(&ss, &e, None)?;
        bank.set_eta0_replica(&e)?;

        // Autonomous controller states: η̇ = S η, one copy per dynamic edge.
        // A fine step keeps the integration error far below the bound even
        // at the fastest admissible frequency.
        let s = e.s();
        let step = 1e-4;
        let steps = (50.0 / step) as usize;
        let mut eta = e.w0().clone();
        let mut w = DVector::zeros(e.p());
        let mut sup = 0.0f64;
        for k in 0..=steps {
            let t = k as f64 * step;
            e.write_w(t, &mut w);
            for &edge in bank.dynamic_edges() {
                let h = ss.m.row(edge);
                let dev = (h.tr_dot(&eta) - h.tr_dot(&w)).abs();
                sup = sup.max(dev);
            }
            if k < steps {
                let k1 = s * &eta;
                let k2 = s * (&eta + &k1 * (0.5 * step));
                let k3 = s * (&eta + &k2 * (0.5 * step));
                let k4 = s * (&eta + &k3 * step);
                eta += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (step / 6.0);
            }
        }
        worst = worst.max(sup);
    }
    report.push(
        "replication-error",
        worst <= 1e-9,
        format!(
            "max sup_t |H η(t) − (M w(t))_k| = {worst:.3e} over 10 draws, t ∈ [0, 50] (tol 1e-9)"
        ),
    );
    Ok(report)
}

/// Randomized convergence suite: 20 admitted random scenarios integrated
/// over 500 s; every run must reach `‖z‖_∞ ≤ 1e−5` on the tail window with
/// a monotone storage function.
pub fn run_convergence(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("randomized-convergence", seed);
    let draws: Vec<Draw> = (0..20).map(|_| admitted_draw(&mut rng)).collect();
    let cases = run_cases_parallel(draws, |i, draw| {
        let name = format!("draw-{i:02}");
        let run = || -> Result<(f64, usize, usize, usize)> {
            let part = partition_edges(&draw.graph)?;
            let ss = compute_m(&draw.graph, &part, &draw.p_eff)?;
            let bank = synthesize_bank(&ss, &draw.e, None)?;
            let plant = PlantConfig::new(
                draw.graph.clone(),
                draw.p_eff.clone(),
                NodeDynamics::Linear,
                Constraint::None,
            )?;
            let mut cfg = SimConfig::new(1e-3, 500.0);
            cfg.record_stride = 50;
            let traj = simulate(&plant, &draw.e, &ControlLaw::Bank(bank), &draw.x0, &cfg)?;
            let mut z_tail = 0.0f64;
            for k in traj.tail_start()..traj.len() {
                for &z in traj.z_at(k) {
                    z_tail = z_tail.max(z.abs());
                }
            }
            Ok((z_tail, traj.lyap_violations, draw.graph.n(), draw.e.p()))
        };
        match run() {
            Ok((z_tail, violations, n, p)) => CaseReport {
                name,
                passed: z_tail <= 1e-5 && violations == 0,
                details: format!(
                    "n = {n}, p = {p}: z tail sup = {z_tail:.3e} (tol 1e-5), storage increases = {violations}"
                ),
            },
            Err(err) => CaseReport {
                name,
                passed: false,
                details: format!("run failed: {err}"),
            },
        }
    });
    for case in cases {
        report.absorb(case);
    }
    Ok(report)
}

/// The pinned balanced triangle used by the nonlinear, saturation, and
/// positivity suites: supply at node 1 is withdrawn at node 2, node 3 only
/// relays.
fn triangle() -> NetworkGraph {
    build_graph(3, &[(2, 1), (3, 2), (1, 3)]).expect("triangle is valid")
}

fn triangle_balanced_p() -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 1, &[1.0, -1.0, 0.0])
}

/// Nonlinear-node suite: identical strictly decreasing drifts on the
/// balanced triangle; the loop must reach the moving mean-field reference
/// from `integrate_x_star` (tail error ≤ 1e−5) with vanishing relative
/// measurements and a monotone storage function.
pub fn run_nonlinear(seed: u64) -> Result<SuiteReport> {
    let mut report = SuiteReport::new("nonlinear-nodes", seed);
    let scenarios: [(&str, NodeFn, f64, [f64; 3], f64); 3] = [
        (
            "cubic-drift",
            NodeFn::NegCubic { k: 1.0 },
            0.25,
            [1.02, 1.0, 0.98],
            250.0,
        ),
        (
            "linear-drift",
            NodeFn::NegLinear { k: 1.0 },
            0.5,
            [1.3, 1.0, 0.7],
            150.0,
        ),
        (
            "tanh-drift",
            NodeFn::NegTanh { k: 1.0 },
            0.5,
            [1.3, 1.0, 0.7],
            150.0,
        ),
    ];
    let cases = run_cases_parallel(scenarios.to_vec(), |_, &(name, f, amp, x0, horizon)| {
        let run = || -> Result<(f64, f64, usize)> {
            let graph = triangle();
            let e = build_structured(
                &[SignalSpec {
                    offset: 0.0,
                    harmonics: vec![Harmonic {
                        amp,
                        omega: 1.0,
                        phase: 0.0,
                    }],
                }],
                false,
            )?;
            let p_eff = triangle_balanced_p() * e.gamma();
            let dynamics = NodeDynamics::Gradient(vec![f; 3]);
            let part = partition_edges(&graph)?;
            let nss = compute_m_nonlinear(&graph, &part, &p_eff)?;
            let bank = corollary1_bank(&nss, &e, &dynamics, None)?;
            let plant = PlantConfig::new(graph, p_eff.clone(), dynamics.clone(), Constraint::None)?;
            let x0 = DVector::from_row_slice(&x0);
            let step = 1e-3;
            let mut cfg = SimConfig::new(step, horizon);
            cfg.record_stride = 20;
            let traj = simulate(&plant, &e, &ControlLaw::Bank(bank), &x0, &cfg)?;
            let path = integrate_x_star(&dynamics, &e, &p_eff, x0.mean(), horizon, step)?;
            let mut z_tail = 0.0f64;
            let mut track_tail = 0.0f64;
            for k in traj.tail_start()..traj.len() {
                for &z in traj.z_at(k) {
                    z_tail = z_tail.max(z.abs());
                }
                let step_index = (traj.times()[k] / step).round() as usize;
                let x_star = path.at(step_index);
                for &xi in traj.x_at(k) {
                    track_tail = track_tail.max((xi - x_star).abs());
                }
            }
            Ok((z_tail, track_tail, traj.lyap_violations))
        };
        match run() {
            Ok((z_tail, track_tail, violations)) => CaseReport {
                name: name.to_string(),
                passed: z_tail <= 1e-5 && track_tail <= 1e-5 && violations == 0,
                details: format!(
                    "z tail sup = {z_tail:.3e}, reference tracking tail = {track_tail:.3e} (tol 1e-5), storage increases = {violations}"
                ),
            },
            Err(err) => CaseReport {
                name: name.to_string(),
                passed: false,
                details: format!("run failed: {err}"),
            },
        }
    });
    for case in cases {
        report.absorb(case);
    }
    Ok(report)
}

/// Saturation suite: feasible scenarios must keep every applied flow inside
/// the capacity, leave saturation before half the horizon, and still reach
/// consensus.
pub fn run_saturation(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("saturated-flows", seed);

    struct SatScenario {
        name: String,
        graph: NetworkGraph,
        e: Exosystem,
        p_eff: DMatrix<f64>,
        x0: DVector<f64>,
        e0: DVector<f64>,
        horizon: f64,
    }

    let mut scenarios = Vec::new();
    // Pinned case: offset-plus-harmonic demand, capacity-crossing start.
    {
        let e = build_structured(
            &[SignalSpec {
                offset: 0.3,
                harmonics: vec![Harmonic {
                    amp: 0.15,
                    omega: 1.0,
                    phase: 0.0,
                }],
            }],
            false,
        )?;
        let p_eff = triangle_balanced_p() * e.gamma();
        scenarios.push(SatScenario {
            name: "pinned-triangle".to_string(),
            graph: triangle(),
            e,
            p_eff,
            x0: DVector::from_row_slice(&[1.5, -0.5, -1.0]),
            e0: DVector::from_row_slice(&[2.0, 1.0, 1.0]),
            horizon: 20.0,
        });
    }
    const CAPACITY: f64 = 1.0;
    for i in 0..5 {
        let graph = random_graph(&mut rng, 6);
        let (e, q) = random_exosystem(&mut rng, 2);
        let mut p_eff = random_channel_map(&mut rng, graph.n(), q) * e.gamma();
        balance_columns(&mut p_eff);
        // Scale the demand so the steady flows use only 40 % of capacity,
        // leaving the feasibility margin the design assumes.
        let part = partition_edges(&graph)?;
        let ss = compute_m(&graph, &part, &p_eff)?;
        let mut sup = 0.0f64;
        let mut w = DVector::zeros(e.p());
        for k in 0..=2000 {
            let t = 30.0 * k as f64 / 2000.0;
            e.write_w(t, &mut w);
            sup = sup.max((&ss.m * &w).amax());
        }
        if sup > 0.0 {
            p_eff *= 0.4 * CAPACITY / sup;
        }
        let x0 = DVector::from_fn(graph.n(), |_, _| rng.random_range(-1.5..1.5));
        let e0 = DVector::from_fn(e.p(), |_, _| rng.random_range(-1.0..1.0));
        scenarios.push(SatScenario {
            name: format!("random-{i}"),
            graph,
            e,
            p_eff,
            x0,
            e0,
            horizon: 30.0,
        });
    }

    let cases = run_cases_parallel(scenarios, |_, sc| {
        let run = || -> Result<(f64, f64, Option<f64>, f64)> {
            let part = partition_edges(&sc.graph)?;
            let ss = compute_m(&sc.graph, &part, &sc.p_eff)?;
            let controller =
                SaturationController::new(CAPACITY, 8.0, ss.m.clone(), sc.e0.clone(), 2.0)?;
            let margin = controller.feasibility(&sc.e, sc.horizon)?;
            let plant = PlantConfig::new(
                sc.graph.clone(),
                sc.p_eff.clone(),
                NodeDynamics::Linear,
                Constraint::EdgeSaturation { c: CAPACITY },
            )?;
            let mut cfg = SimConfig::new(1e-3, sc.horizon);
            cfg.record_stride = 10;
            let traj = simulate(
                &plant,
                &sc.e,
                &ControlLaw::Saturated(controller),
                &sc.x0,
                &cfg,
            )?;
            let mut flow_sup = 0.0f64;
            for k in 0..traj.len() {
                for &l in traj.lambda_at(k) {
                    flow_sup = flow_sup.max(l.abs());
                }
            }
            let kf = traj.len() - 1;
            let x = traj.x_at(kf);
            let final_dis = x.iter().fold(f64::MIN, |a, &v| a.max(v))
                - x.iter().fold(f64::MAX, |a, &v| a.min(v));
            Ok((margin, flow_sup, traj.last_sat_time, final_dis))
        };
        match run() {
            Ok((margin, flow_sup, last_sat, final_dis)) => {
                let sat_ok = last_sat.is_none_or(|t| t < 0.5 * sc.horizon);
                CaseReport {
                    name: sc.name.clone(),
                    passed: flow_sup <= CAPACITY && sat_ok && final_dis <= 1e-5,
                    details: format!(
                        "sup‖Mw‖ = {margin:.3}, applied-flow sup = {flow_sup:.6} (cap {CAPACITY}), last saturated step at t = {}, final disagreement = {final_dis:.3e} (tol 1e-5)",
                        last_sat.map_or("never".to_string(), |t| format!("{t:.3}"))
                    ),
                }
            }
            Err(err) => CaseReport {
                name: sc.name.clone(),
                passed: false,
                details: format!("run failed: {err}"),
            },
        }
    });
    for case in cases {
        report.absorb(case);
    }
    Ok(report)
}

/// The disagreement envelope over the tail: maxima of `max_i x_i − min_i x_i`
/// on consecutive segments one forcing period long.
///
/// The instantaneous spread oscillates at the forcing period (and, once
/// converged, rides on the integrator's steady ripple), so monotone decay is
/// a property of the per-period envelope, not of raw samples. Returns `None`
/// when the tail is shorter than two periods.
fn disagreement_envelope(traj: &Trajectory, period: f64) -> Option<Vec<f64>> {
    let tail = traj.tail_start();
    if tail >= traj.len() {
        return None;
    }
    let t0 = traj.times()[tail];
    let t_end = *traj.times().last().unwrap();
    let segments = ((t_end - t0) / period).floor() as usize;
    if segments < 2 {
        return None;
    }
    let mut maxima = vec![0.0f64; segments];
    for k in tail..traj.len() {
        let seg = (((traj.times()[k] - t0) / period) as usize).min(segments - 1);
        let x = traj.x_at(k);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &xi in x {
            lo = lo.min(xi);
            hi = hi.max(xi);
        }
        maxima[seg] = maxima[seg].max(hi - lo);
    }
    Some(maxima)
}

/// `true` when the envelope never rises beyond sampling slack (1 % relative
/// plus a small absolute floor).
fn envelope_non_increasing(maxima: &[f64]) -> bool {
    maxima.windows(2).all(|w| w[1] <= w[0] * 1.01 + 1e-9)
}

/// Positivity suite: runs started on the orthant boundary stay nonnegative
/// under the projected integrator, reach consensus, and show a shrinking
/// (never rising) disagreement envelope on the tail.
pub fn run_positivity(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("positive-states", seed);

    struct PosScenario {
        name: String,
        graph: NetworkGraph,
        e: Exosystem,
        p_eff: DMatrix<f64>,
        x0: DVector<f64>,
        /// Forcing period (sizes the envelope segments).
        period: f64,
        horizon: f64,
        consensus_tol: f64,
    }

    let mut scenarios = Vec::new();
    {
        let omega = 1.0;
        let e = build_structured(
            &[SignalSpec {
                offset: 0.0,
                harmonics: vec![Harmonic {
                    amp: 0.3,
                    omega,
                    phase: 0.0,
                }],
            }],
            false,
        )?;
        let p_eff = triangle_balanced_p() * e.gamma();
        scenarios.push(PosScenario {
            name: "pinned-boundary-start".to_string(),
            graph: triangle(),
            e,
            p_eff,
            x0: DVector::from_row_slice(&[3.0, 0.0, 0.0]),
            period: TAU / omega,
            // The tail window (final 10 %) must cover at least two forcing
            // periods for the envelope comparison.
            horizon: 150.0,
            consensus_tol: 1e-4,
        });
    }
    let horizon = 250.0;
    let consensus_tol = 1e-4;
    for i in 0..4 {
        // Rejection-sample until the exact linear loop predicts the
        // transient spread well under the consensus tolerance at the
        // horizon, leaving room for the projected integrator's ripple.
        let (graph, e, p_eff, x0, omega) = loop {
            let graph = random_graph(&mut rng, 5);
            let omega = rng.random_range(1.0..2.0);
            let e = build_structured(
                &[SignalSpec {
                    offset: 0.0,
                    harmonics: vec![Harmonic {
                        amp: rng.random_range(0.1..0.2),
                        omega,
                        phase: rng.random_range(0.0..TAU),
                    }],
                }],
                false,
            )?;
            let mut p_mat = random_channel_map(&mut rng, graph.n(), 1);
            p_mat *= 0.5;
            let mut p_eff = p_mat * e.gamma();
            balance_columns(&mut p_eff);
            let mut x0 = DVector::from_fn(graph.n(), |_, _| rng.random_range(0.5..2.0));
            let empty = rng.random_range(0..graph.n());
            x0[empty] = 0.0;
            let part = partition_edges(&graph)?;
            let ss = compute_m(&graph, &part, &p_eff)?;
            if predicted_spread_at(&graph, &e, &ss.m, &x0, horizon) <= 0.2 * consensus_tol {
                break (graph, e, p_eff, x0, omega);
            }
        };
        scenarios.push(PosScenario {
            name: format!("random-{i}"),
            graph,
            e,
            p_eff,
            x0,
            period: TAU / omega,
            horizon,
            consensus_tol,
        });
    }

    let cases = run_cases_parallel(scenarios, |_, sc| {
        let run = || -> Result<(f64, f64, bool, f64)> {
            let part = partition_edges(&sc.graph)?;
            let ss = compute_m(&sc.graph, &part, &sc.p_eff)?;
            let bank = synthesize_bank(&ss, &sc.e, None)?;
            let plant = PlantConfig::new(
                sc.graph.clone(),
                sc.p_eff.clone(),
                NodeDynamics::Linear,
                Constraint::Positivity,
            )?;
            let mut cfg = SimConfig::new(1e-3, sc.horizon);
            cfg.method = Method::ProjectedEuler;
            cfg.record_stride = 10;
            let traj = simulate(&plant, &sc.e, &ControlLaw::Bank(bank), &sc.x0, &cfg)?;
            // Consensus target: final mass spread evenly (projection can in
            // principle add mass when a drained node empties, so the target
            // is read off the run, not assumed).
            let kf = traj.len() - 1;
            let target = traj.mass()[kf] / sc.graph.n() as f64;
            let final_err = traj
                .x_at(kf)
                .iter()
                .fold(0.0f64, |a, &v| a.max((v - target).abs()));
            let envelope = disagreement_envelope(&traj, sc.period)
                .ok_or_else(|| Error::invalid("tail window shorter than two forcing periods"))?;
            let monotone = envelope_non_increasing(&envelope);
            Ok((traj.min_state, final_err, monotone, target))
        };
        match run() {
            Ok((min_state, final_err, monotone, target)) => CaseReport {
                name: sc.name.clone(),
                passed: min_state >= 0.0 && final_err <= sc.consensus_tol && monotone,
                details: format!(
                    "min state = {min_state:.3e} (must be ≥ 0), final |x − {target:.4}| = {final_err:.3e} (tol {:.0e}), disagreement envelope non-increasing: {monotone}",
                    sc.consensus_tol
                ),
            },
            Err(err) => CaseReport {
                name: sc.name.clone(),
                passed: false,
                details: format!("run failed: {err}"),
            },
        }
    });
    for case in cases {
        report.absorb(case);
    }
    Ok(report)
}
