//! The three subcommands: controller synthesis, closed-loop simulation, and
//! the randomized verification suites.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use flowbal::controller::{
    corollary1_bank, synthesize_bank, ControllerBank, EdgeLaw, SaturationController,
};
use flowbal::engine::{
    check_conservation, lyapunov, simulate, write_csv, CertificateReport, ControlLaw, Method,
    SimConfig,
};
use flowbal::graph::partition_edges;
use flowbal::plant::{Constraint, NodeDynamics, PlantConfig};
use flowbal::suites::{self, SuiteReport};
use flowbal::synthesis::{compute_m, compute_m_nonlinear, SteadyState};
use flowbal::{Error, Result};

use crate::scenario::{
    build_model, ControllerSpec, Eta0Spec, MethodSpec, Model, Scenario, SimSpec,
};

/// Exit-code contract: 0 pass, 1 certificate/suite failure, 2 input error,
/// 3 assumption violation, 4 numeric failure.
pub fn error_exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) => 2,
        Error::AssumptionViolated(_) => 3,
        Error::NumericFailure { .. } => 4,
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn fmt_cell(v: f64) -> String {
    let s = format!("{v:>9.4}");
    // Values that round to zero at display precision print as plain zero.
    if s.trim_start() == "-0.0000" {
        format!("{:>9.4}", 0.0)
    } else {
        s
    }
}

fn fmt_matrix(out: &mut String, m: &DMatrix<f64>, indent: &str) {
    for i in 0..m.nrows() {
        let _ = write!(out, "{indent}[");
        for j in 0..m.ncols() {
            let _ = write!(out, " {}", fmt_cell(m[(i, j)]));
        }
        let _ = writeln!(out, " ]");
    }
}

fn fmt_row(values: &[f64]) -> String {
    let mut s = String::from("[");
    for &v in values {
        let _ = write!(s, " {}", fmt_cell(v));
    }
    s.push_str(" ]");
    s
}

#[derive(Serialize)]
struct ControllerRow {
    edge: usize,
    head: usize,
    tail: usize,
    dynamic: bool,
    gain: f64,
    /// Output row acting on the edge's internal state; absent for static laws.
    h: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct SynthesisOutput {
    scenario: String,
    nodes: usize,
    edges: usize,
    /// Internal-state dimension of the signal generator.
    p: usize,
    /// Number of demand channels.
    q: usize,
    /// 1-based indices of the spanning-tree edges carrying steady flow.
    tree_edges: Vec<usize>,
    /// 1-based indices of the cycle edges pinned to zero steady flow.
    cycle_edges: Vec<usize>,
    residual: f64,
    y: Vec<Vec<f64>>,
    /// Steady flows in internal-state coordinates: λ_w = M_w · w.
    m_w: Vec<Vec<f64>>,
    /// Steady flows in demand coordinates (λ = M_d · d); present when the
    /// two coordinate systems differ.
    #[serde(skip_serializing_if = "Option::is_none")]
    m_d: Option<Vec<Vec<f64>>>,
    /// Drift-compensation map for gradient node dynamics.
    #[serde(skip_serializing_if = "Option::is_none")]
    m_state: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coordinate_note: Option<String>,
    controllers: Vec<ControllerRow>,
}

fn controller_rows(model: &Model, bank: &ControllerBank) -> Vec<ControllerRow> {
    bank.controllers()
        .iter()
        .map(|ctrl| {
            let (head, tail) = model.graph.edges()[ctrl.edge];
            let (dynamic, h) = match &ctrl.law {
                EdgeLaw::Dynamic { h, .. } => (true, Some(h.iter().copied().collect())),
                EdgeLaw::Static => (false, None),
            };
            ControllerRow {
                edge: ctrl.edge + 1,
                head: head + 1,
                tail: tail + 1,
                dynamic,
                gain: bank.gains()[ctrl.edge],
                h,
            }
        })
        .collect()
}

const COORDINATE_NOTE: &str = "the controller output rows H_k act on the \
p-dimensional internal state w, not on the q demand channels; entries of the \
demand-coordinate map are not valid output rows when the two coordinate \
systems differ, and using them leaves a persistent regulation error";

pub fn cmd_synthesize(path: &Path, format: &str) -> std::result::Result<(), (u8, String)> {
    let sc = crate::scenario::load(path).map_err(|msg| (2, msg))?;
    let output = synthesize_output(&sc).map_err(|e| (error_exit_code(&e), e.to_string()))?;
    if format == "json" {
        println!("{}", serde_json::to_string_pretty(&output).unwrap());
    } else {
        print!("{}", render_synthesis(&output));
    }
    Ok(())
}

fn synthesize_output(sc: &Scenario) -> Result<SynthesisOutput> {
    let model = build_model(sc)?;
    let part = partition_edges(&model.graph)?;
    let gains = internal_model_gains(sc)?;

    let (ss, m_state, bank): (SteadyState, Option<Vec<Vec<f64>>>, ControllerBank) =
        match &model.dynamics {
            NodeDynamics::Linear => {
                let ss = compute_m(&model.graph, &part, &model.p_eff)?;
                let bank = synthesize_bank(&ss, &model.e, gains)?;
                (ss, None, bank)
            }
            NodeDynamics::Gradient(_) => {
                let nss = compute_m_nonlinear(&model.graph, &part, &model.p_eff)?;
                let bank = corollary1_bank(&nss, &model.e, &model.dynamics, gains)?;
                let m1 = matrix_rows(&nss.m1);
                let ss = compute_m(&model.graph, &part, &model.p_eff)?;
                (ss, Some(m1), bank)
            }
        };

    // When the generator output map is not the identity, the demand-coordinate
    // and internal-state-coordinate steady-flow maps differ; print both and
    // flag the distinction.
    let gamma_is_identity = model.e.p() == model.e.q()
        && (model.e.gamma() - DMatrix::identity(model.e.q(), model.e.p())).amax() == 0.0;
    let (m_d, coordinate_note) = if gamma_is_identity {
        (None, None)
    } else {
        let ss_d = compute_m(&model.graph, &part, &model.p)?;
        (
            Some(matrix_rows(&ss_d.m)),
            Some(COORDINATE_NOTE.to_string()),
        )
    };

    Ok(SynthesisOutput {
        scenario: sc.name.clone(),
        nodes: model.graph.n(),
        edges: model.graph.m(),
        p: model.e.p(),
        q: model.e.q(),
        tree_edges: part.a_indices.iter().map(|&k| k + 1).collect(),
        cycle_edges: part.b_indices.iter().map(|&k| k + 1).collect(),
        residual: ss.residual,
        y: matrix_rows(&ss.y),
        m_w: matrix_rows(&ss.m),
        m_d,
        m_state,
        coordinate_note,
        controllers: controller_rows(&model, &bank),
    })
}

fn render_synthesis(out: &SynthesisOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", out.scenario);
    let _ = writeln!(
        s,
        "nodes: {}, edges: {}, internal state dimension p = {}, demand channels q = {}",
        out.nodes, out.edges, out.p, out.q
    );
    let _ = writeln!(
        s,
        "spanning-tree edges: {:?}, cycle edges (zero steady flow): {:?}",
        out.tree_edges, out.cycle_edges
    );
    let _ = writeln!(s, "synthesis residual: {:.3e}", out.residual);
    let _ = writeln!(s, "\nY (imbalance-to-node map):");
    let y = DMatrix::from_fn(out.nodes, out.nodes, |i, j| out.y[i][j]);
    fmt_matrix(&mut s, &y, "  ");
    let _ = writeln!(
        s,
        "\nM (steady flows in internal-state coordinates, λ = M w):"
    );
    for (k, row) in out.m_w.iter().enumerate() {
        let _ = writeln!(s, "  edge {}: {}", k + 1, fmt_row(row));
    }
    if let Some(m_d) = &out.m_d {
        let _ = writeln!(s, "\nM_d (steady flows in demand coordinates, λ = M_d d):");
        for (k, row) in m_d.iter().enumerate() {
            let _ = writeln!(s, "  edge {}: {}", k + 1, fmt_row(row));
        }
    }
    if let Some(m1) = &out.m_state {
        let _ = writeln!(s, "\nM1 (drift-compensation map for gradient nodes):");
        for (k, row) in m1.iter().enumerate() {
            let _ = writeln!(s, "  edge {}: {}", k + 1, fmt_row(row));
        }
    }
    if let Some(note) = &out.coordinate_note {
        let _ = writeln!(s, "\nnote: {note}");
    }
    let _ = writeln!(
        s,
        "\ncontroller table (dynamic: λ_k = H_k η_k − K_k z_k; static: λ_k = −K_k z_k):"
    );
    for row in &out.controllers {
        match &row.h {
            Some(h) => {
                let _ = writeln!(
                    s,
                    "  edge {} ({}→{}): dynamic, K = {}, H = {}",
                    row.edge,
                    row.head,
                    row.tail,
                    row.gain,
                    fmt_row(h)
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    "  edge {} ({}→{}): static,  K = {}",
                    row.edge, row.head, row.tail, row.gain
                );
            }
        }
    }
    s
}

fn internal_model_gains(sc: &Scenario) -> Result<Option<DVector<f64>>> {
    match &sc.controller {
        Some(ControllerSpec::InternalModel {
            gains: Some(gains), ..
        }) => Ok(Some(DVector::from_vec(gains.clone()))),
        _ => Ok(None),
    }
}

#[derive(Serialize)]
struct CheckRow {
    name: String,
    passed: bool,
    detail: String,
}

#[derive(Serialize)]
struct SimulationReport {
    scenario: String,
    step: f64,
    horizon: f64,
    method: String,
    balanced: bool,
    samples: usize,
    certificate: CertificateReport,
    checks: Vec<CheckRow>,
    passed: bool,
}

pub struct SimOverrides<'a> {
    pub step: Option<f64>,
    pub horizon: Option<f64>,
    pub out_dir: &'a Path,
    pub format: &'a str,
}

pub fn cmd_simulate(path: &Path, ov: &SimOverrides) -> std::result::Result<bool, (u8, String)> {
    let sc = crate::scenario::load(path).map_err(|msg| (2, msg))?;
    let report = run_scenario(&sc, ov).map_err(|e| (error_exit_code(&e), e.to_string()))?;
    if ov.format == "json" {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        let c = &report.certificate;
        println!(
            "scenario {}: z tail sup = {:.3e}, storage violations = {}, mass drift = {}",
            report.scenario,
            c.z_tail_sup,
            c.lyap_violations,
            c.mass_drift
                .map_or_else(|| "n/a".to_string(), |d| format!("{d:.3e}")),
        );
        for check in &report.checks {
            println!(
                "  {}: {} — {}",
                check.name,
                if check.passed { "pass" } else { "FAIL" },
                check.detail
            );
        }
        println!("result: {}", if report.passed { "PASS" } else { "FAIL" });
    }
    Ok(report.passed)
}

fn run_scenario(sc: &Scenario, ov: &SimOverrides) -> Result<SimulationReport> {
    let model = build_model(sc)?;
    let controller = sc
        .controller
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("scenario has no controller section".into()))?;
    let x0_vec = sc
        .x0
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("scenario has no x0".into()))?;
    let sim: &SimSpec = sc
        .sim
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("scenario has no sim section".into()))?;

    let step = ov.step.unwrap_or(sim.step);
    let horizon = ov.horizon.unwrap_or(sim.horizon);
    let mut cfg = SimConfig::new(step, horizon);
    cfg.record_stride = sim.record_stride;
    cfg.method = match sim.method {
        MethodSpec::Rk4 => Method::Rk4,
        MethodSpec::ProjectedEuler => Method::ProjectedEuler,
    };
    if let Some(guard) = sim.overflow_guard {
        cfg.overflow_guard = guard;
    }

    let part = partition_edges(&model.graph)?;
    let law = match controller {
        ControllerSpec::InternalModel { gains, eta0 } => {
            let gains = gains.as_ref().map(|g| DVector::from_vec(g.clone()));
            let mut bank = match &model.dynamics {
                NodeDynamics::Linear => {
                    let ss = compute_m(&model.graph, &part, &model.p_eff)?;
                    synthesize_bank(&ss, &model.e, gains)?
                }
                NodeDynamics::Gradient(_) => {
                    let nss = compute_m_nonlinear(&model.graph, &part, &model.p_eff)?;
                    corollary1_bank(&nss, &model.e, &model.dynamics, gains)?
                }
            };
            if *eta0 == Eta0Spec::Replica {
                bank.set_eta0_replica(&model.e)?;
            }
            ControlLaw::Bank(bank)
        }
        ControllerSpec::Saturation { gamma, e0, rho } => {
            let c = match model.constraint {
                Constraint::EdgeSaturation { c } => c,
                _ => {
                    return Err(Error::InvalidInput(
                        "the saturation controller requires the edge_saturation constraint".into(),
                    ))
                }
            };
            let ss = compute_m(&model.graph, &part, &model.p_eff)?;
            let ctl = SaturationController::new(
                c,
                *gamma,
                ss.m.clone(),
                DVector::from_vec(e0.clone()),
                *rho,
            )?;
            // Load-time feasibility gate: reject before any integration.
            ctl.feasibility(&model.e, horizon)?;
            ControlLaw::Saturated(ctl)
        }
    };

    let plant = PlantConfig::new(
        model.graph.clone(),
        model.p_eff.clone(),
        model.dynamics.clone(),
        model.constraint,
    )?;
    let x0 = DVector::from_vec(x0_vec.clone());
    let traj = simulate(&plant, &model.e, &law, &x0, &cfg)?;
    let certificate = lyapunov(&traj);

    let mut checks = Vec::new();
    if matches!(law, ControlLaw::Bank(_)) {
        checks.push(CheckRow {
            name: "storage non-increase".into(),
            passed: certificate.lyap_violations == 0,
            detail: format!(
                "{} storage increases beyond 1e-8·(1+V(0))",
                certificate.lyap_violations
            ),
        });
    }
    if let Some(tol) = sc.certificates.z_tail_tol {
        checks.push(CheckRow {
            name: "z tail".into(),
            passed: certificate.z_tail_sup <= tol,
            detail: format!(
                "sup‖z‖_∞ over the trailing window = {:.3e} (tol {tol:.1e})",
                certificate.z_tail_sup
            ),
        });
    }
    if traj.balanced && traj.mass_invariant {
        let drift = check_conservation(&traj)?;
        checks.push(CheckRow {
            name: "mass conservation".into(),
            passed: drift <= 1e-8,
            detail: format!("max |1ᵀx(t) − 1ᵀx(0)| = {drift:.3e} (tol 1e-8)"),
        });
    }
    if model.constraint == Constraint::Positivity {
        checks.push(CheckRow {
            name: "nonnegative state".into(),
            passed: traj.min_state >= 0.0,
            detail: format!("min over t, i of x_i = {:.3e}", traj.min_state),
        });
    }
    if let Constraint::EdgeSaturation { c } = model.constraint {
        let mut flow_sup = 0.0f64;
        for k in 0..traj.len() {
            for &l in traj.lambda_at(k) {
                flow_sup = flow_sup.max(l.abs());
            }
        }
        checks.push(CheckRow {
            name: "capacity respected".into(),
            passed: flow_sup <= c,
            detail: format!("sup |λ_k| = {flow_sup:.6} (cap {c})"),
        });
        let half = horizon / 2.0;
        let last = traj.last_sat_time;
        checks.push(CheckRow {
            name: "saturation transient finite".into(),
            passed: last.is_none_or(|t| t < half),
            detail: match last {
                Some(t) => format!("last over-capacity command at t = {t:.3} (must be < {half})"),
                None => "saturation never engaged".into(),
            },
        });
    }

    let passed = checks.iter().all(|c| c.passed);

    std::fs::create_dir_all(ov.out_dir)
        .map_err(|e| Error::InvalidInput(format!("cannot create output directory: {e}")))?;
    let csv_path = ov.out_dir.join(format!("{}.csv", sc.name));
    let mut csv =
        std::io::BufWriter::new(std::fs::File::create(&csv_path).map_err(|e| {
            Error::InvalidInput(format!("cannot create {}: {e}", csv_path.display()))
        })?);
    write_csv(&traj, &mut csv)
        .and_then(|()| std::io::Write::flush(&mut csv))
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", csv_path.display())))?;

    let report = SimulationReport {
        scenario: sc.name.clone(),
        step,
        horizon,
        method: match cfg.method {
            Method::Rk4 => "rk4".into(),
            Method::ProjectedEuler => "projected_euler".into(),
        },
        balanced: traj.balanced,
        samples: traj.len(),
        certificate,
        checks,
        passed,
    };
    let json_path = ov.out_dir.join(format!("{}.report.json", sc.name));
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&report).unwrap() + "\n",
    )
    .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", json_path.display())))?;

    Ok(report)
}

type SuiteRunner = fn(u64) -> Result<SuiteReport>;

/// Suite tokens accepted by `verify`, with the runner each one maps to.
const SUITES: &[(&str, SuiteRunner)] = &[
    ("lemma1", suites::run_feedforward),
    ("lemma3", suites::run_replication),
    ("theorem1", suites::run_convergence),
    ("corollary1", suites::run_nonlinear),
    ("saturation", suites::run_saturation),
    ("positivity", suites::run_positivity),
];

pub fn cmd_verify(
    suite: &str,
    seed: u64,
    out_dir: Option<&Path>,
    format: &str,
) -> std::result::Result<bool, (u8, String)> {
    let selected: Vec<&(&str, SuiteRunner)> = if suite == "all" {
        SUITES.iter().collect()
    } else {
        match SUITES.iter().find(|(name, _)| *name == suite) {
            Some(entry) => vec![entry],
            None => {
                let names: Vec<&str> = SUITES.iter().map(|(n, _)| *n).collect();
                return Err((
                    2,
                    format!("unknown suite '{suite}'; expected one of {names:?} or 'all'"),
                ));
            }
        }
    };

    let mut reports = Vec::with_capacity(selected.len());
    for (name, runner) in selected {
        let report = runner(seed).map_err(|e| (error_exit_code(&e), e.to_string()))?;
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)
                .map_err(|e| (2, format!("cannot create output directory: {e}")))?;
            let path = dir.join(format!("{name}.report.json"));
            std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap() + "\n")
                .map_err(|e| (2, format!("cannot write {}: {e}", path.display())))?;
        }
        reports.push(report);
    }

    let all_passed = reports.iter().all(|r| r.passed);
    if format == "json" {
        if reports.len() == 1 {
            println!("{}", serde_json::to_string_pretty(&reports[0]).unwrap());
        } else {
            println!("{}", serde_json::to_string_pretty(&reports).unwrap());
        }
    } else {
        for report in &reports {
            let passed = report.cases.iter().filter(|c| c.passed).count();
            println!(
                "suite {} (seed {}): {} — {}/{} cases",
                report.suite,
                report.seed,
                if report.passed { "PASS" } else { "FAIL" },
                passed,
                report.cases.len()
            );
            for case in report.cases.iter().filter(|c| !c.passed) {
                println!("  FAIL {}: {}", case.name, case.details);
            }
        }
    }
    Ok(all_passed)
}
