//! The four commands. Each returns the process exit code.

use std::path::{Path, PathBuf};

use mcdta_core::optimality::{kkt_residuals, KktReport};
use mcdta_core::pipeline::{optimize, refine_below_curve, PipelineError};
use mcdta_core::recover::{recover_controls, verify_tightness, TightnessReport};
use mcdta_core::relax::{discretize, embed_simulation, CapacityKind, FeasibilityReport, ProgramIR, RelaxedTrajectory, RowLocation};
use mcdta_core::sim::SimError;
use mcdta_core::solve::{SolveOptions, SolveResult, SolveStatus};
use mcdta_core::{CellId, Control};
use serde_json::{json, Value};

use crate::artifacts::{
    cell_outflow, flows_csv, states_csv, total_volume, volume_csv, Columns, ControlsFile, Duals, OutDir, RelaxedFile,
};
use crate::lpdump::write_lp;
use crate::plot::{color, line_chart, Series, BLUE, RED};
use crate::scenario::{load_file, Labels, LoadError, Loaded};

pub const EXIT_PARSE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_CFL: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_CERTIFICATE: i32 = 5;

/// Flows and slacks at or below this count as zero.
const ZERO_FLOW: f64 = 1e-6;
/// Largest constraint violation accepted from an external trajectory.
const FEASIBILITY_TOL: f64 = 1e-6;

/// A command that stops early: exit code and message for stderr.
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

type Outcome = Result<i32, Failure>;

fn io_failure(what: &str, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_INVALID, format!("{what}: {e}"))
}

/// Loads a scenario; a step-size-only failure gets its own exit code unless
/// `cfl_is_invalid`.
fn load(path: &Path, cfl_is_invalid: bool) -> Result<Loaded, Failure> {
    load_file(path).map_err(|e| {
        let code = match &e {
            LoadError::Io(_) | LoadError::Parse(_) => EXIT_PARSE,
            LoadError::Invalid { cfl_only: true, .. } if !cfl_is_invalid => EXIT_CFL,
            LoadError::Invalid { .. } => EXIT_INVALID,
        };
        Failure::new(code, e.to_string())
    })
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::CflViolation { .. } => Failure::new(EXIT_CFL, e.to_string()),
        _ => Failure::new(EXIT_INVALID, e.to_string()),
    }
}

fn resolve_plot_cell(sc: &Loaded, flag: Option<&str>) -> Result<CellId, Failure> {
    match flag {
        Some(name) => sc.labels.find_cell(name).ok_or_else(|| Failure::new(EXIT_INVALID, format!("--plot-cell: unknown cell `{name}`"))),
        None => Ok(sc.plot_cell.unwrap_or(CellId(0))),
    }
}

fn grid_json(sc: &Loaded) -> Value {
    let p = &sc.problem;
    json!({
        "h": p.config.h,
        "horizon": p.config.horizon,
        "steps": p.n_steps(),
        "stability_bound": p.fundamentals.max_stable_step(&p.network),
    })
}

pub fn tightness_json(t: &TightnessReport) -> Value {
    json!({
        "passed": t.passed(),
        "max_state_deviation": t.max_state_deviation,
        "min_gamma": t.min_gamma,
        "recovered_cost": t.recovered_cost,
        "relaxed_cost": t.relaxed_cost,
        "simulation_error": t.simulation_error.as_ref().map(|e| e.to_string()),
        "state_ok": t.state_ok,
        "gamma_ok": t.gamma_ok,
        "cost_ok": t.cost_ok,
    })
}

pub fn kkt_json(k: &KktReport) -> Value {
    json!({
        "passed": k.passed(),
        "stationarity": k.stationarity,
        "complementarity": k.complementarity,
        "primal_feasibility": k.primal_feasibility,
        "dual_feasibility": k.dual_feasibility,
        "terminal_costate": k.terminal_costate,
        "gap": k.gap,
    })
}

fn status_name(s: &SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible { .. } => "infeasible",
        SolveStatus::Unbounded { .. } => "unbounded",
        SolveStatus::IterationLimit => "iteration-limit",
    }
}

fn solver_json(ir: &ProgramIR, res: &SolveResult) -> Value {
    json!({
        "status": status_name(&res.status),
        "iterations": res.iterations,
        "objective": res.objective,
        "dual_objective": res.dual_objective,
        "primal_residual": res.residuals.primal,
        "dual_residual": res.residuals.dual,
        "gap": res.residuals.gap,
        "variables": ir.lp.n_vars(),
        "equality_rows": ir.lp.eq_rhs.len(),
        "capacity_rows": ir.lp.ineq_rhs.len(),
    })
}

fn describe_location(l: &Labels, cols: &Columns, loc: &RowLocation) -> Value {
    match *loc {
        RowLocation::Equality(row) => json!({ "row": "equality", "detail": format!("{row:?}") }),
        RowLocation::Capacity(row) => match row.kind {
            CapacityKind::Supply { cell, piece } => {
                json!({ "row": "supply", "step": row.step, "cell": l.cell(cell), "piece": piece })
            }
            CapacityKind::Demand { slot, piece } => {
                json!({ "row": "demand", "step": row.step, "slot": cols.slots[slot], "piece": piece })
            }
        },
        RowLocation::Bound(v) => json!({ "row": "sign", "detail": format!("{v:?}") }),
    }
}

fn feasibility_json(ir: &ProgramIR, l: &Labels, cols: &Columns, rep: &FeasibilityReport, rt: &RelaxedTrajectory) -> Value {
    let slack = ir.capacity_slack(rt);
    let worst_capacity = slack
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .filter(|(_, s)| **s < 0.0)
        .map(|(r, s)| {
            let mut v = describe_location(l, cols, &RowLocation::Capacity(ir.ineq_rows[r]));
            v["violation"] = json!(-s);
            v
        });
    json!({
        "passed": rep.max() <= FEASIBILITY_TOL,
        "max_equality": rep.max_equality,
        "max_capacity": rep.max_capacity,
        "max_sign": rep.max_bound,
        "worst": rep.worst.map(|(loc, v)| {
            let mut d = describe_location(l, cols, &loc);
            d["violation"] = json!(v);
            d
        }),
        "worst_capacity": worst_capacity,
    })
}

/// Slots whose outflow is held at zero from the first step while vehicles
/// wait, and the receiving cells whose supply stays tight meanwhile.
fn blocking_json(sc: &Loaded, ir: &ProgramIR, rt: &RelaxedTrajectory) -> Value {
    let p = &sc.problem;
    let net = &p.network;
    let l = &sc.labels;
    let slack = ir.capacity_slack(rt);
    let n = rt.f.len();
    let mut found = Vec::new();
    for i in net.cells() {
        let out = cell_outflow(net, rt, i);
        for k in net.commodity_ids() {
            let Some(s) = net.slot(i, k) else { continue };
            let d = net.idx(i, k);
            let waiting = |t: usize| p.fundamentals.demand_value(d, rt.x[t][s]) > ZERO_FLOW;
            let held = (0..n).take_while(|&t| waiting(t) && out[k.0][t] <= ZERO_FLOW).count();
            if held == 0 {
                continue;
            }
            let downstream: Vec<CellId> = {
                let mut v: Vec<CellId> = net.arcs().iter().filter(|a| a.from == i).map(|a| a.to).collect();
                v.dedup();
                v
            };
            let tight: Vec<&str> = downstream
                .iter()
                .filter(|&&j| {
                    (0..held).all(|t| {
                        ir.ineq_rows.iter().enumerate().any(|(r, row)| {
                            row.step == t
                                && matches!(row.kind, CapacityKind::Supply { cell, .. } if cell == j)
                                && slack[r] <= ZERO_FLOW
                        })
                    })
                })
                .map(|&j| l.cell(j))
                .collect();
            found.push(json!({
                "cell": l.cell(i),
                "commodity": l.commodity(k),
                "steps": held,
                "until_time": held as f64 * p.config.h,
                "released": held < n && out[k.0][held] > ZERO_FLOW,
                "tight_supply_cells": tight,
            }));
        }
    }
    Value::Array(found)
}

fn write_json(out: &mut OutDir, name: &str, v: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(v).map_err(|e| io_failure(name, e))?;
    out.write(name, format!("{text}\n").as_bytes()).map_err(|e| io_failure(name, e))
}

fn write_bytes(out: &mut OutDir, name: &str, bytes: std::io::Result<Vec<u8>>) -> Result<(), Failure> {
    let b = bytes.map_err(|e| io_failure(name, e))?;
    out.write(name, &b).map_err(|e| io_failure(name, e))
}

fn outflow_plot(sc: &Loaded, rt: &RelaxedTrajectory, cell: CellId) -> String {
    let net = &sc.problem.network;
    let h = sc.problem.config.h;
    let flows = cell_outflow(net, rt, cell);
    let series: Vec<Series> = net
        .commodity_ids()
        .filter(|&k| net.is_utilizable(cell, k))
        .map(|k| Series {
            name: sc.labels.commodity(k),
            color: color(k.0),
            points: flows[k.0].iter().enumerate().map(|(t, &v)| (t as f64 * h, v)).collect(),
        })
        .collect();
    line_chart(&format!("Outflow of cell {}", sc.labels.cell(cell)), "time", "outflow", &series)
}

fn volume_points(v: &[f64], h: f64) -> Vec<(f64, f64)> {
    v.iter().enumerate().map(|(t, &y)| (t as f64 * h, y)).collect()
}

pub fn validate(scenario: &Path) -> Outcome {
    let sc = load(scenario, true)?;
    let p = &sc.problem;
    println!(
        "ok: {}cells {}, commodities {}, steps {} of {} (stability bound {})",
        if sc.name.is_empty() { String::new() } else { format!("{}: ", sc.name) },
        p.network.n_cells(),
        p.network.n_commodities(),
        p.n_steps(),
        p.config.h,
        p.fundamentals.max_stable_step(&p.network),
    );
    Ok(0)
}

pub struct SimulateArgs {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub controls: Option<PathBuf>,
    pub plot_cell: Option<String>,
}

pub fn simulate(a: &SimulateArgs) -> Outcome {
    let sc = load(&a.scenario, false)?;
    let p = &sc.problem;
    let net = &p.network;
    let h = p.config.h;
    let plot_cell = resolve_plot_cell(&sc, a.plot_cell.as_deref())?;
    let controls: Vec<Control> = match &a.controls {
        None => sc.baseline_controls(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
            let file: ControlsFile =
                serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
            file.to_controls(net, &sc.labels, h, p.n_steps()).map_err(|e| Failure::new(EXIT_INVALID, e))?
        }
    };
    let traj = p.simulate(&controls).map_err(sim_failure)?;
    let cost = p.cost_of(&traj);
    let rt = embed_simulation(net, &traj);
    let cols = Columns::new(net, &sc.labels);
    let volume = total_volume(&rt);

    let mut out = OutDir::create(&a.out).map_err(|e| io_failure("--out", e))?;
    write_bytes(&mut out, "states.csv", states_csv(&rt, &cols, h))?;
    write_bytes(&mut out, "flows.csv", flows_csv(&rt, &cols, h))?;
    write_bytes(&mut out, "volume.csv", volume_csv(&[("total", &volume)], h))?;
    let label = if a.controls.is_some() { "controlled" } else { "uncontrolled" };
    let color = if a.controls.is_some() { RED } else { BLUE };
    let chart = line_chart("Total volume", "time", "vehicles", &[Series { name: label, color, points: volume_points(&volume, h) }]);
    write_bytes(&mut out, "volume.svg", Ok(chart.into_bytes()))?;
    write_bytes(&mut out, "outflow.svg", Ok(outflow_plot(&sc, &rt, plot_cell).into_bytes()))?;
    let mut manifest = out.manifest.clone();
    manifest.push("summary.json".into());
    let summary = json!({
        "command": "simulate",
        "scenario": a.scenario.display().to_string(),
        "name": sc.name,
        "grid": grid_json(&sc),
        "controls": a.controls.as_ref().map_or("uncontrolled".to_string(), |c| c.display().to_string()),
        "objective": cost,
        "min_gamma": traj.min_gamma(),
        "manifest": manifest,
    });
    write_json(&mut out, "summary.json", &summary)?;
    println!("J = {cost}");
    Ok(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// The interior-point optimum as returned.
    Central,
    /// An optimum whose total volume never exceeds the uncontrolled one, if
    /// the optimal face holds one.
    BelowUncontrolled,
}

pub struct OptimizeArgs {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub tol: f64,
    pub max_iters: usize,
    pub plot_cell: Option<String>,
    pub lp_dump: Option<PathBuf>,
    pub select: Selection,
}

pub fn optimize_cmd(a: &OptimizeArgs) -> Outcome {
    let sc = load(&a.scenario, false)?;
    let p = &sc.problem;
    let net = &p.network;
    let h = p.config.h;
    let plot_cell = resolve_plot_cell(&sc, a.plot_cell.as_deref())?;
    let opts = SolveOptions { tol: a.tol, max_iters: a.max_iters };
    let baseline = p.simulate(&sc.baseline_controls()).ok();
    let free_cost = baseline.as_ref().map(|b| p.cost_of(b));
    let free_volume = baseline.as_ref().map(|b| b.total_volume());

    let mut out = OutDir::create(&a.out).map_err(|e| io_failure("--out", e))?;
    if let Some(path) = &a.lp_dump {
        std::fs::write(path, write_lp(&discretize(p))).map_err(|e| io_failure("--lp-dump", e))?;
    }
    let o = optimize(p, &opts).map_err(|e| match e {
        PipelineError::Recover(_) => Failure::new(EXIT_CERTIFICATE, e.to_string()),
        _ => Failure::new(EXIT_SOLVER, e.to_string()),
    })?;

    let mut selection = json!({ "rule": "central", "applied": true });
    let (mut rt, mut controls, mut tight) = (o.polished.clone(), o.recovered.controls.clone(), o.tightness.clone());
    if a.select == Selection::BelowUncontrolled {
        selection = match &free_volume {
            None => json!({ "rule": "below-uncontrolled", "applied": false, "note": "uncontrolled run failed" }),
            Some(curve) => match refine_below_curve(p, &o.ir, o.solve.objective, curve, &opts) {
                Ok(r) if r.tightness.passed() => {
                    (rt, controls, tight) = (r.polished, r.recovered.controls, r.tightness);
                    json!({ "rule": "below-uncontrolled", "applied": true })
                }
                Ok(_) => json!({ "rule": "below-uncontrolled", "applied": false, "note": "selected optimum failed the tightness certificate" }),
                Err(e) => json!({ "rule": "below-uncontrolled", "applied": false, "note": e.to_string() }),
            },
        };
    }
    let volume = total_volume(&rt);
    let cols = Columns::new(net, &sc.labels);

    write_bytes(&mut out, "states.csv", states_csv(&rt, &cols, h))?;
    write_bytes(&mut out, "flows.csv", flows_csv(&rt, &cols, h))?;
    let empty = Vec::new();
    let free_v = free_volume.as_ref().unwrap_or(&empty);
    write_bytes(&mut out, "volume.csv", volume_csv(&[("controlled", &volume), ("uncontrolled", free_v)], h))?;
    write_json(&mut out, "controls.json", &ControlsFile::new(net, &sc.labels, h, &controls))?;
    // any optimal dual certifies any optimal primal, so the original duals
    // go with the selected point too
    let duals = Duals { y: o.solve.y.clone(), eta: o.solve.eta.clone() };
    write_json(&mut out, "relaxed.json", &RelaxedFile::new(&rt, &cols, h, Some(duals)))?;
    let chart = line_chart(
        "Total volume",
        "time",
        "vehicles",
        &[
            Series { name: "uncontrolled", color: BLUE, points: volume_points(free_v, h) },
            Series { name: "optimal", color: RED, points: volume_points(&volume, h) },
        ],
    );
    write_bytes(&mut out, "volume.svg", Ok(chart.into_bytes()))?;
    write_bytes(&mut out, "outflow.svg", Ok(outflow_plot(&sc, &rt, plot_cell).into_bytes()))?;

    let (excess, excess_step) = free_volume.as_ref().map_or((None, None), |f| {
        let (t, e) = volume.iter().zip(f).map(|(c, u)| c - u).enumerate().fold((0, f64::NEG_INFINITY), |m, (t, e)| if e > m.1 { (t, e) } else { m });
        (Some(e), Some(t))
    });
    let recovered = tight.recovered_cost;
    let mut manifest = out.manifest.clone();
    manifest.push("summary.json".into());
    if let Some(path) = &a.lp_dump {
        manifest.push(path.display().to_string());
    }
    let summary = json!({
        "command": "optimize",
        "scenario": a.scenario.display().to_string(),
        "name": sc.name,
        "grid": grid_json(&sc),
        "objectives": {
            "uncontrolled": free_cost,
            "relaxed": tight.relaxed_cost,
            "recovered": recovered,
            "recovered_not_worse": free_cost.map(|f| recovered <= f + 1e-9),
        },
        "selection": selection,
        "volume": {
            "below_uncontrolled": excess.map(|e| e <= 1e-7),
            "max_excess": excess,
            "max_excess_step": excess_step,
        },
        "blocking": blocking_json(&sc, &o.ir, &rt),
        "tightness": tightness_json(&tight),
        "kkt": kkt_json(&o.kkt),
        "costate": {
            "recursion_residual": o.costate.recursion_residual,
            "kinks": o.costate.kinks.len(),
        },
        "solver": solver_json(&o.ir, &o.solve),
        "polish_change": o.polish_change,
        "recovery": {
            "max_clamp": o.recovered.max_clamp,
            "max_renormalization": o.recovered.max_renormalization,
        },
        "plot_cell": sc.labels.cell(plot_cell),
        "manifest": manifest,
    });
    write_json(&mut out, "summary.json", &summary)?;

    if let Some(f) = free_cost {
        println!("J uncontrolled = {f}");
    }
    println!("J relaxed      = {}", tight.relaxed_cost);
    println!("J recovered    = {recovered}");
    println!("tightness {}, KKT {}", pass(tight.passed()), pass(o.kkt.passed()));
    if !tight.passed() {
        return Err(Failure::new(EXIT_CERTIFICATE, format!("tightness certificate failed: {tight:?}")));
    }
    Ok(0)
}

fn pass(ok: bool) -> &'static str {
    if ok { "passed" } else { "FAILED" }
}

pub struct VerifyArgs {
    pub scenario: PathBuf,
    pub trajectory: PathBuf,
    pub out: Option<PathBuf>,
}

pub fn verify(a: &VerifyArgs) -> Outcome {
    let sc = load(&a.scenario, false)?;
    let p = &sc.problem;
    let net = &p.network;
    let path = &a.trajectory;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    let file: RelaxedFile = serde_json::from_str(&text).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    let cols = Columns::new(net, &sc.labels);
    let rt = file.to_trajectory(&cols, p.config.h, p.n_steps()).map_err(|e| Failure::new(EXIT_INVALID, e))?;
    let ir = discretize(p);
    let feas = ir.residuals(&rt);
    let feasibility = feasibility_json(&ir, &sc.labels, &cols, &feas, &rt);

    let (tightness, recovery_error) = match recover_controls(net, &p.fundamentals, &rt) {
        Ok(rec) => (Some(verify_tightness(p, &rt, &rec.controls)), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let kkt = match &file.duals {
        None => None,
        Some(d) => {
            if d.y.len() != ir.lp.eq_rhs.len() || d.eta.len() != ir.lp.ineq_rhs.len() {
                return Err(Failure::new(
                    EXIT_INVALID,
                    format!(
                        "duals have {} and {} entries, the program has {} equality and {} capacity rows",
                        d.y.len(),
                        d.eta.len(),
                        ir.lp.eq_rhs.len(),
                        ir.lp.ineq_rhs.len()
                    ),
                ));
            }
            Some(kkt_residuals(&ir, &as_solution(&ir, &rt, d)))
        }
    };
    let ok = feas.max() <= FEASIBILITY_TOL
        && tightness.as_ref().is_some_and(|t| t.passed())
        && kkt.as_ref().is_none_or(|k| k.passed());
    let report = json!({
        "command": "verify",
        "scenario": a.scenario.display().to_string(),
        "trajectory": path.display().to_string(),
        "passed": ok,
        "objective": ir.objective(&rt),
        "feasibility": feasibility,
        "tightness": tightness.as_ref().map(tightness_json),
        "recovery_error": recovery_error,
        "kkt": kkt.as_ref().map(kkt_json),
    });
    let text = serde_json::to_string_pretty(&report).map_err(|e| io_failure("report", e))?;
    println!("{text}");
    if let Some(dir) = &a.out {
        let mut out = OutDir::create(dir).map_err(|e| io_failure("--out", e))?;
        out.write("verify.json", format!("{text}\n").as_bytes()).map_err(|e| io_failure("verify.json", e))?;
    }
    Ok(if ok { 0 } else { EXIT_CERTIFICATE })
}

/// Primal-dual pair in solver form, so the KKT check can run on a
/// trajectory read from disk.
fn as_solution(ir: &ProgramIR, rt: &RelaxedTrajectory, d: &Duals) -> SolveResult {
    let lp = &ir.lp;
    let x = rt.to_vector(&ir.layout);
    SolveResult {
        status: SolveStatus::Optimal,
        reduced_costs: lp.reduced_costs(&d.y, &d.eta),
        objective: lp.objective(&x),
        dual_objective: lp.dual_objective(&d.y, &d.eta),
        iterations: 0,
        residuals: lp.residuals(&x, &d.y, &d.eta),
        x,
        y: d.y.clone(),
        eta: d.eta.clone(),
    }
}
