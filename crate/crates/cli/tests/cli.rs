use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mcdta::scenario::load_file;
use mcdta_core::{CellId, CommodityId, Control};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mcdta"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Numeric CSV body, header dropped.
fn read_csv(path: &Path) -> Vec<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect()
}

fn header(path: &Path) -> Vec<String> {
    csv::Reader::from_path(path).unwrap().headers().unwrap().iter().map(String::from).collect()
}

fn write_variant(dir: &Path, base: &str, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v = read_json(&scenario(base));
    edit(&mut v);
    let path = dir.join(format!("{base}-variant.json"));
    fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    path
}

fn optimize(name: &str, out: &Path) -> Output {
    let o = run(&["optimize", "--scenario", p(&scenario(name)), "--out", p(out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    o
}

#[test]
fn bundled_scenarios_validate() {
    for name in ["ten_cell", "tiny", "diverge", "zero"] {
        let o = run(&["validate", "--scenario", p(&scenario(name))]);
        assert_eq!(code(&o), 0, "{name}: {}", stderr(&o));
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok:"));
    }
}

#[test]
fn malformed_file_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{ \"network\": ").unwrap();
    assert_eq!(code(&run(&["validate", "--scenario", p(&path)])), 1);
    assert_eq!(code(&run(&["validate", "--scenario", p(&dir.path().join("missing.json"))])), 1);
}

#[test]
fn demand_must_vanish_at_zero() {
    let dir = TempDir::new().unwrap();
    let path = write_variant(dir.path(), "ten_cell", |v| {
        v["fundamentals"]["demand"][0] = serde_json::json!({ "commodity": "a", "piecewise": { "pieces": [[4.0, 0.5]] } });
    });
    let o = run(&["validate", "--scenario", p(&path)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("[fundamental]"), "{}", stderr(&o));
}

#[test]
fn commodity_on_a_dead_end_is_reported() {
    let dir = TempDir::new().unwrap();
    let path = write_variant(dir.path(), "ten_cell", |v| {
        v["commodities"][1]["cells"].as_array_mut().unwrap().push("8".into());
    });
    let o = run(&["validate", "--scenario", p(&path)]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("UnreachableCell") && err.contains("`8`"), "{err}");
}

#[test]
fn step_too_long_for_stability() {
    let dir = TempDir::new().unwrap();
    let path = write_variant(dir.path(), "ten_cell", |v| v["horizon"]["h"] = 0.5.into());
    let out = dir.path().join("out");
    assert_eq!(code(&run(&["validate", "--scenario", p(&path)])), 2);
    for cmd in ["simulate", "optimize"] {
        let o = run(&[cmd, "--scenario", p(&path), "--out", p(&out)]);
        assert_eq!(code(&o), 3, "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn empty_network_stays_empty() {
    let dir = TempDir::new().unwrap();
    let o = run(&["simulate", "--scenario", p(&scenario("zero")), "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "J = 0");
    for file in ["states.csv", "flows.csv", "volume.csv"] {
        let rows = read_csv(&dir.path().join(file));
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r[2..].iter().all(|&v| v == 0.0)), "{file}");
    }
    assert_eq!(read_json(&dir.path().join("summary.json"))["objective"], 0.0);
}

#[test]
fn uncontrolled_cost_is_the_volume_integral() {
    let dir = TempDir::new().unwrap();
    let o = run(&["simulate", "--scenario", p(&scenario("ten_cell")), "--uncontrolled", "--out", p(dir.path())]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let vol = read_csv(&dir.path().join("volume.csv"));
    assert_eq!(vol.len(), 41);
    let j: f64 = 0.125 * vol[..40].iter().map(|r| r[2]).sum::<f64>();
    let summary = read_json(&dir.path().join("summary.json"));
    let reported = summary["objective"].as_f64().unwrap();
    assert!((j - reported).abs() <= 1e-9, "{j} vs {reported}");
    assert!((reported - 45.598997).abs() <= 1e-6, "{reported}");
    // mass balance of the first cell: inflow 1 per commodity, no predecessors
    let states = read_csv(&dir.path().join("states.csv"));
    let flows = read_csv(&dir.path().join("flows.csv"));
    let sum = |row: &[f64], names: &[String], prefix: &str| -> f64 {
        names.iter().zip(row).filter(|(n, _)| n.starts_with(prefix)).map(|(_, v)| v).sum()
    };
    let (sh, fh) = (header(&dir.path().join("states.csv")), header(&dir.path().join("flows.csv")));
    let (x0, x1) = (sum(&states[0], &sh, "1/"), sum(&states[1], &sh, "1/"));
    let out = sum(&flows[0], &fh, "1>");
    assert!(out > 0.0);
    assert!((x1 - (x0 + 0.125 * (2.0 - out))).abs() <= 1e-12);
}

#[test]
fn optimize_then_replay_and_verify() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("opt");
    let lp = dir.path().join("ten_cell.lp");
    let o = run(&["optimize", "--scenario", p(&scenario("ten_cell")), "--out", p(&out), "--lp-dump", p(&lp)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read_json(&out.join("summary.json"));
    let obj = &summary["objectives"];
    let (free, relaxed, recovered) =
        (obj["uncontrolled"].as_f64().unwrap(), obj["relaxed"].as_f64().unwrap(), obj["recovered"].as_f64().unwrap());
    assert!((free - 45.598997).abs() <= 1e-6);
    assert!((relaxed - 35.406272).abs() <= 1e-5, "{relaxed}");
    assert!((recovered - relaxed).abs() <= 1e-7 * (1.0 + relaxed));
    assert_eq!(summary["tightness"]["passed"], true);
    assert_eq!(summary["kkt"]["passed"], true);
    assert_eq!(summary["volume"]["below_uncontrolled"], true);
    assert_eq!(obj["recovered_not_worse"], true);
    assert!(fs::read_to_string(&lp).unwrap().contains("Subject To"));

    // manifest lists exactly what was written
    let listed: BTreeSet<String> = summary["manifest"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    let on_disk: BTreeSet<String> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    let expected: BTreeSet<String> = on_disk.iter().cloned().chain([lp.display().to_string()]).collect();
    assert_eq!(listed, expected);
    for f in ["states.csv", "flows.csv", "volume.csv", "controls.json", "relaxed.json", "volume.svg", "outflow.svg", "summary.json"] {
        assert!(on_disk.contains(f), "{f} missing");
    }
    let svg = fs::read_to_string(out.join("volume.svg")).unwrap();
    assert!(svg.contains("#1f77b4") && svg.contains("#d62728"));

    // replaying the recovered controls reproduces the optimizer's trajectory
    let replay = dir.path().join("replay");
    let r = run(&["simulate", "--scenario", p(&scenario("ten_cell")), "--controls", p(&out.join("controls.json")), "--out", p(&replay)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let (a, b) = (read_csv(&out.join("states.csv")), read_csv(&replay.join("states.csv")));
    assert_eq!(a.len(), b.len());
    let dev = a.iter().zip(&b).flat_map(|(u, v)| u.iter().zip(v).map(|(x, y)| (x - y).abs())).fold(0.0, f64::max);
    assert!(dev <= 1e-7, "state deviation {dev}");
    let j_replay = read_json(&replay.join("summary.json"))["objective"].as_f64().unwrap();
    assert!((j_replay - recovered).abs() <= 1e-7, "{j_replay} vs {recovered}");

    let v = run(&["verify", "--scenario", p(&scenario("ten_cell")), "--trajectory", p(&out.join("relaxed.json"))]);
    assert_eq!(code(&v), 0, "{}", stderr(&v));
    let report: Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["kkt"]["passed"], true);

    // extra volume in cell 5 leaves less room than the flow already sent in
    let mut rel = read_json(&out.join("relaxed.json"));
    let slot = rel["slots"].as_array().unwrap().iter().position(|s| s == "5/a").unwrap();
    let step = 3;
    let x = rel["x"][step][slot].as_f64().unwrap();
    rel["x"][step][slot] = (x + 1.0).into();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, serde_json::to_string(&rel).unwrap()).unwrap();
    let v = run(&["verify", "--scenario", p(&scenario("ten_cell")), "--trajectory", p(&bad)]);
    assert_eq!(code(&v), 5);
    let report: Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(report["feasibility"]["passed"], false);
    let worst = &report["feasibility"]["worst_capacity"];
    assert_eq!(worst["row"], "supply");
    assert_eq!(worst["cell"], "5");
    assert_eq!(worst["step"], step);

    // a trajectory for another network is a dimension mismatch
    let v = run(&["verify", "--scenario", p(&scenario("tiny")), "--trajectory", p(&out.join("relaxed.json"))]);
    assert_eq!(code(&v), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    optimize("diverge", &a);
    optimize("diverge", &b);
    for f in ["states.csv", "flows.csv", "volume.csv", "controls.json", "relaxed.json", "volume.svg", "outflow.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn plot_cell_must_exist() {
    let dir = TempDir::new().unwrap();
    let o = run(&["simulate", "--scenario", p(&scenario("tiny")), "--plot-cell", "nowhere", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
}

/// Best cost over a grid of speed limits on the upstream cell, everything
/// else uncontrolled.
fn grid_oracle(path: &Path, grid: &[f64]) -> f64 {
    let sc = load_file(path).unwrap();
    let p = &sc.problem;
    let net = &p.network;
    let n = p.n_steps();
    let per_step: Vec<Control> = grid
        .iter()
        .flat_map(|&ua| grid.iter().map(move |&ub| (ua, ub)))
        .map(|(ua, ub)| {
            let mut u = sc.baseline.clone();
            u.alpha[net.idx(CellId(0), CommodityId(0))] = ua;
            u.alpha[net.idx(CellId(0), CommodityId(1))] = ub;
            u
        })
        .collect();
    let mut best = f64::INFINITY;
    let mut pick = vec![0usize; n];
    loop {
        let controls: Vec<Control> = pick.iter().map(|&c| per_step[c].clone()).collect();
        if let Ok(tr) = p.simulate(&controls) {
            best = best.min(p.cost_of(&tr));
        }
        let mut t = 0;
        while t < n && pick[t] + 1 == per_step.len() {
            pick[t] = 0;
            t += 1;
        }
        if t == n {
            return best;
        }
        pick[t] += 1;
    }
}

#[test]
fn tiny_optimum_matches_grid_search() {
    let dir = TempDir::new().unwrap();
    optimize("tiny", dir.path());
    let summary = read_json(&dir.path().join("summary.json"));
    let recovered = summary["objectives"]["recovered"].as_f64().unwrap();
    let best = grid_oracle(&scenario("tiny"), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    // grid points are feasible controls, so the optimum cannot be worse
    assert!(recovered <= best + 1e-9, "{recovered} vs {best}");
    assert!(best - recovered <= 0.05, "{recovered} vs {best}");
}

#[test]
fn zero_scenario_optimum_is_trivial() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("opt");
    optimize("zero", &out);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["objectives"]["relaxed"], 0.0);
    assert_eq!(summary["objectives"]["recovered"], 0.0);
    let controls = read_json(&out.join("controls.json"));
    for step in controls["controls"].as_array().unwrap() {
        assert!(step["alpha"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).all(|a| a == 1.0));
        // a chain: every cell but the last sends everything to its successor
        let r = &step["routing"][0];
        assert_eq!(r[0][1], 1.0);
        assert_eq!(r[1][2], 1.0);
    }

    // an all-zero trajectory without multipliers certifies too
    let mut rel = read_json(&out.join("relaxed.json"));
    for key in ["x", "f", "mu"] {
        for row in rel[key].as_array_mut().unwrap() {
            for v in row.as_array_mut().unwrap() {
                *v = 0.0.into();
            }
        }
    }
    rel.as_object_mut().unwrap().remove("duals");
    let path = dir.path().join("zero.json");
    fs::write(&path, serde_json::to_string(&rel).unwrap()).unwrap();
    let v = run(&["verify", "--scenario", p(&scenario("zero")), "--trajectory", p(&path)]);
    assert_eq!(code(&v), 0, "{}", String::from_utf8_lossy(&v.stdout));
    let report: Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(report["objective"], 0.0);
    assert_eq!(report["feasibility"]["max_equality"], 0.0);
    assert_eq!(report["tightness"]["recovered_cost"], 0.0);
    assert!(report["kkt"].is_null());
}
