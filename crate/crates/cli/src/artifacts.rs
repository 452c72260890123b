//! Files written and read by the commands: trajectory tables, controls and
//! relaxed trajectories.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use mcdta_core::network::RoutingMatrix;
use mcdta_core::relax::RelaxedTrajectory;
use mcdta_core::{CellId, CommodityId, Control, Network};
use serde::{Deserialize, Serialize};

use crate::scenario::Labels;

/// Column names for slots, arcs and exits.
pub struct Columns {
    pub slots: Vec<String>,
    pub arcs: Vec<String>,
    pub exits: Vec<String>,
}

impl Columns {
    pub fn new(net: &Network, l: &Labels) -> Self {
        let slots = net.slots().iter().map(|s| format!("{}/{}", l.cell(s.cell), l.commodity(s.commodity))).collect();
        let arcs = net
            .arcs()
            .iter()
            .map(|a| format!("{}>{}/{}", l.cell(a.from), l.cell(a.to), l.commodity(a.commodity)))
            .collect();
        let exits = net.exits().iter().map(|s| format!("{}>world/{}", l.cell(s.cell), l.commodity(s.commodity))).collect();
        Self { slots, arcs, exits }
    }
}

/// Keeps track of everything written to the output directory.
pub struct OutDir {
    pub dir: PathBuf,
    pub manifest: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), manifest: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> io::Result<()> {
        fs::write(self.dir.join(name), contents)?;
        self.manifest.push(name.to_string());
        Ok(())
    }
}

fn table(header: Vec<String>, rows: impl Iterator<Item = Vec<f64>>, h: f64) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["step".to_string(), "time".to_string()];
    head.extend(header);
    w.write_record(&head)?;
    for (t, row) in rows.enumerate() {
        let mut rec = vec![t.to_string(), (t as f64 * h).to_string()];
        // Display for f64 is the shortest string that parses back exactly
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| e.into_error())
}

pub fn states_csv(rt: &RelaxedTrajectory, cols: &Columns, h: f64) -> io::Result<Vec<u8>> {
    table(cols.slots.clone(), rt.x.iter().cloned(), h)
}

pub fn flows_csv(rt: &RelaxedTrajectory, cols: &Columns, h: f64) -> io::Result<Vec<u8>> {
    let header = cols.arcs.iter().chain(&cols.exits).cloned().collect();
    let rows = rt.f.iter().zip(&rt.mu).map(|(f, mu)| f.iter().chain(mu).copied().collect());
    table(header, rows, h)
}

/// Total volume per step; one column per named series.
pub fn volume_csv(series: &[(&str, &[f64])], h: f64) -> io::Result<Vec<u8>> {
    let n = series.iter().map(|s| s.1.len()).max().unwrap_or(0);
    let rows = (0..n).map(|t| series.iter().map(|s| s.1.get(t).copied().unwrap_or(f64::NAN)).collect());
    table(series.iter().map(|s| s.0.to_string()).collect(), rows, h)
}

pub fn total_volume(rt: &RelaxedTrajectory) -> Vec<f64> {
    rt.x.iter().map(|x| x.iter().sum()).collect()
}

/// Outflow of cell `i` per commodity and step: arcs leaving it plus its exit.
pub fn cell_outflow(net: &Network, rt: &RelaxedTrajectory, i: CellId) -> Vec<Vec<f64>> {
    net.commodity_ids()
        .map(|k| {
            let exit = net.exits().iter().position(|s| s.cell == i && s.commodity == k);
            (0..rt.f.len())
                .map(|t| {
                    let arcs: f64 = net.out_arcs(i, k).map(|a| rt.f[t][a]).sum();
                    arcs + exit.map_or(0.0, |e| rt.mu[t][e])
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepControls {
    pub step: usize,
    /// `alpha[cell][commodity]`.
    pub alpha: Vec<Vec<f64>>,
    /// Per commodity, `routing[from][to]`.
    pub routing: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlsFile {
    pub h: f64,
    pub steps: usize,
    pub cells: Vec<String>,
    pub commodities: Vec<String>,
    pub controls: Vec<StepControls>,
}

impl ControlsFile {
    pub fn new(net: &Network, l: &Labels, h: f64, controls: &[Control]) -> Self {
        let n = net.n_cells();
        let steps = controls
            .iter()
            .enumerate()
            .map(|(t, u)| StepControls {
                step: t,
                alpha: net.cells().map(|i| net.commodity_ids().map(|k| u.alpha[net.idx(i, k)]).collect()).collect(),
                routing: net
                    .commodity_ids()
                    .map(|k| {
                        let m = u.routing_matrix(net, k);
                        (0..n).map(|i| (0..n).map(|j| m.get(CellId(i), CellId(j))).collect()).collect()
                    })
                    .collect(),
            })
            .collect();
        Self { h, steps: controls.len(), cells: l.cells.clone(), commodities: l.commodities.clone(), controls: steps }
    }

    /// Controls for `net`, checking that the file was written for the same
    /// network and time grid.
    pub fn to_controls(&self, net: &Network, l: &Labels, h: f64, steps: usize) -> Result<Vec<Control>, String> {
        if self.cells != l.cells || self.commodities != l.commodities {
            return Err("cell or commodity names differ from the scenario".into());
        }
        if self.steps != steps || self.controls.len() != steps || self.h != h {
            return Err(format!(
                "controls cover {} steps of {}, the scenario needs {steps} steps of {h}",
                self.controls.len(),
                self.h
            ));
        }
        let (n, kk) = (net.n_cells(), net.n_commodities());
        let mut out = Vec::with_capacity(steps);
        for sc in &self.controls {
            let t = sc.step;
            if sc.alpha.len() != n || sc.alpha.iter().any(|r| r.len() != kk) {
                return Err(format!("step {t}: alpha must be {n} x {kk}"));
            }
            if sc.routing.len() != kk || sc.routing.iter().any(|m| m.len() != n || m.iter().any(|r| r.len() != n)) {
                return Err(format!("step {t}: routing must hold {kk} matrices of {n} x {n}"));
            }
            let mut alpha = vec![0.0; n * kk];
            for i in net.cells() {
                for k in net.commodity_ids() {
                    alpha[net.idx(i, k)] = sc.alpha[i.0][k.0];
                }
            }
            let matrices: Vec<RoutingMatrix> = sc
                .routing
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let mut r = RoutingMatrix::new();
                    for a in net.commodity_arcs(CommodityId(k)) {
                        r.set(a.from, a.to, m[a.from.0][a.to.0]);
                    }
                    r
                })
                .collect();
            out.push(Control::from_matrices(net, alpha, &matrices).map_err(|e| format!("step {t}: {e}"))?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Duals {
    /// Equality-row duals.
    pub y: Vec<f64>,
    /// Capacity-row multipliers.
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedFile {
    pub h: f64,
    pub steps: usize,
    pub slots: Vec<String>,
    pub arcs: Vec<String>,
    pub exits: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    /// Multipliers of the program the trajectory solves, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duals: Option<Duals>,
}

impl RelaxedFile {
    pub fn new(rt: &RelaxedTrajectory, cols: &Columns, h: f64, duals: Option<Duals>) -> Self {
        Self {
            h,
            steps: rt.f.len(),
            slots: cols.slots.clone(),
            arcs: cols.arcs.clone(),
            exits: cols.exits.clone(),
            x: rt.x.clone(),
            f: rt.f.clone(),
            mu: rt.mu.clone(),
            duals,
        }
    }

    pub fn to_trajectory(&self, cols: &Columns, h: f64, steps: usize) -> Result<RelaxedTrajectory, String> {
        if self.slots != cols.slots || self.arcs != cols.arcs || self.exits != cols.exits {
            return Err("slot, arc or exit names differ from the scenario".into());
        }
        if self.steps != steps || self.h != h {
            return Err(format!("trajectory has {} steps of {}, the scenario needs {steps} steps of {h}", self.steps, self.h));
        }
        let rows = |what: &str, v: &Vec<Vec<f64>>, len: usize, width: usize| {
            if v.len() != len || v.iter().any(|r| r.len() != width) {
                Err(format!("{what} must be {len} rows of {width}"))
            } else {
                Ok(())
            }
        };
        rows("x", &self.x, steps + 1, cols.slots.len())?;
        rows("f", &self.f, steps, cols.arcs.len())?;
        rows("mu", &self.mu, steps, cols.exits.len())?;
        Ok(RelaxedTrajectory { x: self.x.clone(), f: self.f.clone(), mu: self.mu.clone() })
    }
}
