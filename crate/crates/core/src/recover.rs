//! From a relaxed trajectory back to speed limits, metering and turning
//! ratios, and the re-simulation certificate that the two agree.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::fundamental::Fundamentals;
use crate::network::{CellId, CommodityId, Network};
use crate::problem::Problem;
use crate::relax::RelaxedTrajectory;
use crate::sim::{Control, SimError};

/// Outflow may exceed demand by this much before recovery gives up.
pub const DEMAND_TOL: f64 = 1e-6;
pub const STATE_TOL: f64 = 1e-7;
pub const GAMMA_TOL: f64 = 1e-9;
pub const COST_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecoverError {
    #[error("step {step}: outflow {outflow} of {cell}, {commodity} exceeds its demand {demand}")]
    DemandViolation { step: usize, cell: CellId, commodity: CommodityId, outflow: f64, demand: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredControls {
    pub controls: Vec<Control>,
    /// Largest amount an alpha was pulled back into `[0, 1]`.
    pub max_clamp: f64,
    /// Largest negative flow mass dropped before normalizing a routing row.
    pub max_renormalization: f64,
}

/// `alpha = (mu + sum f) / d(x)` and `R = f / sum f`, with `alpha = 1` for
/// zero demand and uniform routing for zero outflow.
pub fn recover_controls(
    net: &Network,
    fund: &Fundamentals,
    rt: &RelaxedTrajectory,
) -> Result<RecoveredControls, RecoverError> {
    let mut exit_of_slot = vec![None; net.slots().len()];
    for (e, ex) in net.exits().iter().enumerate() {
        exit_of_slot[net.slot(ex.cell, ex.commodity).expect("exit is utilizable")] = Some(e);
    }
    let mut controls = Vec::with_capacity(rt.n_steps());
    let mut max_clamp: f64 = 0.0;
    let mut max_renorm: f64 = 0.0;
    for t in 0..rt.n_steps() {
        let mut u = Control::uncontrolled(net);
        for (s, slot) in net.slots().iter().enumerate() {
            let (i, k) = (slot.cell, slot.commodity);
            let flat = net.idx(i, k);
            let arcs = net.out_arcs(i, k);
            let mut routed = 0.0;
            let mut negative = 0.0;
            for a in arcs.clone() {
                let f = rt.f[t][a];
                if f > 0.0 {
                    routed += f;
                } else {
                    negative -= f;
                }
            }
            let exit = exit_of_slot[s].map_or(0.0, |e| rt.mu[t][e]);
            if exit < 0.0 {
                negative -= exit;
            }
            let num = routed + exit.max(0.0);
            let demand = fund.demand_value(flat, rt.x[t][s].max(0.0));
            if num > demand + DEMAND_TOL {
                return Err(RecoverError::DemandViolation { step: t, cell: i, commodity: k, outflow: num, demand });
            }
            let alpha = if demand > 0.0 { num / demand } else { 1.0 };
            max_clamp = max_clamp.max(alpha - 1.0);
            u.alpha[flat] = alpha.clamp(0.0, 1.0);
            max_renorm = max_renorm.max(negative);
            if routed > 0.0 {
                for a in arcs {
                    u.routing[a] = rt.f[t][a].max(0.0) / routed;
                }
            }
        }
        controls.push(u);
    }
    Ok(RecoveredControls { controls, max_clamp, max_renormalization: max_renorm })
}

/// Re-derives volumes from the flows and scales flows down wherever they
/// exceed demand or supply at those volumes. Interior-point solutions satisfy
/// the rows only up to the solver tolerance; after this pass they hold
/// exactly, so the FIFO factor of the recovered controls is one. Returns the
/// repaired trajectory and the largest change made to any entry.
pub fn polish(p: &Problem, rt: &RelaxedTrajectory) -> (RelaxedTrajectory, f64) {
    let net = &p.network;
    let fund = &p.fundamentals;
    let h = p.config.h;
    let slots = net.slots();
    let mut exit_of_slot = vec![None; slots.len()];
    for (e, ex) in net.exits().iter().enumerate() {
        exit_of_slot[net.slot(ex.cell, ex.commodity).expect("exit is utilizable")] = Some(e);
    }
    let shrink = 1.0 - 4.0 * f64::EPSILON;
    let mut out = rt.clone();
    let mut change: f64 = 0.0;
    let mut x = p.initial.clone();
    for t in 0..rt.n_steps() {
        for (s, sl) in slots.iter().enumerate() {
            out.x[t][s] = x.x[net.idx(sl.cell, sl.commodity)];
        }
        for v in out.f[t].iter_mut().chain(out.mu[t].iter_mut()) {
            *v = v.max(0.0);
        }
        for (s, sl) in slots.iter().enumerate() {
            let flat = net.idx(sl.cell, sl.commodity);
            let cap = fund.demand_value(flat, x.x[flat]);
            let arcs = net.out_arcs(sl.cell, sl.commodity);
            let exit = exit_of_slot[s];
            let total: f64 = arcs.clone().map(|a| out.f[t][a]).sum::<f64>() + exit.map_or(0.0, |e| out.mu[t][e]);
            if total > cap {
                let r = if cap > 0.0 { cap / total * shrink } else { 0.0 };
                for a in arcs {
                    out.f[t][a] *= r;
                }
                if let Some(e) = exit {
                    out.mu[t][e] *= r;
                }
            }
        }
        for j in net.cells() {
            let ins = net.in_arcs(j);
            if ins.is_empty() {
                continue;
            }
            let cap = fund.supply_at(j, &x.x);
            let total: f64 = ins.iter().map(|&a| out.f[t][a]).sum();
            if total > cap {
                let r = if cap > 0.0 { cap / total * shrink } else { 0.0 };
                for &a in ins {
                    out.f[t][a] *= r;
                }
            }
        }
        // same update as the simulator
        let mut inflow = vec![0.0; x.x.len()];
        for (a, arc) in net.arcs().iter().enumerate() {
            inflow[net.idx(arc.to, arc.commodity)] += out.f[t][a];
        }
        let lambda = p.inflow.at_step(t, h);
        for (s, sl) in slots.iter().enumerate() {
            let flat = net.idx(sl.cell, sl.commodity);
            let z = match exit_of_slot[s] {
                Some(e) => out.mu[t][e],
                None => {
                    let mut z = 0.0;
                    for a in net.out_arcs(sl.cell, sl.commodity) {
                        z += out.f[t][a];
                    }
                    z
                }
            };
            x.x[flat] = (x.x[flat] + h * (lambda[flat] + inflow[flat] - z)).max(0.0);
        }
        for (a, b) in rt.f[t].iter().zip(&out.f[t]).chain(rt.mu[t].iter().zip(&out.mu[t])) {
            change = change.max((a - b).abs());
        }
    }
    let n = rt.n_steps();
    for (s, sl) in slots.iter().enumerate() {
        out.x[n][s] = x.x[net.idx(sl.cell, sl.commodity)];
    }
    for (ra, rb) in rt.x.iter().zip(&out.x) {
        for (a, b) in ra.iter().zip(rb) {
            change = change.max((a - b).abs());
        }
    }
    (out, change)
}

/// `h * sum_{t<N} phi(x(t), z(t))` with `z` the relaxed outflow.
pub fn relaxed_cost(p: &Problem, rt: &RelaxedTrajectory) -> f64 {
    let net = &p.network;
    let mut exit_of_slot = vec![None; net.slots().len()];
    for (e, ex) in net.exits().iter().enumerate() {
        exit_of_slot[net.slot(ex.cell, ex.commodity).expect("exit is utilizable")] = Some(e);
    }
    let mut j = 0.0;
    for t in 0..rt.n_steps() {
        for (s, sl) in net.slots().iter().enumerate() {
            let flat = net.idx(sl.cell, sl.commodity);
            let mut z: f64 = net.out_arcs(sl.cell, sl.commodity).map(|a| rt.f[t][a]).sum();
            if let Some(e) = exit_of_slot[s] {
                z += rt.mu[t][e];
            }
            j += p.cost.state[flat] * rt.x[t][s] + p.cost.outflow[flat] * z;
        }
    }
    p.config.h * j
}

#[derive(Debug, Clone, PartialEq)]
pub struct TightnessReport {
    /// `max |x - x_bar|` over all steps and slots.
    pub max_state_deviation: f64,
    /// Smallest FIFO factor seen in the re-simulation.
    pub min_gamma: f64,
    /// Cost of the re-simulated trajectory.
    pub recovered_cost: f64,
    /// Objective of the relaxed trajectory.
    pub relaxed_cost: f64,
    pub simulation_error: Option<SimError>,
    pub state_ok: bool,
    pub gamma_ok: bool,
    pub cost_ok: bool,
}

impl TightnessReport {
    pub fn passed(&self) -> bool {
        self.simulation_error.is_none() && self.state_ok && self.gamma_ok && self.cost_ok
    }
}

/// Re-simulates `controls` and compares with `rt`.
pub fn verify_tightness(p: &Problem, rt: &RelaxedTrajectory, controls: &[Control]) -> TightnessReport {
    let relaxed = relaxed_cost(p, rt);
    let traj = match p.simulate(controls) {
        Ok(t) => t,
        Err(e) => {
            return TightnessReport {
                max_state_deviation: f64::INFINITY,
                min_gamma: 0.0,
                recovered_cost: f64::NAN,
                relaxed_cost: relaxed,
                simulation_error: Some(e),
                state_ok: false,
                gamma_ok: false,
                cost_ok: false,
            }
        }
    };
    let net = &p.network;
    let mut dev: f64 = 0.0;
    for (t, st) in traj.states.iter().enumerate() {
        for (s, sl) in net.slots().iter().enumerate() {
            dev = dev.max((st.x[net.idx(sl.cell, sl.commodity)] - rt.x[t][s]).abs());
        }
    }
    let min_gamma = traj.min_gamma();
    let recovered = p.cost_of(&traj);
    TightnessReport {
        max_state_deviation: dev,
        min_gamma,
        recovered_cost: recovered,
        relaxed_cost: relaxed,
        simulation_error: None,
        state_ok: dev <= STATE_TOL,
        gamma_ok: min_gamma >= 1.0 - GAMMA_TOL,
        cost_ok: recovered <= relaxed + COST_TOL,
    }
}
