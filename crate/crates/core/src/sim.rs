//! Controlled FIFO dynamics of the multi-commodity flow network, discretized
//! with explicit Euler and piecewise-constant controls.
//!
//! Volumes, speed-limit factors and outflows are dense matrices over
//! (cell, commodity) stored row-major, see [`Network::idx`]. Routing is stored
//! per arc of the network, aligned with [`Network::arcs`].

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::fundamental::Fundamentals;
use crate::network::{CellId, CommodityId, Network, RoutingMatrix, RoutingViolation};

/// Traffic volume per (cell, commodity).
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub x: Vec<f64>,
}

impl State {
    pub fn zeros(net: &Network) -> Self {
        Self { x: vec![0.0; net.n_cells() * net.n_commodities()] }
    }

    /// `value` on every utilizable slot, zero elsewhere.
    pub fn uniform(net: &Network, value: f64) -> Self {
        let mut s = Self::zeros(net);
        for slot in net.slots() {
            s.x[net.idx(slot.cell, slot.commodity)] = value;
        }
        s
    }

    pub fn get(&self, net: &Network, i: CellId, k: CommodityId) -> f64 {
        self.x[net.idx(i, k)]
    }

    pub fn set(&mut self, net: &Network, i: CellId, k: CommodityId, v: f64) {
        let idx = net.idx(i, k);
        self.x[idx] = v;
    }

    pub fn total(&self) -> f64 {
        self.x.iter().sum()
    }

    /// Entries that are negative, non-finite, or nonzero off the utilizable
    /// cells of their commodity.
    pub fn violations(&self, net: &Network) -> Vec<(CellId, CommodityId, f64)> {
        let mut out = Vec::new();
        for i in net.cells() {
            for k in net.commodity_ids() {
                let v = self.x[net.idx(i, k)];
                let bad = !v.is_finite() || v < 0.0 || (v != 0.0 && !net.is_utilizable(i, k));
                if bad {
                    out.push((i, k, v));
                }
            }
        }
        out
    }
}

/// Speed-limit/metering factors and turning ratios for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    /// Dense (cell, commodity) factors in `[0, 1]`.
    pub alpha: Vec<f64>,
    /// Turning ratio per network arc.
    pub routing: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("routing for {commodity} is inadmissible: {violations:?}")]
    Routing { commodity: CommodityId, violations: Vec<RoutingViolation> },
    #[error("alpha of {cell}, {commodity} is {value}, outside [0, 1]")]
    Alpha { cell: CellId, commodity: CommodityId, value: f64 },
    #[error("expected {expected} routing matrices, got {got}")]
    Count { expected: usize, got: usize },
}

impl Control {
    /// No speed limits (`alpha = 1`) and uniform splits at diverges.
    pub fn uncontrolled(net: &Network) -> Self {
        let mut routing = vec![0.0; net.arcs().len()];
        for slot in net.slots() {
            let r = net.out_arcs(slot.cell, slot.commodity);
            let n = r.len() as f64;
            for a in r {
                routing[a] = 1.0 / n;
            }
        }
        Self { alpha: vec![1.0; net.n_cells() * net.n_commodities()], routing }
    }

    pub fn from_matrices(
        net: &Network,
        alpha: Vec<f64>,
        matrices: &[RoutingMatrix],
    ) -> Result<Self, ControlError> {
        if matrices.len() != net.n_commodities() {
            return Err(ControlError::Count { expected: net.n_commodities(), got: matrices.len() });
        }
        let mut routing = vec![0.0; net.arcs().len()];
        for (k, m) in matrices.iter().enumerate() {
            let k = CommodityId(k);
            let violations = crate::network::validate_routing(net, m, k);
            if !violations.is_empty() {
                return Err(ControlError::Routing { commodity: k, violations });
            }
            for a in net.commodity(k).arcs.clone() {
                let arc = net.arcs()[a];
                routing[a] = m.get(arc.from, arc.to);
            }
        }
        let c = Self { alpha, routing };
        c.check_alpha(net)?;
        Ok(c)
    }

    fn check_alpha(&self, net: &Network) -> Result<(), ControlError> {
        for slot in net.slots() {
            let v = self.alpha[net.idx(slot.cell, slot.commodity)];
            if !(0.0..=1.0).contains(&v) {
                return Err(ControlError::Alpha { cell: slot.cell, commodity: slot.commodity, value: v });
            }
        }
        Ok(())
    }

    pub fn routing_matrix(&self, net: &Network, k: CommodityId) -> RoutingMatrix {
        let mut m = RoutingMatrix::new();
        for a in net.commodity(k).arcs.clone() {
            let arc = net.arcs()[a];
            m.set(arc.from, arc.to, self.routing[a]);
        }
        m
    }

    /// Admissibility: alpha in `[0, 1]` and every routing row summing to one.
    pub fn check(&self, net: &Network) -> Result<(), ControlError> {
        self.check_alpha(net)?;
        for k in net.commodity_ids() {
            let v = crate::network::validate_routing(net, &self.routing_matrix(net, k), k);
            if !v.is_empty() {
                return Err(ControlError::Routing { commodity: k, violations: v });
            }
        }
        Ok(())
    }
}

/// Piecewise-constant exogenous inflow. Segment `s` applies from its start
/// time until the next segment starts.
#[derive(Debug, Clone, PartialEq)]
pub struct InflowProfile {
    segments: Vec<(f64, Vec<f64>)>,
}

impl InflowProfile {
    pub fn zero(net: &Network) -> Self {
        Self::constant(vec![0.0; net.n_cells() * net.n_commodities()])
    }

    pub fn constant(rates: Vec<f64>) -> Self {
        Self { segments: vec![(0.0, rates)] }
    }

    /// Segments must start at time 0 and be sorted by start time.
    pub fn piecewise(segments: Vec<(f64, Vec<f64>)>) -> Self {
        Self { segments }
    }

    pub fn segments(&self) -> &[(f64, Vec<f64>)] {
        &self.segments
    }

    /// Rates in force at time `t`.
    pub fn at(&self, t: f64) -> &[f64] {
        let mut cur = &self.segments[0].1;
        for (start, rates) in &self.segments {
            if *start <= t {
                cur = rates;
            } else {
                break;
            }
        }
        cur
    }

    /// Rates in force during step `step` of length `h`, sampled at the
    /// left endpoint with a tolerance against rounding of `step * h`.
    pub fn at_step(&self, step: usize, h: f64) -> &[f64] {
        let t = step as f64 * h;
        self.at(t + 1e-9 * h)
    }
}

/// Time step and horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub h: f64,
    pub horizon: f64,
}

impl SimConfig {
    pub fn new(h: f64, horizon: f64) -> Self {
        Self { h, horizon }
    }

    /// Number of steps `horizon / h`, if it is an integer up to rounding.
    pub fn steps(&self) -> Option<usize> {
        if !(self.h > 0.0) || !(self.horizon >= 0.0) {
            return None;
        }
        let n = self.horizon / self.h;
        let r = libm::round(n);
        ((n - r).abs() <= 1e-9 * (1.0 + r)).then_some(r as usize)
    }
}

/// Linear running cost `c_x . x + c_z . z` with `c_x >= 0`, `c_z <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub state: Vec<f64>,
    pub outflow: Vec<f64>,
}

impl CostSpec {
    /// Total volume over all cells and commodities.
    pub fn total_volume(net: &Network) -> Self {
        let n = net.n_cells() * net.n_commodities();
        Self { state: vec![1.0; n], outflow: vec![0.0; n] }
    }

    pub fn zero(net: &Network) -> Self {
        let n = net.n_cells() * net.n_commodities();
        Self { state: vec![0.0; n], outflow: vec![0.0; n] }
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        let a: f64 = self.state.iter().zip(x).map(|(c, v)| c * v).sum();
        let b: f64 = self.outflow.iter().zip(z).map(|(c, v)| c * v).sum();
        a + b
    }

    pub fn has_outflow_terms(&self) -> bool {
        self.outflow.iter().any(|&c| c != 0.0)
    }

    /// Whether the signs make the cost non-decreasing in volume and
    /// non-increasing in outflow.
    pub fn signs_ok(&self) -> bool {
        self.state.iter().all(|&c| c >= 0.0 && c.is_finite())
            && self.outflow.iter().all(|&c| c <= 0.0 && c.is_finite())
    }
}

/// Flows during one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSnapshot {
    /// FIFO factor per cell.
    pub gamma: Vec<f64>,
    /// Flow per network arc.
    pub arc: Vec<f64>,
    /// Total outflow per (cell, commodity).
    pub outflow: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("step {step}: volume of {cell}, {commodity} would become {value}; reduce the time step")]
    CflViolation { step: usize, cell: CellId, commodity: CommodityId, value: f64 },
    #[error("expected {expected} controls, got {got}")]
    ControlCount { expected: usize, got: usize },
    #[error("horizon is not an integer number of steps")]
    Horizon,
}

/// Slack below zero that is clipped instead of reported.
pub const CLIP_TOL: f64 = 1e-12;

/// Metered demand `alpha * d(x)` per (cell, commodity).
fn metered_demand(net: &Network, fund: &Fundamentals, x: &State, u: &Control) -> Vec<f64> {
    let mut md = vec![0.0; x.x.len()];
    for slot in net.slots() {
        let idx = net.idx(slot.cell, slot.commodity);
        md[idx] = u.alpha[idx] * fund.demand_value(idx, x.x[idx]);
    }
    md
}

fn gamma_from_demand(net: &Network, fund: &Fundamentals, x: &State, u: &Control, md: &[f64]) -> Vec<f64> {
    let n = net.n_cells();
    let arcs = net.arcs();
    let mut ratio = vec![1.0; n];
    for j in net.cells() {
        let ins = net.in_arcs(j);
        if ins.is_empty() {
            continue;
        }
        let mut demand = 0.0;
        for &a in ins {
            let arc = arcs[a];
            demand += u.routing[a] * md[net.idx(arc.from, arc.commodity)];
        }
        if demand > 0.0 {
            ratio[j.0] = (fund.supply_at(j, &x.x) / demand).min(1.0);
        }
    }
    let mut gamma = vec![1.0; n];
    for (a, arc) in arcs.iter().enumerate() {
        if u.routing[a] > 0.0 {
            gamma[arc.from.0] = f64::min(gamma[arc.from.0], ratio[arc.to.0]);
        }
    }
    gamma
}

/// FIFO factor per cell: the largest `tau` in `[0, 1]` scaling the cell's
/// outflow such that every downstream cell it routes to can absorb the
/// aggregate routed demand it receives.
pub fn compute_gamma(net: &Network, fund: &Fundamentals, x: &State, u: &Control) -> Vec<f64> {
    let md = metered_demand(net, fund, x, u);
    gamma_from_demand(net, fund, x, u, &md)
}

pub fn flows(net: &Network, fund: &Fundamentals, x: &State, u: &Control) -> FlowSnapshot {
    let md = metered_demand(net, fund, x, u);
    let gamma = gamma_from_demand(net, fund, x, u, &md);
    let arcs = net.arcs();
    let mut arc = vec![0.0; arcs.len()];
    let mut outflow = vec![0.0; x.x.len()];
    for slot in net.slots() {
        let (i, k) = (slot.cell, slot.commodity);
        let idx = net.idx(i, k);
        let send = gamma[i.0] * md[idx];
        if net.is_exit(i, k) {
            outflow[idx] = send;
        } else {
            let mut z = 0.0;
            for a in net.out_arcs(i, k) {
                let f = send * u.routing[a];
                arc[a] = f;
                z += f;
            }
            outflow[idx] = z;
        }
    }
    FlowSnapshot { gamma, arc, outflow }
}

/// Explicit Euler update given the flows of the step. Entries within
/// [`CLIP_TOL`] below zero are clipped; anything lower is an error.
pub(crate) fn advance(
    net: &Network,
    x: &State,
    snap: &FlowSnapshot,
    lambda: &[f64],
    h: f64,
    step_index: usize,
) -> Result<State, SimError> {
    let mut inflow = vec![0.0; x.x.len()];
    for (a, arc) in net.arcs().iter().enumerate() {
        inflow[net.idx(arc.to, arc.commodity)] += snap.arc[a];
    }
    let mut next = x.clone();
    for slot in net.slots() {
        let idx = net.idx(slot.cell, slot.commodity);
        let v = x.x[idx] + h * (lambda[idx] + inflow[idx] - snap.outflow[idx]);
        if v < -CLIP_TOL {
            return Err(SimError::CflViolation {
                step: step_index,
                cell: slot.cell,
                commodity: slot.commodity,
                value: v,
            });
        }
        next.x[idx] = v.max(0.0);
    }
    Ok(next)
}

pub fn step(
    net: &Network,
    fund: &Fundamentals,
    x: &State,
    u: &Control,
    lambda: &[f64],
    h: f64,
) -> Result<State, SimError> {
    let snap = flows(net, fund, x, u);
    advance(net, x, &snap, lambda, h, 0)
}

/// States `x(0..=N)` and the flows of each of the `N` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub states: Vec<State>,
    pub flows: Vec<FlowSnapshot>,
}

impl Trajectory {
    pub fn n_steps(&self) -> usize {
        self.flows.len()
    }

    pub fn total_volume(&self) -> Vec<f64> {
        self.states.iter().map(State::total).collect()
    }

    pub fn min_gamma(&self) -> f64 {
        self.flows.iter().flat_map(|f| f.gamma.iter().copied()).fold(1.0, f64::min)
    }
}

pub fn simulate(
    net: &Network,
    fund: &Fundamentals,
    x0: &State,
    controls: &[Control],
    inflow: &InflowProfile,
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    let n = cfg.steps().ok_or(SimError::Horizon)?;
    if controls.len() != n {
        return Err(SimError::ControlCount { expected: n, got: controls.len() });
    }
    let mut states = Vec::with_capacity(n + 1);
    let mut snaps = Vec::with_capacity(n);
    states.push(x0.clone());
    for (t, u) in controls.iter().enumerate() {
        let x = &states[t];
        let snap = flows(net, fund, x, u);
        let next = advance(net, x, &snap, inflow.at_step(t, cfg.h), cfg.h, t)?;
        snaps.push(snap);
        states.push(next);
    }
    Ok(Trajectory { h: cfg.h, states, flows: snaps })
}

/// Left-endpoint rectangle rule `h * sum_{t<N} phi(x(t), z(t))`.
pub fn cost_of_trajectory(traj: &Trajectory, cost: &CostSpec) -> f64 {
    let mut j = 0.0;
    for (x, f) in traj.states.iter().zip(&traj.flows) {
        j += cost.eval(&x.x, &f.outflow);
    }
    traj.h * j
}
