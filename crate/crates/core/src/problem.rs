//! A complete, validated instance: network, fundamental diagram, inflows,
//! initial state, running cost and time grid.

use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::fundamental::{Fundamentals, FundamentalsIssue};
use crate::network::{CellId, CommodityId, Network};
use crate::sim::{self, Control, CostSpec, InflowProfile, SimConfig, SimError, State, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub network: Network,
    pub fundamentals: Fundamentals,
    pub inflow: InflowProfile,
    pub initial: State,
    pub cost: CostSpec,
    pub config: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemIssue {
    #[error(transparent)]
    Fundamentals(FundamentalsIssue),
    #[error("horizon {horizon} is not a non-negative multiple of the step {h}")]
    Horizon { h: f64, horizon: f64 },
    #[error("{what} has {got} entries, expected {expected}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("inflow segments must start at time 0 in increasing order")]
    InflowSegments,
    #[error("inflow segment {segment}: rate {value} at {cell}, {commodity} (must be >= 0 and only on on-ramps)")]
    Inflow { segment: usize, cell: CellId, commodity: CommodityId, value: f64 },
    #[error("initial volume {value} at {cell}, {commodity} is negative, non-finite or off the commodity's cells")]
    InitialState { cell: CellId, commodity: CommodityId, value: f64 },
    #[error("initial weighted volume {weighted} of {cell} exceeds its jam volume {jam}")]
    AboveJam { cell: CellId, weighted: f64, jam: f64 },
    #[error("cost coefficients at {cell}, {commodity} must satisfy c_x >= 0 and c_z <= 0")]
    CostSign { cell: CellId, commodity: CommodityId },
    #[error("time step {h} exceeds the stability bound {max}")]
    Cfl { h: f64, max: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemError {
    pub issues: Vec<ProblemIssue>,
}

impl ProblemError {
    /// True when the step size is the only problem.
    pub fn is_cfl_only(&self) -> bool {
        self.issues.iter().all(|i| matches!(i, ProblemIssue::Cfl { .. }))
    }
}

impl fmt::Display for ProblemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, issue) in self.issues.iter().enumerate() {
            if n > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{issue}")?;
        }
        Ok(())
    }
}

impl core::error::Error for ProblemError {}

impl Problem {
    pub fn new(
        network: Network,
        fundamentals: Fundamentals,
        inflow: InflowProfile,
        initial: State,
        cost: CostSpec,
        config: SimConfig,
    ) -> Result<Self, ProblemError> {
        let p = Self { network, fundamentals, inflow, initial, cost, config };
        let issues = p.issues();
        if issues.is_empty() {
            Ok(p)
        } else {
            Err(ProblemError { issues })
        }
    }

    pub fn issues(&self) -> Vec<ProblemIssue> {
        let net = &self.network;
        let dense = net.n_cells() * net.n_commodities();
        let mut out: Vec<ProblemIssue> =
            self.fundamentals.validate(net).into_iter().map(ProblemIssue::Fundamentals).collect();
        if self.config.steps().is_none() {
            out.push(ProblemIssue::Horizon { h: self.config.h, horizon: self.config.horizon });
        }
        let mut dims = [
            ("initial state", self.initial.x.len()),
            ("state cost", self.cost.state.len()),
            ("outflow cost", self.cost.outflow.len()),
        ]
        .to_vec();
        for (_, rates) in self.inflow.segments() {
            dims.push(("inflow segment", rates.len()));
        }
        let mut shapes_ok = true;
        for (what, got) in dims {
            if got != dense {
                out.push(ProblemIssue::Dimension { what, expected: dense, got });
                shapes_ok = false;
            }
        }
        let segs = self.inflow.segments();
        if segs.is_empty() || segs[0].0 != 0.0 || segs.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            out.push(ProblemIssue::InflowSegments);
        }
        if !shapes_ok {
            return out;
        }
        for (s, (_, rates)) in segs.iter().enumerate() {
            for i in net.cells() {
                for k in net.commodity_ids() {
                    let v = rates[net.idx(i, k)];
                    let on_ramp = net.commodity(k).on_ramps.contains(&i);
                    if !(v >= 0.0 && v.is_finite()) || (v != 0.0 && !on_ramp) {
                        out.push(ProblemIssue::Inflow { segment: s, cell: i, commodity: k, value: v });
                    }
                }
            }
        }
        for (cell, commodity, value) in self.initial.violations(net) {
            out.push(ProblemIssue::InitialState { cell, commodity, value });
        }
        for j in net.cells() {
            if net.in_arcs(j).is_empty() {
                continue;
            }
            if let Some(s) = self.fundamentals.supply(j) {
                let weighted = self.fundamentals.weighted_volume(j, &self.initial.x);
                let jam = s.jam();
                if weighted > jam {
                    out.push(ProblemIssue::AboveJam { cell: j, weighted, jam });
                }
            }
        }
        for i in net.cells() {
            for k in net.commodity_ids() {
                let n = net.idx(i, k);
                let (cx, cz) = (self.cost.state[n], self.cost.outflow[n]);
                if !(cx >= 0.0 && cx.is_finite() && cz <= 0.0 && cz.is_finite()) {
                    out.push(ProblemIssue::CostSign { cell: i, commodity: k });
                }
            }
        }
        let max = self.fundamentals.max_stable_step(net);
        if self.config.h > max * (1.0 + 1e-12) {
            out.push(ProblemIssue::Cfl { h: self.config.h, max });
        }
        out
    }

    pub fn n_steps(&self) -> usize {
        self.config.steps().unwrap_or(0)
    }

    /// No speed limits and uniform routing at every step.
    pub fn uncontrolled(&self) -> Vec<Control> {
        alloc::vec![Control::uncontrolled(&self.network); self.n_steps()]
    }

    pub fn simulate(&self, controls: &[Control]) -> Result<Trajectory, SimError> {
        sim::simulate(&self.network, &self.fundamentals, &self.initial, controls, &self.inflow, &self.config)
    }

    pub fn cost_of(&self, traj: &Trajectory) -> f64 {
        sim::cost_of_trajectory(traj, &self.cost)
    }
}
