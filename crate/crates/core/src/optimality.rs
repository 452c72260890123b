//! Certificates for a relaxed optimum: KKT residuals, the costate, an
//! exhaustive search over gridded controls, and the closed form of the
//! one-step diverge.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::fundamental::{DemandFn, SupplyFn};
use crate::network::{CellId, CommodityId};
use crate::problem::Problem;
use crate::relax::{CapacityKind, ProgramIR, RelaxedTrajectory};
use crate::sim::{self, Control, SimError, State};
use crate::solve::SolveResult;

pub const KKT_TOL: f64 = 1e-6;
pub const TERMINAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    /// Stationarity of the Lagrangian: `|rho|` on free columns and the
    /// negative part of `rho` on signed ones, `rho = c - A'y + G'eta`.
    pub stationarity: f64,
    /// `max |eta * slack|` over capacity rows and `|x * rho|` over columns.
    pub complementarity: f64,
    pub primal_feasibility: f64,
    /// Negative part of the capacity multipliers.
    pub dual_feasibility: f64,
    /// `max |chi(N)|`.
    pub terminal_costate: f64,
    /// Relative primal-dual objective gap reported by the solver.
    pub gap: f64,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.stationarity <= KKT_TOL
            && self.complementarity <= KKT_TOL
            && self.primal_feasibility <= KKT_TOL
            && self.dual_feasibility <= KKT_TOL
            && self.gap <= KKT_TOL
            && self.terminal_costate <= TERMINAL_TOL
    }
}

pub fn kkt_residuals(ir: &ProgramIR, res: &SolveResult) -> KktReport {
    let lp = &ir.lp;
    let rho = lp.reduced_costs(&res.y, &res.eta);
    let mut stationarity: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for (j, &r) in rho.iter().enumerate() {
        if lp.free[j] {
            stationarity = stationarity.max(r.abs());
        } else {
            stationarity = stationarity.max(-r);
            complementarity = complementarity.max((res.x[j] * r).abs());
        }
    }
    for (r, &eta) in res.eta.iter().enumerate() {
        let slack = lp.ineq_rhs[r] - lp.ineq.row_dot(r, &res.x);
        complementarity = complementarity.max((eta * slack).abs());
    }
    let dual_feasibility = res.eta.iter().fold(0.0f64, |m, &e| m.max(-e));
    let n = ir.layout.n_steps;
    let terminal_costate =
        (0..ir.layout.n_slots).fold(0.0f64, |m, s| m.max(res.y[ir.state_row(n, s)].abs()));
    KktReport {
        stationarity,
        complementarity,
        primal_feasibility: ir.residuals_of(&res.x).max(),
        dual_feasibility,
        terminal_costate,
        gap: res.residuals.gap,
    }
}

/// A state sitting on a breakpoint of a piecewise-linear fundamental, where
/// more than one piece is active and the costate jump is a subgradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinkAmbiguity {
    pub step: usize,
    pub kind: CapacityKind,
    /// Number of tight pieces.
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    /// `N + 1` rows of per-slot costates.
    pub chi: Vec<Vec<f64>>,
    /// `N` rows of capacity multipliers in row order.
    pub eta: Vec<Vec<f64>>,
    /// Largest violation of the backward recursion over loaded states.
    pub recursion_residual: f64,
    pub kinks: Vec<KinkAmbiguity>,
}

/// Volume above which a state counts as loaded: its sign constraint is
/// inactive and the recursion must hold with equality.
pub const LOADED: f64 = 1e-3;
const TIGHT: f64 = 1e-9;

/// `chi(t, s) = -y` of the row whose `+1` entry is `x(t, s)`. The recursion
/// `chi(t) - chi(t+1) = -h c_x + (d cap / d x)' eta` holds where `x > 0`;
/// at `x = 0` the left side may exceed the right.
pub fn extract_costate(ir: &ProgramIR, res: &SolveResult) -> CostateTrajectory {
    let lay = &ir.layout;
    let n = lay.n_steps;
    let chi: Vec<Vec<f64>> =
        (0..=n).map(|t| (0..lay.n_slots).map(|s| -res.y[ir.state_row(t, s)]).collect()).collect();
    let per = ir.capacity.rows_per_step;
    let eta: Vec<Vec<f64>> = (0..n).map(|t| res.eta[t * per..(t + 1) * per].to_vec()).collect();

    // G'eta restricted to state columns
    let mut g_eta = vec![0.0; lay.n_vars()];
    ir.lp.ineq.mul_t_add(&res.eta, 1.0, &mut g_eta);
    let mut worst: f64 = 0.0;
    for t in 0..n {
        for s in 0..lay.n_slots {
            let col = lay.x(t, s);
            let q = ir.lp.cost[col] + chi[t][s] - chi[t + 1][s] + g_eta[col];
            let r = if res.x[col] >= LOADED { q.abs() } else { (-q).max(0.0) };
            worst = worst.max(r);
        }
    }

    let mut kinks = Vec::new();
    let mut r = 0;
    while r < ir.ineq_rows.len() {
        let row = ir.ineq_rows[r];
        let mut end = r;
        let mut active = 0;
        while end < ir.ineq_rows.len() && same_group(ir.ineq_rows[end].kind, row.kind) && ir.ineq_rows[end].step == row.step
        {
            if ir.lp.ineq_rhs[end] - ir.lp.ineq.row_dot(end, &res.x) <= TIGHT {
                active += 1;
            }
            end += 1;
        }
        if active > 1 {
            kinks.push(KinkAmbiguity { step: row.step, kind: row.kind, active });
        }
        r = end;
    }
    CostateTrajectory { chi, eta, recursion_residual: worst, kinks }
}

fn same_group(a: CapacityKind, b: CapacityKind) -> bool {
    match (a, b) {
        (CapacityKind::Demand { slot: x, .. }, CapacityKind::Demand { slot: y, .. }) => x == y,
        (CapacityKind::Supply { cell: x, .. }, CapacityKind::Supply { cell: y, .. }) => x == y,
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("search needs more than {limit} control sequences")]
    TooLarge { limit: u64 },
    #[error("instance outside the exhaustive search limits: {0}")]
    Unsupported(&'static str),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

pub const ORACLE_MAX_CELLS: usize = 3;
pub const ORACLE_MAX_COMMODITIES: usize = 2;
pub const ORACLE_MAX_STEPS: usize = 4;
pub const ORACLE_MAX_GRID: usize = 11;
pub const ORACLE_MAX_SEQUENCES: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_cost: f64,
    pub controls: Vec<Control>,
    /// Control sequences simulated.
    pub sequences: u64,
    /// Largest cost change from moving one control of the best sequence to a
    /// neighbouring grid point.
    pub grid_slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Dim {
    Alpha(usize),
    /// Share of the first of two arcs; the second gets the rest.
    Split(usize, usize),
    /// Split of a slot with zero demand: only the set of used arcs matters.
    Support(usize, usize),
}

struct Search<'a> {
    p: &'a Problem,
    grid: Vec<f64>,
    skip_last: bool,
    best: f64,
    best_seq: Vec<Control>,
    path: Vec<Control>,
    count: u64,
}

impl Search<'_> {
    fn dims(&self, x: &State) -> Vec<Dim> {
        let net = &self.p.network;
        let mut dims = Vec::new();
        for slot in net.slots() {
            let flat = net.idx(slot.cell, slot.commodity);
            let live = self.p.fundamentals.demand_value(flat, x.x[flat]) > 0.0;
            if live {
                dims.push(Dim::Alpha(flat));
            }
            let arcs = net.out_arcs(slot.cell, slot.commodity);
            if arcs.len() == 2 {
                let (a, b) = (arcs.start, arcs.start + 1);
                dims.push(if live { Dim::Split(a, b) } else { Dim::Support(a, b) });
            }
        }
        dims
    }

    fn values(&self, d: Dim) -> Vec<f64> {
        match d {
            Dim::Support(..) if self.grid.len() > 2 => vec![0.0, 1.0, 0.5],
            Dim::Support(..) => vec![0.0, 1.0],
            _ => self.grid.clone(),
        }
    }

    fn control(&self, dims: &[Dim], vals: &[f64]) -> Control {
        let mut u = Control::uncontrolled(&self.p.network);
        for (d, &v) in dims.iter().zip(vals) {
            match *d {
                Dim::Alpha(flat) => u.alpha[flat] = v,
                Dim::Split(a, b) | Dim::Support(a, b) => {
                    u.routing[a] = v;
                    u.routing[b] = 1.0 - v;
                }
            }
        }
        u
    }

    fn run(&mut self, t: usize, x: &State, acc: f64) -> Result<(), OracleError> {
        let p = self.p;
        let n = p.n_steps();
        if t == n {
            self.count += 1;
            if self.count > ORACLE_MAX_SEQUENCES {
                return Err(OracleError::TooLarge { limit: ORACLE_MAX_SEQUENCES });
            }
            if acc < self.best {
                self.best = acc;
                self.best_seq.clone_from(&self.path);
            }
            return Ok(());
        }
        let dims = if t + 1 == n && self.skip_last { Vec::new() } else { self.dims(x) };
        let options: Vec<Vec<f64>> = dims.iter().map(|&d| self.values(d)).collect();
        let mut pick = vec![0usize; dims.len()];
        let lambda = p.inflow.at_step(t, p.config.h);
        loop {
            let vals: Vec<f64> = pick.iter().zip(&options).map(|(&i, o)| o[i]).collect();
            let u = self.control(&dims, &vals);
            let snap = sim::flows(&p.network, &p.fundamentals, x, &u);
            let stage = p.config.h * p.cost.eval(&x.x, &snap.outflow);
            let next = sim::advance(&p.network, x, &snap, lambda, p.config.h, t)?;
            self.path.push(u);
            self.run(t + 1, &next, acc + stage)?;
            self.path.pop();
            // odometer
            let mut k = 0;
            loop {
                if k == pick.len() {
                    return Ok(());
                }
                pick[k] += 1;
                if pick[k] < options[k].len() {
                    break;
                }
                pick[k] = 0;
                k += 1;
            }
        }
    }
}

/// Exhaustive search over speed limits and turning ratios drawn from an
/// evenly spaced grid of `grid` points in `[0, 1]`. Routing is searched at
/// two-way diverges only. Controls that cannot change the cost are not
/// enumerated: metering of a slot with zero demand, and the whole last step
/// when the cost has no outflow term. Ties keep the first sequence found.
pub fn brute_force_oracle(p: &Problem, grid: usize) -> Result<OracleResult, OracleError> {
    let net = &p.network;
    if net.n_cells() > ORACLE_MAX_CELLS {
        return Err(OracleError::Unsupported("too many cells"));
    }
    if net.n_commodities() > ORACLE_MAX_COMMODITIES {
        return Err(OracleError::Unsupported("too many commodities"));
    }
    if p.n_steps() > ORACLE_MAX_STEPS {
        return Err(OracleError::Unsupported("too many steps"));
    }
    if !(2..=ORACLE_MAX_GRID).contains(&grid) {
        return Err(OracleError::Unsupported("grid size must be between 2 and 11"));
    }
    if net.slots().iter().any(|s| net.out_arcs(s.cell, s.commodity).len() > 2) {
        return Err(OracleError::Unsupported("diverge with more than two branches"));
    }
    let values: Vec<f64> = (0..grid).map(|i| i as f64 / (grid - 1) as f64).collect();
    let mut search = Search {
        p,
        grid: values,
        skip_last: !p.cost.has_outflow_terms(),
        best: f64::INFINITY,
        best_seq: Vec::new(),
        path: Vec::new(),
        count: 0,
    };
    search.run(0, &p.initial, 0.0)?;
    let best_seq = core::mem::take(&mut search.best_seq);
    let slack = grid_slack(&search, &best_seq)?;
    Ok(OracleResult { best_cost: search.best, controls: best_seq, sequences: search.count, grid_slack: slack })
}

fn grid_slack(search: &Search, seq: &[Control]) -> Result<f64, OracleError> {
    let p = search.p;
    let base = p.cost_of(&p.simulate(seq)?);
    let step = 1.0 / (search.grid.len() - 1) as f64;
    let mut states = vec![p.initial.clone()];
    for (t, u) in seq.iter().enumerate() {
        let next = sim::step(&p.network, &p.fundamentals, &states[t], u, p.inflow.at_step(t, p.config.h), p.config.h)?;
        states.push(next);
    }
    let mut worst: f64 = 0.0;
    for t in 0..seq.len() {
        if t + 1 == seq.len() && search.skip_last {
            continue;
        }
        for d in search.dims(&states[t]) {
            let (Dim::Alpha(_) | Dim::Split(..)) = d else { continue };
            for delta in [-step, step] {
                let mut alt = seq.to_vec();
                let v = match d {
                    Dim::Alpha(flat) => &mut alt[t].alpha[flat],
                    Dim::Split(a, _) | Dim::Support(a, _) => &mut alt[t].routing[a],
                };
                let moved = *v + delta;
                if !(-1e-12..=1.0 + 1e-12).contains(&moved) {
                    continue;
                }
                *v = moved.clamp(0.0, 1.0);
                if let Dim::Split(a, b) = d {
                    alt[t].routing[b] = 1.0 - alt[t].routing[a];
                }
                match p.simulate(&alt) {
                    Ok(tr) => worst = worst.max((p.cost_of(&tr) - base).abs()),
                    Err(SimError::CflViolation { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("not a one-step diverge instance: {0}")]
pub struct NotDivergeFixture(pub &'static str);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergeCase {
    /// Everything `a` sends fits into its private branch.
    Unblocked,
    /// Both branches absorb all demand.
    Spillover,
    /// The shared branch is the bottleneck; its split is not unique.
    SharedBottleneck,
}

/// First-step flows at the diverge: `a` into the shared and the private
/// branch, `b` into the shared branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergeFlows {
    pub a_shared: f64,
    pub a_private: f64,
    pub b_shared: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DivergeSolution {
    pub case: DivergeCase,
    /// One policy, or for the bottleneck case the two extremes: `a` blocked
    /// from the shared branch as far as possible, then `b`.
    pub policies: Vec<DivergeFlows>,
    pub shared: CellId,
    pub private: CellId,
}

/// Closed-form first-step optimum of the three-cell diverge with `d(x) = x`,
/// `s = jam - xi` and unit weights, when only the volume left upstream is
/// costed.
pub fn diverge_case_flows(p: &Problem) -> Result<DivergeSolution, NotDivergeFixture> {
    let net = &p.network;
    let fund = &p.fundamentals;
    if net.n_cells() != 3 || net.n_commodities() != 2 {
        return Err(NotDivergeFixture("needs three cells and two commodities"));
    }
    let (a, b) = (CommodityId(0), CommodityId(1));
    let (c0, c1, c2) = (CellId(0), CellId(1), CellId(2));
    if !net.is_on_ramp(c0) || !net.is_off_ramp(c1) || !net.is_off_ramp(c2) {
        return Err(NotDivergeFixture("cell 0 must feed two exits"));
    }
    if net.arc_index(a, c0, c1).is_none() || net.arc_index(a, c0, c2).is_none() {
        return Err(NotDivergeFixture("commodity a must reach both exits"));
    }
    let (shared, private) = match (net.arc_index(b, c0, c1), net.arc_index(b, c0, c2)) {
        (Some(_), None) => (c1, c2),
        (None, Some(_)) => (c2, c1),
        _ => return Err(NotDivergeFixture("commodity b must reach exactly one exit")),
    };
    for s in net.slots() {
        if fund.demand(s.cell, s.commodity) != Some(&DemandFn::Linear { rate: 1.0 }) {
            return Err(NotDivergeFixture("demand must be d(x) = x"));
        }
    }
    let jam = match (fund.supply(c1), fund.supply(c2)) {
        (
            Some(&SupplyFn::Affine { capacity: j1, wave_speed: w1 }),
            Some(&SupplyFn::Affine { capacity: j2, wave_speed: w2 }),
        ) if j1 == j2 && w1 == 1.0 && w2 == 1.0 => j1,
        _ => return Err(NotDivergeFixture("exits need s = jam - xi with a common jam volume")),
    };
    for j in [c1, c2] {
        for k in [a, b] {
            if net.is_utilizable(j, k) && fund.weight(j, k) != 1.0 {
                return Err(NotDivergeFixture("weights must be one"));
            }
        }
    }
    let x = |i: CellId, k: CommodityId| p.initial.get(net, i, k);
    let (x1a, x1b) = (x(c0, a), x(c0, b));
    let s_shared = jam - x(shared, a) - x(shared, b);
    let s_private = jam - x(private, a);
    let (case, policies) = if x1a <= s_private {
        let f = DivergeFlows { a_shared: 0.0, a_private: x1a, b_shared: x1b.min(s_shared) };
        (DivergeCase::Unblocked, vec![f])
    } else if s_shared + s_private >= x1a + x1b {
        let f = DivergeFlows { a_shared: x1a - s_private, a_private: s_private, b_shared: x1b };
        (DivergeCase::Spillover, vec![f])
    } else {
        let block_a = (s_shared - x1b).max(0.0);
        let block_b = (s_shared - (x1a - s_private)).max(0.0);
        let fa = DivergeFlows { a_shared: block_a, a_private: s_private, b_shared: s_shared - block_a };
        let fb = DivergeFlows { a_shared: s_shared - block_b, a_private: s_private, b_shared: block_b };
        (DivergeCase::SharedBottleneck, vec![fa, fb])
    };
    Ok(DivergeSolution { case, policies, shared, private })
}

/// Relaxed trajectory that applies `f` in the first step and nothing after.
pub fn diverge_trajectory(p: &Problem, ir: &ProgramIR, sol: &DivergeSolution, f: &DivergeFlows) -> RelaxedTrajectory {
    let net = &p.network;
    let (a, b, c0) = (CommodityId(0), CommodityId(1), CellId(0));
    let mut rt = RelaxedTrajectory::zeros(&ir.layout);
    let mut u = vec![0.0; ir.layout.n_arcs];
    u[net.arc_index(a, c0, sol.shared).expect("checked")] = f.a_shared;
    u[net.arc_index(a, c0, sol.private).expect("checked")] = f.a_private;
    u[net.arc_index(b, c0, sol.shared).expect("checked")] = f.b_shared;
    rt.f[0] = u;
    let h = p.config.h;
    for (s, sl) in net.slots().iter().enumerate() {
        rt.x[0][s] = p.initial.get(net, sl.cell, sl.commodity);
    }
    for t in 0..rt.n_steps() {
        let mut next = rt.x[t].clone();
        for (ai, arc) in net.arcs().iter().enumerate() {
            let from = net.slot(arc.from, arc.commodity).expect("utilizable");
            let to = net.slot(arc.to, arc.commodity).expect("utilizable");
            next[from] -= h * rt.f[t][ai];
            next[to] += h * rt.f[t][ai];
        }
        rt.x[t + 1] = next;
    }
    rt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::relax::discretize;
    use crate::solve::{solve, SolveOptions};

    #[test]
    fn kkt_of_tiny_optimum() {
        let p = fixtures::tiny_problem();
        let ir = discretize(&p);
        let res = solve(&ir.lp, &SolveOptions::default());
        assert!(res.is_optimal());
        let kkt = kkt_residuals(&ir, &res);
        assert!(kkt.passed(), "{kkt:?}");
        let co = extract_costate(&ir, &res);
        assert!(co.recursion_residual <= KKT_TOL, "{}", co.recursion_residual);
        assert_eq!(co.chi.len(), 4);
        assert!(co.chi[3].iter().all(|c| c.abs() <= TERMINAL_TOL));
    }

    #[test]
    fn truncated_solve_fails_kkt() {
        let p = fixtures::ten_cell_problem(0.125, 1.0);
        let ir = discretize(&p);
        let res = solve(&ir.lp, &SolveOptions { max_iters: 3, ..Default::default() });
        assert!(!res.is_optimal());
        let kkt = kkt_residuals(&ir, &res);
        assert!(!kkt.passed());
        assert!(kkt.gap > KKT_TOL || kkt.complementarity > KKT_TOL);
    }

    #[test]
    fn oracle_limits() {
        let p = fixtures::ten_cell_problem(0.125, 0.25);
        assert!(matches!(brute_force_oracle(&p, 3), Err(OracleError::Unsupported(_))));
        let p = fixtures::tiny_problem();
        assert!(matches!(brute_force_oracle(&p, 12), Err(OracleError::Unsupported(_))));
    }

    #[test]
    fn oracle_on_one_cell_keeps_full_speed() {
        // draining faster never hurts a single cell with volume cost
        let p = fixtures::one_cell_problem(1.0, 1.0, 0.0, 0.5, 1.0);
        let r = brute_force_oracle(&p, 5).unwrap();
        assert_eq!(r.controls[0].alpha[0], 1.0);
        assert!((r.best_cost - 0.75).abs() < 1e-15);
        // the last step is irrelevant and is not enumerated
        assert_eq!(r.sequences, 5);
    }

    #[test]
    fn diverge_cases() {
        let p = fixtures::diverge_problem(2.0, [[0.5, 0.5], [0.0, 0.0], [0.0, 0.0]], 0.5);
        let sol = diverge_case_flows(&p).unwrap();
        assert_eq!(sol.case, DivergeCase::Unblocked);
        let p = fixtures::diverge_problem(2.0, [[1.5, 0.5], [0.0, 0.0], [1.5, 0.0]], 0.5);
        assert_eq!(diverge_case_flows(&p).unwrap().case, DivergeCase::Spillover);
        let p = fixtures::diverge_problem(2.0, [[1.5, 1.5], [0.5, 0.5], [1.5, 0.0]], 0.5);
        let sol = diverge_case_flows(&p).unwrap();
        assert_eq!(sol.case, DivergeCase::SharedBottleneck);
        assert_eq!(sol.policies[0].a_shared, 0.0);
        assert_eq!(sol.policies[1].b_shared, 0.0);
        assert!(diverge_case_flows(&fixtures::tiny_problem()).is_err());
    }
}
