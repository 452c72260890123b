//! Discrete-time relaxation of the optimal control problem as a sparse LP.
//!
//! Decision variables are volumes `x(t, slot)` for `t = 0..=N`, flows
//! `f(t, arc)` and exit flows `mu(t, exit)` for `t < N`. Variables of one step
//! are contiguous, so the LP is block banded in time. Capacity rows bound the
//! outflow of each slot by its demand and the inflow of each receiving cell by
//! its supply, one row per linear piece.
//!
//! Terminal volumes `x(N)` are left free: under the step-size rule they are
//! non-negative anyway, and leaving them free lets the solver eliminate them,
//! which pins their equality duals (the terminal costate) to zero.

use alloc::vec;
use alloc::vec::Vec;

use crate::network::{CellId, Network};
use crate::problem::Problem;
use crate::sim::{State, Trajectory};
use crate::solve::LinearProgram;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub n_steps: usize,
    pub n_slots: usize,
    pub n_arcs: usize,
    pub n_exits: usize,
}

/// What an LP column stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRef {
    State { step: usize, slot: usize },
    Flow { step: usize, arc: usize },
    Exit { step: usize, exit: usize },
}

impl VariableLayout {
    pub fn new(net: &Network, n_steps: usize) -> Self {
        Self { n_steps, n_slots: net.slots().len(), n_arcs: net.arcs().len(), n_exits: net.exits().len() }
    }

    fn block(&self) -> usize {
        self.n_slots + self.n_arcs + self.n_exits
    }

    pub fn x(&self, t: usize, slot: usize) -> usize {
        t * self.block() + slot
    }

    pub fn f(&self, t: usize, arc: usize) -> usize {
        t * self.block() + self.n_slots + arc
    }

    pub fn mu(&self, t: usize, exit: usize) -> usize {
        t * self.block() + self.n_slots + self.n_arcs + exit
    }

    pub fn n_vars(&self) -> usize {
        self.n_steps * self.block() + self.n_slots
    }

    pub fn describe(&self, var: usize) -> VarRef {
        let (step, r) = (var / self.block(), var % self.block());
        if r < self.n_slots {
            VarRef::State { step, slot: r }
        } else if r < self.n_slots + self.n_arcs {
            VarRef::Flow { step, arc: r - self.n_slots }
        } else {
            VarRef::Exit { step, exit: r - self.n_slots - self.n_arcs }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EqRow {
    Initial { slot: usize },
    /// Links `x(step + 1)` to `x(step)`.
    Dynamics { step: usize, slot: usize },
    /// Added by [`ProgramIR::fix`].
    Fixed { var: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacityKind {
    Demand { slot: usize, piece: usize },
    Supply { cell: CellId, piece: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacityRow {
    pub step: usize,
    pub kind: CapacityKind,
}

/// Per-step sizes of the capacity block `D u <= cap(x)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapacityLayout {
    /// One demand constraint per slot plus one supply constraint per cell.
    pub constraints: usize,
    /// Flow columns per step: arcs plus exits.
    pub flow_columns: usize,
    /// Rows emitted per step. Each linear piece is a row; cells without
    /// upstream arcs have a supply constraint that no flow can touch, and no
    /// row is emitted for it.
    pub rows_per_step: usize,
    /// Cells whose supply constraint is vacuous.
    pub vacuous_supply: Vec<CellId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgramIR {
    pub layout: VariableLayout,
    pub capacity: CapacityLayout,
    pub lp: LinearProgram,
    pub eq_rows: Vec<EqRow>,
    pub ineq_rows: Vec<CapacityRow>,
    pub h: f64,
    /// Exit index of each slot, if the slot is an exit.
    pub exit_of_slot: Vec<Option<usize>>,
}

/// Flows of one slot: outgoing arcs and its exit column, if any.
fn outflow_terms(net: &Network, layout: &VariableLayout, exit_of_slot: &[Option<usize>], t: usize, s: usize) -> Vec<usize> {
    let slot = net.slots()[s];
    let mut v: Vec<usize> = net.out_arcs(slot.cell, slot.commodity).map(|a| layout.f(t, a)).collect();
    if let Some(e) = exit_of_slot[s] {
        v.push(layout.mu(t, e));
    }
    v
}

pub fn discretize(p: &Problem) -> ProgramIR {
    let net = &p.network;
    let fund = &p.fundamentals;
    let n = p.n_steps();
    let h = p.config.h;
    let layout = VariableLayout::new(net, n);
    let slots = net.slots();
    let mut exit_of_slot = vec![None; slots.len()];
    for (e, ex) in net.exits().iter().enumerate() {
        exit_of_slot[net.slot(ex.cell, ex.commodity).expect("exit is utilizable")] = Some(e);
    }
    let mut lp = LinearProgram::new(layout.n_vars());
    for s in 0..slots.len() {
        lp.free[layout.x(n, s)] = true;
    }

    // objective
    for t in 0..n {
        for (s, slot) in slots.iter().enumerate() {
            let d = net.idx(slot.cell, slot.commodity);
            lp.cost[layout.x(t, s)] += h * p.cost.state[d];
            let cz = p.cost.outflow[d];
            if cz != 0.0 {
                for v in outflow_terms(net, &layout, &exit_of_slot, t, s) {
                    lp.cost[v] += h * cz;
                }
            }
        }
    }

    let mut eq_rows = Vec::new();
    for (s, slot) in slots.iter().enumerate() {
        lp.add_eq([(layout.x(0, s), 1.0)], p.initial.x[net.idx(slot.cell, slot.commodity)]);
        eq_rows.push(EqRow::Initial { slot: s });
    }
    let mut in_arcs: Vec<Vec<usize>> = vec![Vec::new(); slots.len()];
    for (a, arc) in net.arcs().iter().enumerate() {
        in_arcs[net.slot(arc.to, arc.commodity).expect("arc ends are utilizable")].push(a);
    }
    for t in 0..n {
        let lambda = p.inflow.at_step(t, h);
        for (s, slot) in slots.iter().enumerate() {
            let mut row = vec![(layout.x(t + 1, s), 1.0), (layout.x(t, s), -1.0)];
            row.extend(in_arcs[s].iter().map(|&a| (layout.f(t, a), -h)));
            row.extend(outflow_terms(net, &layout, &exit_of_slot, t, s).into_iter().map(|v| (v, h)));
            lp.add_eq(row, h * lambda[net.idx(slot.cell, slot.commodity)]);
            eq_rows.push(EqRow::Dynamics { step: t, slot: s });
        }
    }

    let demand_pieces: Vec<_> = slots
        .iter()
        .map(|sl| fund.demand(sl.cell, sl.commodity).expect("validated demand").to_pwl())
        .collect();
    let receiving: Vec<CellId> = net.cells().filter(|&j| !net.in_arcs(j).is_empty()).collect();
    let supply_pieces: Vec<_> =
        receiving.iter().map(|&j| fund.supply(j).expect("validated supply").to_pwl()).collect();
    let mut ineq_rows = Vec::new();
    for t in 0..n {
        for (s, pwl) in demand_pieces.iter().enumerate() {
            let terms = outflow_terms(net, &layout, &exit_of_slot, t, s);
            for (k, piece) in pwl.pieces.iter().enumerate() {
                let mut row: Vec<(usize, f64)> = terms.iter().map(|&v| (v, 1.0)).collect();
                row.push((layout.x(t, s), -piece.slope));
                lp.add_ineq(row, piece.intercept);
                ineq_rows.push(CapacityRow { step: t, kind: CapacityKind::Demand { slot: s, piece: k } });
            }
        }
        for (&j, pwl) in receiving.iter().zip(&supply_pieces) {
            for (k, piece) in pwl.pieces.iter().enumerate() {
                let mut row: Vec<(usize, f64)> = net.in_arcs(j).iter().map(|&a| (layout.f(t, a), 1.0)).collect();
                for kk in net.commodity_ids() {
                    if let Some(s) = net.slot(j, kk) {
                        row.push((layout.x(t, s), -piece.slope * fund.weight(j, kk)));
                    }
                }
                lp.add_ineq(row, piece.intercept);
                ineq_rows.push(CapacityRow { step: t, kind: CapacityKind::Supply { cell: j, piece: k } });
            }
        }
    }
    let rows_per_step = demand_pieces.iter().map(|p| p.pieces.len()).sum::<usize>()
        + supply_pieces.iter().map(|p| p.pieces.len()).sum::<usize>();
    let capacity = CapacityLayout {
        constraints: slots.len() + net.n_cells(),
        flow_columns: layout.n_arcs + layout.n_exits,
        rows_per_step,
        vacuous_supply: net.cells().filter(|&j| net.in_arcs(j).is_empty()).collect(),
    };
    ProgramIR { layout, capacity, lp, eq_rows, ineq_rows, h, exit_of_slot }
}

/// A point of the relaxation in trajectory form.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedTrajectory {
    /// `N + 1` rows of per-slot volumes.
    pub x: Vec<Vec<f64>>,
    /// `N` rows of per-arc flows.
    pub f: Vec<Vec<f64>>,
    /// `N` rows of per-exit flows.
    pub mu: Vec<Vec<f64>>,
}

impl RelaxedTrajectory {
    pub fn zeros(layout: &VariableLayout) -> Self {
        Self {
            x: vec![vec![0.0; layout.n_slots]; layout.n_steps + 1],
            f: vec![vec![0.0; layout.n_arcs]; layout.n_steps],
            mu: vec![vec![0.0; layout.n_exits]; layout.n_steps],
        }
    }

    pub fn n_steps(&self) -> usize {
        self.f.len()
    }

    pub fn from_vector(layout: &VariableLayout, v: &[f64]) -> Self {
        let mut rt = Self::zeros(layout);
        for t in 0..=layout.n_steps {
            for s in 0..layout.n_slots {
                rt.x[t][s] = v[layout.x(t, s)];
            }
        }
        for t in 0..layout.n_steps {
            for a in 0..layout.n_arcs {
                rt.f[t][a] = v[layout.f(t, a)];
            }
            for e in 0..layout.n_exits {
                rt.mu[t][e] = v[layout.mu(t, e)];
            }
        }
        rt
    }

    pub fn to_vector(&self, layout: &VariableLayout) -> Vec<f64> {
        let mut v = vec![0.0; layout.n_vars()];
        for (t, row) in self.x.iter().enumerate() {
            for (s, &val) in row.iter().enumerate() {
                v[layout.x(t, s)] = val;
            }
        }
        for t in 0..self.f.len() {
            for (a, &val) in self.f[t].iter().enumerate() {
                v[layout.f(t, a)] = val;
            }
            for (e, &val) in self.mu[t].iter().enumerate() {
                v[layout.mu(t, e)] = val;
            }
        }
        v
    }

    /// Volumes at step `t` as a dense state.
    pub fn state(&self, net: &Network, t: usize) -> State {
        let mut st = State::zeros(net);
        for (s, slot) in net.slots().iter().enumerate() {
            st.x[net.idx(slot.cell, slot.commodity)] = self.x[t][s];
        }
        st
    }

    /// Convex combination `(1 - w) self + w other`.
    pub fn blend(&self, other: &Self, w: f64) -> Self {
        let mix = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            a.iter()
                .zip(b)
                .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (1.0 - w) * x + w * y).collect())
                .collect()
        };
        Self { x: mix(&self.x, &other.x), f: mix(&self.f, &other.f), mu: mix(&self.mu, &other.mu) }
    }
}

/// Maps a simulated trajectory into the relaxation's variables.
pub fn embed_simulation(net: &Network, traj: &Trajectory) -> RelaxedTrajectory {
    let slots = net.slots();
    let x = traj
        .states
        .iter()
        .map(|st| slots.iter().map(|sl| st.x[net.idx(sl.cell, sl.commodity)]).collect())
        .collect();
    let f = traj.flows.iter().map(|fl| fl.arc.clone()).collect();
    let mu = traj
        .flows
        .iter()
        .map(|fl| net.exits().iter().map(|ex| fl.outflow[net.idx(ex.cell, ex.commodity)]).collect())
        .collect();
    RelaxedTrajectory { x, f, mu }
}

/// Where a constraint is violated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowLocation {
    Equality(EqRow),
    Capacity(CapacityRow),
    Bound(VarRef),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeasibilityReport {
    pub max_equality: f64,
    pub max_capacity: f64,
    pub max_bound: f64,
    /// Location and size of the largest violation.
    pub worst: Option<(RowLocation, f64)>,
}

impl FeasibilityReport {
    pub fn max(&self) -> f64 {
        self.max_equality.max(self.max_capacity).max(self.max_bound)
    }
}

impl ProgramIR {
    pub fn objective(&self, rt: &RelaxedTrajectory) -> f64 {
        self.lp.objective(&rt.to_vector(&self.layout))
    }

    /// Absolute violations of every row and sign constraint.
    pub fn residuals(&self, rt: &RelaxedTrajectory) -> FeasibilityReport {
        self.residuals_of(&rt.to_vector(&self.layout))
    }

    pub fn residuals_of(&self, v: &[f64]) -> FeasibilityReport {
        let mut rep = FeasibilityReport::default();
        let note = |rep: &mut FeasibilityReport, loc: RowLocation, val: f64| {
            if val > rep.worst.map_or(0.0, |w| w.1) {
                rep.worst = Some((loc, val));
            }
        };
        for (r, kind) in self.eq_rows.iter().enumerate() {
            let e = (self.lp.eq.row_dot(r, v) - self.lp.eq_rhs[r]).abs();
            rep.max_equality = rep.max_equality.max(e);
            note(&mut rep, RowLocation::Equality(*kind), e);
        }
        for (r, kind) in self.ineq_rows.iter().enumerate() {
            let e = (self.lp.ineq.row_dot(r, v) - self.lp.ineq_rhs[r]).max(0.0);
            rep.max_capacity = rep.max_capacity.max(e);
            note(&mut rep, RowLocation::Capacity(*kind), e);
        }
        for (j, &val) in v.iter().enumerate() {
            if !self.lp.free[j] && val < 0.0 {
                rep.max_bound = rep.max_bound.max(-val);
                note(&mut rep, RowLocation::Bound(self.layout.describe(j)), -val);
            }
        }
        rep
    }

    /// Slack `cap - D u` of every capacity row.
    pub fn capacity_slack(&self, rt: &RelaxedTrajectory) -> Vec<f64> {
        let v = rt.to_vector(&self.layout);
        (0..self.ineq_rows.len()).map(|r| self.lp.ineq_rhs[r] - self.lp.ineq.row_dot(r, &v)).collect()
    }

    /// Adds the equality `v[var] = value`.
    pub fn fix(&mut self, var: usize, value: f64) {
        self.lp.add_eq([(var, 1.0)], value);
        self.eq_rows.push(EqRow::Fixed { var });
    }

    /// Row index of the dynamics equality whose `+1` entry is `x(step, slot)`:
    /// the initial-condition row for step 0.
    pub fn state_row(&self, step: usize, slot: usize) -> usize {
        let n_slots = self.layout.n_slots;
        if step == 0 {
            slot
        } else {
            n_slots + (step - 1) * n_slots + slot
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::network::CommodityId;

    #[test]
    fn one_cell_counts() {
        let p = fixtures::one_cell_problem(1.0, 1.0, 0.0, 0.5, 0.5);
        let ir = discretize(&p);
        assert_eq!(ir.layout.n_vars(), 3);
        assert_eq!(ir.lp.eq_rhs.len(), 2);
        // the supply constraint of a cell with no upstream arcs is vacuous
        assert_eq!(ir.lp.ineq_rhs.len(), 1);
        assert_eq!(ir.capacity.constraints, 2);
        assert_eq!(ir.capacity.vacuous_supply, vec![CellId(0)]);
    }

    #[test]
    fn ten_cell_counts() {
        let p = fixtures::ten_cell_problem(0.125, 1.0);
        let ir = discretize(&p);
        assert_eq!(ir.capacity.constraints, 27);
        assert_eq!(ir.capacity.flow_columns, 16 + 3);
        // on-ramps 0 and 3 receive nothing
        assert_eq!(ir.capacity.rows_per_step, 25);
        assert_eq!(ir.lp.eq_rhs.len(), 8 * 17 + 17);
        for r in 0..ir.lp.ineq.n_rows() {
            let (idx, val) = ir.lp.ineq.row(r);
            let touches_flow = idx.iter().zip(val).any(|(&j, &v)| {
                v > 0.0 && matches!(ir.layout.describe(j), VarRef::Flow { .. } | VarRef::Exit { .. })
            });
            assert!(touches_flow, "row {r}");
        }
    }

    #[test]
    fn zero_horizon() {
        let p = fixtures::one_cell_problem(1.0, 1.0, 0.0, 0.5, 0.0);
        let ir = discretize(&p);
        assert_eq!(ir.lp.eq_rhs.len(), 1);
        assert_eq!(ir.lp.ineq_rhs.len(), 0);
        assert_eq!(ir.objective(&RelaxedTrajectory::zeros(&ir.layout)), 0.0);
    }

    #[test]
    fn uncontrolled_run_embeds_with_tight_supply_where_congested() {
        let p = fixtures::ten_cell_problem(0.125, 1.0);
        let traj = p.simulate(&p.uncontrolled()).unwrap();
        let ir = discretize(&p);
        let rt = embed_simulation(&p.network, &traj);
        let rep = ir.residuals(&rt);
        assert!(rep.max() <= 1e-9, "{rep:?}");
        assert!((ir.objective(&rt) - p.cost_of(&traj)).abs() <= 1e-12 * (1.0 + p.cost_of(&traj)));
        let slack = ir.capacity_slack(&rt);
        let net = &p.network;
        for (r, row) in ir.ineq_rows.iter().enumerate() {
            if let CapacityKind::Supply { cell, .. } = row.kind {
                let snap = &traj.flows[row.step];
                // throttled by this cell and by no other downstream cell
                let r_j = ratio(&p, &traj, row.step, cell);
                let congested = r_j < 1.0
                    && net.in_arcs(cell).iter().all(|&a| (snap.gamma[net.arcs()[a].from.0] - r_j).abs() < 1e-12);
                if congested {
                    assert!(slack[r].abs() < 1e-9, "step {} cell {cell} slack {}", row.step, slack[r]);
                }
            }
        }
        assert!(traj.min_gamma() < 1.0);
    }

    fn ratio(p: &Problem, traj: &Trajectory, t: usize, j: CellId) -> f64 {
        let net = &p.network;
        let u = &p.uncontrolled()[t];
        let x = &traj.states[t];
        let mut demand = 0.0;
        for &a in net.in_arcs(j) {
            let arc = net.arcs()[a];
            let d = net.idx(arc.from, arc.commodity);
            demand += u.routing[a] * p.fundamentals.demand_value(d, x.x[d]);
        }
        (p.fundamentals.supply_at(j, &x.x) / demand).min(1.0)
    }

    #[test]
    fn vector_round_trip_and_rows() {
        let p = fixtures::ten_cell_problem(0.125, 0.5);
        let ir = discretize(&p);
        let v: Vec<f64> = (0..ir.layout.n_vars()).map(|i| i as f64).collect();
        assert_eq!(RelaxedTrajectory::from_vector(&ir.layout, &v).to_vector(&ir.layout), v);
        let s = p.network.slot(CellId(4), CommodityId(1)).unwrap();
        let r = ir.state_row(3, s);
        assert_eq!(ir.eq_rows[r], EqRow::Dynamics { step: 2, slot: s });
        let (idx, val) = ir.lp.eq.row(r);
        let pos = idx.iter().position(|&j| j == ir.layout.x(3, s)).unwrap();
        assert_eq!(val[pos], 1.0);
    }
}
