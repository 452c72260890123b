//! Random instances and independent reference computations shared by the
//! integration tests.
#![allow(dead_code)]

use mcdta_core::fundamental::{ConcavePwl, Piece};
use mcdta_core::network::{maximal_valid_cells, CellSpec, CommoditySpec};
use mcdta_core::{
    build_network, CellId, CommodityId, Control, CostSpec, DemandFn, Fundamentals, InflowProfile, Network, NetworkSpec,
    NodeId, Problem, SimConfig, State, SupplyFn,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Acyclic network: every junction has an entering and a leaving cell, and
/// extra cells are added up to `max_cells`.
pub fn random_spec(r: &mut ChaCha8Rng, max_cells: usize, max_commodities: usize) -> NetworkSpec {
    let w = NodeId::WORLD;
    let n_nodes = r.gen_range(1..=(max_cells / 2).clamp(1, 3));
    let mut cells = Vec::new();
    for v in 0..n_nodes {
        let tail = if v == 0 || r.gen_bool(0.4) { w } else { NodeId(r.gen_range(0..v)) };
        cells.push(CellSpec { tail, head: NodeId(v) });
    }
    for v in 0..n_nodes {
        let head = if v + 1 == n_nodes || r.gen_bool(0.4) { w } else { NodeId(r.gen_range(v + 1..n_nodes)) };
        cells.push(CellSpec { tail: NodeId(v), head });
    }
    let extra = r.gen_range(0..=max_cells - cells.len());
    for _ in 0..extra {
        let cell = match r.gen_range(0..3) {
            0 => CellSpec { tail: w, head: NodeId(r.gen_range(0..n_nodes)) },
            1 => CellSpec { tail: NodeId(r.gen_range(0..n_nodes)), head: w },
            _ if n_nodes > 1 => {
                let a = r.gen_range(0..n_nodes - 1);
                CellSpec { tail: NodeId(a), head: NodeId(r.gen_range(a + 1..n_nodes)) }
            }
            _ => CellSpec { tail: w, head: NodeId(0) },
        };
        cells.push(cell);
    }
    let n = cells.len();
    let mut spec = NetworkSpec { cells, commodities: vec![CommoditySpec { cells: ids(0..n), exits: None }] };
    let n_comm = r.gen_range(1..=max_commodities);
    for k in 1..n_comm {
        let pick: Vec<CellId> = (0..n).filter(|_| r.gen_bool(0.75)).map(CellId).collect();
        spec.commodities.push(CommoditySpec { cells: pick, exits: None });
        let valid = maximal_valid_cells(&spec, CommodityId(k));
        spec.commodities[k].cells = if valid.is_empty() { ids(0..n) } else { valid };
    }
    spec
}

fn ids(r: std::ops::Range<usize>) -> Vec<CellId> {
    r.map(CellId).collect()
}

pub fn random_demand(r: &mut ChaCha8Rng) -> DemandFn {
    match r.gen_range(0..3) {
        0 => DemandFn::Linear { rate: r.gen_range(0.5..2.0) },
        1 => DemandFn::Capped { speed: r.gen_range(0.5..2.0), length: 1.0, max_outflow: r.gen_range(0.3..1.5) },
        _ => {
            let s = r.gen_range(0.5..2.0);
            let bend = r.gen_range(0.2..0.8);
            let s2 = s * r.gen_range(0.1..0.6);
            // second piece meets the first at volume `bend`
            DemandFn::Piecewise(ConcavePwl::new(vec![Piece::new(s, 0.0), Piece::new(s2, (s - s2) * bend)]))
        }
    }
}

pub fn random_supply(r: &mut ChaCha8Rng) -> SupplyFn {
    if r.gen_bool(0.6) {
        SupplyFn::Affine { capacity: r.gen_range(1.0..3.0), wave_speed: r.gen_range(0.5..1.5) }
    } else {
        let jam = r.gen_range(1.5..4.0);
        let w = r.gen_range(0.5..1.5);
        let cap = w * jam * r.gen_range(0.3..0.8);
        SupplyFn::Piecewise(ConcavePwl::new(vec![Piece::new(0.0, cap), Piece::new(-w, w * jam)]))
    }
}

pub struct RandomOptions {
    pub max_cells: usize,
    pub max_commodities: usize,
    pub max_steps: usize,
    /// Include negative outflow cost coefficients.
    pub outflow_cost: bool,
}

impl Default for RandomOptions {
    fn default() -> Self {
        Self { max_cells: 8, max_commodities: 3, max_steps: 20, outflow_cost: true }
    }
}

pub fn random_problem(r: &mut ChaCha8Rng, o: &RandomOptions) -> Problem {
    let net = build_network(random_spec(r, o.max_cells, o.max_commodities)).expect("generated network is valid");
    let kk = net.n_commodities();
    let mut fund = Fundamentals::new(net.n_cells(), kk);
    for slot in net.slots() {
        fund.set_demand(slot.cell, slot.commodity, random_demand(r));
    }
    for i in net.cells() {
        fund.set_supply(i, random_supply(r));
        for k in net.commodity_ids() {
            fund.set_weight(i, k, r.gen_range(0.5..2.0));
        }
    }
    // largest power of two below the stability bound keeps the horizon exact
    let bound = fund.max_stable_step(&net);
    let h = 2f64.powi(bound.log2().floor() as i32);
    let steps = r.gen_range(1..=o.max_steps);

    let mut initial = State::zeros(&net);
    for i in net.cells() {
        let jam = fund.supply(i).unwrap().jam();
        let mut vals = Vec::new();
        for k in net.commodity_ids() {
            if net.is_utilizable(i, k) {
                vals.push((k, r.gen_range(0.0..1.0)));
            }
        }
        let weighted: f64 = vals.iter().map(|&(k, v)| fund.weight(i, k) * v).sum();
        let scale = if weighted > 0.0 { (0.8 * jam / weighted).min(1.0) } else { 1.0 };
        for (k, v) in vals {
            initial.set(&net, i, k, v * scale);
        }
    }

    let n = net.n_cells() * kk;
    let rates = |r: &mut ChaCha8Rng| {
        let mut v = vec![0.0; n];
        for slot in net.slots() {
            if net.is_on_ramp(slot.cell) && r.gen_bool(0.8) {
                v[net.idx(slot.cell, slot.commodity)] = r.gen_range(0.0..1.0);
            }
        }
        v
    };
    let inflow = if r.gen_bool(0.5) {
        InflowProfile::constant(rates(r))
    } else {
        let t1 = h * r.gen_range(1..=steps) as f64;
        InflowProfile::piecewise(vec![(0.0, rates(r)), (t1, rates(r))])
    };

    let mut cost = CostSpec::total_volume(&net);
    for slot in net.slots() {
        let d = net.idx(slot.cell, slot.commodity);
        cost.state[d] = r.gen_range(0.0..1.0);
        if o.outflow_cost && r.gen_bool(0.2) {
            cost.outflow[d] = -r.gen_range(0.0..0.5);
        }
    }
    Problem::new(net, fund, inflow, initial, cost, SimConfig::new(h, h * steps as f64)).expect("generated problem is valid")
}

/// Speed limits uniform in `[0, 1]` and random turning ratios on the
/// commodity's own arcs.
pub fn random_controls(r: &mut ChaCha8Rng, net: &Network, steps: usize) -> Vec<Control> {
    (0..steps)
        .map(|_| {
            let mut u = Control::uncontrolled(net);
            for slot in net.slots() {
                u.alpha[net.idx(slot.cell, slot.commodity)] = r.gen_range(0.0..=1.0);
                let arcs = net.out_arcs(slot.cell, slot.commodity);
                if arcs.len() > 1 {
                    let w: Vec<f64> = arcs.clone().map(|_| r.gen_range(0.0..1.0)).collect();
                    let total: f64 = w.iter().sum();
                    for (a, wi) in arcs.zip(w) {
                        u.routing[a] = wi / total;
                    }
                }
            }
            u
        })
        .collect()
}

/// Aggregate routed demand `D_j = sum over arcs into j of R alpha d`,
/// computed from the routing matrices rather than the arc list.
pub fn routed_demand(net: &Network, fund: &Fundamentals, x: &State, u: &Control) -> Vec<f64> {
    let mut d = vec![0.0; net.n_cells()];
    for k in net.commodity_ids() {
        let m = u.routing_matrix(net, k);
        for i in net.cells() {
            if !net.is_utilizable(i, k) {
                continue;
            }
            let dem = fund.demand(i, k).unwrap().value(x.get(net, i, k)) * u.alpha[net.idx(i, k)];
            for j in net.cells() {
                d[j.0] += m.get(i, j) * dem;
            }
        }
    }
    d
}

/// Largest `tau` on the grid `{0, 1/n, ..., 1}` for which every downstream
/// cell routed to by `i` absorbs `tau` times its routed demand.
pub fn scan_gamma(net: &Network, fund: &Fundamentals, x: &State, u: &Control, i: CellId, n: usize) -> f64 {
    let d = routed_demand(net, fund, x, u);
    let targets: Vec<CellId> = net
        .cells()
        .filter(|&j| net.commodity_ids().any(|k| net.is_utilizable(i, k) && u.routing_matrix(net, k).get(i, j) > 0.0))
        .collect();
    let mut best = 0.0;
    for s in 0..=n {
        let tau = s as f64 / n as f64;
        let ok = targets.iter().all(|&j| {
            let supply = fund.supply(j).unwrap().value(fund.weighted_volume(j, &x.x));
            tau * d[j.0] <= supply * (1.0 + 1e-12)
        });
        if ok {
            best = tau;
        }
    }
    best
}
