//! Reference instances: the ten-cell two-commodity network with two
//! on-ramps, the three-cell diverge, and a two-cell instance small enough
//! for exhaustive search.

use alloc::vec;
use alloc::vec::Vec;

use crate::fundamental::{DemandFn, Fundamentals, SupplyFn};
use crate::network::{build_network, CellId, CellSpec, CommodityId, CommoditySpec, Network, NetworkSpec, NodeId};
use crate::problem::Problem;
use crate::sim::{CostSpec, InflowProfile, SimConfig, State};

const A: NodeId = NodeId(0);
const B: NodeId = NodeId(1);
const C: NodeId = NodeId(2);
const D: NodeId = NodeId(3);
const E: NodeId = NodeId(4);
const F: NodeId = NodeId(5);
const W: NodeId = NodeId::WORLD;

fn ids(v: &[usize]) -> Vec<CellId> {
    v.iter().map(|&i| CellId(i)).collect()
}

/// Ten cells, zero-based. Commodity `a` uses every cell; `b` avoids cell 2
/// and the cells 7, 8 that only lead to the exit it may not use.
pub fn ten_cell_spec() -> NetworkSpec {
    let cells = [(W, A), (A, B), (A, D), (W, D), (D, E), (B, C), (E, C), (E, F), (F, W), (C, W)]
        .iter()
        .map(|&(tail, head)| CellSpec { tail, head })
        .collect();
    NetworkSpec {
        cells,
        commodities: vec![
            CommoditySpec { cells: ids(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]), exits: None },
            CommoditySpec { cells: ids(&[0, 1, 3, 4, 5, 6, 9]), exits: Some(ids(&[9])) },
        ],
    }
}

pub fn ten_cell_network() -> Network {
    build_network(ten_cell_spec()).expect("reference network is valid")
}

/// `d_a = 4x`, `d_b = 2x`, `s = 4 - xi` with weights 4 and 2, unit inflow of
/// both commodities at cell 0 and of `b` at cell 3, volume 0.5 everywhere,
/// total-volume cost.
pub fn ten_cell_problem(h: f64, horizon: f64) -> Problem {
    let net = ten_cell_network();
    let (a, b) = (CommodityId(0), CommodityId(1));
    let mut fund = Fundamentals::new(net.n_cells(), 2);
    for i in net.cells() {
        fund.set_supply(i, SupplyFn::Affine { capacity: 4.0, wave_speed: 1.0 });
        fund.set_weight(i, a, 4.0);
        fund.set_weight(i, b, 2.0);
        if net.is_utilizable(i, a) {
            fund.set_demand(i, a, DemandFn::Linear { rate: 4.0 });
        }
        if net.is_utilizable(i, b) {
            fund.set_demand(i, b, DemandFn::Linear { rate: 2.0 });
        }
    }
    let mut rates = vec![0.0; net.n_cells() * 2];
    rates[net.idx(CellId(0), a)] = 1.0;
    rates[net.idx(CellId(0), b)] = 1.0;
    rates[net.idx(CellId(3), b)] = 1.0;
    let initial = State::uniform(&net, 0.5);
    let cost = CostSpec::total_volume(&net);
    Problem::new(net, fund, InflowProfile::constant(rates), initial, cost, SimConfig::new(h, horizon))
        .expect("reference problem is valid")
}

/// Cell 0 enters a junction that splits into exits 1 and 2. Commodity `a`
/// may use either exit, `b` only exit 1.
pub fn diverge_network() -> Network {
    build_network(NetworkSpec {
        cells: vec![CellSpec { tail: W, head: A }, CellSpec { tail: A, head: W }, CellSpec { tail: A, head: W }],
        commodities: vec![
            CommoditySpec { cells: ids(&[0, 1, 2]), exits: None },
            CommoditySpec { cells: ids(&[0, 1]), exits: None },
        ],
    })
    .expect("diverge network is valid")
}

/// Diverge with `d(x) = x`, `s(xi) = jam - xi`, unit weights and state
/// `x[cell][commodity]`. The cost counts only the volume left in cell 0, so
/// over two steps the optimum maximizes the first step's outflow of cell 0.
pub fn diverge_problem(jam: f64, x: [[f64; 2]; 3], h: f64) -> Problem {
    let net = diverge_network();
    let mut fund = Fundamentals::new(3, 2);
    for slot in net.slots() {
        fund.set_demand(slot.cell, slot.commodity, DemandFn::Linear { rate: 1.0 });
    }
    for i in [1, 2] {
        fund.set_supply(CellId(i), SupplyFn::Affine { capacity: jam, wave_speed: 1.0 });
    }
    let mut initial = State::zeros(&net);
    for (i, row) in x.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            if net.is_utilizable(CellId(i), CommodityId(k)) {
                initial.set(&net, CellId(i), CommodityId(k), v);
            }
        }
    }
    let mut cost = CostSpec::zero(&net);
    cost.state[net.idx(CellId(0), CommodityId(0))] = 1.0;
    cost.state[net.idx(CellId(0), CommodityId(1))] = 1.0;
    let inflow = InflowProfile::zero(&net);
    Problem::new(net, fund, inflow, initial, cost, SimConfig::new(h, 2.0 * h)).expect("diverge problem is valid")
}

/// Two cells in series shared by two commodities; `b` takes twice the room
/// of `a` downstream. Three steps of 0.5.
pub fn tiny_problem() -> Problem {
    let net = build_network(NetworkSpec {
        cells: vec![CellSpec { tail: W, head: A }, CellSpec { tail: A, head: W }],
        commodities: vec![
            CommoditySpec { cells: ids(&[0, 1]), exits: None },
            CommoditySpec { cells: ids(&[0, 1]), exits: None },
        ],
    })
    .expect("tiny network is valid");
    let (a, b) = (CommodityId(0), CommodityId(1));
    let mut fund = Fundamentals::new(2, 2);
    fund.set_demand(CellId(0), a, DemandFn::Linear { rate: 1.0 });
    fund.set_demand(CellId(0), b, DemandFn::Linear { rate: 0.5 });
    fund.set_demand(CellId(1), a, DemandFn::Linear { rate: 1.0 });
    fund.set_demand(CellId(1), b, DemandFn::Linear { rate: 1.0 });
    fund.set_supply(CellId(1), SupplyFn::Affine { capacity: 1.0, wave_speed: 1.0 });
    fund.set_weight(CellId(1), b, 2.0);
    let mut initial = State::zeros(&net);
    initial.set(&net, CellId(0), a, 1.0);
    initial.set(&net, CellId(0), b, 1.0);
    let mut rates = vec![0.0; 4];
    rates[net.idx(CellId(0), a)] = 0.5;
    let cost = CostSpec::total_volume(&net);
    Problem::new(net, fund, InflowProfile::constant(rates), initial, cost, SimConfig::new(0.5, 1.5))
        .expect("tiny problem is valid")
}

/// Single cell that is both on- and off-ramp with `d(x) = rate * x`.
pub fn one_cell_problem(rate: f64, x0: f64, inflow: f64, h: f64, horizon: f64) -> Problem {
    let net = build_network(NetworkSpec {
        cells: vec![CellSpec { tail: W, head: W }],
        commodities: vec![CommoditySpec { cells: ids(&[0]), exits: None }],
    })
    .expect("one-cell network is valid");
    let mut fund = Fundamentals::new(1, 1);
    fund.set_demand(CellId(0), CommodityId(0), DemandFn::Linear { rate });
    let cost = CostSpec::total_volume(&net);
    Problem::new(net, fund, InflowProfile::constant(vec![inflow]), State { x: vec![x0] }, cost, SimConfig::new(h, horizon))
        .expect("one-cell problem is valid")
}
