//! Commodity-restricted transportation multigraph.
//!
//! Cells are the edges of the multigraph. Each cell runs from a tail node to a
//! head node; the distinguished [`NodeId::WORLD`] node stands for the outside
//! of the network, so cells leaving it are on-ramps and cells entering it are
//! off-ramps. Every commodity is restricted to a subset of utilizable cells.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use thiserror::Error;

/// Dense index of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId(pub usize);

/// Dense index of a commodity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CommodityId(pub usize);

/// Junction identifier. [`NodeId::WORLD`] is the virtual outside node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const WORLD: NodeId = NodeId(usize::MAX);

    pub fn is_world(self) -> bool {
        self == Self::WORLD
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cell {}", self.0)
    }
}

impl fmt::Display for CommodityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "commodity {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSpec {
    pub tail: NodeId,
    pub head: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CommoditySpec {
    /// Utilizable cells.
    pub cells: Vec<CellId>,
    /// Off-ramps this commodity may leave through. `None` means every
    /// utilizable off-ramp.
    pub exits: Option<Vec<CellId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NetworkSpec {
    pub cells: Vec<CellSpec>,
    pub commodities: Vec<CommoditySpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RampKind {
    On,
    Off,
}

/// A single reason a [`NetworkSpec`] is rejected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkIssue {
    #[error("network has no cells")]
    NoCells,
    #[error("network has no commodities")]
    NoCommodities,
    #[error("{0} is a self-loop")]
    SelfLoop(CellId),
    #[error("{commodity} references unknown {cell}")]
    UnknownCell { commodity: CommodityId, cell: CellId },
    #[error("{commodity} lists {cell} as exit but it is not a utilizable off-ramp")]
    InvalidExit { commodity: CommodityId, cell: CellId },
    #[error("{commodity} has no utilizable {kind:?}-ramp")]
    EmptyRampSet { commodity: CommodityId, kind: RampKind },
    #[error("{cell} is not on any on-ramp to off-ramp path of {commodity}")]
    UnreachableCell { commodity: CommodityId, cell: CellId },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid network ({} issue(s))", issues.len())]
pub struct NetworkError {
    pub issues: Vec<NetworkIssue>,
}

/// One adjacent pair `(from, to)` usable by `commodity`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Arc {
    pub commodity: CommodityId,
    pub from: CellId,
    pub to: CellId,
}

/// A utilizable (cell, commodity) pair. Volumes, demand rows and dynamics rows
/// are all indexed by slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Slot {
    pub cell: CellId,
    pub commodity: CommodityId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommodityTopology {
    pub utilizable: Vec<CellId>,
    pub on_ramps: Vec<CellId>,
    pub off_ramps: Vec<CellId>,
    /// Range into [`Network::arcs`].
    pub arcs: Range<usize>,
}

/// Validated network with per-commodity ramp sets and adjacency.
///
/// Arcs are sorted by `(commodity, from, to)` so the outgoing arcs of a slot
/// are contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    spec: NetworkSpec,
    commodities: Vec<CommodityTopology>,
    /// Global adjacency set, sorted.
    adjacency: Vec<(CellId, CellId)>,
    arcs: Vec<Arc>,
    /// `n_cells * n_commodities`, range of outgoing arcs per (cell, commodity).
    out_arcs: Vec<Range<usize>>,
    /// Per cell, incoming arc indices over all commodities.
    in_arcs: Vec<Vec<usize>>,
    /// `n_cells * n_commodities`, slot index or `usize::MAX`.
    slot_index: Vec<usize>,
    slots: Vec<Slot>,
    /// `n_cells * n_commodities`, whether the cell is an exit for the commodity.
    exit_mask: Vec<bool>,
    exits: Vec<Slot>,
}

pub fn build_network(spec: NetworkSpec) -> Result<Network, NetworkError> {
    let mut issues = Vec::new();
    if spec.cells.is_empty() {
        issues.push(NetworkIssue::NoCells);
    }
    if spec.commodities.is_empty() {
        issues.push(NetworkIssue::NoCommodities);
    }
    for (i, c) in spec.cells.iter().enumerate() {
        // Two world endpoints are allowed: a cell that is both on- and off-ramp.
        if c.tail == c.head && !c.tail.is_world() {
            issues.push(NetworkIssue::SelfLoop(CellId(i)));
        }
    }
    if !issues.is_empty() {
        return Err(NetworkError { issues });
    }

    let n = spec.cells.len();
    for (k, com) in spec.commodities.iter().enumerate() {
        let k = CommodityId(k);
        let mut mask = vec![false; n];
        for &c in &com.cells {
            if c.0 >= n {
                issues.push(NetworkIssue::UnknownCell { commodity: k, cell: c });
            } else {
                mask[c.0] = true;
            }
        }
        let on: Vec<CellId> = (0..n)
            .filter(|&i| mask[i] && spec.cells[i].tail.is_world())
            .map(CellId)
            .collect();
        let off = exit_cells(&spec, k, &mask, &mut issues);
        if on.is_empty() {
            issues.push(NetworkIssue::EmptyRampSet { commodity: k, kind: RampKind::On });
        }
        if off.is_empty() {
            issues.push(NetworkIssue::EmptyRampSet { commodity: k, kind: RampKind::Off });
        }
        if on.is_empty() || off.is_empty() {
            continue;
        }
        let valid = path_cells(&spec, &mask, &on, &off);
        for i in 0..n {
            if mask[i] && !valid[i] {
                issues.push(NetworkIssue::UnreachableCell { commodity: k, cell: CellId(i) });
            }
        }
    }
    if !issues.is_empty() {
        return Err(NetworkError { issues });
    }
    Ok(Network::assemble(spec))
}

fn exit_cells(
    spec: &NetworkSpec,
    k: CommodityId,
    mask: &[bool],
    issues: &mut Vec<NetworkIssue>,
) -> Vec<CellId> {
    let is_off = |i: usize| i < mask.len() && mask[i] && spec.cells[i].head.is_world();
    match &spec.commodities[k.0].exits {
        None => (0..mask.len()).filter(|&i| is_off(i)).map(CellId).collect(),
        Some(list) => {
            let mut out = Vec::new();
            for &c in list {
                if is_off(c.0) {
                    out.push(c);
                } else {
                    issues.push(NetworkIssue::InvalidExit { commodity: k, cell: c });
                }
            }
            out.sort();
            out.dedup();
            out
        }
    }
}

/// Cells of `mask` lying on some path from `on` to `off` inside `mask`:
/// forward reachability from the on-ramps intersected with backward
/// reachability from the off-ramps.
fn path_cells(spec: &NetworkSpec, mask: &[bool], on: &[CellId], off: &[CellId]) -> Vec<bool> {
    let n = mask.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut by_tail: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for j in 0..n {
        if mask[j] && !spec.cells[j].tail.is_world() {
            by_tail.entry(spec.cells[j].tail).or_default().push(j);
        }
    }
    for i in 0..n {
        let head = spec.cells[i].head;
        if !mask[i] || head.is_world() {
            continue;
        }
        if let Some(js) = by_tail.get(&head) {
            for &j in js {
                succ[i].push(j);
                pred[j].push(i);
            }
        }
    }
    let fwd = reach(n, on.iter().map(|c| c.0), &succ);
    let mut bwd = reach(n, off.iter().map(|c| c.0), &pred);
    // An off-ramp outside the exit set cannot terminate a path.
    for i in 0..n {
        bwd[i] = bwd[i] && fwd[i];
    }
    bwd
}

fn reach(n: usize, start: impl Iterator<Item = usize>, next: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = Vec::new();
    for s in start {
        if !seen[s] {
            seen[s] = true;
            stack.push(s);
        }
    }
    while let Some(i) = stack.pop() {
        for &j in &next[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen
}

/// Largest subset of the declared utilizable cells of `commodity` satisfying
/// the path condition. Useful to report what a rejected commodity should have
/// declared.
pub fn maximal_valid_cells(spec: &NetworkSpec, commodity: CommodityId) -> Vec<CellId> {
    let n = spec.cells.len();
    let mut mask = vec![false; n];
    for &c in &spec.commodities[commodity.0].cells {
        if c.0 < n {
            mask[c.0] = true;
        }
    }
    let on: Vec<CellId> =
        (0..n).filter(|&i| mask[i] && spec.cells[i].tail.is_world()).map(CellId).collect();
    let mut ignored = Vec::new();
    let off = exit_cells(spec, commodity, &mask, &mut ignored);
    let valid = path_cells(spec, &mask, &on, &off);
    (0..n).filter(|&i| mask[i] && valid[i]).map(CellId).collect()
}

impl Network {
    fn assemble(spec: NetworkSpec) -> Network {
        let n = spec.cells.len();
        let kk = spec.commodities.len();
        let mut adjacency = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let hi = spec.cells[i].head;
                if !hi.is_world() && hi == spec.cells[j].tail {
                    adjacency.push((CellId(i), CellId(j)));
                }
            }
        }

        let mut commodities = Vec::with_capacity(kk);
        let mut arcs = Vec::new();
        let mut slot_index = vec![usize::MAX; n * kk];
        let mut slots = Vec::new();
        let mut exit_mask = vec![false; n * kk];
        let mut exits = Vec::new();
        for k in 0..kk {
            let mut mask = vec![false; n];
            for c in &spec.commodities[k].cells {
                mask[c.0] = true;
            }
            let utilizable: Vec<CellId> = (0..n).filter(|&i| mask[i]).map(CellId).collect();
            let on_ramps: Vec<CellId> = utilizable
                .iter()
                .copied()
                .filter(|c| spec.cells[c.0].tail.is_world())
                .collect();
            let mut ignored = Vec::new();
            let off_ramps = exit_cells(&spec, CommodityId(k), &mask, &mut ignored);
            let start = arcs.len();
            for &(i, j) in &adjacency {
                if mask[i.0] && mask[j.0] {
                    arcs.push(Arc { commodity: CommodityId(k), from: i, to: j });
                }
            }
            for &c in &utilizable {
                slot_index[c.0 * kk + k] = slots.len();
                slots.push(Slot { cell: c, commodity: CommodityId(k) });
            }
            for &c in &off_ramps {
                exit_mask[c.0 * kk + k] = true;
                exits.push(Slot { cell: c, commodity: CommodityId(k) });
            }
            commodities.push(CommodityTopology {
                utilizable,
                on_ramps,
                off_ramps,
                arcs: start..arcs.len(),
            });
        }
        let mut out_arcs = vec![0..0; n * kk];
        let mut in_arcs = vec![Vec::new(); n];
        let mut a = 0;
        while a < arcs.len() {
            let Arc { commodity, from, .. } = arcs[a];
            let s = a;
            while a < arcs.len() && arcs[a].commodity == commodity && arcs[a].from == from {
                a += 1;
            }
            out_arcs[from.0 * kk + commodity.0] = s..a;
        }
        for (idx, arc) in arcs.iter().enumerate() {
            in_arcs[arc.to.0].push(idx);
        }
        Network {
            spec,
            commodities,
            adjacency,
            arcs,
            out_arcs,
            in_arcs,
            slot_index,
            slots,
            exit_mask,
            exits,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn n_cells(&self) -> usize {
        self.spec.cells.len()
    }

    pub fn n_commodities(&self) -> usize {
        self.spec.commodities.len()
    }

    pub fn cell(&self, i: CellId) -> CellSpec {
        self.spec.cells[i.0]
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> {
        (0..self.n_cells()).map(CellId)
    }

    pub fn commodity_ids(&self) -> impl Iterator<Item = CommodityId> {
        (0..self.n_commodities()).map(CommodityId)
    }

    pub fn on_ramps(&self) -> Vec<CellId> {
        self.cells().filter(|&c| self.cell(c).tail.is_world()).collect()
    }

    pub fn off_ramps(&self) -> Vec<CellId> {
        self.cells().filter(|&c| self.cell(c).head.is_world()).collect()
    }

    pub fn is_on_ramp(&self, i: CellId) -> bool {
        self.cell(i).tail.is_world()
    }

    pub fn is_off_ramp(&self, i: CellId) -> bool {
        self.cell(i).head.is_world()
    }

    pub fn commodity(&self, k: CommodityId) -> &CommodityTopology {
        &self.commodities[k.0]
    }

    pub fn adjacency(&self) -> &[(CellId, CellId)] {
        &self.adjacency
    }

    /// All commodity arcs, the union of the per-commodity adjacency sets.
    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn commodity_arcs(&self, k: CommodityId) -> &[Arc] {
        &self.arcs[self.commodities[k.0].arcs.clone()]
    }

    /// Index range into [`Network::arcs`] of arcs leaving `i` for commodity `k`.
    pub fn out_arcs(&self, i: CellId, k: CommodityId) -> Range<usize> {
        self.out_arcs[i.0 * self.n_commodities() + k.0].clone()
    }

    /// Arc indices entering `j`, over all commodities.
    pub fn in_arcs(&self, j: CellId) -> &[usize] {
        &self.in_arcs[j.0]
    }

    pub fn arc_index(&self, k: CommodityId, from: CellId, to: CellId) -> Option<usize> {
        let r = self.out_arcs(from, k);
        r.clone().find(|&a| self.arcs[a].to == to)
    }

    pub fn is_utilizable(&self, i: CellId, k: CommodityId) -> bool {
        self.slot_index[i.0 * self.n_commodities() + k.0] != usize::MAX
    }

    pub fn is_exit(&self, i: CellId, k: CommodityId) -> bool {
        self.exit_mask[i.0 * self.n_commodities() + k.0]
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn slot(&self, i: CellId, k: CommodityId) -> Option<usize> {
        let s = self.slot_index[i.0 * self.n_commodities() + k.0];
        (s != usize::MAX).then_some(s)
    }

    /// Exit slots `(i, k)` with `i` in the commodity's off-ramp set.
    pub fn exits(&self) -> &[Slot] {
        &self.exits
    }

    /// Flat index of a (cell, commodity) entry in dense matrices.
    #[inline]
    pub fn idx(&self, i: CellId, k: CommodityId) -> usize {
        i.0 * self.n_commodities() + k.0
    }
}

/// Turning ratios of one commodity as a sparse matrix over cell pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoutingMatrix {
    pub entries: BTreeMap<(CellId, CellId), f64>,
}

impl RoutingMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, from: CellId, to: CellId, ratio: f64) {
        self.entries.insert((from, to), ratio);
    }

    pub fn get(&self, from: CellId, to: CellId) -> f64 {
        self.entries.get(&(from, to)).copied().unwrap_or(0.0)
    }

    /// Uniform split over the outgoing arcs of every utilizable cell.
    pub fn uniform(net: &Network, k: CommodityId) -> Self {
        let mut m = Self::new();
        for &c in &net.commodity(k).utilizable {
            let r = net.out_arcs(c, k);
            let n = r.len() as f64;
            for a in r {
                m.set(c, net.arcs()[a].to, 1.0 / n);
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoutingViolation {
    /// Row sum differs from 1 (regular cell) or 0 (exit).
    RowSum { cell: CellId, sum: f64, expected: f64 },
    /// Mass on a pair outside the commodity adjacency set.
    Support { from: CellId, to: CellId, value: f64 },
    /// Entry outside `[0, 1]`.
    Range { from: CellId, to: CellId, value: f64 },
}

pub const ROUTING_TOL: f64 = 1e-9;

/// Checks row sums and support of `m` for commodity `k`. Returns every
/// violation found; an empty list means the matrix is admissible.
pub fn validate_routing(net: &Network, m: &RoutingMatrix, k: CommodityId) -> Vec<RoutingViolation> {
    let mut out = Vec::new();
    let n = net.n_cells();
    let mut sums = vec![0.0; n];
    for (&(from, to), &v) in &m.entries {
        if !(0.0..=1.0).contains(&v) {
            out.push(RoutingViolation::Range { from, to, value: v });
        }
        let inside = from.0 < n && to.0 < n && net.arc_index(k, from, to).is_some();
        if !inside {
            if v != 0.0 {
                out.push(RoutingViolation::Support { from, to, value: v });
            }
            continue;
        }
        sums[from.0] += v;
    }
    for &c in &net.commodity(k).utilizable {
        let expected = if net.is_exit(c, k) { 0.0 } else { 1.0 };
        if (sums[c.0] - expected).abs() > ROUTING_TOL {
            out.push(RoutingViolation::RowSum { cell: c, sum: sums[c.0], expected });
        }
    }
    out
}
