//! Demand and supply functions of the fundamental diagram.
//!
//! Both are represented piecewise-linearly. A concave piecewise-linear
//! function is a list of affine pieces ordered left to right with
//! non-increasing slopes, so its value is the minimum over pieces. That
//! minimum is what turns the demand and supply bounds into linear rows of the
//! relaxed program.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::network::{CellId, CommodityId, Network};

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("negative volume {0}")]
pub struct NegativeVolume(pub f64);

/// Affine piece `slope * xi + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub slope: f64,
    pub intercept: f64,
}

impl Piece {
    pub const fn new(slope: f64, intercept: f64) -> Self {
        Self { slope, intercept }
    }

    #[inline]
    pub fn at(&self, xi: f64) -> f64 {
        self.slope * xi + self.intercept
    }
}

/// Concave piecewise-linear function, evaluated as the minimum over pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcavePwl {
    pub pieces: Vec<Piece>,
}

impl ConcavePwl {
    pub fn new(pieces: Vec<Piece>) -> Self {
        Self { pieces }
    }

    pub fn eval(&self, xi: f64) -> f64 {
        self.pieces.iter().map(|p| p.at(xi)).fold(f64::INFINITY, f64::min)
    }

    /// Breakpoints between consecutive pieces.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces
            .windows(2)
            .filter(|w| w[0].slope != w[1].slope)
            .map(|w| (w[1].intercept - w[0].intercept) / (w[0].slope - w[1].slope))
            .collect()
    }
}

/// Maximum outflow of one commodity from one cell as a function of its volume.
#[derive(Debug, Clone, PartialEq)]
pub enum DemandFn {
    /// `rate * xi`.
    Linear { rate: f64 },
    /// `min{ speed / length * xi, max_outflow }`.
    Capped { speed: f64, length: f64, max_outflow: f64 },
    Piecewise(ConcavePwl),
}

impl DemandFn {
    pub fn eval(&self, x: f64) -> Result<f64, NegativeVolume> {
        if x < 0.0 {
            return Err(NegativeVolume(x));
        }
        Ok(self.value(x))
    }

    /// Evaluation without the sign check, for hot loops on validated states.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            DemandFn::Linear { rate } => rate * x,
            DemandFn::Capped { speed, length, max_outflow } => (speed / length * x).min(max_outflow),
            DemandFn::Piecewise(ref p) => p.eval(x),
        }
    }

    pub fn to_pwl(&self) -> ConcavePwl {
        match *self {
            DemandFn::Linear { rate } => ConcavePwl::new(vec![Piece::new(rate, 0.0)]),
            DemandFn::Capped { speed, length, max_outflow } => ConcavePwl::new(vec![
                Piece::new(speed / length, 0.0),
                Piece::new(0.0, max_outflow),
            ]),
            DemandFn::Piecewise(ref p) => p.clone(),
        }
    }

    /// Slope at the origin, the steepest slope of a concave demand.
    pub fn max_slope(&self) -> f64 {
        match *self {
            DemandFn::Linear { rate } => rate,
            DemandFn::Capped { speed, length, .. } => speed / length,
            DemandFn::Piecewise(ref p) => p.pieces.iter().map(|q| q.slope).fold(0.0, f64::max),
        }
    }
}

/// Maximum inflow into a cell as a function of its weighted total volume.
#[derive(Debug, Clone, PartialEq)]
pub enum SupplyFn {
    /// `max{0, capacity - wave_speed * xi}`.
    Affine { capacity: f64, wave_speed: f64 },
    /// `max{0, min over pieces}`.
    Piecewise(ConcavePwl),
}

impl SupplyFn {
    pub fn eval(&self, xi: f64) -> Result<f64, NegativeVolume> {
        if xi < 0.0 {
            return Err(NegativeVolume(xi));
        }
        Ok(self.value(xi))
    }

    #[inline]
    pub fn value(&self, xi: f64) -> f64 {
        match *self {
            SupplyFn::Affine { capacity, wave_speed } => (capacity - wave_speed * xi).max(0.0),
            SupplyFn::Piecewise(ref p) => p.eval(xi).max(0.0),
        }
    }

    /// Pieces of the unclipped concave part. The clip at zero is applied by
    /// [`SupplyFn::value`]; linear rows use only the pieces.
    pub fn to_pwl(&self) -> ConcavePwl {
        match *self {
            SupplyFn::Affine { capacity, wave_speed } => {
                ConcavePwl::new(vec![Piece::new(-wave_speed, capacity)])
            }
            SupplyFn::Piecewise(ref p) => p.clone(),
        }
    }

    /// Steepest descent rate over the pieces.
    pub fn max_decay(&self) -> f64 {
        self.to_pwl().pieces.iter().map(|p| -p.slope).fold(0.0, f64::max)
    }

    /// Smallest weighted volume where the supply reaches zero.
    pub fn jam(&self) -> f64 {
        let pwl = self.to_pwl();
        let mut best = f64::INFINITY;
        for p in &pwl.pieces {
            if p.slope < 0.0 {
                let z = -p.intercept / p.slope;
                if pwl.eval(z) <= 1e-12 * (1.0 + p.intercept.abs()) {
                    best = best.min(z.max(0.0));
                }
            } else if p.intercept <= 0.0 && p.slope == 0.0 {
                best = best.min(0.0);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeViolation {
    EmptyPieceList,
    /// Slopes must not increase from one piece to the next.
    NotConcave { piece: usize },
    /// Demand slope below zero.
    Decreasing { piece: usize },
    /// Supply slope above zero.
    Increasing { piece: usize },
    /// Demand must vanish at zero volume.
    NonzeroAtOrigin { value: f64 },
    NonFinite { piece: usize },
}

fn check_pwl(p: &ConcavePwl) -> Vec<ShapeViolation> {
    let mut out = Vec::new();
    if p.pieces.is_empty() {
        out.push(ShapeViolation::EmptyPieceList);
    }
    for (i, q) in p.pieces.iter().enumerate() {
        if !q.slope.is_finite() || !q.intercept.is_finite() {
            out.push(ShapeViolation::NonFinite { piece: i });
        }
    }
    for (i, w) in p.pieces.windows(2).enumerate() {
        if w[1].slope > w[0].slope {
            out.push(ShapeViolation::NotConcave { piece: i + 1 });
        }
    }
    out
}

pub fn check_demand(d: &DemandFn) -> Vec<ShapeViolation> {
    let p = d.to_pwl();
    let mut out = check_pwl(&p);
    for (i, q) in p.pieces.iter().enumerate() {
        if q.slope < 0.0 {
            out.push(ShapeViolation::Decreasing { piece: i });
        }
    }
    if !p.pieces.is_empty() {
        let d0 = p.eval(0.0);
        if d0 != 0.0 {
            out.push(ShapeViolation::NonzeroAtOrigin { value: d0 });
        }
    }
    out
}

pub fn check_supply(s: &SupplyFn) -> Vec<ShapeViolation> {
    let p = s.to_pwl();
    let mut out = check_pwl(&p);
    for (i, q) in p.pieces.iter().enumerate() {
        if q.slope > 0.0 {
            out.push(ShapeViolation::Increasing { piece: i });
        }
    }
    out
}

/// All demand, supply and weight data of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Fundamentals {
    n_commodities: usize,
    /// `n_cells * n_commodities`, present on utilizable slots.
    demand: Vec<Option<DemandFn>>,
    supply: Vec<Option<SupplyFn>>,
    /// `n_cells * n_commodities` space-occupancy weights.
    weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FundamentalsIssue {
    #[error("missing demand for {cell}, {commodity}")]
    MissingDemand { cell: CellId, commodity: CommodityId },
    #[error("missing supply for {cell}, which receives flow")]
    MissingSupply { cell: CellId },
    #[error("weight of {cell}, {commodity} must be positive, got {value}")]
    NonPositiveWeight { cell: CellId, commodity: CommodityId, value: f64 },
    #[error("demand of {cell}, {commodity} violates the concavity assumptions: {violations:?}")]
    Demand { cell: CellId, commodity: CommodityId, violations: Vec<ShapeViolation> },
    #[error("supply of {cell} violates the concavity assumptions: {violations:?}")]
    Supply { cell: CellId, violations: Vec<ShapeViolation> },
}

impl Fundamentals {
    /// Empty table with unit weights.
    pub fn new(n_cells: usize, n_commodities: usize) -> Self {
        Self {
            n_commodities,
            demand: vec![None; n_cells * n_commodities],
            supply: vec![None; n_cells],
            weights: vec![1.0; n_cells * n_commodities],
        }
    }

    pub fn set_demand(&mut self, i: CellId, k: CommodityId, d: DemandFn) {
        self.demand[i.0 * self.n_commodities + k.0] = Some(d);
    }

    pub fn set_supply(&mut self, i: CellId, s: SupplyFn) {
        self.supply[i.0] = Some(s);
    }

    pub fn set_weight(&mut self, i: CellId, k: CommodityId, w: f64) {
        self.weights[i.0 * self.n_commodities + k.0] = w;
    }

    pub fn demand(&self, i: CellId, k: CommodityId) -> Option<&DemandFn> {
        self.demand[i.0 * self.n_commodities + k.0].as_ref()
    }

    pub fn supply(&self, i: CellId) -> Option<&SupplyFn> {
        self.supply[i.0].as_ref()
    }

    #[inline]
    pub fn weight(&self, i: CellId, k: CommodityId) -> f64 {
        self.weights[i.0 * self.n_commodities + k.0]
    }

    /// Demand value on a utilizable slot; zero where no demand is defined.
    #[inline]
    pub fn demand_value(&self, flat: usize, x: f64) -> f64 {
        match &self.demand[flat] {
            Some(d) => d.value(x),
            None => 0.0,
        }
    }

    /// Supply of cell `j` at the weighted volume of `x` (dense matrix over
    /// cell x commodity). Infinite when the cell has no supply function.
    pub fn supply_at(&self, j: CellId, x: &[f64]) -> f64 {
        match &self.supply[j.0] {
            Some(s) => s.value(self.weighted_volume(j, x)),
            None => f64::INFINITY,
        }
    }

    pub fn weighted_volume(&self, j: CellId, x: &[f64]) -> f64 {
        let base = j.0 * self.n_commodities;
        (0..self.n_commodities).map(|k| self.weights[base + k] * x[base + k]).sum()
    }

    /// Checks presence, positivity and the concavity assumptions against `net`.
    pub fn validate(&self, net: &Network) -> Vec<FundamentalsIssue> {
        let mut out = Vec::new();
        for slot in net.slots() {
            let (i, k) = (slot.cell, slot.commodity);
            match self.demand(i, k) {
                None => out.push(FundamentalsIssue::MissingDemand { cell: i, commodity: k }),
                Some(d) => {
                    let v = check_demand(d);
                    if !v.is_empty() {
                        out.push(FundamentalsIssue::Demand { cell: i, commodity: k, violations: v });
                    }
                }
            }
            let w = self.weight(i, k);
            if !(w > 0.0 && w.is_finite()) {
                out.push(FundamentalsIssue::NonPositiveWeight { cell: i, commodity: k, value: w });
            }
        }
        for j in net.cells() {
            let receives = !net.in_arcs(j).is_empty();
            match self.supply(j) {
                None if receives => out.push(FundamentalsIssue::MissingSupply { cell: j }),
                None => {}
                Some(s) => {
                    let v = check_supply(s);
                    if !v.is_empty() {
                        out.push(FundamentalsIssue::Supply { cell: j, violations: v });
                    }
                }
            }
        }
        out
    }

    /// Largest step `h` for which explicit Euler cannot drive a volume
    /// negative nor push a receiving cell past its jam density.
    pub fn max_stable_step(&self, net: &Network) -> f64 {
        let mut rate: f64 = 0.0;
        for slot in net.slots() {
            if let Some(d) = self.demand(slot.cell, slot.commodity) {
                rate = rate.max(d.max_slope());
            }
        }
        for j in net.cells() {
            if net.in_arcs(j).is_empty() {
                continue;
            }
            if let Some(s) = self.supply(j) {
                let wmax = net
                    .commodity_ids()
                    .filter(|&k| net.is_utilizable(j, k))
                    .map(|k| self.weight(j, k))
                    .fold(0.0, f64::max);
                rate = rate.max(wmax * s.max_decay());
            }
        }
        if rate > 0.0 {
            1.0 / rate
        } else {
            f64::INFINITY
        }
    }
}
