//! JSON scenario documents: named nodes, cells and commodities mapped to
//! dense indices, plus every parameter a [`Problem`] needs.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use mcdta_core::fundamental::{ConcavePwl, FundamentalsIssue, Piece};
use mcdta_core::network::{validate_routing, CellSpec, CommoditySpec, NetworkIssue, RoutingMatrix};
use mcdta_core::problem::ProblemIssue;
use mcdta_core::{
    build_network, CellId, CommodityId, Control, CostSpec, DemandFn, Fundamentals, InflowProfile, NetworkSpec, NodeId,
    Problem, SimConfig, State, SupplyFn,
};
use serde::Deserialize;

/// Node label reserved for the outside world.
pub const WORLD: &str = "world";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: Option<String>,
    pub network: NetworkSection,
    pub commodities: Vec<CommoditySection>,
    pub fundamentals: FundamentalsSection,
    #[serde(default)]
    pub inflows: Vec<InflowSegment>,
    pub initial_state: InitialState,
    pub cost: CostSection,
    pub horizon: Horizon,
    #[serde(default)]
    pub routing: RoutingSection,
    /// Cell whose outflow is plotted by default.
    #[serde(default)]
    pub plot_cell: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub cells: Vec<CellEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellEntry {
    pub name: String,
    pub tail: String,
    pub head: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommoditySection {
    pub name: String,
    pub cells: CellSet,
    /// Off-ramps the commodity leaves through; all of its off-ramps if absent.
    #[serde(default)]
    pub exits: Option<Vec<String>>,
}

/// `"all"` or a list of cell names.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CellSet {
    Keyword(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FundamentalsSection {
    pub demand: Vec<DemandEntry>,
    #[serde(default)]
    pub supply: Vec<SupplyEntry>,
    #[serde(default)]
    pub weights: Vec<WeightEntry>,
}

/// Entries without `cell` or `commodity` apply to every match; later
/// entries override earlier ones.
#[derive(Debug, Clone, Deserialize)]
pub struct DemandEntry {
    #[serde(default)]
    pub cell: Option<String>,
    #[serde(default)]
    pub commodity: Option<String>,
    #[serde(flatten)]
    pub law: DemandLaw,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemandLaw {
    Linear { rate: f64 },
    Capped { speed: f64, length: f64, max_outflow: f64 },
    /// `(slope, intercept)` pairs.
    Piecewise { pieces: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Deserialize)]
pub struct SupplyEntry {
    #[serde(default)]
    pub cell: Option<String>,
    #[serde(flatten)]
    pub law: SupplyLaw,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupplyLaw {
    Affine { capacity: f64, wave_speed: f64 },
    Piecewise { pieces: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightEntry {
    #[serde(default)]
    pub cell: Option<String>,
    #[serde(default)]
    pub commodity: Option<String>,
    pub weight: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InflowSegment {
    pub start: f64,
    pub rates: Vec<RateEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateEntry {
    pub cell: String,
    pub commodity: String,
    pub rate: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Same volume on every utilizable (cell, commodity).
    Uniform(f64),
    Volumes(Vec<VolumeEntry>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeEntry {
    pub cell: String,
    pub commodity: String,
    pub volume: f64,
}

/// `"total_volume"` or explicit coefficients.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CostSection {
    Keyword(String),
    Coefficients {
        #[serde(default)]
        state: Vec<CoefEntry>,
        #[serde(default)]
        outflow: Vec<CoefEntry>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefEntry {
    #[serde(default)]
    pub cell: Option<String>,
    #[serde(default)]
    pub commodity: Option<String>,
    pub coef: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    #[serde(rename = "T")]
    pub t: f64,
    pub h: f64,
}

/// Turning ratios of the uncontrolled baseline: uniform splits, optionally
/// overridden row by row.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(untagged)]
pub enum RoutingSection {
    #[default]
    Uniform,
    Keyword(String),
    Ratios { ratios: Vec<RatioEntry> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioEntry {
    pub commodity: String,
    pub from: String,
    pub to: String,
    pub ratio: f64,
}

/// One validation finding: which part of the model, where, and what.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub module: &'static str,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.module, self.location, self.message)
    }
}

#[derive(Debug)]
pub enum LoadError {
    Io(std::io::Error),
    Parse(serde_json::Error),
    /// `cfl_only` when the step size is the only problem.
    Invalid { diagnostics: Vec<Diagnostic>, cfl_only: bool },
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io(e) => write!(f, "cannot read scenario: {e}"),
            LoadError::Parse(e) => write!(f, "cannot parse scenario: {e}"),
            LoadError::Invalid { diagnostics, .. } => {
                for (n, d) in diagnostics.iter().enumerate() {
                    if n > 0 {
                        writeln!(f)?;
                    }
                    write!(f, "{d}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for LoadError {}

/// Display names for dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub nodes: Vec<String>,
    pub cells: Vec<String>,
    pub commodities: Vec<String>,
}

impl Labels {
    pub fn cell(&self, i: CellId) -> &str {
        &self.cells[i.0]
    }

    pub fn commodity(&self, k: CommodityId) -> &str {
        &self.commodities[k.0]
    }

    pub fn find_cell(&self, name: &str) -> Option<CellId> {
        self.cells.iter().position(|c| c == name).map(CellId)
    }

    pub fn find_commodity(&self, name: &str) -> Option<CommodityId> {
        self.commodities.iter().position(|c| c == name).map(CommodityId)
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub name: String,
    pub problem: Problem,
    pub labels: Labels,
    /// `alpha = 1` with the scenario's default turning ratios.
    pub baseline: Control,
    pub plot_cell: Option<CellId>,
}

impl Loaded {
    pub fn baseline_controls(&self) -> Vec<Control> {
        vec![self.baseline.clone(); self.problem.n_steps()]
    }
}

pub fn load_file(path: &Path) -> Result<Loaded, LoadError> {
    let text = std::fs::read_to_string(path).map_err(LoadError::Io)?;
    load_str(&text)
}

pub fn load_str(text: &str) -> Result<Loaded, LoadError> {
    let sc: Scenario = serde_json::from_str(text).map_err(LoadError::Parse)?;
    sc.build()
}

fn diag(module: &'static str, location: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic { module, location: location.into(), message: message.into() }
}

fn invalid(diagnostics: Vec<Diagnostic>) -> LoadError {
    LoadError::Invalid { diagnostics, cfl_only: false }
}

struct Resolver<'a> {
    labels: &'a Labels,
    out: Vec<Diagnostic>,
}

impl Resolver<'_> {
    fn cell(&mut self, name: &str, at: &str) -> Option<CellId> {
        let c = self.labels.find_cell(name);
        if c.is_none() {
            self.out.push(diag("scenario", at, format!("unknown cell `{name}`")));
        }
        c
    }

    fn commodity(&mut self, name: &str, at: &str) -> Option<CommodityId> {
        let k = self.labels.find_commodity(name);
        if k.is_none() {
            self.out.push(diag("scenario", at, format!("unknown commodity `{name}`")));
        }
        k
    }

    /// Cells selected by an optional name; `None` when the name is unknown.
    fn cells(&mut self, name: &Option<String>, at: &str) -> Option<Vec<CellId>> {
        match name {
            None => Some((0..self.labels.cells.len()).map(CellId).collect()),
            Some(n) => self.cell(n, at).map(|c| vec![c]),
        }
    }

    fn commodities(&mut self, name: &Option<String>, at: &str) -> Option<Vec<CommodityId>> {
        match name {
            None => Some((0..self.labels.commodities.len()).map(CommodityId).collect()),
            Some(n) => self.commodity(n, at).map(|k| vec![k]),
        }
    }
}

fn pieces(p: &[[f64; 2]]) -> ConcavePwl {
    ConcavePwl::new(p.iter().map(|&[s, i]| Piece::new(s, i)).collect())
}

impl Scenario {
    fn labels(&self) -> Result<Labels, LoadError> {
        let mut out = Vec::new();
        let mut nodes: Vec<String> = Vec::new();
        for c in &self.network.cells {
            for n in [&c.tail, &c.head] {
                if n != WORLD && !nodes.contains(n) {
                    nodes.push(n.clone());
                }
            }
        }
        let cells: Vec<String> = self.network.cells.iter().map(|c| c.name.clone()).collect();
        let commodities: Vec<String> = self.commodities.iter().map(|c| c.name.clone()).collect();
        for (what, names) in [("cell", &cells), ("commodity", &commodities)] {
            let mut seen = HashMap::new();
            for (n, name) in names.iter().enumerate() {
                if let Some(first) = seen.insert(name, n) {
                    out.push(diag("scenario", format!("{what} `{name}`"), format!("defined twice (entries {first} and {n})")));
                }
            }
        }
        if out.is_empty() {
            Ok(Labels { nodes, cells, commodities })
        } else {
            Err(invalid(out))
        }
    }

    fn network_spec(&self, labels: &Labels, r: &mut Resolver) -> NetworkSpec {
        let node = |n: &str| if n == WORLD { NodeId::WORLD } else { NodeId(labels.nodes.iter().position(|m| m == n).unwrap()) };
        let cells = self.network.cells.iter().map(|c| CellSpec { tail: node(&c.tail), head: node(&c.head) }).collect();
        let mut commodities = Vec::new();
        for c in &self.commodities {
            let at = format!("commodity `{}`", c.name);
            let cells = match &c.cells {
                CellSet::Keyword(k) if k == "all" => (0..labels.cells.len()).map(CellId).collect(),
                CellSet::Keyword(k) => {
                    r.out.push(diag("scenario", &at, format!("cells must be a list or \"all\", got \"{k}\"")));
                    Vec::new()
                }
                CellSet::List(v) => v.iter().filter_map(|n| r.cell(n, &at)).collect(),
            };
            let exits = c.exits.as_ref().map(|v| v.iter().filter_map(|n| r.cell(n, &at)).collect());
            commodities.push(CommoditySpec { cells, exits });
        }
        NetworkSpec { cells, commodities }
    }

    pub fn build(&self) -> Result<Loaded, LoadError> {
        let labels = self.labels()?;
        let mut r = Resolver { labels: &labels, out: Vec::new() };
        let spec = self.network_spec(&labels, &mut r);
        if !r.out.is_empty() {
            return Err(invalid(r.out));
        }
        let net = build_network(spec).map_err(|e| invalid(e.issues.iter().map(|i| network_diag(i, &labels)).collect()))?;
        let kk = net.n_commodities();

        let mut fund = Fundamentals::new(net.n_cells(), kk);
        for (n, e) in self.fundamentals.demand.iter().enumerate() {
            let at = format!("fundamentals.demand[{n}]");
            let (Some(cells), Some(ks)) = (r.cells(&e.cell, &at), r.commodities(&e.commodity, &at)) else { continue };
            let law = match &e.law {
                DemandLaw::Linear { rate } => DemandFn::Linear { rate: *rate },
                DemandLaw::Capped { speed, length, max_outflow } => {
                    DemandFn::Capped { speed: *speed, length: *length, max_outflow: *max_outflow }
                }
                DemandLaw::Piecewise { pieces: p } => DemandFn::Piecewise(pieces(p)),
            };
            for &i in &cells {
                for &k in &ks {
                    if net.is_utilizable(i, k) {
                        fund.set_demand(i, k, law.clone());
                    } else if e.cell.is_some() && e.commodity.is_some() {
                        r.out.push(diag(
                            "fundamental",
                            &at,
                            format!("commodity `{}` cannot use cell `{}`", labels.commodity(k), labels.cell(i)),
                        ));
                    }
                }
            }
        }
        for (n, e) in self.fundamentals.supply.iter().enumerate() {
            let at = format!("fundamentals.supply[{n}]");
            let Some(cells) = r.cells(&e.cell, &at) else { continue };
            let law = match &e.law {
                SupplyLaw::Affine { capacity, wave_speed } => SupplyFn::Affine { capacity: *capacity, wave_speed: *wave_speed },
                SupplyLaw::Piecewise { pieces: p } => SupplyFn::Piecewise(pieces(p)),
            };
            for i in cells {
                fund.set_supply(i, law.clone());
            }
        }
        for (n, e) in self.fundamentals.weights.iter().enumerate() {
            let at = format!("fundamentals.weights[{n}]");
            let (Some(cells), Some(ks)) = (r.cells(&e.cell, &at), r.commodities(&e.commodity, &at)) else { continue };
            for &i in &cells {
                for &k in &ks {
                    fund.set_weight(i, k, e.weight);
                }
            }
        }

        let dense = net.n_cells() * kk;
        let mut segments = Vec::new();
        for (n, seg) in self.inflows.iter().enumerate() {
            let at = format!("inflows[{n}]");
            let mut v = vec![0.0; dense];
            for e in &seg.rates {
                if let (Some(i), Some(k)) = (r.cell(&e.cell, &at), r.commodity(&e.commodity, &at)) {
                    v[net.idx(i, k)] = e.rate;
                }
            }
            segments.push((seg.start, v));
        }
        let inflow = if segments.is_empty() { InflowProfile::zero(&net) } else { InflowProfile::piecewise(segments) };

        let initial = match &self.initial_state {
            InitialState::Uniform(v) => State::uniform(&net, *v),
            InitialState::Volumes(entries) => {
                let mut x = State::zeros(&net);
                for e in entries {
                    let at = "initial_state";
                    if let (Some(i), Some(k)) = (r.cell(&e.cell, at), r.commodity(&e.commodity, at)) {
                        // off-commodity volumes are kept so that validation reports them
                        x.x[net.idx(i, k)] = e.volume;
                    }
                }
                x
            }
        };

        let cost = match &self.cost {
            CostSection::Keyword(k) if k == "total_volume" => CostSpec::total_volume(&net),
            CostSection::Keyword(k) => {
                r.out.push(diag("scenario", "cost", format!("unknown cost keyword \"{k}\"; use \"total_volume\" or coefficients")));
                CostSpec::zero(&net)
            }
            CostSection::Coefficients { state, outflow } => {
                let mut c = CostSpec::zero(&net);
                for (entries, target, what) in [(state, &mut c.state, "cost.state"), (outflow, &mut c.outflow, "cost.outflow")] {
                    for (n, e) in entries.iter().enumerate() {
                        let at = format!("{what}[{n}]");
                        let (Some(cells), Some(ks)) = (r.cells(&e.cell, &at), r.commodities(&e.commodity, &at)) else {
                            continue;
                        };
                        for &i in &cells {
                            for &k in &ks {
                                if net.is_utilizable(i, k) {
                                    target[net.idx(i, k)] = e.coef;
                                }
                            }
                        }
                    }
                }
                c
            }
        };

        let baseline = self.baseline(&net, &labels, &mut r);
        let plot_cell = self.plot_cell.as_ref().and_then(|n| r.cell(n, "plot_cell"));
        if !r.out.is_empty() {
            return Err(invalid(r.out));
        }
        let problem = Problem::new(net, fund, inflow, initial, cost, SimConfig::new(self.horizon.h, self.horizon.t)).map_err(|e| {
            LoadError::Invalid {
                cfl_only: e.is_cfl_only(),
                diagnostics: e.issues.iter().map(|i| problem_diag(i, &labels)).collect(),
            }
        })?;
        Ok(Loaded { name: self.name.clone().unwrap_or_default(), problem, labels, baseline, plot_cell })
    }

    fn baseline(&self, net: &mcdta_core::Network, labels: &Labels, r: &mut Resolver) -> Control {
        let mut ctl = Control::uncontrolled(net);
        let ratios = match &self.routing {
            RoutingSection::Uniform => return ctl,
            RoutingSection::Keyword(k) if k == "uniform" => return ctl,
            RoutingSection::Keyword(k) => {
                r.out.push(diag("scenario", "routing", format!("unknown routing keyword \"{k}\"; use \"uniform\" or ratios")));
                return ctl;
            }
            RoutingSection::Ratios { ratios } => ratios,
        };
        let mut matrices: Vec<RoutingMatrix> = net.commodity_ids().map(|k| ctl.routing_matrix(net, k)).collect();
        // rows named in the file replace the uniform row entirely
        let mut cleared = Vec::new();
        for (n, e) in ratios.iter().enumerate() {
            let at = format!("routing.ratios[{n}]");
            let (Some(k), Some(from), Some(to)) = (r.commodity(&e.commodity, &at), r.cell(&e.from, &at), r.cell(&e.to, &at))
            else {
                continue;
            };
            if net.arc_index(k, from, to).is_none() {
                r.out.push(diag(
                    "network",
                    &at,
                    format!("commodity `{}` has no arc from `{}` to `{}`", e.commodity, e.from, e.to),
                ));
                continue;
            }
            if !cleared.contains(&(k, from)) {
                for a in net.out_arcs(from, k) {
                    matrices[k.0].set(from, net.arcs()[a].to, 0.0);
                }
                cleared.push((k, from));
            }
            matrices[k.0].set(from, to, e.ratio);
        }
        for k in net.commodity_ids() {
            for v in validate_routing(net, &matrices[k.0], k) {
                r.out.push(diag("network", format!("routing of commodity `{}`", labels.commodity(k)), format!("{v:?}")));
            }
        }
        if let Ok(c) = Control::from_matrices(net, ctl.alpha.clone(), &matrices) {
            ctl = c;
        }
        ctl
    }
}

fn network_diag(issue: &NetworkIssue, l: &Labels) -> Diagnostic {
    let (location, message) = match *issue {
        NetworkIssue::NoCells => ("network".to_string(), "no cells".to_string()),
        NetworkIssue::NoCommodities => ("commodities".to_string(), "no commodities".to_string()),
        NetworkIssue::SelfLoop(i) => (format!("cell `{}`", l.cell(i)), "tail and head are the same node".to_string()),
        NetworkIssue::UnknownCell { commodity, cell } => {
            (format!("commodity `{}`", l.commodity(commodity)), format!("unknown cell index {}", cell.0))
        }
        NetworkIssue::InvalidExit { commodity, cell } => (
            format!("commodity `{}`", l.commodity(commodity)),
            format!("exit `{}` is not one of its off-ramps", l.cell(cell)),
        ),
        NetworkIssue::EmptyRampSet { commodity, kind } => {
            (format!("commodity `{}`", l.commodity(commodity)), format!("has no {}-ramp", format!("{kind:?}").to_lowercase()))
        }
        NetworkIssue::UnreachableCell { commodity, cell } => (
            format!("commodity `{}`", l.commodity(commodity)),
            format!("UnreachableCell: cell `{}` is not on any on-ramp to exit path", l.cell(cell)),
        ),
    };
    diag("network", location, message)
}

fn fundamentals_diag(issue: &FundamentalsIssue, l: &Labels) -> Diagnostic {
    let at = |i: CellId, k: CommodityId| format!("cell `{}`, commodity `{}`", l.cell(i), l.commodity(k));
    let (location, message) = match issue {
        FundamentalsIssue::MissingDemand { cell, commodity } => (at(*cell, *commodity), "no demand function".to_string()),
        FundamentalsIssue::MissingSupply { cell } => {
            (format!("cell `{}`", l.cell(*cell)), "receives flow but has no supply function".to_string())
        }
        FundamentalsIssue::NonPositiveWeight { cell, commodity, value } => {
            (at(*cell, *commodity), format!("weight must be positive, got {value}"))
        }
        FundamentalsIssue::Demand { cell, commodity, violations } => {
            (at(*cell, *commodity), format!("demand must vanish at zero and be non-decreasing and concave: {violations:?}"))
        }
        FundamentalsIssue::Supply { cell, violations } => {
            (format!("cell `{}`", l.cell(*cell)), format!("supply must be non-increasing and concave: {violations:?}"))
        }
    };
    diag("fundamental", location, message)
}

fn problem_diag(issue: &ProblemIssue, l: &Labels) -> Diagnostic {
    let at = |i: CellId, k: CommodityId| format!("cell `{}`, commodity `{}`", l.cell(i), l.commodity(k));
    match issue {
        ProblemIssue::Fundamentals(f) => fundamentals_diag(f, l),
        ProblemIssue::Horizon { .. } | ProblemIssue::Cfl { .. } => diag("sim", "horizon", issue.to_string()),
        ProblemIssue::Dimension { .. } | ProblemIssue::InflowSegments => diag("sim", "scenario", issue.to_string()),
        ProblemIssue::Inflow { segment, cell, commodity, value } => diag(
            "sim",
            format!("inflows[{segment}], {}", at(*cell, *commodity)),
            format!("rate {value} must be >= 0 and only on on-ramps of the commodity"),
        ),
        ProblemIssue::InitialState { cell, commodity, value } => diag(
            "sim",
            format!("initial_state, {}", at(*cell, *commodity)),
            format!("volume {value} is negative, non-finite or off the commodity's cells"),
        ),
        ProblemIssue::AboveJam { cell, weighted, jam } => diag(
            "sim",
            format!("initial_state, cell `{}`", l.cell(*cell)),
            format!("weighted volume {weighted} exceeds the jam volume {jam}"),
        ),
        ProblemIssue::CostSign { cell, commodity } => {
            diag("relax", format!("cost, {}", at(*cell, *commodity)), "running cost needs c_x >= 0 and c_z <= 0")
        }
    }
}
