//! Static network data model: buses, generators, branches, penalty curves,
//! contingency definitions, and the per-case element sets derived from them.
//!
//! Everything is stored per-unit on `base_mva`. A [`Network`] is immutable once
//! loaded; all operations here are pure functions of their arguments.

mod io;
mod solution;

pub use io::{load_network, load_network_str, write_network};
pub use solution::{CaseRecord, ObjectiveBreakdown, ObjectiveTerm, SolutionFile};

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Index of a bus in [`Network::buses`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BusIdx(pub usize);

/// Index of a generator in [`Network::generators`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GenIdx(pub usize);

/// Index of a branch in [`Network::branches`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BranchIdx(pub usize);

/// Index of a contingency in [`Network::contingencies`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContIdx(pub usize);

#[derive(Debug, Error)]
pub enum GridError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown contingency id `{0}`")]
    UnknownContingency(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Bus with voltage windows for normal and emergency operation, nodal demand
/// and shunt admittance.
#[derive(Debug, Clone)]
pub struct Bus {
    pub id: String,
    pub v_min_base: f64,
    pub v_max_base: f64,
    pub v_min_emer: f64,
    pub v_max_emer: f64,
    pub p_load: f64,
    pub q_load: f64,
    pub g_shunt: f64,
    pub b_shunt: f64,
}

/// Convex quadratic production cost c0 + c1*p + c2*p^2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadraticCost {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl QuadraticCost {
    pub fn value(&self, p: f64) -> f64 {
        self.c0 + self.c1 * p + self.c2 * p * p
    }
}

#[derive(Debug, Clone)]
pub struct Generator {
    pub id: String,
    pub bus: BusIdx,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    /// Frequency drop proportionality constant (per-unit MW per unit of the
    /// system-wide deviation signal). Zero means the unit does not respond.
    pub drop_const: f64,
    pub cost: QuadraticCost,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub id: String,
    pub from_bus: BusIdx,
    pub to_bus: BusIdx,
    pub g_series: f64,
    pub b_series: f64,
    /// Total line charging susceptance (split evenly between terminals).
    pub b_charge: f64,
    pub rate_base: f64,
    pub rate_emer: f64,
}

/// Two-bin piecewise-linear penalty curve: marginal price `slope1` up to
/// `bin1_width`, marginal price `slope2` beyond.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PenaltyCurve {
    pub slope1: f64,
    pub slope2: f64,
    pub bin1_width: f64,
}

impl PenaltyCurve {
    /// Exact piecewise-linear penalty value at slack `x >= 0`.
    pub fn piecewise(&self, x: f64) -> f64 {
        if x <= self.bin1_width {
            self.slope1 * x
        } else {
            self.slope1 * self.bin1_width + self.slope2 * (x - self.bin1_width)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutageKind {
    GeneratorOutage,
    BranchOutage,
}

/// Loss of a single element (N-1 criterion).
#[derive(Debug, Clone)]
pub struct Contingency {
    pub id: String,
    pub kind: OutageKind,
    pub gen: Option<GenIdx>,
    pub branch: Option<BranchIdx>,
}

/// Validated, immutable network. Construct via [`load_network`] or
/// [`Network::from_parts`].
#[derive(Debug, Clone)]
pub struct Network {
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    pub penalty_s: PenaltyCurve,
    pub penalty_p: PenaltyCurve,
    pub penalty_q: PenaltyCurve,
    pub contingencies: Vec<Contingency>,
    pub base_mva: f64,
    gens_by_bus: Vec<Vec<GenIdx>>,
    bus_index: HashMap<String, BusIdx>,
    gen_index: HashMap<String, GenIdx>,
    branch_index: HashMap<String, BranchIdx>,
    cont_index: HashMap<String, ContIdx>,
}

impl Network {
    /// Assemble and validate a network from its raw parts. The first violated
    /// invariant is reported by name.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        buses: Vec<Bus>,
        generators: Vec<Generator>,
        branches: Vec<Branch>,
        penalty_s: PenaltyCurve,
        penalty_p: PenaltyCurve,
        penalty_q: PenaltyCurve,
        contingencies: Vec<Contingency>,
        base_mva: f64,
    ) -> Result<Network, GridError> {
        let mut gens_by_bus = vec![Vec::new(); buses.len()];
        for (i, g) in generators.iter().enumerate() {
            gens_by_bus[g.bus.0].push(GenIdx(i));
        }
        let bus_index = index_map(buses.iter().map(|b| b.id.clone()), BusIdx, "bus")?;
        let gen_index = index_map(generators.iter().map(|g| g.id.clone()), GenIdx, "generator")?;
        let branch_index =
            index_map(branches.iter().map(|b| b.id.clone()), BranchIdx, "branch")?;
        let cont_index =
            index_map(contingencies.iter().map(|c| c.id.clone()), ContIdx, "contingency")?;
        let net = Network {
            buses,
            generators,
            branches,
            penalty_s,
            penalty_p,
            penalty_q,
            contingencies,
            base_mva,
            gens_by_bus,
            bus_index,
            gen_index,
            branch_index,
            cont_index,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<(), GridError> {
        use GridError::Validation;
        for b in &self.buses {
            if !(b.v_min_emer > 0.0
                && b.v_min_emer <= b.v_min_base
                && b.v_min_base <= b.v_max_base
                && b.v_max_base <= b.v_max_emer)
            {
                return Err(Validation(format!(
                    "bus `{}`: voltage windows must satisfy 0 < v_min_emer <= v_min_base <= v_max_base <= v_max_emer",
                    b.id
                )));
            }
        }
        if self.generators.is_empty() {
            return Err(Validation("network has no generators".into()));
        }
        for g in &self.generators {
            if g.p_min > g.p_max {
                return Err(Validation(format!("generator `{}`: p_min > p_max", g.id)));
            }
            if g.q_min > g.q_max {
                return Err(Validation(format!("generator `{}`: q_min > q_max", g.id)));
            }
            if g.drop_const < 0.0 {
                return Err(Validation(format!("generator `{}`: drop_const < 0", g.id)));
            }
        }
        for br in &self.branches {
            if br.from_bus == br.to_bus {
                return Err(Validation(format!("branch `{}`: from_bus == to_bus", br.id)));
            }
            if !(br.rate_base > 0.0) {
                return Err(Validation(format!("branch `{}`: rate_base must be > 0", br.id)));
            }
            if br.rate_base > br.rate_emer {
                return Err(Validation(format!("branch `{}`: rate_base > rate_emer", br.id)));
            }
        }
        for pen in [
            ("line_overload", &self.penalty_s),
            ("active_imbalance", &self.penalty_p),
            ("reactive_imbalance", &self.penalty_q),
        ] {
            let (name, c) = pen;
            if !(c.slope1 > 0.0 && c.slope1 <= c.slope2 && c.bin1_width > 0.0) {
                return Err(Validation(format!(
                    "penalty `{name}`: requires 0 < slope1 <= slope2 and bin1_width > 0"
                )));
            }
        }
        if !self.connected(None) {
            return Err(Validation("network graph is not connected".into()));
        }
        for c in &self.contingencies {
            match c.kind {
                OutageKind::GeneratorOutage => {
                    let g = c.gen.ok_or_else(|| {
                        Validation(format!("contingency `{}`: missing generator element", c.id))
                    })?;
                    if g.0 >= self.generators.len() {
                        return Err(Validation(format!(
                            "contingency `{}`: generator index out of range",
                            c.id
                        )));
                    }
                    if self.generators.len() == 1 {
                        return Err(Validation(format!(
                            "contingency `{}`: outage would leave no generators",
                            c.id
                        )));
                    }
                }
                OutageKind::BranchOutage => {
                    let b = c.branch.ok_or_else(|| {
                        Validation(format!("contingency `{}`: missing branch element", c.id))
                    })?;
                    if b.0 >= self.branches.len() {
                        return Err(Validation(format!(
                            "contingency `{}`: branch index out of range",
                            c.id
                        )));
                    }
                    if !self.connected(Some(b)) {
                        return Err(Validation(format!(
                            "contingency `{}`: removing branch `{}` disconnects the network",
                            c.id, self.branches[b.0].id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Breadth-first connectivity over all buses, optionally with one branch
    /// removed.
    fn connected(&self, without: Option<BranchIdx>) -> bool {
        if self.buses.is_empty() {
            return false;
        }
        let mut adj = vec![Vec::new(); self.buses.len()];
        for (i, br) in self.branches.iter().enumerate() {
            if Some(BranchIdx(i)) == without {
                continue;
            }
            adj[br.from_bus.0].push(br.to_bus.0);
            adj[br.to_bus.0].push(br.from_bus.0);
        }
        let mut seen = vec![false; self.buses.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(n) = stack.pop() {
            for &m in &adj[n] {
                if !seen[m] {
                    seen[m] = true;
                    count += 1;
                    stack.push(m);
                }
            }
        }
        count == self.buses.len()
    }

    pub fn bus_by_id(&self, id: &str) -> Option<BusIdx> {
        self.bus_index.get(id).copied()
    }

    pub fn gen_by_id(&self, id: &str) -> Option<GenIdx> {
        self.gen_index.get(id).copied()
    }

    pub fn branch_by_id(&self, id: &str) -> Option<BranchIdx> {
        self.branch_index.get(id).copied()
    }

    pub fn contingency_by_id(&self, id: &str) -> Option<ContIdx> {
        self.cont_index.get(id).copied()
    }

    /// Generators connected to `bus` in the full (base) element set.
    pub fn gens_at(&self, bus: BusIdx) -> &[GenIdx] {
        &self.gens_by_bus[bus.0]
    }

    /// Element sets and bound selectors for the base case.
    pub fn base_topology(&self) -> CaseTopology {
        CaseTopology {
            case: CaseId::Base,
            gens: (0..self.generators.len()).map(GenIdx).collect(),
            branches: (0..self.branches.len()).map(BranchIdx).collect(),
            failed_gen: None,
            failed_branch: None,
        }
    }

    /// Element sets and bound selectors for contingency `k`: the base sets
    /// minus the failed element, with emergency bounds and ratings active.
    pub fn apply_contingency(&self, k: ContIdx) -> Result<CaseTopology, GridError> {
        let c = self
            .contingencies
            .get(k.0)
            .ok_or_else(|| GridError::UnknownContingency(format!("#{}", k.0)))?;
        let mut gens: Vec<GenIdx> = (0..self.generators.len()).map(GenIdx).collect();
        let mut branches: Vec<BranchIdx> = (0..self.branches.len()).map(BranchIdx).collect();
        match c.kind {
            OutageKind::GeneratorOutage => gens.retain(|&g| Some(g) != c.gen),
            OutageKind::BranchOutage => branches.retain(|&b| Some(b) != c.branch),
        }
        Ok(CaseTopology {
            case: CaseId::Outage(k),
            gens,
            branches,
            failed_gen: if c.kind == OutageKind::GeneratorOutage { c.gen } else { None },
            failed_branch: if c.kind == OutageKind::BranchOutage { c.branch } else { None },
        })
    }

    pub fn apply_contingency_id(&self, id: &str) -> Result<CaseTopology, GridError> {
        let k = self
            .contingency_by_id(id)
            .ok_or_else(|| GridError::UnknownContingency(id.to_string()))?;
        self.apply_contingency(k)
    }
}

fn index_map<T: Copy>(
    ids: impl Iterator<Item = String>,
    wrap: fn(usize) -> T,
    what: &str,
) -> Result<HashMap<String, T>, GridError> {
    let mut map = HashMap::new();
    for (i, id) in ids.enumerate() {
        if map.insert(id.clone(), wrap(i)).is_some() {
            return Err(GridError::Validation(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(map)
}

/// Which power-flow case a topology describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseId {
    Base,
    Outage(ContIdx),
}

/// Per-case element sets plus the bound/rating selectors active for the case.
#[derive(Debug, Clone)]
pub struct CaseTopology {
    pub case: CaseId,
    /// Surviving generators, ascending by index.
    pub gens: Vec<GenIdx>,
    /// Surviving branches, ascending by index.
    pub branches: Vec<BranchIdx>,
    pub failed_gen: Option<GenIdx>,
    pub failed_branch: Option<BranchIdx>,
}

impl CaseTopology {
    pub fn is_base(&self) -> bool {
        matches!(self.case, CaseId::Base)
    }

    pub fn v_min(&self, net: &Network, bus: BusIdx) -> f64 {
        let b = &net.buses[bus.0];
        if self.is_base() {
            b.v_min_base
        } else {
            b.v_min_emer
        }
    }

    pub fn v_max(&self, net: &Network, bus: BusIdx) -> f64 {
        let b = &net.buses[bus.0];
        if self.is_base() {
            b.v_max_base
        } else {
            b.v_max_emer
        }
    }

    pub fn rating(&self, net: &Network, branch: BranchIdx) -> f64 {
        let b = &net.branches[branch.0];
        if self.is_base() {
            b.rate_base
        } else {
            b.rate_emer
        }
    }

    pub fn contains_gen(&self, g: GenIdx) -> bool {
        self.failed_gen != Some(g) && g.0 < usize::MAX
    }

    /// Surviving generators at `bus`.
    pub fn gens_at(&self, net: &Network, bus: BusIdx) -> Vec<GenIdx> {
        net.gens_at(bus)
            .iter()
            .copied()
            .filter(|&g| self.failed_gen != Some(g))
            .collect()
    }

    /// Buses with at least one surviving generator (where voltage is
    /// regulated in contingencies).
    pub fn controlled_buses(&self, net: &Network) -> Vec<BusIdx> {
        (0..net.buses.len())
            .map(BusIdx)
            .filter(|&n| !self.gens_at(net, n).is_empty())
            .collect()
    }

    /// Surviving generators that respond to the frequency drop signal.
    pub fn responding_gens(&self, net: &Network) -> Vec<GenIdx> {
        self.gens
            .iter()
            .copied()
            .filter(|&g| net.generators[g.0].drop_const > 0.0)
            .collect()
    }
}

/// Bounds on the system-wide drop signal for one contingency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaBounds {
    pub lo: f64,
    pub hi: f64,
    /// True when no surviving generator responds to the drop signal.
    pub rigid: bool,
}

/// Interval-algebra bounds on the drop signal: at `lo` every responding
/// generator is saturated at its lower limit, at `hi` at its upper limit.
/// `p_base` is indexed by generator position in the full network.
pub fn delta_bounds(net: &Network, topo: &CaseTopology, p_base: &[f64]) -> DeltaBounds {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut any = false;
    for &g in &topo.gens {
        let gen = &net.generators[g.0];
        if gen.drop_const <= 0.0 {
            continue;
        }
        any = true;
        lo = lo.min((gen.p_min - p_base[g.0]) / gen.drop_const);
        hi = hi.max((gen.p_max - p_base[g.0]) / gen.drop_const);
    }
    if !any {
        return DeltaBounds { lo: 0.0, hi: 0.0, rigid: true };
    }
    // p_base inside the generator bounds guarantees lo <= 0 <= hi.
    DeltaBounds { lo: lo.min(0.0), hi: hi.max(0.0), rigid: false }
}
