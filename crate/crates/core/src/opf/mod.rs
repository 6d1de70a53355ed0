//! Concrete OPF problem builders: the base-case (master) problem, the
//! epsilon-relaxed contingency subproblem, and the restricted canvas used by
//! feasibility recovery. All blocks carry hand-coded derivatives and are
//! checkable against finite differences.

pub mod blocks;

use crate::grid::{delta_bounds, BranchIdx, BusIdx, CaseTopology, ContIdx, GenIdx, Network, PenaltyCurve};
use crate::nlp::{NlpError, NlpProblem, RowBounds, VarId, VariableSpace};
use blocks::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpfError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error(transparent)]
    Nlp(#[from] NlpError),
}

/// Quadratic penalty approximation `a1 x + a2 x^2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadPenalty {
    pub a1: f64,
    pub a2: f64,
}

impl QuadPenalty {
    pub fn value(&self, x: f64) -> f64 {
        self.a1 * x + self.a2 * x * x
    }
}

/// Fit the quadratic penalty to a two-bin curve: the fit matches the curve's
/// slope at the origin and at the start of the second bin.
pub fn quad_penalty_fit(curve: &PenaltyCurve) -> QuadPenalty {
    QuadPenalty {
        a1: curve.slope1,
        a2: (curve.slope2 - curve.slope1) / (2.0 * curve.bin1_width),
    }
}

/// Power flows entering both terminals of a branch given terminal voltages
/// and angles: returns (p_origin, q_origin, p_destination, q_destination).
pub fn branch_flow(
    v_o: f64,
    v_d: f64,
    th_o: f64,
    th_d: f64,
    branch: &crate::grid::Branch,
) -> (f64, f64, f64, f64) {
    let half = branch.b_charge / 2.0;
    let (p_o, q_o) = terminal_flow(branch.g_series, branch.b_series, half, v_o, v_d, th_o, th_d);
    let (p_d, q_d) = terminal_flow(branch.g_series, branch.b_series, half, v_d, v_o, th_d, th_o);
    (p_o, q_o, p_d, q_d)
}

/// Full variable record for one power-flow case, indexed by the full network
/// element sets (entries of failed elements are zero).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Per-bus voltage magnitude and angle.
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    /// Per-generator injections.
    pub gen_p: Vec<f64>,
    pub gen_q: Vec<f64>,
    /// Per-branch terminal flows [origin, destination].
    pub flow_p: Vec<[f64; 2]>,
    pub flow_q: Vec<[f64; 2]>,
    /// Per-branch overload slacks [origin, destination].
    pub sigma_branch: Vec<[f64; 2]>,
    /// Per-bus balance slacks [plus, minus].
    pub sigma_p: Vec<[f64; 2]>,
    pub sigma_q: Vec<[f64; 2]>,
    /// Drop-control saturation slacks [plus, minus] (contingency cases).
    pub rho: Vec<[f64; 2]>,
    /// Regulator voltage-deviation slacks [plus, minus] (contingency cases).
    pub nu: Vec<[f64; 2]>,
    /// Drop signal (contingency cases).
    pub delta: f64,
}

impl OperatingPoint {
    pub fn zeros(net: &Network) -> OperatingPoint {
        OperatingPoint {
            v: vec![0.0; net.buses.len()],
            theta: vec![0.0; net.buses.len()],
            gen_p: vec![0.0; net.generators.len()],
            gen_q: vec![0.0; net.generators.len()],
            flow_p: vec![[0.0; 2]; net.branches.len()],
            flow_q: vec![[0.0; 2]; net.branches.len()],
            sigma_branch: vec![[0.0; 2]; net.branches.len()],
            sigma_p: vec![[0.0; 2]; net.buses.len()],
            sigma_q: vec![[0.0; 2]; net.buses.len()],
            rho: vec![[0.0; 2]; net.generators.len()],
            nu: vec![[0.0; 2]; net.buses.len()],
            delta: 0.0,
        }
    }

    /// Apparent power of a generator at this point.
    pub fn gen_apparent_sq(&self, g: GenIdx) -> f64 {
        self.gen_p[g.0] * self.gen_p[g.0] + self.gen_q[g.0] * self.gen_q[g.0]
    }
}

/// Penalty evaluation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyMode {
    Piecewise,
    Quadratic,
}

fn curve_value(curve: &PenaltyCurve, mode: PenaltyMode, x: f64) -> f64 {
    match mode {
        PenaltyMode::Piecewise => curve.piecewise(x),
        PenaltyMode::Quadratic => quad_penalty_fit(curve).value(x),
    }
}

/// Total slack penalty of one case's operating point: branch overloads at
/// both terminals of surviving branches plus the four balance slacks per bus.
pub fn case_penalty(
    net: &Network,
    topo: &CaseTopology,
    point: &OperatingPoint,
    mode: PenaltyMode,
) -> f64 {
    let mut total = 0.0;
    for &e in &topo.branches {
        total += curve_value(&net.penalty_s, mode, point.sigma_branch[e.0][0]);
        total += curve_value(&net.penalty_s, mode, point.sigma_branch[e.0][1]);
    }
    for n in 0..net.buses.len() {
        total += curve_value(&net.penalty_p, mode, point.sigma_p[n][0]);
        total += curve_value(&net.penalty_p, mode, point.sigma_p[n][1]);
        total += curve_value(&net.penalty_q, mode, point.sigma_q[n][0]);
        total += curve_value(&net.penalty_q, mode, point.sigma_q[n][1]);
    }
    total
}

/// Base-case generation cost.
pub fn generation_cost(net: &Network, point: &OperatingPoint) -> f64 {
    net.generators.iter().enumerate().map(|(i, g)| g.cost.value(point.gen_p[i])).sum()
}

/// Objective decomposition of a full (base + contingencies) solution.
#[derive(Debug, Clone)]
pub struct ScoreBreakdown {
    pub base_cost: f64,
    pub base_penalty: f64,
    /// Unweighted per-contingency penalties by contingency index.
    pub contingency_penalty: BTreeMap<usize, f64>,
    /// Contingencies without a supplied point.
    pub missing: Vec<usize>,
    /// 1/(|K|-1).
    pub weight: f64,
    pub total: f64,
    pub partial: bool,
}

/// Score a solution: base cost plus base penalties plus the average of the
/// supplied contingency penalties. Missing contingency points mark the
/// result partial and contribute nothing.
pub fn score_solution(
    net: &Network,
    base: &OperatingPoint,
    contingency_points: &BTreeMap<usize, OperatingPoint>,
    mode: PenaltyMode,
) -> ScoreBreakdown {
    let base_topo = net.base_topology();
    let base_cost = generation_cost(net, base);
    let base_penalty = case_penalty(net, &base_topo, base, mode);
    let k = net.contingencies.len();
    let weight = if k > 0 { 1.0 / k as f64 } else { 0.0 };
    let mut contingency_penalty = BTreeMap::new();
    let mut missing = Vec::new();
    let mut cont_sum = 0.0;
    for idx in 0..k {
        match contingency_points.get(&idx) {
            Some(point) => {
                let topo = net.apply_contingency(ContIdx(idx)).expect("valid contingency");
                let pen = case_penalty(net, &topo, point, mode);
                cont_sum += pen;
                contingency_penalty.insert(idx, pen);
            }
            None => missing.push(idx),
        }
    }
    ScoreBreakdown {
        base_cost,
        base_penalty,
        contingency_penalty,
        partial: !missing.is_empty(),
        missing,
        weight,
        total: base_cost + base_penalty + weight * cont_sum,
    }
}

/// Bound violations of a point (diagnostics for the score evaluator; scoring
/// itself still proceeds).
pub fn validate_point(net: &Network, topo: &CaseTopology, point: &OperatingPoint) -> Vec<String> {
    let mut out = Vec::new();
    let tol = 1e-9;
    for (n, bus) in net.buses.iter().enumerate() {
        let (lo, hi) = (topo.v_min(net, BusIdx(n)), topo.v_max(net, BusIdx(n)));
        if point.v[n] < lo - tol || point.v[n] > hi + tol {
            out.push(format!("bus `{}`: voltage {} outside [{lo}, {hi}]", bus.id, point.v[n]));
        }
    }
    for &g in &topo.gens {
        let gen = &net.generators[g.0];
        let (p, q) = (point.gen_p[g.0], point.gen_q[g.0]);
        if p < gen.p_min - tol || p > gen.p_max + tol {
            out.push(format!("generator `{}`: p {} outside [{}, {}]", gen.id, p, gen.p_min, gen.p_max));
        }
        if q < gen.q_min - tol || q > gen.q_max + tol {
            out.push(format!("generator `{}`: q {} outside [{}, {}]", gen.id, q, gen.q_min, gen.q_max));
        }
    }
    for n in 0..net.buses.len() {
        for s in [point.sigma_p[n], point.sigma_q[n]] {
            if s[0] < -tol || s[1] < -tol {
                out.push(format!("bus `{}`: negative balance slack", net.buses[n].id));
            }
        }
    }
    out
}

/// Which base-case quantity a recourse surrogate penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingSelector {
    /// Apparent power of the failing generator.
    Gen(GenIdx),
    /// Apparent power entering the failing branch at terminal 0 (origin) or
    /// 1 (destination).
    Branch(BranchIdx, usize),
}

impl CouplingSelector {
    /// (p, q) of the selected coupling quantity at a base-case point.
    pub fn coupling_values(&self, point: &OperatingPoint) -> (f64, f64) {
        match *self {
            CouplingSelector::Gen(g) => (point.gen_p[g.0], point.gen_q[g.0]),
            CouplingSelector::Branch(e, t) => (point.flow_p[e.0][t], point.flow_q[e.0][t]),
        }
    }
}

/// One surrogate recourse term for the master objective.
#[derive(Debug, Clone)]
pub struct SurrogateTerm {
    pub name: String,
    pub selector: CouplingSelector,
    /// The fitted coefficient P_k (unweighted).
    pub p_k: f64,
}

/// Variable ids of one case problem, indexed by the full network element
/// sets; entries for failed elements are None.
#[derive(Debug, Clone)]
pub struct CaseLayout {
    pub topo: CaseTopology,
    pub v: Vec<VarId>,
    pub theta: Vec<VarId>,
    pub p: Vec<Option<VarId>>,
    pub q: Vec<Option<VarId>>,
    pub flow_p: Vec<Option<[VarId; 2]>>,
    pub flow_q: Vec<Option<[VarId; 2]>>,
    pub sigma_branch: Vec<Option<[VarId; 2]>>,
    pub sigma_p: Vec<[VarId; 2]>,
    pub sigma_q: Vec<[VarId; 2]>,
    pub rho_plus: Vec<Option<VarId>>,
    pub rho_minus: Vec<Option<VarId>>,
    pub nu_plus: Vec<Option<VarId>>,
    pub nu_minus: Vec<Option<VarId>>,
    pub delta: Option<VarId>,
    pub ref_bus: BusIdx,
}

impl CaseLayout {
    /// Read an operating point out of a solver's variable vector.
    pub fn extract(&self, net: &Network, x: &[f64]) -> OperatingPoint {
        let mut pt = OperatingPoint::zeros(net);
        for n in 0..net.buses.len() {
            pt.v[n] = x[self.v[n].0];
            pt.theta[n] = x[self.theta[n].0];
            pt.sigma_p[n] = [x[self.sigma_p[n][0].0], x[self.sigma_p[n][1].0]];
            pt.sigma_q[n] = [x[self.sigma_q[n][0].0], x[self.sigma_q[n][1].0]];
            if let (Some(np), Some(nm)) = (self.nu_plus[n], self.nu_minus[n]) {
                pt.nu[n] = [x[np.0], x[nm.0]];
            }
        }
        for g in 0..net.generators.len() {
            if let (Some(p), Some(q)) = (self.p[g], self.q[g]) {
                pt.gen_p[g] = x[p.0];
                pt.gen_q[g] = x[q.0];
            }
            if let (Some(rp), Some(rm)) = (self.rho_plus[g], self.rho_minus[g]) {
                pt.rho[g] = [x[rp.0], x[rm.0]];
            }
        }
        for e in 0..net.branches.len() {
            if let (Some(fp), Some(fq), Some(sb)) =
                (self.flow_p[e], self.flow_q[e], self.sigma_branch[e])
            {
                pt.flow_p[e] = [x[fp[0].0], x[fp[1].0]];
                pt.flow_q[e] = [x[fq[0].0], x[fq[1].0]];
                pt.sigma_branch[e] = [x[sb[0].0], x[sb[1].0]];
            }
        }
        if let Some(d) = self.delta {
            pt.delta = x[d.0];
        }
        pt
    }

    /// Write an operating point into a variable vector (entries for
    /// variables the point does not describe are left as given).
    pub fn inject(&self, net: &Network, point: &OperatingPoint, x: &mut [f64]) {
        for n in 0..net.buses.len() {
            x[self.v[n].0] = point.v[n];
            x[self.theta[n].0] = point.theta[n];
            x[self.sigma_p[n][0].0] = point.sigma_p[n][0];
            x[self.sigma_p[n][1].0] = point.sigma_p[n][1];
            x[self.sigma_q[n][0].0] = point.sigma_q[n][0];
            x[self.sigma_q[n][1].0] = point.sigma_q[n][1];
            if let (Some(np), Some(nm)) = (self.nu_plus[n], self.nu_minus[n]) {
                x[np.0] = point.nu[n][0];
                x[nm.0] = point.nu[n][1];
            }
        }
        for g in 0..net.generators.len() {
            if let (Some(p), Some(q)) = (self.p[g], self.q[g]) {
                x[p.0] = point.gen_p[g];
                x[q.0] = point.gen_q[g];
            }
            if let (Some(rp), Some(rm)) = (self.rho_plus[g], self.rho_minus[g]) {
                x[rp.0] = point.rho[g][0];
                x[rm.0] = point.rho[g][1];
            }
        }
        for e in 0..net.branches.len() {
            if let (Some(fp), Some(fq), Some(sb)) =
                (self.flow_p[e], self.flow_q[e], self.sigma_branch[e])
            {
                x[fp[0].0] = point.flow_p[e][0];
                x[fp[1].0] = point.flow_p[e][1];
                x[fq[0].0] = point.flow_q[e][0];
                x[fq[1].0] = point.flow_q[e][1];
                x[sb[0].0] = point.sigma_branch[e][0];
                x[sb[1].0] = point.sigma_branch[e][1];
            }
        }
        if let Some(d) = self.delta {
            x[d.0] = point.delta;
        }
    }

    /// Cold start: voltages and injections at bound midpoints, angles at 0,
    /// slacks at 1e-4, flows consistent with the voltage profile.
    pub fn cold_start(&self, net: &Network, dim: usize) -> Vec<f64> {
        let mut x = vec![0.0; dim];
        for n in 0..net.buses.len() {
            let lo = self.topo.v_min(net, BusIdx(n));
            let hi = self.topo.v_max(net, BusIdx(n));
            x[self.v[n].0] = 0.5 * (lo + hi);
            x[self.theta[n].0] = 0.0;
            for s in [self.sigma_p[n], self.sigma_q[n]] {
                x[s[0].0] = 1e-4;
                x[s[1].0] = 1e-4;
            }
        }
        for g in 0..net.generators.len() {
            if let (Some(p), Some(q)) = (self.p[g], self.q[g]) {
                let gen = &net.generators[g];
                x[p.0] = 0.5 * (gen.p_min + gen.p_max);
                x[q.0] = 0.5 * (gen.q_min + gen.q_max);
            }
        }
        for &e in &self.topo.branches {
            let br = &net.branches[e.0];
            let (p_o, q_o, p_d, q_d) = branch_flow(
                x[self.v[br.from_bus.0].0],
                x[self.v[br.to_bus.0].0],
                0.0,
                0.0,
                br,
            );
            let fp = self.flow_p[e.0].unwrap();
            let fq = self.flow_q[e.0].unwrap();
            let sb = self.sigma_branch[e.0].unwrap();
            x[fp[0].0] = p_o;
            x[fp[1].0] = p_d;
            x[fq[0].0] = q_o;
            x[fq[1].0] = q_d;
            x[sb[0].0] = 1e-4;
            x[sb[1].0] = 1e-4;
        }
        x
    }
}

/// The always-feasible contingency point built from a base solution: copy
/// voltages, angles, and surviving injections, recompute flows from the
/// voltage profile, absorb all residuals into slacks. Satisfies the exact
/// coupling constraints with rho = nu = delta = 0.
pub fn copy_base_point(net: &Network, topo: &CaseTopology, base: &OperatingPoint) -> OperatingPoint {
    let mut pt = OperatingPoint::zeros(net);
    pt.v = base.v.clone();
    pt.theta = base.theta.clone();
    for &g in &topo.gens {
        let gen = &net.generators[g.0];
        pt.gen_p[g.0] = base.gen_p[g.0].clamp(gen.p_min, gen.p_max);
        pt.gen_q[g.0] = base.gen_q[g.0].clamp(gen.q_min, gen.q_max);
    }
    for &e in &topo.branches {
        let br = &net.branches[e.0];
        let (p_o, q_o, p_d, q_d) = branch_flow(
            pt.v[br.from_bus.0],
            pt.v[br.to_bus.0],
            pt.theta[br.from_bus.0],
            pt.theta[br.to_bus.0],
            br,
        );
        pt.flow_p[e.0] = [p_o, p_d];
        pt.flow_q[e.0] = [q_o, q_d];
        let rating = topo.rating(net, e);
        for (t, near) in [br.from_bus.0, br.to_bus.0].into_iter().enumerate() {
            let s = (pt.flow_p[e.0][t].powi(2) + pt.flow_q[e.0][t].powi(2)).sqrt();
            pt.sigma_branch[e.0][t] = (s - rating * pt.v[near]).max(0.0);
        }
    }
    for n in 0..net.buses.len() {
        let bus = &net.buses[n];
        let mut rp = -bus.p_load - bus.g_shunt * pt.v[n] * pt.v[n];
        let mut rq = -bus.q_load + bus.b_shunt * pt.v[n] * pt.v[n];
        for g in topo.gens_at(net, BusIdx(n)) {
            rp += pt.gen_p[g.0];
            rq += pt.gen_q[g.0];
        }
        for &e in &topo.branches {
            let br = &net.branches[e.0];
            if br.from_bus.0 == n {
                rp -= pt.flow_p[e.0][0];
                rq -= pt.flow_q[e.0][0];
            }
            if br.to_bus.0 == n {
                rp -= pt.flow_p[e.0][1];
                rq -= pt.flow_q[e.0][1];
            }
        }
        pt.sigma_p[n] = if rp >= 0.0 { [rp, 0.0] } else { [0.0, -rp] };
        pt.sigma_q[n] = if rq >= 0.0 { [rq, 0.0] } else { [0.0, -rq] };
    }
    pt
}

/// Primal warm start for a contingency or canvas solve from the base-case
/// point: shared variables copied from the base (clamped slightly interior),
/// penalty slacks floored at 1e-4 for the fresh barrier, coupling slacks
/// started small relative to the relaxation caps, delta at 0.
pub fn contingency_start(
    net: &Network,
    problem: &NlpProblem,
    layout: &CaseLayout,
    base: &OperatingPoint,
) -> crate::ipm::StartPoint {
    use crate::ipm::{clamp_interior, BoundPush, StartPoint};
    let mut x = layout.cold_start(net, problem.n_vars());
    layout.inject(net, base, &mut x);
    let lo = problem.space().lower().to_vec();
    let up = problem.space().upper().to_vec();
    for i in 0..x.len() {
        x[i] = clamp_interior(x[i], lo[i], up[i], 1e-4);
    }
    for n in 0..net.buses.len() {
        for s in [layout.sigma_p[n], layout.sigma_q[n]] {
            x[s[0].0] = x[s[0].0].max(1e-4);
            x[s[1].0] = x[s[1].0].max(1e-4);
        }
    }
    for e in 0..net.branches.len() {
        if let Some(sb) = layout.sigma_branch[e] {
            x[sb[0].0] = x[sb[0].0].max(1e-4);
            x[sb[1].0] = x[sb[1].0].max(1e-4);
        }
    }
    for g in 0..net.generators.len() {
        for v in [layout.rho_plus[g], layout.rho_minus[g]].into_iter().flatten() {
            if lo[v.0] < up[v.0] {
                x[v.0] = 1e-6;
            }
        }
    }
    for n in 0..net.buses.len() {
        for v in [layout.nu_plus[n], layout.nu_minus[n]].into_iter().flatten() {
            if lo[v.0] < up[v.0] {
                x[v.0] = 1e-6;
            }
        }
    }
    if let Some(d) = layout.delta {
        if lo[d.0] < up[d.0] {
            x[d.0] = clamp_interior(0.0, lo[d.0], up[d.0], 1e-4);
        }
    }
    let mut sp = StartPoint::primal(x, problem.n_cons());
    sp.push = BoundPush::InfeasibleOnly(1e-4);
    // The start is near-feasible, so the barrier can open well below the
    // cold default; a large initial mu would re-center the point and throw
    // the warm-start advantage away.
    sp.mu_init = Some(1e-3);
    sp
}

/// DC angle profile on a case topology: solve the susceptance-weighted
/// Laplacian for the given net active injections (reference bus pinned at
/// zero). Used to seed warm starts after an outage redistributes flows.
pub fn dc_angle_profile(
    net: &Network,
    topo: &CaseTopology,
    injections: &[f64],
    ref_bus: BusIdx,
) -> Option<Vec<f64>> {
    let nb = net.buses.len();
    let mut idx = vec![usize::MAX; nb];
    let mut cols = Vec::with_capacity(nb - 1);
    for n in 0..nb {
        if n != ref_bus.0 {
            idx[n] = cols.len();
            cols.push(n);
        }
    }
    let m = cols.len();
    if m == 0 {
        return Some(vec![0.0; nb]);
    }
    let mut a = vec![0.0f64; m * m];
    let mut rhs: Vec<f64> = cols.iter().map(|&n| injections[n]).collect();
    for &e in &topo.branches {
        let br = &net.branches[e.0];
        let w = -br.b_series;
        if w <= 0.0 {
            continue;
        }
        let (i, j) = (br.from_bus.0, br.to_bus.0);
        let (ri, rj) = (idx[i], idx[j]);
        if ri != usize::MAX {
            a[ri * m + ri] += w;
        }
        if rj != usize::MAX {
            a[rj * m + rj] += w;
        }
        if ri != usize::MAX && rj != usize::MAX {
            a[ri * m + rj] -= w;
            a[rj * m + ri] -= w;
        }
    }
    let f = crate::linalg::DenseLdlt::factor(a, m).ok()?;
    let inertia = f.inertia();
    if inertia.zero > 0 || inertia.neg > 0 {
        return None;
    }
    f.solve(&mut rhs);
    let mut theta = vec![0.0; nb];
    for (r, &n) in cols.iter().enumerate() {
        theta[n] = rhs[r];
    }
    Some(theta)
}

/// Options shared by the case builders.
struct CaseBuild<'a> {
    net: &'a Network,
    topo: CaseTopology,
    /// Multiplier on the slack penalty objective.
    penalty_weight: f64,
}

/// Construct the power-flow skeleton of a case: variables plus flow
/// definitions, thermal limits, balance, reference angle, and penalty
/// objectives.
fn case_skeleton(build: &CaseBuild) -> Result<(NlpProblem, CaseLayout), OpfError> {
    let net = build.net;
    let topo = &build.topo;
    let nb = net.buses.len();
    let mut space = VariableSpace::new();

    let mut v = Vec::with_capacity(nb);
    let mut theta = Vec::with_capacity(nb);
    for (n, bus) in net.buses.iter().enumerate() {
        v.push(space.add(
            format!("v[{}]", bus.id),
            topo.v_min(net, BusIdx(n)),
            topo.v_max(net, BusIdx(n)),
        )?);
        theta.push(space.add(format!("theta[{}]", bus.id), f64::NEG_INFINITY, f64::INFINITY)?);
    }
    let mut p = vec![None; net.generators.len()];
    let mut q = vec![None; net.generators.len()];
    for &g in &topo.gens {
        let gen = &net.generators[g.0];
        p[g.0] = Some(space.add(format!("p[{}]", gen.id), gen.p_min, gen.p_max)?);
        q[g.0] = Some(space.add(format!("q[{}]", gen.id), gen.q_min, gen.q_max)?);
    }
    let mut flow_p = vec![None; net.branches.len()];
    let mut flow_q = vec![None; net.branches.len()];
    let mut sigma_branch = vec![None; net.branches.len()];
    for &e in &topo.branches {
        let br = &net.branches[e.0];
        flow_p[e.0] = Some([
            space.add(format!("pf[{}:o]", br.id), f64::NEG_INFINITY, f64::INFINITY)?,
            space.add(format!("pf[{}:d]", br.id), f64::NEG_INFINITY, f64::INFINITY)?,
        ]);
        flow_q[e.0] = Some([
            space.add(format!("qf[{}:o]", br.id), f64::NEG_INFINITY, f64::INFINITY)?,
            space.add(format!("qf[{}:d]", br.id), f64::NEG_INFINITY, f64::INFINITY)?,
        ]);
        sigma_branch[e.0] = Some([
            space.add(format!("sigS[{}:o]", br.id), 0.0, f64::INFINITY)?,
            space.add(format!("sigS[{}:d]", br.id), 0.0, f64::INFINITY)?,
        ]);
    }
    let mut sigma_p = Vec::with_capacity(nb);
    let mut sigma_q = Vec::with_capacity(nb);
    for bus in &net.buses {
        sigma_p.push([
            space.add(format!("sigP+[{}]", bus.id), 0.0, f64::INFINITY)?,
            space.add(format!("sigP-[{}]", bus.id), 0.0, f64::INFINITY)?,
        ]);
        sigma_q.push([
            space.add(format!("sigQ+[{}]", bus.id), 0.0, f64::INFINITY)?,
            space.add(format!("sigQ-[{}]", bus.id), 0.0, f64::INFINITY)?,
        ]);
    }

    let ref_bus = net
        .generators
        .iter()
        .map(|g| g.bus)
        .min()
        .expect("validated network has generators");

    let layout = CaseLayout {
        topo: topo.clone(),
        v,
        theta,
        p,
        q,
        flow_p,
        flow_q,
        sigma_branch,
        sigma_p,
        sigma_q,
        rho_plus: vec![None; net.generators.len()],
        rho_minus: vec![None; net.generators.len()],
        nu_plus: vec![None; nb],
        nu_minus: vec![None; nb],
        delta: None,
        ref_bus,
    };

    let mut problem = NlpProblem::new(space);

    // Flow definitions and thermal limits.
    let mut terminals = Vec::with_capacity(2 * topo.branches.len());
    let mut thermal_rows = Vec::with_capacity(2 * topo.branches.len());
    for &e in &topo.branches {
        let br = &net.branches[e.0];
        let (o, d) = (br.from_bus.0, br.to_bus.0);
        let fp = layout.flow_p[e.0].unwrap();
        let fq = layout.flow_q[e.0].unwrap();
        let sb = layout.sigma_branch[e.0].unwrap();
        let rating = topo.rating(net, e);
        for (t, (near, far)) in [(o, d), (d, o)].into_iter().enumerate() {
            terminals.push(TerminalRef {
                p: fp[t],
                q: fq[t],
                v1: layout.v[near],
                v2: layout.v[far],
                th1: layout.theta[near],
                th2: layout.theta[far],
                g: br.g_series,
                b: br.b_series,
                b_ch_half: br.b_charge / 2.0,
            });
            thermal_rows.push((fp[t], fq[t], layout.v[near], sb[t], rating));
        }
    }
    problem.add_constraint(Box::new(BranchFlowBlock { terminals }));
    problem.add_constraint(Box::new(ThermalLimitBlock { rows: thermal_rows }));

    // Nodal balance.
    let mut buses = Vec::with_capacity(nb);
    for (n, bus) in net.buses.iter().enumerate() {
        let mut gen_p = Vec::new();
        let mut gen_q = Vec::new();
        for g in topo.gens_at(net, BusIdx(n)) {
            gen_p.push(layout.p[g.0].unwrap());
            gen_q.push(layout.q[g.0].unwrap());
        }
        let mut fp = Vec::new();
        let mut fq = Vec::new();
        for &e in &topo.branches {
            let br = &net.branches[e.0];
            if br.from_bus.0 == n {
                fp.push(layout.flow_p[e.0].unwrap()[0]);
                fq.push(layout.flow_q[e.0].unwrap()[0]);
            }
            if br.to_bus.0 == n {
                fp.push(layout.flow_p[e.0].unwrap()[1]);
                fq.push(layout.flow_q[e.0].unwrap()[1]);
            }
        }
        buses.push(BalanceBusRef {
            v: layout.v[n],
            gen_p,
            gen_q,
            flow_p: fp,
            flow_q: fq,
            slack_p: layout.sigma_p[n],
            slack_q: layout.sigma_q[n],
            g_shunt: bus.g_shunt,
            b_shunt: bus.b_shunt,
            p_load: bus.p_load,
            q_load: bus.q_load,
        });
    }
    problem.add_constraint(Box::new(PowerBalanceBlock { buses }));

    // Reference angle.
    let mut ref_block = LinearBlock::new("angle_reference");
    ref_block.push(vec![(layout.theta[ref_bus.0], 1.0)], RowBounds::eq(0.0));
    problem.add_constraint(Box::new(ref_block));

    // Slack penalties.
    let w = build.penalty_weight;
    let s_vars: Vec<VarId> = topo
        .branches
        .iter()
        .flat_map(|&e| layout.sigma_branch[e.0].unwrap())
        .collect();
    problem.add_objective(Box::new(SlackPenaltyBlock {
        name: "penalty_line_overload".into(),
        vars: s_vars,
        penalty: quad_penalty_fit(&net.penalty_s),
        weight: w,
    }));
    problem.add_objective(Box::new(SlackPenaltyBlock {
        name: "penalty_active_imbalance".into(),
        vars: layout.sigma_p.iter().flatten().copied().collect(),
        penalty: quad_penalty_fit(&net.penalty_p),
        weight: w,
    }));
    problem.add_objective(Box::new(SlackPenaltyBlock {
        name: "penalty_reactive_imbalance".into(),
        vars: layout.sigma_q.iter().flatten().copied().collect(),
        penalty: quad_penalty_fit(&net.penalty_q),
        weight: w,
    }));

    Ok((problem, layout))
}

/// Build the first-stage master problem: base-case OPF with generation cost,
/// quadratic slack penalties, and the surrogate recourse terms weighted by
/// 1/(|K|-1).
pub fn build_base_problem(
    net: &Network,
    surrogates: &[SurrogateTerm],
) -> Result<(NlpProblem, CaseLayout), OpfError> {
    let (mut problem, layout) =
        case_skeleton(&CaseBuild { net, topo: net.base_topology(), penalty_weight: 1.0 })?;
    let cost_vars: Vec<VarId> = (0..net.generators.len()).map(|g| layout.p[g].unwrap()).collect();
    problem.add_objective(Box::new(GenCostBlock {
        vars: cost_vars,
        costs: net.generators.iter().map(|g| g.cost).collect(),
    }));
    let k = net.contingencies.len();
    let weight = if k > 0 { 1.0 / k as f64 } else { 0.0 };
    for s in surrogates {
        if s.p_k == 0.0 {
            continue;
        }
        let (pv, qv) = match s.selector {
            CouplingSelector::Gen(g) => (layout.p[g.0].unwrap(), layout.q[g.0].unwrap()),
            CouplingSelector::Branch(e, t) => {
                (layout.flow_p[e.0].unwrap()[t], layout.flow_q[e.0].unwrap()[t])
            }
        };
        problem.add_objective(Box::new(SurrogateBlock {
            name: format!("surrogate[{}]", s.name),
            p: pv,
            q: qv,
            coef: s.p_k * weight,
        }));
    }
    problem.finalize()?;
    Ok((problem, layout))
}

/// Per-generator drop-control data of a contingency problem.
struct DropGen {
    g: GenIdx,
    cap_up: f64,
    cap_down: f64,
}

/// Build the epsilon-relaxed contingency subproblem for contingency `k`
/// around the base-case point. The objective carries penalties only.
///
/// Saturation caps with a structurally zero right-hand side are imposed
/// exactly: the corresponding rho/nu is fixed at zero (and non-responding
/// generators are pinned to their base dispatch).
pub fn build_contingency_problem(
    net: &Network,
    k: ContIdx,
    base: &OperatingPoint,
    epsilon: f64,
) -> Result<(NlpProblem, CaseLayout), OpfError> {
    let topo = net.apply_contingency(k).map_err(|_| OpfError::UnknownVariable(format!("contingency #{}", k.0)))?;
    let db = delta_bounds(net, &topo, &base.gen_p);
    let (mut problem, mut layout) =
        case_skeleton(&CaseBuild { net, topo: topo.clone(), penalty_weight: 1.0 })?;

    // Coupling variables.
    let space = problem.space_mut();
    let delta = space.add("delta", db.lo, db.hi)?;
    if db.rigid {
        space.fix(delta, 0.0)?;
    }
    layout.delta = Some(delta);

    let mut drop_gens = Vec::new();
    for &g in &topo.gens {
        let gen = &net.generators[g.0];
        let rp = space.add(format!("rho+[{}]", gen.id), 0.0, f64::INFINITY)?;
        let rm = space.add(format!("rho-[{}]", gen.id), 0.0, f64::INFINITY)?;
        layout.rho_plus[g.0] = Some(rp);
        layout.rho_minus[g.0] = Some(rm);
        let width = gen.p_max - gen.p_min;
        drop_gens.push(DropGen {
            g,
            cap_up: epsilon * gen.drop_const * db.hi * width,
            cap_down: epsilon * (-gen.drop_const * db.lo) * width,
        });
    }
    let controlled = topo.controlled_buses(net);
    for &n in &controlled {
        let id = &net.buses[n.0].id;
        layout.nu_plus[n.0] = Some(space.add(format!("nu+[{}]", id), 0.0, f64::INFINITY)?);
        layout.nu_minus[n.0] = Some(space.add(format!("nu-[{}]", id), 0.0, f64::INFINITY)?);
    }

    // Frequency drop coupling and saturation caps.
    let mut drop_rows = LinearBlock::new("drop_coupling");
    let mut caps = ComplementarityCapBlock { name: "drop_saturation_caps".into(), rows: Vec::new() };
    for dg in &drop_gens {
        let gen = &net.generators[dg.g.0];
        let p_base = base.gen_p[dg.g.0];
        let pv = layout.p[dg.g.0].unwrap();
        let rp = layout.rho_plus[dg.g.0].unwrap();
        let rm = layout.rho_minus[dg.g.0].unwrap();
        let space = problem.space_mut();
        if gen.drop_const == 0.0 {
            // Exact complementarity: a non-responding unit holds its base
            // dispatch.
            space.fix(pv, p_base.clamp(gen.p_min, gen.p_max))?;
            space.fix(rp, 0.0)?;
            space.fix(rm, 0.0)?;
            continue;
        }
        drop_rows.push(
            vec![(pv, 1.0), (rp, 1.0), (rm, -1.0), (delta, -gen.drop_const)],
            RowBounds::eq(p_base),
        );
        let width_zero = gen.p_max == gen.p_min;
        if dg.cap_up > 0.0 {
            caps.rows.push(CapRow {
                slack: rp,
                partner: pv,
                bound: gen.p_max,
                upper_side: true,
                cap: dg.cap_up,
            });
        } else if !width_zero {
            space.fix(rp, 0.0)?;
        }
        if dg.cap_down > 0.0 {
            caps.rows.push(CapRow {
                slack: rm,
                partner: pv,
                bound: gen.p_min,
                upper_side: false,
                cap: dg.cap_down,
            });
        } else if !width_zero {
            space.fix(rm, 0.0)?;
        }
    }
    if !drop_rows.is_empty() {
        problem.add_constraint(Box::new(drop_rows));
    }
    if !caps.rows.is_empty() {
        problem.add_constraint(Box::new(caps));
    }

    // Voltage regulator coupling and saturation caps.
    let mut vreg_rows = LinearBlock::new("regulator_coupling");
    let mut vcaps =
        ComplementarityCapBlock { name: "regulator_saturation_caps".into(), rows: Vec::new() };
    for &n in &controlled {
        let np = layout.nu_plus[n.0].unwrap();
        let nm = layout.nu_minus[n.0].unwrap();
        vreg_rows.push(
            vec![(np, 1.0), (nm, -1.0), (layout.v[n.0], -1.0)],
            RowBounds::eq(-base.v[n.0]),
        );
        let bus = &net.buses[n.0];
        // Cap widths follow the master formulation: emergency window on the
        // contingency side, normal window on the base side.
        let up_width = bus.v_max_emer - bus.v_min_base;
        let down_width = bus.v_max_base - bus.v_min_emer;
        for g in topo.gens_at(net, n) {
            let gen = &net.generators[g.0];
            let qv = layout.q[g.0].unwrap();
            let q_width = gen.q_max - gen.q_min;
            if q_width == 0.0 {
                // Product rows vanish identically; nothing to impose.
                continue;
            }
            vcaps.rows.push(CapRow {
                slack: nm,
                partner: qv,
                bound: gen.q_max,
                upper_side: true,
                cap: epsilon * up_width * q_width,
            });
            vcaps.rows.push(CapRow {
                slack: np,
                partner: qv,
                bound: gen.q_min,
                upper_side: false,
                cap: epsilon * down_width * q_width,
            });
        }
    }
    if !vreg_rows.is_empty() {
        problem.add_constraint(Box::new(vreg_rows));
    }
    if !vcaps.rows.is_empty() {
        problem.add_constraint(Box::new(vcaps));
    }

    problem.finalize()?;
    Ok((problem, layout))
}

/// Restricted contingency subproblem canvas: the case-k power-flow problem
/// with penalty objective and no coupling constraints, exposing the mutation
/// hooks the crushing procedures apply before solving.
pub struct Canvas {
    problem: NlpProblem,
    layout: CaseLayout,
    response_rows: LinearBlock,
    net_gens: usize,
}

/// Default proximal weight on voltages and angles.
pub const CANVAS_REG_DEFAULT: f64 = 1e-6;

/// Build the canvas around a base point; `reg` is the quadratic
/// regularization weight (0 disables the term).
pub fn build_restricted_canvas(
    net: &Network,
    k: ContIdx,
    base: &OperatingPoint,
    reg: f64,
) -> Result<Canvas, OpfError> {
    let topo = net
        .apply_contingency(k)
        .map_err(|_| OpfError::UnknownVariable(format!("contingency #{}", k.0)))?;
    let (mut problem, mut layout) =
        case_skeleton(&CaseBuild { net, topo, penalty_weight: 1.0 })?;
    let delta = problem.space_mut().add("delta", 0.0, 0.0)?;
    layout.delta = Some(delta);
    if reg > 0.0 {
        let vars: Vec<VarId> = layout.v.iter().chain(&layout.theta).copied().collect();
        let centers: Vec<f64> = base.v.iter().chain(&base.theta).copied().collect();
        problem.add_objective(Box::new(QuadRegBlock { vars, centers, rho: reg }));
    }
    Ok(Canvas {
        problem,
        layout,
        response_rows: LinearBlock::new("drop_response"),
        net_gens: net.generators.len(),
    })
}

impl Canvas {
    pub fn layout(&self) -> &CaseLayout {
        &self.layout
    }

    pub fn space(&self) -> &VariableSpace {
        self.problem.space()
    }

    /// Fix a variable to a value.
    pub fn fix(&mut self, var: VarId, value: f64) -> Result<(), OpfError> {
        Ok(self.problem.space_mut().fix(var, value)?)
    }

    /// Fix a variable by name; unknown names are an error.
    pub fn fix_by_name(&mut self, name: &str, value: f64) -> Result<(), OpfError> {
        let var = self
            .problem
            .space()
            .by_name(name)
            .ok_or_else(|| OpfError::UnknownVariable(name.to_string()))?;
        self.fix(var, value)
    }

    /// Replace a variable's bounds.
    pub fn set_bounds(&mut self, var: VarId, lo: f64, hi: f64) -> Result<(), OpfError> {
        Ok(self.problem.space_mut().set_bounds(var, lo, hi)?)
    }

    /// Bound the drop signal (unfixes the canvas's delta variable).
    pub fn set_delta_bounds(&mut self, lo: f64, hi: f64) -> Result<(), OpfError> {
        self.set_bounds(self.layout.delta.unwrap(), lo, hi)
    }

    /// Add the drop-response constraint `p_g = p_base + A_g * delta`.
    pub fn add_drop_response(&mut self, g: GenIdx, drop_const: f64, p_base: f64) -> Result<(), OpfError> {
        debug_assert!(g.0 < self.net_gens);
        let pv = self.layout.p[g.0].ok_or_else(|| {
            OpfError::UnknownVariable(format!("p of failed generator #{}", g.0))
        })?;
        self.response_rows.push(
            vec![(pv, 1.0), (self.layout.delta.unwrap(), -drop_const)],
            RowBounds::eq(p_base),
        );
        Ok(())
    }

    /// Add an arbitrary linear constraint row.
    pub fn add_linear(&mut self, terms: Vec<(VarId, f64)>, bounds: RowBounds) {
        self.response_rows.push(terms, bounds);
    }

    /// Finish mutations and produce the solvable problem.
    pub fn finish(mut self) -> Result<(NlpProblem, CaseLayout), OpfError> {
        if !self.response_rows.is_empty() {
            self.problem.add_constraint(Box::new(self.response_rows));
        }
        self.problem.finalize()?;
        Ok((self.problem, self.layout))
    }
}

#[cfg(test)]
mod tests;
