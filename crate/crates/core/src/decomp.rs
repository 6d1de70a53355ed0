//! Two-stage decomposition driver: contingency pre-screening, surrogate
//! recourse terms, and the block-incremental loop.
//!
//! The loop state lives in [`DecompCore`]; [`solve_scacopf`] runs it
//! sequentially (one pass = master solve, block selection, evaluations,
//! surrogate updates). The execution engine drives the same state machine
//! through its scheduler, so synchronous engine runs and the sequential
//! loop are bit-identical.

use crate::grid::{BranchIdx, CaseTopology, ContIdx, GenIdx, Network, OutageKind};
use crate::ipm::{self, IpmOptions, IpmResult, IpmStatus, WarmStartMode};
use crate::opf::{
    self, build_base_problem, build_contingency_problem, case_penalty, contingency_start,
    score_solution, CouplingSelector, OperatingPoint, PenaltyMode, ScoreBreakdown,
    SurrogateTerm,
};
use crate::recovery::{recover_feasible, RecoveredSolution, RecoveryParams};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecompError {
    #[error("model construction failed: {0}")]
    Build(#[from] opf::OpfError),
    #[error("solver setup failed: {0}")]
    Ipm(#[from] ipm::IpmError),
    #[error("negative recourse penalty {0}")]
    NegativePenalty(f64),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
}

/// Low-dimensional stand-in for one contingency's recourse penalty.
#[derive(Debug, Clone)]
pub struct RecourseSurrogate {
    pub cont: ContIdx,
    pub selector: CouplingSelector,
    /// Fitted coefficient, >= 0.
    pub p_k: f64,
    /// Latest relaxed penalty seen for this contingency.
    pub latest_r: Option<f64>,
    /// Set when the coupling injection was numerically zero at the last
    /// update; the coefficient is forced to 0 and the contingency is
    /// rescheduled every pass while its penalty stays positive.
    pub pinned_zero: bool,
    pub evaluated: bool,
}

impl RecourseSurrogate {
    fn new(net: &Network, k: ContIdx) -> RecourseSurrogate {
        let c = &net.contingencies[k.0];
        let selector = match c.kind {
            OutageKind::GeneratorOutage => CouplingSelector::Gen(c.gen.unwrap()),
            OutageKind::BranchOutage => CouplingSelector::Branch(c.branch.unwrap(), 0),
        };
        RecourseSurrogate {
            cont: k,
            selector,
            p_k: 0.0,
            latest_r: None,
            pinned_zero: false,
            evaluated: false,
        }
    }
}

/// Value of the surrogate at a base-case point (unweighted by 1/(|K|-1)).
pub fn surrogate_value(s: &RecourseSurrogate, base: &OperatingPoint) -> f64 {
    let (p, q) = s.selector.coupling_values(base);
    let sq = p * p + q * q;
    s.p_k * sq * sq
}

/// Fit the surrogate coefficient from one penalty evaluation at `base`:
/// afterwards the surrogate reproduces `r_k` at that point and vanishes at
/// zero injection. Branch surrogates first re-select the terminal with the
/// larger apparent power. A numerically zero injection pins the coefficient
/// to 0.
pub fn update_surrogate(
    s: &mut RecourseSurrogate,
    r_k: f64,
    base: &OperatingPoint,
) -> Result<(), DecompError> {
    if r_k < 0.0 {
        return Err(DecompError::NegativePenalty(r_k));
    }
    if let CouplingSelector::Branch(e, _) = s.selector {
        let s0 = base.flow_p[e.0][0].powi(2) + base.flow_q[e.0][0].powi(2);
        let s1 = base.flow_p[e.0][1].powi(2) + base.flow_q[e.0][1].powi(2);
        s.selector = CouplingSelector::Branch(e, if s1 > s0 { 1 } else { 0 });
    }
    let (p, q) = s.selector.coupling_values(base);
    let sq = p * p + q * q;
    let denom = sq * sq;
    if denom < 1e-12 {
        s.p_k = 0.0;
        s.pinned_zero = true;
    } else {
        s.p_k = r_k / denom;
        s.pinned_zero = false;
    }
    s.latest_r = Some(r_k);
    s.evaluated = true;
    Ok(())
}

/// Rank contingencies by failed-element capacity: the top `s_g` generator
/// and top `s_e` branch outages interleaved generator-first, then everything
/// else in capacity order. Always a permutation of the full list.
pub fn prescreen(net: &Network, s_g: usize, s_e: usize) -> Vec<ContIdx> {
    let gen_key = |g: GenIdx| {
        let gen = &net.generators[g.0];
        (gen.p_max, gen.q_max - gen.q_min)
    };
    let branch_key = |b: BranchIdx| net.branches[b.0].rate_base;

    let mut gens: Vec<ContIdx> = Vec::new();
    let mut branches: Vec<ContIdx> = Vec::new();
    for (i, c) in net.contingencies.iter().enumerate() {
        match c.kind {
            OutageKind::GeneratorOutage => gens.push(ContIdx(i)),
            OutageKind::BranchOutage => branches.push(ContIdx(i)),
        }
    }
    gens.sort_by(|&a, &b| {
        let (ka, kb) = (gen_key(net.contingencies[a.0].gen.unwrap()), gen_key(net.contingencies[b.0].gen.unwrap()));
        kb.partial_cmp(&ka)
            .unwrap()
            .then_with(|| net.contingencies[a.0].id.cmp(&net.contingencies[b.0].id))
    });
    branches.sort_by(|&a, &b| {
        let (ka, kb) = (
            branch_key(net.contingencies[a.0].branch.unwrap()),
            branch_key(net.contingencies[b.0].branch.unwrap()),
        );
        kb.partial_cmp(&ka)
            .unwrap()
            .then_with(|| net.contingencies[a.0].id.cmp(&net.contingencies[b.0].id))
    });

    let s_g = s_g.min(gens.len());
    let s_e = s_e.min(branches.len());
    let mut out = Vec::with_capacity(net.contingencies.len());
    let (top_g, rest_g) = gens.split_at(s_g);
    let (top_e, rest_e) = branches.split_at(s_e);
    let mut gi = top_g.iter();
    let mut ei = top_e.iter();
    loop {
        match (gi.next(), ei.next()) {
            (None, None) => break,
            (g, e) => {
                out.extend(g);
                out.extend(e);
            }
        }
    }
    // Remaining contingencies of both kinds by capacity, ties by id.
    let mut rest: Vec<ContIdx> = rest_g.iter().chain(rest_e.iter()).copied().collect();
    rest.sort_by(|&a, &b| {
        let cap = |k: ContIdx| match net.contingencies[k.0].kind {
            OutageKind::GeneratorOutage => gen_key(net.contingencies[k.0].gen.unwrap()).0,
            OutageKind::BranchOutage => branch_key(net.contingencies[k.0].branch.unwrap()),
        };
        cap(b)
            .partial_cmp(&cap(a))
            .unwrap()
            .then_with(|| net.contingencies[a.0].id.cmp(&net.contingencies[b.0].id))
    });
    out.extend(rest);
    out
}

#[derive(Debug, Clone)]
pub struct DecompParams {
    /// Maximum number of passes (T).
    pub passes: usize,
    /// Recourse penalty tolerance for convergence.
    pub eps_r: f64,
    /// Complementarity relaxation constant.
    pub eps: f64,
    /// Regulator crushing tolerance.
    pub eps_q: f64,
    /// Pre-screening counts.
    pub s_g: usize,
    pub s_e: usize,
    pub ipm: IpmOptions,
}

impl Default for DecompParams {
    fn default() -> Self {
        DecompParams {
            passes: 3,
            eps_r: 1e-2,
            eps: 1e-4,
            eps_q: 0.05,
            s_g: 4,
            s_e: 4,
            ipm: IpmOptions::default(),
        }
    }
}

/// One surrogate update, kept for auditing the defining property.
#[derive(Debug, Clone)]
pub struct UpdateRecord {
    pub cont: ContIdx,
    pub pass: usize,
    pub snapshot: u64,
    pub r_k: f64,
    pub coupling_p: f64,
    pub coupling_q: f64,
    pub p_k: f64,
}

/// Outcome of evaluating one relaxed contingency subproblem.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub cont: ContIdx,
    pub penalty: f64,
    pub point: OperatingPoint,
    pub status: IpmStatus,
    pub iterations: usize,
}

/// Warm start for a relaxed contingency solve, built from the base-case
/// point alone: lost generation is redistributed along the drop response,
/// angles re-solved through the DC Laplacian of the surviving topology, and
/// bound multipliers synthesized from the seeded primal point (no dual
/// information from another solve is reused). Solve it with the primal-dual
/// mode so the synthesized multipliers are honored.
pub fn contingency_warm_start(
    net: &Network,
    problem: &crate::nlp::NlpProblem,
    layout: &crate::opf::CaseLayout,
    base: &OperatingPoint,
) -> ipm::StartPoint {
    let mut sp = contingency_start(net, problem, layout, base);
    let topo = &layout.topo;
    if let Some(f) = topo.failed_gen {
        let deficit = base.gen_p[f.0];
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for &g in &topo.gens {
            let gen = &net.generators[g.0];
            if gen.drop_const > 0.0 {
                lo += gen.p_min - base.gen_p[g.0];
                hi += gen.p_max - base.gen_p[g.0];
            }
        }
        let pad = 1e-9 * (hi - lo).max(1.0);
        if hi - lo > 2.0 * pad && deficit.abs() > 0.0 {
            let x = deficit.clamp(lo + pad, hi - pad);
            if let Ok(d0) = crate::recovery::delta_response(net, topo, &base.gen_p, x) {
                for &g in &topo.gens {
                    let gen = &net.generators[g.0];
                    if let Some(pv) = layout.p[g.0] {
                        sp.x[pv.0] = (base.gen_p[g.0] + gen.drop_const * d0)
                            .clamp(gen.p_min, gen.p_max);
                    }
                }
                if let Some(d) = layout.delta {
                    sp.x[d.0] = d0;
                }
            }
        }
    }
    // Re-solve the DC angles for the post-outage injections and recompute
    // flows; voltages stay at the base profile.
    let mut injections = vec![0.0f64; net.buses.len()];
    for (n, bus) in net.buses.iter().enumerate() {
        injections[n] -= bus.p_load;
    }
    for &g in &topo.gens {
        if let Some(pv) = layout.p[g.0] {
            injections[net.generators[g.0].bus.0] += sp.x[pv.0];
        }
    }
    if let Some(theta) = crate::opf::dc_angle_profile(net, topo, &injections, layout.ref_bus) {
        for n in 0..net.buses.len() {
            sp.x[layout.theta[n].0] = theta[n];
        }
        for &e in &topo.branches {
            let br = &net.branches[e.0];
            let (p_o, q_o, p_d, q_d) = crate::opf::branch_flow(
                sp.x[layout.v[br.from_bus.0].0],
                sp.x[layout.v[br.to_bus.0].0],
                theta[br.from_bus.0],
                theta[br.to_bus.0],
                br,
            );
            if let (Some(fp), Some(fq)) = (layout.flow_p[e.0], layout.flow_q[e.0]) {
                sp.x[fp[0].0] = p_o;
                sp.x[fp[1].0] = p_d;
                sp.x[fq[0].0] = q_o;
                sp.x[fq[1].0] = q_d;
            }
        }
    }
    // Synthesize a consistent primal-dual seed from the primal point alone
    // (no dual information is reused): bound-hugging variables (penalty
    // slacks with large objective gradients) sit at the mu0-central
    // distance with the gradient as multiplier; everything else gets the
    // central z = mu0 / distance.
    // Seed distances slightly tighter than the opening barrier: the first
    // centering steps then pull variables off their bounds instead of
    // slamming them on.
    let mu0 = 1e-3;
    sp.mu_init = Some(1e-2);
    let mut ws = crate::nlp::EvalWorkspace::new(problem);
    if problem.eval_values(&sp.x, &mut ws.cons).is_ok()
        && problem.eval_first_order(&sp.x, &mut ws).is_ok()
    {
        let lo = problem.space().lower();
        let up = problem.space().upper();
        for i in 0..sp.x.len() {
            if lo[i] >= up[i] {
                continue;
            }
            let g = ws.grad[i];
            if lo[i].is_finite() && g > 1.0 && (sp.x[i] - lo[i]) <= 1e-3 {
                sp.x[i] = lo[i] + mu0 / g;
                sp.z_lo[i] = g;
            } else if lo[i].is_finite() {
                let xi = crate::ipm::push_interior(sp.x[i], lo[i], up[i], 1e-4);
                sp.z_lo[i] = (mu0 / (xi - lo[i])).clamp(1e-8, 1e8);
            }
            if up[i].is_finite() && g < -1.0 && (up[i] - sp.x[i]) <= 1e-3 {
                sp.x[i] = up[i] - mu0 / (-g);
                sp.z_up[i] = -g;
            } else if up[i].is_finite() {
                let xi = crate::ipm::push_interior(sp.x[i], lo[i], up[i], 1e-4);
                sp.z_up[i] = (mu0 / (up[i] - xi)).clamp(1e-8, 1e8);
            }
        }
    }
    sp
}

/// Evaluate the relaxed subproblem of contingency `k` around `base`
/// (primal warm start from the base point). Safe to call from worker
/// threads; shares nothing mutable.
pub fn evaluate_contingency(
    net: &Network,
    k: ContIdx,
    base: &OperatingPoint,
    eps: f64,
    ipm_opts: &IpmOptions,
) -> Result<EvalOutcome, DecompError> {
    let (problem, layout) = build_contingency_problem(net, k, base, eps)?;
    let start = contingency_warm_start(net, &problem, &layout, base);
    let opts = IpmOptions { warm_start_mode: WarmStartMode::PrimalDual, ..ipm_opts.clone() };
    let res = ipm::solve(&problem, Some(&start), &opts)?;
    let point = layout.extract(net, &res.x);
    let penalty = case_penalty(net, &layout.topo, &point, PenaltyMode::Quadratic);
    Ok(EvalOutcome { cont: k, penalty, point, status: res.status, iterations: res.iterations })
}

/// Dedicated master-problem solver with warm-start state. Owned by the
/// sequential loop or by the engine's solver role.
pub struct MasterSolver {
    net: Arc<Network>,
    ipm: IpmOptions,
    prev: Option<IpmResult>,
    /// Raised when the last solve did not reach a solved status even after
    /// the retry; the best iterate is still returned.
    pub failed_last: bool,
    pub solves: usize,
}

impl MasterSolver {
    pub fn new(net: Arc<Network>, ipm: IpmOptions) -> MasterSolver {
        MasterSolver { net, ipm, prev: None, failed_last: false, solves: 0 }
    }

    /// Solve (or re-solve) the master problem with the given surrogate
    /// table; primal-dual warm start at mu = 1e-5 from the previous master
    /// solution. On failure, one retry with 10x initial regularization; a
    /// persistent failure keeps the best iterate and raises the flag.
    pub fn solve(&mut self, terms: &[SurrogateTerm]) -> Result<Arc<OperatingPoint>, DecompError> {
        let (problem, layout) = build_base_problem(&self.net, terms)?;
        let (start, mode) = match &self.prev {
            Some(prev) => {
                (ipm::warm_start_from(prev, WarmStartMode::PrimalDual), WarmStartMode::PrimalDual)
            }
            None => (
                ipm::StartPoint::primal(
                    layout.cold_start(&self.net, problem.n_vars()),
                    problem.n_cons(),
                ),
                WarmStartMode::Primal,
            ),
        };
        let opts = IpmOptions { warm_start_mode: mode, ..self.ipm.clone() };
        let mut res = ipm::solve(&problem, Some(&start), &opts)?;
        if !res.status.is_solved() {
            let retry_opts = IpmOptions { reg_init: opts.reg_init * 10.0, ..opts.clone() };
            res = ipm::solve(&problem, Some(&start), &retry_opts)?;
        }
        self.failed_last = !res.status.is_solved();
        self.solves += 1;
        let point = Arc::new(layout.extract(&self.net, &res.x));
        self.prev = Some(res);
        Ok(point)
    }
}

/// State of the block-incremental loop.
pub struct DecompCore {
    pub net: Arc<Network>,
    pub params: DecompParams,
    pub surrogates: Vec<RecourseSurrogate>,
    pub prescreen_order: Vec<ContIdx>,
    /// Current pass (1-based once the loop starts).
    pub pass: usize,
    /// Snapshot id of the current base point.
    pub snapshot: u64,
    pub base: Option<Arc<OperatingPoint>>,
    /// All master solutions by snapshot id; stale replies are applied
    /// against the snapshot they were computed from.
    pub snapshots: std::collections::HashMap<u64, Arc<OperatingPoint>>,
    pub update_log: Vec<UpdateRecord>,
    pub master_solves: usize,
    pub master_failed: bool,
    /// Contingencies whose evaluation permanently failed.
    pub eval_failures: Vec<ContIdx>,
}

impl DecompCore {
    pub fn new(net: Arc<Network>, params: DecompParams) -> DecompCore {
        let surrogates =
            (0..net.contingencies.len()).map(|i| RecourseSurrogate::new(&net, ContIdx(i))).collect();
        let prescreen_order = prescreen(&net, params.s_g, params.s_e);
        DecompCore {
            net,
            params,
            surrogates,
            prescreen_order,
            pass: 0,
            snapshot: 0,
            base: None,
            snapshots: std::collections::HashMap::new(),
            update_log: Vec::new(),
            master_solves: 0,
            master_failed: false,
            eval_failures: Vec::new(),
        }
    }

    pub fn surrogate_terms(&self) -> Vec<SurrogateTerm> {
        self.surrogates
            .iter()
            .filter(|s| s.p_k > 0.0)
            .map(|s| SurrogateTerm {
                name: self.net.contingencies[s.cont.0].id.clone(),
                selector: s.selector,
                p_k: s.p_k,
            })
            .collect()
    }

    /// Record an accepted master solution under a snapshot id.
    pub fn record_master(&mut self, point: Arc<OperatingPoint>, failed: bool, snapshot: u64) {
        self.master_solves += 1;
        self.master_failed |= failed;
        self.snapshot = snapshot;
        self.snapshots.insert(snapshot, point.clone());
        self.base = Some(point);
    }

    pub fn record_failure(&mut self, k: ContIdx) {
        self.eval_failures.push(k);
    }

    /// The contingency block of the current pass: the full pre-screened list
    /// on the first pass, afterwards the contingencies whose latest penalty
    /// still exceeds the tolerance (highest first), plus any pinned
    /// zero-injection stragglers.
    pub fn next_block(&self) -> Vec<ContIdx> {
        if self.pass <= 1 {
            return self.prescreen_order.clone();
        }
        let mut block: Vec<ContIdx> = self
            .surrogates
            .iter()
            .filter(|s| {
                let r = s.latest_r.unwrap_or(f64::INFINITY);
                r >= self.params.eps_r || (s.pinned_zero && r > 0.0) || !s.evaluated
            })
            .map(|s| s.cont)
            .collect();
        block.sort_by(|&a, &b| {
            let ra = self.surrogates[a.0].latest_r.unwrap_or(f64::INFINITY);
            let rb = self.surrogates[b.0].latest_r.unwrap_or(f64::INFINITY);
            rb.partial_cmp(&ra).unwrap().then_with(|| a.0.cmp(&b.0))
        });
        block
    }

    /// Apply one contingency evaluation; the update is fitted at the base
    /// point of the snapshot the evaluation ran against (which may be stale).
    pub fn apply_evaluation(
        &mut self,
        k: ContIdx,
        penalty: f64,
        snapshot: u64,
    ) -> Result<(), DecompError> {
        let snapshot_base = self
            .snapshots
            .get(&snapshot)
            .cloned()
            .or_else(|| self.base.clone())
            .expect("snapshot recorded before evaluations");
        update_surrogate(&mut self.surrogates[k.0], penalty, &snapshot_base)?;
        let s = &self.surrogates[k.0];
        let (p, q) = s.selector.coupling_values(&snapshot_base);
        self.update_log.push(UpdateRecord {
            cont: k,
            pass: self.pass,
            snapshot,
            r_k: penalty,
            coupling_p: p,
            coupling_q: q,
            p_k: s.p_k,
        });
        Ok(())
    }

    /// Loop exit test: every contingency evaluated at least once and every
    /// latest penalty below the tolerance.
    pub fn converged(&self) -> bool {
        self.surrogates
            .iter()
            .all(|s| s.evaluated && s.latest_r.unwrap_or(f64::INFINITY) < self.params.eps_r)
    }

    pub fn base_point(&self) -> Option<&Arc<OperatingPoint>> {
        self.base.as_ref()
    }
}

/// Outcome of a full decomposition run.
pub struct DecompOutcome {
    pub core: DecompCore,
    pub base: Arc<OperatingPoint>,
    pub passes_used: usize,
}

/// Sequential block-incremental loop: at most `passes` master solves, each
/// followed by a block of relaxed contingency evaluations and surrogate
/// updates; exits early once every contingency is evaluated and quiet.
pub fn solve_scacopf(net: Arc<Network>, params: DecompParams) -> Result<DecompOutcome, DecompError> {
    let mut core = DecompCore::new(net.clone(), params);
    let mut master = MasterSolver::new(net, core.params.ipm.clone());
    let mut passes_used = 0;
    for t in 1..=core.params.passes {
        core.pass = t;
        passes_used = t;
        let point = master.solve(&core.surrogate_terms())?;
        core.record_master(point, master.failed_last, t as u64);
        let block = core.next_block();
        let snapshot = core.snapshot;
        let base = core.base.clone().expect("master solved");
        for k in block {
            let outcome = evaluate_contingency(
                &core.net,
                k,
                &base,
                core.params.eps,
                &core.params.ipm,
            )?;
            core.apply_evaluation(k, outcome.penalty, snapshot)?;
        }
        if core.converged() {
            break;
        }
    }
    debug_assert!(core.master_solves <= core.params.passes);
    let base = core.base.clone().expect("at least one master solve");
    Ok(DecompOutcome { core, base, passes_used })
}

/// Final per-contingency solution used for reporting.
pub struct ContingencyReport {
    pub cont: ContIdx,
    pub relaxed_penalty: f64,
    pub recovered: Option<RecoveredSolution>,
    /// Point used for scoring (recovered when available, else relaxed).
    pub point: OperatingPoint,
    pub failed: bool,
}

/// Full scored solution bundle.
pub struct SolutionBundle {
    pub base: Arc<OperatingPoint>,
    pub contingencies: Vec<ContingencyReport>,
    pub piecewise: ScoreBreakdown,
    pub quadratic: ScoreBreakdown,
    pub partial: bool,
}

/// Evaluate every contingency at the final base point and optionally crush
/// each relaxed solution onto the exact feasible set; score the result with
/// the true piecewise penalty curves (and the quadratic fit alongside).
/// Contingency work is spread over `workers` threads.
pub fn full_report(
    core: &DecompCore,
    recover: bool,
    workers: usize,
) -> Result<SolutionBundle, DecompError> {
    let net = &core.net;
    let base = core.base.clone().expect("solve_scacopf must run first");
    let n = net.contingencies.len();
    let workers = workers.max(1);

    let results: Vec<Result<ContingencyReport, DecompError>> = {
        let mut slots: Vec<Option<Result<ContingencyReport, DecompError>>> =
            (0..n).map(|_| None).collect();
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots_ref = std::sync::Mutex::new(&mut slots);
        std::thread::scope(|scope| {
            for _ in 0..workers.min(n.max(1)) {
                let next = &next;
                let slots_ref = &slots_ref;
                let core_ref = &core;
                let base = base.clone();
                scope.spawn(move || loop {
                    let k = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if k >= n {
                        break;
                    }
                    let report = contingency_report(core_ref, ContIdx(k), &base, recover);
                    slots_ref.lock().unwrap()[k] = Some(report);
                });
            }
        });
        slots.into_iter().map(|s| s.expect("all slots filled")).collect()
    };

    let mut contingencies = Vec::with_capacity(n);
    let mut partial = core.master_failed;
    for r in results {
        let report = r?;
        partial |= report.failed;
        contingencies.push(report);
    }

    let points: BTreeMap<usize, OperatingPoint> =
        contingencies.iter().map(|c| (c.cont.0, c.point.clone())).collect();
    let piecewise = score_solution(net, &base, &points, PenaltyMode::Piecewise);
    let quadratic = score_solution(net, &base, &points, PenaltyMode::Quadratic);
    partial |= piecewise.partial;

    Ok(SolutionBundle { base, contingencies, piecewise, quadratic, partial })
}

fn contingency_report(
    core: &DecompCore,
    k: ContIdx,
    base: &OperatingPoint,
    recover: bool,
) -> Result<ContingencyReport, DecompError> {
    let net = &core.net;
    let relaxed = evaluate_contingency(net, k, base, core.params.eps, &core.params.ipm)?;
    let mut failed = !relaxed.status.is_solved();
    if !recover {
        return Ok(ContingencyReport {
            cont: k,
            relaxed_penalty: relaxed.penalty,
            recovered: None,
            point: relaxed.point,
            failed,
        });
    }
    let params = RecoveryParams {
        eps_q: core.params.eps_q,
        ipm: core.params.ipm.clone(),
        ..RecoveryParams::default()
    };
    let rec = recover_feasible(net, k, base, &relaxed.point, &params)
        .map_err(|e| DecompError::Build(opf::OpfError::UnknownVariable(e.to_string())))?;
    failed |= rec.fallback;
    Ok(ContingencyReport {
        cont: k,
        relaxed_penalty: relaxed.penalty,
        point: rec.point.clone(),
        recovered: Some(rec),
        failed,
    })
}

/// Convert a bundle into the solution-file schema.
pub fn to_solution_file(
    net: &Network,
    bundle: &SolutionBundle,
    network_name: &str,
) -> crate::grid::SolutionFile {
    use crate::grid::{CaseRecord, ObjectiveBreakdown, ObjectiveTerm};

    let case_record = |name: &str, topo: &CaseTopology, pt: &OperatingPoint, coupled: bool| {
        let mut rec = CaseRecord {
            case: name.to_string(),
            voltage: BTreeMap::new(),
            angle: BTreeMap::new(),
            gen_p: BTreeMap::new(),
            gen_q: BTreeMap::new(),
            branch_flow: BTreeMap::new(),
            sigma_branch: BTreeMap::new(),
            sigma_p: BTreeMap::new(),
            sigma_q: BTreeMap::new(),
            rho: None,
            nu: None,
            delta: None,
            recovered: false,
            fallback: false,
        };
        for (n, bus) in net.buses.iter().enumerate() {
            rec.voltage.insert(bus.id.clone(), pt.v[n]);
            rec.angle.insert(bus.id.clone(), pt.theta[n]);
            rec.sigma_p.insert(bus.id.clone(), pt.sigma_p[n]);
            rec.sigma_q.insert(bus.id.clone(), pt.sigma_q[n]);
        }
        for &g in &topo.gens {
            let id = &net.generators[g.0].id;
            rec.gen_p.insert(id.clone(), pt.gen_p[g.0]);
            rec.gen_q.insert(id.clone(), pt.gen_q[g.0]);
        }
        for &e in &topo.branches {
            let id = &net.branches[e.0].id;
            rec.branch_flow.insert(
                id.clone(),
                [pt.flow_p[e.0][0], pt.flow_q[e.0][0], pt.flow_p[e.0][1], pt.flow_q[e.0][1]],
            );
            rec.sigma_branch.insert(id.clone(), pt.sigma_branch[e.0]);
        }
        if coupled {
            rec.delta = Some(pt.delta);
            let mut rho = BTreeMap::new();
            for &g in &topo.gens {
                rho.insert(net.generators[g.0].id.clone(), pt.rho[g.0]);
            }
            rec.rho = Some(rho);
            let mut nu = BTreeMap::new();
            for n in topo.controlled_buses(net) {
                nu.insert(net.buses[n.0].id.clone(), pt.nu[n.0]);
            }
            rec.nu = Some(nu);
        }
        rec
    };

    let base_record = case_record("base", &net.base_topology(), &bundle.base, false);
    let mut cont_records = Vec::new();
    for c in &bundle.contingencies {
        let topo = net.apply_contingency(c.cont).expect("valid contingency");
        let mut rec =
            case_record(&net.contingencies[c.cont.0].id, &topo, &c.point, true);
        rec.recovered = c.recovered.is_some();
        rec.fallback = c.recovered.as_ref().map(|r| r.fallback).unwrap_or(false);
        cont_records.push(rec);
    }

    let pw = &bundle.piecewise;
    let mut terms = vec![
        ObjectiveTerm { name: "base_cost".into(), value: pw.base_cost },
        ObjectiveTerm { name: "base_penalty".into(), value: pw.base_penalty },
    ];
    let mut contingency_penalty = BTreeMap::new();
    for (idx, pen) in &pw.contingency_penalty {
        let id = net.contingencies[*idx].id.clone();
        terms.push(ObjectiveTerm { name: format!("contingency[{id}]"), value: pw.weight * pen });
        contingency_penalty.insert(id, *pen);
    }
    crate::grid::SolutionFile {
        network: network_name.to_string(),
        objective: ObjectiveBreakdown {
            mode: "piecewise".into(),
            total: pw.total,
            base_cost: pw.base_cost,
            base_penalty: pw.base_penalty,
            contingency_weight: pw.weight,
            contingency_penalty,
            terms,
            partial: bundle.partial,
        },
        base: base_record,
        contingencies: cont_records,
    }
}

/// Rebuild an operating point from a solution-file case record. Ids must
/// resolve in the network; elements absent from the record (failed in that
/// case) stay zero.
pub fn case_record_to_point(
    net: &Network,
    rec: &crate::grid::CaseRecord,
) -> Result<OperatingPoint, crate::grid::GridError> {
    use crate::grid::GridError;
    let mut pt = OperatingPoint::zeros(net);
    let bus = |id: &str| {
        net.bus_by_id(id).ok_or_else(|| GridError::Validation(format!("unknown bus `{id}`")))
    };
    for (id, &v) in &rec.voltage {
        pt.v[bus(id)?.0] = v;
    }
    for (id, &a) in &rec.angle {
        pt.theta[bus(id)?.0] = a;
    }
    for (id, &s) in &rec.sigma_p {
        pt.sigma_p[bus(id)?.0] = s;
    }
    for (id, &s) in &rec.sigma_q {
        pt.sigma_q[bus(id)?.0] = s;
    }
    let gen = |id: &str| {
        net.gen_by_id(id).ok_or_else(|| GridError::Validation(format!("unknown generator `{id}`")))
    };
    for (id, &p) in &rec.gen_p {
        pt.gen_p[gen(id)?.0] = p;
    }
    for (id, &q) in &rec.gen_q {
        pt.gen_q[gen(id)?.0] = q;
    }
    let branch = |id: &str| {
        net.branch_by_id(id).ok_or_else(|| GridError::Validation(format!("unknown branch `{id}`")))
    };
    for (id, &f) in &rec.branch_flow {
        let e = branch(id)?.0;
        pt.flow_p[e] = [f[0], f[2]];
        pt.flow_q[e] = [f[1], f[3]];
    }
    for (id, &s) in &rec.sigma_branch {
        pt.sigma_branch[branch(id)?.0] = s;
    }
    if let Some(rho) = &rec.rho {
        for (id, &r) in rho {
            pt.rho[gen(id)?.0] = r;
        }
    }
    if let Some(nu) = &rec.nu {
        for (id, &v) in nu {
            pt.nu[bus(id)?.0] = v;
        }
    }
    pt.delta = rec.delta.unwrap_or(0.0);
    Ok(pt)
}

pub mod driver;
