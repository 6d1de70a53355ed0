//! Engine adapters: run the block-incremental loop through the
//! master-solver-worker engine. The coordinator wraps [`DecompCore`], the
//! solver role wraps [`MasterSolver`], and workers evaluate relaxed
//! contingency subproblems against the snapshot they are handed.

use super::*;
use crate::exec::{self, Coordinator, EngineConfig, EngineReport, SolverRole, TaskKey, WorkerRole};

/// Master solution snapshot passed from the solver role to the workers.
#[derive(Clone)]
pub struct MasterSnap {
    pub point: Option<Arc<OperatingPoint>>,
    pub failed: bool,
    pub error: Option<String>,
}

/// Worker reply: the relaxed penalty of one contingency.
#[derive(Clone, Debug)]
pub struct EvalReply {
    pub penalty: f64,
    pub solved: bool,
    pub iterations: usize,
}

pub struct DecompCoordinator {
    pub core: DecompCore,
}

impl Coordinator for DecompCoordinator {
    type Table = Vec<SurrogateTerm>;
    type Snap = MasterSnap;
    type Reply = EvalReply;

    fn begin_pass(&mut self) -> bool {
        if self.core.pass >= self.core.params.passes {
            return false;
        }
        if self.core.pass >= 1 && self.core.converged() {
            return false;
        }
        self.core.pass += 1;
        true
    }

    fn table(&self) -> Vec<SurrogateTerm> {
        self.core.surrogate_terms()
    }

    fn on_master(&mut self, snap: &MasterSnap, snapshot_id: u64) {
        match &snap.point {
            Some(point) => self.core.record_master(point.clone(), snap.failed, snapshot_id),
            None => self.core.master_failed = true,
        }
    }

    fn next_block(&mut self) -> Vec<TaskKey> {
        self.core.next_block().into_iter().map(|k| k.0).collect()
    }

    fn apply(&mut self, task: TaskKey, reply: EvalReply, snapshot_id: u64) -> bool {
        // Stale replies are applied unconditionally against their own
        // snapshot; staleness affects solution quality, never bookkeeping.
        self.core
            .apply_evaluation(ContIdx(task), reply.penalty, snapshot_id)
            .expect("nonnegative penalties from evaluations");
        reply.penalty >= self.core.params.eps_r
    }

    fn on_failure(&mut self, task: TaskKey) {
        self.core.record_failure(ContIdx(task));
    }

    fn done(&self) -> bool {
        self.core.converged()
    }
}

pub struct DecompSolverRole {
    pub master: MasterSolver,
}

impl SolverRole for DecompSolverRole {
    type Table = Vec<SurrogateTerm>;
    type Snap = MasterSnap;

    fn solve(&mut self, table: Vec<SurrogateTerm>, _pass: usize) -> MasterSnap {
        match self.master.solve(&table) {
            Ok(point) => {
                MasterSnap { point: Some(point), failed: self.master.failed_last, error: None }
            }
            Err(e) => MasterSnap { point: None, failed: true, error: Some(e.to_string()) },
        }
    }
}

pub struct DecompWorkerRole {
    pub net: Arc<Network>,
    pub eps: f64,
    pub ipm: IpmOptions,
}

impl WorkerRole for DecompWorkerRole {
    type Snap = MasterSnap;
    type Reply = EvalReply;

    fn evaluate(&self, snap: &MasterSnap, task: TaskKey, _attempt: u32) -> Result<EvalReply, String> {
        let base = snap.point.as_ref().ok_or("no master solution available")?;
        let outcome = evaluate_contingency(&self.net, ContIdx(task), base, self.eps, &self.ipm)
            .map_err(|e| e.to_string())?;
        Ok(EvalReply {
            penalty: outcome.penalty,
            solved: outcome.status.is_solved(),
            iterations: outcome.iterations,
        })
    }
}

/// Drive the decomposition through the engine; synchronous mode reproduces
/// the sequential loop bit for bit.
pub fn run_engine(
    net: Arc<Network>,
    params: DecompParams,
    cfg: &EngineConfig,
) -> Result<(DecompOutcome, EngineReport), DecompError> {
    let mut coordinator = DecompCoordinator { core: DecompCore::new(net.clone(), params.clone()) };
    let solver =
        DecompSolverRole { master: MasterSolver::new(net.clone(), params.ipm.clone()) };
    let worker = Arc::new(DecompWorkerRole { net, eps: params.eps, ipm: params.ipm });
    let report = exec::run(cfg, &mut coordinator, solver, worker);
    let core = coordinator.core;
    let base = core.base.clone().ok_or_else(|| {
        DecompError::Build(opf::OpfError::UnknownVariable("no master solution produced".into()))
    })?;
    let passes_used = report.passes;
    Ok((DecompOutcome { core, base, passes_used }, report))
}
