//! Asynchronous master-solver-worker execution engine.
//!
//! Three roles as in-process contexts communicating through queues: the
//! master owns bookkeeping and scheduling and never blocks on any single
//! channel (completion is polled); the solver re-solves the first-stage
//! problem when enough high-penalty replies have accumulated; workers
//! evaluate one contingency at a time. Workers keep evaluating while the
//! solver runs. Replies computed against an older snapshot are still
//! applied.
//!
//! Synchronous mode executes the same role contract inline in sequential
//! order and is bit-identical to a plain sequential run of the driver.

use serde::Serialize;
use std::collections::{HashMap, VecDeque};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

/// Task identity: index of a contingency in the driver's list.
pub type TaskKey = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Master,
    Solver,
    Worker(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MsgKind {
    Init,
    EvaluateContingency,
    RecourseReply,
    ReplyDuplicate,
    TaskFailed,
    SolveStart,
    SolveComplete,
    Finalize,
}

/// One record of the totally ordered message trace (single arbiter clock:
/// the master assigns sequence numbers as it sends or observes messages).
#[derive(Debug, Clone, Serialize)]
pub struct LogRecord {
    pub seq: u64,
    /// Seconds since engine start.
    pub time: f64,
    pub from: Role,
    pub to: Role,
    pub kind: MsgKind,
    pub snapshot: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contingency: Option<TaskKey>,
    pub pass: usize,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineMode {
    Synchronous,
    Asynchronous,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Worker count W >= 1.
    pub workers: usize,
    pub mode: EngineMode,
    /// A task in flight longer than this is reassigned once, then failed.
    pub stall_timeout: Duration,
    /// High-penalty replies accumulated before the solver re-solves.
    pub max_pending_master_updates: usize,
    /// Wall-clock budget; on expiry the engine returns the best state so far.
    pub time_budget: Option<Duration>,
    /// Master poll period.
    pub poll_period: Duration,
    /// Reject replies computed more than this many snapshots behind the
    /// current one (the task is rescheduled). None accepts every reply, no
    /// matter how stale.
    pub max_snapshot_lag: Option<u64>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            workers: 1,
            mode: EngineMode::Synchronous,
            stall_timeout: Duration::from_secs(60),
            max_pending_master_updates: 4,
            time_budget: None,
            poll_period: Duration::from_micros(200),
            max_snapshot_lag: None,
        }
    }
}

/// Dedicated first-stage solving role. Owns its warm-start state.
pub trait SolverRole: Send {
    type Table: Send;
    type Snap: Send + Sync;
    fn solve(&mut self, table: Self::Table, pass: usize) -> Self::Snap;
}

/// Contingency evaluation role; shared immutably across worker threads.
pub trait WorkerRole: Send + Sync {
    type Snap: Send + Sync;
    type Reply: Send;
    fn evaluate(&self, snap: &Self::Snap, task: TaskKey, attempt: u32) -> Result<Self::Reply, String>;
}

/// Master-side bookkeeping: pass control, block selection, surrogate
/// updates. Mutated only by the engine's master context.
pub trait Coordinator {
    type Table;
    type Snap;
    type Reply;

    /// Advance to the next pass; false ends the run (pass cap reached or
    /// converged).
    fn begin_pass(&mut self) -> bool;

    /// Snapshot of the current surrogate table for a master solve.
    fn table(&self) -> Self::Table;

    /// Record a completed master solve.
    fn on_master(&mut self, snap: &Self::Snap, snapshot_id: u64);

    /// Task list of the current pass.
    fn next_block(&mut self) -> Vec<TaskKey>;

    /// Apply one reply; returns true when it is a high-penalty reply that
    /// should count toward a master re-solve.
    fn apply(&mut self, task: TaskKey, reply: Self::Reply, snapshot_id: u64) -> bool;

    /// Record a permanently failed task.
    fn on_failure(&mut self, task: TaskKey);

    /// Global convergence (checked at pass boundaries).
    fn done(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskState {
    Pending,
    Replied,
    Failed,
}

#[derive(Debug, Clone, Default)]
pub struct EngineReport {
    pub log: Vec<LogRecord>,
    pub passes: usize,
    pub master_solves: usize,
    pub budget_expired: bool,
    /// (pass, task) pairs that permanently failed.
    pub failed_tasks: Vec<(usize, TaskKey)>,
    /// Successful contingency evaluations applied.
    pub evaluations: usize,
    pub elapsed_seconds: f64,
}

impl EngineReport {
    /// Throughput metric for comparing scheduling modes.
    pub fn evaluations_per_second(&self) -> f64 {
        if self.elapsed_seconds > 0.0 {
            self.evaluations as f64 / self.elapsed_seconds
        } else {
            0.0
        }
    }
}

impl EngineReport {
    /// Newline-delimited JSON export of the message trace.
    pub fn trace_ndjson(&self) -> String {
        self.log.iter().map(|r| serde_json::to_string(r).unwrap()).collect::<Vec<_>>().join("\n")
    }
}

struct Logger {
    t0: Instant,
    seq: u64,
    log: Vec<LogRecord>,
}

impl Logger {
    fn new() -> Logger {
        Logger { t0: Instant::now(), seq: 0, log: Vec::new() }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        from: Role,
        to: Role,
        kind: MsgKind,
        snapshot: u64,
        contingency: Option<TaskKey>,
        pass: usize,
        attempt: u32,
    ) {
        self.log.push(LogRecord {
            seq: self.seq,
            time: self.t0.elapsed().as_secs_f64(),
            from,
            to,
            kind,
            snapshot,
            contingency,
            pass,
            attempt,
        });
        self.seq += 1;
    }
}

/// Run the engine to completion (driver convergence, pass cap, or budget
/// expiry) and return the message trace.
pub fn run<C, S, W>(
    cfg: &EngineConfig,
    coordinator: &mut C,
    solver: S,
    worker: Arc<W>,
) -> EngineReport
where
    C: Coordinator<Table = S::Table, Snap = S::Snap, Reply = W::Reply>,
    S: SolverRole,
    W: WorkerRole<Snap = S::Snap>,
{
    match cfg.mode {
        EngineMode::Synchronous => run_sync(cfg, coordinator, solver, worker),
        EngineMode::Asynchronous => run_async(cfg, coordinator, solver, worker),
    }
}

/// Sequential execution with the same message protocol: one worker, solver
/// inline, identical ordering to a plain driver loop.
fn run_sync<C, S, W>(
    cfg: &EngineConfig,
    coordinator: &mut C,
    mut solver: S,
    worker: Arc<W>,
) -> EngineReport
where
    C: Coordinator<Table = S::Table, Snap = S::Snap, Reply = W::Reply>,
    S: SolverRole,
    W: WorkerRole<Snap = S::Snap>,
{
    let mut logger = Logger::new();
    let mut report = EngineReport::default();
    let mut snapshot_id = 0u64;
    logger.push(Role::Master, Role::Solver, MsgKind::Init, 0, None, 0, 0);
    let mut pass = 0usize;
    let deadline = cfg.time_budget.map(|b| logger.t0 + b);

    while coordinator.begin_pass() {
        pass += 1;
        report.passes = pass;
        logger.push(Role::Master, Role::Solver, MsgKind::SolveStart, snapshot_id, None, pass, 0);
        let snap = solver.solve(coordinator.table(), pass);
        snapshot_id += 1;
        report.master_solves += 1;
        logger.push(Role::Solver, Role::Master, MsgKind::SolveComplete, snapshot_id, None, pass, 0);
        coordinator.on_master(&snap, snapshot_id);

        let block = coordinator.next_block();
        for task in block {
            if deadline.map(|d| Instant::now() >= d).unwrap_or(false) {
                report.budget_expired = true;
                break;
            }
            logger.push(
                Role::Master,
                Role::Worker(0),
                MsgKind::EvaluateContingency,
                snapshot_id,
                Some(task),
                pass,
                0,
            );
            match worker.evaluate(&snap, task, 0) {
                Ok(reply) => {
                    logger.push(
                        Role::Worker(0),
                        Role::Master,
                        MsgKind::RecourseReply,
                        snapshot_id,
                        Some(task),
                        pass,
                        0,
                    );
                    report.evaluations += 1;
                    coordinator.apply(task, reply, snapshot_id);
                }
                Err(_) => {
                    logger.push(
                        Role::Worker(0),
                        Role::Master,
                        MsgKind::TaskFailed,
                        snapshot_id,
                        Some(task),
                        pass,
                        0,
                    );
                    coordinator.on_failure(task);
                    report.failed_tasks.push((pass, task));
                }
            }
        }
        if report.budget_expired || coordinator.done() {
            break;
        }
    }
    logger.push(Role::Master, Role::Solver, MsgKind::Finalize, snapshot_id, None, pass, 0);
    report.elapsed_seconds = logger.t0.elapsed().as_secs_f64();
    report.log = logger.log;
    report
}

enum ToMaster<Snap, Reply> {
    SolveDone { snap: Snap, pass: usize },
    Reply { worker: usize, task: TaskKey, attempt: u32, snapshot: u64, pass: usize, result: Result<Reply, String> },
}

enum ToSolver<Table> {
    Solve { table: Table, pass: usize },
    Stop,
}

enum ToWorker<Snap> {
    Eval { snap: Arc<Snap>, task: TaskKey, attempt: u32, snapshot: u64, pass: usize },
    Stop,
}

struct InFlight {
    task: TaskKey,
    attempt: u32,
    since: Instant,
    pass: usize,
}

fn run_async<C, S, W>(
    cfg: &EngineConfig,
    coordinator: &mut C,
    mut solver: S,
    worker: Arc<W>,
) -> EngineReport
where
    C: Coordinator<Table = S::Table, Snap = S::Snap, Reply = W::Reply>,
    S: SolverRole,
    W: WorkerRole<Snap = S::Snap>,
{
    let n_workers = cfg.workers.max(1);
    let mut logger = Logger::new();
    let mut report = EngineReport::default();
    let deadline = cfg.time_budget.map(|b| logger.t0 + b);

    let (to_master_tx, to_master_rx) = mpsc::channel::<ToMaster<S::Snap, W::Reply>>();
    let (solver_tx, solver_rx) = mpsc::channel::<ToSolver<S::Table>>();
    let mut worker_tx: Vec<mpsc::Sender<ToWorker<S::Snap>>> = Vec::new();
    let mut worker_rx: Vec<mpsc::Receiver<ToWorker<S::Snap>>> = Vec::new();
    for _ in 0..n_workers {
        let (tx, rx) = mpsc::channel();
        worker_tx.push(tx);
        worker_rx.push(rx);
    }

    std::thread::scope(|scope| {
        // Solver role: one dedicated context.
        {
            let tx = to_master_tx.clone();
            let solver = &mut solver;
            scope.spawn(move || {
                while let Ok(cmd) = solver_rx.recv() {
                    match cmd {
                        ToSolver::Solve { table, pass } => {
                            let snap = solver.solve(table, pass);
                            if tx.send(ToMaster::SolveDone { snap, pass }).is_err() {
                                break;
                            }
                        }
                        ToSolver::Stop => break,
                    }
                }
            });
        }
        // Worker roles.
        for (w, rx) in worker_rx.into_iter().enumerate() {
            let tx = to_master_tx.clone();
            let worker = worker.clone();
            scope.spawn(move || {
                while let Ok(cmd) = rx.recv() {
                    match cmd {
                        ToWorker::Eval { snap, task, attempt, snapshot, pass } => {
                            let result = worker.evaluate(&snap, task, attempt);
                            if tx
                                .send(ToMaster::Reply { worker: w, task, attempt, snapshot, pass, result })
                                .is_err()
                            {
                                break;
                            }
                        }
                        ToWorker::Stop => break,
                    }
                }
            });
        }
        drop(to_master_tx);

        // Master role: scheduling and bookkeeping, nonblocking polls only.
        let mut snapshot_id = 0u64;
        let mut current_snap: Option<Arc<S::Snap>> = None;
        let mut pass = 0usize;
        let mut pass_accounting: HashMap<TaskKey, TaskState> = HashMap::new();
        let mut reassigned: HashMap<TaskKey, bool> = HashMap::new();
        let mut pending: VecDeque<(TaskKey, u32)> = VecDeque::new();
        let mut inflight: HashMap<usize, InFlight> = HashMap::new();
        let mut idle: Vec<usize> = (0..n_workers).collect();
        let mut solver_busy = false;
        let mut pending_high = 0usize;
        let mut stopping = false;
        let mut pass_open = false;

        logger.push(Role::Master, Role::Solver, MsgKind::Init, 0, None, 0, 0);

        'main: loop {
            let budget_hit = deadline.map(|d| Instant::now() >= d).unwrap_or(false);
            if budget_hit && !stopping {
                report.budget_expired = true;
                stopping = true;
                pending.clear();
            }

            // Pass lifecycle: open a new pass when the previous one fully
            // drained and the solver is idle.
            if !stopping && !pass_open && !solver_busy && inflight.is_empty() && pending.is_empty() {
                if coordinator.done() || !coordinator.begin_pass() {
                    stopping = true;
                } else {
                    pass += 1;
                    report.passes = pass;
                    logger.push(
                        Role::Master,
                        Role::Solver,
                        MsgKind::SolveStart,
                        snapshot_id,
                        None,
                        pass,
                        0,
                    );
                    solver_tx
                        .send(ToSolver::Solve { table: coordinator.table(), pass })
                        .expect("solver alive");
                    solver_busy = true;
                    pending_high = 0;
                    pass_open = true;
                    pass_accounting.clear();
                    reassigned.clear();
                }
            }

            if stopping && inflight.is_empty() && !solver_busy {
                break 'main;
            }

            // Dispatch: one contingency at a time per idle worker.
            if let Some(snap) = current_snap.clone() {
                while !pending.is_empty() && !idle.is_empty() {
                    let (task, attempt) = pending.pop_front().unwrap();
                    let w = idle.pop().unwrap();
                    logger.push(
                        Role::Master,
                        Role::Worker(w),
                        MsgKind::EvaluateContingency,
                        snapshot_id,
                        Some(task),
                        pass,
                        attempt,
                    );
                    worker_tx[w]
                        .send(ToWorker::Eval {
                            snap: snap.clone(),
                            task,
                            attempt,
                            snapshot: snapshot_id,
                            pass,
                        })
                        .expect("worker alive");
                    inflight.insert(w, InFlight { task, attempt, since: Instant::now(), pass });
                }
            }
            // No idle worker may coexist with dispatchable work.
            debug_assert!(
                pending.is_empty() || idle.is_empty() || current_snap.is_none(),
                "dispatch must exhaust work or workers each cycle"
            );

            // Stall scan: reassign once, then fail.
            if !stopping {
                let now = Instant::now();
                let stalled: Vec<usize> = inflight
                    .iter()
                    .filter(|(_, f)| now.duration_since(f.since) >= cfg.stall_timeout)
                    .map(|(&w, _)| w)
                    .collect();
                for w in stalled {
                    let f = &inflight[&w];
                    let task = f.task;
                    if pass_accounting.get(&task) != Some(&TaskState::Pending) {
                        continue;
                    }
                    let already = reassigned.entry(task).or_insert(false);
                    if !*already {
                        *already = true;
                        pending.push_front((task, f.attempt + 1));
                        // The stalled worker stays busy until its late reply
                        // arrives; the retry goes to another worker.
                    } else if f.attempt > 0 {
                        // The retry stalled too: permanent failure.
                        pass_accounting.insert(task, TaskState::Failed);
                        coordinator.on_failure(task);
                        report.failed_tasks.push((f.pass, task));
                        logger.push(
                            Role::Worker(w),
                            Role::Master,
                            MsgKind::TaskFailed,
                            snapshot_id,
                            Some(task),
                            f.pass,
                            f.attempt,
                        );
                    }
                }
            }

            // Poll completions without suspending on any one channel.
            let mut progressed = false;
            while let Ok(msg) = to_master_rx.try_recv() {
                progressed = true;
                match msg {
                    ToMaster::SolveDone { snap, pass: solve_pass } => {
                        snapshot_id += 1;
                        report.master_solves += 1;
                        logger.push(
                            Role::Solver,
                            Role::Master,
                            MsgKind::SolveComplete,
                            snapshot_id,
                            None,
                            solve_pass,
                            0,
                        );
                        coordinator.on_master(&snap, snapshot_id);
                        current_snap = Some(Arc::new(snap));
                        solver_busy = false;
                        // A solve that opens a pass also schedules its block.
                        if pass_open && pass_accounting.is_empty() && pending.is_empty() && inflight.is_empty() {
                            let block = coordinator.next_block();
                            if block.is_empty() {
                                pass_open = false;
                            }
                            for task in block {
                                pass_accounting.insert(task, TaskState::Pending);
                                pending.push_back((task, 0));
                            }
                        }
                    }
                    ToMaster::Reply { worker: w, task, attempt, snapshot, pass: task_pass, result } => {
                        idle.push(w);
                        inflight.remove(&w);
                        let state = pass_accounting.get(&task).copied();
                        let too_stale = cfg
                            .max_snapshot_lag
                            .map(|d| snapshot_id.saturating_sub(snapshot) > d)
                            .unwrap_or(false);
                        if too_stale && state == Some(TaskState::Pending) && task_pass == pass && !stopping {
                            // Reschedule at the current snapshot instead of
                            // applying the stale reply.
                            logger.push(
                                Role::Worker(w),
                                Role::Master,
                                MsgKind::ReplyDuplicate,
                                snapshot,
                                Some(task),
                                task_pass,
                                attempt,
                            );
                            pending.push_back((task, attempt));
                            continue;
                        }
                        match result {
                            Ok(reply) if state == Some(TaskState::Pending) && task_pass == pass => {
                                logger.push(
                                    Role::Worker(w),
                                    Role::Master,
                                    MsgKind::RecourseReply,
                                    snapshot,
                                    Some(task),
                                    task_pass,
                                    attempt,
                                );
                                pass_accounting.insert(task, TaskState::Replied);
                                report.evaluations += 1;
                                // Stale-snapshot replies are applied as-is.
                                if coordinator.apply(task, reply, snapshot) {
                                    pending_high += 1;
                                }
                            }
                            Ok(_) => {
                                // Late duplicate after reassignment/failure.
                                logger.push(
                                    Role::Worker(w),
                                    Role::Master,
                                    MsgKind::ReplyDuplicate,
                                    snapshot,
                                    Some(task),
                                    task_pass,
                                    attempt,
                                );
                            }
                            Err(_) => {
                                if state == Some(TaskState::Pending) && task_pass == pass {
                                    let already = reassigned.entry(task).or_insert(false);
                                    if !*already {
                                        *already = true;
                                        pending.push_front((task, attempt + 1));
                                    } else {
                                        pass_accounting.insert(task, TaskState::Failed);
                                        coordinator.on_failure(task);
                                        report.failed_tasks.push((task_pass, task));
                                        logger.push(
                                            Role::Worker(w),
                                            Role::Master,
                                            MsgKind::TaskFailed,
                                            snapshot,
                                            Some(task),
                                            task_pass,
                                            attempt,
                                        );
                                    }
                                } else {
                                    logger.push(
                                        Role::Worker(w),
                                        Role::Master,
                                        MsgKind::ReplyDuplicate,
                                        snapshot,
                                        Some(task),
                                        task_pass,
                                        attempt,
                                    );
                                }
                            }
                        }
                    }
                }
            }

            // Pass completion check.
            if pass_open
                && pending.is_empty()
                && inflight.is_empty()
                && !pass_accounting.is_empty()
                && pass_accounting.values().all(|s| *s != TaskState::Pending)
            {
                pass_open = false;
            }

            // Mid-pass master re-solve on accumulated high-penalty replies,
            // while workers keep going.
            if !stopping
                && !solver_busy
                && pending_high >= cfg.max_pending_master_updates
                && !(pending.is_empty() && inflight.is_empty())
            {
                logger.push(Role::Master, Role::Solver, MsgKind::SolveStart, snapshot_id, None, pass, 0);
                solver_tx.send(ToSolver::Solve { table: coordinator.table(), pass }).expect("solver alive");
                solver_busy = true;
                pending_high = 0;
            }

            if !progressed {
                std::thread::sleep(cfg.poll_period);
            }
        }

        logger.push(Role::Master, Role::Solver, MsgKind::Finalize, snapshot_id, None, pass, 0);
        let _ = solver_tx.send(ToSolver::Stop);
        for tx in &worker_tx {
            let _ = tx.send(ToWorker::Stop);
        }
        // Drain any stragglers so worker threads can exit cleanly.
        while let Ok(_msg) = to_master_rx.recv_timeout(Duration::from_millis(50)) {}
        report.elapsed_seconds = logger.t0.elapsed().as_secs_f64();
    });

    report.log = logger.log;
    report
}

#[cfg(test)]
mod tests;
