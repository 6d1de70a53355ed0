//! SCACOPF command-line interface.
//!
//! `solve` runs the full pipeline (pre-screening, block-incremental loop on
//! the execution engine, feasibility recovery, scoring) and writes the
//! solution artifacts. `score` re-evaluates emitted solution files without
//! solving anything. `check` verifies hand-coded derivatives against finite
//! differences. `evaluate-contingency` and `recover` run single-contingency
//! studies.
//!
//! Exit codes: 0 success, 1 load/validation failure, 2 completed with
//! quality flags (partial results or fallbacks).

use anyhow::{anyhow, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use scacopf_core::decomp::{self, driver, DecompParams};
use scacopf_core::exec::{EngineConfig, EngineMode};
use scacopf_core::grid::{load_network, Network, SolutionFile};
use scacopf_core::ipm::IpmOptions;
use scacopf_core::opf::{self, PenaltyMode};
use scacopf_core::recovery::{recover_feasible, RecoveryParams};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "scacopf", version, about = "Security-constrained AC optimal power flow solver")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline and write solution, breakdown, and trace files
    Solve(RunArgs),
    /// Re-score emitted solution files (pure evaluation, no solving)
    Score {
        #[arg(long)]
        network: PathBuf,
        /// Solution file written by `solve` (base + contingency records)
        #[arg(long)]
        solution: PathBuf,
    },
    /// Check hand-coded derivatives and model invariants
    Check {
        #[arg(long)]
        network: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Random interior points per problem
        #[arg(long, default_value_t = 10)]
        points: usize,
    },
    /// Solve the relaxed subproblem of one contingency
    EvaluateContingency {
        #[command(flatten)]
        args: RunArgs,
        /// Contingency id
        id: String,
    },
    /// Run feasibility recovery for one contingency
    Recover {
        #[command(flatten)]
        args: RunArgs,
        /// Contingency id
        id: String,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Synchronous,
    Asynchronous,
}

#[derive(Args)]
struct RunArgs {
    /// Network JSON file
    #[arg(long)]
    network: PathBuf,
    /// Output directory for artifacts
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker count for contingency evaluation
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Scheduling mode
    #[arg(long, value_enum, default_value_t = Mode::Synchronous)]
    mode: Mode,
    /// Wall-clock budget; on expiry the best state so far is returned
    #[arg(long)]
    budget_seconds: Option<f64>,
    /// Complementarity relaxation constant
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Regulator crushing tolerance (artifact default)
    #[arg(long, default_value_t = 0.05)]
    epsilon_q: f64,
    /// Recourse penalty tolerance for convergence (artifact default)
    #[arg(long, default_value_t = 1e-2)]
    epsilon_r: f64,
    /// Maximum number of passes T
    #[arg(long, default_value_t = 3)]
    passes: usize,
    /// Pre-screened generator outage count (artifact default)
    #[arg(long, default_value_t = 4)]
    prescreen_gen: usize,
    /// Pre-screened branch outage count (artifact default)
    #[arg(long, default_value_t = 4)]
    prescreen_branch: usize,
    /// Seed for randomized checks
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short, action = ArgAction::Count)]
    verbose: u8,
}

impl RunArgs {
    fn params(&self) -> DecompParams {
        DecompParams {
            passes: self.passes.max(1),
            eps_r: self.epsilon_r,
            eps: self.epsilon,
            eps_q: self.epsilon_q,
            s_g: self.prescreen_gen,
            s_e: self.prescreen_branch,
            ipm: IpmOptions::default(),
        }
    }

    fn engine(&self) -> EngineConfig {
        EngineConfig {
            workers: self.workers.max(1),
            mode: match self.mode {
                Mode::Synchronous => EngineMode::Synchronous,
                Mode::Asynchronous => EngineMode::Asynchronous,
            },
            time_budget: self.budget_seconds.map(Duration::from_secs_f64),
            ..Default::default()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Command::Solve(args) => cmd_solve(&args),
        Command::Score { network, solution } => cmd_score(&network, &solution),
        Command::Check { network, seed, points } => cmd_check(&network, seed, points),
        Command::EvaluateContingency { args, id } => cmd_evaluate(&args, &id),
        Command::Recover { args, id } => cmd_recover(&args, &id),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(path: &Path) -> Result<Arc<Network>> {
    Ok(Arc::new(load_network(path).with_context(|| format!("loading {}", path.display()))?))
}

/// Surrogate table entry for the breakdown report.
#[derive(Serialize)]
struct SurrogateSnapshot {
    contingency: String,
    p_k: f64,
    latest_penalty: Option<f64>,
    pinned_zero: bool,
}

#[derive(Serialize)]
struct BreakdownFile {
    piecewise: scacopf_core::grid::ObjectiveBreakdown,
    quadratic_total: f64,
    surrogates: Vec<SurrogateSnapshot>,
    passes: usize,
    master_solves: usize,
    partial: bool,
}

fn cmd_solve(args: &RunArgs) -> Result<ExitCode> {
    let net = load(&args.network)?;
    let params = args.params();
    let (outcome, report) = driver::run_engine(net.clone(), params, &args.engine())
        .map_err(|e| anyhow!("decomposition failed: {e}"))?;
    if args.verbose > 0 {
        eprintln!(
            "decomposition: {} passes, {} master solves, {} updates, {:.2} evaluations/s",
            report.passes,
            report.master_solves,
            outcome.core.update_log.len(),
            report.evaluations_per_second()
        );
    }
    let bundle = decomp::full_report(&outcome.core, true, args.workers.max(1))
        .map_err(|e| anyhow!("reporting failed: {e}"))?;
    let solution = decomp::to_solution_file(&net, &bundle, &network_name(&args.network));

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_atomic(&args.out.join("solution.json"), solution.to_json().as_bytes())?;
    let breakdown = BreakdownFile {
        piecewise: solution.objective.clone(),
        quadratic_total: bundle.quadratic.total,
        surrogates: outcome
            .core
            .surrogates
            .iter()
            .map(|s| SurrogateSnapshot {
                contingency: net.contingencies[s.cont.0].id.clone(),
                p_k: s.p_k,
                latest_penalty: s.latest_r,
                pinned_zero: s.pinned_zero,
            })
            .collect(),
        passes: report.passes,
        master_solves: report.master_solves,
        partial: bundle.partial,
    };
    write_atomic(
        &args.out.join("breakdown.json"),
        serde_json::to_string_pretty(&breakdown)?.as_bytes(),
    )?;
    write_atomic(&args.out.join("trace.ndjson"), report.trace_ndjson().as_bytes())?;

    println!(
        "objective {:.9e} (base cost {:.9e}, base penalty {:.9e}, contingency mean {:.9e})",
        bundle.piecewise.total,
        bundle.piecewise.base_cost,
        bundle.piecewise.base_penalty,
        bundle.piecewise.total - bundle.piecewise.base_cost - bundle.piecewise.base_penalty,
    );
    println!("artifacts written to {}", args.out.display());
    Ok(if bundle.partial || report.budget_expired {
        println!("completed with flags (partial results)");
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn network_name(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "network".into())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn cmd_score(network: &Path, solution: &Path) -> Result<ExitCode> {
    let net = load(network)?;
    let text = std::fs::read_to_string(solution)
        .with_context(|| format!("reading {}", solution.display()))?;
    let file = SolutionFile::from_json(&text).map_err(|e| anyhow!("solution schema: {e}"))?;

    let base = decomp::case_record_to_point(&net, &file.base)
        .map_err(|e| anyhow!("solution schema: {e}"))?;
    let mut points = std::collections::BTreeMap::new();
    let mut diagnostics = Vec::new();
    for rec in &file.contingencies {
        let k = net
            .contingency_by_id(&rec.case)
            .ok_or_else(|| anyhow!("solution schema: unknown contingency `{}`", rec.case))?;
        let pt = decomp::case_record_to_point(&net, rec).map_err(|e| anyhow!("solution schema: {e}"))?;
        let topo = net.apply_contingency(k)?;
        diagnostics.extend(
            opf::validate_point(&net, &topo, &pt)
                .into_iter()
                .map(|d| format!("{}: {d}", rec.case)),
        );
        points.insert(k.0, pt);
    }
    diagnostics.extend(opf::validate_point(&net, &net.base_topology(), &base));

    let pw = opf::score_solution(&net, &base, &points, PenaltyMode::Piecewise);
    let qd = opf::score_solution(&net, &base, &points, PenaltyMode::Quadratic);
    println!("piecewise total {:.10e}", pw.total);
    println!("  base_cost {:.10e}", pw.base_cost);
    println!("  base_penalty {:.10e}", pw.base_penalty);
    for (idx, pen) in &pw.contingency_penalty {
        println!("  contingency[{}] {:.10e}", net.contingencies[*idx].id, pen);
    }
    println!("quadratic total {:.10e}", qd.total);
    for d in &diagnostics {
        println!("diagnostic: {d}");
    }
    if pw.partial {
        println!("partial: contingency records missing");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(network: &Path, seed: u64, points: usize) -> Result<ExitCode> {
    use rand::SeedableRng;
    use scacopf_core::nlp::{check_derivatives, random_interior_point};

    let net = load(network)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0usize;
    let tol = 1e-6;

    let mut check_problem = |name: String, problem: &scacopf_core::nlp::NlpProblem| {
        for p in 0..points {
            let x = random_interior_point(problem.space(), &mut rng);
            let report = check_derivatives(problem, &x, seed.wrapping_add(p as u64));
            let worst = report.max_rel_err();
            if worst > tol {
                failures += 1;
                for blk in report.failing(tol) {
                    println!("FAIL {name} point {p} block {} err {:.3e}", blk.name, blk.max_rel_err());
                }
            }
        }
        println!("check {name}: {points} points done");
    };

    let (mut base_problem, base_layout) = opf::build_base_problem(&net, &[])?;
    base_problem.finalize()?;
    check_problem("base".into(), &base_problem);

    // A base solve gives a realistic linearization point for the
    // contingency models.
    let start = scacopf_core::ipm::StartPoint::primal(
        base_layout.cold_start(&net, base_problem.n_vars()),
        base_problem.n_cons(),
    );
    let opts = IpmOptions {
        warm_start_mode: scacopf_core::ipm::WarmStartMode::Primal,
        ..Default::default()
    };
    let res = scacopf_core::ipm::solve(&base_problem, Some(&start), &opts)?;
    let base = base_layout.extract(&net, &res.x);

    for (i, c) in net.contingencies.iter().enumerate() {
        let k = scacopf_core::grid::ContIdx(i);
        let (mut problem, _) = opf::build_contingency_problem(&net, k, &base, 1e-4)?;
        problem.finalize()?;
        check_problem(format!("contingency[{}]", c.id), &problem);
        let canvas = opf::build_restricted_canvas(&net, k, &base, opf::CANVAS_REG_DEFAULT)?;
        let (mut problem, _) = canvas.finish()?;
        problem.finalize()?;
        check_problem(format!("canvas[{}]", c.id), &problem);
    }

    // Module invariants that are cheap to verify on the loaded network.
    let order = decomp::prescreen(&net, 4, 4);
    let mut sorted: Vec<usize> = order.iter().map(|k| k.0).collect();
    sorted.sort_unstable();
    if sorted != (0..net.contingencies.len()).collect::<Vec<_>>() {
        println!("FAIL prescreen is not a permutation");
        failures += 1;
    }
    for curve in [&net.penalty_s, &net.penalty_p, &net.penalty_q] {
        let q = opf::quad_penalty_fit(curve);
        if (q.a1 - curve.slope1).abs() > 1e-12
            || (q.a1 + 2.0 * q.a2 * curve.bin1_width - curve.slope2).abs() > 1e-9
        {
            println!("FAIL quadratic penalty fit slope identities");
            failures += 1;
        }
    }

    if failures > 0 {
        println!("{failures} check(s) failed");
        Ok(ExitCode::from(1))
    } else {
        println!("all checks passed");
        Ok(ExitCode::SUCCESS)
    }
}

fn solve_plain_base(net: &Arc<Network>) -> Result<opf::OperatingPoint> {
    let (problem, layout) = opf::build_base_problem(net, &[])?;
    let start = scacopf_core::ipm::StartPoint::primal(
        layout.cold_start(net, problem.n_vars()),
        problem.n_cons(),
    );
    let opts = IpmOptions {
        warm_start_mode: scacopf_core::ipm::WarmStartMode::Primal,
        ..Default::default()
    };
    let res = scacopf_core::ipm::solve(&problem, Some(&start), &opts)?;
    if !res.status.is_solved() {
        return Err(anyhow!("base case solve failed: {:?}", res.status));
    }
    Ok(layout.extract(net, &res.x))
}

fn cmd_evaluate(args: &RunArgs, id: &str) -> Result<ExitCode> {
    let net = load(&args.network)?;
    let k = net
        .contingency_by_id(id)
        .ok_or_else(|| anyhow!("unknown contingency id `{id}`"))?;
    let base = solve_plain_base(&net)?;
    if args.verbose > 0 {
        // Surface the solver's iteration log for this single study.
        let (problem, layout) = opf::build_contingency_problem(&net, k, &base, args.epsilon)?;
        let start = decomp::contingency_warm_start(&net, &problem, &layout, &base);
        let opts = IpmOptions {
            warm_start_mode: scacopf_core::ipm::WarmStartMode::PrimalDual,
            collect_log: true,
            ..Default::default()
        };
        let res = scacopf_core::ipm::solve(&problem, Some(&start), &opts)?;
        for line in &res.log {
            eprintln!("{line}");
        }
        let point = layout.extract(&net, &res.x);
        let penalty =
            opf::case_penalty(&net, &layout.topo, &point, PenaltyMode::Quadratic);
        println!(
            "contingency {id}: status {:?}, relaxed penalty {:.6e}, {} iterations",
            res.status, penalty, res.iterations
        );
        return Ok(if res.status.is_solved() { ExitCode::SUCCESS } else { ExitCode::from(2) });
    }
    let outcome =
        decomp::evaluate_contingency(&net, k, &base, args.epsilon, &IpmOptions::default())
            .map_err(|e| anyhow!("{e}"))?;
    println!(
        "contingency {id}: status {:?}, relaxed penalty {:.6e}, {} iterations",
        outcome.status, outcome.penalty, outcome.iterations
    );
    Ok(if outcome.status.is_solved() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_recover(args: &RunArgs, id: &str) -> Result<ExitCode> {
    let net = load(&args.network)?;
    let k = net
        .contingency_by_id(id)
        .ok_or_else(|| anyhow!("unknown contingency id `{id}`"))?;
    let base = solve_plain_base(&net)?;
    let outcome =
        decomp::evaluate_contingency(&net, k, &base, args.epsilon, &IpmOptions::default())
            .map_err(|e| anyhow!("{e}"))?;
    let params = RecoveryParams { eps_q: args.epsilon_q, ..Default::default() };
    let rec = recover_feasible(&net, k, &base, &outcome.point, &params)
        .map_err(|e| anyhow!("{e}"))?;
    println!(
        "contingency {id}: relaxed {:.6e}, recovered {:.6e} (piecewise {:.6e}), complementarity {:.2e}{}",
        outcome.penalty,
        rec.penalty_quadratic,
        rec.penalty_piecewise,
        rec.complementarity_residual,
        if rec.fallback { ", copy-base fallback" } else { "" }
    );
    Ok(if rec.fallback { ExitCode::from(2) } else { ExitCode::SUCCESS })
}
