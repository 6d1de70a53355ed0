//! Primal-dual interior-point solver for smooth NLPs.
//!
//! Monotone (Fiacco-McCormick) barrier loop: for each barrier parameter a
//! damped Newton method is applied to the perturbed KKT system, with a
//! symmetric indefinite factorization, inertia correction by primal-dual
//! diagonal regularization, a fraction-to-boundary step limit, and an Armijo
//! line search on an l1 exact-penalty merit function. The barrier parameter
//! is reduced geometrically (factor 0.2).
//!
//! Inequality constraint rows are rewritten as equalities with bounded
//! slacks. Variables whose lower and upper bounds coincide are eliminated
//! from the optimization and held at their fixed value.
//!
//! Multiplier sign convention in all public interfaces: stationarity is
//! `grad f(x) - J' lambda - z_lo + z_up = 0`, so a binding `c >= lo` row
//! carries `lambda >= 0` and a binding `c <= hi` row `lambda <= 0`.

use crate::linalg::{DenseLdlt, KktFactor, SparseLdlt, SparseSym};
use crate::nlp::{EvalError, EvalWorkspace, NlpProblem, RowBounds};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmStartMode {
    Cold,
    Primal,
    PrimalDual,
}

#[derive(Debug, Clone)]
pub struct IpmOptions {
    /// Initial barrier parameter (cold start).
    pub mu_init: f64,
    /// Barrier parameter floor; termination requires reaching it.
    pub mu_min: f64,
    /// Geometric barrier reduction factor.
    pub mu_shrink: f64,
    /// KKT residual tolerance for the optimal status.
    pub tol_kkt: f64,
    /// Looser tolerance that still earns the acceptable status.
    pub tol_acceptable: f64,
    pub max_iter: usize,
    /// Fraction-to-boundary parameter, 0 < tau < 1.
    pub fraction_to_boundary: f64,
    /// First nonzero primal regularization tried on bad inertia.
    pub reg_init: f64,
    /// Geometric growth of the regularization.
    pub reg_growth: f64,
    /// Regularization cap; exceeding it is a numerical failure.
    pub reg_max: f64,
    pub warm_start_mode: WarmStartMode,
    /// KKT systems at least this large use the sparse factorization.
    pub sparse_dim_threshold: usize,
    /// Collect per-iteration log lines into the result.
    pub collect_log: bool,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            mu_init: 0.1,
            mu_min: 1e-9,
            mu_shrink: 0.2,
            tol_kkt: 1e-8,
            tol_acceptable: 1e-6,
            max_iter: 300,
            fraction_to_boundary: 0.995,
            reg_init: 1e-8,
            reg_growth: 10.0,
            reg_max: 1e14,
            warm_start_mode: WarmStartMode::Cold,
            sparse_dim_threshold: 2000,
            collect_log: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IpmStatus {
    Optimal,
    Acceptable,
    InfeasiblePoint,
    IterationLimit,
    NumericalFailure,
}

impl IpmStatus {
    pub fn is_solved(&self) -> bool {
        matches!(self, IpmStatus::Optimal | IpmStatus::Acceptable)
    }
}

/// How starting values relate to their bounds before the first iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundPush {
    /// Keep every point at least kappa-interior (right for primal restarts
    /// into a fresh barrier, where near-bound values destabilize the first
    /// iterations).
    Clamp(f64),
    /// Move only bound-infeasible entries (right for primal-dual restarts at
    /// a small barrier parameter, where near-bound values are the solution).
    InfeasibleOnly(f64),
}

/// Primal/dual starting point in public sign convention.
#[derive(Debug, Clone)]
pub struct StartPoint {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub z_lo: Vec<f64>,
    pub z_up: Vec<f64>,
    pub mu_init: Option<f64>,
    pub push: BoundPush,
}

impl StartPoint {
    /// Primal-only start: duals at 0, bound multipliers at 1.
    pub fn primal(x: Vec<f64>, m: usize) -> StartPoint {
        let n = x.len();
        StartPoint {
            x,
            lambda: vec![0.0; m],
            z_lo: vec![1.0; n],
            z_up: vec![1.0; n],
            mu_init: None,
            push: BoundPush::Clamp(KAPPA_PUSH),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub eval_seconds: f64,
    pub factor_seconds: f64,
    pub total_seconds: f64,
    pub factorizations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub status: IpmStatus,
    /// Full variable vector, fixed variables included.
    pub x: Vec<f64>,
    /// Constraint multipliers (public convention).
    pub lambda: Vec<f64>,
    /// Bound multipliers, nonnegative; zero on absent bounds and fixed vars.
    pub z_lo: Vec<f64>,
    pub z_up: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Barrier parameter at exit.
    pub mu: f64,
    pub stats: SolveStats,
    pub log: Vec<String>,
}

#[derive(Debug, Error)]
pub enum IpmError {
    #[error("problem must be finalized before solving")]
    NotFinalized,
    #[error("warm start mode requires a start point")]
    MissingStart,
    #[error("start point dimension mismatch")]
    Dimension,
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
}

/// Componentwise KKT residuals at a candidate primal-dual point, public sign
/// convention. The reported residual of a solve equals `max_scaled`
/// recomputed by this function at the returned point.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
    /// max of the three, with stationarity and complementarity divided by
    /// the multiplier-magnitude scaling.
    pub max_scaled: f64,
}

/// Recompute KKT residuals from scratch at (x, lambda, z_lo, z_up) with
/// barrier parameter `mu` (0 for the unperturbed conditions).
pub fn kkt_residuals(
    problem: &NlpProblem,
    x: &[f64],
    lambda: &[f64],
    z_lo: &[f64],
    z_up: &[f64],
    mu: f64,
) -> Result<KktResiduals, IpmError> {
    let cache = problem.cache().ok_or(IpmError::NotFinalized)?;
    let n = problem.n_vars();
    let m = problem.n_cons();
    if x.len() != n || lambda.len() != m || z_lo.len() != n || z_up.len() != n {
        return Err(IpmError::Dimension);
    }
    let mut ws = EvalWorkspace::new(problem);
    problem.eval_values(x, &mut ws.cons)?;
    problem.eval_first_order(x, &mut ws)?;

    let lo = problem.space().lower();
    let up = problem.space().upper();
    // Fixed variables carry no stationarity condition.
    let mut stat = vec![0.0; n];
    for i in 0..n {
        if lo[i] < up[i] {
            stat[i] = ws.grad[i] - z_lo[i] + z_up[i];
        }
    }
    for (k, &v) in ws.jac_vals.iter().enumerate() {
        let col = cache.jac_cols[k];
        if lo[col] < up[col] {
            stat[col] -= lambda[cache.jac_rows[k]] * v;
        }
    }
    let stationarity = stat.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let bounds = problem.row_bounds();
    let mut feas = 0.0f64;
    let mut compl = 0.0f64;
    for (r, rb) in bounds.iter().enumerate() {
        let c = ws.cons[r];
        if rb.is_equality() {
            feas = feas.max((c - rb.lo).abs());
        } else {
            if rb.lo.is_finite() {
                feas = feas.max(rb.lo - c);
            }
            if rb.hi.is_finite() {
                feas = feas.max(c - rb.hi);
            }
            // One-sided rows: the row multiplier equals the active side's
            // slack-bound multiplier. Two-sided rows use the side selected
            // by the multiplier sign.
            let l = lambda[r];
            if l >= 0.0 && rb.lo.is_finite() {
                compl = compl.max((l * (c - rb.lo) - mu).abs());
            } else if l < 0.0 && rb.hi.is_finite() {
                compl = compl.max(((-l) * (rb.hi - c) - mu).abs());
            } else {
                compl = compl.max(l.abs());
            }
        }
    }
    for i in 0..n {
        if lo[i] >= up[i] {
            continue;
        }
        if lo[i].is_finite() {
            compl = compl.max((z_lo[i] * (x[i] - lo[i]) - mu).abs());
        }
        if up[i].is_finite() {
            compl = compl.max((z_up[i] * (up[i] - x[i]) - mu).abs());
        }
        feas = feas.max(lo[i] - x[i]).max(x[i] - up[i]);
    }

    let s_d = multiplier_scale(lambda, z_lo, z_up);
    let max_scaled = (stationarity / s_d).max(feas).max(compl / s_d);
    Ok(KktResiduals { stationarity, feasibility: feas, complementarity: compl, max_scaled })
}

/// Ipopt-style scaling: average multiplier magnitude, engaged above 100.
fn multiplier_scale(lambda: &[f64], z_lo: &[f64], z_up: &[f64]) -> f64 {
    const S_MAX: f64 = 100.0;
    let total: f64 = lambda.iter().map(|v| v.abs()).sum::<f64>()
        + z_lo.iter().map(|v| v.abs()).sum::<f64>()
        + z_up.iter().map(|v| v.abs()).sum::<f64>();
    let count = (lambda.len() + z_lo.len() + z_up.len()).max(1);
    (total / count as f64).max(S_MAX) / S_MAX
}

/// Build a start point from a previous result on a problem with an identical
/// variable space.
///
/// Primal mode copies x and resets duals to 0 and bound multipliers to 1.
/// Primal-dual mode copies everything and restarts the barrier at 1e-5.
/// Entries at or beyond a bound are pushed inside when the solve begins.
pub fn warm_start_from(base: &IpmResult, mode: WarmStartMode) -> StartPoint {
    match mode {
        WarmStartMode::Cold | WarmStartMode::Primal => {
            StartPoint::primal(base.x.clone(), base.lambda.len())
        }
        WarmStartMode::PrimalDual => StartPoint {
            x: base.x.clone(),
            lambda: base.lambda.clone(),
            z_lo: base.z_lo.iter().map(|&z| z.max(1e-8)).collect(),
            z_up: base.z_up.iter().map(|&z| z.max(1e-8)).collect(),
            mu_init: Some(1e-5),
            push: BoundPush::InfeasibleOnly(KAPPA_PUSH),
        },
    }
}

/// Push a bound-infeasible value strictly inside [lo, up] by `kappa` times
/// the bound width (or `kappa * max(1, |bound|)` for one-sided bounds).
/// Strictly interior values are left untouched.
fn one_sided_pad(bound: f64, kappa: f64) -> f64 {
    // Relative to the bound magnitude, with a kappa^2 floor so bounds near
    // zero (tiny relaxation caps) are not overshot.
    kappa * bound.abs().max(kappa)
}

pub fn push_interior(v: f64, lo: f64, up: f64, kappa: f64) -> f64 {
    if lo >= up {
        return lo;
    }
    let two_sided = lo.is_finite() && up.is_finite();
    let mut x = v;
    if lo.is_finite() && x <= lo {
        let pad = if two_sided { kappa * (up - lo) } else { one_sided_pad(lo, kappa) };
        x = lo + pad;
    }
    if up.is_finite() && x >= up {
        let pad = if two_sided { kappa * (up - lo) } else { one_sided_pad(up, kappa) };
        x = up - pad;
    }
    x
}

/// Clamp a value to be at least kappa-interior of [lo, up].
pub fn clamp_interior(v: f64, lo: f64, up: f64, kappa: f64) -> f64 {
    if lo >= up {
        return lo;
    }
    let two_sided = lo.is_finite() && up.is_finite();
    let mut x = v;
    if lo.is_finite() {
        let pad = if two_sided { kappa * (up - lo) } else { one_sided_pad(lo, kappa) };
        x = x.max(lo + pad);
    }
    if up.is_finite() {
        let pad = if two_sided { kappa * (up - lo) } else { one_sided_pad(up, kappa) };
        x = x.min(up - pad);
    }
    x
}

fn apply_push(v: f64, lo: f64, up: f64, push: BoundPush) -> f64 {
    match push {
        BoundPush::Clamp(k) => clamp_interior(v, lo, up, k),
        BoundPush::InfeasibleOnly(k) => push_interior(v, lo, up, k),
    }
}

const KAPPA_PUSH: f64 = 1e-4;
const KAPPA_EPS: f64 = 10.0; // barrier phase tolerance factor
const Z_SIGMA_CAP: f64 = 1e10; // bound-multiplier safeguard window

struct RowInfo {
    bounds: RowBounds,
    /// Index into the slack arrays, or usize::MAX for equality rows.
    slack: usize,
}

struct Iterate {
    /// Full x (fixed variables at their fixed values).
    x: Vec<f64>,
    /// Slacks of inequality rows.
    s: Vec<f64>,
    /// Internal constraint duals (y = -lambda_public).
    y: Vec<f64>,
    /// Bound multipliers of reduced variables.
    zl: Vec<f64>,
    zu: Vec<f64>,
    /// Bound multipliers of slacks.
    wl: Vec<f64>,
    wu: Vec<f64>,
}

pub fn solve(
    problem: &NlpProblem,
    start: Option<&StartPoint>,
    opts: &IpmOptions,
) -> Result<IpmResult, IpmError> {
    let t_start = Instant::now();
    let cache = problem.cache().ok_or(IpmError::NotFinalized)?;
    let n = problem.n_vars();
    let m = problem.n_cons();
    let lo_full = problem.space().lower().to_vec();
    let up_full = problem.space().upper().to_vec();

    if opts.warm_start_mode != WarmStartMode::Cold && start.is_none() {
        return Err(IpmError::MissingStart);
    }
    if let Some(sp) = start {
        if sp.x.len() != n || sp.lambda.len() != m || sp.z_lo.len() != n || sp.z_up.len() != n {
            return Err(IpmError::Dimension);
        }
    }

    // Reduced variable set: fixed variables (lo == up) are eliminated.
    let free_idx: Vec<usize> = (0..n).filter(|&i| lo_full[i] < up_full[i]).collect();
    let nr = free_idx.len();
    let mut col_of = vec![usize::MAX; n];
    for (r, &i) in free_idx.iter().enumerate() {
        col_of[i] = r;
    }
    let lo_r: Vec<f64> = free_idx.iter().map(|&i| lo_full[i]).collect();
    let up_r: Vec<f64> = free_idx.iter().map(|&i| up_full[i]).collect();

    // Constraint rows: equality or slack-backed inequality.
    let row_bounds = problem.row_bounds();
    let mut rows: Vec<RowInfo> = Vec::with_capacity(m);
    let mut n_ineq = 0usize;
    for rb in &row_bounds {
        debug_assert!(
            rb.lo.is_finite() || rb.hi.is_finite(),
            "constraint rows must have at least one finite bound"
        );
        if rb.is_equality() {
            rows.push(RowInfo { bounds: *rb, slack: usize::MAX });
        } else {
            rows.push(RowInfo { bounds: *rb, slack: n_ineq });
            n_ineq += 1;
        }
    }
    let slack_bounds: Vec<RowBounds> =
        rows.iter().filter(|r| r.slack != usize::MAX).map(|r| r.bounds).collect();

    let mut it = Iterate {
        x: match start {
            Some(sp) => sp.x.clone(),
            None => vec![0.0; n],
        },
        s: vec![0.0; n_ineq],
        y: match (opts.warm_start_mode, start) {
            (WarmStartMode::PrimalDual, Some(sp)) => sp.lambda.iter().map(|&l| -l).collect(),
            _ => vec![0.0; m],
        },
        zl: vec![1.0; nr],
        zu: vec![1.0; nr],
        wl: vec![0.0; n_ineq],
        wu: vec![0.0; n_ineq],
    };
    let push = start.map(|s| s.push).unwrap_or(BoundPush::Clamp(KAPPA_PUSH));
    for i in 0..n {
        if !it.x[i].is_finite() {
            it.x[i] = 0.0;
        }
        it.x[i] = apply_push(it.x[i], lo_full[i], up_full[i], push);
    }
    if let (WarmStartMode::PrimalDual, Some(sp)) = (opts.warm_start_mode, start) {
        for (r, &i) in free_idx.iter().enumerate() {
            it.zl[r] = sp.z_lo[i].max(1e-8);
            it.zu[r] = sp.z_up[i].max(1e-8);
        }
    }
    for r in 0..nr {
        if !lo_r[r].is_finite() {
            it.zl[r] = 0.0;
        }
        if !up_r[r].is_finite() {
            it.zu[r] = 0.0;
        }
    }

    let mut mu = start.and_then(|s| s.mu_init).unwrap_or(opts.mu_init);

    let mut ws = EvalWorkspace::new(problem);
    let mut ws_trial = EvalWorkspace::new(problem);
    let mut stats = SolveStats::default();
    let mut log = Vec::new();

    // Initial residual evaluation to place slacks.
    let te = Instant::now();
    let mut f_cur = problem.eval_values(&it.x, &mut ws.cons).map_err(IpmError::Eval)?;
    stats.eval_seconds += te.elapsed().as_secs_f64();
    stats.evaluations += 1;
    let warm_dual = opts.warm_start_mode == WarmStartMode::PrimalDual;
    for (r, info) in rows.iter().enumerate() {
        if info.slack == usize::MAX {
            continue;
        }
        let k = info.slack;
        let rb = info.bounds;
        it.s[k] = apply_push(ws.cons[r], rb.lo, rb.hi, push);
        // At a solution the slack-bound multipliers satisfy wl - wu = lambda,
        // so a primal-dual restart reconstructs them from the row duals.
        let lam = -it.y[r];
        it.wl[k] = match (rb.lo.is_finite(), warm_dual) {
            (false, _) => 0.0,
            (true, true) => lam.max(1e-8),
            (true, false) => 1.0,
        };
        it.wu[k] = match (rb.hi.is_finite(), warm_dual) {
            (false, _) => 0.0,
            (true, true) => (-lam).max(1e-8),
            (true, false) => 1.0,
        };
    }

    // KKT sparsity maps into the reduced space.
    let nk = nr + m;
    let use_sparse = nk >= opts.sparse_dim_threshold;
    let mut hess_map: Vec<(usize, usize, usize)> = Vec::new(); // (slot, i_red, j_red)
    for (k, (&i, &j)) in cache.hess_rows.iter().zip(&cache.hess_cols).enumerate() {
        let (ri, rj) = (col_of[i], col_of[j]);
        if ri != usize::MAX && rj != usize::MAX {
            hess_map.push((k, ri, rj));
        }
    }
    let mut jac_map: Vec<(usize, usize, usize)> = Vec::new(); // (slot, row, col_red)
    for (k, (&r, &c)) in cache.jac_rows.iter().zip(&cache.jac_cols).enumerate() {
        let rc = col_of[c];
        if rc != usize::MAX {
            jac_map.push((k, r, rc));
        }
    }
    let mut sparse_perm: Option<Vec<usize>> = None;

    let mut nu = 10.0f64; // merit penalty parameter
    let mut last_alpha = 0.0f64;
    let mut delta_w_last = 0.0f64;
    let mut force_reg = false;
    let mut consecutive_ls_failures = 0usize;
    let mut status = IpmStatus::IterationLimit;
    let mut iterations = 0usize;

    'outer: for iter in 0..opts.max_iter {
        iterations = iter + 1;
        let te = Instant::now();
        let eval = problem.eval_all(&it.x, &it.y, 1.0, &mut ws);
        stats.eval_seconds += te.elapsed().as_secs_f64();
        stats.evaluations += 1;
        if let Err(e) = eval {
            log.push(format!("iter {iter:3} evaluation error: {e}"));
            status = IpmStatus::NumericalFailure;
            break;
        }
        f_cur = ws.f;

        // Residuals (internal convention: grad + J'y).
        let mut rd = vec![0.0; nr];
        for (r, &i) in free_idx.iter().enumerate() {
            rd[r] = ws.grad[i] - it.zl[r] + it.zu[r];
        }
        for &(k, row, col) in &jac_map {
            rd[col] += it.y[row] * ws.jac_vals[k];
        }
        let mut rp = vec![0.0; m];
        for (r, info) in rows.iter().enumerate() {
            rp[r] = if info.slack == usize::MAX {
                ws.cons[r] - info.bounds.lo
            } else {
                ws.cons[r] - it.s[info.slack]
            };
        }
        let mut rs = vec![0.0; n_ineq];
        for (r, info) in rows.iter().enumerate() {
            if info.slack != usize::MAX {
                rs[info.slack] = -it.y[r] - it.wl[info.slack] + it.wu[info.slack];
            }
        }

        let compl_inf = |mu_val: f64| -> f64 {
            let mut c = 0.0f64;
            for r in 0..nr {
                let xi = it.x[free_idx[r]];
                if lo_r[r].is_finite() {
                    c = c.max((it.zl[r] * (xi - lo_r[r]) - mu_val).abs());
                }
                if up_r[r].is_finite() {
                    c = c.max((it.zu[r] * (up_r[r] - xi) - mu_val).abs());
                }
            }
            for k in 0..n_ineq {
                let rb = slack_bounds[k];
                if rb.lo.is_finite() {
                    c = c.max((it.wl[k] * (it.s[k] - rb.lo) - mu_val).abs());
                }
                if rb.hi.is_finite() {
                    c = c.max((it.wu[k] * (rb.hi - it.s[k]) - mu_val).abs());
                }
            }
            c
        };
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let s_d = {
            let total: f64 = it.y.iter().map(|v| v.abs()).sum::<f64>()
                + it.zl.iter().map(|v| v.abs()).sum::<f64>()
                + it.zu.iter().map(|v| v.abs()).sum::<f64>()
                + it.wl.iter().map(|v| v.abs()).sum::<f64>()
                + it.wu.iter().map(|v| v.abs()).sum::<f64>();
            let count = (m + 2 * nr + 2 * n_ineq).max(1);
            (total / count as f64).max(100.0) / 100.0
        };
        let dual_inf = inf(&rd).max(inf(&rs));
        let prim_inf = inf(&rp);
        let e_0 = (dual_inf / s_d).max(prim_inf).max(compl_inf(0.0) / s_d);

        if opts.collect_log {
            log.push(format!(
                "iter {iter:3} mu {mu:9.2e} f {f_cur:+.8e} pinf {prim_inf:9.2e} dinf {dual_inf:9.2e} compl {:9.2e} reg {delta_w_last:8.1e} alpha {last_alpha:8.1e}",
                compl_inf(0.0)
            ));
        }

        if e_0 <= opts.tol_kkt && mu <= opts.mu_min.max(opts.tol_kkt) {
            status = IpmStatus::Optimal;
            break;
        }
        // Barrier phase complete: shrink mu (possibly several times).
        while mu > opts.mu_min
            && (dual_inf / s_d).max(prim_inf).max(compl_inf(mu) / s_d) <= KAPPA_EPS * mu
        {
            mu = (mu * opts.mu_shrink).max(opts.mu_min);
        }

        // Primal-dual barrier diagonals.
        let mut sigma_x = vec![0.0; nr];
        for r in 0..nr {
            let xi = it.x[free_idx[r]];
            if lo_r[r].is_finite() {
                sigma_x[r] += it.zl[r] / (xi - lo_r[r]);
            }
            if up_r[r].is_finite() {
                sigma_x[r] += it.zu[r] / (up_r[r] - xi);
            }
        }
        let mut sigma_s = vec![0.0; n_ineq];
        for k in 0..n_ineq {
            let rb = slack_bounds[k];
            if rb.lo.is_finite() {
                sigma_s[k] += it.wl[k] / (it.s[k] - rb.lo);
            }
            if rb.hi.is_finite() {
                sigma_s[k] += it.wu[k] / (rb.hi - it.s[k]);
            }
        }

        // Factor with inertia correction.
        let mut delta_w = 0.0f64;
        let mut delta_c = 0.0f64;
        if force_reg {
            // A failed line search usually means the step came from a
            // near-singular system the pivot signs did not expose.
            force_reg = false;
            delta_w = delta_w_last.max(opts.reg_init);
            delta_c = 1e-8;
        }
        let factor = loop {
            let tf = Instant::now();
            let attempt = assemble_and_factor(
                nk, nr, use_sparse, &mut sparse_perm, &hess_map, &jac_map, &ws, &sigma_x,
                &sigma_s, &rows, delta_w, delta_c,
            );
            stats.factor_seconds += tf.elapsed().as_secs_f64();
            stats.factorizations += 1;
            let retry = match attempt {
                Ok(f) => {
                    let inertia = f.inertia();
                    if inertia.is_kkt_correct(nr, m) {
                        if delta_w > 0.0 {
                            delta_w_last = delta_w;
                        }
                        break f;
                    }
                    inertia.zero > 0
                }
                Err(_) => true,
            };
            if retry {
                delta_c = (delta_c.max(1e-10) * 10.0).min(1e-4);
            }
            delta_w = if delta_w == 0.0 {
                opts.reg_init.max(delta_w_last / 3.0)
            } else {
                delta_w * opts.reg_growth
            };
            if delta_w > opts.reg_max {
                status = IpmStatus::NumericalFailure;
                log.push(format!("iter {iter:3} inertia correction exceeded regularization cap"));
                break 'outer;
            }
        };

        // Right-hand side of the condensed system.
        let mut rhs = vec![0.0; nk];
        for r in 0..nr {
            let i = free_idx[r];
            let xi = it.x[i];
            let mut v = -ws.grad[i];
            if lo_r[r].is_finite() {
                v += mu / (xi - lo_r[r]);
            }
            if up_r[r].is_finite() {
                v -= mu / (up_r[r] - xi);
            }
            rhs[r] = v;
        }
        for &(k, row, col) in &jac_map {
            rhs[col] -= it.y[row] * ws.jac_vals[k];
        }
        let mut rhs_s = vec![0.0; n_ineq];
        for (r, info) in rows.iter().enumerate() {
            if info.slack == usize::MAX {
                rhs[nr + r] = -rp[r];
            } else {
                let k = info.slack;
                let rb = slack_bounds[k];
                let mut v = it.y[r];
                if rb.lo.is_finite() {
                    v += mu / (it.s[k] - rb.lo);
                }
                if rb.hi.is_finite() {
                    v -= mu / (rb.hi - it.s[k]);
                }
                rhs_s[k] = v;
                rhs[nr + r] = -rp[r] + v / (sigma_s[k] + delta_w);
            }
        }

        let mut sol = rhs;
        factor.solve(&mut sol);
        let (dx, dy) = sol.split_at(nr);

        let mut ds = vec![0.0; n_ineq];
        for (r, info) in rows.iter().enumerate() {
            if info.slack != usize::MAX {
                let k = info.slack;
                ds[k] = (rhs_s[k] + dy[r]) / (sigma_s[k] + delta_w);
            }
        }

        let mut dzl = vec![0.0; nr];
        let mut dzu = vec![0.0; nr];
        for r in 0..nr {
            let xi = it.x[free_idx[r]];
            if lo_r[r].is_finite() {
                let d = xi - lo_r[r];
                dzl[r] = mu / d - it.zl[r] - it.zl[r] * dx[r] / d;
            }
            if up_r[r].is_finite() {
                let d = up_r[r] - xi;
                dzu[r] = mu / d - it.zu[r] + it.zu[r] * dx[r] / d;
            }
        }
        let mut dwl = vec![0.0; n_ineq];
        let mut dwu = vec![0.0; n_ineq];
        for k in 0..n_ineq {
            let rb = slack_bounds[k];
            if rb.lo.is_finite() {
                let d = it.s[k] - rb.lo;
                dwl[k] = mu / d - it.wl[k] - it.wl[k] * ds[k] / d;
            }
            if rb.hi.is_finite() {
                let d = rb.hi - it.s[k];
                dwu[k] = mu / d - it.wu[k] + it.wu[k] * ds[k] / d;
            }
        }

        // Fraction-to-boundary limits.
        let tau = opts.fraction_to_boundary;
        let mut alpha_pri = 1.0f64;
        let mut limiter: Option<usize> = None;
        for r in 0..nr {
            let xi = it.x[free_idx[r]];
            if lo_r[r].is_finite() && dx[r] < 0.0 {
                let a = -tau * (xi - lo_r[r]) / dx[r];
                if a < alpha_pri {
                    alpha_pri = a;
                    limiter = Some(free_idx[r]);
                }
            }
            if up_r[r].is_finite() && dx[r] > 0.0 {
                let a = tau * (up_r[r] - xi) / dx[r];
                if a < alpha_pri {
                    alpha_pri = a;
                    limiter = Some(free_idx[r]);
                }
            }
        }
        if opts.collect_log && alpha_pri < 0.1 {
            if let Some(i) = limiter {
                log.push(format!(
                    "        ftb limiter {} x {:.3e} bounds [{:.3e}, {:.3e}] dx {:.3e}",
                    problem.space().name(crate::nlp::VarId(i)),
                    it.x[i],
                    lo_full[i],
                    up_full[i],
                    dx[col_of[i]]
                ));
            }
        }
        let mut slack_limiter: Option<usize> = None;
        for k in 0..n_ineq {
            let rb = slack_bounds[k];
            if rb.lo.is_finite() && ds[k] < 0.0 {
                let a = -tau * (it.s[k] - rb.lo) / ds[k];
                if a < alpha_pri {
                    alpha_pri = a;
                    slack_limiter = Some(k);
                }
            }
            if rb.hi.is_finite() && ds[k] > 0.0 {
                let a = tau * (rb.hi - it.s[k]) / ds[k];
                if a < alpha_pri {
                    alpha_pri = a;
                    slack_limiter = Some(k);
                }
            }
        }
        if opts.collect_log && alpha_pri < 0.1 {
            if let Some(k) = slack_limiter {
                let row = rows.iter().position(|r| r.slack == k).unwrap();
                log.push(format!(
                    "        ftb slack limiter row {row} s {:.3e} bounds [{:.3e}, {:.3e}] ds {:.3e}",
                    it.s[k], slack_bounds[k].lo, slack_bounds[k].hi, ds[k]
                ));
            }
        }
        let mut alpha_dual = 1.0f64;
        for r in 0..nr {
            if it.zl[r] > 0.0 && dzl[r] < 0.0 {
                alpha_dual = alpha_dual.min(-tau * it.zl[r] / dzl[r]);
            }
            if it.zu[r] > 0.0 && dzu[r] < 0.0 {
                alpha_dual = alpha_dual.min(-tau * it.zu[r] / dzu[r]);
            }
        }
        for k in 0..n_ineq {
            if it.wl[k] > 0.0 && dwl[k] < 0.0 {
                alpha_dual = alpha_dual.min(-tau * it.wl[k] / dwl[k]);
            }
            if it.wu[k] > 0.0 && dwu[k] < 0.0 {
                alpha_dual = alpha_dual.min(-tau * it.wu[k] / dwu[k]);
            }
        }

        // Armijo line search on the l1 exact-penalty merit function.
        let y_pred_inf =
            it.y.iter().zip(dy.iter()).map(|(a, b)| (a + b).abs()).fold(0.0f64, f64::max);
        nu = nu.max(1.1 * y_pred_inf + 0.1);

        let barrier_terms = |x: &[f64], s: &[f64]| -> f64 {
            let mut b = 0.0;
            for r in 0..nr {
                let xi = x[free_idx[r]];
                if lo_r[r].is_finite() {
                    b -= mu * (xi - lo_r[r]).ln();
                }
                if up_r[r].is_finite() {
                    b -= mu * (up_r[r] - xi).ln();
                }
            }
            for k in 0..n_ineq {
                let rb = slack_bounds[k];
                if rb.lo.is_finite() {
                    b -= mu * (s[k] - rb.lo).ln();
                }
                if rb.hi.is_finite() {
                    b -= mu * (rb.hi - s[k]).ln();
                }
            }
            b
        };
        let viol_l1 = |cons: &[f64], s: &[f64]| -> f64 {
            rows.iter()
                .enumerate()
                .map(|(r, info)| {
                    if info.slack == usize::MAX {
                        (cons[r] - info.bounds.lo).abs()
                    } else {
                        (cons[r] - s[info.slack]).abs()
                    }
                })
                .sum()
        };

        let viol0 = viol_l1(&ws.cons, &it.s);
        let phi0 = f_cur + barrier_terms(&it.x, &it.s) + nu * viol0;
        let mut dphi = -nu * viol0;
        for r in 0..nr {
            let i = free_idx[r];
            let xi = it.x[i];
            let mut g = ws.grad[i];
            if lo_r[r].is_finite() {
                g -= mu / (xi - lo_r[r]);
            }
            if up_r[r].is_finite() {
                g += mu / (up_r[r] - xi);
            }
            dphi += g * dx[r];
        }
        for k in 0..n_ineq {
            let rb = slack_bounds[k];
            let mut g = 0.0;
            if rb.lo.is_finite() {
                g -= mu / (it.s[k] - rb.lo);
            }
            if rb.hi.is_finite() {
                g += mu / (rb.hi - it.s[k]);
            }
            dphi += g * ds[k];
        }

        let mut alpha = alpha_pri;
        let mut accepted = false;
        let mut x_try = it.x.clone();
        let mut s_try = it.s.clone();
        let mut cons_try = ws.cons.clone();

        // Full-step acceptance on KKT-error decrease: a Newton step that
        // reduces the primal-dual residual is taken even when the primal
        // merit cannot see the progress (pure dual corrections near a
        // solution stall otherwise).
        let theta0 = dual_inf.max(prim_inf).max(compl_inf(mu));
        {
            for (r, &i) in free_idx.iter().enumerate() {
                x_try[i] = it.x[i] + alpha * dx[r];
            }
            for k in 0..n_ineq {
                s_try[k] = it.s[k] + alpha * ds[k];
            }
            let te = Instant::now();
            let trial_eval = problem
                .eval_values(&x_try, &mut ws_trial.cons)
                .and_then(|_| problem.eval_first_order(&x_try, &mut ws_trial));
            stats.eval_seconds += te.elapsed().as_secs_f64();
            stats.evaluations += 1;
            if trial_eval.is_ok() {
                let mut theta = 0.0f64;
                let mut rd_t = vec![0.0; nr];
                for (r, &i) in free_idx.iter().enumerate() {
                    rd_t[r] = ws_trial.grad[i]
                        - (it.zl[r] + alpha_dual * dzl[r])
                        + (it.zu[r] + alpha_dual * dzu[r]);
                }
                for &(k, row, col) in &jac_map {
                    rd_t[col] += (it.y[row] + alpha * dy[row]) * ws_trial.jac_vals[k];
                }
                theta = rd_t.iter().fold(theta, |a, v| a.max(v.abs()));
                for (r, info) in rows.iter().enumerate() {
                    let y_t = it.y[r] + alpha * dy[r];
                    if info.slack == usize::MAX {
                        theta = theta.max((ws_trial.cons[r] - info.bounds.lo).abs());
                    } else {
                        let k = info.slack;
                        let (wl_t, wu_t) =
                            (it.wl[k] + alpha_dual * dwl[k], it.wu[k] + alpha_dual * dwu[k]);
                        theta = theta.max((ws_trial.cons[r] - s_try[k]).abs());
                        theta = theta.max((-y_t - wl_t + wu_t).abs());
                        let rb = slack_bounds[k];
                        if rb.lo.is_finite() {
                            theta = theta.max((wl_t * (s_try[k] - rb.lo) - mu).abs());
                        }
                        if rb.hi.is_finite() {
                            theta = theta.max((wu_t * (rb.hi - s_try[k]) - mu).abs());
                        }
                    }
                }
                for r in 0..nr {
                    let xi = x_try[free_idx[r]];
                    if lo_r[r].is_finite() {
                        theta = theta
                            .max(((it.zl[r] + alpha_dual * dzl[r]) * (xi - lo_r[r]) - mu).abs());
                    }
                    if up_r[r].is_finite() {
                        theta = theta
                            .max(((it.zu[r] + alpha_dual * dzu[r]) * (up_r[r] - xi) - mu).abs());
                    }
                }
                if theta <= 0.999 * theta0 {
                    accepted = true;
                }
            }
        }

        for _ in 0..45 {
            if accepted {
                break;
            }
            for (r, &i) in free_idx.iter().enumerate() {
                x_try[i] = it.x[i] + alpha * dx[r];
            }
            for k in 0..n_ineq {
                s_try[k] = it.s[k] + alpha * ds[k];
            }
            let te = Instant::now();
            let f_try = problem.eval_values(&x_try, &mut cons_try);
            stats.eval_seconds += te.elapsed().as_secs_f64();
            stats.evaluations += 1;
            if let Ok(f_try) = f_try {
                let phi = f_try + barrier_terms(&x_try, &s_try) + nu * viol_l1(&cons_try, &s_try);
                // The noise floor keeps the test meaningful when the
                // predicted decrease falls below the merit's resolution.
                let noise = 1e-13 * phi0.abs().max(1.0);
                if phi.is_finite() && phi <= phi0 + 1e-4 * alpha * dphi + noise {
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                break;
            }
        }
        if !accepted {
            consecutive_ls_failures += 1;
            if consecutive_ls_failures >= 3 {
                status = IpmStatus::NumericalFailure;
                log.push(format!("iter {iter:3} line search failed"));
                break;
            }
            force_reg = true;
            delta_w_last = (delta_w_last.max(opts.reg_init) * opts.reg_growth).min(opts.reg_max);
            alpha = alpha.max(1e-12);
        } else {
            consecutive_ls_failures = 0;
        }

        last_alpha = alpha;
        for (r, &i) in free_idx.iter().enumerate() {
            it.x[i] += alpha * dx[r];
        }
        for k in 0..n_ineq {
            it.s[k] += alpha * ds[k];
        }
        for (r, v) in it.y.iter_mut().enumerate() {
            *v += alpha * dy[r];
        }
        for r in 0..nr {
            it.zl[r] += alpha_dual * dzl[r];
            it.zu[r] += alpha_dual * dzu[r];
        }
        for k in 0..n_ineq {
            it.wl[k] += alpha_dual * dwl[k];
            it.wu[k] += alpha_dual * dwu[k];
        }

        // Safeguard multipliers to mu-consistent magnitudes.
        for r in 0..nr {
            let xi = it.x[free_idx[r]];
            if lo_r[r].is_finite() {
                let d = xi - lo_r[r];
                it.zl[r] = it.zl[r].clamp(mu / (Z_SIGMA_CAP * d), Z_SIGMA_CAP * mu.max(1e-12) / d);
            }
            if up_r[r].is_finite() {
                let d = up_r[r] - xi;
                it.zu[r] = it.zu[r].clamp(mu / (Z_SIGMA_CAP * d), Z_SIGMA_CAP * mu.max(1e-12) / d);
            }
        }
        for k in 0..n_ineq {
            let rb = slack_bounds[k];
            if rb.lo.is_finite() {
                let d = it.s[k] - rb.lo;
                it.wl[k] = it.wl[k].clamp(mu / (Z_SIGMA_CAP * d), Z_SIGMA_CAP * mu.max(1e-12) / d);
            }
            if rb.hi.is_finite() {
                let d = rb.hi - it.s[k];
                it.wu[k] = it.wu[k].clamp(mu / (Z_SIGMA_CAP * d), Z_SIGMA_CAP * mu.max(1e-12) / d);
            }
        }
    }

    // Public-convention multipliers over the full variable set.
    let lambda: Vec<f64> = it.y.iter().map(|&v| -v).collect();
    let mut z_lo_full = vec![0.0; n];
    let mut z_up_full = vec![0.0; n];
    for (r, &i) in free_idx.iter().enumerate() {
        z_lo_full[i] = it.zl[r];
        z_up_full[i] = it.zu[r];
    }

    let kkt = kkt_residuals(problem, &it.x, &lambda, &z_lo_full, &z_up_full, 0.0)?;
    let kkt_residual = kkt.max_scaled;
    if status == IpmStatus::Optimal && kkt_residual > opts.tol_kkt {
        // The reported residual is the independent recomputation; degrade
        // the status honestly if it disagrees with the internal measure.
        status = if kkt_residual <= opts.tol_acceptable {
            IpmStatus::Acceptable
        } else {
            IpmStatus::IterationLimit
        };
    }
    if status == IpmStatus::IterationLimit {
        if kkt.feasibility > 1e-6 {
            status = IpmStatus::InfeasiblePoint;
        } else if kkt_residual <= opts.tol_acceptable {
            status = IpmStatus::Acceptable;
        }
    }

    stats.total_seconds = t_start.elapsed().as_secs_f64();
    Ok(IpmResult {
        status,
        x: it.x,
        lambda,
        z_lo: z_lo_full,
        z_up: z_up_full,
        objective: f_cur,
        kkt_residual,
        iterations,
        mu,
        stats,
        log,
    })
}

#[allow(clippy::too_many_arguments)]
fn assemble_and_factor(
    nk: usize,
    nr: usize,
    use_sparse: bool,
    sparse_perm: &mut Option<Vec<usize>>,
    hess_map: &[(usize, usize, usize)],
    jac_map: &[(usize, usize, usize)],
    ws: &EvalWorkspace,
    sigma_x: &[f64],
    sigma_s: &[f64],
    rows: &[RowInfo],
    delta_w: f64,
    delta_c: f64,
) -> Result<KktFactor, crate::linalg::LinalgError> {
    if !use_sparse {
        let mut a = vec![0.0f64; nk * nk];
        let idx = |i: usize, j: usize| i * nk + j;
        for &(slot, ri, rj) in hess_map {
            // Reduction preserves index order, so ri >= rj stays lower.
            a[idx(ri, rj)] += ws.hess_vals[slot];
        }
        for r in 0..nr {
            a[idx(r, r)] += sigma_x[r] + delta_w;
        }
        for &(slot, row, col) in jac_map {
            a[idx(nr + row, col)] += ws.jac_vals[slot];
        }
        for (r, info) in rows.iter().enumerate() {
            let d = if info.slack == usize::MAX {
                delta_c
            } else {
                1.0 / (sigma_s[info.slack] + delta_w) + delta_c
            };
            a[idx(nr + r, nr + r)] = -d;
        }
        DenseLdlt::factor(a, nk).map(KktFactor::Dense)
    } else {
        let mut triplets: Vec<(usize, usize, f64)> =
            Vec::with_capacity(hess_map.len() + jac_map.len() + nk);
        for &(slot, ri, rj) in hess_map {
            triplets.push((ri, rj, ws.hess_vals[slot]));
        }
        for r in 0..nr {
            triplets.push((r, r, sigma_x[r] + delta_w));
        }
        for &(slot, row, col) in jac_map {
            triplets.push((nr + row, col, ws.jac_vals[slot]));
        }
        for (r, info) in rows.iter().enumerate() {
            let d = if info.slack == usize::MAX {
                delta_c
            } else {
                1.0 / (sigma_s[info.slack] + delta_w) + delta_c
            };
            triplets.push((nr + r, nr + r, -d));
        }
        let sym = SparseSym::from_triplets(nk, triplets.into_iter());
        if sparse_perm.is_none() {
            *sparse_perm = Some(crate::linalg::rcm_order(&sym));
        }
        SparseLdlt::factor_with_order(&sym, sparse_perm.clone().unwrap()).map(KktFactor::Sparse)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::{
        ConstraintBlock, GradWriter, ObjectiveBlock, SlotWriter, VarId, VariableSpace,
    };

    /// Objective 0.5 * sum w_i (x_i - c_i)^2.
    struct Quad {
        vars: Vec<VarId>,
        center: Vec<f64>,
        weight: Vec<f64>,
    }

    impl ObjectiveBlock for Quad {
        fn name(&self) -> &str {
            "quad"
        }
        fn hessian_pattern(&self) -> Vec<(VarId, VarId)> {
            self.vars.iter().map(|&v| (v, v)).collect()
        }
        fn value(&self, x: &[f64]) -> f64 {
            self.vars
                .iter()
                .enumerate()
                .map(|(k, v)| 0.5 * self.weight[k] * (x[v.0] - self.center[k]).powi(2))
                .sum()
        }
        fn gradient(&self, x: &[f64], out: &mut GradWriter) {
            for (k, &v) in self.vars.iter().enumerate() {
                out.add(v, self.weight[k] * (x[v.0] - self.center[k]));
            }
        }
        fn hessian(&self, _x: &[f64], out: &mut SlotWriter) {
            for (k, _) in self.vars.iter().enumerate() {
                out.add(k, self.weight[k]);
            }
        }
    }

    /// Linear constraint rows.
    struct Linear {
        terms: Vec<Vec<(VarId, f64)>>,
        bounds: Vec<RowBounds>,
    }

    impl ConstraintBlock for Linear {
        fn name(&self) -> &str {
            "linear"
        }
        fn rows(&self) -> usize {
            self.terms.len()
        }
        fn bounds(&self) -> Vec<RowBounds> {
            self.bounds.clone()
        }
        fn jacobian_pattern(&self) -> Vec<(usize, VarId)> {
            self.terms
                .iter()
                .enumerate()
                .flat_map(|(r, t)| t.iter().map(move |&(v, _)| (r, v)))
                .collect()
        }
        fn hessian_pattern(&self) -> Vec<(VarId, VarId)> {
            vec![]
        }
        fn residual(&self, x: &[f64], out: &mut [f64]) {
            for (r, t) in self.terms.iter().enumerate() {
                out[r] = t.iter().map(|&(v, c)| c * x[v.0]).sum();
            }
        }
        fn jacobian(&self, _x: &[f64], out: &mut SlotWriter) {
            let mut e = 0;
            for t in &self.terms {
                for &(_, c) in t {
                    out.add(e, c);
                    e += 1;
                }
            }
        }
        fn hessian(&self, _x: &[f64], _l: &[f64], _out: &mut SlotWriter) {}
    }

    #[test]
    fn bound_constrained_quadratic() {
        // min x^2 s.t. x >= 1 (as a variable bound): x* = 1, z_lo = 2.
        let mut space = VariableSpace::new();
        let x = space.add("x", 1.0, f64::INFINITY).unwrap();
        let mut p = NlpProblem::new(space);
        p.add_objective(Box::new(Quad { vars: vec![x], center: vec![0.0], weight: vec![2.0] }));
        p.finalize().unwrap();
        let r = solve(&p, None, &IpmOptions::default()).unwrap();
        assert_eq!(r.status, IpmStatus::Optimal);
        assert!((r.x[0] - 1.0).abs() < 1e-7, "x = {}", r.x[0]);
        // Iterates stay strictly interior, the solution included.
        assert!(r.x[0] > 1.0);
        assert!((r.z_lo[0] - 2.0).abs() < 1e-5, "z_lo = {}", r.z_lo[0]);
        assert!(r.kkt_residual <= 1e-8);
    }

    #[test]
    fn inequality_constraint_multiplier_sign() {
        // min x^2 s.t. x >= 1 (as a constraint row): lambda = 2.
        let mut space = VariableSpace::new();
        let x = space.add("x", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let mut p = NlpProblem::new(space);
        p.add_objective(Box::new(Quad { vars: vec![x], center: vec![0.0], weight: vec![2.0] }));
        p.add_constraint(Box::new(Linear {
            terms: vec![vec![(x, 1.0)]],
            bounds: vec![RowBounds::ge(1.0)],
        }));
        p.finalize().unwrap();
        let r = solve(&p, None, &IpmOptions::default()).unwrap();
        assert_eq!(r.status, IpmStatus::Optimal);
        assert!((r.x[0] - 1.0).abs() < 1e-7);
        assert!((r.lambda[0] - 2.0).abs() < 1e-5, "lambda = {}", r.lambda[0]);
    }

    #[test]
    fn equality_constrained_quadratic() {
        // min (x-2)^2 + (y+1)^2 s.t. x + y = 1; solution x = 2.5? No:
        // grad: 2(x-2) = lam, 2(y+1) = lam, x + y = 1 -> x - 2 = y + 1,
        // x = y + 3 -> 2y + 3 = 1 -> y = -1, x = 2. Constraint inactive at
        // the unconstrained optimum which already satisfies it.
        let mut space = VariableSpace::new();
        let x = space.add("x", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let y = space.add("y", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let mut p = NlpProblem::new(space);
        p.add_objective(Box::new(Quad {
            vars: vec![x, y],
            center: vec![2.0, -1.0],
            weight: vec![2.0, 2.0],
        }));
        p.add_constraint(Box::new(Linear {
            terms: vec![vec![(x, 1.0), (y, 1.0)]],
            bounds: vec![RowBounds::eq(1.0)],
        }));
        p.finalize().unwrap();
        let r = solve(&p, None, &IpmOptions::default()).unwrap();
        assert_eq!(r.status, IpmStatus::Optimal);
        assert!((r.x[0] - 2.0).abs() < 1e-7);
        assert!((r.x[1] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn fixed_variables_are_held_and_eliminated() {
        let mut space = VariableSpace::new();
        let x = space.add("x", f64::NEG_INFINITY, f64::INFINITY).unwrap();
        let y = space.add("y", 0.7, 0.7).unwrap();
        let mut p = NlpProblem::new(space);
        p.add_objective(Box::new(Quad {
            vars: vec![x, y],
            center: vec![3.0, 0.0],
            weight: vec![1.0, 1.0],
        }));
        p.add_constraint(Box::new(Linear {
            terms: vec![vec![(x, 1.0), (y, 1.0)]],
            bounds: vec![RowBounds::ge(0.0)],
        }));
        p.finalize().unwrap();
        let r = solve(&p, None, &IpmOptions::default()).unwrap();
        assert_eq!(r.status, IpmStatus::Optimal);
        assert_eq!(r.x[1], 0.7);
        assert!((r.x[0] - 3.0).abs() < 1e-7);
    }

    #[test]
    fn warm_start_of_optimal_point_converges_quickly() {
        let mut space = VariableSpace::new();
        let x = space.add("x", 1.0, f64::INFINITY).unwrap();
        let y = space.add("y", f64::NEG_INFINITY, 5.0).unwrap();
        let mut p = NlpProblem::new(space);
        p.add_objective(Box::new(Quad {
            vars: vec![x, y],
            center: vec![0.0, 2.0],
            weight: vec![2.0, 1.0],
        }));
        p.add_constraint(Box::new(Linear {
            terms: vec![vec![(x, 1.0), (y, 1.0)]],
            bounds: vec![RowBounds::ge(2.5)],
        }));
        p.finalize().unwrap();
        let cold = solve(&p, None, &IpmOptions::default()).unwrap();
        assert_eq!(cold.status, IpmStatus::Optimal);

        let start = warm_start_from(&cold, WarmStartMode::PrimalDual);
        let opts = IpmOptions { warm_start_mode: WarmStartMode::PrimalDual, ..Default::default() };
        let warm = solve(&p, Some(&start), &opts).unwrap();
        assert_eq!(warm.status, IpmStatus::Optimal);
        assert!(
            warm.iterations <= 5,
            "warm start took {} iterations (cold {})",
            warm.iterations,
            cold.iterations
        );
        assert!(warm.iterations < cold.iterations);
    }

    #[test]
    fn sparse_and_dense_backends_agree() {
        let mut space = VariableSpace::new();
        let vars: Vec<VarId> =
            (0..6).map(|i| space.add(format!("x{i}"), -10.0, 10.0).unwrap()).collect();
        let mut p = NlpProblem::new(space);
        p.add_objective(Box::new(Quad {
            vars: vars.clone(),
            center: (0..6).map(|i| i as f64 * 0.3 - 1.0).collect(),
            weight: vec![1.0; 6],
        }));
        p.add_constraint(Box::new(Linear {
            terms: vec![
                vec![(vars[0], 1.0), (vars[1], 1.0), (vars[2], 1.0)],
                vec![(vars[3], 1.0), (vars[4], -1.0)],
            ],
            bounds: vec![RowBounds::eq(1.0), RowBounds::ge(0.5)],
        }));
        p.finalize().unwrap();
        let dense = solve(&p, None, &IpmOptions::default()).unwrap();
        let sparse = solve(
            &p,
            None,
            &IpmOptions { sparse_dim_threshold: 1, ..Default::default() },
        )
        .unwrap();
        assert_eq!(dense.status, IpmStatus::Optimal);
        assert_eq!(sparse.status, IpmStatus::Optimal);
        for i in 0..6 {
            assert!((dense.x[i] - sparse.x[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn reported_residual_matches_recomputation() {
        let mut space = VariableSpace::new();
        let x = space.add("x", 0.0, 10.0).unwrap();
        let mut p = NlpProblem::new(space);
        p.add_objective(Box::new(Quad { vars: vec![x], center: vec![4.0], weight: vec![3.0] }));
        p.add_constraint(Box::new(Linear {
            terms: vec![vec![(x, 2.0)]],
            bounds: vec![RowBounds::le(5.0)],
        }));
        p.finalize().unwrap();
        let r = solve(&p, None, &IpmOptions::default()).unwrap();
        assert_eq!(r.status, IpmStatus::Optimal);
        // Binding x <= 2.5 with lambda <= 0.
        assert!((r.x[0] - 2.5).abs() < 1e-7);
        assert!(r.lambda[0] < -1e-3);
        let kkt = kkt_residuals(&p, &r.x, &r.lambda, &r.z_lo, &r.z_up, 0.0).unwrap();
        assert_eq!(kkt.max_scaled, r.kkt_residual);
    }
}
