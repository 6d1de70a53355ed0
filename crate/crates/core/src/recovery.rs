//! Feasibility recovery for contingencies: the drop-response function and
//! the crushing procedures that project an epsilon-relaxed contingency
//! solution onto the exact coupling-feasible set.
//!
//! Crushing fixes saturated elements at their binding bounds, ties the
//! responding generators to the drop signal with exact linear constraints,
//! pins or brackets regulated voltages, and re-solves the restricted canvas.
//! The result satisfies every case constraint of the original problem,
//! complementarity included, up to solver tolerance.

use crate::grid::{delta_bounds, BusIdx, CaseTopology, ContIdx, DeltaBounds, GenIdx, Network};
use crate::ipm::{self, IpmOptions, IpmStatus, WarmStartMode};
use crate::opf::{
    build_restricted_canvas, case_penalty, contingency_start, copy_base_point, OperatingPoint,
    PenaltyMode, CANVAS_REG_DEFAULT,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("requested deviation {x} outside the responding range ({lo}, {hi})")]
    Domain { x: f64, lo: f64, hi: f64 },
    #[error("no responding generator in the contingency")]
    NoResponse,
    #[error("crush candidate violates a mutation: {0}")]
    Candidate(String),
    #[error("problem construction failed: {0}")]
    Build(#[from] crate::opf::OpfError),
    #[error("solver setup failed: {0}")]
    Ipm(#[from] ipm::IpmError),
}

/// Total clipped drop response of the surviving responding generators at
/// signal `delta`, as a deviation from the base dispatch.
pub fn clipped_response(net: &Network, topo: &CaseTopology, p_base: &[f64], delta: f64) -> f64 {
    topo.gens
        .iter()
        .map(|&g| {
            let gen = &net.generators[g.0];
            if gen.drop_const <= 0.0 {
                return 0.0;
            }
            (p_base[g.0] + gen.drop_const * delta).clamp(gen.p_min, gen.p_max) - p_base[g.0]
        })
        .sum()
}

/// Invert the clipped drop response: the signal at which the responding
/// generators deviate from `p_base` by exactly `x` in total.
///
/// Monotone bisection over the interval-algebra bounds, exact to well below
/// 1e-10 on x; on flat segments the root with the smallest |delta| is
/// returned (ties broken toward zero).
pub fn delta_response(
    net: &Network,
    topo: &CaseTopology,
    p_base: &[f64],
    x: f64,
) -> Result<f64, RecoveryError> {
    let db = delta_bounds(net, topo, p_base);
    if db.rigid {
        return Err(RecoveryError::NoResponse);
    }
    let (mut range_lo, mut range_hi) = (0.0, 0.0);
    for &g in &topo.gens {
        let gen = &net.generators[g.0];
        if gen.drop_const > 0.0 {
            range_lo += gen.p_min - p_base[g.0];
            range_hi += gen.p_max - p_base[g.0];
        }
    }
    if !(x > range_lo && x < range_hi) {
        return Err(RecoveryError::Domain { x, lo: range_lo, hi: range_hi });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let f = |d: f64| clipped_response(net, topo, p_base, d);
    // For x > 0 converge to the leftmost root, for x < 0 to the rightmost;
    // both are the smallest-|delta| solutions.
    let (mut lo, mut hi) = if x > 0.0 { (0.0, db.hi) } else { (db.lo, 0.0) };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if x > 0.0 {
            if f(mid) >= x {
                hi = mid;
            } else {
                lo = mid;
            }
        } else if f(mid) <= x {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1.0) {
            break;
        }
    }
    Ok(if x > 0.0 { hi } else { lo })
}

/// Drop-control crushing decisions for one contingency.
#[derive(Debug, Clone)]
pub struct DropCrush {
    /// Signal matching the approximate solution's total deviation.
    pub delta_hat: f64,
    /// Generators fixed at a binding bound (bound value attached).
    pub saturated: Vec<(GenIdx, f64)>,
    /// Generators tied to the signal with an exact response constraint.
    pub responding: Vec<GenIdx>,
    /// Signal bounds keeping the partition valid.
    pub delta_lo: f64,
    pub delta_hi: f64,
    /// True when the contingency has no responding generators at all; every
    /// generator is fixed and the signal is pinned to zero.
    pub rigid: bool,
}

/// Partition the surviving generators by their clipped response at
/// `delta_hat` and derive the signal bounds that keep the partition valid.
pub fn crush_drop(
    net: &Network,
    topo: &CaseTopology,
    base: &OperatingPoint,
    approx: &OperatingPoint,
    db: DeltaBounds,
) -> DropCrush {
    if db.rigid {
        let saturated = topo
            .gens
            .iter()
            .map(|&g| {
                let gen = &net.generators[g.0];
                (g, base.gen_p[g.0].clamp(gen.p_min, gen.p_max))
            })
            .collect();
        return DropCrush {
            delta_hat: 0.0,
            saturated,
            responding: Vec::new(),
            delta_lo: 0.0,
            delta_hi: 0.0,
            rigid: true,
        };
    }

    // Total deviation requested by the approximate solution, over the
    // responding generators, clamped into the attainable open range.
    let (mut range_lo, mut range_hi, mut x) = (0.0, 0.0, 0.0);
    for &g in &topo.gens {
        let gen = &net.generators[g.0];
        if gen.drop_const > 0.0 {
            range_lo += gen.p_min - base.gen_p[g.0];
            range_hi += gen.p_max - base.gen_p[g.0];
            x += approx.gen_p[g.0] - base.gen_p[g.0];
        }
    }
    let pad = 1e-12 * (1.0f64).max(range_hi - range_lo);
    let delta_hat = if range_hi - range_lo <= 2.0 * pad {
        0.0
    } else {
        let xc = x.clamp(range_lo + pad, range_hi - pad);
        delta_response(net, topo, &base.gen_p, xc).expect("clamped into the open range")
    };

    let mut saturated = Vec::new();
    let mut responding = Vec::new();
    let (mut d_lo, mut d_hi) = (db.lo, db.hi);
    for &g in &topo.gens {
        let gen = &net.generators[g.0];
        let p0 = base.gen_p[g.0];
        let p_hat = (p0 + gen.drop_const * delta_hat).clamp(gen.p_min, gen.p_max);
        if delta_hat >= 0.0 {
            // Saturation can only be at the upper bound.
            if p_hat >= gen.p_max && gen.drop_const > 0.0 {
                saturated.push((g, gen.p_max));
                d_lo = d_lo.max((gen.p_max - p0) / gen.drop_const);
            } else {
                responding.push(g);
                if gen.drop_const > 0.0 {
                    d_hi = d_hi.min((gen.p_max - p0) / gen.drop_const);
                }
            }
        } else if p_hat <= gen.p_min && gen.drop_const > 0.0 {
            saturated.push((g, gen.p_min));
            d_hi = d_hi.min((gen.p_min - p0) / gen.drop_const);
        } else {
            responding.push(g);
            if gen.drop_const > 0.0 {
                d_lo = d_lo.max((gen.p_min - p0) / gen.drop_const);
            }
        }
    }
    // Guard the partition against roundoff at breakpoints.
    let delta_hat = delta_hat.clamp(d_lo, d_hi);
    if responding.iter().all(|&g| net.generators[g.0].drop_const == 0.0) {
        // Nobody left to balance with the signal: pin it.
        let saturated = saturated
            .into_iter()
            .chain(responding.iter().map(|&g| {
                let gen = &net.generators[g.0];
                (g, (base.gen_p[g.0] + gen.drop_const * delta_hat).clamp(gen.p_min, gen.p_max))
            }))
            .collect();
        return DropCrush {
            delta_hat,
            saturated,
            responding: Vec::new(),
            delta_lo: delta_hat,
            delta_hi: delta_hat,
            rigid: false,
        };
    }
    DropCrush { delta_hat, saturated, responding, delta_lo: d_lo, delta_hi: d_hi, rigid: false }
}

/// Voltage-regulator crushing decision for one controlled bus.
#[derive(Debug, Clone, PartialEq)]
pub enum BusCrush {
    /// Reactive support exhausted downward: q fixed at the minimum, voltage
    /// free to rise within [v_base, v_max_emergency].
    AtQMin { v_lo: f64, v_hi: f64 },
    /// Reactive support exhausted upward: q fixed at the maximum, voltage
    /// free to fall within [v_min_emergency, v_base].
    AtQMax { v_lo: f64, v_hi: f64 },
    /// Mid-range: voltage held at the base value, q free.
    HoldVoltage(f64),
}

#[derive(Debug, Clone)]
pub struct VregCrush {
    pub per_bus: Vec<(BusIdx, BusCrush)>,
}

/// Classify each controlled bus by its normalized reactive saturation level
/// at the approximate solution.
pub fn crush_vreg(
    net: &Network,
    topo: &CaseTopology,
    base: &OperatingPoint,
    approx: &OperatingPoint,
    eps_q: f64,
) -> VregCrush {
    debug_assert!(eps_q > 0.0 && eps_q < 0.5);
    let mut per_bus = Vec::new();
    for n in topo.controlled_buses(net) {
        let gens = topo.gens_at(net, n);
        let mut num = 0.0;
        let mut den = 0.0;
        for &g in &gens {
            let gen = &net.generators[g.0];
            num += approx.gen_q[g.0] - gen.q_min;
            den += gen.q_max - gen.q_min;
        }
        let bus = &net.buses[n.0];
        let v0 = base.v[n.0];
        let decision = if den <= 0.0 {
            // No reactive range at all: treat as mid-range.
            BusCrush::HoldVoltage(v0)
        } else {
            let eta = num / den;
            if eta < eps_q {
                BusCrush::AtQMin { v_lo: v0, v_hi: bus.v_max_emer }
            } else if eta > 1.0 - eps_q {
                BusCrush::AtQMax { v_lo: bus.v_min_emer, v_hi: v0 }
            } else {
                BusCrush::HoldVoltage(v0)
            }
        };
        per_bus.push((n, decision));
    }
    VregCrush { per_bus }
}

/// The full set of canvas mutations for one contingency recovery.
#[derive(Debug, Clone)]
pub struct CrushPlan {
    pub drop: DropCrush,
    pub vreg: VregCrush,
}

pub fn crush_plan(
    net: &Network,
    topo: &CaseTopology,
    base: &OperatingPoint,
    approx: &OperatingPoint,
    eps_q: f64,
) -> CrushPlan {
    let db = delta_bounds(net, topo, &base.gen_p);
    CrushPlan {
        drop: crush_drop(net, topo, base, approx, db),
        vreg: crush_vreg(net, topo, base, approx, eps_q),
    }
}

#[derive(Debug, Clone)]
pub struct RecoveryParams {
    /// Regulator classification tolerance (fraction of the reactive range).
    pub eps_q: f64,
    /// Quadratic regularization weight on voltages and angles.
    pub reg: f64,
    pub ipm: IpmOptions,
}

impl Default for RecoveryParams {
    fn default() -> Self {
        RecoveryParams {
            eps_q: 0.05,
            reg: CANVAS_REG_DEFAULT,
            ipm: IpmOptions { warm_start_mode: WarmStartMode::Primal, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecoveredSolution {
    /// Exactly coupling-feasible contingency point, with the saturation
    /// slacks and signal reconstructed.
    pub point: OperatingPoint,
    pub penalty_quadratic: f64,
    pub penalty_piecewise: f64,
    /// Worst of the four complementarity residuals min(slack, margin).
    pub complementarity_residual: f64,
    /// True when the solves failed and the copy-base fallback was used.
    pub fallback: bool,
    pub plan: CrushPlan,
    pub ipm_status: Option<IpmStatus>,
    pub ipm_iterations: usize,
}

/// Crush the approximate contingency solution onto the exact
/// coupling-feasible set and re-solve the restricted canvas.
pub fn recover_feasible(
    net: &Network,
    k: ContIdx,
    base: &OperatingPoint,
    approx: &OperatingPoint,
    params: &RecoveryParams,
) -> Result<RecoveredSolution, RecoveryError> {
    let topo = net.apply_contingency(k).map_err(|e| RecoveryError::Candidate(e.to_string()))?;
    let plan = crush_plan(net, &topo, base, approx, params.eps_q);

    let build = |reg: f64| -> Result<(crate::nlp::NlpProblem, crate::opf::CaseLayout), RecoveryError> {
        let mut canvas = build_restricted_canvas(net, k, base, reg)?;
        apply_plan(&mut canvas, net, base, &plan)?;
        Ok(canvas.finish()?)
    };

    // The crush candidate (base voltages, clipped targets, signal at
    // delta_hat) must satisfy every mutation; this is asserted before any
    // solve is attempted.
    let candidate = crush_candidate(net, &topo, base, approx, &plan);
    check_candidate(net, &plan, &candidate)?;

    let mut attempt_reg = params.reg;
    let mut last_status = None;
    let mut iterations = 0;
    for _ in 0..2 {
        let (problem, layout) = build(attempt_reg)?;
        let mut start = contingency_start(net, &problem, &layout, approx);
        if let Some(d) = layout.delta {
            start.x[d.0] = plan.drop.delta_hat;
        }
        let res = ipm::solve(&problem, Some(&start), &params.ipm)?;
        last_status = Some(res.status);
        iterations += res.iterations;
        if res.status.is_solved() {
            let mut pt = layout.extract(net, &res.x);
            reconstruct_coupling(net, &topo, base, &mut pt);
            let compl = complementarity_residual(net, &topo, &pt);
            return Ok(RecoveredSolution {
                penalty_quadratic: case_penalty(net, &topo, &pt, PenaltyMode::Quadratic),
                penalty_piecewise: case_penalty(net, &topo, &pt, PenaltyMode::Piecewise),
                point: pt,
                complementarity_residual: compl,
                fallback: false,
                plan,
                ipm_status: last_status,
                ipm_iterations: iterations,
            });
        }
        // One retry with 10x regularization.
        attempt_reg = (attempt_reg * 10.0).max(10.0 * CANVAS_REG_DEFAULT);
    }

    // Persistent failure: fall back to the always-feasible copy-base point.
    let pt = copy_base_point(net, &topo, base);
    let compl = complementarity_residual(net, &topo, &pt);
    Ok(RecoveredSolution {
        penalty_quadratic: case_penalty(net, &topo, &pt, PenaltyMode::Quadratic),
        penalty_piecewise: case_penalty(net, &topo, &pt, PenaltyMode::Piecewise),
        point: pt,
        complementarity_residual: compl,
        fallback: true,
        plan,
        ipm_status: last_status,
        ipm_iterations: iterations,
    })
}

fn apply_plan(
    canvas: &mut crate::opf::Canvas,
    net: &Network,
    base: &OperatingPoint,
    plan: &CrushPlan,
) -> Result<(), RecoveryError> {
    for &(g, value) in &plan.drop.saturated {
        let pv = canvas.layout().p[g.0].expect("saturated generator survives");
        canvas.fix(pv, value)?;
    }
    if !plan.drop.rigid {
        if plan.drop.delta_lo == plan.drop.delta_hi {
            canvas.set_delta_bounds(plan.drop.delta_hat, plan.drop.delta_hat)?;
        } else {
            canvas.set_delta_bounds(plan.drop.delta_lo, plan.drop.delta_hi)?;
        }
    }
    for &g in &plan.drop.responding {
        canvas.add_drop_response(g, net.generators[g.0].drop_const, base.gen_p[g.0])?;
    }
    for (n, decision) in &plan.vreg.per_bus {
        let layout = canvas.layout();
        let v_var = layout.v[n.0];
        let q_vars: Vec<(GenIdx, crate::nlp::VarId)> = layout
            .topo
            .gens_at(net, *n)
            .into_iter()
            .map(|g| (g, layout.q[g.0].expect("controlled gen survives")))
            .collect();
        match decision {
            BusCrush::AtQMin { v_lo, v_hi } => {
                for (g, qv) in q_vars {
                    canvas.fix(qv, net.generators[g.0].q_min)?;
                }
                canvas.set_bounds(v_var, *v_lo, *v_hi)?;
            }
            BusCrush::AtQMax { v_lo, v_hi } => {
                for (g, qv) in q_vars {
                    canvas.fix(qv, net.generators[g.0].q_max)?;
                }
                canvas.set_bounds(v_var, *v_lo, *v_hi)?;
            }
            BusCrush::HoldVoltage(v0) => {
                canvas.fix(v_var, *v0)?;
            }
        }
    }
    Ok(())
}

/// The feasibility witness for the crushed problem: base voltage profile,
/// clipped drop targets at delta_hat, crushed reactive injections.
fn crush_candidate(
    net: &Network,
    topo: &CaseTopology,
    base: &OperatingPoint,
    approx: &OperatingPoint,
    plan: &CrushPlan,
) -> OperatingPoint {
    let mut pt = copy_base_point(net, topo, base);
    pt.delta = plan.drop.delta_hat;
    for &(g, value) in &plan.drop.saturated {
        pt.gen_p[g.0] = value;
    }
    for &g in &plan.drop.responding {
        let gen = &net.generators[g.0];
        pt.gen_p[g.0] = base.gen_p[g.0] + gen.drop_const * plan.drop.delta_hat;
    }
    for (n, decision) in &plan.vreg.per_bus {
        for g in topo.gens_at(net, *n) {
            let gen = &net.generators[g.0];
            pt.gen_q[g.0] = match decision {
                BusCrush::AtQMin { .. } => gen.q_min,
                BusCrush::AtQMax { .. } => gen.q_max,
                BusCrush::HoldVoltage(_) => approx.gen_q[g.0].clamp(gen.q_min, gen.q_max),
            };
        }
    }
    pt
}

fn check_candidate(
    net: &Network,
    plan: &CrushPlan,
    pt: &OperatingPoint,
) -> Result<(), RecoveryError> {
    let tol = 1e-9;
    let d = pt.delta;
    if !plan.drop.rigid && (d < plan.drop.delta_lo - tol || d > plan.drop.delta_hi + tol) {
        return Err(RecoveryError::Candidate(format!(
            "delta {d} outside [{}, {}]",
            plan.drop.delta_lo, plan.drop.delta_hi
        )));
    }
    for &(g, value) in &plan.drop.saturated {
        if (pt.gen_p[g.0] - value).abs() > tol {
            return Err(RecoveryError::Candidate(format!(
                "saturated generator `{}` not at its bound",
                net.generators[g.0].id
            )));
        }
    }
    for &g in &plan.drop.responding {
        let gen = &net.generators[g.0];
        let target = pt.gen_p[g.0] - gen.drop_const * d;
        // The response row demands p - A*delta = p_base; the candidate was
        // built that way, and p must respect its bounds.
        if pt.gen_p[g.0] < gen.p_min - tol || pt.gen_p[g.0] > gen.p_max + tol {
            return Err(RecoveryError::Candidate(format!(
                "responding generator `{}` target {target} violates bounds",
                gen.id
            )));
        }
    }
    for (n, decision) in &plan.vreg.per_bus {
        let v = pt.v[n.0];
        let ok = match decision {
            BusCrush::AtQMin { v_lo, v_hi } | BusCrush::AtQMax { v_lo, v_hi } => {
                v >= v_lo - tol && v <= v_hi + tol
            }
            BusCrush::HoldVoltage(v0) => (v - v0).abs() <= tol,
        };
        if !ok {
            return Err(RecoveryError::Candidate(format!(
                "voltage at bus `{}` violates the crush window",
                net.buses[n.0].id
            )));
        }
    }
    Ok(())
}

/// Fill in rho, nu from the recovered primal point so the drop and
/// regulator equalities hold exactly.
fn reconstruct_coupling(
    net: &Network,
    topo: &CaseTopology,
    base: &OperatingPoint,
    pt: &mut OperatingPoint,
) {
    for &g in &topo.gens {
        let gen = &net.generators[g.0];
        let target = base.gen_p[g.0] + gen.drop_const * pt.delta;
        let diff = target - pt.gen_p[g.0];
        pt.rho[g.0] = [diff.max(0.0), (-diff).max(0.0)];
    }
    for n in topo.controlled_buses(net) {
        let diff = pt.v[n.0] - base.v[n.0];
        pt.nu[n.0] = [diff.max(0.0), (-diff).max(0.0)];
    }
}

/// Worst complementarity residual of a contingency point:
/// min(rho+, Pmax - p), min(rho-, p - Pmin) per generator and
/// min(nu-, Qmax - q), min(nu+, q - Qmin) per controlled-bus generator.
pub fn complementarity_residual(net: &Network, topo: &CaseTopology, pt: &OperatingPoint) -> f64 {
    let mut worst = 0.0f64;
    for &g in &topo.gens {
        let gen = &net.generators[g.0];
        worst = worst.max(pt.rho[g.0][0].min(gen.p_max - pt.gen_p[g.0]).abs());
        worst = worst.max(pt.rho[g.0][1].min(pt.gen_p[g.0] - gen.p_min).abs());
    }
    for n in topo.controlled_buses(net) {
        for g in topo.gens_at(net, n) {
            let gen = &net.generators[g.0];
            worst = worst.max(pt.nu[n.0][1].min(gen.q_max - pt.gen_q[g.0]).abs());
            worst = worst.max(pt.nu[n.0][0].min(pt.gen_q[g.0] - gen.q_min).abs());
        }
    }
    worst
}
