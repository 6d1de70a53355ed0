//! Objective terms and constraint blocks of the OPF problems, with
//! hand-coded sparse first and second derivatives.

use crate::grid::QuadraticCost;
use crate::nlp::{ConstraintBlock, GradWriter, ObjectiveBlock, RowBounds, SlotWriter, VarId};

use super::QuadPenalty;

/// Generation cost: sum of convex quadratics over base-case injections.
pub struct GenCostBlock {
    pub vars: Vec<VarId>,
    pub costs: Vec<QuadraticCost>,
}

impl ObjectiveBlock for GenCostBlock {
    fn name(&self) -> &str {
        "generation_cost"
    }
    fn hessian_pattern(&self) -> Vec<(VarId, VarId)> {
        self.vars.iter().map(|&v| (v, v)).collect()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.vars.iter().zip(&self.costs).map(|(&v, c)| c.value(x[v.0])).sum()
    }
    fn gradient(&self, x: &[f64], out: &mut GradWriter) {
        for (&v, c) in self.vars.iter().zip(&self.costs) {
            out.add(v, c.c1 + 2.0 * c.c2 * x[v.0]);
        }
    }
    fn hessian(&self, _x: &[f64], out: &mut SlotWriter) {
        for (e, c) in self.costs.iter().enumerate() {
            out.add(e, 2.0 * c.c2);
        }
    }
}

/// Quadratic slack penalty `sum_i w * (a1 x_i + a2 x_i^2)`.
pub struct SlackPenaltyBlock {
    pub name: String,
    pub vars: Vec<VarId>,
    pub penalty: QuadPenalty,
    /// Case weight: 1 for the base case, 1/(|K|-1) inside the master's
    /// recourse term, 1 in standalone contingency subproblems.
    pub weight: f64,
}

impl ObjectiveBlock for SlackPenaltyBlock {
    fn name(&self) -> &str {
        &self.name
    }
    fn hessian_pattern(&self) -> Vec<(VarId, VarId)> {
        self.vars.iter().map(|&v| (v, v)).collect()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let s: f64 =
            self.vars.iter().map(|&v| self.penalty.a1 * x[v.0] + self.penalty.a2 * x[v.0] * x[v.0]).sum();
        self.weight * s
    }
    fn gradient(&self, x: &[f64], out: &mut GradWriter) {
        for &v in &self.vars {
            out.add(v, self.weight * (self.penalty.a1 + 2.0 * self.penalty.a2 * x[v.0]));
        }
    }
    fn hessian(&self, _x: &[f64], out: &mut SlotWriter) {
        for e in 0..self.vars.len() {
            out.add(e, self.weight * 2.0 * self.penalty.a2);
        }
    }
}

/// Fourth-power apparent-power recourse surrogate
/// `coef * (p^2 + q^2)^2` on one coupling variable pair.
pub struct SurrogateBlock {
    pub name: String,
    pub p: VarId,
    pub q: VarId,
    /// P_k already multiplied by the 1/(|K|-1) objective weight.
    pub coef: f64,
}

impl ObjectiveBlock for SurrogateBlock {
    fn name(&self) -> &str {
        &self.name
    }
    fn hessian_pattern(&self) -> Vec<(VarId, VarId)> {
        vec![(self.p, self.p), (self.p, self.q), (self.q, self.q)]
    }
    fn value(&self, x: &[f64]) -> f64 {
        let s = x[self.p.0] * x[self.p.0] + x[self.q.0] * x[self.q.0];
        self.coef * s * s
    }
    fn gradient(&self, x: &[f64], out: &mut GradWriter) {
        let (p, q) = (x[self.p.0], x[self.q.0]);
        let s = p * p + q * q;
        out.add(self.p, self.coef * 4.0 * s * p);
        out.add(self.q, self.coef * 4.0 * s * q);
    }
    fn hessian(&self, x: &[f64], out: &mut SlotWriter) {
        let (p, q) = (x[self.p.0], x[self.q.0]);
        let s = p * p + q * q;
        out.add(0, self.coef * (4.0 * s + 8.0 * p * p));
        out.add(1, self.coef * 8.0 * p * q);
        out.add(2, self.coef * (4.0 * s + 8.0 * q * q));
    }
}

/// Proximal regularization `0.5 * rho * sum (x_i - c_i)^2` (the canvas adds
/// this on voltages and angles).
pub struct QuadRegBlock {
    pub vars: Vec<VarId>,
    pub centers: Vec<f64>,
    pub rho: f64,
}

impl ObjectiveBlock for QuadRegBlock {
    fn name(&self) -> &str {
        "quadratic_regularization"
    }
    fn hessian_pattern(&self) -> Vec<(VarId, VarId)> {
        self.vars.iter().map(|&v| (v, v)).collect()
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.rho
            * self
                .vars
                .iter()
                .zip(&self.centers)
                .map(|(&v, &c)| (x[v.0] - c) * (x[v.0] - c))
                .sum::<f64>()
    }
    fn gradient(&self, x: &[f64], out: &mut GradWriter) {
        for (&v, &c) in self.vars.iter().zip(&self.centers) {
            out.add(v, self.rho * (x[v.0] - c));
        }
    }
    fn hessian(&self, _x: &[f64], out: &mut SlotWriter) {
        for e in 0..self.vars.len() {
            out.add(e, self.rho);
        }
    }
}

/// One terminal's flow variables and the electrical parameters seen from it.
#[derive(Debug, Clone, Copy)]
pub struct TerminalRef {
    /// Flow variables entering this terminal.
    pub p: VarId,
    pub q: VarId,
    /// Voltage/angle at this terminal and the far terminal.
    pub v1: VarId,
    pub v2: VarId,
    pub th1: VarId,
    pub th2: VarId,
    pub g: f64,
    pub b: f64,
    /// Half the charging susceptance.
    pub b_ch_half: f64,
}

/// Active/reactive flow entering a terminal of the pi-model branch.
pub fn terminal_flow(g: f64, b: f64, b_ch_half: f64, v1: f64, v2: f64, th1: f64, th2: f64) -> (f64, f64) {
    let (sin, cos) = (th1 - th2).sin_cos();
    let p = g * v1 * v1 - (g * cos + b * sin) * v1 * v2;
    let q = -(b + b_ch_half) * v1 * v1 + (b * cos - g * sin) * v1 * v2;
    (p, q)
}

/// Flow-definition equalities: per surviving branch, four rows fixing the
/// terminal flow variables to the pi-model expressions
/// (`p_var - p(v, theta) = 0`, likewise q, at both terminals).
pub struct BranchFlowBlock {
    pub terminals: Vec<TerminalRef>,
}

impl BranchFlowBlock {
    /// Jacobian entry order per terminal: rows (p, q) x cols
    /// (flow, v1, v2, th1, th2).
    const JAC_PER_TERM: usize = 10;
    /// Hessian entry order per terminal:
    /// (v1,v1), (v1,v2), (v1,th1), (v1,th2), (v2,th1), (v2,th2),
    /// (th1,th1), (th1,th2), (th2,th2).
    const HESS_PER_TERM: usize = 9;
}

impl ConstraintBlock for BranchFlowBlock {
    fn name(&self) -> &str {
        "branch_flow_definitions"
    }
    fn rows(&self) -> usize {
        2 * self.terminals.len()
    }
    fn bounds(&self) -> Vec<RowBounds> {
        vec![RowBounds::eq(0.0); 2 * self.terminals.len()]
    }
    fn jacobian_pattern(&self) -> Vec<(usize, VarId)> {
        let mut pat = Vec::with_capacity(Self::JAC_PER_TERM * self.terminals.len());
        for (t, term) in self.terminals.iter().enumerate() {
            let (rp, rq) = (2 * t, 2 * t + 1);
            pat.extend([
                (rp, term.p),
                (rp, term.v1),
                (rp, term.v2),
                (rp, term.th1),
                (rp, term.th2),
                (rq, term.q),
                (rq, term.v1),
                (rq, term.v2),
                (rq, term.th1),
                (rq, term.th2),
            ]);
        }
        pat
    }
    fn hessian_pattern(&self) -> Vec<(VarId, VarId)> {
        let mut pat = Vec::with_capacity(Self::HESS_PER_TERM * self.terminals.len());
        for term in &self.terminals {
            pat.extend([
                (term.v1, term.v1),
                (term.v1, term.v2),
                (term.v1, term.th1),
                (term.v1, term.th2),
                (term.v2, term.th1),
                (term.v2, term.th2),
                (term.th1, term.th1),
                (term.th1, term.th2),
                (term.th2, term.th2),
            ]);
        }
        pat
    }
    fn residual(&self, x: &[f64], out: &mut [f64]) {
        for (t, term) in self.terminals.iter().enumerate() {
            let (p, q) = terminal_flow(
                term.g,
                term.b,
                term.b_ch_half,
                x[term.v1.0],
                x[term.v2.0],
                x[term.th1.0],
                x[term.th2.0],
            );
            out[2 * t] = x[term.p.0] - p;
            out[2 * t + 1] = x[term.q.0] - q;
        }
    }
    fn jacobian(&self, x: &[f64], out: &mut SlotWriter) {
        for (t, term) in self.terminals.iter().enumerate() {
            let (v1, v2) = (x[term.v1.0], x[term.v2.0]);
            let (sin, cos) = (x[term.th1.0] - x[term.th2.0]).sin_cos();
            let (g, b) = (term.g, term.b);
            let gc_bs = g * cos + b * sin;
            let bc_gs = b * cos - g * sin;
            let e = Self::JAC_PER_TERM * t;
            // residual = p_var - p(v, theta): flow derivative enters negated.
            out.add(e, 1.0);
            out.add(e + 1, -(2.0 * g * v1 - gc_bs * v2)); // dp/dv1
            out.add(e + 2, gc_bs * v1); // -dp/dv2
            out.add(e + 3, -(g * sin - b * cos) * v1 * v2); // -dp/dth1
            out.add(e + 4, (g * sin - b * cos) * v1 * v2); // -dp/dth2
            out.add(e + 5, 1.0);
            out.add(e + 6, -(-2.0 * (b + term.b_ch_half) * v1 + bc_gs * v2)); // dq/dv1
            out.add(e + 7, -bc_gs * v1); // -dq/dv2
            out.add(e + 8, (b * sin + g * cos) * v1 * v2); // -dq/dth1
            out.add(e + 9, -(b * sin + g * cos) * v1 * v2); // -dq/dth2
        }
    }
    fn hessian(&self, x: &[f64], lambda: &[f64], out: &mut SlotWriter) {
        for (t, term) in self.terminals.iter().enumerate() {
            let (v1, v2) = (x[term.v1.0], x[term.v2.0]);
            let (sin, cos) = (x[term.th1.0] - x[term.th2.0]).sin_cos();
            let (g, b) = (term.g, term.b);
            let gc_bs = g * cos + b * sin;
            let bc_gs = b * cos - g * sin;
            let gs_bc = g * sin - b * cos;
            let bs_gc = b * sin + g * cos;
            let (lp, lq) = (lambda[2 * t], lambda[2 * t + 1]);
            let e = Self::HESS_PER_TERM * t;
            // Second derivatives of the flow expressions, negated (residual
            // subtracts the expression) and weighted by the row multipliers.
            // p: (v1,v1)=2g, (v1,v2)=-gc_bs, (v1,th1)=gs_bc*v2,
            //    (v1,th2)=-gs_bc*v2, (v2,th1)=gs_bc*v1, (v2,th2)=-gs_bc*v1,
            //    (th1,th1)=gc_bs*v1*v2, (th1,th2)=-gc_bs*v1*v2,
            //    (th2,th2)=gc_bs*v1*v2
            // q: (v1,v1)=-2(b+bch/2), (v1,v2)=bc_gs, (v1,th1)=-bs_gc*v2,
            //    (v1,th2)=bs_gc*v2, (v2,th1)=-bs_gc*v1, (v2,th2)=bs_gc*v1,
            //    (th1,th1)=-bc_gs*v1*v2, (th1,th2)=bc_gs*v1*v2,
            //    (th2,th2)=-bc_gs*v1*v2
            out.add(e, -(lp * 2.0 * g + lq * (-2.0 * (b + term.b_ch_half))));
            out.add(e + 1, -(lp * (-gc_bs) + lq * bc_gs));
            out.add(e + 2, -(lp * gs_bc * v2 + lq * (-bs_gc) * v2));
            out.add(e + 3, -(lp * (-gs_bc) * v2 + lq * bs_gc * v2));
            out.add(e + 4, -(lp * gs_bc * v1 + lq * (-bs_gc) * v1));
            out.add(e + 5, -(lp * (-gs_bc) * v1 + lq * bs_gc * v1));
            let vv = v1 * v2;
            out.add(e + 6, -(lp * gc_bs * vv + lq * (-bc_gs) * vv));
            out.add(e + 7, -(lp * (-gc_bs) * vv + lq * bc_gs * vv));
            out.add(e + 8, -(lp * gc_bs * vv + lq * (-bc_gs) * vv));
        }
    }
}

/// Squared thermal limits: per terminal,
/// `(R v1 + sigma)^2 - p^2 - q^2 >= 0` with `sigma >= 0` a variable bound.
pub struct ThermalLimitBlock {
    /// (p, q, v1, sigma, rating) per terminal row.
    pub rows: Vec<(VarId, VarId, VarId, VarId, f64)>,
}

impl ConstraintBlock for ThermalLimitBlock {
    fn name(&self) -> &str {
        "thermal_limits"
    }
    fn rows(&self) -> usize {
        self.rows.len()
    }
    fn bounds(&self) -> Vec<RowBounds> {
        vec![RowBounds::ge(0.0); self.rows.len()]
    }
    fn jacobian_pattern(&self) -> Vec<(usize, VarId)> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, &(p, q, v, s, _))| [(r, p), (r, q), (r, v), (r, s)])
            .collect()
    }
    fn hessian_pattern(&self) -> Vec<(VarId, VarId)> {
        self.rows
            .iter()
            .flat_map(|&(p, q, v, s, _)| [(p, p), (q, q), (v, v), (v, s), (s, s)])
            .collect()
    }
    fn residual(&self, x: &[f64], out: &mut [f64]) {
        for (r, &(p, q, v, s, rating)) in self.rows.iter().enumerate() {
            let m = rating * x[v.0] + x[s.0];
            out[r] = m * m - x[p.0] * x[p.0] - x[q.0] * x[q.0];
        }
    }
    fn jacobian(&self, x: &[f64], out: &mut SlotWriter) {
        for (r, &(p, q, v, s, rating)) in self.rows.iter().enumerate() {
            let m = rating * x[v.0] + x[s.0];
            let e = 4 * r;
            out.add(e, -2.0 * x[p.0]);
            out.add(e + 1, -2.0 * x[q.0]);
            out.add(e + 2, 2.0 * rating * m);
            out.add(e + 3, 2.0 * m);
        }
    }
    fn hessian(&self, _x: &[f64], lambda: &[f64], out: &mut SlotWriter) {
        for (r, &(_, _, _, _, rating)) in self.rows.iter().enumerate() {
            let l = lambda[r];
            let e = 5 * r;
            out.add(e, -2.0 * l);
            out.add(e + 1, -2.0 * l);
            out.add(e + 2, 2.0 * rating * rating * l);
            out.add(e + 3, 2.0 * rating * l);
            out.add(e + 4, 2.0 * l);
        }
    }
}

/// Nodal power balance: two rows per bus.
///
/// P row: `sum p_g - sum p_flows - G_sh v^2 - sP+ + sP- = P_load`
/// Q row: `sum q_g - sum q_flows + B_sh v^2 - sQ+ + sQ- = Q_load`
pub struct PowerBalanceBlock {
    pub buses: Vec<BalanceBusRef>,
}

pub struct BalanceBusRef {
    pub v: VarId,
    pub gen_p: Vec<VarId>,
    pub gen_q: Vec<VarId>,
    /// Flow variables entering branch terminals incident to this bus.
    pub flow_p: Vec<VarId>,
    pub flow_q: Vec<VarId>,
    pub slack_p: [VarId; 2],
    pub slack_q: [VarId; 2],
    pub g_shunt: f64,
    pub b_shunt: f64,
    pub p_load: f64,
    pub q_load: f64,
}

impl ConstraintBlock for PowerBalanceBlock {
    fn name(&self) -> &str {
        "power_balance"
    }
    fn rows(&self) -> usize {
        2 * self.buses.len()
    }
    fn bounds(&self) -> Vec<RowBounds> {
        self.buses
            .iter()
            .flat_map(|b| [RowBounds::eq(b.p_load), RowBounds::eq(b.q_load)])
            .collect()
    }
    fn jacobian_pattern(&self) -> Vec<(usize, VarId)> {
        let mut pat = Vec::new();
        for (i, b) in self.buses.iter().enumerate() {
            let (rp, rq) = (2 * i, 2 * i + 1);
            for &g in &b.gen_p {
                pat.push((rp, g));
            }
            for &f in &b.flow_p {
                pat.push((rp, f));
            }
            pat.push((rp, b.v));
            pat.push((rp, b.slack_p[0]));
            pat.push((rp, b.slack_p[1]));
            for &g in &b.gen_q {
                pat.push((rq, g));
            }
            for &f in &b.flow_q {
                pat.push((rq, f));
            }
            pat.push((rq, b.v));
            pat.push((rq, b.slack_q[0]));
            pat.push((rq, b.slack_q[1]));
        }
        pat
    }
    fn hessian_pattern(&self) -> Vec<(VarId, VarId)> {
        self.buses.iter().flat_map(|b| [(b.v, b.v), (b.v, b.v)]).collect()
    }
    fn residual(&self, x: &[f64], out: &mut [f64]) {
        for (i, b) in self.buses.iter().enumerate() {
            let v = x[b.v.0];
            let p: f64 = b.gen_p.iter().map(|&g| x[g.0]).sum::<f64>()
                - b.flow_p.iter().map(|&f| x[f.0]).sum::<f64>()
                - b.g_shunt * v * v
                - x[b.slack_p[0].0]
                + x[b.slack_p[1].0];
            let q: f64 = b.gen_q.iter().map(|&g| x[g.0]).sum::<f64>()
                - b.flow_q.iter().map(|&f| x[f.0]).sum::<f64>()
                + b.b_shunt * v * v
                - x[b.slack_q[0].0]
                + x[b.slack_q[1].0];
            out[2 * i] = p;
            out[2 * i + 1] = q;
        }
    }
    fn jacobian(&self, x: &[f64], out: &mut SlotWriter) {
        let mut e = 0;
        for b in &self.buses {
            let v = x[b.v.0];
            for _ in &b.gen_p {
                out.add(e, 1.0);
                e += 1;
            }
            for _ in &b.flow_p {
                out.add(e, -1.0);
                e += 1;
            }
            out.add(e, -2.0 * b.g_shunt * v);
            e += 1;
            out.add(e, -1.0);
            e += 1;
            out.add(e, 1.0);
            e += 1;
            for _ in &b.gen_q {
                out.add(e, 1.0);
                e += 1;
            }
            for _ in &b.flow_q {
                out.add(e, -1.0);
                e += 1;
            }
            out.add(e, 2.0 * b.b_shunt * v);
            e += 1;
            out.add(e, -1.0);
            e += 1;
            out.add(e, 1.0);
            e += 1;
        }
    }
    fn hessian(&self, _x: &[f64], lambda: &[f64], out: &mut SlotWriter) {
        for (i, b) in self.buses.iter().enumerate() {
            out.add(2 * i, -2.0 * b.g_shunt * lambda[2 * i]);
            out.add(2 * i + 1, 2.0 * b.b_shunt * lambda[2 * i + 1]);
        }
    }
}

/// General linear rows (angle reference, drop coupling, regulator voltage
/// differences, canvas response constraints).
pub struct LinearBlock {
    pub name: String,
    pub terms: Vec<Vec<(VarId, f64)>>,
    pub row_bounds: Vec<RowBounds>,
}

impl LinearBlock {
    pub fn new(name: impl Into<String>) -> Self {
        LinearBlock { name: name.into(), terms: Vec::new(), row_bounds: Vec::new() }
    }

    pub fn push(&mut self, terms: Vec<(VarId, f64)>, bounds: RowBounds) {
        self.terms.push(terms);
        self.row_bounds.push(bounds);
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl ConstraintBlock for LinearBlock {
    fn name(&self) -> &str {
        &self.name
    }
    fn rows(&self) -> usize {
        self.terms.len()
    }
    fn bounds(&self) -> Vec<RowBounds> {
        self.row_bounds.clone()
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
    fn hessian(&self, _x: &[f64], _lambda: &[f64], _out: &mut SlotWriter) {}
}

/// Relaxed complementarity caps: bilinear products `a * (sign * (b - off)) <= cap`
/// written as rows `a * b * sign - a * off * sign <= cap`.
///
/// Each row is `slack * (hi_side ? (bound - partner) : (partner - bound)) <= cap`,
/// where `slack` is a rho/nu variable and `partner` a p/q variable.
pub struct ComplementarityCapBlock {
    pub name: String,
    pub rows: Vec<CapRow>,
}

pub struct CapRow {
    /// The nonnegative saturation slack (rho or nu).
    pub slack: VarId,
    /// The saturating quantity (p or q).
    pub partner: VarId,
    /// Bound of the partner on the saturated side.
    pub bound: f64,
    /// True when the product pairs the slack with `bound - partner`
    /// (upper-side saturation), false for `partner - bound`.
    pub upper_side: bool,
    pub cap: f64,
}

impl ConstraintBlock for ComplementarityCapBlock {
    fn name(&self) -> &str {
        &self.name
    }
    fn rows(&self) -> usize {
        self.rows.len()
    }
    fn bounds(&self) -> Vec<RowBounds> {
        self.rows.iter().map(|r| RowBounds::le(r.cap)).collect()
    }
    fn jacobian_pattern(&self) -> Vec<(usize, VarId)> {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| [(r, row.slack), (r, row.partner)])
            .collect()
    }
    fn hessian_pattern(&self) -> Vec<(VarId, VarId)> {
        self.rows.iter().map(|row| (row.slack, row.partner)).collect()
    }
    fn residual(&self, x: &[f64], out: &mut [f64]) {
        for (r, row) in self.rows.iter().enumerate() {
            let margin = if row.upper_side { row.bound - x[row.partner.0] } else { x[row.partner.0] - row.bound };
            out[r] = x[row.slack.0] * margin;
        }
    }
    fn jacobian(&self, x: &[f64], out: &mut SlotWriter) {
        for (r, row) in self.rows.iter().enumerate() {
            let margin = if row.upper_side { row.bound - x[row.partner.0] } else { x[row.partner.0] - row.bound };
            let sign = if row.upper_side { -1.0 } else { 1.0 };
            out.add(2 * r, margin);
            out.add(2 * r + 1, sign * x[row.slack.0]);
        }
    }
    fn hessian(&self, _x: &[f64], lambda: &[f64], out: &mut SlotWriter) {
        for (r, row) in self.rows.iter().enumerate() {
            let sign = if row.upper_side { -1.0 } else { 1.0 };
            out.add(r, sign * lambda[r]);
        }
    }
}
