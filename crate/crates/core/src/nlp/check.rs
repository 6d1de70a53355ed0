//! Central finite-difference checking of hand-coded block derivatives.
//!
//! Each block is checked in isolation so a corrupted derivative is attributed
//! to the block that produced it. Steps are 1e-6 scaled by 1 + |x_i|; errors
//! are relative to max(1, |analytic|, |fd|).

use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Objective,
    Constraint,
}

#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub name: String,
    pub kind: BlockKind,
    pub max_rel_err_grad: f64,
    pub max_rel_err_jac: f64,
    pub max_rel_err_hess: f64,
}

impl BlockCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_grad.max(self.max_rel_err_jac).max(self.max_rel_err_hess)
    }
}

#[derive(Debug, Clone)]
pub struct DerivativeReport {
    pub blocks: Vec<BlockCheck>,
}

impl DerivativeReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err()).fold(0.0, f64::max)
    }

    /// Blocks whose worst error exceeds `tol`.
    pub fn failing(&self, tol: f64) -> Vec<&BlockCheck> {
        self.blocks.iter().filter(|b| b.max_rel_err() > tol).collect()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

/// Compare analytic gradients, Jacobians and Hessians against central finite
/// differences at `x`. The seed draws the multipliers used to contract
/// constraint Hessians. Report-only: never fails on mismatch.
pub fn check_derivatives(problem: &NlpProblem, x: &[f64], seed: u64) -> DerivativeReport {
    let n = problem.space().dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();

    for b in problem.objective_blocks() {
        let pattern = b.hessian_pattern();
        let grad_of = |x: &[f64]| {
            let mut g = vec![0.0; n];
            b.gradient(x, &mut GradWriter { grad: &mut g });
            g
        };
        let g = grad_of(x);
        let mut xp = x.to_vec();
        let mut err_g = 0.0f64;
        for i in 0..n {
            let h = FD_STEP * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let fp = b.value(&xp);
            xp[i] = x[i] - h;
            let fm = b.value(&xp);
            xp[i] = x[i];
            err_g = err_g.max(rel_err(g[i], (fp - fm) / (2.0 * h)));
        }
        let analytic_h = dense_hessian(n, &pattern, |w| b.hessian(x, w));
        let err_h = hessian_fd_error(n, x, &analytic_h, grad_of);
        blocks.push(BlockCheck {
            name: b.name().to_string(),
            kind: BlockKind::Objective,
            max_rel_err_grad: err_g,
            max_rel_err_jac: 0.0,
            max_rel_err_hess: err_h,
        });
    }

    for (b, _) in problem.constraint_blocks() {
        let rows = b.rows();
        let lambda: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let jac_pattern = b.jacobian_pattern();
        let hess_pattern = b.hessian_pattern();

        // Dense analytic Jacobian.
        let mut analytic_j = vec![vec![0.0; n]; rows];
        {
            let mut vals = vec![0.0; jac_pattern.len()];
            let slots: Vec<usize> = (0..jac_pattern.len()).collect();
            b.jacobian(x, &mut SlotWriter { values: &mut vals, slots: &slots, scale: 1.0 });
            for (e, &(r, v)) in jac_pattern.iter().enumerate() {
                analytic_j[r][v.0] += vals[e];
            }
        }
        let mut err_j = 0.0f64;
        let mut xp = x.to_vec();
        let mut rp = vec![0.0; rows];
        let mut rm = vec![0.0; rows];
        for i in 0..n {
            let h = FD_STEP * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            b.residual(&xp, &mut rp);
            xp[i] = x[i] - h;
            b.residual(&xp, &mut rm);
            xp[i] = x[i];
            for r in 0..rows {
                err_j = err_j.max(rel_err(analytic_j[r][i], (rp[r] - rm[r]) / (2.0 * h)));
            }
        }

        // Hessian of lambda' c(x), compared against FD of its gradient
        // (the lambda-weighted Jacobian rows).
        let grad_of = |x: &[f64]| {
            let mut vals = vec![0.0; jac_pattern.len()];
            let slots: Vec<usize> = (0..jac_pattern.len()).collect();
            b.jacobian(x, &mut SlotWriter { values: &mut vals, slots: &slots, scale: 1.0 });
            let mut g = vec![0.0; n];
            for (e, &(r, v)) in jac_pattern.iter().enumerate() {
                g[v.0] += lambda[r] * vals[e];
            }
            g
        };
        let analytic_h = dense_hessian(n, &hess_pattern, |w| b.hessian(x, &lambda, w));
        let err_h = hessian_fd_error(n, x, &analytic_h, grad_of);

        blocks.push(BlockCheck {
            name: b.name().to_string(),
            kind: BlockKind::Constraint,
            max_rel_err_grad: 0.0,
            max_rel_err_jac: err_j,
            max_rel_err_hess: err_h,
        });
    }

    DerivativeReport { blocks }
}

fn dense_hessian(
    n: usize,
    pattern: &[(VarId, VarId)],
    write: impl FnOnce(&mut SlotWriter),
) -> Vec<Vec<f64>> {
    let mut vals = vec![0.0; pattern.len()];
    let slots: Vec<usize> = (0..pattern.len()).collect();
    write(&mut SlotWriter { values: &mut vals, slots: &slots, scale: 1.0 });
    let mut h = vec![vec![0.0; n]; n];
    for (e, &(i, j)) in pattern.iter().enumerate() {
        h[i.0][j.0] += vals[e];
        if i != j {
            h[j.0][i.0] += vals[e];
        }
    }
    h
}

fn hessian_fd_error(
    n: usize,
    x: &[f64],
    analytic: &[Vec<f64>],
    grad_of: impl Fn(&[f64]) -> Vec<f64>,
) -> f64 {
    let mut err = 0.0f64;
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = FD_STEP * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        let gp = grad_of(&xp);
        xp[j] = x[j] - h;
        let gm = grad_of(&xp);
        xp[j] = x[j];
        for i in 0..n {
            err = err.max(rel_err(analytic[i][j], (gp[i] - gm[i]) / (2.0 * h)));
        }
    }
    err
}

/// Draw a strictly interior point of the variable space: uniform within
/// finite bounds, offset from one-sided or free variables.
pub fn random_interior_point(space: &VariableSpace, rng: &mut impl Rng) -> Vec<f64> {
    let lo = space.lower();
    let up = space.upper();
    (0..space.dim())
        .map(|i| {
            let (l, u) = (lo[i], up[i]);
            match (l.is_finite(), u.is_finite()) {
                (true, true) => {
                    if l == u {
                        l
                    } else {
                        l + (u - l) * rng.gen_range(0.05..0.95)
                    }
                }
                (true, false) => l + rng.gen_range(0.05..1.0),
                (false, true) => u - rng.gen_range(0.05..1.0),
                (false, false) => rng.gen_range(-0.5..0.5),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Cubic {
        a: VarId,
        b: VarId,
        corrupt: bool,
    }

    impl ConstraintBlock for Cubic {
        fn name(&self) -> &str {
            "cubic"
        }
        fn rows(&self) -> usize {
            1
        }
        fn bounds(&self) -> Vec<RowBounds> {
            vec![RowBounds::eq(0.0)]
        }
        fn jacobian_pattern(&self) -> Vec<(usize, VarId)> {
            vec![(0, self.a), (0, self.b)]
        }
        fn hessian_pattern(&self) -> Vec<(VarId, VarId)> {
            vec![(self.a, self.a), (self.a, self.b)]
        }
        fn residual(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[self.a.0].powi(3) * x[self.b.0];
        }
        fn jacobian(&self, x: &[f64], out: &mut SlotWriter) {
            let j0 = 3.0 * x[self.a.0] * x[self.a.0] * x[self.b.0];
            out.add(0, if self.corrupt { j0 + 1.0 } else { j0 });
            out.add(1, x[self.a.0].powi(3));
        }
        fn hessian(&self, x: &[f64], lambda: &[f64], out: &mut SlotWriter) {
            out.add(0, lambda[0] * 6.0 * x[self.a.0] * x[self.b.0]);
            out.add(1, lambda[0] * 3.0 * x[self.a.0] * x[self.a.0]);
        }
    }

    fn problem(corrupt: bool) -> NlpProblem {
        let mut space = VariableSpace::new();
        let a = space.add("x1", -2.0, 2.0).unwrap();
        let b = space.add("x2", -2.0, 2.0).unwrap();
        let mut p = NlpProblem::new(space);
        p.add_objective(Box::new(super::super::tests::SumSquares(vec![a, b])));
        p.add_constraint(Box::new(Cubic { a, b, corrupt }));
        p.finalize().unwrap();
        p
    }

    #[test]
    fn exact_quadratic_checks_to_machine_precision() {
        let p = problem(false);
        let report = check_derivatives(&p, &[0.7, -0.4], 3);
        assert!(report.max_rel_err() <= 1e-9, "max err {}", report.max_rel_err());
    }

    #[test]
    fn corrupted_jacobian_entry_is_flagged_on_its_block() {
        let p = problem(true);
        let report = check_derivatives(&p, &[0.7, -0.4], 3);
        let failing = report.failing(1e-6);
        assert_eq!(failing.len(), 1);
        assert_eq!(failing[0].name, "cubic");
        assert!(failing[0].max_rel_err_jac > 1e-2);
    }
}
