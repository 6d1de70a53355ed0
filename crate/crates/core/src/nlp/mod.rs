//! Generic smooth NLP container assembled from additive objective terms and
//! constraint blocks.
//!
//! Blocks declare their sparse derivative patterns once. [`NlpProblem::finalize`]
//! sorts the union of all patterns by (row, col), merges duplicate entries, and
//! builds per-block arrays of direct indices into the shared value arrays.
//! After that one-time O(zeta log zeta) step every evaluation writes each
//! nonzero in O(1), so a full evaluation costs O(zeta) plus block arithmetic.

mod check;

pub use check::{check_derivatives, random_interior_point, BlockCheck, BlockKind, DerivativeReport};

use std::collections::HashMap;
use thiserror::Error;

/// Index of a variable in a [`VariableSpace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Debug, Error)]
pub enum NlpError {
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("variable `{0}`: lower bound exceeds upper bound")]
    BadBounds(String),
    #[error("unknown variable id {0:?}")]
    UnknownVariable(VarId),
    #[error("block `{block}`: {what} index out of declared dimension")]
    PatternOutOfRange { block: String, what: &'static str },
}

/// Non-finite values are reported with the offending block and component.
#[derive(Debug, Error)]
#[error("non-finite value in {what}{}", block.as_ref().map(|b| format!(" (block `{b}`)")).unwrap_or_default())]
pub struct EvalError {
    pub what: String,
    pub block: Option<String>,
}

/// Ordered collection of named scalar variables with bounds.
#[derive(Debug, Clone, Default)]
pub struct VariableSpace {
    names: Vec<String>,
    lo: Vec<f64>,
    up: Vec<f64>,
    by_name: HashMap<String, VarId>,
}

impl VariableSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, lo: f64, up: f64) -> Result<VarId, NlpError> {
        let name = name.into();
        if lo > up {
            return Err(NlpError::BadBounds(name));
        }
        if self.by_name.contains_key(&name) {
            return Err(NlpError::DuplicateVariable(name));
        }
        let id = VarId(self.names.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.lo.push(lo);
        self.up.push(up);
        Ok(id)
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.names[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<VarId> {
        self.by_name.get(name).copied()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lo
    }

    pub fn upper(&self) -> &[f64] {
        &self.up
    }

    /// Bounds may be tightened or replaced after construction (the canvas
    /// mutations do this); patterns are unaffected.
    pub fn set_bounds(&mut self, id: VarId, lo: f64, up: f64) -> Result<(), NlpError> {
        if id.0 >= self.names.len() {
            return Err(NlpError::UnknownVariable(id));
        }
        if lo > up {
            return Err(NlpError::BadBounds(self.names[id.0].clone()));
        }
        self.lo[id.0] = lo;
        self.up[id.0] = up;
        Ok(())
    }

    /// Fix a variable to a single value (lower == upper).
    pub fn fix(&mut self, id: VarId, value: f64) -> Result<(), NlpError> {
        self.set_bounds(id, value, value)
    }
}

/// Row bounds of a constraint: equality when `lo == hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowBounds {
    pub lo: f64,
    pub hi: f64,
}

impl RowBounds {
    pub fn eq(rhs: f64) -> Self {
        RowBounds { lo: rhs, hi: rhs }
    }

    pub fn ge(lo: f64) -> Self {
        RowBounds { lo, hi: f64::INFINITY }
    }

    pub fn le(hi: f64) -> Self {
        RowBounds { lo: f64::NEG_INFINITY, hi }
    }

    pub fn is_equality(&self) -> bool {
        self.lo == self.hi
    }
}

/// Accumulates sparse values into the merged value array through a block's
/// direct-index slot map. `add` is O(1) per nonzero.
pub struct SlotWriter<'a> {
    values: &'a mut [f64],
    slots: &'a [usize],
    scale: f64,
}

impl SlotWriter<'_> {
    /// Add `v` (times the writer's scale) to the block's `entry`-th declared
    /// pattern position.
    #[inline]
    pub fn add(&mut self, entry: usize, v: f64) {
        self.values[self.slots[entry]] += self.scale * v;
    }
}

/// Accumulates dense gradient contributions.
pub struct GradWriter<'a> {
    grad: &'a mut [f64],
}

impl GradWriter<'_> {
    #[inline]
    pub fn add(&mut self, var: VarId, v: f64) {
        self.grad[var.0] += v;
    }
}

/// One additive objective term with hand-coded derivatives.
pub trait ObjectiveBlock: Send + Sync {
    fn name(&self) -> &str;

    /// Hessian nonzero pattern; entries may be given in either triangle and
    /// may repeat across blocks.
    fn hessian_pattern(&self) -> Vec<(VarId, VarId)>;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], out: &mut GradWriter);

    /// Write Hessian values in the order of `hessian_pattern`.
    fn hessian(&self, x: &[f64], out: &mut SlotWriter);
}

/// One group of constraint rows with hand-coded derivatives.
pub trait ConstraintBlock: Send + Sync {
    fn name(&self) -> &str;

    fn rows(&self) -> usize;

    /// Per-row bounds (equality or inequality range).
    fn bounds(&self) -> Vec<RowBounds>;

    /// Jacobian pattern as (local row, variable) pairs.
    fn jacobian_pattern(&self) -> Vec<(usize, VarId)>;

    /// Hessian-of-Lagrangian pattern for this block's rows.
    fn hessian_pattern(&self) -> Vec<(VarId, VarId)>;

    /// Residual values (left-hand side), one per local row.
    fn residual(&self, x: &[f64], out: &mut [f64]);

    /// Write Jacobian values in the order of `jacobian_pattern`.
    fn jacobian(&self, x: &[f64], out: &mut SlotWriter);

    /// Write `sum_i lambda[i] * hess(c_i)` values in the order of
    /// `hessian_pattern`. `lambda` holds this block's rows only.
    fn hessian(&self, x: &[f64], lambda: &[f64], out: &mut SlotWriter);
}

struct ConstraintEntry {
    block: Box<dyn ConstraintBlock>,
    row_offset: usize,
    rows: usize,
}

/// Sorted, deduplicated triplet patterns plus per-block direct-index arrays.
#[derive(Debug, Clone)]
pub struct DerivativeCache {
    /// Merged Jacobian pattern, sorted by (row, col).
    pub jac_rows: Vec<usize>,
    pub jac_cols: Vec<usize>,
    /// Merged Hessian pattern (lower triangle), sorted by (row, col).
    pub hess_rows: Vec<usize>,
    pub hess_cols: Vec<usize>,
    obj_hess_slots: Vec<Vec<usize>>,
    con_jac_slots: Vec<Vec<usize>>,
    con_hess_slots: Vec<Vec<usize>>,
    /// Total block-contributed nonzero count (before merging).
    pub zeta: usize,
}

impl DerivativeCache {
    pub fn jac_nnz(&self) -> usize {
        self.jac_rows.len()
    }

    pub fn hess_nnz(&self) -> usize {
        self.hess_rows.len()
    }
}

/// Caller-owned output buffers for one evaluation.
#[derive(Debug, Clone)]
pub struct EvalWorkspace {
    pub f: f64,
    pub grad: Vec<f64>,
    pub cons: Vec<f64>,
    pub jac_vals: Vec<f64>,
    pub hess_vals: Vec<f64>,
}

impl EvalWorkspace {
    pub fn new(problem: &NlpProblem) -> Self {
        let cache = problem.cache.as_ref().expect("problem must be finalized");
        EvalWorkspace {
            f: 0.0,
            grad: vec![0.0; problem.space.dim()],
            cons: vec![0.0; problem.n_rows],
            jac_vals: vec![0.0; cache.jac_nnz()],
            hess_vals: vec![0.0; cache.hess_nnz()],
        }
    }
}

pub struct NlpProblem {
    space: VariableSpace,
    objectives: Vec<Box<dyn ObjectiveBlock>>,
    constraints: Vec<ConstraintEntry>,
    n_rows: usize,
    cache: Option<DerivativeCache>,
}

impl NlpProblem {
    pub fn new(space: VariableSpace) -> Self {
        NlpProblem { space, objectives: Vec::new(), constraints: Vec::new(), n_rows: 0, cache: None }
    }

    pub fn space(&self) -> &VariableSpace {
        &self.space
    }

    pub fn space_mut(&mut self) -> &mut VariableSpace {
        &mut self.space
    }

    pub fn n_vars(&self) -> usize {
        self.space.dim()
    }

    pub fn n_cons(&self) -> usize {
        self.n_rows
    }

    pub fn add_objective(&mut self, block: Box<dyn ObjectiveBlock>) {
        assert!(self.cache.is_none(), "cannot add blocks after finalize");
        self.objectives.push(block);
    }

    /// Register a constraint block; returns its global row offset.
    pub fn add_constraint(&mut self, block: Box<dyn ConstraintBlock>) -> usize {
        assert!(self.cache.is_none(), "cannot add blocks after finalize");
        let offset = self.n_rows;
        let rows = block.rows();
        self.n_rows += rows;
        self.constraints.push(ConstraintEntry { block, row_offset: offset, rows });
        offset
    }

    /// Stacked per-row bounds across all constraint blocks.
    pub fn row_bounds(&self) -> Vec<RowBounds> {
        let mut out = Vec::with_capacity(self.n_rows);
        for e in &self.constraints {
            out.extend(e.block.bounds());
        }
        out
    }

    pub fn objective_blocks(&self) -> &[Box<dyn ObjectiveBlock>] {
        &self.objectives
    }

    pub fn constraint_blocks(&self) -> impl Iterator<Item = (&dyn ConstraintBlock, usize)> {
        self.constraints.iter().map(|e| (e.block.as_ref(), e.row_offset))
    }

    pub fn cache(&self) -> Option<&DerivativeCache> {
        self.cache.as_ref()
    }

    /// One-time preprocessing: sort patterns by (row, col), merge duplicates,
    /// and build per-block direct-index arrays. Idempotent.
    pub fn finalize(&mut self) -> Result<&DerivativeCache, NlpError> {
        if self.cache.is_some() {
            return Ok(self.cache.as_ref().unwrap());
        }
        let dim = self.space.dim();
        let mut zeta = 0usize;

        // Jacobian: global (row, col) entries per constraint block.
        let mut jac_patterns: Vec<Vec<(usize, usize)>> = Vec::with_capacity(self.constraints.len());
        for e in &self.constraints {
            let pat = e.block.jacobian_pattern();
            for &(r, v) in &pat {
                if r >= e.rows || v.0 >= dim {
                    return Err(NlpError::PatternOutOfRange {
                        block: e.block.name().to_string(),
                        what: "jacobian",
                    });
                }
            }
            zeta += pat.len();
            jac_patterns.push(pat.iter().map(|&(r, v)| (e.row_offset + r, v.0)).collect());
        }
        let (jac_rows, jac_cols, con_jac_slots) = merge_patterns(&jac_patterns);

        // Hessian: lower-triangle canonicalized entries from objective and
        // constraint blocks, merged into one shared pattern.
        let mut hess_patterns: Vec<Vec<(usize, usize)>> = Vec::new();
        for b in &self.objectives {
            let pat = b.hessian_pattern();
            for &(i, j) in &pat {
                if i.0 >= dim || j.0 >= dim {
                    return Err(NlpError::PatternOutOfRange {
                        block: b.name().to_string(),
                        what: "hessian",
                    });
                }
            }
            zeta += pat.len();
            hess_patterns.push(pat.iter().map(|&(i, j)| canon(i.0, j.0)).collect());
        }
        for e in &self.constraints {
            let pat = e.block.hessian_pattern();
            for &(i, j) in &pat {
                if i.0 >= dim || j.0 >= dim {
                    return Err(NlpError::PatternOutOfRange {
                        block: e.block.name().to_string(),
                        what: "hessian",
                    });
                }
            }
            zeta += pat.len();
            hess_patterns.push(pat.iter().map(|&(i, j)| canon(i.0, j.0)).collect());
        }
        let (hess_rows, hess_cols, mut hess_slots) = merge_patterns(&hess_patterns);
        let con_hess_slots = hess_slots.split_off(self.objectives.len());
        let obj_hess_slots = hess_slots;

        self.cache = Some(DerivativeCache {
            jac_rows,
            jac_cols,
            hess_rows,
            hess_cols,
            obj_hess_slots,
            con_jac_slots,
            con_hess_slots,
            zeta,
        });
        Ok(self.cache.as_ref().unwrap())
    }

    /// Objective and constraint values only (no derivative assembly).
    pub fn eval_values(&self, x: &[f64], cons: &mut [f64]) -> Result<f64, EvalError> {
        debug_assert_eq!(x.len(), self.space.dim());
        let mut f = 0.0;
        for b in &self.objectives {
            let v = b.value(x);
            if !v.is_finite() {
                return Err(EvalError {
                    what: "objective value".into(),
                    block: Some(b.name().to_string()),
                });
            }
            f += v;
        }
        cons.iter_mut().for_each(|c| *c = 0.0);
        for e in &self.constraints {
            let out = &mut cons[e.row_offset..e.row_offset + e.rows];
            e.block.residual(x, out);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(EvalError {
                    what: "constraint residual".into(),
                    block: Some(e.block.name().to_string()),
                });
            }
        }
        Ok(f)
    }

    /// Gradient and Jacobian values (into `ws.grad`, `ws.jac_vals`).
    pub fn eval_first_order(&self, x: &[f64], ws: &mut EvalWorkspace) -> Result<(), EvalError> {
        let cache = self.cache.as_ref().expect("finalized");
        ws.grad.iter_mut().for_each(|g| *g = 0.0);
        for b in &self.objectives {
            b.gradient(x, &mut GradWriter { grad: &mut ws.grad });
        }
        if let Some(i) = ws.grad.iter().position(|v| !v.is_finite()) {
            return Err(self.attribute_grad_fault(x, i));
        }
        ws.jac_vals.iter_mut().for_each(|v| *v = 0.0);
        for (e, slots) in self.constraints.iter().zip(&cache.con_jac_slots) {
            e.block.jacobian(x, &mut SlotWriter { values: &mut ws.jac_vals, slots, scale: 1.0 });
        }
        if ws.jac_vals.iter().any(|v| !v.is_finite()) {
            return Err(self.attribute_jac_fault(x));
        }
        Ok(())
    }

    /// Hessian of the Lagrangian: `obj_scale * H(f) + sum_i lambda[i] * H(c_i)`
    /// (into `ws.hess_vals`). `lambda` is indexed by global constraint row.
    pub fn eval_hessian(
        &self,
        x: &[f64],
        lambda: &[f64],
        obj_scale: f64,
        ws: &mut EvalWorkspace,
    ) -> Result<(), EvalError> {
        let cache = self.cache.as_ref().expect("finalized");
        ws.hess_vals.iter_mut().for_each(|v| *v = 0.0);
        for (b, slots) in self.objectives.iter().zip(&cache.obj_hess_slots) {
            b.hessian(x, &mut SlotWriter { values: &mut ws.hess_vals, slots, scale: obj_scale });
        }
        for (e, slots) in self.constraints.iter().zip(&cache.con_hess_slots) {
            let lam = &lambda[e.row_offset..e.row_offset + e.rows];
            e.block.hessian(x, lam, &mut SlotWriter { values: &mut ws.hess_vals, slots, scale: 1.0 });
        }
        if ws.hess_vals.iter().any(|v| !v.is_finite()) {
            return Err(self.attribute_hess_fault(x, lambda, obj_scale));
        }
        Ok(())
    }

    fn attribute_hess_fault(&self, x: &[f64], lambda: &[f64], obj_scale: f64) -> EvalError {
        let cache = self.cache.as_ref().unwrap();
        for (b, slots) in self.objectives.iter().zip(&cache.obj_hess_slots) {
            let mut vals = vec![0.0; cache.hess_nnz()];
            b.hessian(x, &mut SlotWriter { values: &mut vals, slots, scale: obj_scale });
            if vals.iter().any(|v| !v.is_finite()) {
                return EvalError { what: "hessian".into(), block: Some(b.name().to_string()) };
            }
        }
        for (e, slots) in self.constraints.iter().zip(&cache.con_hess_slots) {
            let lam = &lambda[e.row_offset..e.row_offset + e.rows];
            let mut vals = vec![0.0; cache.hess_nnz()];
            e.block.hessian(x, lam, &mut SlotWriter { values: &mut vals, slots, scale: 1.0 });
            if vals.iter().any(|v| !v.is_finite()) {
                return EvalError {
                    what: "hessian".into(),
                    block: Some(e.block.name().to_string()),
                };
            }
        }
        EvalError { what: "hessian".into(), block: None }
    }

    /// Full evaluation: f, gradient, residuals, Jacobian, Hessian.
    pub fn eval_all(
        &self,
        x: &[f64],
        lambda: &[f64],
        obj_scale: f64,
        ws: &mut EvalWorkspace,
    ) -> Result<(), EvalError> {
        ws.f = self.eval_values(x, &mut ws.cons)?;
        self.eval_first_order(x, ws)?;
        self.eval_hessian(x, lambda, obj_scale, ws)?;
        Ok(())
    }

    fn attribute_grad_fault(&self, x: &[f64], _var: usize) -> EvalError {
        for b in &self.objectives {
            let mut g = vec![0.0; self.space.dim()];
            b.gradient(x, &mut GradWriter { grad: &mut g });
            if g.iter().any(|v| !v.is_finite()) {
                return EvalError { what: "gradient".into(), block: Some(b.name().to_string()) };
            }
        }
        EvalError { what: "gradient".into(), block: None }
    }

    fn attribute_jac_fault(&self, x: &[f64]) -> EvalError {
        let cache = self.cache.as_ref().unwrap();
        for (e, slots) in self.constraints.iter().zip(&cache.con_jac_slots) {
            let mut vals = vec![0.0; cache.jac_nnz()];
            e.block.jacobian(x, &mut SlotWriter { values: &mut vals, slots, scale: 1.0 });
            if vals.iter().any(|v| !v.is_finite()) {
                return EvalError {
                    what: "jacobian".into(),
                    block: Some(e.block.name().to_string()),
                };
            }
        }
        EvalError { what: "jacobian".into(), block: None }
    }
}

fn canon(i: usize, j: usize) -> (usize, usize) {
    if i >= j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Sort the union of per-block (row, col) patterns, remove duplicates, and
/// map every block entry to its merged slot.
fn merge_patterns(patterns: &[Vec<(usize, usize)>]) -> (Vec<usize>, Vec<usize>, Vec<Vec<usize>>) {
    let mut all: Vec<(usize, usize)> = patterns.iter().flatten().copied().collect();
    all.sort_unstable();
    all.dedup();
    let rows: Vec<usize> = all.iter().map(|&(r, _)| r).collect();
    let cols: Vec<usize> = all.iter().map(|&(_, c)| c).collect();
    let slots = patterns
        .iter()
        .map(|pat| {
            pat.iter()
                .map(|entry| all.binary_search(entry).expect("entry present after merge"))
                .collect()
        })
        .collect();
    (rows, cols, slots)
}
