//! Sparse no-pivot LDL^T factorization.
//!
//! Up-looking elimination-tree algorithm on the upper triangle, with a
//! reverse Cuthill-McKee fill-reducing permutation computed once per pattern.
//! Intended for quasi-definite KKT systems; a tiny pivot is reported as a
//! breakdown so the caller can add regularization and retry.

use super::{Inertia, LinalgError};

/// Symmetric sparse matrix stored as the upper triangle in CSC order
/// (equivalently the lower triangle in CSR order), diagonal included.
#[derive(Debug, Clone)]
pub struct SparseSym {
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseSym {
    /// Build from triplets (i, j, v); duplicates are summed, both triangles
    /// accepted. Entry order inside a column is ascending row.
    pub fn from_triplets(n: usize, entries: impl Iterator<Item = (usize, usize, f64)>) -> SparseSym {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in entries {
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            cols[c].push((r, v));
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for col in &mut cols {
            col.sort_unstable_by_key(|&(r, _)| r);
            let mut last: Option<usize> = None;
            for &(r, v) in col.iter() {
                if last == Some(r) {
                    *values.last_mut().unwrap() += v;
                } else {
                    row_idx.push(r);
                    values.push(v);
                    last = Some(r);
                }
            }
            col_ptr.push(row_idx.len());
        }
        SparseSym { n, col_ptr, row_idx, values }
    }

    /// Build from a dense row-major symmetric matrix, dropping entries with
    /// magnitude <= `drop_tol`.
    pub fn from_dense_lower(a: &[f64], n: usize, drop_tol: f64) -> SparseSym {
        SparseSym::from_triplets(
            n,
            (0..n).flat_map(|i| {
                (0..=i).filter_map(move |j| {
                    let v = a[i * n + j];
                    (v.abs() > drop_tol || i == j).then_some((i, j, v))
                })
            }),
        )
    }

    /// Symmetric permutation B = A(perm, perm).
    pub fn permute(&self, perm: &[usize]) -> SparseSym {
        let n = self.n;
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        SparseSym::from_triplets(
            n,
            (0..n).flat_map(|j| {
                let lo = self.col_ptr[j];
                let hi = self.col_ptr[j + 1];
                let inv = &inv;
                self.row_idx[lo..hi]
                    .iter()
                    .zip(&self.values[lo..hi])
                    .map(move |(&i, &v)| (inv[i], inv[j], v))
            }),
        )
    }
}

/// Reverse Cuthill-McKee ordering of the adjacency pattern; `perm[new] = old`.
pub fn rcm_order(a: &SparseSym) -> Vec<usize> {
    let n = a.n;
    let mut adj = vec![Vec::new(); n];
    for j in 0..n {
        for p in a.col_ptr[j]..a.col_ptr[j + 1] {
            let i = a.row_idx[p];
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(|l| l.len()).collect();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    // Start each component from a minimum-degree node.
    let mut nodes: Vec<usize> = (0..n).collect();
    nodes.sort_unstable_by_key(|&i| degree[i]);
    for &start in &nodes {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> =
                adj[u].iter().copied().filter(|&v| !seen[v]).collect();
            next.sort_unstable_by_key(|&v| degree[v]);
            for v in next {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Numeric factorization P A P^T = L D L^T with D diagonal (no pivoting).
pub struct SparseLdlt {
    n: usize,
    perm: Vec<usize>,
    l_colptr: Vec<usize>,
    l_rowidx: Vec<usize>,
    l_values: Vec<f64>,
    d: Vec<f64>,
    inertia: Inertia,
}

impl SparseLdlt {
    pub fn factor(a: &SparseSym) -> Result<SparseLdlt, LinalgError> {
        let perm = rcm_order(a);
        Self::factor_with_order(a, perm)
    }

    pub fn factor_with_order(a: &SparseSym, perm: Vec<usize>) -> Result<SparseLdlt, LinalgError> {
        let n = a.n;
        let ap = a.permute(&perm);
        // Absolute breakdown floor; see the dense factorization for why a
        // norm-relative threshold is wrong for barrier KKT systems.
        let tiny = 1e-120;

        // Symbolic: elimination tree and column counts of L.
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut l_nnz = vec![0usize; n];
        for j in 0..n {
            flag[j] = j;
            for p in ap.col_ptr[j]..ap.col_ptr[j + 1] {
                let mut i = ap.row_idx[p];
                while i < j && flag[i] != j {
                    if parent[i] == usize::MAX {
                        parent[i] = j;
                    }
                    l_nnz[i] += 1;
                    flag[i] = j;
                    i = parent[i];
                }
            }
        }
        let mut l_colptr = vec![0usize; n + 1];
        for j in 0..n {
            l_colptr[j + 1] = l_colptr[j] + l_nnz[j];
        }
        let nnz = l_colptr[n];
        let mut l_rowidx = vec![0usize; nnz];
        let mut l_values = vec![0.0f64; nnz];
        let mut d = vec![0.0f64; n];

        // Numeric: up-looking row-by-row elimination.
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut path = vec![0usize; n];
        let mut l_next: Vec<usize> = l_colptr[..n].to_vec();
        let mut flag = vec![usize::MAX; n];
        for j in 0..n {
            flag[j] = j;
            let mut top = n;
            for p in ap.col_ptr[j]..ap.col_ptr[j + 1] {
                let mut i = ap.row_idx[p];
                if i > j {
                    continue;
                }
                y[i] += ap.values[p];
                // Walk up the elimination tree until a node already reached
                // for this row; reverse the path into `pattern` so that
                // pattern[top..n] stays in topological order.
                let mut len = 0usize;
                while i < j && flag[i] != j {
                    path[len] = i;
                    len += 1;
                    flag[i] = j;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = path[len];
                }
            }
            let mut dj = y[j];
            y[j] = 0.0;
            for &k in &pattern[top..n] {
                let yk = y[k];
                y[k] = 0.0;
                for p in l_colptr[k]..l_next[k] {
                    y[l_rowidx[p]] -= l_values[p] * yk;
                }
                let lkj = yk / d[k];
                dj -= lkj * yk;
                l_rowidx[l_next[k]] = j;
                l_values[l_next[k]] = lkj;
                l_next[k] += 1;
            }
            if dj.abs() <= tiny {
                return Err(LinalgError::TinyPivot(j));
            }
            d[j] = dj;
        }

        let mut inertia = Inertia::default();
        for &v in &d {
            if v > 0.0 {
                inertia.pos += 1;
            } else {
                inertia.neg += 1;
            }
        }
        Ok(SparseLdlt { n, perm, l_colptr, l_rowidx, l_values, d, inertia })
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Solve A x = b in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        // L y' = y
        for j in 0..n {
            let yj = y[j];
            for p in self.l_colptr[j]..self.l_colptr[j + 1] {
                y[self.l_rowidx[p]] -= self.l_values[p] * yj;
            }
        }
        // D z = y'
        for j in 0..n {
            y[j] /= self.d[j];
        }
        // L^T x' = z
        for j in (0..n).rev() {
            let mut s = y[j];
            for p in self.l_colptr[j]..self.l_colptr[j + 1] {
                s -= self.l_values[p] * y[self.l_rowidx[p]];
            }
            y[j] = s;
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = y[new];
        }
    }
}
