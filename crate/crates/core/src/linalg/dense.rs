//! Dense Bunch-Kaufman LDL^T factorization (lower triangle, partial
//! pivoting with 1x1 and 2x2 pivot blocks).

use super::{Inertia, LinalgError};

// Bunch-Kaufman pivot selection constant.
const ALPHA: f64 = 0.6403882032022076; // (1 + sqrt(17)) / 8

#[derive(Debug, Clone, Copy)]
struct PivotBlock {
    /// First row of the block.
    start: usize,
    /// 1 or 2.
    size: usize,
    /// Row interchanged before elimination (with `start` for 1x1 blocks,
    /// with `start + 1` for 2x2 blocks).
    swap_with: usize,
}

/// Factorization P A P^T = L D L^T of a full symmetric matrix stored
/// row-major. Only the lower triangle is referenced.
pub struct DenseLdlt {
    n: usize,
    a: Vec<f64>,
    blocks: Vec<PivotBlock>,
    inertia: Inertia,
}

impl DenseLdlt {
    /// Factor `a` (row-major, n x n, symmetric). Consumes the matrix storage
    /// and overwrites it with the factors.
    pub fn factor(mut a: Vec<f64>, n: usize) -> Result<DenseLdlt, LinalgError> {
        if a.len() != n * n {
            return Err(LinalgError::Dimension);
        }
        let idx = |i: usize, j: usize| i * n + j;
        // Zero-eigenvalue classification uses an absolute floor: barrier KKT
        // matrices legitimately span ~20 orders of magnitude, so any
        // norm-relative threshold misclassifies healthy pivots.
        let tiny = 1e-120;

        let mut blocks = Vec::with_capacity(n);
        let mut k = 0usize;
        while k < n {
            let absakk = a[idx(k, k)].abs();
            // Largest off-diagonal magnitude in column k below the diagonal.
            let mut imax = k;
            let mut colmax = 0.0;
            for i in k + 1..n {
                let v = a[idx(i, k)].abs();
                if v > colmax {
                    colmax = v;
                    imax = i;
                }
            }

            let (kstep, kp) = if absakk.max(colmax) <= tiny {
                // Effectively a zero column: record a zero 1x1 pivot.
                (1, k)
            } else if absakk >= ALPHA * colmax {
                (1, k)
            } else {
                // rowmax = largest off-diagonal magnitude in row imax
                // (lower-triangle entries plus column below imax).
                let mut rowmax = 0.0f64;
                for j in k..imax {
                    rowmax = rowmax.max(a[idx(imax, j)].abs());
                }
                for i in imax + 1..n {
                    rowmax = rowmax.max(a[idx(i, imax)].abs());
                }
                if absakk >= ALPHA * colmax * (colmax / rowmax) {
                    (1, k)
                } else if a[idx(imax, imax)].abs() >= ALPHA * rowmax {
                    (1, imax)
                } else {
                    (2, imax)
                }
            };

            // Full symmetric interchange, including rows of previously
            // computed L columns, so that P A P^T = L D L^T holds for one
            // up-front permutation P.
            let kk = k + kstep - 1;
            if kp != kk {
                swap_sym_lower(&mut a, n, kk, kp);
            }
            blocks.push(PivotBlock { start: k, size: kstep, swap_with: kp });

            if kstep == 1 {
                let d = a[idx(k, k)];
                if d.abs() > tiny {
                    let r1 = 1.0 / d;
                    for j in k + 1..n {
                        let cjk = a[idx(j, k)];
                        if cjk != 0.0 {
                            let w = cjk * r1;
                            for i in j..n {
                                a[idx(i, j)] -= a[idx(i, k)] * w;
                            }
                        }
                    }
                    for i in k + 1..n {
                        a[idx(i, k)] *= r1;
                    }
                }
                k += 1;
            } else {
                // 2x2 pivot block at (k, k+1).
                if k + 2 < n {
                    let d21 = a[idx(k + 1, k)];
                    let d11 = a[idx(k + 1, k + 1)] / d21;
                    let d22 = a[idx(k, k)] / d21;
                    let t = 1.0 / (d11 * d22 - 1.0);
                    let d21inv = t / d21;
                    for j in k + 2..n {
                        let wk = d21inv * (d11 * a[idx(j, k)] - a[idx(j, k + 1)]);
                        let wkp1 = d21inv * (d22 * a[idx(j, k + 1)] - a[idx(j, k)]);
                        for i in j..n {
                            a[idx(i, j)] -=
                                a[idx(i, k)] * wk + a[idx(i, k + 1)] * wkp1;
                        }
                        a[idx(j, k)] = wk;
                        a[idx(j, k + 1)] = wkp1;
                    }
                }
                k += 2;
            }
        }

        let mut inertia = Inertia::default();
        for b in &blocks {
            if b.size == 1 {
                let d = a[idx(b.start, b.start)];
                if d > tiny {
                    inertia.pos += 1;
                } else if d < -tiny {
                    inertia.neg += 1;
                } else {
                    inertia.zero += 1;
                }
            } else {
                // Bunch-Kaufman 2x2 blocks are indefinite: one eigenvalue of
                // each sign.
                inertia.pos += 1;
                inertia.neg += 1;
            }
        }

        Ok(DenseLdlt { n, a, blocks, inertia })
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Solve A x = b in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let a = &self.a;
        let idx = |i: usize, j: usize| i * n + j;

        // b <- P b (interchanges in factorization order).
        for blk in &self.blocks {
            b.swap(blk.start + blk.size - 1, blk.swap_with);
        }

        // Forward substitution with unit-lower L plus D block solves.
        for blk in &self.blocks {
            let k = blk.start;
            if blk.size == 1 {
                let bk = b[k];
                for i in k + 1..n {
                    b[i] -= a[idx(i, k)] * bk;
                }
                let d = a[idx(k, k)];
                if d != 0.0 {
                    b[k] /= d;
                }
            } else {
                let (bk, bk1) = (b[k], b[k + 1]);
                for i in k + 2..n {
                    b[i] -= a[idx(i, k)] * bk + a[idx(i, k + 1)] * bk1;
                }
                let d11 = a[idx(k, k)];
                let d21 = a[idx(k + 1, k)];
                let d22 = a[idx(k + 1, k + 1)];
                let det = d11 * d22 - d21 * d21;
                b[k] = (d22 * bk - d21 * bk1) / det;
                b[k + 1] = (d11 * bk1 - d21 * bk) / det;
            }
        }

        // Backward substitution with L^T in reverse block order.
        for blk in self.blocks.iter().rev() {
            let k = blk.start;
            if blk.size == 1 {
                let mut s = b[k];
                for i in k + 1..n {
                    s -= a[idx(i, k)] * b[i];
                }
                b[k] = s;
            } else {
                let (mut s0, mut s1) = (b[k], b[k + 1]);
                for i in k + 2..n {
                    s0 -= a[idx(i, k)] * b[i];
                    s1 -= a[idx(i, k + 1)] * b[i];
                }
                b[k] = s0;
                b[k + 1] = s1;
            }
        }

        // b <- P^T b (interchanges in reverse order).
        for blk in self.blocks.iter().rev() {
            b.swap(blk.start + blk.size - 1, blk.swap_with);
        }
    }
}

fn swap_sym_lower(a: &mut [f64], n: usize, r: usize, p: usize) {
    // Symmetric interchange of rows/columns r and p (r < p), lower triangle.
    debug_assert!(r < p);
    let idx = |i: usize, j: usize| i * n + j;
    for j in 0..r {
        a.swap(idx(r, j), idx(p, j));
    }
    for i in r + 1..p {
        a.swap(idx(i, r), idx(p, i));
    }
    for i in p + 1..n {
        a.swap(idx(i, r), idx(i, p));
    }
    a.swap(idx(r, r), idx(p, p));
}
