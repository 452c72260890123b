//! Sparse LDL' factorization of the normal matrix `A diag(theta) A'`.
//!
//! Symbolic analysis runs once per pattern: ordering, elimination tree and
//! column counts. Numeric factorization is the up-looking algorithm, one row
//! of L at a time, computed from the elimination tree.

use alloc::vec;
use alloc::vec::Vec;

use super::order::rcm;

const NONE: usize = usize::MAX;

/// Pivots at or below this fraction of the largest diagonal entry are
/// treated as zero and replaced by [`HUGE_PIVOT`], which drops the
/// corresponding direction from the solve.
const PIVOT_RATIO: f64 = 1e-30;
const HUGE_PIVOT: f64 = 1e128;

/// Sparse matrix with `m` rows stored by columns.
#[derive(Debug, Clone)]
pub(crate) struct CscMatrix {
    pub m: usize,
    pub colptr: Vec<usize>,
    pub rows: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CscMatrix {
    pub fn n_cols(&self) -> usize {
        self.colptr.len() - 1
    }

    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let s = self.colptr[j]..self.colptr[j + 1];
        (&self.rows[s.clone()], &self.vals[s])
    }

    /// `A x`.
    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                let (r, v) = self.col(j);
                for (&i, &a) in r.iter().zip(v) {
                    out[i] += a * xj;
                }
            }
        }
        out
    }

    /// `A' y`.
    pub fn mul_t(&self, y: &[f64]) -> Vec<f64> {
        (0..self.n_cols())
            .map(|j| {
                let (r, v) = self.col(j);
                r.iter().zip(v).map(|(&i, &a)| a * y[i]).sum()
            })
            .collect()
    }
}

/// Factorization of `A diag(theta) A'` for a fixed `A`.
pub(crate) struct NormalFactor {
    m: usize,
    perm: Vec<usize>,
    /// Upper triangle of the permuted matrix by columns, diagonal last.
    up_ptr: Vec<usize>,
    up_rows: Vec<usize>,
    up_vals: Vec<f64>,
    /// For each column of A: (position in `up_vals`, product of the two
    /// entries of A) contributions.
    contrib_ptr: Vec<usize>,
    contrib: Vec<(usize, f64)>,
    parent: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    lnz: Vec<usize>,
    flag: Vec<usize>,
    pattern: Vec<usize>,
    work: Vec<f64>,
    /// Number of pivots replaced in the last factorization.
    pub dropped: usize,
}

impl NormalFactor {
    pub fn new(a: &CscMatrix) -> Self {
        let m = a.m;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m];
        for j in 0..a.n_cols() {
            let (r, _) = a.col(j);
            for &p in r {
                for &q in r {
                    if p != q {
                        adj[p].push(q);
                    }
                }
            }
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        // dense rows go last so they cannot fill the factor
        let avg = adj.iter().map(Vec::len).sum::<usize>() / m.max(1);
        let dense: Vec<bool> = adj.iter().map(|l| l.len() > 64.max(10 * avg)).collect();
        let sparse_adj: Vec<Vec<usize>> = if dense.iter().any(|&d| d) {
            adj.iter()
                .enumerate()
                .map(|(i, l)| if dense[i] { Vec::new() } else { l.iter().copied().filter(|&o| !dense[o]).collect() })
                .collect()
        } else {
            adj.clone()
        };
        let mut perm = rcm(&sparse_adj);
        perm.retain(|&o| !dense[o]);
        perm.extend((0..m).filter(|&o| dense[o]));
        let mut pinv = vec![0; m];
        for (new, &old) in perm.iter().enumerate() {
            pinv[old] = new;
        }
        // column k of the permuted upper triangle holds rows i < k, then k
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        for (old, l) in adj.iter().enumerate() {
            let k = pinv[old];
            for &o in l {
                let i = pinv[o];
                if i < k {
                    cols[k].push(i);
                }
            }
        }
        let mut up_ptr = Vec::with_capacity(m + 1);
        let mut up_rows = Vec::new();
        up_ptr.push(0);
        for (k, c) in cols.iter_mut().enumerate() {
            c.sort_unstable();
            up_rows.extend_from_slice(c);
            up_rows.push(k);
            up_ptr.push(up_rows.len());
        }
        let pos = |i: usize, k: usize| -> usize {
            let s = &up_rows[up_ptr[k]..up_ptr[k + 1]];
            up_ptr[k] + s.binary_search(&i).expect("entry in pattern")
        };
        let mut contrib_ptr = Vec::with_capacity(a.n_cols() + 1);
        let mut contrib = Vec::new();
        contrib_ptr.push(0);
        for j in 0..a.n_cols() {
            let (r, v) = a.col(j);
            for (p, (&ri, &vi)) in r.iter().zip(v).enumerate() {
                for (&rj, &vj) in r[p..].iter().zip(&v[p..]) {
                    let (x, y) = (pinv[ri], pinv[rj]);
                    let (i, k) = if x <= y { (x, y) } else { (y, x) };
                    contrib.push((pos(i, k), vi * vj));
                }
            }
            contrib_ptr.push(contrib.len());
        }

        // elimination tree and column counts
        let mut parent = vec![NONE; m];
        let mut lnz = vec![0; m];
        let mut flag = vec![NONE; m];
        for k in 0..m {
            flag[k] = k;
            for &row in &up_rows[up_ptr[k]..up_ptr[k + 1]] {
                let mut i = row;
                if i >= k {
                    continue;
                }
                while flag[i] != k {
                    if parent[i] == NONE {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0; m + 1];
        for k in 0..m {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let nnz = lp[m];
        let up_len = up_rows.len();
        Self {
            m,
            perm,
            up_ptr,
            up_rows,
            up_vals: vec![0.0; up_len],
            contrib_ptr,
            contrib,
            parent,
            lp,
            li: vec![0; nnz],
            lx: vec![0.0; nnz],
            d: vec![0.0; m],
            lnz,
            flag,
            pattern: vec![0; m],
            work: vec![0.0; m],
            dropped: 0,
        }
    }

    /// Assembles `A diag(theta) A' + reg I` and factors it.
    pub fn factor(&mut self, theta: &[f64], reg: f64) {
        self.up_vals.iter_mut().for_each(|v| *v = 0.0);
        for (j, &t) in theta.iter().enumerate() {
            for &(p, prod) in &self.contrib[self.contrib_ptr[j]..self.contrib_ptr[j + 1]] {
                self.up_vals[p] += t * prod;
            }
        }
        let mut max_diag: f64 = 0.0;
        for k in 0..self.m {
            let p = self.up_ptr[k + 1] - 1;
            self.up_vals[p] += reg;
            max_diag = max_diag.max(self.up_vals[p]);
        }
        let tiny = PIVOT_RATIO * max_diag.max(1e-300);
        self.dropped = 0;
        let m = self.m;
        for k in 0..m {
            self.work[k] = 0.0;
            let mut top = m;
            self.flag[k] = k;
            self.lnz[k] = 0;
            for p in self.up_ptr[k]..self.up_ptr[k + 1] {
                let mut i = self.up_rows[p];
                self.work[i] += self.up_vals[p];
                let mut len = 0;
                while self.flag[i] != k {
                    self.pattern[len] = i;
                    len += 1;
                    self.flag[i] = k;
                    i = self.parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    self.pattern[top] = self.pattern[len];
                }
            }
            let mut dk = self.work[k];
            self.work[k] = 0.0;
            for t in top..m {
                let i = self.pattern[t];
                let yi = self.work[i];
                self.work[i] = 0.0;
                let start = self.lp[i];
                let end = start + self.lnz[i];
                for p in start..end {
                    self.work[self.li[p]] -= self.lx[p] * yi;
                }
                let l_ki = yi / self.d[i];
                dk -= l_ki * yi;
                self.li[end] = k;
                self.lx[end] = l_ki;
                self.lnz[i] += 1;
            }
            if !(dk > tiny) {
                dk = HUGE_PIVOT;
                self.dropped += 1;
            }
            self.d[k] = dk;
        }
    }

    /// Solves with the current factors, in place.
    pub fn solve(&self, rhs: &mut [f64]) {
        let m = self.m;
        let mut x: Vec<f64> = self.perm.iter().map(|&o| rhs[o]).collect();
        for j in 0..m {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.lp[j]..self.lp[j] + self.lnz[j] {
                    x[self.li[p]] -= self.lx[p] * xj;
                }
            }
        }
        for j in 0..m {
            x[j] /= self.d[j];
        }
        for j in (0..m).rev() {
            let mut s = x[j];
            for p in self.lp[j]..self.lp[j] + self.lnz[j] {
                s -= self.lx[p] * x[self.li[p]];
            }
            x[j] = s;
        }
        for (new, &old) in self.perm.iter().enumerate() {
            rhs[old] = x[new];
        }
    }
}

/// `A diag(theta) A' y + reg y`.
pub(crate) fn normal_mul(a: &CscMatrix, theta: &[f64], reg: f64, y: &[f64]) -> Vec<f64> {
    let mut w = a.mul_t(y);
    for (wj, t) in w.iter_mut().zip(theta) {
        *wj *= t;
    }
    let mut out = a.mul(&w);
    for (o, yi) in out.iter_mut().zip(y) {
        *o += reg * yi;
    }
    out
}

/// Solve with iterative refinement against the exact operator.
pub(crate) fn solve_refined(f: &NormalFactor, a: &CscMatrix, theta: &[f64], reg: f64, rhs: &[f64]) -> Vec<f64> {
    let mut x = rhs.to_vec();
    f.solve(&mut x);
    let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let mut res: Vec<f64> = normal_mul(a, theta, reg, &x).iter().zip(rhs).map(|(ax, b)| b - ax).collect();
    let mut err = norm(&res);
    for _ in 0..3 {
        if err <= 1e-15 * (1.0 + norm(rhs)) {
            break;
        }
        let mut dx = res.clone();
        f.solve(&mut dx);
        let cand: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let r2: Vec<f64> = normal_mul(a, theta, reg, &cand).iter().zip(rhs).map(|(ax, b)| b - ax).collect();
        let e2 = norm(&r2);
        if e2 < err {
            x = cand;
            res = r2;
            err = e2;
        } else {
            break;
        }
    }
    x
}
