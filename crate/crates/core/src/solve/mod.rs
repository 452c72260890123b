//! Sparse linear programming.
//!
//! Problems have the form
//!
//! ```text
//! minimize  c'v   subject to  A v = b,  G v <= g,  v_j >= 0 unless free.
//! ```
//!
//! Duals follow `c - A'y + G'eta = s` with `eta >= 0` and `s >= 0` on
//! bounded columns (`s = 0` on free ones); the dual objective is
//! `b'y - g'eta`. The solver is a homogeneous self-dual interior-point method
//! with Mehrotra's predictor-corrector, solving normal equations with a sparse
//! LDL' factorization under reverse Cuthill-McKee ordering.

mod ipm;
mod ldl;
mod order;
mod presolve;

use alloc::vec;
use alloc::vec::Vec;

pub use presolve::Presolved;

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRows {
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseRows {
    pub fn new(n_cols: usize) -> Self {
        Self { n_cols, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    /// Appends a row. Duplicate columns are summed and exact zeros dropped.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) -> usize {
        let mut e: Vec<(usize, f64)> = entries.into_iter().collect();
        e.sort_by_key(|&(j, _)| j);
        let start = self.indices.len();
        for (j, v) in e {
            assert!(j < self.n_cols, "column {j} out of range");
            if self.indices.len() > start && *self.indices.last().unwrap() == j {
                *self.values.last_mut().unwrap() += v;
            } else {
                self.indices.push(j);
                self.values.push(v);
            }
        }
        // drop zeros produced by cancellation or given explicitly
        let mut w = start;
        for r in start..self.indices.len() {
            if self.values[r] != 0.0 {
                self.indices[w] = self.indices[r];
                self.values[w] = self.values[r];
                w += 1;
            }
        }
        self.indices.truncate(w);
        self.values.truncate(w);
        self.indptr.push(w);
        self.indptr.len() - 2
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let s = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[s.clone()], &self.values[s])
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (idx, val) = self.row(r);
        idx.iter().zip(val).map(|(&j, &v)| v * x[j]).sum()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.row_dot(r, x)).collect()
    }

    /// `out += scale * self' * y`.
    pub fn mul_t_add(&self, y: &[f64], scale: f64, out: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let (idx, val) = self.row(r);
            for (&j, &v) in idx.iter().zip(val) {
                out[j] += scale * v * yr;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub cost: Vec<f64>,
    pub free: Vec<bool>,
    pub eq: SparseRows,
    pub eq_rhs: Vec<f64>,
    pub ineq: SparseRows,
    pub ineq_rhs: Vec<f64>,
}

impl LinearProgram {
    /// `n` non-negative variables with zero cost and no rows.
    pub fn new(n: usize) -> Self {
        Self {
            cost: vec![0.0; n],
            free: vec![false; n],
            eq: SparseRows::new(n),
            eq_rhs: Vec::new(),
            ineq: SparseRows::new(n),
            ineq_rhs: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn add_eq(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> usize {
        self.eq_rhs.push(rhs);
        self.eq.push_row(entries)
    }

    pub fn add_ineq(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> usize {
        self.ineq_rhs.push(rhs);
        self.ineq.push_row(entries)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.cost.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Reduced costs `c - A'y + G'eta`.
    pub fn reduced_costs(&self, y: &[f64], eta: &[f64]) -> Vec<f64> {
        let mut s = self.cost.clone();
        self.eq.mul_t_add(y, -1.0, &mut s);
        self.ineq.mul_t_add(eta, 1.0, &mut s);
        s
    }

    pub fn dual_objective(&self, y: &[f64], eta: &[f64]) -> f64 {
        let a: f64 = self.eq_rhs.iter().zip(y).map(|(b, v)| b * v).sum();
        let b: f64 = self.ineq_rhs.iter().zip(eta).map(|(g, v)| g * v).sum();
        a - b
    }

    /// Largest violation of rows and bounds, unscaled.
    pub fn primal_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (r, b) in self.eq_rhs.iter().enumerate() {
            worst = worst.max((self.eq.row_dot(r, x) - b).abs());
        }
        for (r, g) in self.ineq_rhs.iter().enumerate() {
            worst = worst.max(self.ineq.row_dot(r, x) - g);
        }
        for (j, &v) in x.iter().enumerate() {
            if !self.free[j] {
                worst = worst.max(-v);
            }
        }
        worst
    }

    /// Relative residuals of a primal-dual point.
    pub fn residuals(&self, x: &[f64], y: &[f64], eta: &[f64]) -> Residuals {
        let rhs_scale = 1.0 + inf_norm(&self.eq_rhs).max(inf_norm(&self.ineq_rhs));
        let cost_scale = 1.0 + inf_norm(&self.cost);
        let s = self.reduced_costs(y, eta);
        let mut dual: f64 = 0.0;
        for (j, &sj) in s.iter().enumerate() {
            dual = dual.max(if self.free[j] { sj.abs() } else { -sj });
        }
        for &e in eta {
            dual = dual.max(-e);
        }
        let p = self.objective(x);
        let d = self.dual_objective(y, eta);
        Residuals {
            primal: self.primal_violation(x) / rhs_scale,
            dual: dual / cost_scale,
            gap: (p - d).abs() / (1.0 + p.abs().max(d.abs())),
        }
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Bound on the relative primal, dual and gap residuals at optimality.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iters: 200 }
    }
}

/// Relative residuals: primal violation over `1 + |rhs|`, dual violation
/// over `1 + |c|`, and `|p - d| / (1 + max(|p|, |d|))`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.gap)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    Optimal,
    /// `certificate_residual` is `|A'y + s| / b'y` of the Farkas ray found.
    Infeasible { certificate_residual: f64 },
    /// `ray` is a primal direction of descent, scaled to unit max norm.
    Unbounded { ray: Vec<f64>, certificate_residual: f64 },
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// Equality duals.
    pub y: Vec<f64>,
    /// Inequality duals, non-negative.
    pub eta: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub residuals: Residuals,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

pub fn solve(lp: &LinearProgram, opts: &SolveOptions) -> SolveResult {
    let pre = presolve::presolve(lp);
    ipm::solve_presolved(lp, &pre, opts)
}
