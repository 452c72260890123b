//! Reduction to standard form `A x = b, x >= 0`.
//!
//! Free columns that appear in a single equality row are substituted out
//! together with that row. Remaining free columns are split into positive
//! and negative parts; inequality rows receive a slack column.

use alloc::vec;
use alloc::vec::Vec;

use super::ldl::CscMatrix;
use super::LinearProgram;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ColumnMap {
    Bounded(usize),
    Split(usize, usize),
    /// Substituted out through the given elimination record.
    Eliminated(usize),
    /// Appears in no remaining row; fixed at zero.
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Elimination {
    pub col: usize,
    pub row: usize,
    pub coef: f64,
    /// Cost of `col` when it was eliminated.
    pub cost: f64,
}

/// Outcome decided without iterating.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Trivial {
    /// An empty equality row with nonzero right-hand side, or an empty
    /// inequality row with negative right-hand side.
    Infeasible,
    /// An empty column whose cost can decrease without limit.
    Unbounded { col: usize, direction: f64 },
}

/// Standard-form problem and the data to map its solution back.
#[derive(Debug, Clone)]
pub struct Presolved {
    pub(crate) a: CscMatrix,
    pub(crate) b: Vec<f64>,
    pub(crate) c: Vec<f64>,
    pub(crate) columns: Vec<ColumnMap>,
    /// Standard row of each original equality row, if kept.
    pub(crate) eq_rows: Vec<Option<usize>>,
    /// Standard row and slack column of each original inequality row.
    pub(crate) ineq_rows: Vec<Option<(usize, usize)>>,
    pub(crate) eliminated: Vec<Elimination>,
    pub(crate) trivial: Option<Trivial>,
}

impl Presolved {
    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn n_cols(&self) -> usize {
        self.c.len()
    }

    pub fn n_eliminated(&self) -> usize {
        self.eliminated.len()
    }

    /// Maps a standard-form primal-dual point to the original problem.
    /// Returns `(x, y, eta)`.
    pub(crate) fn postsolve(&self, lp: &LinearProgram, xs: &[f64], ys: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let x = self.primal(lp, xs, true);
        let mut y = vec![0.0; lp.eq_rhs.len()];
        for (r, m) in self.eq_rows.iter().enumerate() {
            if let Some(i) = m {
                y[r] = ys[*i];
            }
        }
        for e in &self.eliminated {
            y[e.row] = e.cost / e.coef;
        }
        let mut eta = vec![0.0; lp.ineq_rhs.len()];
        for (r, m) in self.ineq_rows.iter().enumerate() {
            // the row dual matches the slack's dual only up to the dual
            // residual; project so that eta >= 0 holds exactly
            if let Some((i, _)) = m {
                eta[r] = (-ys[*i]).max(0.0);
            }
        }
        (x, y, eta)
    }

    /// Original primal point, or a homogeneous direction when `affine` is
    /// false (right-hand sides of eliminated rows taken as zero).
    pub(crate) fn primal(&self, lp: &LinearProgram, xs: &[f64], affine: bool) -> Vec<f64> {
        let mut x = vec![0.0; lp.n_vars()];
        for (j, m) in self.columns.iter().enumerate() {
            x[j] = match *m {
                ColumnMap::Bounded(c) => xs[c],
                ColumnMap::Split(p, n) => xs[p] - xs[n],
                _ => 0.0,
            };
        }
        for e in self.eliminated.iter().rev() {
            let (idx, val) = lp.eq.row(e.row);
            let mut rest = if affine { lp.eq_rhs[e.row] } else { 0.0 };
            for (&j, &v) in idx.iter().zip(val) {
                if j != e.col {
                    rest -= v * x[j];
                }
            }
            x[e.col] = rest / e.coef;
        }
        x
    }
}

pub(crate) fn presolve(lp: &LinearProgram) -> Presolved {
    let n = lp.n_vars();
    let n_eq = lp.eq_rhs.len();
    let n_in = lp.ineq_rhs.len();
    let mut trivial = None;

    // column -> equality rows; counts include inequality rows
    let mut col_eq: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for r in 0..n_eq {
        let (idx, val) = lp.eq.row(r);
        for (&j, &v) in idx.iter().zip(val) {
            col_eq[j].push((r, v));
            count[j] += 1;
        }
    }
    for r in 0..n_in {
        for &j in lp.ineq.row(r).0 {
            count[j] += 1;
        }
    }
    let scale = 1.0 + super::inf_norm(&lp.eq_rhs).max(super::inf_norm(&lp.ineq_rhs));
    let mut row_alive = vec![true; n_eq];
    for r in 0..n_eq {
        if lp.eq.row(r).0.is_empty() {
            row_alive[r] = false;
            if lp.eq_rhs[r].abs() > 1e-12 * scale {
                trivial = Some(Trivial::Infeasible);
            }
        }
    }
    let mut ineq_alive = vec![true; n_in];
    for r in 0..n_in {
        if lp.ineq.row(r).0.is_empty() {
            ineq_alive[r] = false;
            if lp.ineq_rhs[r] < -1e-12 * scale {
                trivial = Some(Trivial::Infeasible);
            }
        }
    }

    let mut cost = lp.cost.clone();
    let mut col_alive = vec![true; n];
    let mut eliminated = Vec::new();
    let mut stack: Vec<usize> = (0..n).rev().filter(|&j| lp.free[j] && count[j] == 1).collect();
    while let Some(j) = stack.pop() {
        if !col_alive[j] || count[j] != 1 {
            continue;
        }
        let Some(&(r, coef)) = col_eq[j].iter().find(|&&(r, _)| row_alive[r]) else {
            continue;
        };
        let cj = cost[j];
        let (idx, val) = lp.eq.row(r);
        for (&l, &v) in idx.iter().zip(val) {
            if l == j {
                continue;
            }
            cost[l] -= cj * v / coef;
            count[l] -= 1;
            if lp.free[l] && count[l] == 1 && col_alive[l] {
                stack.push(l);
            }
        }
        eliminated.push(Elimination { col: j, row: r, coef, cost: cj });
        row_alive[r] = false;
        col_alive[j] = false;
        count[j] = 0;
    }

    let mut columns = vec![ColumnMap::Empty; n];
    for e in &eliminated {
        columns[e.col] = ColumnMap::Eliminated(0);
    }
    for (k, e) in eliminated.iter().enumerate() {
        columns[e.col] = ColumnMap::Eliminated(k);
    }
    let mut c = Vec::new();
    for j in 0..n {
        if !col_alive[j] {
            continue;
        }
        if count[j] == 0 {
            let down = if lp.free[j] { cost[j] != 0.0 } else { cost[j] < 0.0 };
            if down && trivial.is_none() {
                trivial = Some(Trivial::Unbounded { col: j, direction: if cost[j] > 0.0 { -1.0 } else { 1.0 } });
            }
            continue;
        }
        if lp.free[j] {
            columns[j] = ColumnMap::Split(c.len(), c.len() + 1);
            c.push(cost[j]);
            c.push(-cost[j]);
        } else {
            columns[j] = ColumnMap::Bounded(c.len());
            c.push(cost[j]);
        }
    }

    let mut b = Vec::new();
    let mut eq_rows = vec![None; n_eq];
    for r in 0..n_eq {
        if row_alive[r] {
            eq_rows[r] = Some(b.len());
            b.push(lp.eq_rhs[r]);
        }
    }
    let mut ineq_rows = vec![None; n_in];
    for r in 0..n_in {
        if ineq_alive[r] {
            ineq_rows[r] = Some((b.len(), c.len()));
            b.push(lp.ineq_rhs[r]);
            c.push(0.0);
        }
    }

    // assemble columns
    let n_std = c.len();
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_std];
    let place = |row: usize, j: usize, v: f64, cols: &mut Vec<Vec<(usize, f64)>>| match columns[j] {
        ColumnMap::Bounded(s) => cols[s].push((row, v)),
        ColumnMap::Split(p, q) => {
            cols[p].push((row, v));
            cols[q].push((row, -v));
        }
        _ => {}
    };
    for r in 0..n_eq {
        if let Some(i) = eq_rows[r] {
            let (idx, val) = lp.eq.row(r);
            for (&j, &v) in idx.iter().zip(val) {
                place(i, j, v, &mut cols);
            }
        }
    }
    for r in 0..n_in {
        if let Some((i, slack)) = ineq_rows[r] {
            let (idx, val) = lp.ineq.row(r);
            for (&j, &v) in idx.iter().zip(val) {
                place(i, j, v, &mut cols);
            }
            cols[slack].push((i, 1.0));
        }
    }
    let mut colptr = vec![0];
    let mut rows = Vec::new();
    let mut vals = Vec::new();
    for col in cols {
        for (i, v) in col {
            rows.push(i);
            vals.push(v);
        }
        colptr.push(rows.len());
    }
    Presolved {
        a: CscMatrix { m: b.len(), colptr, rows, vals },
        b,
        c,
        columns,
        eq_rows,
        ineq_rows,
        eliminated,
        trivial,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_of_free_singletons_collapses() {
        // x1 = x0 + 1, x2 = x1 + 1 with x1, x2 free and cost on x2
        let mut lp = LinearProgram::new(3);
        lp.free[1] = true;
        lp.free[2] = true;
        lp.cost[2] = 1.0;
        lp.add_eq([(1, 1.0), (0, -1.0)], 1.0);
        lp.add_eq([(2, 1.0), (1, -1.0)], 1.0);
        let p = presolve(&lp);
        assert_eq!(p.n_eliminated(), 2);
        assert_eq!(p.n_rows(), 0);
        assert_eq!(p.columns[0], ColumnMap::Empty);
        assert!(p.trivial.is_none());
        let x = p.primal(&lp, &[], true);
        assert_eq!(x, vec![0.0, 1.0, 2.0]);
        let (_, y, _) = p.postsolve(&lp, &[], &[]);
        assert_eq!(y, vec![1.0, 1.0]);
    }

    #[test]
    fn empty_rows_are_checked() {
        let mut lp = LinearProgram::new(1);
        lp.add_eq([], 1.0);
        assert_eq!(presolve(&lp).trivial, Some(Trivial::Infeasible));
        let mut lp = LinearProgram::new(1);
        lp.add_ineq([], 1.0);
        assert_eq!(presolve(&lp).trivial, None);
    }

    #[test]
    fn slack_and_split_layout() {
        let mut lp = LinearProgram::new(2);
        lp.free[0] = true;
        lp.add_ineq([(0, 1.0), (1, 1.0)], 1.0);
        lp.add_ineq([(0, -1.0)], 1.0);
        let p = presolve(&lp);
        assert_eq!(p.columns[0], ColumnMap::Split(0, 1));
        assert_eq!(p.columns[1], ColumnMap::Bounded(2));
        assert_eq!(p.ineq_rows, vec![Some((0, 3)), Some((1, 4))]);
        assert_eq!(p.n_cols(), 5);
    }
}
