//! The relaxed program in CPLEX LP text format, for cross-checking with
//! other solvers.

use std::fmt::Write;

use mcdta_core::relax::{CapacityKind, EqRow, ProgramIR, VarRef};

fn var_name(ir: &ProgramIR, j: usize) -> String {
    match ir.layout.describe(j) {
        VarRef::State { step, slot } => format!("x_{step}_{slot}"),
        VarRef::Flow { step, arc } => format!("f_{step}_{arc}"),
        VarRef::Exit { step, exit } => format!("mu_{step}_{exit}"),
    }
}

fn terms(out: &mut String, ir: &ProgramIR, idx: &[usize], val: &[f64]) {
    if idx.is_empty() {
        out.push_str(" 0 x_0_0");
    }
    for (&j, &v) in idx.iter().zip(val) {
        let sign = if v < 0.0 { '-' } else { '+' };
        let _ = write!(out, " {sign} {:e} {}", v.abs(), var_name(ir, j));
    }
}

pub fn write_lp(ir: &ProgramIR) -> String {
    let lp = &ir.lp;
    let mut s = String::from("\\ relaxed traffic control program\nMinimize\n obj:");
    let (ci, cv): (Vec<usize>, Vec<f64>) = lp.cost.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, &c)| (j, c)).unzip();
    terms(&mut s, ir, &ci, &cv);
    s.push_str("\nSubject To\n");
    for (r, kind) in ir.eq_rows.iter().enumerate() {
        let name = match *kind {
            EqRow::Initial { slot } => format!("init_{slot}"),
            EqRow::Dynamics { step, slot } => format!("dyn_{step}_{slot}"),
            EqRow::Fixed { var } => format!("fix_{var}"),
        };
        let (idx, val) = lp.eq.row(r);
        let _ = write!(s, " {name}:");
        terms(&mut s, ir, idx, val);
        let _ = writeln!(s, " = {:e}", lp.eq_rhs[r]);
    }
    for (r, row) in ir.ineq_rows.iter().enumerate() {
        let name = match row.kind {
            CapacityKind::Demand { slot, piece } => format!("dem_{}_{slot}_{piece}", row.step),
            CapacityKind::Supply { cell, piece } => format!("sup_{}_{}_{piece}", row.step, cell.0),
        };
        let (idx, val) = lp.ineq.row(r);
        let _ = write!(s, " {name}:");
        terms(&mut s, ir, idx, val);
        let _ = writeln!(s, " <= {:e}", lp.ineq_rhs[r]);
    }
    s.push_str("Bounds\n");
    for j in 0..lp.n_vars() {
        if lp.free[j] {
            let _ = writeln!(s, " {} free", var_name(ir, j));
        }
    }
    s.push_str("End\n");
    s
}
