//! Discretize, solve, recover and certify in one call.

use thiserror::Error;

use crate::optimality::{extract_costate, kkt_residuals, CostateTrajectory, KktReport};
use crate::problem::Problem;
use crate::recover::{polish, recover_controls, verify_tightness, RecoverError, RecoveredControls, TightnessReport};
use crate::relax::{discretize, ProgramIR, RelaxedTrajectory};
use crate::solve::{solve, LinearProgram, SolveOptions, SolveResult, SolveStatus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("relaxed program is infeasible (certificate residual {0:e})")]
    Infeasible(f64),
    #[error("relaxed program is unbounded (certificate residual {0:e})")]
    Unbounded(f64),
    #[error("solver stopped after {iterations} iterations with residual {residual:e}")]
    IterationLimit { iterations: usize, residual: f64 },
    #[error(transparent)]
    Recover(#[from] RecoverError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub ir: ProgramIR,
    pub solve: SolveResult,
    /// Solver output in trajectory form.
    pub relaxed: RelaxedTrajectory,
    /// After [`polish`]; this is what the controls reproduce.
    pub polished: RelaxedTrajectory,
    pub polish_change: f64,
    pub recovered: RecoveredControls,
    pub tightness: TightnessReport,
    pub kkt: KktReport,
    pub costate: CostateTrajectory,
}

fn check_status(res: &SolveResult) -> Result<(), PipelineError> {
    match &res.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible { certificate_residual } => Err(PipelineError::Infeasible(*certificate_residual)),
        SolveStatus::Unbounded { certificate_residual, .. } => Err(PipelineError::Unbounded(*certificate_residual)),
        SolveStatus::IterationLimit => {
            Err(PipelineError::IterationLimit { iterations: res.iterations, residual: res.residuals.max() })
        }
    }
}

pub fn optimize(p: &Problem, opts: &SolveOptions) -> Result<Optimized, PipelineError> {
    optimize_program(p, discretize(p), opts)
}

/// As [`optimize`] for a program that may carry extra rows, such as fixed
/// variables.
pub fn optimize_program(p: &Problem, ir: ProgramIR, opts: &SolveOptions) -> Result<Optimized, PipelineError> {
    let res = solve(&ir.lp, opts);
    check_status(&res)?;
    let relaxed = RelaxedTrajectory::from_vector(&ir.layout, &res.x);
    let (polished, polish_change) = polish(p, &relaxed);
    let recovered = recover_controls(&p.network, &p.fundamentals, &polished)?;
    let tightness = verify_tightness(p, &polished, &recovered.controls);
    let kkt = kkt_residuals(&ir, &res);
    let costate = extract_costate(&ir, &res);
    Ok(Optimized { ir, solve: res, relaxed, polished, polish_change, recovered, tightness, kkt, costate })
}

/// A second optimum chosen on the optimal face.
#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    /// The program actually solved: the objective bound is its last row.
    pub program: LinearProgram,
    pub solve: SolveResult,
    /// Primary objective of the refined point.
    pub objective: f64,
    pub polished: RelaxedTrajectory,
    pub recovered: RecoveredControls,
    pub tightness: TightnessReport,
}

/// Among points of `ir` whose objective is within `rel_slack` (relative) of
/// `optimum`, finds one minimizing `secondary`. Interior-point optima sit in
/// the middle of the optimal face; this picks a particular optimum, such as
/// one that blocks a commodity for as long as possible.
pub fn refine_on_optimal_face(
    p: &Problem,
    ir: &ProgramIR,
    optimum: f64,
    rel_slack: f64,
    secondary: &[f64],
    opts: &SolveOptions,
) -> Result<Refined, PipelineError> {
    let mut lp = ir.lp.clone();
    let bound: alloc::vec::Vec<(usize, f64)> =
        lp.cost.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(j, &c)| (j, c)).collect();
    lp.add_ineq(bound, optimum + rel_slack * (1.0 + optimum.abs()));
    lp.cost = secondary.to_vec();
    let res = solve(&lp, opts);
    check_status(&res)?;
    let relaxed = RelaxedTrajectory::from_vector(&ir.layout, &res.x);
    let objective = ir.objective(&relaxed);
    let (polished, _) = polish(p, &relaxed);
    let recovered = recover_controls(&p.network, &p.fundamentals, &polished)?;
    let tightness = verify_tightness(p, &polished, &recovered.controls);
    Ok(Refined { program: lp, solve: res, objective, polished, recovered, tightness })
}

/// An optimum of `ir` whose total volume stays at or below `curve` at every
/// step, if the optimal face holds one. Typically `curve` is the uncontrolled
/// total volume: the face centre can rise above it early on and catch up later.
pub fn refine_below_curve(
    p: &Problem,
    ir: &ProgramIR,
    optimum: f64,
    curve: &[f64],
    opts: &SolveOptions,
) -> Result<Refined, PipelineError> {
    let mut face = ir.clone();
    for (t, &u) in curve.iter().enumerate().take(face.layout.n_steps + 1) {
        let lay = face.layout;
        face.lp.add_ineq((0..lay.n_slots).map(|s| (lay.x(t, s), 1.0)), u);
    }
    let zero = alloc::vec![0.0; face.layout.n_vars()];
    refine_on_optimal_face(p, &face, optimum, 1e-9, &zero, opts)
}
