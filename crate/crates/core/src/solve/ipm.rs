//! Homogeneous self-dual interior-point method for `A x = b, x >= 0`.
//!
//! The embedding adds a scaling variable `tau` and a gap variable `kappa`:
//!
//! ```text
//! A x - b tau = 0,   A'y + s - c tau = 0,   b'y - c'x - kappa = 0
//! ```
//!
//! A solution with `tau > 0` gives an optimal pair `(x, y, s) / tau`; one
//! with `kappa > 0` gives a certificate of infeasibility.

use alloc::vec;
use alloc::vec::Vec;

use super::ldl::{solve_refined, CscMatrix, NormalFactor};
use super::presolve::{Presolved, Trivial};
use super::{inf_norm, LinearProgram, Residuals, SolveOptions, SolveResult, SolveStatus};

/// Fraction of the distance to the boundary taken per step.
const STEP_FRACTION: f64 = 0.99;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

/// Linear algebra state of one iteration.
struct Newton<'a> {
    a: &'a CscMatrix,
    b: &'a [f64],
    c: &'a [f64],
    theta: Vec<f64>,
    /// `M^-1 (b + A theta c)`.
    p: Vec<f64>,
    /// `theta (A'p - c)`.
    u: Vec<f64>,
}

impl Newton<'_> {
    fn solve_m(&self, f: &NormalFactor, rhs: &[f64]) -> Vec<f64> {
        solve_refined(f, self.a, &self.theta, 0.0, rhs)
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        f: &NormalFactor,
        it: &Iterate,
        r1: &[f64],
        r2: &[f64],
        r3: f64,
        rxs: &[f64],
        rtk: f64,
    ) -> Direction {
        let n = it.x.len();
        // w = r2 - X^-1 rxs
        let w: Vec<f64> = (0..n).map(|j| r2[j] - rxs[j] / it.x[j]).collect();
        let tw: Vec<f64> = w.iter().zip(&self.theta).map(|(a, t)| a * t).collect();
        let mut rhs = self.a.mul(&tw);
        for (r, v) in rhs.iter_mut().zip(r1) {
            *r += v;
        }
        let q = self.solve_m(f, &rhs);
        let atq = self.a.mul_t(&q);
        let v: Vec<f64> = (0..n).map(|j| self.theta[j] * (atq[j] - w[j])).collect();
        let num = r3 + dot(self.b, &q) - dot(self.c, &v) - rtk / it.tau;
        let den = -dot(self.b, &self.p) + dot(self.c, &self.u) - it.kappa / it.tau;
        let dtau = num / den;
        let dy: Vec<f64> = self.p.iter().zip(&q).map(|(p, q)| p * dtau + q).collect();
        let dx: Vec<f64> = self.u.iter().zip(&v).map(|(u, v)| u * dtau + v).collect();
        let ds: Vec<f64> = (0..n).map(|j| (rxs[j] - it.s[j] * dx[j]) / it.x[j]).collect();
        let dkappa = (rtk - it.kappa * dtau) / it.tau;
        Direction { dx, dy, ds, dtau, dkappa }
    }
}

fn max_step(it: &Iterate, d: &Direction) -> f64 {
    let mut a = f64::INFINITY;
    let mut bound = |v: f64, dv: f64| {
        if dv < 0.0 {
            a = a.min(-v / dv);
        }
    };
    for (v, dv) in it.x.iter().zip(&d.dx) {
        bound(*v, *dv);
    }
    for (v, dv) in it.s.iter().zip(&d.ds) {
        bound(*v, *dv);
    }
    bound(it.tau, d.dtau);
    bound(it.kappa, d.dkappa);
    a
}

fn complementarity_after(it: &Iterate, d: &Direction, alpha: f64) -> f64 {
    let mut total = (it.tau + alpha * d.dtau) * (it.kappa + alpha * d.dkappa);
    for j in 0..it.x.len() {
        total += (it.x[j] + alpha * d.dx[j]) * (it.s[j] + alpha * d.ds[j]);
    }
    total
}

pub(crate) fn solve_presolved(lp: &LinearProgram, pre: &Presolved, opts: &SolveOptions) -> SolveResult {
    if let Some(t) = &pre.trivial {
        return trivial_result(lp, t);
    }
    let (m, n) = (pre.n_rows(), pre.n_cols());
    let (a, b, c) = (&pre.a, &pre.b[..], &pre.c[..]);
    let mut it = Iterate { x: vec![1.0; n], y: vec![0.0; m], s: vec![1.0; n], tau: 1.0, kappa: 1.0 };
    let mut factor = NormalFactor::new(a);
    let tol = opts.tol;
    let mut iter = 0;
    loop {
        let xs: Vec<f64> = it.x.iter().map(|v| v / it.tau).collect();
        let ys: Vec<f64> = it.y.iter().map(|v| v / it.tau).collect();
        let (ox, oy, oeta) = pre.postsolve(lp, &xs, &ys);
        let res = lp.residuals(&ox, &oy, &oeta);
        if res.primal <= tol && res.dual <= tol && res.gap <= tol {
            return finish(lp, SolveStatus::Optimal, ox, oy, oeta, iter, res);
        }
        let bty = dot(b, &it.y);
        let ctx = dot(c, &it.x);
        if it.tau < it.kappa {
            if bty > 0.0 {
                let mut r = a.mul_t(&it.y);
                for (v, s) in r.iter_mut().zip(&it.s) {
                    *v += s;
                }
                let cert = inf_norm(&r) / bty;
                if cert <= tol {
                    let status = SolveStatus::Infeasible { certificate_residual: cert };
                    return finish(lp, status, ox, oy, oeta, iter, res);
                }
            }
            if ctx < 0.0 {
                let cert = inf_norm(&a.mul(&it.x)) / -ctx;
                if cert <= tol {
                    let mut ray = pre.primal(lp, &it.x, false);
                    let norm = inf_norm(&ray);
                    if norm > 0.0 {
                        ray.iter_mut().for_each(|v| *v /= norm);
                    }
                    let status = SolveStatus::Unbounded { ray, certificate_residual: cert };
                    return finish(lp, status, ox, oy, oeta, iter, res);
                }
            }
        }
        if iter >= opts.max_iters {
            return finish(lp, SolveStatus::IterationLimit, ox, oy, oeta, iter, res);
        }
        iter += 1;

        let ax = a.mul(&it.x);
        let aty = a.mul_t(&it.y);
        let rp: Vec<f64> = (0..m).map(|i| b[i] * it.tau - ax[i]).collect();
        let rd: Vec<f64> = (0..n).map(|j| c[j] * it.tau - aty[j] - it.s[j]).collect();
        let rg = bty - ctx - it.kappa;
        let mu = (dot(&it.x, &it.s) + it.tau * it.kappa) / (n as f64 + 1.0);

        let theta: Vec<f64> = it.x.iter().zip(&it.s).map(|(x, s)| x / s).collect();
        factor.factor(&theta, 0.0);
        let tc: Vec<f64> = theta.iter().zip(c).map(|(t, c)| t * c).collect();
        let mut rhs_p = a.mul(&tc);
        for (r, v) in rhs_p.iter_mut().zip(b) {
            *r += v;
        }
        let mut newton = Newton { a, b, c, theta, p: Vec::new(), u: Vec::new() };
        newton.p = newton.solve_m(&factor, &rhs_p);
        let atp = a.mul_t(&newton.p);
        newton.u = (0..n).map(|j| newton.theta[j] * (atp[j] - c[j])).collect();

        // predictor
        let rxs: Vec<f64> = it.x.iter().zip(&it.s).map(|(x, s)| -x * s).collect();
        let rtk = -it.tau * it.kappa;
        let aff = newton.direction(&factor, &it, &rp, &rd, rg, &rxs, rtk);
        let alpha_aff = max_step(&it, &aff).min(1.0);
        let mu_aff = complementarity_after(&it, &aff, alpha_aff) / (n as f64 + 1.0);
        let r = mu_aff / mu;
        let sigma = (r * r * r).clamp(0.0, 1.0);

        // corrector
        let eta = 1.0 - sigma;
        let r1: Vec<f64> = rp.iter().map(|v| eta * v).collect();
        let r2: Vec<f64> = rd.iter().map(|v| eta * v).collect();
        let rxs: Vec<f64> = (0..n).map(|j| sigma * mu - it.x[j] * it.s[j] - aff.dx[j] * aff.ds[j]).collect();
        let rtk = sigma * mu - it.tau * it.kappa - aff.dtau * aff.dkappa;
        let d = newton.direction(&factor, &it, &r1, &r2, eta * rg, &rxs, rtk);
        let alpha = (STEP_FRACTION * max_step(&it, &d)).min(1.0);
        if !alpha.is_finite() || alpha <= 0.0 || d.dtau.is_nan() {
            return finish(lp, SolveStatus::IterationLimit, ox, oy, oeta, iter, res);
        }
        for j in 0..n {
            it.x[j] += alpha * d.dx[j];
            it.s[j] += alpha * d.ds[j];
        }
        for i in 0..m {
            it.y[i] += alpha * d.dy[i];
        }
        it.tau += alpha * d.dtau;
        it.kappa += alpha * d.dkappa;
    }
}

fn finish(
    lp: &LinearProgram,
    status: SolveStatus,
    x: Vec<f64>,
    y: Vec<f64>,
    eta: Vec<f64>,
    iterations: usize,
    residuals: Residuals,
) -> SolveResult {
    SolveResult {
        status,
        objective: lp.objective(&x),
        dual_objective: lp.dual_objective(&y, &eta),
        reduced_costs: lp.reduced_costs(&y, &eta),
        x,
        y,
        eta,
        iterations,
        residuals,
    }
}

fn trivial_result(lp: &LinearProgram, t: &Trivial) -> SolveResult {
    let x = vec![0.0; lp.n_vars()];
    let y = vec![0.0; lp.eq_rhs.len()];
    let eta = vec![0.0; lp.ineq_rhs.len()];
    let res = lp.residuals(&x, &y, &eta);
    let status = match *t {
        Trivial::Infeasible => SolveStatus::Infeasible { certificate_residual: 0.0 },
        Trivial::Unbounded { col, direction } => {
            let mut ray = vec![0.0; lp.n_vars()];
            ray[col] = direction;
            SolveStatus::Unbounded { ray, certificate_residual: 0.0 }
        }
    };
    finish(lp, status, x, y, eta, 0, res)
}
