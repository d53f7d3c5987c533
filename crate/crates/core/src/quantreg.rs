//! Linear quantile regression by a primal-dual interior-point method.
//!
//! The check-loss problem `min_β Σ ρ_τ(y_i − x_iᵀβ)` is solved through its
//! bounded dual `max yᵀa  s.t.  Xᵀa = (1−τ)Xᵀ1, 0 ≤ a ≤ 1`, with Mehrotra
//! predictor-corrector steps. The coefficients are recovered from the dual
//! multipliers of the equality constraints and then polished to the nearest
//! basic solution when that attains a lower loss.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::solve_normal;

const STEP_FRACTION: f64 = 0.99995;
const MAX_ITER: usize = 200;

/// Fitted quantile regression.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFit {
    pub coefficients: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Check loss `ρ_τ(u) = u(τ − 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Total check loss of a coefficient vector.
pub fn objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, tau: f64) -> f64 {
    let r = y - x * beta;
    r.iter().map(|&u| check_loss(u, tau)).sum()
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut step = f64::INFINITY;
    for (a, d) in v.iter().zip(dv.iter()) {
        if *d < 0.0 {
            step = step.min(-a / d);
        }
    }
    step
}

/// Minimizes `Σ ρ_τ(y_i − x_iᵀβ)` over `β` for the `n×p` design `x`.
pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, tau: f64) -> Result<QuantileFit> {
    let (n, p) = x.shape();
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("quantile level {tau} outside (0, 1)")));
    }
    if y.len() != n {
        return Err(Error::InvalidInput(format!("{} responses for {n} design rows", y.len())));
    }
    if n < p || p == 0 {
        return Err(Error::InsufficientData { needed: p.max(1), got: n });
    }
    let xt = x.transpose();
    let xtx = &xt * x;
    let scale = y.amax().max(1.0);

    // Primal (dual of the original problem) variables a, slack s = 1 − a.
    let mut a = DVector::from_element(n, 1.0 - tau);
    let mut s = DVector::from_element(n, tau);
    let c = -y;
    let mut dual = solve_normal(&xtx, &(&xt * &c), "quantile regression start")?;
    let r0 = &c - x * &dual;
    let shift = (r0.abs().sum() / n as f64).max(scale * 1e-6);
    let mut z = r0.map(|v| v.max(0.0) + shift);
    let mut w = r0.map(|v| (-v).max(0.0) + shift);

    let mut iterations = 0;
    while iterations < MAX_ITER {
        let gap = a.dot(&z) + s.dot(&w);
        let primal: f64 = c.dot(&a);
        if gap <= 1e-12 * (1.0 + primal.abs()) {
            break;
        }
        iterations += 1;
        let q = DVector::from_fn(n, |i, _| 1.0 / (z[i] / a[i] + w[i] / s[i]));
        let mut aqa = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = x.row(i);
            aqa.ger(q[i], &row.transpose(), &row.transpose(), 1.0);
        }
        let rd = &c - x * &dual - &z + &w;
        let Some(step) = StepSolver::new(aqa) else {
            break;
        };
        let direction = |rx: &DVector<f64>, rs: &DVector<f64>| {
            let rt = DVector::from_fn(n, |i, _| rd[i] - rx[i] / a[i] + rs[i] / s[i]);
            let rhs = &xt * rt.component_mul(&q);
            let dy = step.solve(&rhs);
            let dx = (x * &dy - &rt).component_mul(&q);
            let ds = -&dx;
            let dz = DVector::from_fn(n, |i, _| (rx[i] - z[i] * dx[i]) / a[i]);
            let dw = DVector::from_fn(n, |i, _| (rs[i] - w[i] * ds[i]) / s[i]);
            (dx, ds, dy, dz, dw)
        };
        let rx = -a.component_mul(&z);
        let rs = -s.component_mul(&w);
        let (dx, ds, _, dz, dw) = direction(&rx, &rs);
        let ap = (STEP_FRACTION * max_step(&a, &dx).min(max_step(&s, &ds))).min(1.0);
        let ad = (STEP_FRACTION * max_step(&z, &dz).min(max_step(&w, &dw))).min(1.0);
        let affine = (&a + ap * &dx).dot(&(&z + ad * &dz)) + (&s + ap * &ds).dot(&(&w + ad * &dw));
        let sigma = (affine / gap).powi(3);
        let mu = sigma * gap / (2 * n) as f64;
        let rx = DVector::from_fn(n, |i, _| mu - a[i] * z[i] - dx[i] * dz[i]);
        let rs = DVector::from_fn(n, |i, _| mu - s[i] * w[i] - ds[i] * dw[i]);
        let (dx, ds, dy, dz, dw) = direction(&rx, &rs);
        let ap = (STEP_FRACTION * max_step(&a, &dx).min(max_step(&s, &ds))).min(1.0);
        let ad = (STEP_FRACTION * max_step(&z, &dz).min(max_step(&w, &dw))).min(1.0);
        a += ap * dx;
        s += ap * ds;
        dual += ad * dy;
        z += ad * dz;
        w += ad * dw;
    }
    let beta = -dual;
    let mut best_obj = objective(x, y, &beta, tau);
    let mut best = beta;
    if let Some(vertex) = basic_solution(x, y, &best) {
        let obj = objective(x, y, &vertex, tau);
        if obj <= best_obj {
            best_obj = obj;
            best = vertex;
        }
    }
    if !best_obj.is_finite() {
        return Err(Error::Degenerate("quantile regression produced a non-finite fit".into()));
    }
    Ok(QuantileFit { coefficients: best, objective: best_obj, iterations })
}

/// Cholesky factor of an interior-point normal matrix. Its conditioning
/// degrades as the iterates approach a vertex, so a ridge of `1e-14` times
/// the largest diagonal entry is added.
struct StepSolver(nalgebra::Cholesky<f64, nalgebra::Dyn>);

impl StepSolver {
    fn new(mut m: DMatrix<f64>) -> Option<Self> {
        let ridge = 1e-14 * m.diagonal().max();
        if !(ridge > 0.0 && ridge.is_finite()) {
            return None;
        }
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        m.cholesky().map(StepSolver)
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.0.solve(b)
    }
}

/// Interpolating fit through the `p` observations with the smallest absolute
/// residuals, when those rows are linearly independent.
fn basic_solution(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> Option<DVector<f64>> {
    let p = x.ncols();
    let r = y - x * beta;
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&i, &j| r[i].abs().total_cmp(&r[j].abs()));
    let rows: Vec<usize> = order.into_iter().take(p).collect();
    let sub = DMatrix::from_fn(p, p, |i, j| x[(rows[i], j)]);
    let rhs = DVector::from_fn(p, |i, _| y[rows[i]]);
    let lu = sub.lu();
    lu.solve(&rhs).filter(|b| b.iter().all(|v| v.is_finite()))
}
