//! Alternating-regressions engine shared by the plain and covariate-adjusted
//! fits. Observations are stored as per-subject design rows, so the plain
//! model (rows `π(T_ij)`) and the covariate model (rows `μ(X_i) ⊗ π(T_ij)`)
//! run through identical code.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSystem, InnerProduct};
use crate::dataset::SparseDataset;
use crate::error::{Error, Result};
use crate::linalg::solve_normal;
use crate::par;

/// Regressor energy below which a subject's score regression is skipped.
pub const DEGENERATE_ENERGY: f64 = 1e-12;

/// Residual energy, relative to the reference energy, below which no
/// component is extracted.
const NULL_ENERGY: f64 = 1e-20;

/// RNG stream for one (component, restart) pair.
pub fn stream_rng(seed: u64, component: usize, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((component as u64) << 32) | restart as u64);
    rng
}

/// Linear restrictions on the coefficients of the component being fitted.
#[derive(Debug, Clone, Copy, Default)]
pub struct Constraints<'a> {
    /// Earlier components, orthonormal under the metric; the new one must
    /// be orthogonal to each of them.
    pub previous: &'a [DVector<f64>],
    /// Vectors `c` with `cᵀα = 0` required.
    pub fixed: &'a [DVector<f64>],
}

impl<'a> Constraints<'a> {
    pub fn orthogonal_to(previous: &'a [DVector<f64>]) -> Self {
        Constraints { previous, fixed: &[] }
    }

    /// Normal vectors of all restrictions, in the Euclidean sense.
    fn normals(&self, metric: &InnerProduct) -> Vec<DVector<f64>> {
        let g = metric.gram();
        self.previous.iter().map(|p| g * p).chain(self.fixed.iter().cloned()).collect()
    }
}

/// Orthonormal basis (columns) of `{α : nᵀα = 0 for every n in normals}`.
fn admissible_basis(normals: &[DVector<f64>], p: usize) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(p, p);
    for n in normals {
        let len = n.norm();
        if len > 0.0 {
            m.ger(1.0 / (len * len), n, n, 1.0);
        }
    }
    let eig = nalgebra::SymmetricEigen::new(m);
    let keep: Vec<usize> = (0..p).filter(|&j| eig.eigenvalues[j] <= 1e-10).collect();
    if keep.is_empty() {
        return Err(Error::Degenerate("constraints leave no admissible coefficients".into()));
    }
    Ok(DMatrix::from_columns(&keep.iter().map(|&j| eig.eigenvectors.column(j).into_owned()).collect::<Vec<_>>()))
}

#[derive(Debug, Clone)]
pub struct Design {
    rows: Arc<Vec<DMatrix<f64>>>,
    values: Vec<DVector<f64>>,
    p: usize,
}

impl Design {
    pub fn new(rows: Vec<DMatrix<f64>>, values: Vec<DVector<f64>>, p: usize) -> Self {
        debug_assert!(rows.iter().zip(&values).all(|(r, v)| r.nrows() == v.len() && r.ncols() == p));
        Design { rows: Arc::new(rows), values, p }
    }

    pub fn from_basis(data: &SparseDataset, basis: &BasisSystem) -> Result<Self> {
        let p = basis.dim();
        let mut rows = Vec::with_capacity(data.len());
        let mut values = Vec::with_capacity(data.len());
        for s in data.subjects() {
            let mut m = DMatrix::zeros(s.len(), p);
            for (j, &t) in s.times.iter().enumerate() {
                let (first, local) = basis.evaluate_local(t)?;
                for (k, v) in local.into_iter().enumerate() {
                    m[(j, first + k)] = v;
                }
            }
            rows.push(m);
            values.push(DVector::from_column_slice(&s.values));
        }
        Ok(Design::new(rows, values, p))
    }

    pub fn n_subjects(&self) -> usize {
        self.values.len()
    }

    pub fn total_obs(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn rows(&self, i: usize) -> &DMatrix<f64> {
        &self.rows[i]
    }

    pub fn values(&self, i: usize) -> &DVector<f64> {
        &self.values[i]
    }

    pub fn with_values(&self, values: Vec<DVector<f64>>) -> Design {
        Design { rows: Arc::clone(&self.rows), values, p: self.p }
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_squared()).sum()
    }

    /// Weighted least squares for the coefficients given scores:
    /// `(Σ r_i² XᵢᵀXᵢ) α = Σ r_i Xᵢᵀyᵢ`.
    pub fn alpha_step(&self, scores: &DVector<f64>) -> Result<DVector<f64>> {
        if scores.iter().all(|&r| r == 0.0) {
            return Err(Error::Degenerate("all scores are zero".into()));
        }
        self.weighted_ls(scores, "coefficient update")
            .map_err(|e| Error::Degenerate(e.to_string()))
    }

    /// Coefficient update minimized over the coefficients satisfying
    /// `constraints`, by solving the normal equations on an orthonormal
    /// basis of the admissible subspace.
    pub fn alpha_step_within(
        &self,
        scores: &DVector<f64>,
        metric: &InnerProduct,
        constraints: Constraints<'_>,
    ) -> Result<DVector<f64>> {
        let normals = constraints.normals(metric);
        if normals.is_empty() {
            return self.alpha_step(scores);
        }
        if scores.iter().all(|&r| r == 0.0) {
            return Err(Error::Degenerate("all scores are zero".into()));
        }
        let basis = admissible_basis(&normals, self.p)?;
        let (a, b) = self.normal_equations(scores);
        let lhs = basis.transpose() * a * &basis;
        let rhs = basis.transpose() * b;
        let beta = solve_normal(&lhs, &rhs, "coefficient update").map_err(|e| Error::Degenerate(e.to_string()))?;
        Ok(basis * beta)
    }

    /// Same subjects with every design row mapped through `r`
    /// (`p × q`), giving a `q`-column design.
    pub fn restrict(&self, r: &DMatrix<f64>) -> Design {
        let rows = self.rows.iter().map(|x| x * r).collect();
        Design::new(rows, self.values.clone(), r.ncols())
    }

    /// `(Σ r_i² XᵢᵀXᵢ, Σ r_i Xᵢᵀyᵢ)`.
    fn normal_equations(&self, scores: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(self.p, self.p);
        let mut b = DVector::zeros(self.p);
        for (i, x) in self.rows.iter().enumerate() {
            let r = scores[i];
            if r == 0.0 {
                continue;
            }
            a.gemm_tr(r * r, x, x, 1.0);
            b.gemv_tr(r, x, &self.values[i], 1.0);
        }
        (a, b)
    }

    /// The same least-squares solve as [`Design::alpha_step`], reporting
    /// singular normal matrices as rank deficiency.
    pub fn weighted_ls(&self, scores: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
        let (a, b) = self.normal_equations(scores);
        solve_normal(&a, &b, what)
    }

    /// Independent per-subject regressions of values on `X_i·alpha`.
    /// Returns the scores and the indices of subjects whose regressor energy
    /// was below [`DEGENERATE_ENERGY`].
    pub fn score_step(&self, alpha: &DVector<f64>) -> (DVector<f64>, Vec<usize>) {
        let per: Vec<(f64, bool)> = par::map_range(self.n_subjects(), |i| {
            let f = &self.rows[i] * alpha;
            let ff = f.norm_squared();
            if ff < DEGENERATE_ENERGY {
                (0.0, true)
            } else {
                (f.dot(&self.values[i]) / ff, false)
            }
        });
        let degenerate = per.iter().enumerate().filter(|(_, p)| p.1).map(|(i, _)| i).collect();
        (DVector::from_iterator(per.len(), per.iter().map(|p| p.0)), degenerate)
    }

    /// Mean squared residual over all observations.
    pub fn objective(&self, alpha: &DVector<f64>, scores: &DVector<f64>) -> f64 {
        let per = par::map_range(self.n_subjects(), |i| {
            (&self.values[i] - (&self.rows[i] * alpha) * scores[i]).norm_squared()
        });
        per.iter().sum::<f64>() / self.total_obs() as f64
    }

    pub fn residualize(&self, alpha: &DVector<f64>, scores: &DVector<f64>) -> Design {
        let values = par::map_range(self.n_subjects(), |i| {
            &self.values[i] - (&self.rows[i] * alpha) * scores[i]
        });
        self.with_values(values)
    }
}

/// Iteration controls for the alternating regressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationControl {
    pub delta1: f64,
    pub delta2: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

/// Outcome of extracting one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFit {
    pub alpha: DVector<f64>,
    pub scores: DVector<f64>,
    pub iterations: usize,
    pub objective: f64,
    /// Objective after every iteration of the selected run.
    pub trace: Vec<f64>,
    pub restart: usize,
    pub failed_restarts: usize,
    pub degenerate_subjects: Vec<usize>,
    pub warnings: Vec<String>,
}

enum RunOutcome {
    Converged(ComponentFit),
    Exhausted { trace: Vec<f64> },
}

/// Orients a component so that `sign·alpha ≥ 0`; exact ties go to the sign
/// of the largest-magnitude coefficient.
pub fn apply_sign_convention(
    alpha: &mut DVector<f64>,
    scores: &mut DVector<f64>,
    sign: &DVector<f64>,
) {
    let s = sign.dot(alpha);
    let flip = if s.abs() <= 1e-12 * sign.norm() {
        let imax = alpha.iamax();
        alpha[imax] < 0.0
    } else {
        s < 0.0
    };
    if flip {
        alpha.neg_mut();
        scores.neg_mut();
    }
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn run_once(
    design: &Design,
    metric: &InnerProduct,
    constraints: Constraints<'_>,
    ctl: &IterationControl,
    component: usize,
    restart: usize,
) -> Result<RunOutcome> {
    let n = design.n_subjects();
    let mut rng = stream_rng(ctl.seed, component, restart);
    let mut scores = DVector::from_iterator(n, (0..n).map(|_| rng.random::<f64>()));
    let scale = design.energy() / design.total_obs() as f64;
    let mut alpha_prev: Option<DVector<f64>> = None;
    let mut obj_prev: Option<f64> = None;
    let mut trace = Vec::new();
    for it in 1..=ctl.max_iter {
        let raw = design.alpha_step_within(&scores, metric, constraints)?;
        let std = metric.standardize(&raw)?;
        let alpha = metric.orthogonalize(&std, constraints.previous)?;
        let (new_scores, degenerate) = design.score_step(&alpha);
        let obj = design.objective(&alpha, &new_scores);
        trace.push(obj);

        let score_mag = new_scores.amax().max(scores.amax());
        let score_change = if score_mag > 0.0 {
            max_abs_diff(&new_scores, &scores) / score_mag
        } else {
            0.0
        };
        let alpha_change = alpha_prev.as_ref().map_or(f64::INFINITY, |a| max_abs_diff(a, &alpha));
        let obj_change = obj_prev.map_or(f64::INFINITY, |o| (o - obj).abs());
        scores = new_scores;
        let converged = alpha_change.max(score_change) < ctl.delta1 && obj_change <= ctl.delta2 * scale;
        if converged {
            return Ok(RunOutcome::Converged(ComponentFit {
                alpha,
                scores,
                iterations: it,
                objective: obj,
                trace,
                restart,
                failed_restarts: 0,
                degenerate_subjects: degenerate,
                warnings: Vec::new(),
            }));
        }
        alpha_prev = Some(alpha);
        obj_prev = Some(obj);
    }
    Ok(RunOutcome::Exhausted { trace })
}

/// Extracts one component from (residualized) data by alternating
/// regressions, keeping the best of `ctl.restarts` random initializations.
///
/// `reference_energy` is the total squared magnitude of the data before any
/// centering; when the remaining energy is negligible relative to it, a
/// zero-score component is returned with a warning instead of iterating.
pub fn fit_component(
    design: &Design,
    metric: &InnerProduct,
    sign: &DVector<f64>,
    constraints: Constraints<'_>,
    ctl: &IterationControl,
    component: usize,
    reference_energy: f64,
) -> Result<ComponentFit> {
    if design.total_obs() < design.dim() {
        return Err(Error::InsufficientData { needed: design.dim(), got: design.total_obs() });
    }
    if ctl.restarts == 0 || ctl.max_iter == 0 {
        return Err(Error::InvalidInput("restarts and max_iter must be positive".into()));
    }
    let energy = design.energy();
    if energy <= NULL_ENERGY * reference_energy {
        return null_component(design, metric, sign, constraints.previous, "no remaining variation to explain");
    }
    let runs = par::map_range(ctl.restarts, |r| run_once(design, metric, constraints, ctl, component, r));
    let mut best: Option<ComponentFit> = None;
    let mut best_trace: Option<Vec<f64>> = None;
    let mut failed = 0;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok(RunOutcome::Converged(fit)) => {
                if best.as_ref().is_none_or(|b| fit.objective < b.objective) {
                    best = Some(fit);
                }
            }
            Ok(RunOutcome::Exhausted { trace }) => {
                failed += 1;
                let last = trace.last().cloned().unwrap_or(f64::INFINITY);
                if best_trace.as_ref().is_none_or(|t| last < *t.last().unwrap_or(&f64::INFINITY)) {
                    best_trace = Some(trace);
                }
            }
            Err(e @ Error::Degenerate(_)) => {
                failed += 1;
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    match (best, best_trace) {
        (Some(mut fit), _) => {
            fit.failed_restarts = failed;
            apply_sign_convention(&mut fit.alpha, &mut fit.scores, sign);
            if !fit.degenerate_subjects.is_empty() {
                fit.warnings.push(format!(
                    "component {}: {} subjects with negligible regressor energy received score 0",
                    component + 1,
                    fit.degenerate_subjects.len()
                ));
            }
            Ok(fit)
        }
        (None, Some(trace)) => Err(Error::NonConvergence {
            component: component + 1,
            max_iter: ctl.max_iter,
            best_objective: trace.last().cloned().unwrap_or(f64::NAN),
            trace,
        }),
        (None, None) => Err(last_err.unwrap_or_else(|| Error::Degenerate("no restart succeeded".into()))),
    }
}

fn null_component(
    design: &Design,
    metric: &InnerProduct,
    sign: &DVector<f64>,
    previous: &[DVector<f64>],
    why: &str,
) -> Result<ComponentFit> {
    let p = design.dim();
    let mut alpha = None;
    for j in 0..p {
        let mut e = DVector::zeros(p);
        e[j] = 1.0;
        if let Ok(a) = metric.orthogonalize(&e, previous) {
            alpha = Some(a);
            break;
        }
    }
    let mut alpha = alpha.ok_or_else(|| Error::Degenerate("no direction left for a null component".into()))?;
    let (mut scores, degenerate) = design.score_step(&alpha);
    apply_sign_convention(&mut alpha, &mut scores, sign);
    let objective = design.objective(&alpha, &scores);
    Ok(ComponentFit {
        alpha,
        scores,
        iterations: 0,
        objective,
        trace: vec![objective],
        restart: 0,
        failed_restarts: 0,
        degenerate_subjects: degenerate,
        warnings: vec![why.to_string()],
    })
}
