//! Covariate-adjusted decomposition
//! `Y_i(t) ≈ U(t, X_i) + Σ_k r_ik φ_k(t, X_i)` with `φ_k(t, x) = π(t)ᵀ A_k μ(x)`.
//!
//! Every coefficient matrix `A_k` (basis dim × ℓ_x) is handled through its
//! column-major vectorization, so observation rows are `μ(X_i) ⊗ π(T_ij)`
//! and the empirical inner product
//! `⟨A, B⟩ = (1/N) Σ_i μ(X_i)ᵀ Aᵀ G B μ(X_i)` becomes the Gram-weighted
//! product with matrix `M ⊗ G`, `M = (1/N) Σ_i μ(X_i) μ(X_i)ᵀ`. The plain
//! alternating-regressions engine then applies unchanged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, BasisSystem, Domain, InnerProduct};
use crate::dataset::{SparseDataset, Subject};
use crate::engine::{self, Constraints, Design};
use crate::error::{Error, Result};
use crate::linalg::solve_normal;
use crate::par;
use crate::rpca::{extract_components, ConvergenceEntry, FitConfig, FixedConstraints};

/// Covariate functions `μ(x)`, evaluated on the standardized covariate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuSpec {
    /// `(1, z, …, z^degree)`; degree 0 is intercept-only, 1 the default.
    Polynomial { degree: usize },
    /// Clamped B-spline basis in `z` with quantile knots.
    BSpline { degree: usize, num_interior: usize },
}

impl Default for MuSpec {
    fn default() -> Self {
        MuSpec::Polynomial { degree: 1 }
    }
}

impl MuSpec {
    fn needs_variation(&self) -> bool {
        !matches!(self, MuSpec::Polynomial { degree: 0 })
    }
}

/// Standardization applied to the raw covariate: `z = (x − mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateSummary {
    pub mean: f64,
    pub scale: f64,
    pub min: f64,
    pub max: f64,
}

impl CovariateSummary {
    pub fn from_values(x: &[f64]) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::InvalidInput("no covariate values".into()));
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = if x.len() > 1 {
            x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(CovariateSummary { mean, scale, min, max })
    }

    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.scale
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

/// Evaluable covariate functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuFunctions {
    pub spec: MuSpec,
    pub summary: CovariateSummary,
    pub z_basis: Option<BasisSystem>,
}

impl MuFunctions {
    fn new(spec: MuSpec, summary: CovariateSummary, x: &[f64]) -> Result<Self> {
        let z_basis = match spec {
            MuSpec::Polynomial { .. } => None,
            MuSpec::BSpline { degree, num_interior } => {
                let z: Vec<f64> = x.iter().map(|&v| summary.standardize(v)).collect();
                let dom = Domain::new(summary.standardize(summary.min), summary.standardize(summary.max))?;
                Some(build_basis(dom, degree, num_interior, &z)?)
            }
        };
        Ok(MuFunctions { spec, summary, z_basis })
    }

    pub fn len(&self) -> usize {
        match (&self.spec, &self.z_basis) {
            (MuSpec::Polynomial { degree }, _) => degree + 1,
            (_, Some(b)) => b.dim(),
            _ => unreachable!("B-spline covariate functions without a basis"),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `μ` at a raw covariate value.
    pub fn eval(&self, x: f64) -> Result<DVector<f64>> {
        self.eval_z(self.summary.standardize(x))
    }

    fn eval_z(&self, z: f64) -> Result<DVector<f64>> {
        match (&self.spec, &self.z_basis) {
            (MuSpec::Polynomial { degree }, _) => {
                let mut v = DVector::zeros(degree + 1);
                let mut p = 1.0;
                for c in 0..=*degree {
                    v[c] = p;
                    p *= z;
                }
                Ok(v)
            }
            (_, Some(b)) => b.evaluate(z),
            _ => unreachable!("B-spline covariate functions without a basis"),
        }
    }

    /// `μ` at the training covariate mean, used for the sign convention.
    fn at_center(&self) -> Result<DVector<f64>> {
        match &self.z_basis {
            Some(b) => {
                let d = b.domain();
                self.eval_z(0.0_f64.clamp(d.lo, d.hi))
            }
            None => self.eval_z(0.0),
        }
    }

    /// Columns of a coefficient matrix that multiply non-constant functions
    /// of the covariate. Only defined for polynomial `μ`.
    pub fn covariate_columns(&self) -> Option<std::ops::Range<usize>> {
        match self.spec {
            MuSpec::Polynomial { degree } if degree >= 1 => Some(1..degree + 1),
            _ => None,
        }
    }
}

fn kron_row(mu: &DVector<f64>, pi_first: usize, pi_local: &[f64], dim: usize, out: &mut [f64]) {
    for (c, m) in mu.iter().enumerate() {
        for (k, v) in pi_local.iter().enumerate() {
            out[c * dim + pi_first + k] = m * v;
        }
    }
}

fn covariate_design(data: &SparseDataset, basis: &BasisSystem, mu: &MuFunctions) -> Result<(Design, Vec<DVector<f64>>)> {
    let dim = basis.dim();
    let lx = mu.len();
    let p = dim * lx;
    let mut rows = Vec::with_capacity(data.len());
    let mut values = Vec::with_capacity(data.len());
    let mut mus = Vec::with_capacity(data.len());
    for s in data.subjects() {
        let x = s.covariate.ok_or_else(|| Error::InvalidInput(format!("subject {} has no covariate", s.id)))?;
        let m = mu.eval(x)?;
        let mut r = DMatrix::zeros(s.len(), p);
        let mut buf = vec![0.0; p];
        for (j, &t) in s.times.iter().enumerate() {
            let (first, local) = basis.evaluate_local(t)?;
            buf.iter_mut().for_each(|b| *b = 0.0);
            kron_row(&m, first, &local, dim, &mut buf);
            for (c, v) in buf.iter().enumerate() {
                r[(j, c)] = *v;
            }
        }
        rows.push(r);
        values.push(DVector::from_column_slice(&s.values));
        mus.push(m);
    }
    Ok((Design::new(rows, values, p), mus))
}

fn empirical_metric(basis: &BasisSystem, mus: &[DVector<f64>]) -> Result<InnerProduct> {
    let lx = mus[0].len();
    let mut m = DMatrix::zeros(lx, lx);
    for mu in mus {
        m += mu * mu.transpose();
    }
    m /= mus.len() as f64;
    InnerProduct::new(m.kronecker(basis.gram())).map_err(|_| {
        Error::Degenerate("empirical covariate inner product is singular; covariate lacks variation".into())
    })
}

fn to_matrix(v: &DVector<f64>, dim: usize, lx: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(dim, lx, v.as_slice())
}

/// Fitted covariate-adjusted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateModel {
    pub basis: BasisSystem,
    pub mu: MuFunctions,
    /// Mean surface coefficients (basis dim × ℓ_x), standardized covariate scale.
    pub mean_coeffs: DMatrix<f64>,
    pub alphas: Vec<DMatrix<f64>>,
    pub subject_ids: Vec<String>,
    pub scores: DMatrix<f64>,
    pub r_squared: Vec<f64>,
    pub convergence_log: Vec<ConvergenceEntry>,
    pub warnings: Vec<String>,
    pub seed: u64,
    pub config: FitConfig,
    /// `(1/N) Σ μ(X_i)μ(X_i)ᵀ` of the training sample.
    pub mu_second_moment: DMatrix<f64>,
}

impl CovariateModel {
    pub fn n_components(&self) -> usize {
        self.alphas.len()
    }

    fn metric(&self) -> Result<InnerProduct> {
        InnerProduct::new(self.mu_second_moment.kronecker(self.basis.gram()))
    }

    /// Empirical inner product of components `k` and `l`.
    pub fn empirical_inner(&self, k: usize, l: usize) -> Result<f64> {
        let m = self.metric()?;
        let a = DVector::from_column_slice(self.alphas[k].as_slice());
        let b = DVector::from_column_slice(self.alphas[l].as_slice());
        Ok(m.inner(&a, &b))
    }

    /// `U(t, x)`.
    pub fn mean_value(&self, t: f64, x: f64) -> Result<f64> {
        let coef = &self.mean_coeffs * self.mu.eval(x)?;
        self.basis.spline_value(&coef, t)
    }

    /// `φ_k(t, x)` for zero-based `k`.
    pub fn component_value(&self, k: usize, t: f64, x: f64) -> Result<f64> {
        let coef = &self.alphas[k] * self.mu.eval(x)?;
        self.basis.spline_value(&coef, t)
    }

    /// Joint least-squares scores of a subject, which must carry a covariate.
    pub fn project(&self, subject: &Subject) -> Result<DVector<f64>> {
        let x = subject
            .covariate
            .ok_or_else(|| Error::InvalidInput(format!("subject {} has no covariate", subject.id)))?;
        let k = self.n_components();
        let m = subject.len();
        if m < k {
            return Err(Error::InsufficientData { needed: k, got: m });
        }
        let mu = self.mu.eval(x)?;
        let mean_c = &self.mean_coeffs * &mu;
        let comp_c: Vec<DVector<f64>> = self.alphas.iter().map(|a| a * &mu).collect();
        let mut f = DMatrix::zeros(m, k);
        let mut y = DVector::zeros(m);
        for (j, (&t, &v)) in subject.times.iter().zip(&subject.values).enumerate() {
            y[j] = v - self.basis.spline_value(&mean_c, t)?;
            for (kk, c) in comp_c.iter().enumerate() {
                f[(j, kk)] = self.basis.spline_value(c, t)?;
            }
        }
        solve_normal(&(f.transpose() * &f), &(f.transpose() * y), "score projection")
            .map_err(|e| Error::Degenerate(format!("subject {}: {e}", subject.id)))
    }

    /// Mean surface coefficients on the raw covariate scale for polynomial
    /// `μ`: column `c` multiplies `x^c`.
    pub fn raw_scale_mean_coeffs(&self) -> Option<DMatrix<f64>> {
        raw_scale(&self.mean_coeffs, &self.mu)
    }
}

/// Re-expresses `A·(1, z, …, z^d)` with `z = (x − a)/b` as `B·(1, x, …, x^d)`.
fn raw_scale(a: &DMatrix<f64>, mu: &MuFunctions) -> Option<DMatrix<f64>> {
    let MuSpec::Polynomial { degree } = mu.spec else {
        return None;
    };
    let (m, s) = (mu.summary.mean, mu.summary.scale);
    let mut out = DMatrix::zeros(a.nrows(), degree + 1);
    // z^c = Σ_j C(c, j) x^j (−m)^{c−j} / s^c
    for c in 0..=degree {
        for j in 0..=c {
            let coef = binomial(c, j) * (-m).powi((c - j) as i32) / s.powi(c as i32);
            for r in 0..a.nrows() {
                out[(r, j)] += a[(r, c)] * coef;
            }
        }
    }
    Some(out)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Fits the covariate-adjusted model.
pub fn fit_covariate(data: &SparseDataset, basis: &BasisSystem, mu_spec: MuSpec, config: &FitConfig) -> Result<CovariateModel> {
    fit_covariate_with_summary(data, basis, mu_spec, config, None)
}

fn covariate_values(data: &SparseDataset, mu_spec: MuSpec) -> Result<Vec<f64>> {
    data.subjects()
        .iter()
        .map(|s| match (s.covariate, mu_spec) {
            (Some(x), _) => Ok(x),
            (None, MuSpec::Polynomial { degree: 0 }) => Ok(0.0),
            (None, _) => Err(Error::InvalidInput(format!("subject {} has no covariate", s.id))),
        })
        .collect()
}

fn prepare(
    data: &SparseDataset,
    mu_spec: MuSpec,
    summary: Option<CovariateSummary>,
) -> Result<(SparseDataset, MuFunctions)> {
    let x = covariate_values(data, mu_spec)?;
    let own = CovariateSummary::from_values(&x)?;
    if mu_spec.needs_variation() && !(own.max > own.min) {
        return Err(Error::InvalidInput("covariate is constant across subjects".into()));
    }
    let summary = summary.unwrap_or(own);
    let mu = MuFunctions::new(mu_spec, summary, &x)?;
    // intercept-only fits accept subjects without a covariate
    let data = if data.has_covariate() {
        data.clone()
    } else {
        data.with_covariates(&x)?
    };
    Ok((data, mu))
}

impl SparseDataset {
    /// Same subjects with covariate `x[i]` attached to subject `i`.
    pub fn with_covariates(&self, x: &[f64]) -> Result<SparseDataset> {
        if x.len() != self.len() {
            return Err(Error::InvalidInput(format!("{} covariate values for {} subjects", x.len(), self.len())));
        }
        let subjects = self
            .subjects()
            .iter()
            .zip(x)
            .map(|(s, &v)| Subject { covariate: Some(v), ..s.clone() })
            .collect();
        SparseDataset::new(subjects, Some(self.domain()))
    }
}

/// As [`fit_covariate`], optionally with a fixed covariate standardization
/// (bootstrap refits reuse the original sample's).
pub fn fit_covariate_with_summary(
    data: &SparseDataset,
    basis: &BasisSystem,
    mu_spec: MuSpec,
    config: &FitConfig,
    summary: Option<CovariateSummary>,
) -> Result<CovariateModel> {
    config.validate()?;
    let (data, mu) = prepare(data, mu_spec, summary)?;
    let lx = mu.len();
    if data.len() < 2 * lx {
        return Err(Error::InsufficientData { needed: 2 * lx, got: data.len() });
    }
    let (raw, mus) = covariate_design(&data, basis, &mu)?;
    if raw.total_obs() < raw.dim() {
        return Err(Error::InsufficientData { needed: raw.dim(), got: raw.total_obs() });
    }
    let metric = empirical_metric(basis, &mus)?;
    let ones = DVector::from_element(data.len(), 1.0);
    let mean_vec = raw.weighted_ls(&ones, "mean surface")?;
    let centered = raw.residualize(&mean_vec, &ones);
    let raw_energy = raw.energy();
    let denominator = if config.raw_r2_denominator { raw_energy } else { centered.energy() };
    let sign = mu.at_center()?.kronecker(basis.integrals());
    let ids: Vec<String> = data.subjects().iter().map(|s| s.id.clone()).collect();
    let identify = |residual: &Design, k: usize| identifying_constraints(residual, basis, &mu, config, k, raw_energy);
    let fixed: Option<FixedConstraints<'_>> = if lx > 1 { Some(&identify) } else { None };
    let ex = extract_components(&centered, &metric, &sign, config, raw_energy, denominator, &ids, fixed)?;
    let dim = basis.dim();
    let mut second = DMatrix::zeros(lx, lx);
    for m in &mus {
        second += m * m.transpose();
    }
    second /= mus.len() as f64;
    Ok(CovariateModel {
        basis: basis.clone(),
        mean_coeffs: to_matrix(&mean_vec, dim, lx),
        alphas: ex.alphas.iter().map(|a| to_matrix(a, dim, lx)).collect(),
        mu,
        subject_ids: ids,
        scores: ex.scores,
        r_squared: ex.r_squared,
        convergence_log: ex.log,
        warnings: ex.warnings,
        seed: config.seed,
        config: *config,
        mu_second_moment: second,
    })
}

/// Coefficients of the constant function in the span of `μ`.
fn constant_weights(mu: &MuFunctions) -> DVector<f64> {
    let lx = mu.len();
    match mu.spec {
        MuSpec::Polynomial { .. } => DVector::from_fn(lx, |c, _| if c == 0 { 1.0 } else { 0.0 }),
        // B-splines sum to one
        MuSpec::BSpline { .. } => DVector::from_element(lx, 1.0),
    }
}

/// Restrictions that pin down the covariate profile of separable
/// components. A component `a(t)·g(x)` fits equally well for every `g`,
/// because the scores absorb `g(X_i)`. Requiring `αᵀ·G·a_ref` to be a
/// multiple of the constant function, with `a_ref` the leading
/// covariate-free shape of the remaining data, leaves `g` constant.
fn identifying_constraints(
    residual: &Design,
    basis: &BasisSystem,
    mu: &MuFunctions,
    config: &FitConfig,
    k: usize,
    reference_energy: f64,
) -> Result<Vec<DVector<f64>>> {
    let dim = basis.dim();
    let w = constant_weights(mu);
    let lx = w.len();
    let restrict = w.kronecker(&DMatrix::<f64>::identity(dim, dim));
    let plain = residual.restrict(&restrict);
    let reference = engine::fit_component(
        &plain,
        basis.metric(),
        basis.integrals(),
        Constraints::default(),
        &config.control(),
        k,
        reference_energy,
    )?;
    let ga = basis.gram() * reference.alpha;
    // orthonormal complement of the constant direction
    let unit = &w / w.norm();
    let projector = DMatrix::<f64>::identity(lx, lx) - &unit * unit.transpose();
    let eig = nalgebra::SymmetricEigen::new(projector);
    Ok((0..lx)
        .filter(|&j| eig.eigenvalues[j] > 0.5)
        .map(|j| eig.eigenvectors.column(j).into_owned().kronecker(&ga))
        .collect())
}

/// Least-squares mean surface only.
fn fit_mean_surface(data: &SparseDataset, basis: &BasisSystem, mu_spec: MuSpec, summary: CovariateSummary) -> Result<DMatrix<f64>> {
    let (data, mu) = prepare(data, mu_spec, Some(summary))?;
    let (raw, _) = covariate_design(&data, basis, &mu)?;
    let ones = DVector::from_element(data.len(), 1.0);
    let v = raw.weighted_ls(&ones, "mean surface")?;
    Ok(to_matrix(&v, basis.dim(), mu.len()))
}

/// `U(t, x)` on a time grid.
pub fn expected_path(model: &CovariateModel, x: f64, grid: &[f64]) -> Result<Vec<f64>> {
    let s = &model.mu.summary;
    let mid = 0.5 * (s.min + s.max);
    if (x - mid).abs() > 0.75 * s.range() {
        log::warn!("covariate {x} lies beyond 1.5x the training range [{}, {}]", s.min, s.max);
    }
    let coef = &model.mean_coeffs * model.mu.eval(x)?;
    grid.iter().map(|&t| model.basis.spline_value(&coef, t)).collect()
}

/// Which covariate-dependent function a bootstrap test examines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "component", rename_all = "snake_case")]
pub enum TestTarget {
    /// Covariate part of the mean surface.
    Mean,
    /// Covariate part of component `k` (zero-based).
    Component(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapTestResult {
    pub target: TestTarget,
    pub statistic: f64,
    pub p_value: f64,
    pub replicates: usize,
    pub failed_attempts: usize,
}

fn target_coefficients(
    data: &SparseDataset,
    basis: &BasisSystem,
    mu_spec: MuSpec,
    config: &FitConfig,
    target: TestTarget,
    summary: CovariateSummary,
    reference: Option<(&DVector<f64>, &InnerProduct)>,
) -> Result<DVector<f64>> {
    let mu = MuFunctions { spec: mu_spec, summary, z_basis: None };
    let cols = mu
        .covariate_columns()
        .ok_or_else(|| Error::InvalidInput("bootstrap test needs polynomial covariate functions of degree ≥ 1".into()))?;
    let pick = |a: &DMatrix<f64>| DVector::from_iterator(a.nrows() * cols.len(), a.columns(cols.start, cols.len()).iter().copied());
    match target {
        TestTarget::Mean => Ok(pick(&fit_mean_surface(data, basis, mu_spec, summary)?)),
        TestTarget::Component(k) => {
            let mut cfg = *config;
            cfg.r2_target = 1.0;
            cfg.max_components = k + 1;
            let model = fit_covariate_with_summary(data, basis, mu_spec, &cfg, Some(summary))?;
            if model.n_components() <= k {
                return Err(Error::Degenerate(format!("component {} could not be extracted", k + 1)));
            }
            let mut a = model.alphas[k].clone();
            if let Some((orig, metric)) = reference {
                let v = DVector::from_column_slice(a.as_slice());
                if metric.inner(&v, orig) < 0.0 {
                    a.neg_mut();
                }
            }
            Ok(pick(&a))
        }
    }
}

/// Case-resampling bootstrap test that the covariate part of the target
/// function is zero. Statistic `T = max_j |ĉ_j| / ŝ_j`; the p-value is the
/// fraction of replicates with `max_j |ĉ*_j − ĉ_j| / ŝ_j ≥ T`.
pub fn bootstrap_test(
    data: &SparseDataset,
    basis: &BasisSystem,
    mu_spec: MuSpec,
    config: &FitConfig,
    target: TestTarget,
    replicates: usize,
) -> Result<BootstrapTestResult> {
    if replicates < 100 {
        return Err(Error::InvalidInput(format!("bootstrap needs at least 100 replicates, got {replicates}")));
    }
    let x = covariate_values(data, mu_spec)?;
    let summary = CovariateSummary::from_values(&x)?;
    let (orig_vec, metric) = match target {
        TestTarget::Component(k) => {
            let mut cfg = *config;
            cfg.r2_target = 1.0;
            cfg.max_components = k + 1;
            let m = fit_covariate_with_summary(data, basis, mu_spec, &cfg, Some(summary))?;
            if m.n_components() <= k {
                return Err(Error::Degenerate(format!("component {} could not be extracted", k + 1)));
            }
            (Some(DVector::from_column_slice(m.alphas[k].as_slice())), Some(m.metric()?))
        }
        TestTarget::Mean => (None, None),
    };
    let reference = orig_vec.as_ref().zip(metric.as_ref());
    let observed = target_coefficients(data, basis, mu_spec, config, target, summary, reference)?;

    let n = data.len();
    let budget = 2 * replicates;
    let mut draws: Vec<DVector<f64>> = Vec::with_capacity(replicates);
    let mut attempt = 0;
    let mut failed = 0;
    while draws.len() < replicates {
        let need = replicates - draws.len();
        if attempt + need > budget {
            return Err(Error::Degenerate(format!(
                "bootstrap exhausted {budget} attempts with {} successful replicates",
                draws.len()
            )));
        }
        let batch = par::map_range(need, |b| {
            use rand::Rng;
            let mut rng = engine::stream_rng(config.seed, 1 << 20, attempt + b);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            target_coefficients(&data.select(&idx), basis, mu_spec, config, target, summary, reference)
        });
        attempt += need;
        for r in batch {
            match r {
                Ok(c) => draws.push(c),
                Err(_) => failed += 1,
            }
        }
    }
    let b = draws.len() as f64;
    let len = observed.len();
    let mut sd = vec![0.0; len];
    for (j, s) in sd.iter_mut().enumerate() {
        let mean = draws.iter().map(|d| d[j]).sum::<f64>() / b;
        *s = (draws.iter().map(|d| (d[j] - mean).powi(2)).sum::<f64>() / (b - 1.0)).sqrt();
    }
    let studentized_max = |c: &DVector<f64>, center: Option<&DVector<f64>>| -> f64 {
        (0..len)
            .filter(|&j| sd[j] > 0.0)
            .map(|j| (c[j] - center.map_or(0.0, |o| o[j])).abs() / sd[j])
            .fold(0.0, f64::max)
    };
    let statistic = studentized_max(&observed, None);
    let exceed = draws.iter().filter(|d| studentized_max(d, Some(&observed)) >= statistic).count();
    Ok(BootstrapTestResult {
        target,
        statistic,
        p_value: exceed as f64 / b,
        replicates,
        failed_attempts: failed,
    })
}
