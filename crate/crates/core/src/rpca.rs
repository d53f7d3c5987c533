//! Regression-based principal components for sparse curves.
//!
//! Components are extracted one at a time from centered data. Each component
//! alternates a pooled least-squares update of its B-spline coefficients with
//! per-subject score regressions, standardizing and orthogonalizing the
//! coefficients against earlier components at every step. Extraction stops
//! once the explained-variation ratio R²(K) reaches the configured target.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, BasisSystem};
use crate::dataset::{center, fit_mean, MeanModel, SparseDataset, Subject};
use crate::engine::{self, ComponentFit, Constraints, Design, IterationControl};
use crate::error::{Error, Result};
use crate::linalg::solve_normal;
use crate::par;

/// Tuning of the alternating-regressions fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Largest allowed change of any coefficient (and of any score, relative
    /// to the largest score) between iterations at convergence.
    pub delta1: f64,
    /// Largest allowed objective change between iterations at convergence,
    /// relative to the mean squared data value.
    pub delta2: f64,
    pub max_iter: usize,
    pub max_components: usize,
    pub r2_target: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Use uncentered values in the R² denominator.
    #[serde(default)]
    pub raw_r2_denominator: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            delta1: 1e-6,
            delta2: 1e-9,
            max_iter: 500,
            max_components: 4,
            r2_target: 0.90,
            restarts: 3,
            seed: 0,
            raw_r2_denominator: false,
        }
    }
}

impl FitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.delta1 > 0.0
            && self.delta2 > 0.0
            && self.max_iter > 0
            && self.max_components > 0
            && self.restarts > 0
            && self.r2_target > 0.0
            && self.r2_target <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid fit configuration {self:?}")))
        }
    }

    pub(crate) fn control(&self) -> IterationControl {
        IterationControl {
            delta1: self.delta1,
            delta2: self.delta2,
            max_iter: self.max_iter,
            restarts: self.restarts,
            seed: self.seed,
        }
    }
}

/// Per-component convergence record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEntry {
    pub component: usize,
    pub iterations: usize,
    pub objective: f64,
    pub restart: usize,
    pub failed_restarts: usize,
    pub degenerate_subjects: Vec<String>,
    pub trace: Vec<f64>,
}

impl ConvergenceEntry {
    pub(crate) fn from_fit(k: usize, fit: &ComponentFit, ids: &[String]) -> Self {
        ConvergenceEntry {
            component: k + 1,
            iterations: fit.iterations,
            objective: fit.objective,
            restart: fit.restart,
            failed_restarts: fit.failed_restarts,
            degenerate_subjects: fit.degenerate_subjects.iter().map(|&i| ids[i].clone()).collect(),
            trace: fit.trace.clone(),
        }
    }

    /// Largest increase between consecutive objective values, relative to
    /// the first one (0 when the trace never increases).
    pub fn max_relative_increase(&self) -> f64 {
        let first = self.trace.first().cloned().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
        self.trace.windows(2).map(|w| (w[1] - w[0]) / first).fold(0.0, f64::max)
    }
}

/// A fitted decomposition `Y_i(t) ≈ Û(t) + Σ_k r_ik φ_k(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentModel {
    pub basis: BasisSystem,
    pub mean: MeanModel,
    pub alphas: Vec<DVector<f64>>,
    pub subject_ids: Vec<String>,
    /// Sequentially estimated scores, one row per training subject.
    pub scores: DMatrix<f64>,
    pub r_squared: Vec<f64>,
    pub convergence_log: Vec<ConvergenceEntry>,
    pub warnings: Vec<String>,
    pub seed: u64,
    pub config: FitConfig,
}

impl ComponentModel {
    pub fn n_components(&self) -> usize {
        self.alphas.len()
    }

    /// `φ_k(t)` for zero-based `k`.
    pub fn component_value(&self, k: usize, t: f64) -> Result<f64> {
        self.basis.spline_value(&self.alphas[k], t)
    }

    /// Least-squares scores of a (possibly new) subject on all K components.
    pub fn project(&self, subject: &Subject) -> Result<DVector<f64>> {
        project_scores(subject, self)
    }

    /// Fitted curve `Û(t) + Σ_k r_k φ_k(t)` for a score vector.
    pub fn curve_value(&self, scores: &DVector<f64>, t: f64) -> Result<f64> {
        let mut y = self.mean.value(t)?;
        for (k, a) in self.alphas.iter().enumerate() {
            y += scores[k] * self.basis.spline_value(a, t)?;
        }
        Ok(y)
    }
}

/// Coefficient update given scores (unstandardized).
pub fn alpha_step(data: &SparseDataset, basis: &BasisSystem, scores: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(data, scores)?;
    let design = Design::from_basis(data, basis)?;
    if design.total_obs() < design.dim() {
        return Err(Error::InsufficientData { needed: design.dim(), got: design.total_obs() });
    }
    design.alpha_step(scores)
}

/// Rescales coefficients to unit L² norm of the represented function.
pub fn standardize(basis: &BasisSystem, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    basis.metric().standardize(alpha)
}

/// Per-subject score regressions for a fixed component. Also returns the
/// indices of subjects whose regressor was numerically zero (score set to 0).
pub fn score_step(data: &SparseDataset, basis: &BasisSystem, alpha: &DVector<f64>) -> Result<(DVector<f64>, Vec<usize>)> {
    let design = Design::from_basis(data, basis)?;
    Ok(design.score_step(alpha))
}

/// Extracts the next component from data already residualized against
/// `previous`.
pub fn fit_component(
    data: &SparseDataset,
    basis: &BasisSystem,
    previous: &[DVector<f64>],
    config: &FitConfig,
) -> Result<ComponentFit> {
    config.validate()?;
    let design = Design::from_basis(data, basis)?;
    let energy = design.energy();
    engine::fit_component(
        &design,
        basis.metric(),
        basis.integrals(),
        Constraints::orthogonal_to(previous),
        &config.control(),
        previous.len(),
        energy,
    )
}

/// Removes one component's contribution from every observation.
pub fn residualize(
    data: &SparseDataset,
    basis: &BasisSystem,
    alpha: &DVector<f64>,
    scores: &DVector<f64>,
) -> Result<SparseDataset> {
    check_len(data, scores)?;
    data.map_values(|i, s| {
        s.times
            .iter()
            .zip(&s.values)
            .map(|(&t, &y)| Ok(y - scores[i] * basis.spline_value(alpha, t)?))
            .collect()
    })
}

/// R²(K) of a fitted model on its centered training data.
pub fn r_squared(centered: &SparseDataset, model: &ComponentModel, k: usize) -> Result<f64> {
    if k > model.n_components() {
        return Err(Error::InvalidInput(format!(
            "R² requested for {k} components but the model has {}",
            model.n_components()
        )));
    }
    if centered.len() != model.scores.nrows() {
        return Err(Error::InvalidInput("dataset does not match the model's subjects".into()));
    }
    let mut resid = 0.0;
    let mut total = 0.0;
    for (i, s) in centered.subjects().iter().enumerate() {
        for (&t, &y) in s.times.iter().zip(&s.values) {
            let mut fitted = 0.0;
            for kk in 0..k {
                fitted += model.scores[(i, kk)] * model.component_value(kk, t)?;
            }
            resid += (y - fitted).powi(2);
            total += y * y;
        }
    }
    if total == 0.0 {
        return Err(Error::Degenerate("R² denominator is zero".into()));
    }
    Ok(1.0 - resid / total)
}

/// Centers the data with a mean fitted in the component basis, then extracts
/// components until R²(K) reaches the target.
pub fn fit(data: &SparseDataset, basis: &BasisSystem, config: &FitConfig) -> Result<ComponentModel> {
    fit_with_mean_basis(data, basis, basis, config)
}

/// As [`fit`], with a separate basis for the mean function.
pub fn fit_with_mean_basis(
    data: &SparseDataset,
    mean_basis: &BasisSystem,
    basis: &BasisSystem,
    config: &FitConfig,
) -> Result<ComponentModel> {
    config.validate()?;
    if data.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: data.len() });
    }
    if data.total_observations() < basis.dim() {
        return Err(Error::InsufficientData { needed: basis.dim(), got: data.total_observations() });
    }
    let mean = fit_mean(data, mean_basis)?;
    let raw = Design::from_basis(data, basis)?;
    let raw_energy = raw.energy();
    let design = if mean_basis == basis {
        let ones = DVector::from_element(data.len(), 1.0);
        raw.residualize(&mean.coefficients, &ones)
    } else {
        Design::from_basis(&center(data, &mean)?, basis)?
    };
    let denominator = if config.raw_r2_denominator { raw_energy } else { design.energy() };
    let ids: Vec<String> = data.subjects().iter().map(|s| s.id.clone()).collect();
    let extraction = extract_components(
        &design,
        basis.metric(),
        basis.integrals(),
        config,
        raw_energy,
        denominator,
        &ids,
        None,
    )?;
    Ok(ComponentModel {
        basis: basis.clone(),
        mean,
        alphas: extraction.alphas,
        subject_ids: ids,
        scores: extraction.scores,
        r_squared: extraction.r_squared,
        convergence_log: extraction.log,
        warnings: extraction.warnings,
        seed: config.seed,
        config: *config,
    })
}

pub(crate) struct Extraction {
    pub alphas: Vec<DVector<f64>>,
    pub scores: DMatrix<f64>,
    pub r_squared: Vec<f64>,
    pub log: Vec<ConvergenceEntry>,
    pub warnings: Vec<String>,
}

/// Sequential extraction on a centered design.
/// Extra linear restrictions for component `k`, computed from the data
/// remaining after the earlier components.
pub(crate) type FixedConstraints<'a> = &'a dyn Fn(&Design, usize) -> Result<Vec<DVector<f64>>>;

#[allow(clippy::too_many_arguments)]
pub(crate) fn extract_components(
    design: &Design,
    metric: &crate::basis::InnerProduct,
    sign: &DVector<f64>,
    config: &FitConfig,
    reference_energy: f64,
    denominator: f64,
    ids: &[String],
    fixed: Option<FixedConstraints<'_>>,
) -> Result<Extraction> {
    let ctl = config.control();
    let n = design.n_subjects();
    let mut residual = design.clone();
    let mut alphas: Vec<DVector<f64>> = Vec::new();
    let mut score_cols: Vec<DVector<f64>> = Vec::new();
    let mut r_squared = Vec::new();
    let mut log = Vec::new();
    let mut warnings = Vec::new();
    let negligible = denominator <= 1e-20 * reference_energy;
    for k in 0..config.max_components {
        let extra = match fixed {
            Some(f) => f(&residual, k)?,
            None => Vec::new(),
        };
        let constraints = Constraints { previous: &alphas, fixed: &extra };
        let comp = engine::fit_component(&residual, metric, sign, constraints, &ctl, k, reference_energy)?;
        let null = comp.iterations == 0;
        warnings.extend(comp.warnings.iter().map(|w| format!("component {}: {w}", k + 1)));
        log.push(ConvergenceEntry::from_fit(k, &comp, ids));
        residual = residual.residualize(&comp.alpha, &comp.scores);
        alphas.push(comp.alpha);
        score_cols.push(comp.scores);
        let r2 = if negligible { 1.0 } else { 1.0 - residual.energy() / denominator };
        r_squared.push(r2);
        if null || r2 >= config.r2_target {
            break;
        }
    }
    if negligible {
        warnings.push("centered data carry no variation; R² reported as 1".into());
    }
    let scores = if score_cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&score_cols)
    };
    Ok(Extraction { alphas, scores, r_squared, log, warnings })
}

/// Joint least-squares scores of one subject on the model's components.
pub fn project_scores(subject: &Subject, model: &ComponentModel) -> Result<DVector<f64>> {
    let k = model.n_components();
    let m = subject.len();
    if m < k {
        return Err(Error::InsufficientData { needed: k, got: m });
    }
    let mut f = DMatrix::zeros(m, k);
    let mut y = DVector::zeros(m);
    for (j, (&t, &v)) in subject.times.iter().zip(&subject.values).enumerate() {
        y[j] = v - model.mean.value(t)?;
        for kk in 0..k {
            f[(j, kk)] = model.component_value(kk, t)?;
        }
    }
    let a = f.transpose() * &f;
    let b = f.transpose() * y;
    solve_normal(&a, &b, "score projection").map_err(|e| {
        Error::Degenerate(format!("subject {}: {e}", subject.id))
    })
}

/// Candidate chosen by [`select_basis`] with its cross-validated criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisChoice {
    pub degree: usize,
    pub num_interior: usize,
    pub criterion: f64,
}

const FOLDS: usize = 5;

fn fold_assignment(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = engine::stream_rng(seed, u32::MAX as usize, 0);
    idx.shuffle(&mut rng);
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % FOLDS;
    }
    fold
}

fn cv_criterion(data: &SparseDataset, degree: usize, knots: usize, folds: &[usize], config: &FitConfig) -> Result<f64> {
    let mut total = 0.0;
    for f in 0..FOLDS {
        let train_idx: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
        let test_idx: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
        if test_idx.is_empty() {
            continue;
        }
        let train = data.select(&train_idx);
        let basis = build_basis(data.domain(), degree, knots, &train.pooled_times())?;
        if basis.dim() > train.total_observations() {
            return Err(Error::InsufficientData { needed: basis.dim(), got: train.total_observations() });
        }
        let model = fit(&train, &basis, config)?;
        let mut sum = 0.0;
        for &i in &test_idx {
            let s = &data.subjects()[i];
            let scores = project_scores(s, &model).unwrap_or_else(|_| DVector::zeros(model.n_components()));
            let mut ss = 0.0;
            for (&t, &y) in s.times.iter().zip(&s.values) {
                ss += (y - model.curve_value(&scores, t)?).powi(2);
            }
            sum += ss / s.len() as f64;
        }
        let nf = test_idx.len() as f64;
        let p = basis.dim() * (model.n_components() + 1);
        total += nf * (sum / nf).max(f64::MIN_POSITIVE).ln() + 2.0 * p as f64;
    }
    Ok(total)
}

/// Chooses spline degree and interior-knot count by 5-fold cross-validated
/// AIC-type criterion `N_f·log(mean_i (1/m_i) Σ_j resid²) + 2p`, summed over
/// folds, where `p` counts the mean and component coefficients. Candidates
/// that fail to fit on any fold are skipped.
pub fn select_basis(
    data: &SparseDataset,
    degrees: &[usize],
    knot_counts: &[usize],
    config: &FitConfig,
) -> Result<BasisChoice> {
    if degrees.is_empty() || knot_counts.is_empty() {
        return Err(Error::InvalidInput("empty candidate list".into()));
    }
    let mut candidates: Vec<(usize, usize)> = knot_counts
        .iter()
        .flat_map(|&q| degrees.iter().map(move |&d| (q, d)))
        .collect();
    candidates.sort();
    candidates.dedup();
    if candidates.len() == 1 {
        let (q, d) = candidates[0];
        return Ok(BasisChoice { degree: d, num_interior: q, criterion: f64::NAN });
    }
    let folds = fold_assignment(data.len(), config.seed);
    let n_obs = data.total_observations();
    let results = par::map_slice(&candidates, |&(q, d)| {
        if q + d + 1 > n_obs {
            return None;
        }
        cv_criterion(data, d, q, &folds, config).ok().filter(|c| c.is_finite())
    });
    let mut best: Option<BasisChoice> = None;
    for (&(q, d), crit) in candidates.iter().zip(results) {
        let Some(c) = crit else {
            log::info!("basis candidate degree={d} knots={q} excluded");
            continue;
        };
        if best.is_none_or(|b| c < b.criterion) {
            best = Some(BasisChoice { degree: d, num_interior: q, criterion: c });
        }
    }
    best.ok_or_else(|| Error::InvalidInput("no basis candidate could be fitted".into()))
}

/// Chooses the interior-knot count of the mean basis by 5-fold
/// cross-validated prediction error of the pooled mean fit.
pub fn select_mean_knots(data: &SparseDataset, degree: usize, knot_counts: &[usize], seed: u64) -> Result<usize> {
    if knot_counts.is_empty() {
        return Err(Error::InvalidInput("empty candidate list".into()));
    }
    let mut counts = knot_counts.to_vec();
    counts.sort();
    counts.dedup();
    let folds = fold_assignment(data.len(), seed);
    let mut best: Option<(usize, f64)> = None;
    for &q in &counts {
        let mut sse = 0.0;
        let mut ok = true;
        for f in 0..FOLDS {
            let train_idx: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
            let train = data.select(&train_idx);
            let fitted = build_basis(data.domain(), degree, q, &train.pooled_times())
                .and_then(|b| fit_mean(&train, &b));
            let Ok(mean) = fitted else {
                ok = false;
                break;
            };
            for (_, s) in data.subjects().iter().enumerate().filter(|&(i, _)| folds[i] == f) {
                for (&t, &y) in s.times.iter().zip(&s.values) {
                    sse += (y - mean.value(t)?).powi(2);
                }
            }
        }
        if ok && best.is_none_or(|(_, b)| sse < b) {
            best = Some((q, sse));
        }
    }
    best.map(|b| b.0).ok_or_else(|| Error::InvalidInput("no mean knot count could be fitted".into()))
}

fn check_len(data: &SparseDataset, scores: &DVector<f64>) -> Result<()> {
    if scores.len() != data.len() {
        return Err(Error::InvalidInput(format!(
            "{} scores for {} subjects",
            scores.len(),
            data.len()
        )));
    }
    Ok(())
}
