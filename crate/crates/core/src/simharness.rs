//! Synthetic growth curves, contamination and evaluation metrics for Monte
//! Carlo studies of the fitting and screening pipeline.

use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSystem, Domain};
use crate::contour::{build_chart, projected_scores, screen_subject, DEFAULT_HARMONICS};
use crate::dataset::{SparseDataset, Subject};
use crate::engine::stream_rng;
use crate::error::{Error, Result};
use crate::linalg::gauss_legendre;
use crate::par;
use crate::rpca::{fit, ComponentModel, FitConfig};

const GENERATE_STREAM: usize = 1 << 21;
const SCREEN_STREAM: usize = 1 << 22;
const TABLE_SEED: u64 = 0x4752_4f57_5448;

/// Rows in the built-in empirical score table.
pub const DEFAULT_TABLE_ROWS: usize = 553;
/// Standard deviations of the two generating scores.
pub const DEFAULT_SCORE_SD: [f64; 2] = [15.0, 6.0];

/// A function on the domain expressed in a B-spline basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFn {
    pub basis: BasisSystem,
    pub coefficients: DVector<f64>,
}

impl SplineFn {
    pub fn new(basis: BasisSystem, coefficients: DVector<f64>) -> Result<Self> {
        if coefficients.len() != basis.dim() {
            return Err(Error::InvalidInput(format!(
                "{} coefficients for a basis of dimension {}",
                coefficients.len(),
                basis.dim()
            )));
        }
        Ok(SplineFn { basis, coefficients })
    }

    /// L2 projection of an analytic function onto the basis.
    pub fn project<F: Fn(f64) -> f64>(basis: &BasisSystem, f: F) -> Result<Self> {
        let (nodes, weights) = gauss_legendre(basis.degree() + 8);
        let knots = basis.knots();
        let mut rhs = DVector::zeros(basis.dim());
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            for (x, wt) in nodes.iter().zip(&weights) {
                let t = a + half * (x + 1.0);
                let (first, local) = basis.evaluate_local(t)?;
                let ft = f(t);
                for (k, v) in local.into_iter().enumerate() {
                    rhs[first + k] += half * wt * v * ft;
                }
            }
        }
        let coefficients = basis
            .gram()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::RankDeficient("basis Gram matrix is not positive definite".into()))?
            .solve(&rhs);
        SplineFn::new(basis.clone(), coefficients)
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        self.basis.spline_value(&self.coefficients, t)
    }

    /// `‖f‖² = ∫ f²`.
    pub fn norm_sq(&self) -> f64 {
        self.basis.metric().norm_sq(&self.coefficients)
    }
}

/// Distribution of the two component scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreLaw {
    /// Rows resampled with replacement from a score table.
    Empirical { table: Vec<[f64; 2]> },
    Normal { mean: [f64; 2], cov: [[f64; 2]; 2] },
}

impl ScoreLaw {
    fn validate(&self) -> Result<()> {
        match self {
            ScoreLaw::Empirical { table } => {
                if table.is_empty() {
                    return Err(Error::InvalidInput("empirical score table is empty".into()));
                }
                if table.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput("non-finite value in score table".into()));
                }
                Ok(())
            }
            ScoreLaw::Normal { mean, cov } => {
                let scale = cov[0][0].abs().max(cov[1][1].abs()).max(1.0);
                let symmetric = (cov[0][1] - cov[1][0]).abs() <= 1e-12 * scale;
                let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
                let psd = cov[0][0] >= 0.0 && cov[1][1] >= 0.0 && det >= -1e-12 * scale * scale;
                if !symmetric || !psd || mean.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "score covariance {cov:?} is not symmetric positive semidefinite"
                    )));
                }
                Ok(())
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        match self {
            ScoreLaw::Empirical { table } => table[rng.random_range(0..table.len())],
            ScoreLaw::Normal { mean, cov } => {
                let l11 = cov[0][0].max(0.0).sqrt();
                let l21 = if l11 > 0.0 { cov[0][1] / l11 } else { 0.0 };
                let l22 = (cov[1][1] - l21 * l21).max(0.0).sqrt();
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                [mean[0] + l11 * z1, mean[1] + l21 * z1 + l22 * z2]
            }
        }
    }

    /// Sample mean and covariance of a score table.
    pub fn table_moments(table: &[[f64; 2]]) -> ([f64; 2], [[f64; 2]; 2]) {
        let n = table.len() as f64;
        let mean = [
            table.iter().map(|r| r[0]).sum::<f64>() / n,
            table.iter().map(|r| r[1]).sum::<f64>() / n,
        ];
        let mut cov = [[0.0; 2]; 2];
        for r in table {
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / (n - 1.0);
                }
            }
        }
        (mean, cov)
    }

    /// Reads a two-column score table (header `r1,r2`).
    pub fn read_table<R: Read>(reader: R) -> Result<Vec<[f64; 2]>> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut table = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
            if rec.len() < 2 {
                return Err(Error::Csv(format!("score table row {} has fewer than two columns", line + 2)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Csv(format!("score table row {}: cannot parse {s:?}", line + 2)))
            };
            table.push([parse(&rec[0])?, parse(&rec[1])?]);
        }
        Ok(table)
    }
}

/// Skewed, heavy-tailed score table with zero mean, no correlation and
/// standard deviations [`DEFAULT_SCORE_SD`].
pub fn default_score_table() -> Vec<[f64; 2]> {
    let mut rng = stream_rng(TABLE_SEED, 0, 0);
    let gamma = Gamma::new(6.0, 1.0).expect("valid gamma parameters");
    let student = StudentT::new(5.0).expect("valid t parameters");
    let raw: Vec<[f64; 2]> = (0..DEFAULT_TABLE_ROWS)
        .map(|_| [gamma.sample(&mut rng), student.sample(&mut rng)])
        .collect();
    let (mean, cov) = ScoreLaw::table_moments(&raw);
    let l11 = cov[0][0].sqrt();
    let l21 = cov[0][1] / l11;
    let l22 = (cov[1][1] - l21 * l21).sqrt();
    raw.iter()
        .map(|r| {
            let u = (r[0] - mean[0]) / l11;
            let v = (r[1] - mean[1] - l21 * u) / l22;
            [DEFAULT_SCORE_SD[0] * u, DEFAULT_SCORE_SD[1] * v]
        })
        .collect()
}

/// Mean function, two orthonormal components, score law and sampling design
/// of synthetic curves `Y_ij = U(T_ij) + r_i1 φ_1(T_ij) + r_i2 φ_2(T_ij) + ε_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub domain: Domain,
    pub mean_fn: SplineFn,
    pub component_fns: [SplineFn; 2],
    pub score_law: ScoreLaw,
    pub noise_sd: f64,
    pub n_subjects: usize,
    pub obs_per_subject: usize,
    pub seed: u64,
}

/// Default growth-like truth on `[9, 16]`: a quadratic mean rising from
/// about 133 to 163, a slowly increasing positive first component and a
/// sigmoidal second component, both in a quadratic spline space with knots
/// at the thirds of the domain.
pub fn default_truth() -> Result<(Domain, SplineFn, [SplineFn; 2])> {
    let domain = Domain::new(9.0, 16.0)?;
    let basis = BasisSystem::new(domain, 2, vec![9.0 + 7.0 / 3.0, 9.0 + 14.0 / 3.0])?;
    let mean = SplineFn::project(&basis, |t| {
        let s = t - 9.0;
        133.0 + 5.5 * s - 0.18 * s * s
    })?;
    let g1 = SplineFn::project(&basis, |t| 1.0 + 0.08 * (t - 9.0))?;
    let g2 = SplineFn::project(&basis, |t| 1.0 / (1.0 + (-(t - 12.5) / 0.7).exp()))?;
    let metric = basis.metric();
    let a1 = metric.standardize(&g1.coefficients)?;
    let a2 = metric.orthogonalize(&g2.coefficients, std::slice::from_ref(&a1))?;
    Ok((domain, mean, [SplineFn::new(basis.clone(), a1)?, SplineFn::new(basis, a2)?]))
}

impl GeneratorSpec {
    /// Scores resampled from the built-in skewed table.
    pub fn empirical_setting() -> Result<Self> {
        Self::with_law(ScoreLaw::Empirical { table: default_score_table() })
    }

    /// Bivariate normal scores with the built-in table's mean and covariance.
    pub fn normal_setting() -> Result<Self> {
        let (mean, cov) = ScoreLaw::table_moments(&default_score_table());
        Self::with_law(ScoreLaw::Normal { mean, cov })
    }

    pub fn with_law(score_law: ScoreLaw) -> Result<Self> {
        let (domain, mean_fn, component_fns) = default_truth()?;
        Ok(GeneratorSpec {
            domain,
            mean_fn,
            component_fns,
            score_law,
            noise_sd: 1.0,
            n_subjects: 500,
            obs_per_subject: 6,
            seed: 0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.score_law.validate()?;
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidInput(format!("noise standard deviation {} is invalid", self.noise_sd)));
        }
        if self.obs_per_subject == 0 || self.n_subjects == 0 {
            return Err(Error::InvalidInput("need at least one subject and one observation each".into()));
        }
        Ok(())
    }
}

/// Generating values behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// True scores, one row per subject.
    pub scores: DMatrix<f64>,
    pub mean_fn: SplineFn,
    pub component_fns: [SplineFn; 2],
}

/// Generates one dataset; identical to replicate 0.
pub fn generate(spec: &GeneratorSpec) -> Result<(SparseDataset, Truth)> {
    generate_replicate(spec, 0)
}

/// Generates the dataset of replicate `r` from its own RNG stream.
pub fn generate_replicate(spec: &GeneratorSpec, r: usize) -> Result<(SparseDataset, Truth)> {
    let mut rng = stream_rng(spec.seed, GENERATE_STREAM, r);
    generate_with(spec, &mut rng, "s")
}

fn generate_with(spec: &GeneratorSpec, rng: &mut ChaCha8Rng, prefix: &str) -> Result<(SparseDataset, Truth)> {
    spec.validate()?;
    let n = spec.n_subjects;
    let width = n.to_string().len().max(3);
    let mut scores = DMatrix::zeros(n, 2);
    let mut subjects = Vec::with_capacity(n);
    for i in 0..n {
        let r = spec.score_law.sample(rng);
        scores[(i, 0)] = r[0];
        scores[(i, 1)] = r[1];
        let times: Vec<f64> = (0..spec.obs_per_subject)
            .map(|_| spec.domain.lo + spec.domain.width() * rng.random::<f64>())
            .collect();
        let mut values = Vec::with_capacity(times.len());
        for &t in &times {
            let eps: f64 = StandardNormal.sample(rng);
            let y = spec.mean_fn.value(t)?
                + r[0] * spec.component_fns[0].value(t)?
                + r[1] * spec.component_fns[1].value(t)?
                + spec.noise_sd * eps;
            values.push(y);
        }
        subjects.push(Subject::new(format!("{prefix}{:0width$}", i + 1), times, values, None)?);
    }
    let data = SparseDataset::new(subjects, Some(spec.domain))?;
    let truth = Truth {
        scores,
        mean_fn: spec.mean_fn.clone(),
        component_fns: spec.component_fns.clone(),
    };
    Ok((data, truth))
}

/// Linear deviation `A(t − t₀) + B` added to a number of curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub a: f64,
    pub b: f64,
    pub n_curves: usize,
    pub origin: f64,
}

impl ContaminationSpec {
    pub fn new(a: f64, b: f64, n_curves: usize) -> Self {
        ContaminationSpec { a, b, n_curves, origin: 9.0 }
    }
}

/// Adds `A(T_ij − t₀) + B` to every observation of the first `n_curves`
/// subjects.
pub fn contaminate(data: &SparseDataset, spec: &ContaminationSpec) -> Result<SparseDataset> {
    if spec.n_curves == 0 {
        return Err(Error::InvalidInput("contamination needs at least one curve".into()));
    }
    data.map_values(|i, s| {
        if i >= spec.n_curves {
            return Ok(s.values.clone());
        }
        Ok(s.times
            .iter()
            .zip(&s.values)
            .map(|(&t, &y)| y + spec.a * (t - spec.origin) + spec.b)
            .collect())
    })
}

/// Relative integrated squared error from sampled values, after choosing the
/// sign of the estimate that fits best.
pub fn rise_values(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::InvalidInput("RISE needs two equally long, nonempty samples".into()));
    }
    let norm: f64 = truth.iter().map(|g| g * g).sum();
    if norm == 0.0 {
        return Err(Error::InvalidInput("RISE of a zero target function".into()));
    }
    let minus: f64 = truth.iter().zip(estimate).map(|(g, h)| (g - h).powi(2)).sum();
    let plus: f64 = truth.iter().zip(estimate).map(|(g, h)| (g + h).powi(2)).sum();
    Ok(minus.min(plus) / norm)
}

/// Left-Riemann grid `lo + i·(hi − lo)/n`, `i = 0..n`.
pub fn left_riemann_grid(domain: Domain, grid_size: usize) -> Vec<f64> {
    (0..grid_size)
        .map(|i| domain.lo + domain.width() * i as f64 / grid_size as f64)
        .collect()
}

/// `‖g − ĝ‖² / ‖g‖²` by a left Riemann sum over `grid_size` intervals.
pub fn rise<F, G>(truth: F, estimate: G, domain: Domain, grid_size: usize) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
    G: Fn(f64) -> Result<f64>,
{
    if grid_size < 2 {
        return Err(Error::InvalidInput("RISE grid needs at least two intervals".into()));
    }
    let grid = left_riemann_grid(domain, grid_size);
    let g = grid.iter().map(|&t| truth(t)).collect::<Result<Vec<_>>>()?;
    let h = grid.iter().map(|&t| estimate(t)).collect::<Result<Vec<_>>>()?;
    rise_values(&g, &h)
}

/// Mean squared score error over the sample variance of the true scores,
/// after choosing the sign of the estimate that fits best.
pub fn rmse_scores(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    let n = truth.len();
    if n != estimate.len() || n < 2 {
        return Err(Error::InvalidInput("score RMSE needs two equally long samples of size ≥ 2".into()));
    }
    let mean = truth.iter().sum::<f64>() / n as f64;
    let var = truth.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::InvalidInput("true scores have zero variance".into()));
    }
    let minus: f64 = truth.iter().zip(estimate).map(|(r, e)| (r - e).powi(2)).sum();
    let plus: f64 = truth.iter().zip(estimate).map(|(r, e)| (r + e).powi(2)).sum();
    Ok(minus.min(plus) / n as f64 / var)
}

/// Fit settings for replicate studies: quadratic splines with two
/// quantile knots and exactly two components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub degree: usize,
    pub num_interior: usize,
    pub fit: FitConfig,
}

impl Default for StudyOptions {
    fn default() -> Self {
        let fit = FitConfig { max_components: 2, r2_target: 1.0, ..FitConfig::default() };
        StudyOptions { degree: 2, num_interior: 2, fit }
    }
}

fn fit_replicate(data: &SparseDataset, options: &StudyOptions, r: usize) -> Result<ComponentModel> {
    let basis = crate::basis::build_basis(data.domain(), options.degree, options.num_interior, &data.pooled_times())?;
    let config = options.fit.with_seed(options.fit.seed.wrapping_add(r as u64));
    let model = fit(data, &basis, &config)?;
    if model.n_components() < 2 {
        return Err(Error::Degenerate(format!(
            "replicate {r} produced {} component(s)",
            model.n_components()
        )));
    }
    Ok(model)
}

/// Estimation errors of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationMetrics {
    pub rise: [f64; 2],
    pub rmse: [f64; 2],
}

/// Generates replicate `r`, fits it and compares the first two components
/// and their scores with the truth.
pub fn estimation_replicate(spec: &GeneratorSpec, options: &StudyOptions, r: usize) -> Result<EstimationMetrics> {
    let (data, truth) = generate_replicate(spec, r)?;
    let model = fit_replicate(&data, options, r)?;
    let mut out = EstimationMetrics { rise: [0.0; 2], rmse: [0.0; 2] };
    for k in 0..2 {
        out.rise[k] = rise(
            |t| truth.component_fns[k].value(t),
            |t| model.component_value(k, t),
            spec.domain,
            100,
        )?;
        let est: Vec<f64> = model.scores.column(k).iter().copied().collect();
        let tru: Vec<f64> = truth.scores.column(k).iter().copied().collect();
        out.rmse[k] = rmse_scores(&tru, &est)?;
    }
    Ok(out)
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// RISE and score RMSE summaries over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub setting: String,
    pub replicates: usize,
    pub metrics: Vec<EstimationMetrics>,
}

impl EstimationReport {
    pub fn n_effective(&self) -> usize {
        self.metrics.len()
    }

    /// `(name, mean, sd)` rows in table order.
    pub fn rows(&self) -> Vec<(&'static str, f64, f64)> {
        let col = |f: &dyn Fn(&EstimationMetrics) -> f64| -> Vec<f64> { self.metrics.iter().map(f).collect() };
        let entries: [(&'static str, Vec<f64>); 4] = [
            ("RISE of phi_1", col(&|m| m.rise[0])),
            ("RISE of phi_2", col(&|m| m.rise[1])),
            ("RMSE of r_1", col(&|m| m.rmse[0])),
            ("RMSE of r_2", col(&|m| m.rmse[1])),
        ];
        entries
            .into_iter()
            .map(|(name, v)| {
                let (m, s) = mean_sd(&v);
                (name, m, s)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "setting,metric,mean,sd,n_effective")?;
        for (name, m, s) in self.rows() {
            writeln!(w, "{},{name},{m:?},{s:?},{}", self.setting, self.n_effective())?;
        }
        Ok(())
    }

    /// Means (standard deviations) laid out one metric per row.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Means (standard deviations) over {} of {} replicates, setting: {}",
            self.n_effective(),
            self.replicates,
            self.setting
        );
        for (name, m, s) in self.rows() {
            let _ = writeln!(out, "{name:<16}{m:.4} ({s:.4})");
        }
        out
    }
}

/// Runs `replicates` estimation replicates concurrently, dropping failed
/// ones with a log note.
pub fn run_estimation(
    spec: &GeneratorSpec,
    options: &StudyOptions,
    replicates: usize,
    setting: &str,
) -> Result<EstimationReport> {
    if replicates == 0 {
        return Err(Error::InvalidInput("at least one replicate is required".into()));
    }
    spec.validate()?;
    let results = par::map_range(replicates, |r| estimation_replicate(spec, options, r));
    let mut metrics = Vec::with_capacity(replicates);
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(m) => metrics.push(m),
            Err(e) => log::warn!("replicate {r} dropped: {e}"),
        }
    }
    Ok(EstimationReport { setting: setting.to_string(), replicates, metrics })
}

/// Slope and shift values of the contamination grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerGrid {
    pub a_values: Vec<f64>,
    pub b_values: Vec<f64>,
}

impl Default for PowerGrid {
    fn default() -> Self {
        PowerGrid {
            a_values: vec![-4.0, -2.0, -1.0, 0.0, 1.0, 2.0, 4.0],
            b_values: vec![-20.0, -12.0, -4.0, 0.0, 4.0, 12.0, 20.0],
        }
    }
}

impl PowerGrid {
    /// 3×3 grid containing the null cell, the moderate cell and the
    /// `(−4, −20)` corner.
    pub fn reduced() -> Self {
        PowerGrid { a_values: vec![-4.0, -2.0, 0.0], b_values: vec![-20.0, -4.0, 0.0] }
    }

    fn cells(&self) -> Vec<(f64, f64)> {
        self.a_values
            .iter()
            .flat_map(|&a| self.b_values.iter().map(move |&b| (a, b)))
            .collect()
    }
}

/// Settings of a screening-power study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub level: f64,
    pub replicates: usize,
    pub curves_per_cell: usize,
    pub tau_grid: Vec<f64>,
    pub harmonics: usize,
    pub study: StudyOptions,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            level: crate::contour::DEFAULT_LEVEL,
            replicates: 20,
            curves_per_cell: 100,
            tau_grid: crate::contour::default_tau_grid(),
            harmonics: DEFAULT_HARMONICS,
            study: StudyOptions::default(),
        }
    }
}

/// Flag rate of one contamination cell over replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCell {
    pub a: f64,
    pub b: f64,
    pub mean: f64,
    pub sd: f64,
    pub n_effective: usize,
}

/// Flag rates over the contamination grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub level: f64,
    pub replicates: usize,
    pub cells: Vec<PowerCell>,
}

impl PowerReport {
    pub fn cell(&self, a: f64, b: f64) -> Option<&PowerCell> {
        self.cells.iter().find(|c| c.a == a && c.b == b)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "A,B,mean,sd,n_effective")?;
        for c in &self.cells {
            writeln!(w, "{:?},{:?},{:?},{:?},{}", c.a, c.b, c.mean, c.sd, c.n_effective)?;
        }
        Ok(())
    }

    /// Reads cells written by [`PowerReport::write_csv`].
    pub fn read_csv<R: Read>(reader: R, level: f64, replicates: usize) -> Result<PowerReport> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut cells = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
            if rec.len() != 5 {
                return Err(Error::Csv(format!("power report row has {} fields", rec.len())));
            }
            let num = |i: usize| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| Error::Csv(format!("cannot parse {:?} in power report", &rec[i])))
            };
            let n_effective = rec[4]
                .parse::<usize>()
                .map_err(|_| Error::Csv(format!("cannot parse {:?} in power report", &rec[4])))?;
            cells.push(PowerCell { a: num(0)?, b: num(1)?, mean: num(2)?, sd: num(3)?, n_effective });
        }
        Ok(PowerReport { level, replicates, cells })
    }

    /// Percent flagged, mean (sd), with slopes as rows and shifts as columns.
    pub fn text_table(&self) -> String {
        let mut a_values: Vec<f64> = Vec::new();
        let mut b_values: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !a_values.contains(&c.a) {
                a_values.push(c.a);
            }
            if !b_values.contains(&c.b) {
                b_values.push(c.b);
            }
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Percent of contaminated curves flagged at level {}, mean (sd) over {} replicates",
            self.level, self.replicates
        );
        let _ = write!(out, "{:>6}", "A\\B");
        for b in &b_values {
            let _ = write!(out, "{:>15}", b);
        }
        let _ = writeln!(out);
        for a in &a_values {
            let _ = write!(out, "{:>6}", a);
            for b in &b_values {
                match self.cell(*a, *b) {
                    Some(c) => {
                        let entry = format!("{:.1} ({:.1})", 100.0 * c.mean, 100.0 * c.sd);
                        let _ = write!(out, "{entry:>15}");
                    }
                    None => {
                        let _ = write!(out, "{:>15}", "-");
                    }
                }
            }
            let _ = writeln!(out);
        }
        out
    }
}

/// Builds a reference chart from replicate `r` and returns the flag rate of
/// every grid cell.
fn power_replicate(spec: &GeneratorSpec, cells: &[(f64, f64)], options: &PowerOptions, r: usize) -> Result<Vec<f64>> {
    let (data, _) = generate_replicate(spec, r)?;
    let model = fit_replicate(&data, &options.study, r)?;
    let reference = projected_scores(data.subjects(), &model, |i| {
        Some(model.scores.row(i).iter().copied().collect())
    })?;
    let chart = build_chart(&reference, &options.tau_grid, options.harmonics)?;
    let fresh = GeneratorSpec { n_subjects: options.curves_per_cell, ..spec.clone() };
    let mut rates = Vec::with_capacity(cells.len());
    for (c, &(a, b)) in cells.iter().enumerate() {
        let mut rng = stream_rng(spec.seed, SCREEN_STREAM, r * cells.len() + c);
        let (curves, _) = generate_with(&fresh, &mut rng, "z")?;
        let contaminated = contaminate(
            &curves,
            &ContaminationSpec { a, b, n_curves: curves.len(), origin: spec.domain.lo },
        )?;
        let mut flagged = 0usize;
        for s in contaminated.subjects() {
            if screen_subject(s, &model, &chart, options.level)?.flagged {
                flagged += 1;
            }
        }
        rates.push(flagged as f64 / contaminated.len() as f64);
    }
    Ok(rates)
}

/// Monte Carlo flag rates of contaminated curves over the `(A, B)` grid.
/// Replicates run concurrently; a failing replicate is dropped with a log
/// note and the cells carry the effective replicate count.
pub fn screening_power(spec: &GeneratorSpec, grid: &PowerGrid, options: &PowerOptions) -> Result<PowerReport> {
    if options.replicates == 0 {
        return Err(Error::InvalidInput("at least one replicate is required".into()));
    }
    if options.curves_per_cell == 0 {
        return Err(Error::InvalidInput("at least one curve per cell is required".into()));
    }
    if !(options.level > 0.0 && options.level < 1.0) {
        return Err(Error::InvalidInput(format!("screening level {} outside (0, 1)", options.level)));
    }
    spec.validate()?;
    let cells = grid.cells();
    let results = par::map_range(options.replicates, |r| power_replicate(spec, &cells, options, r));
    let mut per_cell: Vec<Vec<f64>> = vec![Vec::new(); cells.len()];
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rates) => {
                for (acc, v) in per_cell.iter_mut().zip(rates) {
                    acc.push(v);
                }
            }
            Err(e) => log::warn!("replicate {r} dropped: {e}"),
        }
    }
    let cells = cells
        .iter()
        .zip(&per_cell)
        .map(|(&(a, b), v)| {
            let (mean, sd) = mean_sd(v);
            PowerCell { a, b, mean, sd, n_effective: v.len() }
        })
        .collect();
    Ok(PowerReport { level: options.level, replicates: options.replicates, cells })
}
