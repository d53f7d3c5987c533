//! Versioned JSON model files.
//!
//! Every floating-point number is written with 17 significant digits, so a
//! file read back by the same version reproduces the model exactly. Basis
//! Gram matrices are not stored; they are recomputed from degree, domain and
//! knots on load.

use std::fs;
use std::io;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::basis::{BasisSpec, BasisSystem, Domain};
use crate::contour::ContourChart;
use crate::covariate::{CovariateModel, CovariateSummary, MuFunctions, MuSpec};
use crate::dataset::MeanModel;
use crate::error::{Error, Result};
use crate::rpca::{ComponentModel, ConvergenceEntry, FitConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// A fitted model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Plain(ComponentModel),
    Covariate(CovariateModel),
}

impl FittedModel {
    pub fn n_components(&self) -> usize {
        match self {
            FittedModel::Plain(m) => m.n_components(),
            FittedModel::Covariate(m) => m.n_components(),
        }
    }

    pub fn subject_ids(&self) -> &[String] {
        match self {
            FittedModel::Plain(m) => &m.subject_ids,
            FittedModel::Covariate(m) => &m.subject_ids,
        }
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        match self {
            FittedModel::Plain(m) => &m.scores,
            FittedModel::Covariate(m) => &m.scores,
        }
    }

    pub fn r_squared(&self) -> &[f64] {
        match self {
            FittedModel::Plain(m) => &m.r_squared,
            FittedModel::Covariate(m) => &m.r_squared,
        }
    }

    pub fn convergence_log(&self) -> &[ConvergenceEntry] {
        match self {
            FittedModel::Plain(m) => &m.convergence_log,
            FittedModel::Covariate(m) => &m.convergence_log,
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            FittedModel::Plain(m) => &m.warnings,
            FittedModel::Covariate(m) => &m.warnings,
        }
    }

    pub fn basis(&self) -> &BasisSystem {
        match self {
            FittedModel::Plain(m) => &m.basis,
            FittedModel::Covariate(m) => &m.basis,
        }
    }
}

/// Contents of a model file: the model and an optional screening chart.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: FittedModel,
    pub chart: Option<ContourChart>,
}

#[derive(Serialize, Deserialize)]
struct SubjectScores {
    id: String,
    scores: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeanRecord {
    degree: usize,
    interior_knots: Vec<f64>,
    coefficients: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PlainRecord {
    domain: Domain,
    degree: usize,
    interior_knots: Vec<f64>,
    mean: MeanRecord,
    n_components: usize,
    alphas: Vec<Vec<f64>>,
    scores: Vec<SubjectScores>,
    r_squared: Vec<f64>,
    seed: u64,
    config: FitConfig,
    convergence_log: Vec<ConvergenceEntry>,
    warnings: Vec<String>,
    chart: Option<ContourChart>,
}

#[derive(Serialize, Deserialize)]
struct CovariateRecord {
    domain: Domain,
    degree: usize,
    interior_knots: Vec<f64>,
    mu_spec: MuSpec,
    covariate_summary: CovariateSummary,
    covariate_basis: Option<BasisSpec>,
    /// Columns of the mean-surface coefficient matrix, standardized covariate.
    mean_coeffs: Vec<Vec<f64>>,
    /// Same surface with columns multiplying powers of the raw covariate.
    /// Written for reference and ignored on load.
    #[serde(default)]
    raw_scale_mean_coeffs: Option<Vec<Vec<f64>>>,
    n_components: usize,
    alphas: Vec<Vec<Vec<f64>>>,
    mu_second_moment: Vec<Vec<f64>>,
    scores: Vec<SubjectScores>,
    r_squared: Vec<f64>,
    seed: u64,
    config: FitConfig,
    convergence_log: Vec<ConvergenceEntry>,
    warnings: Vec<String>,
    chart: Option<ContourChart>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Plain(PlainRecord),
    Covariate(CovariateRecord),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    schema_version: u32,
    model: Record,
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn from_columns(cols: &[Vec<f64>], nrows: usize, what: &str) -> Result<DMatrix<f64>> {
    if cols.iter().any(|c| c.len() != nrows) {
        return Err(Error::Format(format!("{what}: columns must have length {nrows}")));
    }
    let flat: Vec<f64> = cols.iter().flatten().copied().collect();
    Ok(DMatrix::from_column_slice(nrows, cols.len(), &flat))
}

fn score_rows(ids: &[String], scores: &DMatrix<f64>) -> Vec<SubjectScores> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| SubjectScores { id: id.clone(), scores: scores.row(i).iter().copied().collect() })
        .collect()
}

fn score_matrix(rows: &[SubjectScores], k: usize) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut m = DMatrix::zeros(rows.len(), k);
    for (i, r) in rows.iter().enumerate() {
        if r.scores.len() != k {
            return Err(Error::Format(format!("subject {} has {} scores, expected {k}", r.id, r.scores.len())));
        }
        for (j, v) in r.scores.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok((rows.iter().map(|r| r.id.clone()).collect(), m))
}

fn check_vec(v: &[f64], dim: usize, what: &str) -> Result<DVector<f64>> {
    if v.len() != dim {
        return Err(Error::Format(format!("{what} has length {}, expected {dim}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

impl ModelFile {
    fn to_record(&self) -> Record {
        let chart = self.chart.clone();
        match &self.model {
            FittedModel::Plain(m) => Record::Plain(PlainRecord {
                domain: m.basis.domain(),
                degree: m.basis.degree(),
                interior_knots: m.basis.interior_knots().to_vec(),
                mean: MeanRecord {
                    degree: m.mean.basis.degree(),
                    interior_knots: m.mean.basis.interior_knots().to_vec(),
                    coefficients: m.mean.coefficients.iter().copied().collect(),
                },
                n_components: m.n_components(),
                alphas: m.alphas.iter().map(|a| a.iter().copied().collect()).collect(),
                scores: score_rows(&m.subject_ids, &m.scores),
                r_squared: m.r_squared.clone(),
                seed: m.seed,
                config: m.config,
                convergence_log: m.convergence_log.clone(),
                warnings: m.warnings.clone(),
                chart,
            }),
            FittedModel::Covariate(m) => Record::Covariate(CovariateRecord {
                domain: m.basis.domain(),
                degree: m.basis.degree(),
                interior_knots: m.basis.interior_knots().to_vec(),
                mu_spec: m.mu.spec,
                covariate_summary: m.mu.summary,
                covariate_basis: m.mu.z_basis.clone().map(BasisSpec::from),
                mean_coeffs: columns(&m.mean_coeffs),
                raw_scale_mean_coeffs: m.raw_scale_mean_coeffs().map(|c| columns(&c)),
                n_components: m.n_components(),
                alphas: m.alphas.iter().map(columns).collect(),
                mu_second_moment: columns(&m.mu_second_moment),
                scores: score_rows(&m.subject_ids, &m.scores),
                r_squared: m.r_squared.clone(),
                seed: m.seed,
                config: m.config,
                convergence_log: m.convergence_log.clone(),
                warnings: m.warnings.clone(),
                chart,
            }),
        }
    }

    fn from_record(record: Record) -> Result<ModelFile> {
        match record {
            Record::Plain(r) => {
                let basis = BasisSystem::new(r.domain, r.degree, r.interior_knots)?;
                let mean_basis = if r.mean.degree == basis.degree() && r.mean.interior_knots == basis.interior_knots() {
                    basis.clone()
                } else {
                    BasisSystem::new(r.domain, r.mean.degree, r.mean.interior_knots)?
                };
                let coefficients = check_vec(&r.mean.coefficients, mean_basis.dim(), "mean coefficients")?;
                if r.alphas.len() != r.n_components {
                    return Err(Error::Format("component count does not match coefficient list".into()));
                }
                let alphas = r
                    .alphas
                    .iter()
                    .map(|a| check_vec(a, basis.dim(), "component coefficients"))
                    .collect::<Result<Vec<_>>>()?;
                let (subject_ids, scores) = score_matrix(&r.scores, r.n_components)?;
                let model = ComponentModel {
                    basis,
                    mean: MeanModel { basis: mean_basis, coefficients },
                    alphas,
                    subject_ids,
                    scores,
                    r_squared: r.r_squared,
                    convergence_log: r.convergence_log,
                    warnings: r.warnings,
                    seed: r.seed,
                    config: r.config,
                };
                Ok(ModelFile { model: FittedModel::Plain(model), chart: r.chart })
            }
            Record::Covariate(r) => {
                let basis = BasisSystem::new(r.domain, r.degree, r.interior_knots)?;
                let z_basis = r.covariate_basis.map(BasisSystem::try_from).transpose()?;
                let mu = MuFunctions { spec: r.mu_spec, summary: r.covariate_summary, z_basis };
                let lx = mu.len();
                let dim = basis.dim();
                if r.mean_coeffs.len() != lx || r.alphas.iter().any(|a| a.len() != lx) {
                    return Err(Error::Format(format!("coefficient matrices must have {lx} columns")));
                }
                if r.alphas.len() != r.n_components {
                    return Err(Error::Format("component count does not match coefficient list".into()));
                }
                let mean_coeffs = from_columns(&r.mean_coeffs, dim, "mean coefficients")?;
                let alphas = r
                    .alphas
                    .iter()
                    .map(|a| from_columns(a, dim, "component coefficients"))
                    .collect::<Result<Vec<_>>>()?;
                let mu_second_moment = from_columns(&r.mu_second_moment, lx, "covariate second moment")?;
                let (subject_ids, scores) = score_matrix(&r.scores, r.n_components)?;
                let model = CovariateModel {
                    basis,
                    mu,
                    mean_coeffs,
                    alphas,
                    subject_ids,
                    scores,
                    r_squared: r.r_squared,
                    convergence_log: r.convergence_log,
                    warnings: r.warnings,
                    seed: r.seed,
                    config: r.config,
                    mu_second_moment,
                };
                Ok(ModelFile { model: FittedModel::Covariate(model), chart: r.chart })
            }
        }
    }

    /// Pretty-printed JSON with 17 significant digits per number.
    pub fn to_json(&self) -> Result<String> {
        let envelope = Envelope { schema_version: SCHEMA_VERSION, model: self.to_record() };
        to_exact_json(&envelope)
    }

    pub fn from_json(text: &str) -> Result<ModelFile> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let version = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Format("model file lacks a schema version".into()))?;
        if version != SCHEMA_VERSION as u64 {
            return Err(Error::Format(format!(
                "model file schema version {version} is not supported (expected {SCHEMA_VERSION})"
            )));
        }
        let envelope: Envelope = serde_json::from_str(text)?;
        ModelFile::from_record(envelope.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelFile> {
        ModelFile::from_json(&fs::read_to_string(path)?)
    }
}

/// JSON formatter printing every float in `{:.16e}` notation.
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

/// Serializes any value as pretty JSON with 17 significant digits per float.
pub fn to_exact_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats(PrettyFormatter::with_indent(b"  ")));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}
