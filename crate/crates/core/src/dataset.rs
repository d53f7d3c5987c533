//! Sparse longitudinal observations: ingestion, pooled B-spline mean
//! estimation and centering.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSystem, Domain};
use crate::error::{Error, Result};

/// Times, values and covariate of one subject while a CSV is being read.
type Group = (Vec<f64>, Vec<f64>, Option<f64>);

/// One subject's observations, sorted by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub covariate: Option<f64>,
}

impl Subject {
    pub fn new(id: impl Into<String>, times: Vec<f64>, values: Vec<f64>, covariate: Option<f64>) -> Result<Self> {
        let id = id.into();
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "subject {id}: {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.iter().chain(&values).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("subject {id}: non-finite entry")));
        }
        let mut pairs: Vec<(f64, f64)> = times.into_iter().zip(values).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (times, values) = pairs.into_iter().unzip();
        Ok(Subject { id, times, values, covariate })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Same subject with replaced values.
    pub fn with_values(&self, values: Vec<f64>) -> Subject {
        debug_assert_eq!(values.len(), self.times.len());
        Subject { id: self.id.clone(), times: self.times.clone(), values, covariate: self.covariate }
    }
}

/// A collection of subjects observed on a common time domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseDataset {
    subjects: Vec<Subject>,
    domain: Domain,
}

impl SparseDataset {
    /// Validates and assembles a dataset. When `domain` is `None` it spans the
    /// observed times.
    pub fn new(subjects: Vec<Subject>, domain: Option<Domain>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::InvalidInput("dataset has no subjects".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &subjects {
            if s.is_empty() {
                return Err(Error::InvalidInput(format!("subject {} has no observations", s.id)));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate subject id {}", s.id)));
            }
        }
        let lo = subjects.iter().flat_map(|s| s.times.iter()).cloned().fold(f64::INFINITY, f64::min);
        let hi = subjects.iter().flat_map(|s| s.times.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
        let domain = match domain {
            Some(d) => {
                if let Some(t) = subjects.iter().flat_map(|s| s.times.iter()).find(|&&t| !d.contains(t)) {
                    return Err(Error::Domain { t: *t, lo: d.lo, hi: d.hi });
                }
                d
            }
            None => Domain::new(lo, hi)?,
        };
        Ok(SparseDataset { subjects, domain })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn total_observations(&self) -> usize {
        self.subjects.iter().map(Subject::len).sum()
    }

    pub fn pooled_times(&self) -> Vec<f64> {
        self.subjects.iter().flat_map(|s| s.times.iter().cloned()).collect()
    }

    pub fn has_covariate(&self) -> bool {
        self.subjects.iter().all(|s| s.covariate.is_some())
    }

    /// Replaces every subject's values, keeping ids, times and covariates.
    pub fn map_values<F>(&self, mut f: F) -> Result<SparseDataset>
    where
        F: FnMut(usize, &Subject) -> Result<Vec<f64>>,
    {
        let subjects = self
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| Ok(s.with_values(f(i, s)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SparseDataset { subjects, domain: self.domain })
    }

    /// Subset by subject index (indices may repeat; repeated subjects get a
    /// `#k` suffix so ids stay unique).
    pub fn select(&self, indices: &[usize]) -> SparseDataset {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        let subjects = indices
            .iter()
            .map(|&i| {
                let c = counts.entry(i).or_insert(0);
                let mut s = self.subjects[i].clone();
                if *c > 0 {
                    s.id = format!("{}#{}", s.id, c);
                }
                *c += 1;
                s
            })
            .collect();
        SparseDataset { subjects, domain: self.domain }
    }

    /// Same data on a wider (or equal) domain.
    pub fn with_domain(&self, domain: Domain) -> Result<SparseDataset> {
        SparseDataset::new(self.subjects.clone(), Some(domain))
    }

    /// Parses long-format CSV with header `id,time,value[,covariate]`.
    pub fn from_reader<R: Read>(reader: R) -> Result<SparseDataset> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let id_col = col("id").ok_or_else(|| Error::Csv("missing required column 'id'".into()))?;
        let time_col = col("time").ok_or_else(|| Error::Csv("missing required column 'time'".into()))?;
        let value_col = col("value").ok_or_else(|| Error::Csv("missing required column 'value'".into()))?;
        let cov_col = col("covariate");

        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Group> = HashMap::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
            let row = line + 2;
            let field = |c: usize| rec.get(c).unwrap_or("");
            let num = |c: usize, what: &str| -> Result<f64> {
                let s = field(c);
                s.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Csv(format!("row {row}: non-numeric {what} '{s}'")))
            };
            let id = field(id_col).to_string();
            if id.is_empty() {
                return Err(Error::Csv(format!("row {row}: empty id")));
            }
            let t = num(time_col, "time")?;
            let y = num(value_col, "value")?;
            let x = match cov_col {
                Some(c) => Some(num(c, "covariate")?),
                None => None,
            };
            let entry = groups.entry(id.clone()).or_insert_with(|| {
                order.push(id.clone());
                (Vec::new(), Vec::new(), x)
            });
            if entry.2 != x {
                return Err(Error::Csv(format!(
                    "row {row}: subject {id} has inconsistent covariate values"
                )));
            }
            entry.0.push(t);
            entry.1.push(y);
        }
        if order.is_empty() {
            return Err(Error::Csv("no data rows".into()));
        }
        let subjects = order
            .into_iter()
            .map(|id| {
                let (t, y, x) = groups.remove(&id).expect("grouped id");
                Subject::new(id, t, y, x)
            })
            .collect::<Result<Vec<_>>>()?;
        SparseDataset::new(subjects, None)
    }

    /// Writes long-format CSV. Numbers use the shortest decimal text that
    /// parses back to the identical `f64`.
    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        let cov = self.has_covariate();
        if cov {
            writeln!(w, "id,time,value,covariate")?;
        } else {
            writeln!(w, "id,time,value")?;
        }
        for s in &self.subjects {
            for (t, y) in s.times.iter().zip(&s.values) {
                match (cov, s.covariate) {
                    (true, Some(x)) => writeln!(w, "{},{t:?},{y:?},{x:?}", s.id)?,
                    _ => writeln!(w, "{},{t:?},{y:?}", s.id)?,
                }
            }
        }
        Ok(())
    }
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<SparseDataset> {
    let f = std::fs::File::open(path)?;
    SparseDataset::from_reader(std::io::BufReader::new(f))
}

pub fn write_csv(data: &SparseDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    data.to_writer(&mut f)?;
    f.flush()?;
    Ok(())
}

/// Mean function `Û(t) = π(t)ᵀ·c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanModel {
    pub basis: BasisSystem,
    pub coefficients: DVector<f64>,
}

impl MeanModel {
    pub fn zero(basis: BasisSystem) -> Self {
        let n = basis.dim();
        MeanModel { basis, coefficients: DVector::zeros(n) }
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        self.basis.spline_value(&self.coefficients, t)
    }
}

/// Pooled least-squares B-spline fit of all observations.
pub fn fit_mean(data: &SparseDataset, basis: &BasisSystem) -> Result<MeanModel> {
    let p = basis.dim();
    let n_obs = data.total_observations();
    if n_obs < p {
        return Err(Error::InsufficientData { needed: p, got: n_obs });
    }
    let design = crate::engine::Design::from_basis(data, basis)?;
    let ones = DVector::from_element(data.len(), 1.0);
    let coefficients = design.weighted_ls(&ones, "mean fit").map_err(|_| {
        Error::RankDeficient(format!(
            "mean design with basis dimension {p} is rank-deficient on {n_obs} observations"
        ))
    })?;
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::RankDeficient("non-finite mean coefficients".into()));
    }
    Ok(MeanModel { basis: basis.clone(), coefficients })
}

/// Subtracts the fitted mean from every observation.
pub fn center(data: &SparseDataset, mean: &MeanModel) -> Result<SparseDataset> {
    data.map_values(|_, s| {
        s.times
            .iter()
            .zip(&s.values)
            .map(|(&t, &y)| Ok(y - mean.value(t)?))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::build_basis;

    fn parse(text: &str) -> Result<SparseDataset> {
        SparseDataset::from_reader(text.as_bytes())
    }

    #[test]
    fn groups_rows_by_id() {
        let d = parse("id,time,value\na,1.0,2.0\na,2.0,3.0\n").unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.subjects()[0].len(), 2);
        assert_eq!(d.domain(), Domain::new(1.0, 2.0).unwrap());
    }

    #[test]
    fn sorts_within_subject() {
        let d = parse("id,time,value\na,3,30\nb,1,5\na,1,10\na,2,20\n").unwrap();
        let a = &d.subjects()[0];
        assert_eq!(a.times, vec![1.0, 2.0, 3.0]);
        assert_eq!(a.values, vec![10.0, 20.0, 30.0]);
        assert_eq!(d.subjects()[1].id, "b");
    }

    #[test]
    fn column_order_follows_header() {
        let d = parse("value,covariate,time,id\n2,160,1,a\n3,160,2,a\n").unwrap();
        assert_eq!(d.subjects()[0].covariate, Some(160.0));
        assert_eq!(d.subjects()[0].values, vec![2.0, 3.0]);
    }

    #[test]
    fn ingestion_errors() {
        assert!(parse("id,time,value,covariate\na,1,2,160\na,2,3,161\n").is_err());
        assert!(parse("id,time\na,1\n").is_err());
        assert!(parse("id,time,value\na,x,2\n").is_err());
        assert!(parse("id,time,value\n").is_err());
        assert!(parse("").is_err());
        assert!(parse("id,time,value,covariate\na,1,2,\n").is_err());
    }

    #[test]
    fn constant_and_linear_reproduction() {
        let subjects: Vec<Subject> = (0..40)
            .map(|i| {
                let t: Vec<f64> = (0..4).map(|j| ((i * 7 + j * 13) % 50) as f64 / 49.0).collect();
                Subject::new(format!("s{i}"), t.clone(), t.iter().map(|_| 5.0).collect(), None).unwrap()
            })
            .collect();
        let d = SparseDataset::new(subjects, Some(Domain::new(0.0, 1.0).unwrap())).unwrap();
        let basis = build_basis(d.domain(), 2, 2, &d.pooled_times()).unwrap();
        let m = fit_mean(&d, &basis).unwrap();
        for t in d.domain().grid(100) {
            assert!((m.value(t).unwrap() - 5.0).abs() < 1e-8);
        }
        let lin = d.map_values(|_, s| Ok(s.times.clone())).unwrap();
        let m = fit_mean(&lin, &basis).unwrap();
        for t in d.domain().grid(100) {
            assert!((m.value(t).unwrap() - t).abs() < 1e-8);
        }
        let c = center(&lin, &m).unwrap();
        assert!(c.subjects().iter().flat_map(|s| &s.values).all(|v| v.abs() < 1e-10));
        let zero = MeanModel::zero(basis);
        assert_eq!(center(&lin, &zero).unwrap(), lin);
    }

    #[test]
    fn mean_fit_needs_enough_observations() {
        let d = parse("id,time,value\na,0,1\na,1,2\n").unwrap();
        let basis = BasisSystem::new(d.domain(), 2, vec![0.3, 0.6]).unwrap();
        assert!(matches!(fit_mean(&d, &basis), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn unsupported_basis_function_is_rank_deficient() {
        // every observation sits in the first half; the last functions are unseen
        let rows: String = (0..20).map(|i| format!("s{i},{},{}\n", 0.02 * i as f64, i)).collect();
        let d = parse(&format!("id,time,value\n{rows}"))
            .unwrap()
            .with_domain(Domain::new(0.0, 1.0).unwrap())
            .unwrap();
        let basis = BasisSystem::new(d.domain(), 1, vec![0.25, 0.5, 0.75]).unwrap();
        assert!(matches!(fit_mean(&d, &basis), Err(Error::RankDeficient(_))));
    }
}
