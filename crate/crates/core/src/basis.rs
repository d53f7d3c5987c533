//! Clamped B-spline bases on a closed time interval, their L² Gram matrix,
//! and Gram–Schmidt orthogonalization in the induced inner product.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gauss_legendre, quantile_sorted, sym_sqrt};

/// A closed time interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidInput(format!("bad domain [{lo}, {hi}]")));
        }
        Ok(Domain { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }

    fn tolerance(&self) -> f64 {
        1e-12 * self.lo.abs().max(self.hi.abs()).max(1.0)
    }

    /// Clamps `t` onto the interval if it lies within rounding distance of
    /// it; anything further out is a domain error.
    pub fn clamp(&self, t: f64) -> Result<f64> {
        if self.contains(t) {
            return Ok(t);
        }
        let tol = self.tolerance();
        if t < self.lo && self.lo - t <= tol {
            Ok(self.lo)
        } else if t > self.hi && t - self.hi <= tol {
            Ok(self.hi)
        } else {
            Err(Error::Domain { t, lo: self.lo, hi: self.hi })
        }
    }

    /// `n` equally spaced points from `lo` to `hi` inclusive.
    pub fn grid(&self, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![self.lo];
        }
        let h = self.width() / (n - 1) as f64;
        (0..n)
            .map(|i| if i == n - 1 { self.hi } else { self.lo + h * i as f64 })
            .collect()
    }
}

/// Inner product `⟨a, b⟩ = aᵀ·G·b` on coefficient vectors, together with a
/// symmetric square root of `G` used for orthogonalization.
#[derive(Debug, Clone)]
pub struct InnerProduct {
    gram: DMatrix<f64>,
    half: DMatrix<f64>,
    half_inv: DMatrix<f64>,
}

impl InnerProduct {
    pub fn new(gram: DMatrix<f64>) -> Result<Self> {
        let (half, half_inv, min_eig) = sym_sqrt(&gram);
        if !(min_eig > 0.0) {
            return Err(Error::RankDeficient(format!(
                "Gram matrix of size {} is not positive definite (smallest eigenvalue {min_eig:e})",
                gram.nrows()
            )));
        }
        Ok(InnerProduct { gram, half, half_inv })
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn gram_half(&self) -> &DMatrix<f64> {
        &self.half
    }

    pub fn inner(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.dot(&(&self.gram * b))
    }

    pub fn norm_sq(&self, a: &DVector<f64>) -> f64 {
        self.inner(a, a)
    }

    /// Rescales `alpha` to unit norm.
    pub fn standardize(&self, alpha: &DVector<f64>) -> Result<DVector<f64>> {
        let n2 = self.norm_sq(alpha);
        if !(n2.is_finite() && n2.sqrt() > 1e-12) {
            return Err(Error::Degenerate(format!(
                "cannot standardize coefficient vector with norm {:e}",
                n2.max(0.0).sqrt()
            )));
        }
        let out = alpha / n2.sqrt();
        // one correction step removes the rounding left by the division
        let n2 = self.norm_sq(&out);
        Ok(out / n2.sqrt())
    }

    /// Orthonormalizes `candidate` against an orthonormal set `previous`.
    ///
    /// Works on `G^{1/2}`-transformed vectors with two passes of modified
    /// Gram–Schmidt, then maps back. A candidate whose residual is negligible
    /// relative to its own norm is reported as degenerate.
    pub fn orthogonalize(
        &self,
        candidate: &DVector<f64>,
        previous: &[DVector<f64>],
    ) -> Result<DVector<f64>> {
        for (k, p) in previous.iter().enumerate() {
            let n2 = self.norm_sq(p);
            if (n2 - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidInput(format!(
                    "previous vector {k} has squared norm {n2}, expected 1"
                )));
            }
        }
        let transformed: Vec<DVector<f64>> = previous.iter().map(|p| &self.half * p).collect();
        let mut v = &self.half * candidate;
        let start = v.norm();
        for _ in 0..2 {
            for q in &transformed {
                let c = q.dot(&v) / q.dot(q);
                v.axpy(-c, q, 1.0);
            }
        }
        let residual = v.norm();
        if !(residual.is_finite() && residual > 1e-12 * start.max(1.0)) {
            return Err(Error::Degenerate(format!(
                "candidate lies in the span of {} previous components (residual {residual:e})",
                previous.len()
            )));
        }
        v /= residual;
        let out = &self.half_inv * v;
        self.standardize(&out)
    }
}

/// Serialized form of a [`BasisSystem`]; the Gram matrix is recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSpec {
    pub domain: Domain,
    pub degree: usize,
    pub interior_knots: Vec<f64>,
}

/// Clamped B-spline basis with its precomputed L² Gram matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct BasisSystem {
    domain: Domain,
    degree: usize,
    interior_knots: Vec<f64>,
    knots: Vec<f64>,
    metric: InnerProduct,
    integrals: DVector<f64>,
}

impl TryFrom<BasisSpec> for BasisSystem {
    type Error = Error;
    fn try_from(s: BasisSpec) -> Result<Self> {
        BasisSystem::new(s.domain, s.degree, s.interior_knots)
    }
}

impl From<BasisSystem> for BasisSpec {
    fn from(b: BasisSystem) -> Self {
        BasisSpec { domain: b.domain, degree: b.degree, interior_knots: b.interior_knots }
    }
}

impl PartialEq for BasisSystem {
    fn eq(&self, other: &Self) -> bool {
        self.domain == other.domain
            && self.degree == other.degree
            && self.interior_knots == other.interior_knots
    }
}

/// Number of Gauss–Legendre nodes per knot span used for the Gram matrix.
pub fn gram_nodes(degree: usize) -> usize {
    (2 * degree + 1).div_ceil(2) + 1
}

impl BasisSystem {
    /// Builds a basis from explicit interior knots.
    pub fn new(domain: Domain, degree: usize, interior_knots: Vec<f64>) -> Result<Self> {
        if !(domain.lo < domain.hi) {
            return Err(Error::InvalidInput(format!(
                "basis domain [{}, {}] has zero width",
                domain.lo, domain.hi
            )));
        }
        for w in interior_knots.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::RankDeficient(format!(
                    "interior knots must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(k) = interior_knots.iter().find(|&&k| !(k > domain.lo && k < domain.hi)) {
            return Err(Error::UninformativeKnots(format!(
                "interior knot {k} not strictly inside [{}, {}]",
                domain.lo, domain.hi
            )));
        }
        let mut knots = vec![domain.lo; degree + 1];
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat_n(domain.hi, degree + 1));
        let dim = knots.len() - degree - 1;
        let integrals = DVector::from_iterator(
            dim,
            (0..dim).map(|j| (knots[j + degree + 1] - knots[j]) / (degree + 1) as f64),
        );
        let mut basis = BasisSystem {
            domain,
            degree,
            interior_knots,
            knots,
            metric: InnerProduct::new(DMatrix::identity(1, 1))?,
            integrals,
        };
        let gram = basis.gram_with_nodes(gram_nodes(degree));
        basis.metric = InnerProduct::new(gram)?;
        Ok(basis)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    /// Full clamped knot vector.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        self.metric.gram()
    }

    pub fn gram_half(&self) -> &DMatrix<f64> {
        self.metric.gram_half()
    }

    pub fn metric(&self) -> &InnerProduct {
        &self.metric
    }

    /// `∫ π_j(t) dt` for every basis function.
    pub fn integrals(&self) -> &DVector<f64> {
        &self.integrals
    }

    /// Gram matrix by composite Gauss–Legendre with `nodes` points per span.
    pub fn gram_with_nodes(&self, nodes: usize) -> DMatrix<f64> {
        let (x, w) = gauss_legendre(nodes);
        let dim = self.dim();
        let mut g = DMatrix::zeros(dim, dim);
        let mut local = vec![0.0; self.degree + 1];
        for span in self.degree..dim {
            let (a, b) = (self.knots[span], self.knots[span + 1]);
            if !(b > a) {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (xk, wk) in x.iter().zip(&w) {
                let t = mid + half * xk;
                self.local_values(span, t, &mut local);
                let first = span - self.degree;
                for (i, vi) in local.iter().enumerate() {
                    for (j, vj) in local.iter().enumerate() {
                        g[(first + i, first + j)] += half * wk * vi * vj;
                    }
                }
            }
        }
        // exact symmetry
        let gt = g.transpose();
        (g + gt) * 0.5
    }

    fn span(&self, t: f64) -> usize {
        let dim = self.dim();
        // last span is closed on the right
        if t >= self.knots[dim] {
            return dim - 1;
        }
        let mut lo = self.degree;
        let mut hi = dim;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    fn local_values(&self, span: usize, t: f64, out: &mut [f64]) {
        let d = self.degree;
        let u = &self.knots;
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        out[0] = 1.0;
        for j in 1..=d {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Index of the first nonzero basis function at `t` and the `degree+1`
    /// values starting there.
    pub fn evaluate_local(&self, t: f64) -> Result<(usize, Vec<f64>)> {
        let t = self.domain.clamp(t)?;
        let span = self.span(t);
        let mut out = vec![0.0; self.degree + 1];
        self.local_values(span, t, &mut out);
        Ok((span - self.degree, out))
    }

    /// All basis function values at `t`.
    pub fn evaluate(&self, t: f64) -> Result<DVector<f64>> {
        let (first, local) = self.evaluate_local(t)?;
        let mut v = DVector::zeros(self.dim());
        for (i, x) in local.into_iter().enumerate() {
            v[first + i] = x;
        }
        Ok(v)
    }

    /// Value of the spline `π(t)ᵀ·coefficients`.
    pub fn spline_value(&self, coefficients: &DVector<f64>, t: f64) -> Result<f64> {
        let (first, local) = self.evaluate_local(t)?;
        Ok(local.iter().enumerate().map(|(i, v)| v * coefficients[first + i]).sum())
    }

    /// Orthonormalizes `candidate` against `previous` in the L² inner product.
    pub fn orthogonalize(
        &self,
        candidate: &DVector<f64>,
        previous: &[DVector<f64>],
    ) -> Result<DVector<f64>> {
        self.metric.orthogonalize(candidate, previous)
    }
}

/// Places `num_interior` knots at equally spaced empirical quantiles of the
/// pooled observation times and builds a clamped basis of the given degree.
pub fn build_basis(
    domain: Domain,
    degree: usize,
    num_interior: usize,
    pooled_times: &[f64],
) -> Result<BasisSystem> {
    if pooled_times.is_empty() {
        return Err(Error::InvalidInput("no pooled times for knot placement".into()));
    }
    if let Some(t) = pooled_times.iter().find(|&&t| !domain.contains(t)) {
        return Err(Error::Domain { t: *t, lo: domain.lo, hi: domain.hi });
    }
    let mut sorted = pooled_times.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::UninformativeKnots(format!(
            "all {} pooled times equal {}",
            sorted.len(),
            sorted[0]
        )));
    }
    let mut knots: Vec<f64> = (1..=num_interior)
        .map(|j| quantile_sorted(&sorted, j as f64 / (num_interior + 1) as f64))
        .collect();
    knots.dedup();
    if knots.len() != num_interior {
        return Err(Error::RankDeficient(format!(
            "quantile ties collapse {num_interior} interior knots to {}",
            knots.len()
        )));
    }
    BasisSystem::new(domain, degree, knots)
}
