//! Nested bivariate quantile contours of component scores.
//!
//! Scores are expressed in polar coordinates about their componentwise
//! median, and for every level τ the radius is regressed on a trigonometric
//! basis of the angle under check loss. Curves are rearranged across levels
//! at each angle so the contours are nested, and a point is ranked by the
//! smallest level whose contour encloses it.

use std::f64::consts::TAU;
use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariate::CovariateModel;
use crate::dataset::Subject;
use crate::error::{Error, Result};
use crate::linalg::median;
use crate::par;
use crate::quantreg;
use crate::rpca::ComponentModel;

/// Angular grid size used for rearrangement checks and polyline export.
pub const ANGULAR_GRID: usize = 360;
pub const DEFAULT_HARMONICS: usize = 3;
pub const DEFAULT_LEVEL: f64 = 0.95;
const CENTER_RADIUS: f64 = 1e-12;
const CENTER_JITTER: f64 = 1e-9;

/// `{0.05, 0.10, …, 0.95, 0.975, 0.99}`.
pub fn default_tau_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (1..=19).map(|j| j as f64 / 20.0).collect();
    grid.push(0.975);
    grid.push(0.99);
    grid
}

/// Trigonometric basis `(1, cos θ, sin θ, …, cos Hθ, sin Hθ)`.
pub fn trig_basis(theta: f64, harmonics: usize) -> DVector<f64> {
    let mut b = DVector::zeros(2 * harmonics + 1);
    b[0] = 1.0;
    for h in 1..=harmonics {
        let (s, c) = (h as f64 * theta).sin_cos();
        b[2 * h - 1] = c;
        b[2 * h] = s;
    }
    b
}

/// Percentile rank of a score pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rank {
    /// Smallest grid level whose contour encloses the point.
    Level(f64),
    /// Outside the contour of the highest grid level.
    BeyondTop,
}

impl Rank {
    /// Numeric value, with points beyond the top contour counted as 1.
    pub fn value(&self) -> f64 {
        match self {
            Rank::Level(t) => *t,
            Rank::BeyondTop => 1.0,
        }
    }
}

impl fmt::Display for Rank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rank::Level(t) => write!(f, "{t:?}"),
            Rank::BeyondTop => write!(f, "beyond"),
        }
    }
}

/// Fitted contours at every level of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourChart {
    pub center: [f64; 2],
    pub tau_grid: Vec<f64>,
    pub angular_models: Vec<Vec<f64>>,
    pub harmonics: usize,
    pub reference_n: usize,
    /// Smallest radius any contour is allowed to take.
    pub radius_floor: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn validate_grid(tau_grid: &[f64]) -> Result<()> {
    if tau_grid.is_empty() {
        return Err(Error::InvalidInput("empty quantile level grid".into()));
    }
    if tau_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::InvalidInput("quantile levels must lie in (0, 1)".into()));
    }
    if tau_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("quantile levels must be strictly increasing".into()));
    }
    Ok(())
}

fn polar(center: [f64; 2], p: [f64; 2]) -> (f64, f64) {
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    (dx.hypot(dy), dy.atan2(dx))
}

/// Builds the chart from reference score pairs (rows of `scores`, first two
/// columns used).
pub fn build_chart(scores: &DMatrix<f64>, tau_grid: &[f64], harmonics: usize) -> Result<ContourChart> {
    validate_grid(tau_grid)?;
    let n = scores.nrows();
    if scores.ncols() < 2 {
        return Err(Error::InvalidInput(format!(
            "a chart needs two score columns, got {}",
            scores.ncols()
        )));
    }
    if n < 50 {
        return Err(Error::InsufficientData { needed: 50, got: n });
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite reference score".into()));
    }
    let mut warnings = Vec::new();
    if n < 200 {
        let msg = format!("chart built from only {n} reference points");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let c0: Vec<f64> = scores.column(0).iter().copied().collect();
    let c1: Vec<f64> = scores.column(1).iter().copied().collect();
    let center = [median(&c0), median(&c1)];
    let mut radius = DVector::zeros(n);
    let mut design = DMatrix::zeros(n, 2 * harmonics + 1);
    let mut jittered = 0;
    for i in 0..n {
        let (mut r, mut theta) = polar(center, [c0[i], c1[i]]);
        if r < CENTER_RADIUS {
            r = CENTER_JITTER;
            theta = 0.0;
            jittered += 1;
        }
        radius[i] = r;
        design.row_mut(i).copy_from(&trig_basis(theta, harmonics).transpose());
    }
    if jittered > 0 {
        log::info!("{jittered} reference point(s) at the chart center moved off it by {CENTER_JITTER}");
    }
    let fits = par::map_slice(tau_grid, |&tau| {
        quantreg::fit(&design, &radius, tau)
            .map(|f| f.coefficients.iter().copied().collect::<Vec<f64>>())
            .map_err(|e| Error::Degenerate(format!("contour at level {tau}: {e}")))
    });
    let angular_models = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let radius_floor = 1e-9 * radius.max().max(CENTER_JITTER);
    Ok(ContourChart {
        center,
        tau_grid: tau_grid.to_vec(),
        angular_models,
        harmonics,
        reference_n: n,
        radius_floor,
        warnings,
    })
}

impl ContourChart {
    /// Unrearranged fitted radii, one per level.
    pub fn raw_radii(&self, theta: f64) -> Vec<f64> {
        let b = trig_basis(theta, self.harmonics);
        self.angular_models
            .iter()
            .map(|c| c.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// Contour radii at angle `theta`, nondecreasing in level and positive.
    pub fn radii(&self, theta: f64) -> Vec<f64> {
        let mut r = self.raw_radii(theta);
        r.sort_by(f64::total_cmp);
        for v in &mut r {
            *v = v.max(self.radius_floor);
        }
        r
    }

    /// Radius of the contour at grid level index `level` and angle `theta`.
    pub fn radius(&self, level: usize, theta: f64) -> f64 {
        self.radii(theta)[level]
    }

    /// Smallest grid level whose contour encloses `point`.
    pub fn rank_point(&self, point: [f64; 2]) -> Rank {
        let (r, theta) = polar(self.center, point);
        let radii = self.radii(theta);
        for (tau, q) in self.tau_grid.iter().zip(&radii) {
            if r <= q * (1.0 + 1e-12) {
                return Rank::Level(*tau);
            }
        }
        Rank::BeyondTop
    }

    /// Closed polyline `(theta, radius, x, y)` of one level's contour.
    pub fn polyline(&self, level: usize, points: usize) -> Vec<[f64; 4]> {
        (0..points)
            .map(|j| {
                let theta = TAU * j as f64 / points as f64;
                let r = self.radius(level, theta);
                [theta, r, self.center[0] + r * theta.cos(), self.center[1] + r * theta.sin()]
            })
            .collect()
    }

    /// Writes every contour as CSV rows `tau,theta,radius,x,y`.
    pub fn write_contours<W: Write>(&self, mut w: W, points: usize) -> Result<()> {
        writeln!(w, "tau,theta,radius,x,y")?;
        for (level, tau) in self.tau_grid.iter().enumerate() {
            for [theta, r, x, y] in self.polyline(level, points) {
                writeln!(w, "{tau:?},{theta:?},{r:?},{x:?},{y:?}")?;
            }
        }
        Ok(())
    }

    /// Index of a level in the grid, if present.
    pub fn level_index(&self, tau: f64) -> Option<usize> {
        self.tau_grid.iter().position(|&t| (t - tau).abs() < 1e-12)
    }
}

/// Models that can project a subject onto their components.
pub trait ScoreProjector: Sync {
    fn n_components(&self) -> usize;
    fn project(&self, subject: &Subject) -> Result<DVector<f64>>;
}

impl ScoreProjector for ComponentModel {
    fn n_components(&self) -> usize {
        ComponentModel::n_components(self)
    }

    fn project(&self, subject: &Subject) -> Result<DVector<f64>> {
        ComponentModel::project(self, subject)
    }
}

impl ScoreProjector for CovariateModel {
    fn n_components(&self) -> usize {
        CovariateModel::n_components(self)
    }

    fn project(&self, subject: &Subject) -> Result<DVector<f64>> {
        CovariateModel::project(self, subject)
    }
}

/// Outcome of screening one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub subject_id: String,
    pub scores: Vec<f64>,
    pub rank: Rank,
    pub flagged: bool,
}

/// Projects a subject, ranks its first two scores and flags it when the
/// rank exceeds `level`.
pub fn screen_subject<M: ScoreProjector + ?Sized>(
    subject: &Subject,
    model: &M,
    chart: &ContourChart,
    level: f64,
) -> Result<ScreeningResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("screening level {level} outside (0, 1)")));
    }
    if model.n_components() < 2 {
        return Err(Error::InvalidInput(format!(
            "screening needs at least two components, the model has {}",
            model.n_components()
        )));
    }
    let scores = model.project(subject)?;
    let rank = chart.rank_point([scores[0], scores[1]]);
    Ok(ScreeningResult {
        subject_id: subject.id.clone(),
        scores: scores.iter().copied().collect(),
        flagged: rank.value() > level,
        rank,
    })
}

/// Projected scores of every subject in `subjects`, one row each. Subjects
/// that cannot be projected keep the fallback row given by `fallback`.
pub fn projected_scores<M: ScoreProjector + ?Sized>(
    subjects: &[Subject],
    model: &M,
    fallback: impl Fn(usize) -> Option<Vec<f64>>,
) -> Result<DMatrix<f64>> {
    let k = model.n_components();
    let rows = par::map_slice(subjects, |s| model.project(s));
    let mut out = DMatrix::zeros(subjects.len(), k);
    for (i, row) in rows.into_iter().enumerate() {
        let values: Vec<f64> = match row {
            Ok(v) => v.iter().copied().collect(),
            Err(e) => fallback(i).ok_or(e)?,
        };
        for (j, v) in values.into_iter().enumerate().take(k) {
            out[(i, j)] = v;
        }
    }
    Ok(out)
}
