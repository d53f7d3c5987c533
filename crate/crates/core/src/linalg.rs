//! Small dense linear-algebra and quadrature helpers shared by the fitting code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal jitter added to every normal-equation solve.
pub const JITTER: f64 = 1e-10;

/// Smallest admissible eigenvalue of a normal matrix relative to its largest.
const RANK_TOL: f64 = 1e-12;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Solves `(a + JITTER·I) x = b` for a symmetric positive semi-definite `a`.
///
/// Fails when `a` is numerically singular, i.e. its smallest eigenvalue is
/// below `1e-12` of its largest, which jitter alone cannot make meaningful.
pub fn solve_normal(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min < RANK_TOL * max || !min.is_finite() {
        return Err(Error::RankDeficient(format!(
            "{what}: normal matrix of size {} has eigenvalue range [{min:e}, {max:e}]",
            a.nrows()
        )));
    }
    let proj = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter()
            .zip(eig.eigenvalues.iter())
            .map(|(p, l)| p / (l + JITTER)),
    );
    Ok(&eig.eigenvectors * scaled)
}

/// Symmetric square root and its inverse, with eigenvalues clamped at `1e-12`.
/// Also returns the smallest unclamped eigenvalue.
pub fn sym_sqrt(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let n = a.nrows();
    let v = &eig.eigenvectors;
    let mut half = DMatrix::zeros(n, n);
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let l = eig.eigenvalues[k].max(1e-12);
        let s = l.sqrt();
        let col = v.column(k);
        half += (col * col.transpose()) * s;
        inv += (col * col.transpose()) / s;
    }
    (half, inv, min)
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" definition). `sorted` must be nondecreasing and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, 0.5)
}
