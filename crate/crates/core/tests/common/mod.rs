//! Shared fixtures and independent reference computations for the
//! integration tests.

#![allow(dead_code)]

use growthpath::{BasisSystem, Domain, SparseDataset, Subject};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Textbook Cox–de Boor recursion for basis function `i` of `degree` on the
/// full knot vector, with the right end of the domain assigned to the last
/// nonempty span.
pub fn cox_de_boor(knots: &[f64], degree: usize, i: usize, t: f64) -> f64 {
    if degree == 0 {
        let last = *knots.last().unwrap();
        let inside = knots[i] <= t && t < knots[i + 1];
        let right_end = t == last && knots[i + 1] == last && knots[i] < last;
        return if inside || right_end { 1.0 } else { 0.0 };
    }
    let mut v = 0.0;
    let d1 = knots[i + degree] - knots[i];
    if d1 > 0.0 {
        v += (t - knots[i]) / d1 * cox_de_boor(knots, degree - 1, i, t);
    }
    let d2 = knots[i + degree + 1] - knots[i + 1];
    if d2 > 0.0 {
        v += (knots[i + degree + 1] - t) / d2 * cox_de_boor(knots, degree - 1, i + 1, t);
    }
    v
}

/// `∫ f` over the domain by composite 5-point Gauss–Legendre on `panels`
/// equal panels.
pub fn integrate<F: Fn(f64) -> f64>(domain: Domain, panels: usize, f: F) -> f64 {
    const X: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.236_926_885_056_189,
        0.478_628_670_499_366,
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
    ];
    let h = domain.width() / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let mid = domain.lo + (p as f64 + 0.5) * h;
        for (x, w) in X.iter().zip(W) {
            s += 0.5 * h * w * f(mid + 0.5 * h * x);
        }
    }
    s
}

/// Error-free product `a·b = p + e`.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Error-free sum `a + b = s + e`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

/// Dot product evaluated in twice the working precision.
pub fn dot2(x: &[f64], y: &[f64]) -> f64 {
    let (mut p, mut s) = two_prod(x[0], y[0]);
    for i in 1..x.len() {
        let (h, r) = two_prod(x[i], y[i]);
        let (q, e) = two_sum(p, h);
        p = q;
        s += e + r;
    }
    p + s
}

/// Least squares by Householder QR of the explicit design.
pub fn qr_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let qr = a.clone().qr();
    let qtb = qr.q().transpose() * b;
    qr.r().solve_upper_triangular(&qtb).expect("full column rank")
}

pub fn uniform_times(rng: &mut ChaCha8Rng, domain: Domain, m: usize) -> Vec<f64> {
    (0..m).map(|_| domain.lo + domain.width() * rng.random::<f64>()).collect()
}

/// Curves `mean(t) + Σ_k r_ik f_k(t) + σ ε` at uniform random times.
pub fn synth<M, F>(
    domain: Domain,
    scores: &DMatrix<f64>,
    m: usize,
    noise: f64,
    seed: u64,
    mean: M,
    comps: &[F],
) -> SparseDataset
where
    M: Fn(f64) -> f64,
    F: Fn(f64) -> f64,
{
    let mut g = rng(seed);
    let subjects = (0..scores.nrows())
        .map(|i| {
            let times = uniform_times(&mut g, domain, m);
            let values = times
                .iter()
                .map(|&t| {
                    let mut y = mean(t);
                    for (k, f) in comps.iter().enumerate() {
                        y += scores[(i, k)] * f(t);
                    }
                    y + noise * normal(&mut g)
                })
                .collect();
            Subject::new(format!("s{i:04}"), times, values, None).unwrap()
        })
        .collect();
    SparseDataset::new(subjects, Some(domain)).unwrap()
}

/// Spline `π(t)ᵀc` as a closure.
pub fn spline(basis: &BasisSystem, c: &DVector<f64>) -> impl Fn(f64) -> f64 {
    let basis = basis.clone();
    let c = c.clone();
    move |t| basis.spline_value(&c, t).unwrap()
}

/// Two orthonormal coefficient vectors in `basis`: a tilted level and a
/// bump, orthonormalized under the Gram matrix.
pub fn two_components(basis: &BasisSystem) -> [DVector<f64>; 2] {
    let p = basis.dim();
    let g1 = DVector::from_fn(p, |j, _| 1.0 + 0.3 * j as f64 / p as f64);
    let g2 = DVector::from_fn(p, |j, _| {
        let x = j as f64 / (p - 1) as f64;
        (std::f64::consts::PI * x).sin() - 0.4
    });
    let a1 = basis.metric().standardize(&g1).unwrap();
    let a2 = basis.orthogonalize(&g2, std::slice::from_ref(&a1)).unwrap();
    [a1, a2]
}

/// Independent normal scores with the given standard deviations.
pub fn normal_scores(n: usize, sds: &[f64], seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    DMatrix::from_fn(n, sds.len(), |_, k| sds[k] * normal(&mut g))
}

/// Relative integrated squared error by quadrature, after sign alignment.
pub fn rise_fine<F: Fn(f64) -> f64, G: Fn(f64) -> f64>(domain: Domain, truth: F, est: G) -> f64 {
    let norm = integrate(domain, 400, |t| truth(t).powi(2));
    let minus = integrate(domain, 400, |t| (truth(t) - est(t)).powi(2));
    let plus = integrate(domain, 400, |t| (truth(t) + est(t)).powi(2));
    minus.min(plus) / norm
}
