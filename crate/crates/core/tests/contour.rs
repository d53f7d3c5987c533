mod common;

use common::{normal, rng};
use growthpath::contour::{build_chart, default_tau_grid, screen_subject, trig_basis, ContourChart, Rank, ANGULAR_GRID};
use growthpath::quantreg;
use growthpath::simharness::{generate, GeneratorSpec};
use growthpath::{build_basis, fit, Error, FitConfig, Subject};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::f64::consts::{PI, TAU};

fn normal_cloud(n: usize, sds: [f64; 2], seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    DMatrix::from_fn(n, 2, |_, c| sds[c] * normal(&mut g))
}

/// Points with a skewed, angle-dependent radius distribution.
fn skewed_cloud(n: usize, seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    let mut m = DMatrix::zeros(n, 2);
    for i in 0..n {
        let theta = TAU * g.random::<f64>();
        let r = (1.0 + 0.5 * theta.cos()) * (-g.random::<f64>().ln());
        m[(i, 0)] = 3.0 + r * theta.cos();
        m[(i, 1)] = -1.0 + 2.0 * r * theta.sin();
    }
    m
}

fn angle_grid() -> Vec<f64> {
    (0..ANGULAR_GRID).map(|j| TAU * j as f64 / ANGULAR_GRID as f64).collect()
}

fn level_position(chart: &ContourChart, rank: Rank) -> usize {
    match rank {
        Rank::Level(t) => chart.level_index(t).unwrap(),
        Rank::BeyondTop => chart.tau_grid.len(),
    }
}

fn polar(center: [f64; 2], p: [f64; 2]) -> (f64, f64) {
    let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
    (dx.hypot(dy), dy.atan2(dx))
}

#[test]
fn normal_median_radius() {
    let scores = normal_cloud(2000, [1.0, 1.0], 1);
    let chart = build_chart(&scores, &[0.5], 0).unwrap();
    // the radius of a standard bivariate normal has median sqrt(2 ln 2)
    let expected = (2.0 * 2f64.ln()).sqrt();
    for theta in angle_grid() {
        assert!((chart.radius(0, theta) - expected).abs() < 0.05);
    }
}

#[test]
fn circle_gives_unit_contours() {
    let n = 120;
    let mut m = DMatrix::zeros(n, 2);
    for i in 0..n {
        let theta = TAU * (i as f64 + 0.5) / n as f64;
        m[(i, 0)] = 2.0 + theta.cos();
        m[(i, 1)] = -3.0 + theta.sin();
    }
    let chart = build_chart(&m, &default_tau_grid(), 3).unwrap();
    for theta in angle_grid().iter().step_by(7) {
        for r in chart.radii(*theta) {
            assert!((r - 1.0).abs() < 1e-6, "radius {r}");
        }
    }
}

#[test]
fn check_loss_optimality() {
    let mut g = rng(3);
    let n = 400;
    let theta: Vec<f64> = (0..n).map(|_| TAU * g.random::<f64>()).collect();
    let y = DVector::from_fn(n, |i, _| 1.0 + 0.4 * theta[i].sin() + (-g.random::<f64>().ln()));
    for tau in [0.1, 0.5, 0.9] {
        // intercept only: the optimum is an order statistic
        let ones = DMatrix::from_element(n, 1, 1.0);
        let fit0 = quantreg::fit(&ones, &y, tau).unwrap();
        let best = y
            .iter()
            .map(|&q| quantreg::objective(&ones, &y, &DVector::from_element(1, q), tau))
            .fold(f64::INFINITY, f64::min);
        assert!(fit0.objective - best <= 1e-8 * best.max(1.0));

        // trigonometric design: no random perturbation improves the objective
        let x = DMatrix::from_fn(n, 5, |i, c| trig_basis(theta[i], 2)[c]);
        let fit = quantreg::fit(&x, &y, tau).unwrap();
        let at = quantreg::objective(&x, &y, &fit.coefficients, tau);
        assert!((at - fit.objective).abs() <= 1e-9 * at.max(1.0));
        for _ in 0..200 {
            let step = DVector::from_fn(5, |_, _| 0.05 * normal(&mut g));
            let other = quantreg::objective(&x, &y, &(&fit.coefficients + step), tau);
            assert!(other >= at - 1e-8 * at.max(1.0));
        }
    }
}

#[test]
fn subgradient_balance() {
    let n = 1000;
    let scores = skewed_cloud(n, 4);
    let grid = default_tau_grid();
    let chart = build_chart(&scores, &grid, 3).unwrap();
    let bound = 2.0 / (n as f64).sqrt();
    for (level, &tau) in grid.iter().enumerate() {
        let inside = (0..n)
            .filter(|&i| {
                let (r, theta) = polar(chart.center, [scores[(i, 0)], scores[(i, 1)]]);
                r <= chart.radius(level, theta)
            })
            .count() as f64
            / n as f64;
        assert!((inside - tau).abs() <= bound, "level {tau}: fraction {inside}");
    }
}

#[test]
fn chart_invariants() {
    let cloud = skewed_cloud(300, 5);
    let chart = build_chart(&cloud, &default_tau_grid(), 3).unwrap();
    let mut sorted: Vec<f64> = cloud.column(0).iter().copied().collect();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(chart.center[0], 0.5 * (sorted[149] + sorted[150]));
    assert_eq!(chart.reference_n, 300);
    for theta in angle_grid() {
        let r = chart.radii(theta);
        assert!(r.iter().all(|&v| v > 0.0));
        assert!(r.windows(2).all(|w| w[1] >= w[0]), "contours cross at {theta}");
    }
}

#[test]
fn rank_examples() {
    let chart = build_chart(&normal_cloud(800, [2.0, 1.0], 6), &default_tau_grid(), 3).unwrap();
    assert_eq!(chart.rank_point(chart.center), Rank::Level(0.05));
    let top = chart.level_index(0.95).unwrap();
    let on_curve = [chart.center[0] + chart.radius(top, 0.0), chart.center[1]];
    assert_eq!(chart.rank_point(on_curve), Rank::Level(0.95));
    let outside = [chart.center[0] + 1.01 * chart.radius(chart.tau_grid.len() - 1, 0.0), chart.center[1]];
    assert_eq!(chart.rank_point(outside), Rank::BeyondTop);
    assert_eq!(Rank::BeyondTop.value(), 1.0);
}

#[test]
fn self_ranking_calibration() {
    let mut total = 0.0;
    for rep in 0..20 {
        let scores = normal_cloud(500, [15.0, 6.0], 100 + rep);
        let chart = build_chart(&scores, &default_tau_grid(), 3).unwrap();
        let above = (0..500)
            .filter(|&i| chart.rank_point([scores[(i, 0)], scores[(i, 1)]]).value() > 0.95)
            .count();
        total += above as f64 / 500.0;
    }
    let mean = total / 20.0;
    assert!(mean <= 0.07, "average share above 0.95: {mean}");
}

#[test]
fn held_out_coverage() {
    let levels = [0.5, 0.75, 0.95];
    let mut coverage = [0.0; 3];
    for rep in 0..20 {
        let reference = normal_cloud(2000, [15.0, 6.0], 200 + rep);
        let held_out = normal_cloud(2000, [15.0, 6.0], 300 + rep);
        let chart = build_chart(&reference, &default_tau_grid(), 3).unwrap();
        for (c, &tau) in coverage.iter_mut().zip(&levels) {
            let inside = (0..2000)
                .filter(|&i| chart.rank_point([held_out[(i, 0)], held_out[(i, 1)]]).value() <= tau + 1e-12)
                .count();
            *c += inside as f64 / 2000.0 / 20.0;
        }
    }
    for (c, tau) in coverage.iter().zip(levels) {
        assert!((c - tau).abs() <= 0.04, "level {tau}: coverage {c}");
    }
}

#[test]
fn rotation_equivariance() {
    let n = 2000;
    let cloud = skewed_cloud(n, 7);
    let mut g = rng(8);
    for harmonics in [2, 3] {
        let chart = build_chart(&cloud, &default_tau_grid(), harmonics).unwrap();
        let c = chart.center;
        let queries: Vec<[f64; 2]> = (0..200).map(|_| [c[0] + 2.0 * normal(&mut g), c[1] + 3.0 * normal(&mut g)]).collect();
        for angle in [0.3, PI / 2.0, 2.0] {
            let (s, co) = f64::sin_cos(angle);
            let rot = |p: [f64; 2]| {
                let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
                [c[0] + co * dx - s * dy, c[1] + s * dx + co * dy]
            };
            let turned = DMatrix::from_fn(n, 2, |i, k| rot([cloud[(i, 0)], cloud[(i, 1)]])[k]);
            let chart2 = build_chart(&turned, &default_tau_grid(), harmonics).unwrap();
            for q in &queries {
                let a = level_position(&chart, chart.rank_point(*q)) as i64;
                let b = level_position(&chart2, chart2.rank_point(rot(*q))) as i64;
                assert!((a - b).abs() <= 1, "H={harmonics}, angle {angle}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn translation_invariance() {
    let scores = skewed_cloud(400, 9);
    let shift = [120.0, -35.0];
    let moved = DMatrix::from_fn(400, 2, |i, k| scores[(i, k)] + shift[k]);
    let a = build_chart(&scores, &default_tau_grid(), 3).unwrap();
    let b = build_chart(&moved, &default_tau_grid(), 3).unwrap();
    let mut g = rng(10);
    for _ in 0..300 {
        let q = [3.0 + 2.0 * normal(&mut g), -1.0 + 3.0 * normal(&mut g)];
        assert_eq!(a.rank_point(q), b.rank_point([q[0] + shift[0], q[1] + shift[1]]));
    }
}

#[test]
fn build_errors() {
    let grid = default_tau_grid();
    assert!(matches!(
        build_chart(&normal_cloud(49, [1.0, 1.0], 11), &grid, 3),
        Err(Error::InsufficientData { needed: 50, got: 49 })
    ));
    let small = build_chart(&normal_cloud(60, [1.0, 1.0], 12), &grid, 3).unwrap();
    assert!(!small.warnings.is_empty());
    let scores = normal_cloud(100, [1.0, 1.0], 13);
    assert!(build_chart(&scores, &[0.5, 0.5], 3).is_err());
    assert!(build_chart(&scores, &[0.0, 0.5], 3).is_err());
    assert!(build_chart(&scores, &[], 3).is_err());
    assert!(build_chart(&scores.columns(0, 1).into_owned(), &grid, 3).is_err());

    // a reference point on the center is moved off it, not rejected
    let mut with_center = scores.clone();
    let c0: Vec<f64> = {
        let mut v: Vec<f64> = scores.column(0).iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    };
    with_center[(0, 0)] = c0[50];
    let chart = build_chart(&with_center, &grid, 3);
    assert!(chart.is_ok());
}

fn synthesized(model: &growthpath::ComponentModel, id: &str, times: &[f64], r: [f64; 2]) -> Subject {
    let y = times
        .iter()
        .map(|&t| {
            model.mean.value(t).unwrap() + r[0] * model.component_value(0, t).unwrap() + r[1] * model.component_value(1, t).unwrap()
        })
        .collect();
    Subject::new(id, times.to_vec(), y, None).unwrap()
}

#[test]
fn screening_examples() {
    let times = [9.5, 11.0, 12.3, 13.1, 14.4, 15.8];
    let mut flagged = 0;
    for rep in 0..20 {
        let spec = GeneratorSpec { seed: 500 + rep, ..GeneratorSpec::empirical_setting().unwrap() };
        let (data, _) = generate(&spec).unwrap();
        let basis = build_basis(data.domain(), 2, 2, &data.pooled_times()).unwrap();
        let cfg = FitConfig { r2_target: 1.0, max_components: 2, ..FitConfig::default().with_seed(rep) };
        let model = fit(&data, &basis, &cfg).unwrap();
        let chart = build_chart(&model.scores, &default_tau_grid(), 3).unwrap();

        let centered = synthesized(&model, "center", &times, chart.center);
        for level in [0.05, 0.5, 0.95, 0.99] {
            let res = screen_subject(&centered, &model, &chart, level).unwrap();
            assert!(!res.flagged);
        }

        let sd2 = {
            let col = model.scores.column(1);
            let m = col.mean();
            (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt()
        };
        let extreme = synthesized(&model, "high", &times, [chart.center[0], chart.center[1] + 6.0 * sd2]);
        let res = screen_subject(&extreme, &model, &chart, 0.95).unwrap();
        assert_eq!(res.flagged, res.rank.value() > 0.95);
        if res.flagged {
            flagged += 1;
        }

        if rep == 0 {
            let single = Subject::new("single", vec![12.0], vec![150.0], None).unwrap();
            assert!(screen_subject(&single, &model, &chart, 0.95).is_err());
            assert!(screen_subject(&centered, &model, &chart, 1.0).is_err());
        }
    }
    assert!(flagged >= 19, "{flagged} of 20 flagged");
}
