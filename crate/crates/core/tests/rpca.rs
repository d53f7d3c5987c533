mod common;

use common::{dot2, normal_scores, qr_least_squares, rise_fine, rng, spline, synth, two_components};
use growthpath::rpca::{
    alpha_step, fit_component, r_squared, residualize, score_step, select_basis, standardize,
};
use growthpath::simharness::{default_truth, generate, rise, GeneratorSpec};
use growthpath::{
    build_basis, center, fit, fit_mean, project_scores, BasisSystem, Domain, Error, FitConfig,
    SparseDataset, Subject,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

fn tight() -> FitConfig {
    FitConfig { delta1: 1e-11, delta2: 1e-15, max_iter: 5000, ..FitConfig::default() }
}

fn unit_basis(q: usize) -> BasisSystem {
    let d = Domain::new(0.0, 1.0).unwrap();
    let t: Vec<f64> = (0..=200).map(|i| i as f64 / 200.0).collect();
    build_basis(d, 2, q, &t).unwrap()
}

fn random_sparse(n: usize, m: usize, seed: u64) -> SparseDataset {
    let d = Domain::new(0.0, 1.0).unwrap();
    let mut g = rng(seed);
    let subjects = (0..n)
        .map(|i| {
            let k = 1 + g.random_range(0..m);
            let t: Vec<f64> = (0..k).map(|_| g.random::<f64>()).collect();
            let y = (0..k).map(|_| g.random::<f64>() * 4.0 - 2.0).collect();
            Subject::new(format!("r{i}"), t, y, None).unwrap()
        })
        .collect();
    SparseDataset::new(subjects, Some(d)).unwrap()
}

fn objective(data: &SparseDataset, basis: &BasisSystem, alpha: &DVector<f64>, r: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for (i, subj) in data.subjects().iter().enumerate() {
        for (&t, &y) in subj.times.iter().zip(&subj.values) {
            s += (y - r[i] * basis.spline_value(alpha, t).unwrap()).powi(2);
        }
    }
    s
}

#[test]
fn alpha_step_matches_dense_qr() {
    let basis = unit_basis(4);
    let data = random_sparse(80, 6, 1);
    let mut g = rng(2);
    let scores = DVector::from_fn(data.len(), |_, _| g.random::<f64>() * 2.0 - 0.5);
    let rows: usize = data.total_observations();
    let mut a = DMatrix::zeros(rows, basis.dim());
    let mut b = DVector::zeros(rows);
    let mut row = 0;
    for (i, s) in data.subjects().iter().enumerate() {
        for (&t, &y) in s.times.iter().zip(&s.values) {
            a.row_mut(row).copy_from(&(basis.evaluate(t).unwrap() * scores[i]).transpose());
            b[row] = y;
            row += 1;
        }
    }
    let oracle = qr_least_squares(&a, &b);
    let got = alpha_step(&data, &basis, &scores).unwrap();
    assert!((&got - &oracle).amax() < 1e-9, "difference {}", (&got - &oracle).amax());
}

#[test]
fn alpha_step_exact_and_mean_identity() {
    let basis = unit_basis(3);
    let truth = DVector::from_fn(basis.dim(), |j, _| (j as f64 * 0.7).cos());
    let r = normal_scores(60, &[1.5], 3).column(0).into_owned();
    let data = synth(basis.domain(), &DMatrix::from_column_slice(60, 1, r.as_slice()), 5, 0.0, 4, |_| 0.0, &[spline(&basis, &truth)]);
    let got = alpha_step(&data, &basis, &r).unwrap();
    assert!((&got - &truth).amax() < 1e-8);

    let noisy = random_sparse(70, 6, 5);
    let ones = DVector::from_element(noisy.len(), 1.0);
    let a = alpha_step(&noisy, &basis, &ones).unwrap();
    let m = fit_mean(&noisy, &basis).unwrap();
    assert!((&a - &m.coefficients).amax() < 1e-12);
}

#[test]
fn standardize_examples() {
    let basis = unit_basis(2);
    let unit = basis.metric().standardize(&DVector::from_element(basis.dim(), 1.0)).unwrap();
    let four = &unit * 4.0;
    assert!((standardize(&basis, &four).unwrap() - &unit).amax() < 1e-15);
    assert!((standardize(&basis, &unit).unwrap() - &unit).amax() < 1e-15);
    assert!(matches!(standardize(&basis, &(&unit * 1e-14)), Err(Error::Degenerate(_))));

    let data = random_sparse(40, 5, 6);
    let raw = alpha_step(&data, &basis, &DVector::from_element(data.len(), 0.7)).unwrap();
    let c = basis.metric().norm_sq(&raw).sqrt();
    let std = standardize(&basis, &raw).unwrap();
    let r = DVector::from_element(data.len(), 0.7);
    let before = objective(&data, &basis, &raw, &r);
    let after = objective(&data, &basis, &std, &(&r * c));
    assert!((before - after).abs() < 1e-12 * before.max(1.0));
}

#[test]
fn score_step_examples_and_extended_precision() {
    let basis = unit_basis(2);
    // a constant-one function: all coefficients equal under partition of unity
    let one = DVector::from_element(basis.dim(), 1.0);
    let single = SparseDataset::new(vec![Subject::new("a", vec![0.3], vec![2.0], None).unwrap()], Some(basis.domain())).unwrap();
    let (r, _) = score_step(&single, &basis, &one).unwrap();
    assert!((r[0] - 2.0).abs() < 1e-15);

    let alpha = basis.metric().standardize(&DVector::from_fn(basis.dim(), |j, _| 1.0 + j as f64)).unwrap();
    let f = spline(&basis, &alpha);
    let t = vec![0.1, 0.4, 0.45, 0.9];
    let three = SparseDataset::new(
        vec![Subject::new("b", t.clone(), t.iter().map(|&x| 3.0 * f(x)).collect(), None).unwrap()],
        Some(basis.domain()),
    )
    .unwrap();
    assert!((score_step(&three, &basis, &alpha).unwrap().0[0] - 3.0).abs() < 1e-12);

    let data = random_sparse(200, 8, 7);
    let (r, degenerate) = score_step(&data, &basis, &alpha).unwrap();
    assert!(degenerate.is_empty());
    for (i, s) in data.subjects().iter().enumerate() {
        let fx: Vec<f64> = s.times.iter().map(|&x| f(x)).collect();
        let oracle = dot2(&s.values, &fx) / dot2(&fx, &fx);
        assert!((r[i] - oracle).abs() <= 1e-12 * oracle.abs().max(1.0), "subject {i}");
    }
}

#[test]
fn residualize_examples() {
    let basis = unit_basis(3);
    let data = random_sparse(50, 5, 8);
    let alpha = basis.metric().standardize(&DVector::from_fn(basis.dim(), |j, _| (j as f64).sin() + 1.5)).unwrap();
    let zero = residualize(&data, &basis, &alpha, &DVector::zeros(data.len())).unwrap();
    assert_eq!(zero, data);

    let (r, _) = score_step(&data, &basis, &alpha).unwrap();
    let res = residualize(&data, &basis, &alpha, &r).unwrap();
    let (again, _) = score_step(&res, &basis, &alpha).unwrap();
    assert!(again.amax() < 1e-8);
}

#[test]
fn noiseless_rank_one_recovery() {
    let basis = unit_basis(3);
    let [a1, _] = two_components(&basis);
    let scores = normal_scores(200, &[2.0], 9);
    let data = synth(basis.domain(), &scores, 6, 0.0, 10, |_| 0.0, &[spline(&basis, &a1)]);
    let fitc = fit_component(&data, &basis, &[], &tight()).unwrap();
    let est = spline(&basis, &fitc.alpha);
    let truth = spline(&basis, &a1);
    let r = rise(|t| Ok(truth(t)), |t| Ok(est(t)), basis.domain(), 100).unwrap();
    assert!(r < 1e-10, "RISE {r}");
    let sign = if fitc.alpha.dot(&a1) < 0.0 { -1.0 } else { 1.0 };
    for i in 0..200 {
        assert!((sign * fitc.scores[i] - scores[(i, 0)]).abs() < 1e-8);
    }
    assert!(fitc.trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));

    // residualizing with the fitted pair leaves nothing
    let res = residualize(&data, &basis, &fitc.alpha, &fitc.scores).unwrap();
    assert!(res.subjects().iter().flat_map(|s| &s.values).all(|v| v.abs() < 1e-8));
}

#[test]
fn zero_data_is_flagged() {
    let basis = unit_basis(2);
    let data = random_sparse(30, 4, 11).map_values(|_, s| Ok(vec![0.0; s.len()])).unwrap();
    let c = fit_component(&data, &basis, &[], &FitConfig::default()).unwrap();
    assert_eq!(c.objective, 0.0);
    assert!(!c.warnings.is_empty());
}

#[test]
fn r_squared_examples() {
    let basis = unit_basis(3);
    let [a1, a2] = two_components(&basis);
    let scores = normal_scores(150, &[3.0, 1.0], 12);
    let data = synth(basis.domain(), &scores, 6, 0.0, 13, |t| 5.0 + t, &[spline(&basis, &a1), spline(&basis, &a2)]);
    let cfg = FitConfig { r2_target: 1.0, max_components: 2, ..tight() };
    let model = fit(&data, &basis, &cfg).unwrap();
    let centered = center(&data, &model.mean).unwrap();
    assert!(r_squared(&centered, &model, 0).unwrap().abs() < 1e-15);
    let r2 = r_squared(&centered, &model, 2).unwrap();
    assert!(r2 > 0.95 && r2 <= 1.0 + 1e-12, "R² {r2}");
    assert!((r_squared(&centered, &model, 1).unwrap() - model.r_squared[0]).abs() < 1e-10);
    assert!(model.r_squared.windows(2).all(|w| w[1] >= w[0]));
    assert!(r_squared(&centered, &model, 3).is_err());

    // a shared dense grid leaves no mean bleed into the residual
    let grid: Vec<f64> = (0..40).map(|g| (g as f64 + 0.5) / 40.0).collect();
    let f1 = spline(&basis, &a1);
    let f2 = spline(&basis, &a2);
    let subjects = (0..150)
        .map(|i| {
            let y = grid.iter().map(|&t| 5.0 + t + scores[(i, 0)] * f1(t) + scores[(i, 1)] * f2(t)).collect();
            Subject::new(format!("g{i}"), grid.clone(), y, None).unwrap()
        })
        .collect();
    let data = SparseDataset::new(subjects, Some(basis.domain())).unwrap();
    let model = fit(&data, &basis, &cfg).unwrap();
    let centered = center(&data, &model.mean).unwrap();
    let r2 = r_squared(&centered, &model, 2).unwrap();
    assert!((r2 - 1.0).abs() < 1e-6, "R² {r2}");
}

#[test]
fn dense_grid_eigen_oracle() {
    let basis = unit_basis(3);
    let [a1, a2] = two_components(&basis);
    let (n, m) = (200, 50);
    let grid: Vec<f64> = (0..m).map(|g| (g as f64 + 0.5) / m as f64).collect();
    let scores = normal_scores(n, &[3.0, 1.2], 14);
    let f1 = spline(&basis, &a1);
    let f2 = spline(&basis, &a2);
    let mean = |t: f64| 10.0 + 2.0 * t;
    let subjects = (0..n)
        .map(|i| {
            let y = grid.iter().map(|&t| mean(t) + scores[(i, 0)] * f1(t) + scores[(i, 1)] * f2(t)).collect();
            Subject::new(format!("d{i}"), grid.clone(), y, None).unwrap()
        })
        .collect();
    let data = SparseDataset::new(subjects, Some(basis.domain())).unwrap();
    let cfg = FitConfig { r2_target: 1.0, max_components: 2, ..tight() };
    let model = fit(&data, &basis, &cfg).unwrap();
    assert_eq!(model.n_components(), 2);

    // oracle: eigenvectors of the grid second-moment matrix of centered curves
    let y = DMatrix::from_fn(n, m, |i, g| data.subjects()[i].values[g]);
    let col_mean = DVector::from_fn(m, |g, _| y.column(g).sum() / n as f64);
    let yc = DMatrix::from_fn(n, m, |i, g| y[(i, g)] - col_mean[g]);
    let h = 1.0 / m as f64;
    let cov = yc.transpose() * &yc * (h / n as f64);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    for (k, &col) in order.iter().take(2).enumerate() {
        let v = eig.eigenvectors.column(col) / h.sqrt();
        let est: Vec<f64> = grid.iter().map(|&t| model.component_value(k, t).unwrap()).collect();
        let norm: f64 = v.iter().map(|x| x * x).sum();
        let minus: f64 = v.iter().zip(&est).map(|(a, b)| (a - b).powi(2)).sum();
        let plus: f64 = v.iter().zip(&est).map(|(a, b)| (a + b).powi(2)).sum();
        let r = minus.min(plus) / norm;
        assert!(r < 1e-3, "component {}: RISE {r}", k + 1);
    }
}

fn setting_one(seed: u64) -> (SparseDataset, growthpath::simharness::Truth) {
    let spec = GeneratorSpec { seed, ..GeneratorSpec::empirical_setting().unwrap() };
    generate(&spec).unwrap()
}

#[test]
fn two_component_setting_fit() {
    let (data, truth) = setting_one(21);
    let basis = build_basis(data.domain(), 2, 2, &data.pooled_times()).unwrap();
    let model = fit(&data, &basis, &FitConfig::default().with_seed(7)).unwrap();
    assert_eq!(model.n_components(), 2);
    assert!(model.r_squared[1] >= 0.90);
    for k in 0..2 {
        let r = rise(|t| truth.component_fns[k].value(t), |t| model.component_value(k, t), data.domain(), 100).unwrap();
        assert!(r < 0.01, "component {}: RISE {r}", k + 1);
    }
    for (k, e) in model.convergence_log.iter().enumerate() {
        assert!(e.max_relative_increase() <= 1e-12, "component {} trace increases", k + 1);
    }
    let g = basis.gram();
    for k in 0..2 {
        let n = (model.alphas[k].transpose() * g * &model.alphas[k])[(0, 0)];
        assert!((n - 1.0).abs() < 1e-8);
        let s: f64 = basis.integrals().dot(&model.alphas[k]);
        assert!(s >= 0.0);
    }
    assert!((model.alphas[0].transpose() * g * &model.alphas[1])[(0, 0)].abs() < 1e-6);

    let other = fit(&data, &basis, &FitConfig::default().with_seed(99)).unwrap();
    for k in 0..2 {
        let r = rise(|t| model.component_value(k, t), |t| other.component_value(k, t), data.domain(), 100).unwrap();
        assert!(r < 1e-4, "seed stability of component {}: {r}", k + 1);
    }
    let same = fit(&data, &basis, &FitConfig::default().with_seed(7)).unwrap();
    assert!((&same.scores - &model.scores).amax() <= 1e-12);
}

#[test]
fn pure_mean_data() {
    let (domain, mean, _) = default_truth().unwrap();
    let mut g = rng(22);
    let subjects = (0..100)
        .map(|i| {
            let t = common::uniform_times(&mut g, domain, 5);
            let y = t.iter().map(|&x| mean.value(x).unwrap()).collect();
            Subject::new(format!("m{i}"), t, y, None).unwrap()
        })
        .collect();
    let data = SparseDataset::new(subjects, Some(domain)).unwrap();
    let basis = build_basis(domain, 2, 2, &data.pooled_times()).unwrap();
    let model = fit(&data, &basis, &FitConfig::default()).unwrap();
    assert_eq!(model.n_components(), 1);
    assert!(model.scores.amax() < 1e-6);
    assert!(!model.warnings.is_empty());
}

#[test]
fn project_scores_examples() {
    let basis = unit_basis(3);
    let [a1, a2] = two_components(&basis);
    let scores = normal_scores(120, &[3.0, 1.0], 23);
    let data = synth(basis.domain(), &scores, 6, 0.0, 24, |t| 1.0 + t * t, &[spline(&basis, &a1), spline(&basis, &a2)]);
    let cfg = FitConfig { r2_target: 1.0, max_components: 2, ..tight() };
    let model = fit(&data, &basis, &cfg).unwrap();

    let t = vec![0.05, 0.2, 0.4, 0.55, 0.7, 0.95];
    let y = t
        .iter()
        .map(|&x| model.mean.value(x).unwrap() + 2.0 * model.component_value(0, x).unwrap() - model.component_value(1, x).unwrap())
        .collect();
    let s = Subject::new("new", t, y, None).unwrap();
    let p = project_scores(&s, &model).unwrap();
    assert!((p[0] - 2.0).abs() < 1e-8 && (p[1] + 1.0).abs() < 1e-8);

    // on exact rank-one data the projected and fitted scores coincide
    let one = normal_scores(120, &[3.0], 25);
    let rank_one = synth(basis.domain(), &one, 6, 0.0, 26, |t| 1.0 + t * t, &[spline(&basis, &a1)]);
    let single = fit(&rank_one, &basis, &FitConfig { r2_target: 1.0, max_components: 1, ..tight() }).unwrap();
    for (i, subj) in rank_one.subjects().iter().enumerate() {
        let p = project_scores(subj, &single).unwrap();
        assert!((p[0] - single.scores[(i, 0)]).abs() < 1e-6);
    }

    let one = Subject::new("one", vec![0.5], vec![1.0], None).unwrap();
    assert!(matches!(project_scores(&one, &model), Err(Error::InsufficientData { .. })));
    let tied = Subject::new("tied", vec![0.5, 0.5, 0.5], vec![1.0, 2.0, 3.0], None).unwrap();
    assert!(matches!(project_scores(&tied, &model), Err(Error::Degenerate(_))));
}

#[test]
fn scale_and_time_shift_equivariance() {
    let (data, _) = setting_one(31);
    let basis = build_basis(data.domain(), 2, 2, &data.pooled_times()).unwrap();
    let cfg = FitConfig::default().with_seed(3);
    let model = fit(&data, &basis, &cfg).unwrap();

    let c = 2.5;
    let scaled = data.map_values(|_, s| Ok(s.values.iter().map(|v| c * v).collect())).unwrap();
    let ms = fit(&scaled, &basis, &cfg).unwrap();
    assert_eq!(ms.n_components(), model.n_components());
    for k in 0..model.n_components() {
        assert!((&ms.alphas[k] - &model.alphas[k]).amax() < 1e-8);
    }
    assert!((&ms.scores - &model.scores * c).amax() < 1e-8 * c);

    let shift = 3.0;
    let shifted = SparseDataset::new(
        data.subjects()
            .iter()
            .map(|s| Subject::new(s.id.clone(), s.times.iter().map(|t| t + shift).collect(), s.values.clone(), None).unwrap())
            .collect(),
        Some(Domain::new(data.domain().lo + shift, data.domain().hi + shift).unwrap()),
    )
    .unwrap();
    let sb = build_basis(shifted.domain(), 2, 2, &shifted.pooled_times()).unwrap();
    let mt = fit(&shifted, &sb, &cfg).unwrap();
    for k in 0..model.n_components() {
        let r = rise_fine(data.domain(), |t| model.component_value(k, t).unwrap(), |t| mt.component_value(k, t + shift).unwrap());
        assert!(r < 1e-8, "component {}: RISE {r}", k + 1);
    }
}

#[test]
fn basis_selection() {
    let (data, _) = setting_one(41);
    let cfg = FitConfig::default();
    let one = select_basis(&data, &[3], &[4], &cfg).unwrap();
    assert_eq!((one.degree, one.num_interior), (3, 4));

    // a candidate with more coefficients than observations is skipped
    let tiny = data.select(&[0, 1, 2]);
    let choice = select_basis(&tiny, &[1], &[0, 30], &FitConfig { max_components: 1, ..cfg }).unwrap();
    assert_eq!(choice.num_interior, 0);

    let mut hits = 0;
    for r in 0..20 {
        let spec = GeneratorSpec { seed: 1000 + r, n_subjects: 200, ..GeneratorSpec::empirical_setting().unwrap() };
        let (d, _) = generate(&spec).unwrap();
        let c = select_basis(&d, &[2], &[2, 8], &FitConfig { seed: r, ..cfg }).unwrap();
        hits += (c.num_interior == 2) as usize;
    }
    assert!(hits >= 18, "selected the generating basis {hits} of 20 times");
}
