use growthpath::contour::{build_chart, default_tau_grid};
use growthpath::covariate::{fit_covariate, MuSpec};
use growthpath::model_io::{FittedModel, ModelFile};
use growthpath::simharness::{generate, GeneratorSpec};
use growthpath::{build_basis, fit, FitConfig, SparseDataset, Subject};

fn small_data(n: usize) -> SparseDataset {
    let mut spec = GeneratorSpec::normal_setting().unwrap();
    spec.n_subjects = n;
    generate(&spec).unwrap().0
}

fn with_covariate(data: &SparseDataset) -> SparseDataset {
    let subjects = data
        .subjects()
        .iter()
        .enumerate()
        .map(|(i, s)| Subject { covariate: Some(1.0 + (i % 7) as f64 * 0.37), ..s.clone() })
        .collect();
    SparseDataset::new(subjects, Some(data.domain())).unwrap()
}

fn plain_file() -> ModelFile {
    let data = small_data(120);
    let basis = build_basis(data.domain(), 2, 2, &data.pooled_times()).unwrap();
    let model = fit(&data, &basis, &FitConfig { max_components: 2, ..FitConfig::default() }).unwrap();
    let chart = build_chart(&model.scores, &default_tau_grid(), 3).unwrap();
    ModelFile { model: FittedModel::Plain(model), chart: Some(chart) }
}

fn assert_round_trip(file: &ModelFile) {
    let text = file.to_json().unwrap();
    let back = ModelFile::from_json(&text).unwrap();
    assert_eq!(&back, file);
    assert_eq!(back.to_json().unwrap(), text);
}

#[test]
fn plain_model_round_trips_exactly() {
    let file = plain_file();
    assert_round_trip(&file);
    assert_round_trip(&ModelFile { chart: None, ..file });
}

#[test]
fn covariate_models_round_trip_exactly() {
    let data = with_covariate(&small_data(120));
    let basis = build_basis(data.domain(), 2, 2, &data.pooled_times()).unwrap();
    let cfg = FitConfig { max_components: 2, ..FitConfig::default() };
    for mu in [MuSpec::Polynomial { degree: 1 }, MuSpec::Polynomial { degree: 2 }, MuSpec::BSpline { degree: 2, num_interior: 1 }] {
        let model = fit_covariate(&data, &basis, mu, &cfg).unwrap();
        assert_round_trip(&ModelFile { model: FittedModel::Covariate(model), chart: None });
    }
}

#[test]
fn save_and_load_through_a_file() {
    let file = plain_file();
    let dir = std::env::temp_dir().join(format!("growthpath-model-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("model.json");
    file.save(&path).unwrap();
    assert_eq!(ModelFile::load(&path).unwrap(), file);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn schema_mismatch_is_rejected() {
    let text = plain_file().to_json().unwrap();
    let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 2", 1);
    assert_ne!(bumped, text);
    assert!(ModelFile::from_json(&bumped).is_err());
    assert!(ModelFile::from_json("{\"model\": {}}").is_err());
    assert!(ModelFile::from_json("not json").is_err());
}
