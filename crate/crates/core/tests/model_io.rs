use cfmf::eval::train_model;
use cfmf::model_io::{read_model, write_model};
use cfmf::synthetic::generate_synthetic;
use cfmf::{Algorithm, Error, ExperimentConfig, Mixture, SyntheticSpec};

fn data() -> cfmf::Dataset {
    generate_synthetic(&SyntheticSpec {
        users: 40,
        items: 30,
        k_true: 3,
        density: 0.3,
        noise_sd: 0.5,
        mixture: Mixture::PerUser,
        seed: 31,
    })
    .unwrap()
}

fn config() -> ExperimentConfig {
    ExperimentConfig {
        k: 4,
        top_n: 5,
        max_iter: 8,
        ..ExperimentConfig::default()
    }
}

#[test]
fn every_model_kind_round_trips_exactly() {
    let data = data();
    for algo in Algorithm::ALL {
        let (model, _) = train_model(&data, algo, &config()).unwrap();
        let text = write_model(&model);
        let back = read_model(&text).unwrap_or_else(|e| panic!("{algo}: {e}"));
        assert_eq!(back, model, "{algo}");
        assert_eq!(write_model(&back), text, "{algo}");
    }
}

#[test]
fn literal_baseline_mode_survives() {
    let cfg = ExperimentConfig {
        baseline_literal_sum: true,
        ..config()
    };
    let (model, _) = train_model(&data(), Algorithm::Baseline, &cfg).unwrap();
    assert_eq!(read_model(&write_model(&model)).unwrap(), model);
}

#[test]
fn header_is_versioned() {
    let (model, _) = train_model(&data(), Algorithm::MfAls, &config()).unwrap();
    let text = write_model(&model);
    assert!(text.starts_with("cfmf-model 1\nkind factor\ndims 4 "));
}

#[test]
fn malformed_files_rejected() {
    let (model, _) = train_model(&data(), Algorithm::CfMfV2, &config()).unwrap();
    let text = write_model(&model);
    let cases = [
        String::new(),
        text.replacen("cfmf-model 1", "cfmf-model 2", 1),
        text.replacen("cfmf-model", "other-model", 1),
        text.replacen("kind integrated", "kind forest", 1),
        text.replacen("version v2", "version v3", 1),
        text[..text.len() / 2].to_string(),
    ];
    for bad in &cases {
        assert!(matches!(read_model(bad), Err(Error::Format(_))), "accepted {:?}", &bad[..bad.len().min(40)]);
    }
}
