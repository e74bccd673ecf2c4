use lora_curve::bma::{bma_predict, Temperature};
use lora_curve::checkpoint::Checkpoint;
use lora_curve::experiment::{build_curve, DatasetSpec, ExperimentConfig};
use lora_curve::method::Method;
use lora_curve::Error;

#[test]
fn trained_curve_survives_save_and_load() {
    let mut config = ExperimentConfig::default();
    config.dataset.spec = DatasetSpec::Parity {
        n: 200,
        seq_len: 5,
        vocab: 3,
    };
    config.train.curve_steps = 40;
    let net = config.network().unwrap();
    let data = config.dataset().unwrap();
    let method = Method::Free { anchors: 2, handles: 2 };
    let (points, _) = build_curve(&net, &data, &config.train, method, 7, &[]).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flc.lcrv");
    Checkpoint::new(&net, points.clone(), Some(method)).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.points, points);
    assert_eq!(back.method, Some(method));

    let reloaded = back.network().unwrap();
    let before = bma_predict(&net, &points, &data.test.features, None, Temperature::Infinite, None).unwrap();
    let after = bma_predict(&reloaded, &back.points, &data.test.features, None, Temperature::Infinite, None).unwrap();
    assert_eq!(before.probs, after.probs);

    std::fs::remove_file(dir.path().join("flc.json")).unwrap();
    assert!(matches!(Checkpoint::load(&path), Err(Error::MissingFile(_))));
}

#[test]
fn config_json_round_trip() {
    let mut config = ExperimentConfig {
        sweep_methods: vec![Method::Map, Method::DeepEnsemble(4), "ALC(3,2)".parse().unwrap()],
        seeds: vec![1, 2, 3],
        ..ExperimentConfig::default()
    };
    config.inference.temperature = Temperature::new(0.5).unwrap();
    config.inference.grid_m = Some(9);
    let text = config.to_json().unwrap();
    assert_eq!(ExperimentConfig::from_json(&text).unwrap(), config);
    assert!(text.contains("\"ALC(3,2)\""));

    let partial = r#"{"dataset": {"kind": "xor_rings", "n": 300, "noise": 0.1}, "method": "Lin(3)"}"#;
    let parsed = ExperimentConfig::from_json(partial).unwrap();
    assert_eq!(parsed.method, Method::Linear(3));
    assert_eq!(parsed.train, ExperimentConfig::default().train);
    assert!(ExperimentConfig::from_json(r#"{"method": "FLC(0,1)"}"#).is_err());
}
