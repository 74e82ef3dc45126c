use scam_core::data::{synth_dataset, FeatureStore, SynthConfig};
use scam_core::model::{ConvLayer, Model, ModelConfig};
use scam_core::trainkit::{evaluate, prepare, train, TrainConfig};

fn small_setup() -> (SynthConfig, ModelConfig, TrainConfig) {
    let synth = SynthConfig {
        sessions: 10,
        segments_per_session: 6,
        audio_bins: 8,
        frames: 5,
        visual_size: [2, 2],
        seed: 0,
        ..SynthConfig::default()
    };
    let model = ModelConfig {
        audio_bins: 8,
        audio_conv: vec![ConvLayer {
            filters: 2,
            kernel: [3, 3],
            stride: 1,
        }],
        audio_pool: [2, 1],
        feature_dim: 4,
        lstm_hidden: 3,
        head_hidden: 3,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        epochs: 3,
        test_fraction: 0.2,
        seed: 0,
        ..TrainConfig::default()
    };
    (synth, model, train)
}

#[test]
fn saved_checkpoints_reproduce_the_reported_evaluations() {
    let (synth, model_cfg, cfg) = small_setup();
    let ds = synth_dataset(&synth).unwrap();
    let data = prepare(&ds.manifest, model_cfg.composition_size, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();

    // The feature store survives a disk round trip unchanged.
    let store_path = dir.path().join("features.tensors");
    ds.features.save(&store_path).unwrap();
    let store = FeatureStore::load(&store_path).unwrap();
    assert_eq!(store.len(), ds.manifest.entries.len());

    let mut model = Model::new(model_cfg).unwrap();
    let outcome = train(&mut model, &data, &store, &cfg, Some(dir.path())).unwrap();
    assert_eq!(outcome.epochs.len(), 3);
    assert!(outcome.best_report.ua >= outcome.epochs.iter().map(|e| e.test_ua).fold(f64::MIN, f64::max));

    let (final_model, extra) = Model::load(&dir.path().join("final.ckpt")).unwrap();
    assert_eq!(final_model, model);
    assert_eq!(extra["epoch"], 2);
    assert_eq!(evaluate(&final_model, &data.test, &store, &cfg).unwrap(), outcome.final_report);

    let (best_model, extra) = Model::load(&dir.path().join("best.ckpt")).unwrap();
    assert_eq!(extra["epoch"], outcome.best_epoch);
    let stored_cfg: TrainConfig = serde_json::from_value(extra["train"].clone()).unwrap();
    assert_eq!(stored_cfg, cfg);
    assert_eq!(evaluate(&best_model, &data.test, &store, &cfg).unwrap(), outcome.best_report);

    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + outcome.history.len());
}
