use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uavm::augment::BalancedSampler;
use uavm::data::synth::{generate, SynthSpec};
use uavm::optim::{Adam, AdamHyper};
use uavm::trainer::{evaluate, predict_modality, run_training, train_step, TrainBatch};
use uavm::{
    Dataset, FeatureSequence, Label, LossKind, Modality, ModelConfig, ModelMode, PairedSample, ParamGroup, Split,
    TrainConfig, Uavm,
};

fn spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_classes: 3,
        samples_per_class: 6,
        eval_per_class: 3,
        seq_len: 6,
        feature_dim: 8,
        latent_dim: 4,
        event_span: 2,
        seed,
        ..SynthSpec::default()
    }
}

fn model_config() -> ModelConfig {
    ModelConfig {
        modal_dim: 8,
        shared_dim: 8,
        num_heads: 2,
        seq_len: 6,
        feature_dim: 8,
        num_classes: 3,
        ..ModelConfig::default()
    }
}

fn quick(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn a_small_step_lowers_the_loss() {
    let mut decreased = 0;
    for seed in 0..20 {
        let d = generate(&spec(seed)).unwrap();
        let mut model = Uavm::new(model_config(), seed).unwrap();
        let mut opt = Adam::new(AdamHyper::default());
        let s = &d.train.samples[0];
        let batch = TrainBatch {
            inputs: vec![s.audio.clone()],
            targets: vec![s.label().one_hot(3).unwrap()],
        };
        // The returned loss is measured before the update.
        let before = train_step(&mut model, &mut opt, &batch, 1e-4).unwrap();
        let after = train_step(&mut model, &mut opt, &batch, 1e-4).unwrap();
        if after < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 18, "{decreased}/20");
}

#[test]
fn training_is_reproducible() {
    let d = generate(&spec(1)).unwrap();
    let run = || {
        let mut m = Uavm::new(model_config(), 1).unwrap();
        let log = run_training(&mut m, &quick(3, 1), &d.train, Some(&d.eval)).unwrap();
        (m, log)
    };
    let (m1, l1) = run();
    let (m2, l2) = run();
    assert_eq!(l1, l2);
    assert_eq!(m1.params().checksum(None), m2.params().checksum(None));
    assert_eq!(l1.iterations.len(), 3 * 5);
    assert_eq!(l1.epochs.len(), 3);
    assert!(l1.epochs.iter().all(|e| e.eval.is_some()));
}

#[test]
fn zero_epochs_change_nothing() {
    let d = generate(&spec(2)).unwrap();
    let mut m = Uavm::new(model_config(), 2).unwrap();
    let init = m.clone();
    let log = run_training(&mut m, &quick(0, 2), &d.train, None).unwrap();
    assert!(log.iterations.is_empty() && log.epochs.is_empty());
    assert_eq!(m, init);
}

#[test]
fn audio_only_training_never_touches_video() {
    let d = generate(&spec(3)).unwrap();
    let mut m = Uavm::new(model_config(), 3).unwrap();
    let video = m.params().checksum(Some(ParamGroup::ThetaV));
    let shared = m.params().checksum(Some(ParamGroup::ThetaS));
    let cfg = TrainConfig {
        lambda_mt: 1.0,
        ..quick(2, 3)
    };
    let log = run_training(&mut m, &cfg, &d.train, None).unwrap();
    assert_eq!(log.audio_fraction(), 1.0);
    assert_eq!(m.params().checksum(Some(ParamGroup::ThetaV)), video);
    assert_ne!(m.params().checksum(Some(ParamGroup::ThetaS)), shared);
}

#[test]
fn evaluation_uses_clean_inputs() {
    let d = generate(&spec(4)).unwrap();
    let mut m = Uavm::new(model_config(), 4).unwrap();
    run_training(&mut m, &quick(1, 4), &d.train, None).unwrap();
    let e = evaluate(&m, &d.eval).unwrap();
    assert_eq!(e, evaluate(&m, &d.eval).unwrap());
    let preds = predict_modality(&m, &d.eval, Modality::Audio).unwrap();
    let hits = d
        .eval
        .samples
        .iter()
        .zip(&preds)
        .filter(|(s, p)| {
            let single = m.forward_single(&s.audio, false).unwrap().0;
            for (a, b) in single.iter().zip(p.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            s.label().accepts(uavm::tensor::argmax(p))
        })
        .count();
    assert_eq!(e.audio_acc, Some(hits as f64 / d.eval.len() as f64));
}

fn skewed() -> Dataset {
    let mut samples = Vec::new();
    for (class, count) in [(0usize, 2usize), (1, 6), (2, 20)] {
        for i in 0..count {
            let id = format!("c{class}-{i}");
            let seq = |m| FeatureSequence::new(id.clone(), m, Label::Single(class), 2, 2, vec![1.0; 4]).unwrap();
            samples.push(PairedSample::new(seq(Modality::Audio), seq(Modality::Video)).unwrap());
        }
    }
    Dataset::new(Split::Train, 3, samples).unwrap()
}

#[test]
fn balanced_sampling_equalizes_classes() {
    let d = skewed();
    let sampler = BalancedSampler::new(&d).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100 * 3;
    let mut counts = [0usize; 3];
    for i in sampler.draw(n, &mut rng) {
        counts[d.samples[i].label().primary_class().unwrap()] += 1;
    }
    let p = 1.0 / 3.0;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

#[test]
fn cross_modal_and_multi_label_runs() {
    let d = generate(&spec(6)).unwrap();
    let c = ModelConfig {
        mode: ModelMode::CrossModalAttention,
        ..model_config()
    };
    let mut m = Uavm::new(c, 6).unwrap();
    let log = run_training(&mut m, &quick(1, 6), &d.train, Some(&d.eval)).unwrap();
    assert!(log.iterations.iter().all(|r| r.modality == "both"));
    let e = log.final_eval().unwrap();
    assert!(e.audio_acc.is_none() && e.video_acc.is_none());

    // Two-hot labels on the same features, trained with per-class BCE.
    let multi: Vec<PairedSample> = d
        .train
        .samples
        .iter()
        .map(|s| {
            let c = s.label().primary_class().unwrap();
            let bits: Vec<bool> = (0..3).map(|k| k == c || k == (c + 1) % 3).collect();
            let relabel = |x: &FeatureSequence| {
                let mut y = x.clone();
                y.label = Label::Multi(bits.clone());
                y
            };
            PairedSample::new(relabel(&s.audio), relabel(&s.video)).unwrap()
        })
        .collect();
    let train = Dataset::new(Split::Train, 3, multi).unwrap();
    let c = ModelConfig {
        loss_kind: LossKind::MultiLabelBce,
        ..model_config()
    };
    let mut m = Uavm::new(c, 6).unwrap();
    let log = run_training(&mut m, &quick(2, 6), &train, None).unwrap();
    assert!(log.iterations.iter().all(|r| r.loss.is_finite() && r.loss > 0.0));
}

#[test]
fn mismatched_data_is_rejected() {
    let d = generate(&spec(7)).unwrap();
    let mut m = Uavm::new(
        ModelConfig {
            feature_dim: 9,
            ..model_config()
        },
        7,
    )
    .unwrap();
    let err = run_training(&mut m, &quick(1, 7), &d.train, None).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn logs_are_written() {
    let d = generate(&spec(8)).unwrap();
    let mut m = Uavm::new(model_config(), 8).unwrap();
    let log = run_training(&mut m, &quick(2, 8), &d.train, Some(&d.eval)).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("it.csv");
    log.write_iterations_csv(&csv).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + log.iterations.len());
    assert!(text.starts_with("seed,iteration,epoch,modality,loss,lr"));
    let json = tmp.path().join("ep.json");
    log.write_epochs_json(&json).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["seed"], 8);
    assert_eq!(v["epochs"].as_array().unwrap().len(), 2);
    // Decay halves the rate every five epochs; two epochs stay at the base.
    assert!(log.iterations.iter().all(|r| r.lr == 1e-3));
}
