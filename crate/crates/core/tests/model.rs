use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavm::data::synth::{generate, SynthSpec};
use uavm::tensor::argmax;
use uavm::{count_parameters_for, fuse_predictions, Dataset, ModelConfig, ModelMode, ParamGroup, Uavm};

fn data() -> Dataset {
    let spec = SynthSpec {
        num_classes: 4,
        samples_per_class: 2,
        eval_per_class: 1,
        seq_len: 7,
        feature_dim: 12,
        latent_dim: 4,
        event_span: 3,
        ..SynthSpec::default()
    };
    generate(&spec).unwrap().train
}

fn config(modal: usize, shared: usize) -> ModelConfig {
    ModelConfig {
        modal_dim: 8,
        shared_dim: 12,
        num_heads: 2,
        seq_len: 7,
        feature_dim: 12,
        num_classes: 4,
        ..ModelConfig::default().with_layers(modal, shared)
    }
}

#[test]
fn forward_is_deterministic_and_gives_a_distribution() {
    let d = data();
    let m = Uavm::new(config(1, 2), 0).unwrap();
    for s in &d.samples {
        let (a, _) = m.forward_single(&s.audio, false).unwrap();
        assert_eq!(a, m.forward_single(&s.audio, false).unwrap().0);
        let mx = a.iter().copied().fold(f64::MIN, f64::max);
        let e: Vec<f64> = a.iter().map(|z| (z - mx).exp()).collect();
        let total: f64 = e.iter().sum();
        assert!(e.iter().all(|p| *p / total > 0.0 && *p / total < 1.0));
    }
}

#[test]
fn shared_weights_are_one_copy() {
    let d = data();
    let s = &d.samples[0];
    let mut m = Uavm::new(config(1, 2), 0).unwrap();
    let before = (m.forward_single(&s.audio, false).unwrap().0, m.forward_single(&s.video, false).unwrap().0);
    m.params_mut().get_mut("shared.classifier.weight").unwrap().data_mut()[0] += 0.5;
    let after = (m.forward_single(&s.audio, false).unwrap().0, m.forward_single(&s.video, false).unwrap().0);
    assert_ne!(before.0, after.0);
    assert_ne!(before.1, after.1);
    assert!(m.params().iter().all(|(name, _)| !name.contains("video.classifier")));
}

#[test]
fn trace_is_complete() {
    let d = data();
    for (modal, shared) in [(0, 3), (1, 2), (3, 0)] {
        let mut c = config(modal, shared);
        if shared == 0 {
            c.mode = ModelMode::Independent;
        }
        let m = Uavm::new(c, 1).unwrap();
        let (logits, trace) = m.forward_single(&d.samples[1].video, true).unwrap();
        let trace = trace.unwrap();
        assert_eq!(trace.layers.len(), modal + shared + 1);
        assert_eq!(trace.attention.len(), modal + shared);
        for maps in &trace.attention {
            assert_eq!(maps.heads, 2);
            assert!(maps.max_row_sum_error() < 1e-6);
            assert!(maps.data.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        let pooled = trace.pooled_layer(modal + shared).unwrap();
        for (p, q) in pooled.iter().zip(&trace.pooled) {
            assert!((p - q).abs() < 1e-12);
        }
        assert_eq!(logits, trace.logits);
    }
}

#[test]
fn input_rows_are_unit_norm() {
    for s in &data().samples {
        let x = s.audio.normalized_features();
        for row in x.chunks(12) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn fusion_definition() {
    assert_eq!(fuse_predictions(&[1.0, 3.0], &[3.0, 1.0]).unwrap(), vec![2.0, 2.0]);
    let p = [0.3, -1.2, 4.0];
    assert_eq!(fuse_predictions(&p, &p).unwrap(), p.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..1000 {
        let a: Vec<f64> = (0..7).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..7).map(|_| rng.random_range(-5.0..5.0)).collect();
        let brute: Vec<f64> = (0..7).map(|i| (a[i] + b[i]) / 2.0).collect();
        assert_eq!(argmax(&fuse_predictions(&a, &b).unwrap()), argmax(&brute));
    }
}

#[test]
fn fully_shared_model_fuses_identical_predictions() {
    // With N = 0 both modalities enter through the same shared projection,
    // so the same features give the same prediction on either path.
    let d = data();
    let m = Uavm::new(config(0, 3), 2).unwrap();
    let s = &d.samples[0];
    let as_video = s.audio.clone();
    let pa = m.forward_single(&s.audio, false).unwrap().0;
    let fused = m.infer(Some(&s.audio), Some(&as_video)).unwrap();
    assert_eq!(fused, pa);
    assert_eq!(m.count_parameters().theta_a, 0);
    assert_eq!(m.count_parameters().theta_v, 0);
}

#[test]
fn missing_modality_matches_single_forward() {
    let d = data();
    let m = Uavm::new(config(2, 1), 3).unwrap();
    for s in &d.samples {
        assert_eq!(m.infer(Some(&s.audio), None).unwrap(), m.forward_single(&s.audio, false).unwrap().0);
        assert_eq!(m.infer(None, Some(&s.video)).unwrap(), m.forward_single(&s.video, false).unwrap().0);
    }
    assert!(m.infer(None, None).is_err());
}

#[test]
fn cross_modal_baseline_shapes_and_order() {
    let d = data();
    let mut c = config(1, 2);
    c.mode = ModelMode::CrossModalAttention;
    let m = Uavm::new(c.clone(), 4).unwrap();
    let s = &d.samples[2];
    let (_, trace) = m.forward_cross_modal(&s.audio, &s.video, true).unwrap();
    let trace = trace.unwrap();
    assert_eq!(trace.layers.len(), 4);
    assert!(trace.layers.iter().all(|t| t.dims2().0 == 14));
    for maps in &trace.attention[1..] {
        assert_eq!((maps.heads, maps.seq_len), (2, 14));
        assert!(maps.max_row_sum_error() < 1e-6);
    }
    assert!(m.infer(Some(&s.audio), None).is_err());

    c.position_encoding = false;
    let m = Uavm::new(c, 4).unwrap();
    let av = m.forward_cross_modal_ordered(&s.audio, &s.video, false, false).unwrap().0;
    let va = m.forward_cross_modal_ordered(&s.audio, &s.video, false, true).unwrap().0;
    for (x, y) in av.iter().zip(&va) {
        assert!((x - y).abs() < 1e-5);
    }
}

#[test]
fn parameter_accounting() {
    let equal = |modal, shared| ModelConfig {
        shared_dim: 8,
        ..config(modal, shared)
    };
    let uni = count_parameters_for(&equal(3, 3)).unwrap();
    let ind = count_parameters_for(&ModelConfig {
        mode: ModelMode::Independent,
        ..equal(6, 0)
    })
    .unwrap();
    assert!(uni.total < ind.total);
    assert_eq!(ind.theta_s, 0);
    assert_eq!(ind.theta_a, ind.theta_v);
    assert_eq!(uni.theta_a + uni.theta_v + uni.theta_s, uni.total);
    let m = Uavm::new(equal(3, 3), 0).unwrap();
    assert_eq!(m.count_parameters(), uni);
    assert_eq!(m.params().numel(Some(ParamGroup::ThetaS)), uni.theta_s);
}
