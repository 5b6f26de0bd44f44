use uavm::optim::{adam_step, Adam, AdamHyper, AdamState};
use uavm::{ParamStore, Tensor};

/// Textbook Adam written out separately, one scalar at a time.
fn reference_adam(w0: f64, steps: usize, lr: f64, b1: f64, b2: f64, eps: f64) -> Vec<f64> {
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powf(t as f64));
        let vh = v / (1.0 - b2.powf(t as f64));
        w -= lr * mh / (vh.sqrt() + eps);
        out.push(w);
    }
    out
}

#[test]
fn quadratic_trajectory_matches_reference() {
    let hp = AdamHyper {
        lr: 0.1,
        ..AdamHyper::default()
    };
    let want = reference_adam(1.0, 10, hp.lr, hp.beta1, hp.beta2, hp.eps);
    let mut w = [1.0];
    let mut state = AdamState::new(1);
    for (t, expect) in want.iter().enumerate() {
        let g = [2.0 * w[0]];
        adam_step(&mut w, &g, &mut state, hp).unwrap();
        assert!((w[0] - expect).abs() < 1e-12, "step {t}: {} vs {expect}", w[0]);
    }
}

#[test]
fn store_optimizer_matches_reference_and_skips_absent_grads() {
    let mut store = ParamStore::new();
    store.insert("shared.w", Tensor::vector(vec![1.0]));
    store.insert("audio.w", Tensor::vector(vec![5.0]));
    let mut opt = Adam::new(AdamHyper::default());
    let want = reference_adam(1.0, 10, 0.05, 0.9, 0.999, 1e-8);
    for expect in &want {
        let w = store.get("shared.w").unwrap().data()[0];
        opt.step(&mut store, &[("shared.w".into(), vec![2.0 * w])], 0.05).unwrap();
        assert!((store.get("shared.w").unwrap().data()[0] - expect).abs() < 1e-12);
    }
    assert_eq!(store.get("audio.w").unwrap().data(), &[5.0]);
    assert!(opt.state("audio.w").is_none());
    assert_eq!(opt.state("shared.w").unwrap().step, 10);
}

#[test]
fn length_mismatch_is_rejected() {
    let mut w = [1.0, 2.0];
    let mut state = AdamState::new(2);
    assert!(adam_step(&mut w, &[1.0], &mut state, AdamHyper::default()).is_err());
}
