use uavm::data::archive;
use uavm::data::synth::{generate, generate_with_latents, SynthSpec};
use uavm::{Dataset, Modality};

/// Nearest class centroid of mean-pooled raw features, fit on `train`.
fn nearest_centroid_accuracy(train: &Dataset, eval: &Dataset, modality: Modality) -> f64 {
    let c = train.num_classes;
    let dim = train.feature_dim().unwrap();
    let mut sums = vec![vec![0.0; dim]; c];
    let mut counts = vec![0usize; c];
    for s in &train.samples {
        let k = s.label().primary_class().unwrap();
        for (acc, v) in sums[k].iter_mut().zip(s.get(modality).mean_pooled()) {
            *acc += v;
        }
        counts[k] += 1;
    }
    for (row, n) in sums.iter_mut().zip(&counts) {
        row.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let hits = eval
        .samples
        .iter()
        .filter(|s| {
            let x = s.get(modality).mean_pooled();
            let dist = |m: &Vec<f64>| m.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..c).min_by(|&i, &j| dist(&sums[i]).total_cmp(&dist(&sums[j]))).unwrap();
            best == s.label().primary_class().unwrap()
        })
        .count();
    hits as f64 / eval.len() as f64
}

#[test]
fn noiseless_well_separated_data_is_centroid_separable() {
    let spec = SynthSpec {
        noise_std: 0.0,
        class_sep: 12.0,
        av_corr: 1.0,
        ..SynthSpec::default()
    };
    let d = generate(&spec).unwrap();
    for m in Modality::BOTH {
        assert_eq!(nearest_centroid_accuracy(&d.train, &d.eval, m), 1.0, "{m:?}");
    }
}

#[test]
fn separability_is_monotone_in_class_sep() {
    for seed in 0..3 {
        let accs: Vec<f64> = [0.5, 2.0, 8.0]
            .iter()
            .map(|&class_sep| {
                let d = generate(&SynthSpec {
                    class_sep,
                    seed,
                    ..SynthSpec::default()
                })
                .unwrap();
                nearest_centroid_accuracy(&d.train, &d.eval, Modality::Audio)
            })
            .collect();
        assert!(accs.windows(2).all(|w| w[0] <= w[1]), "seed {seed}: {accs:?}");
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Per-dimension correlation between the audio and video latents of the
/// same clip, after removing each class's mean.
fn latent_correlations(av_corr: f64) -> Vec<f64> {
    let spec = SynthSpec {
        av_corr,
        samples_per_class: 100,
        eval_per_class: 1,
        ..SynthSpec::default()
    };
    let (_, z, _) = generate_with_latents(&spec).unwrap();
    assert_eq!(z.len(), 1000);
    let l = spec.latent_dim;
    let mut means = vec![[vec![0.0; l], vec![0.0; l]]; spec.num_classes];
    for c in &z {
        for i in 0..l {
            means[c.class][0][i] += c.audio[i] / 100.0;
            means[c.class][1][i] += c.video[i] / 100.0;
        }
    }
    (0..l)
        .map(|i| {
            let a: Vec<f64> = z.iter().map(|c| c.audio[i] - means[c.class][0][i]).collect();
            let v: Vec<f64> = z.iter().map(|c| c.video[i] - means[c.class][1][i]).collect();
            pearson(&a, &v)
        })
        .collect()
}

#[test]
fn zero_av_corr_makes_modalities_conditionally_independent() {
    let r = latent_correlations(0.0);
    assert!(r.iter().all(|x| x.abs() < 0.1), "{r:?}");
    // The same estimator sees the coupling when there is one.
    let r = latent_correlations(0.5);
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    assert!((mean - 0.5).abs() < 0.05, "{mean}");
}

#[test]
fn generation_is_a_pure_function_of_the_spec() {
    let spec = SynthSpec::default();
    let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
    assert_eq!(archive::encode(&a.train).unwrap(), archive::encode(&b.train).unwrap());
    assert_eq!(archive::encode(&a.eval).unwrap(), archive::encode(&b.eval).unwrap());
    let c = generate(&SynthSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(a.train, c.train);
}

#[test]
fn archive_round_trip_and_shape_validation() {
    let d = generate(&SynthSpec::default()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("train.uavf");
    archive::save_features(&d.train, &path).unwrap();
    assert_eq!(archive::load_features(&path, None).unwrap(), d.train);
    let err = archive::load_features(
        &path,
        Some(archive::ExpectedShape {
            seq_len: None,
            feature_dim: Some(32),
        }),
    )
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("32") && msg.contains("64"), "{msg}");
}

#[test]
fn pairs_share_ids_and_labels_and_splits_are_disjoint() {
    let d = generate(&SynthSpec::default()).unwrap();
    for s in d.train.samples.iter().chain(&d.eval.samples) {
        assert_eq!(s.audio.sample_id, s.video.sample_id);
        assert_eq!(s.audio.label, s.video.label);
        assert_eq!((s.audio.seq_len(), s.audio.dim()), (30, 64));
        assert_eq!((s.video.seq_len(), s.video.dim()), (30, 64));
    }
    uavm::data::check_disjoint(&d.train, &d.eval).unwrap();
}
