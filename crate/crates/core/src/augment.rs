//! The augmentation pipeline shared by both modalities: label smoothing,
//! mixup, random circular time shifts and class-balanced sampling.

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::data::{Dataset, FeatureSequence, Label};
use crate::error::{Result, UavmError};

/// Smoothed one-hot target: `1 - eps + eps/C` on `class`, `eps/C` elsewhere.
pub fn smooth_labels(class: usize, eps: f64, num_classes: usize) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&eps) {
        return Err(UavmError::config(format!("label smoothing {eps} outside [0, 1)")));
    }
    if class >= num_classes {
        return Err(UavmError::data(format!(
            "class index {class} out of range for {num_classes} classes"
        )));
    }
    let off = eps / num_classes as f64;
    let mut v = vec![off; num_classes];
    v[class] = 1.0 - eps + off;
    Ok(v)
}

/// Training target for any label kind. Multi-label targets are smoothed
/// per class as independent binary problems: `y(1 - eps) + eps/2`.
pub fn smoothed_target(label: &Label, eps: f64, num_classes: usize) -> Result<Vec<f64>> {
    match label {
        Label::Single(c) => smooth_labels(*c, eps, num_classes),
        Label::Multi(_) => {
            if !(0.0..1.0).contains(&eps) {
                return Err(UavmError::config(format!("label smoothing {eps} outside [0, 1)")));
            }
            Ok(label
                .one_hot(num_classes)?
                .into_iter()
                .map(|y| y * (1.0 - eps) + eps / 2.0)
                .collect())
        }
    }
}

/// Circularly shifts the time axis so row `t` moves to `(t + offset) % T`.
pub fn time_shift(x: &FeatureSequence, offset: usize) -> FeatureSequence {
    let t = x.seq_len();
    let d = x.dim();
    let src = x.features();
    let mut out = vec![0.0; src.len()];
    for row in 0..t {
        let dst = (row + offset) % t;
        out[dst * d..(dst + 1) * d].copy_from_slice(&src[row * d..(row + 1) * d]);
    }
    x.with_features(out).expect("shift keeps the shape")
}

/// Circular shift by a uniform offset in `[0, T)`.
pub fn random_time_shift<R: Rng>(x: &FeatureSequence, rng: &mut R) -> FeatureSequence {
    let offset = rng.random_range(0..x.seq_len());
    time_shift(x, offset)
}

/// `lambda * a + (1 - lambda) * b`, elementwise.
pub fn convex_mix(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
}

/// Mixes every sample with an in-batch partner chosen by a random
/// permutation, each pair with its own `lambda ~ Beta(alpha, alpha)`.
/// Returns the coefficients used; `alpha = 0` leaves the batch untouched.
pub fn mixup_batch<R: Rng>(
    inputs: &mut [FeatureSequence],
    targets: &mut [Vec<f64>],
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(UavmError::config(format!("mixup alpha {alpha} must be >= 0")));
    }
    if inputs.len() != targets.len() {
        return Err(UavmError::Contract("mixup inputs and targets differ in length".into()));
    }
    if alpha == 0.0 || inputs.is_empty() {
        return Ok(vec![1.0; inputs.len()]);
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| UavmError::config(format!("mixup beta: {e}")))?;
    let mut perm: Vec<usize> = (0..inputs.len()).collect();
    perm.shuffle(rng);
    let lambdas: Vec<f64> = (0..inputs.len()).map(|_| beta.sample(rng)).collect();
    mixup_with(inputs, targets, &perm, &lambdas)?;
    Ok(lambdas)
}

/// Mixup with explicit partners and coefficients.
pub fn mixup_with(
    inputs: &mut [FeatureSequence],
    targets: &mut [Vec<f64>],
    partners: &[usize],
    lambdas: &[f64],
) -> Result<()> {
    let orig_x: Vec<Vec<f64>> = inputs.iter().map(|x| x.features().to_vec()).collect();
    let orig_y = targets.to_vec();
    for i in 0..inputs.len() {
        let j = partners[i];
        let lam = lambdas[i];
        inputs[i] = inputs[i].with_features(convex_mix(&orig_x[i], &orig_x[j], lam))?;
        targets[i] = convex_mix(&orig_y[i], &orig_y[j], lam);
    }
    Ok(())
}

/// Draws sample indices with probability inversely proportional to the
/// frequency of their class, with replacement.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    dist: WeightedIndex<f64>,
}

impl BalancedSampler {
    pub fn new(dataset: &Dataset) -> Result<Self> {
        let classes: Vec<usize> = dataset
            .samples
            .iter()
            .map(|s| s.label().primary_class().unwrap_or(0))
            .collect();
        let mut counts = vec![0usize; dataset.num_classes.max(1)];
        for &c in &classes {
            counts[c] += 1;
        }
        let weights: Vec<f64> = classes.iter().map(|&c| 1.0 / counts[c] as f64).collect();
        let dist = WeightedIndex::new(&weights)
            .map_err(|e| UavmError::data(format!("balanced sampler: {e}")))?;
        Ok(Self { dist })
    }

    pub fn draw<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| self.dist.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(vals: &[f64]) -> FeatureSequence {
        FeatureSequence::new("s", Modality::Audio, Label::Single(0), vals.len() / 2, 2, vals.to_vec()).unwrap()
    }

    #[test]
    fn smoothing_formula() {
        let v = smooth_labels(3, 0.1, 10).unwrap();
        for (i, p) in v.iter().enumerate() {
            let want = if i == 3 { 0.91 } else { 0.01 };
            assert!((p - want).abs() < 1e-15, "{i}: {p}");
        }
        assert_eq!(smooth_labels(1, 0.0, 3).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(smooth_labels(3, 0.1, 3).is_err());
        assert!(smooth_labels(0, 1.0, 3).is_err());
    }

    #[test]
    fn shift_identity_and_inverse() {
        let x = seq(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(time_shift(&x, 0), x);
        assert_eq!(time_shift(&time_shift(&x, 1), 2), x);
        assert_eq!(time_shift(&x, 1).row(0), &[5.0, 6.0]);
    }

    #[test]
    fn mixup_alpha_zero_is_identity() {
        let mut xs = vec![seq(&[1.0, 0.0]), seq(&[0.0, 1.0])];
        let mut ys = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let before = (xs.clone(), ys.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        mixup_batch(&mut xs, &mut ys, 0.0, &mut rng).unwrap();
        assert_eq!((xs, ys), before);
    }

    #[test]
    fn mixup_lambda_one_keeps_sample() {
        let mut xs = vec![seq(&[1.0, 0.0]), seq(&[0.0, 1.0])];
        let mut ys = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let before = (xs.clone(), ys.clone());
        mixup_with(&mut xs, &mut ys, &[1, 0], &[1.0, 1.0]).unwrap();
        assert_eq!((xs, ys), before);
    }

    #[test]
    fn mixup_uses_unmixed_partners() {
        let mut xs = vec![seq(&[2.0, 0.0]), seq(&[0.0, 2.0])];
        let mut ys = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        mixup_with(&mut xs, &mut ys, &[1, 0], &[0.25, 0.25]).unwrap();
        assert_eq!(xs[0].features(), &[0.5, 1.5]);
        assert_eq!(xs[1].features(), &[1.5, 0.5]);
        assert_eq!(ys[1], vec![0.75, 0.25]);
    }
}
