//! Synthetic paired audio/video feature sequences.
//!
//! Each class owns a latent centroid. A clip draws a clip-level latent that
//! both modalities share (weighted by `av_corr`) plus a private latent per
//! modality, and the class signal occupies a contiguous window of
//! `event_span` frames. Each modality maps its latent through its own fixed
//! random projection and adds its own constant offset, so the two streams
//! look like the outputs of two different frozen extractors. Frames outside
//! the event window carry only the offset and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureSequence, Label, Modality, PairedSample, Split};
use crate::error::{Result, UavmError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    /// Training clips per class.
    pub samples_per_class: usize,
    pub eval_per_class: usize,
    pub seq_len: usize,
    pub feature_dim: usize,
    pub latent_dim: usize,
    /// Distance between class centroids in latent space.
    pub class_sep: f64,
    /// Fraction of clip-level latent content shared by the two modalities.
    pub av_corr: f64,
    /// Per-entry std of additive frame noise.
    pub noise_std: f64,
    /// Per-dimension std of the clip-level latents.
    pub sample_std: f64,
    pub event_span: usize,
    /// Draw independent event windows for audio and video.
    pub desync_windows: bool,
    /// Norm of each modality's constant feature offset.
    pub modality_shift: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 40,
            eval_per_class: 50,
            seq_len: 30,
            feature_dim: 64,
            latent_dim: 16,
            class_sep: 4.0,
            av_corr: 0.5,
            noise_std: 0.15,
            sample_std: 0.5,
            event_span: 10,
            desync_windows: false,
            modality_shift: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, why: &str| Err(UavmError::config(format!("synth spec `{field}` {why}")));
        if self.num_classes == 0 {
            return fail("num_classes", "must be at least 1");
        }
        if self.samples_per_class == 0 {
            return fail("samples_per_class", "must be at least 1");
        }
        if self.seq_len == 0 {
            return fail("seq_len", "must be at least 1");
        }
        if self.feature_dim == 0 {
            return fail("feature_dim", "must be at least 1");
        }
        if self.latent_dim == 0 || self.latent_dim > self.feature_dim {
            return fail("latent_dim", "must be in [1, feature_dim]");
        }
        if !(self.class_sep >= 0.0 && self.class_sep.is_finite()) {
            return fail("class_sep", "must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.av_corr) {
            return fail("av_corr", "must lie in [0, 1]");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail("noise_std", "must be finite and >= 0");
        }
        if !(self.sample_std >= 0.0 && self.sample_std.is_finite()) {
            return fail("sample_std", "must be finite and >= 0");
        }
        if self.event_span == 0 || self.event_span > self.seq_len {
            return fail("event_span", "must be in [1, seq_len]");
        }
        if !(self.modality_shift >= 0.0 && self.modality_shift.is_finite()) {
            return fail("modality_shift", "must be finite and >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub train: Dataset,
    pub eval: Dataset,
}

/// Hidden generative state of one clip, exposed for statistical tests.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipLatents {
    pub class: usize,
    pub audio: Vec<f64>,
    pub video: Vec<f64>,
    pub audio_window: usize,
    pub video_window: usize,
}

struct World {
    centroids: Vec<Vec<f64>>,
    projections: [Vec<f64>; 2],
    offsets: [Vec<f64>; 2],
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn build_world(spec: &SynthSpec) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(0);
    let l = spec.latent_dim;
    // Random unit directions are nearly orthogonal, so scaling by
    // sep / sqrt(2) puts centroids roughly `class_sep` apart.
    let radius = spec.class_sep / std::f64::consts::SQRT_2;
    let centroids = (0..spec.num_classes)
        .map(|_| unit(gaussian(&mut rng, l, 1.0)).into_iter().map(|x| x * radius).collect())
        .collect();
    let proj_std = 1.0 / (l as f64).sqrt();
    let projections = [
        gaussian(&mut rng, spec.feature_dim * l, proj_std),
        gaussian(&mut rng, spec.feature_dim * l, proj_std),
    ];
    let offsets = [
        unit(gaussian(&mut rng, spec.feature_dim, 1.0))
            .into_iter()
            .map(|x| x * spec.modality_shift)
            .collect(),
        unit(gaussian(&mut rng, spec.feature_dim, 1.0))
            .into_iter()
            .map(|x| x * spec.modality_shift)
            .collect(),
    ];
    World {
        centroids,
        projections,
        offsets,
    }
}

fn sample_stream(split: Split, index: usize) -> u64 {
    let base = match split {
        Split::Train => 1u64,
        Split::Eval => 1u64 << 40,
    };
    base + index as u64
}

fn generate_clip(
    spec: &SynthSpec,
    world: &World,
    split: Split,
    index: usize,
) -> Result<(PairedSample, ClipLatents)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(sample_stream(split, index));
    let class = index % spec.num_classes;
    let l = spec.latent_dim;
    let shared = gaussian(&mut rng, l, spec.sample_std);
    let (ws, wu) = (spec.av_corr.sqrt(), (1.0 - spec.av_corr).sqrt());
    let span_choices = spec.seq_len - spec.event_span + 1;
    let sync_window = rng.random_range(0..span_choices);
    let sample_id = format!("{}-{index:06}", split.as_str());
    let label = Label::Single(class);

    let mut seqs = Vec::with_capacity(2);
    let mut latents = Vec::with_capacity(2);
    let mut windows = [sync_window; 2];
    for (m, modality) in Modality::BOTH.into_iter().enumerate() {
        let unique = gaussian(&mut rng, l, spec.sample_std);
        let latent: Vec<f64> = (0..l)
            .map(|i| world.centroids[class][i] + ws * shared[i] + wu * unique[i])
            .collect();
        if spec.desync_windows && modality == Modality::Video {
            windows[m] = rng.random_range(0..span_choices);
        }
        let proj = &world.projections[m];
        let signal: Vec<f64> = (0..spec.feature_dim)
            .map(|r| (0..l).map(|c| proj[r * l + c] * latent[c]).sum())
            .collect();
        let mut features = Vec::with_capacity(spec.seq_len * spec.feature_dim);
        for t in 0..spec.seq_len {
            let active = (windows[m]..windows[m] + spec.event_span).contains(&t);
            for d in 0..spec.feature_dim {
                let noise: f64 = rng.sample(StandardNormal);
                let mut v = world.offsets[m][d] + spec.noise_std * noise;
                if active {
                    v += signal[d];
                }
                // Stored at archive precision so save/load is lossless.
                features.push(v as f32 as f64);
            }
        }
        seqs.push(FeatureSequence::new(
            sample_id.clone(),
            modality,
            label.clone(),
            spec.seq_len,
            spec.feature_dim,
            features,
        )?);
        latents.push(latent);
    }
    let video = seqs.pop().expect("two modalities");
    let audio = seqs.pop().expect("two modalities");
    let video_latent = latents.pop().expect("two modalities");
    let audio_latent = latents.pop().expect("two modalities");
    Ok((
        PairedSample::new(audio, video)?,
        ClipLatents {
            class,
            audio: audio_latent,
            video: video_latent,
            audio_window: windows[0],
            video_window: windows[1],
        },
    ))
}

fn generate_split(
    spec: &SynthSpec,
    world: &World,
    split: Split,
    per_class: usize,
) -> Result<(Dataset, Vec<ClipLatents>)> {
    let n = per_class * spec.num_classes;
    let mut samples = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    for i in 0..n {
        let (s, z) = generate_clip(spec, world, split, i)?;
        samples.push(s);
        latents.push(z);
    }
    Ok((Dataset::new(split, spec.num_classes, samples)?, latents))
}

/// Generates the train and eval splits described by `spec`.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    generate_with_latents(spec).map(|(data, _, _)| data)
}

/// As [`generate`], also returning each clip's hidden latents (train, eval).
pub fn generate_with_latents(
    spec: &SynthSpec,
) -> Result<(SynthData, Vec<ClipLatents>, Vec<ClipLatents>)> {
    spec.validate()?;
    let world = build_world(spec);
    let (train, train_z) = generate_split(spec, &world, Split::Train, spec.samples_per_class)?;
    let (eval, eval_z) = generate_split(spec, &world, Split::Eval, spec.eval_per_class)?;
    Ok((SynthData { train, eval }, train_z, eval_z))
}
