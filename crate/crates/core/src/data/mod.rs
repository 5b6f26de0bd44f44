//! Frozen-feature samples, paired datasets, and where they come from.

pub mod archive;
pub mod synth;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UavmError};
use crate::tensor::l2_normalize_rows;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Video,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Audio, Modality::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Audio => "audio",
            Self::Video => "video",
        }
    }

    pub fn other(self) -> Self {
        match self {
            Self::Audio => Self::Video,
            Self::Video => Self::Audio,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Eval => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Single(usize),
    Multi(Vec<bool>),
}

impl Label {
    /// Hard target vector of length `num_classes`.
    pub fn one_hot(&self, num_classes: usize) -> Result<Vec<f64>> {
        match self {
            Self::Single(c) => {
                if *c >= num_classes {
                    return Err(UavmError::data(format!(
                        "class index {c} out of range for {num_classes} classes"
                    )));
                }
                let mut v = vec![0.0; num_classes];
                v[*c] = 1.0;
                Ok(v)
            }
            Self::Multi(bits) => {
                if bits.len() != num_classes {
                    return Err(UavmError::data(format!(
                        "multi-label vector has {} entries, expected {num_classes}",
                        bits.len()
                    )));
                }
                Ok(bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
            }
        }
    }

    pub fn primary_class(&self) -> Option<usize> {
        match self {
            Self::Single(c) => Some(*c),
            Self::Multi(bits) => bits.iter().position(|&b| b),
        }
    }

    /// Whether `class` is a correct top-1 prediction for this label.
    pub fn accepts(&self, class: usize) -> bool {
        match self {
            Self::Single(c) => *c == class,
            Self::Multi(bits) => bits.get(class).copied().unwrap_or(false),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Single(c) => write!(f, "{c}"),
            Self::Multi(bits) => {
                let on: Vec<String> = bits
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| **b)
                    .map(|(i, _)| i.to_string())
                    .collect();
                f.write_str(&on.join(";"))
            }
        }
    }
}

/// One sample's `T x D` frozen-feature matrix for a single modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub sample_id: String,
    pub modality: Modality,
    pub label: Label,
    seq_len: usize,
    dim: usize,
    features: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(
        sample_id: impl Into<String>,
        modality: Modality,
        label: Label,
        seq_len: usize,
        dim: usize,
        features: Vec<f64>,
    ) -> Result<Self> {
        let sample_id = sample_id.into();
        if seq_len == 0 || dim == 0 || features.len() != seq_len * dim {
            return Err(UavmError::Dimension {
                op: "feature_sequence",
                lhs: vec![seq_len, dim],
                rhs: vec![features.len()],
            });
        }
        Ok(Self {
            sample_id,
            modality,
            label,
            seq_len,
            dim,
            features,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.features[t * self.dim..(t + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.features.iter().all(|v| v.is_finite())
    }

    /// Features with every time step scaled to unit L2 norm (all-zero rows
    /// stay zero).
    pub fn normalized_features(&self) -> Vec<f64> {
        let mut out = self.features.clone();
        l2_normalize_rows(&mut out, self.dim);
        out
    }

    pub fn with_features(&self, features: Vec<f64>) -> Result<Self> {
        Self::new(
            self.sample_id.clone(),
            self.modality,
            self.label.clone(),
            self.seq_len,
            self.dim,
            features,
        )
    }

    /// Mean over time steps of the raw features.
    pub fn mean_pooled(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.features.chunks(self.dim) {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= self.seq_len as f64);
        out
    }
}

/// Audio and video sequences of one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub audio: FeatureSequence,
    pub video: FeatureSequence,
}

impl PairedSample {
    pub fn new(audio: FeatureSequence, video: FeatureSequence) -> Result<Self> {
        if audio.modality != Modality::Audio || video.modality != Modality::Video {
            return Err(UavmError::data(format!(
                "sample `{}`: pair must be (audio, video)",
                audio.sample_id
            )));
        }
        if audio.sample_id != video.sample_id || audio.label != video.label {
            return Err(UavmError::data(format!(
                "sample `{}` / `{}`: paired sequences disagree on id or label",
                audio.sample_id, video.sample_id
            )));
        }
        if audio.seq_len != video.seq_len || audio.dim != video.dim {
            return Err(UavmError::data(format!(
                "sample `{}`: audio is {}x{} but video is {}x{}",
                audio.sample_id, audio.seq_len, audio.dim, video.seq_len, video.dim
            )));
        }
        Ok(Self { audio, video })
    }

    pub fn sample_id(&self) -> &str {
        &self.audio.sample_id
    }

    pub fn label(&self) -> &Label {
        &self.audio.label
    }

    pub fn get(&self, modality: Modality) -> &FeatureSequence {
        match modality {
            Modality::Audio => &self.audio,
            Modality::Video => &self.video,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub num_classes: usize,
    pub samples: Vec<PairedSample>,
}

impl Dataset {
    pub fn new(split: Split, num_classes: usize, samples: Vec<PairedSample>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.sample_id()) {
                return Err(UavmError::data(format!(
                    "duplicate sample id `{}`",
                    s.sample_id()
                )));
            }
            s.label().one_hot(num_classes)?;
        }
        Ok(Self {
            split,
            num_classes,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seq_len(&self) -> Option<usize> {
        self.samples.first().map(|s| s.audio.seq_len())
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.audio.dim())
    }

    /// The first `per_class` samples of each class, in dataset order.
    pub fn balanced_subset(&self, per_class: usize) -> Self {
        let mut counts = vec![0usize; self.num_classes];
        let samples = self
            .samples
            .iter()
            .filter(|s| {
                let Some(c) = s.label().primary_class() else {
                    return false;
                };
                counts[c] += 1;
                counts[c] <= per_class
            })
            .cloned()
            .collect();
        Self {
            split: self.split,
            num_classes: self.num_classes,
            samples,
        }
    }

    pub fn find(&self, sample_id: &str) -> Option<&PairedSample> {
        self.samples.iter().find(|s| s.sample_id() == sample_id)
    }
}

/// Errors when two datasets share any sample id.
pub fn check_disjoint(a: &Dataset, b: &Dataset) -> Result<()> {
    let ids: HashSet<&str> = a.samples.iter().map(PairedSample::sample_id).collect();
    if let Some(s) = b.samples.iter().find(|s| ids.contains(s.sample_id())) {
        return Err(UavmError::data(format!(
            "sample id `{}` appears in both {} and {} splits",
            s.sample_id(),
            a.split.as_str(),
            b.split.as_str()
        )));
    }
    Ok(())
}
