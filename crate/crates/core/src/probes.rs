//! Read-only analyses of a trained model: a linear modality probe over
//! layer representations, cross-modal retrieval, attention-map distances,
//! temporal attention heatmaps and embedding export.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelMode;
use crate::data::archive::csv_err;
use crate::data::{Dataset, FeatureSequence, Modality, PairedSample};
use crate::error::{Result, UavmError};
use crate::model::Uavm;
use crate::nn::AttentionMaps;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSettings {
    pub l2: f64,
    pub iterations: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            iterations: 500,
        }
    }
}

/// Binary logistic regression on standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    /// Coefficients in standardized feature space.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub settings: ProbeSettings,
    pub train_size: usize,
    pub step_size: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearProbe {
    /// Full-batch gradient descent on the mean log loss plus
    /// `l2/2 * |w|^2`, with step `1/L` for the loss's Lipschitz bound `L`.
    pub fn fit(x: &[Vec<f64>], y: &[bool], settings: ProbeSettings) -> Result<Self> {
        let n = x.len();
        if n == 0 || n != y.len() {
            return Err(UavmError::data("probe needs matching, non-empty features and labels"));
        }
        let d = x[0].len();
        if d == 0 || x.iter().any(|r| r.len() != d) {
            return Err(UavmError::data("probe features must share one non-zero width"));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(UavmError::NumericInput("probe features".into()));
        }
        let mut mean = vec![0.0; d];
        for r in x {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
        }
        let mut scale = vec![0.0; d];
        for r in x {
            scale.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n as f64);
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let z: Vec<Vec<f64>> = x
            .iter()
            .map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
            .collect();
        let frob: f64 = z.iter().flatten().map(|v| v * v).sum::<f64>() / n as f64;
        let step = 1.0 / (0.25 * (frob + 1.0) + settings.l2);
        let mut w = vec![0.0; d];
        let mut b = 0.0;
        let mut gw = vec![0.0; d];
        for _ in 0..settings.iterations {
            gw.iter_mut().zip(&w).for_each(|(g, wi)| *g = settings.l2 * wi);
            let mut gb = 0.0;
            for (zi, &yi) in z.iter().zip(y) {
                let s = zi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>() + b;
                let r = (sigmoid(s) - f64::from(u8::from(yi))) / n as f64;
                gw.iter_mut().zip(zi).for_each(|(g, v)| *g += r * v);
                gb += r;
            }
            w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= step * g);
            b -= step * gb;
        }
        Ok(Self {
            weights: w,
            bias: b,
            feature_mean: mean,
            feature_scale: scale,
            settings,
            train_size: n,
            step_size: step,
        })
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.feature_mean)
            .zip(&self.feature_scale)
            .zip(&self.weights)
            .map(|(((v, m), s), w)| (v - m) / s * w)
            .sum::<f64>()
            + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.score(x) > 0.0
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[bool]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, &t)| self.predict(r) == t).count();
        hits as f64 / x.len().max(1) as f64
    }

    /// Coefficients in descending order.
    pub fn sorted_coefficients(&self) -> Vec<f64> {
        let mut w = self.weights.clone();
        w.sort_by(|a, b| b.total_cmp(a));
        w
    }
}

/// Outcome of one audio-vs-video probe. The probe predicts `true` for audio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityProbeResult {
    pub accuracy: f64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub probe: LinearProbe,
}

/// Splits sample ids in two halves with a seeded shuffle of the sorted ids.
pub fn split_ids(ids: &[String], seed: u64) -> (Vec<String>, Vec<String>) {
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sorted.shuffle(&mut rng);
    let half = sorted.len() / 2;
    let test = sorted.split_off(half);
    (sorted, test)
}

/// Modality probe over precomputed per-sample representations, where
/// `audio[i]` and `video[i]` belong to `ids[i]`.
pub fn modality_probe_from_reps(
    ids: &[String],
    audio: &[Vec<f64>],
    video: &[Vec<f64>],
    seed: u64,
    settings: ProbeSettings,
) -> Result<ModalityProbeResult> {
    if ids.len() != audio.len() || ids.len() != video.len() {
        return Err(UavmError::data("probe needs one audio and one video representation per id"));
    }
    let (train_ids, test_ids) = split_ids(ids, seed);
    if train_ids.len() < 2 || test_ids.len() < 2 {
        return Err(UavmError::data(format!(
            "modality probe needs at least 2 samples per modality in each half, got {} and {}",
            train_ids.len(),
            test_ids.len()
        )));
    }
    let gather = |half: &[String]| {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            if half.binary_search(id).is_ok() {
                x.push(audio[i].clone());
                y.push(true);
                x.push(video[i].clone());
                y.push(false);
            }
        }
        (x, y)
    };
    let mut train_sorted = train_ids.clone();
    train_sorted.sort();
    let mut test_sorted = test_ids.clone();
    test_sorted.sort();
    let (xtr, ytr) = gather(&train_sorted);
    let (xte, yte) = gather(&test_sorted);
    let probe = LinearProbe::fit(&xtr, &ytr, settings)?;
    Ok(ModalityProbeResult {
        accuracy: probe.accuracy(&xte, &yte),
        train_ids,
        test_ids,
        probe,
    })
}

/// Mean-pooled representations of every layer for one modality of every
/// sample: `out[layer][sample]`.
pub fn layer_representations(model: &Uavm, data: &Dataset, modality: Modality) -> Result<Vec<Vec<Vec<f64>>>> {
    if model.config().mode == ModelMode::CrossModalAttention {
        return Err(UavmError::Unsupported(
            "per-modality representations are undefined for the cross-modal attention model".into(),
        ));
    }
    let layers = model.config().num_transformer_layers() + 1;
    let mut out = vec![Vec::with_capacity(data.len()); layers];
    for chunk in data.samples.chunks(32) {
        let xs: Vec<&FeatureSequence> = chunk.iter().map(|s| s.get(modality)).collect();
        for (_, trace) in model.forward_batch(&xs, true)? {
            let trace = trace.expect("trace requested");
            for (l, slot) in out.iter_mut().enumerate() {
                slot.push(trace.pooled_layer(l).expect("trace covers every layer"));
            }
        }
    }
    Ok(out)
}

/// Audio and video representations of every layer, `(audio, video)` per layer.
pub type LayerReps = Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>;

pub fn paired_layer_representations(model: &Uavm, data: &Dataset) -> Result<LayerReps> {
    let a = layer_representations(model, data, Modality::Audio)?;
    let v = layer_representations(model, data, Modality::Video)?;
    Ok(a.into_iter().zip(v).collect())
}

fn check_layer(model: &Uavm, layer: usize) -> Result<()> {
    let max = model.config().num_transformer_layers();
    if layer > max {
        return Err(UavmError::config(format!("layer {layer} outside [0, {max}]")));
    }
    Ok(())
}

fn ids_of(data: &Dataset) -> Vec<String> {
    data.samples.iter().map(|s| s.sample_id().to_string()).collect()
}

/// Audio-vs-video probe on layer `layer` of `model`, trained on half of the
/// samples and scored on the other half.
pub fn modality_probe(
    model: &Uavm,
    data: &Dataset,
    layer: usize,
    seed: u64,
    settings: ProbeSettings,
) -> Result<ModalityProbeResult> {
    check_layer(model, layer)?;
    let reps = paired_layer_representations(model, data)?;
    let (a, v) = &reps[layer];
    modality_probe_from_reps(&ids_of(data), a, v, seed, settings)
}

/// Probe accuracy for every layer `0..=N+N_s`.
pub fn modality_probe_all_layers(model: &Uavm, data: &Dataset, seed: u64, settings: ProbeSettings) -> Result<Vec<f64>> {
    let ids = ids_of(data);
    paired_layer_representations(model, data)?
        .iter()
        .map(|(a, v)| modality_probe_from_reps(&ids, a, v, seed, settings).map(|r| r.accuracy))
        .collect()
}

/// Recall@k in both directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallAtK {
    pub k: usize,
    pub audio_to_video: f64,
    pub video_to_audio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub recalls: Vec<RecallAtK>,
    /// Items dropped because either side had a zero-norm representation.
    pub excluded: usize,
    pub items: usize,
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

/// Rank of the true match for every query: the number of other candidates
/// scoring at least as high. Ties count against the true match.
fn true_ranks(queries: &[Vec<f64>], candidates: &[Vec<f64>]) -> Vec<usize> {
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let sims: Vec<f64> = candidates.iter().map(|c| q.iter().zip(c).map(|(a, b)| a * b).sum()).collect();
            let own = sims[i];
            sims.iter().enumerate().filter(|&(j, &s)| j != i && s >= own).count()
        })
        .collect()
}

/// Cosine-similarity retrieval between paired embeddings, `audio[i]` ↔
/// `video[i]`.
pub fn retrieval_recall_from_embeddings(audio: &[Vec<f64>], video: &[Vec<f64>], ks: &[usize]) -> Result<RetrievalResult> {
    if audio.len() != video.len() {
        return Err(UavmError::data("retrieval needs one video embedding per audio embedding"));
    }
    if ks.iter().any(|&k| k == 0) {
        return Err(UavmError::config("recall@k needs k >= 1"));
    }
    let mut a = Vec::new();
    let mut v = Vec::new();
    for (x, y) in audio.iter().zip(video) {
        if let (Some(x), Some(y)) = (unit(x), unit(y)) {
            a.push(x);
            v.push(y);
        }
    }
    let excluded = audio.len() - a.len();
    if a.is_empty() {
        return Err(UavmError::data("no retrievable items: every representation has zero norm"));
    }
    let r_av = true_ranks(&a, &v);
    let r_va = true_ranks(&v, &a);
    let n = a.len() as f64;
    let recall = |ranks: &[usize], k: usize| ranks.iter().filter(|&&r| r < k).count() as f64 / n;
    Ok(RetrievalResult {
        recalls: ks
            .iter()
            .map(|&k| RecallAtK {
                k,
                audio_to_video: recall(&r_av, k),
                video_to_audio: recall(&r_va, k),
            })
            .collect(),
        excluded,
        items: a.len(),
    })
}

/// Retrieval between the mean-pooled audio and video representations of
/// layer `layer`.
pub fn retrieval_recall(model: &Uavm, data: &Dataset, layer: usize, ks: &[usize]) -> Result<RetrievalResult> {
    check_layer(model, layer)?;
    let reps = paired_layer_representations(model, data)?;
    let (a, v) = &reps[layer];
    retrieval_recall_from_embeddings(a, v, ks)
}

/// Mean absolute difference of two attention stacks, over heads and entries.
pub fn attention_map_mae(a: &AttentionMaps, b: &AttentionMaps) -> Result<f64> {
    if a.heads != b.heads || a.seq_len != b.seq_len || a.data.len() != b.data.len() {
        return Err(UavmError::Dimension {
            op: "attention_mae",
            lhs: vec![a.heads, a.seq_len, a.seq_len],
            rhs: vec![b.heads, b.seq_len, b.seq_len],
        });
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.data.len() as f64)
}

fn attention_pair(model: &Uavm, sample: &PairedSample, layer: usize) -> Result<(AttentionMaps, AttentionMaps)> {
    if model.config().mode == ModelMode::CrossModalAttention {
        return Err(UavmError::Unsupported(
            "attention maps of the cross-modal attention model are joint over both modalities".into(),
        ));
    }
    let total = model.config().num_transformer_layers();
    if layer == 0 || layer > total {
        return Err(UavmError::config(format!(
            "attention exists for transformer layers 1..={total}, not {layer}"
        )));
    }
    let (_, ta) = model.forward_single(&sample.audio, true)?;
    let (_, tv) = model.forward_single(&sample.video, true)?;
    let mut ta = ta.expect("trace requested");
    let mut tv = tv.expect("trace requested");
    Ok((ta.attention.swap_remove(layer - 1), tv.attention.swap_remove(layer - 1)))
}

/// Attention MAE between the audio and video passes of one sample at the
/// last transformer layer. Heads are paired by index.
pub fn attention_mae(model: &Uavm, sample: &PairedSample) -> Result<f64> {
    let last = model.config().num_transformer_layers();
    let (a, v) = attention_pair(model, sample, last)?;
    attention_map_mae(&a, &v)
}

/// Mean [`attention_mae`] over a dataset.
pub fn mean_attention_mae(model: &Uavm, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(UavmError::EmptyInput("attention MAE over an empty dataset".into()));
    }
    let mut sum = 0.0;
    for s in &data.samples {
        sum += attention_mae(model, s)?;
    }
    Ok(sum / data.len() as f64)
}

/// Column means of each head's attention matrix: the average attention
/// each time step receives.
pub fn heatmap_from_maps(maps: &AttentionMaps) -> Vec<Vec<f64>> {
    let t = maps.seq_len;
    (0..maps.heads)
        .map(|h| {
            let m = maps.head(h);
            (0..t).map(|j| (0..t).map(|i| m[i * t + j]).sum::<f64>() / t as f64).collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalHeatmap {
    pub layer: usize,
    /// `[head][t]` for the audio pass.
    pub audio: Vec<Vec<f64>>,
    pub video: Vec<Vec<f64>>,
}

impl TemporalHeatmap {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let wrap = |e| csv_err(path, e);
        let mut w = csv::Writer::from_path(path).map_err(wrap)?;
        w.write_record(["layer", "modality", "head", "t", "attention"]).map_err(wrap)?;
        for (name, maps) in [("audio", &self.audio), ("video", &self.video)] {
            for (h, row) in maps.iter().enumerate() {
                for (t, v) in row.iter().enumerate() {
                    w.write_record([self.layer.to_string(), name.into(), h.to_string(), t.to_string(), v.to_string()])
                        .map_err(wrap)?;
                }
            }
        }
        w.flush().map_err(|e| UavmError::io(path, e))
    }

    /// Whether the most-attended frame differs between modalities for head `h`.
    pub fn peak_differs(&self, h: usize) -> bool {
        crate::tensor::argmax(&self.audio[h]) != crate::tensor::argmax(&self.video[h])
    }
}

/// Per-head temporal attention of the audio and video passes at `layer`
/// (`1..=N+N_s`).
pub fn temporal_attention_heatmap(model: &Uavm, sample: &PairedSample, layer: usize) -> Result<TemporalHeatmap> {
    let (a, v) = attention_pair(model, sample, layer)?;
    Ok(TemporalHeatmap {
        layer,
        audio: heatmap_from_maps(&a),
        video: heatmap_from_maps(&v),
    })
}

/// One row of an embedding export.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub sample_id: String,
    pub modality: Modality,
    pub label: String,
    pub layer: usize,
    pub values: Vec<f64>,
}

/// Writes mean-pooled representations of `layers` for both modalities of
/// every sample. Columns: `sample_id,modality,label,layer,dim,e0..`; rows
/// narrower than the widest layer leave the trailing cells empty.
pub fn export_embeddings(model: &Uavm, data: &Dataset, layers: &[usize], path: &Path) -> Result<usize> {
    for &l in layers {
        check_layer(model, l)?;
    }
    let reps = paired_layer_representations(model, data)?;
    let width = layers.iter().map(|&l| reps[l].0.first().map_or(0, Vec::len)).max().unwrap_or(0);
    let wrap = |e| csv_err(path, e);
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    let mut header: Vec<String> = ["sample_id", "modality", "label", "layer", "dim"].map(String::from).to_vec();
    header.extend((0..width).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(wrap)?;
    let mut rows = 0;
    for &l in layers {
        let (a, v) = &reps[l];
        for (i, s) in data.samples.iter().enumerate() {
            for (m, rep) in [(Modality::Audio, &a[i]), (Modality::Video, &v[i])] {
                let mut rec = vec![
                    s.sample_id().to_string(),
                    m.as_str().to_string(),
                    s.label().to_string(),
                    l.to_string(),
                    rep.len().to_string(),
                ];
                rec.extend(rep.iter().map(f64::to_string));
                rec.resize(header.len(), String::new());
                w.write_record(&rec).map_err(wrap)?;
                rows += 1;
            }
        }
    }
    w.flush().map_err(|e| UavmError::io(path, e))?;
    Ok(rows)
}

/// Reads a file written by [`export_embeddings`].
pub fn load_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let wrap = |e| csv_err(path, e);
    let mut r = csv::Reader::from_path(path).map_err(wrap)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(wrap)?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let bad = |what: &str| UavmError::data(format!("{}: bad {what} in embedding row", path.display()));
        let modality = match field(1) {
            "audio" => Modality::Audio,
            "video" => Modality::Video,
            _ => return Err(bad("modality")),
        };
        let layer: usize = field(3).parse().map_err(|_| bad("layer"))?;
        let dim: usize = field(4).parse().map_err(|_| bad("dim"))?;
        let values = (0..dim)
            .map(|i| field(5 + i).parse::<f64>().map_err(|_| bad("value")))
            .collect::<Result<Vec<_>>>()?;
        out.push(EmbeddingRow {
            sample_id: field(0).to_string(),
            modality,
            label: field(2).to_string(),
            layer,
            values,
        });
    }
    Ok(out)
}

/// Regroups exported rows of one layer into `(ids, audio, video)` in file order.
pub fn embeddings_for_layer(rows: &[EmbeddingRow], layer: usize) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut ids = Vec::new();
    let mut audio = Vec::new();
    let mut video = Vec::new();
    for r in rows.iter().filter(|r| r.layer == layer) {
        match r.modality {
            Modality::Audio => {
                ids.push(r.sample_id.clone());
                audio.push(r.values.clone());
            }
            Modality::Video => video.push((r.sample_id.clone(), r.values.clone())),
        }
    }
    if video.len() != audio.len() {
        return Err(UavmError::data(format!("layer {layer}: {} audio vs {} video rows", audio.len(), video.len())));
    }
    let mut aligned = Vec::with_capacity(video.len());
    for id in &ids {
        let v = video
            .iter()
            .find(|(vid, _)| vid == id)
            .ok_or_else(|| UavmError::data(format!("layer {layer}: no video row for `{id}`")))?;
        aligned.push(v.1.clone());
    }
    Ok((ids, audio, aligned))
}

/// One scalar of a [`ProbeReport`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub metric: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub layer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub direction: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub head: Option<usize>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeReport {
    pub format_version: u32,
    pub probe: String,
    pub seed: u64,
    pub checkpoint_id: String,
    pub settings: serde_json::Value,
    pub results: Vec<ProbeResult>,
    #[serde(default)]
    pub notes: Vec<String>,
}

pub const REPORT_VERSION: u32 = 1;
pub const PROBE_NAMES: [&str; 5] = ["modality", "retrieval", "attention", "heatmap", "embeddings"];

impl ProbeReport {
    /// Checks the documented schema: known probe name, hex checkpoint id,
    /// metrics in `[0, 1]`, layers within `[0, max_layer]`.
    pub fn validate(&self, max_layer: usize) -> Result<()> {
        let fail = |m: String| Err(UavmError::data(format!("probe report: {m}")));
        if self.format_version != REPORT_VERSION {
            return fail(format!("format_version {}", self.format_version));
        }
        if !PROBE_NAMES.contains(&self.probe.as_str()) {
            return fail(format!("unknown probe `{}`", self.probe));
        }
        if self.checkpoint_id.len() != 16 || !self.checkpoint_id.bytes().all(|b| b.is_ascii_hexdigit()) {
            return fail(format!("checkpoint id `{}` is not 16 hex digits", self.checkpoint_id));
        }
        if !self.settings.is_object() {
            return fail("settings must be an object".into());
        }
        for r in &self.results {
            if r.metric.is_empty() {
                return fail("empty metric name".into());
            }
            if !(0.0..=1.0).contains(&r.value) {
                return fail(format!("{} = {} outside [0, 1]", r.metric, r.value));
            }
            if r.layer.is_some_and(|l| l > max_layer) {
                return fail(format!("{} layer {:?} outside [0, {max_layer}]", r.metric, r.layer));
            }
            if let Some(d) = &r.direction {
                if !["audio_to_video", "video_to_audio", "audio", "video"].contains(&d.as_str()) {
                    return fail(format!("unknown direction `{d}`"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_maps_give_flat_heatmap() {
        let t = 5;
        let maps = AttentionMaps {
            heads: 2,
            seq_len: t,
            data: vec![1.0 / t as f64; 2 * t * t],
        };
        for row in heatmap_from_maps(&maps) {
            assert!(row.iter().all(|v| (v - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn constant_offset_mae() {
        let a = AttentionMaps {
            heads: 1,
            seq_len: 2,
            data: vec![0.5; 4],
        };
        let b = AttentionMaps {
            data: vec![0.6; 4],
            ..a.clone()
        };
        assert!((attention_map_mae(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(attention_map_mae(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn identical_embeddings_retrieve_perfectly() {
        let e: Vec<Vec<f64>> = (0..6).map(|i| vec![(i as f64).cos(), (i as f64).sin(), 0.3]).collect();
        let r = retrieval_recall_from_embeddings(&e, &e, &[1]).unwrap();
        assert_eq!(r.recalls[0].audio_to_video, 1.0);
        assert_eq!(r.recalls[0].video_to_audio, 1.0);
    }

    #[test]
    fn zero_norm_items_are_excluded() {
        let a = vec![vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 1.0]];
        let r = retrieval_recall_from_embeddings(&a, &a, &[1]).unwrap();
        assert_eq!((r.excluded, r.items), (1, 2));
    }

    #[test]
    fn split_keeps_halves_disjoint() {
        let ids: Vec<String> = (0..9).map(|i| format!("s{i}")).collect();
        let (a, b) = split_ids(&ids, 3);
        assert_eq!(a.len() + b.len(), 9);
        assert!(a.iter().all(|x| !b.contains(x)));
    }
}
