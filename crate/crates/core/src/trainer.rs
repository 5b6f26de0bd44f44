//! Stochastic single-modality training: each iteration draws one modality
//! with probability `lambda_mt` for audio, and the whole batch goes through
//! that modality's path.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{mixup_batch, random_time_shift, smoothed_target, BalancedSampler};
use crate::config::{LossKind, ModelMode, TrainConfig};
use crate::data::{Dataset, FeatureSequence, Modality};
use crate::error::{Result, UavmError};
use crate::model::Uavm;
use crate::optim::{Adam, AdamHyper};
use crate::params::ParamBinder;
use crate::tape::{Tape, Var};
use crate::tensor::argmax;

const STREAM_MODALITY: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_AUGMENT: u64 = 3;

/// Audio with probability `lambda`, video otherwise. Consumes exactly one
/// uniform draw.
pub fn sample_modality<R: Rng>(lambda: f64, rng: &mut R) -> Result<Modality> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(UavmError::config(format!("lambda_mt {lambda} outside [0, 1]")));
    }
    let u: f64 = rng.random();
    Ok(if u < lambda { Modality::Audio } else { Modality::Video })
}

/// One iteration's worth of inputs and soft targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainBatch {
    pub inputs: Vec<FeatureSequence>,
    pub targets: Vec<Vec<f64>>,
}

/// Paired batch for the cross-modal-attention baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    pub audio: Vec<FeatureSequence>,
    pub video: Vec<FeatureSequence>,
    pub targets: Vec<Vec<f64>>,
}

fn loss_var(tape: &mut Tape, logits: Var, targets: &[Vec<f64>], kind: LossKind) -> Result<Var> {
    let t = targets.concat();
    match kind {
        LossKind::SingleLabelCe => tape.soft_cross_entropy(logits, t),
        LossKind::MultiLabelBce => tape.bce_with_logits(logits, t),
    }
}

fn finish_step(
    model: &mut Uavm,
    opt: &mut Adam,
    tape: &mut Tape,
    bound: Vec<(String, Var)>,
    loss: Var,
    lr: f64,
) -> Result<f64> {
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(UavmError::NumericFailure(format!("training loss is {value}")));
    }
    tape.backward(loss)?;
    let grads: Vec<(String, Vec<f64>)> = bound
        .into_iter()
        .map(|(name, v)| {
            let g = tape.grad(v).map(<[f64]>::to_vec);
            (name, g)
        })
        .filter_map(|(name, g)| g.map(|g| (name, g)))
        .collect();
    if grads.iter().any(|(_, g)| g.iter().any(|x| !x.is_finite())) {
        return Err(UavmError::NumericFailure("non-finite gradient".into()));
    }
    opt.step(model.params_mut(), &grads, lr)?;
    Ok(value)
}

/// Loss of `batch` on its modality's path, followed by one Adam update of
/// exactly the parameters that path touches. Returns the pre-update loss.
pub fn train_step(model: &mut Uavm, opt: &mut Adam, batch: &TrainBatch, lr: f64) -> Result<f64> {
    let Some(first) = batch.inputs.first() else {
        return Err(UavmError::EmptyInput("empty training batch".into()));
    };
    let modality = first.modality;
    if let Some(x) = batch.inputs.iter().find(|x| x.modality != modality) {
        return Err(UavmError::Contract(format!(
            "mixed-modality batch: `{}` is {} but the batch is {modality}",
            x.sample_id, x.modality
        )));
    }
    if batch.targets.len() != batch.inputs.len() {
        return Err(UavmError::Contract("batch inputs and targets differ in length".into()));
    }
    let mut tape = Tape::new();
    let (loss, bound) = {
        let mut binder = ParamBinder::new(model.params(), true);
        let refs: Vec<&FeatureSequence> = batch.inputs.iter().collect();
        let g = model.forward_graph(&mut tape, &mut binder, &refs, modality)?;
        let loss = loss_var(&mut tape, g.logits, &batch.targets, model.config().loss_kind)?;
        (loss, binder.bound())
    };
    finish_step(model, opt, &mut tape, bound, loss, lr)
}

/// Training step of the cross-modal-attention baseline on paired inputs.
pub fn train_step_paired(model: &mut Uavm, opt: &mut Adam, batch: &PairedBatch, lr: f64) -> Result<f64> {
    if batch.audio.is_empty() {
        return Err(UavmError::EmptyInput("empty training batch".into()));
    }
    let mut tape = Tape::new();
    let (loss, bound) = {
        let mut binder = ParamBinder::new(model.params(), true);
        let a: Vec<&FeatureSequence> = batch.audio.iter().collect();
        let v: Vec<&FeatureSequence> = batch.video.iter().collect();
        let g = model.cross_modal_graph(&mut tape, &mut binder, &a, &v, false)?;
        let loss = loss_var(&mut tape, g.logits, &batch.targets, model.config().loss_kind)?;
        (loss, binder.bound())
    };
    finish_step(model, opt, &mut tape, bound, loss, lr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    /// `audio`, `video`, or `both` for the cross-modal baseline.
    pub modality: String,
    pub loss: f64,
    pub lr: f64,
}

/// Eval accuracies in `[0, 1]`. Single-modality entries are absent for the
/// cross-modal baseline, which only accepts both inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub audio_acc: Option<f64>,
    pub video_acc: Option<f64>,
    pub fused_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub audio_iterations: usize,
    pub video_iterations: usize,
    pub eval: Option<EvalMetrics>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochSummary>,
}

impl TrainLog {
    pub fn audio_fraction(&self) -> f64 {
        let n = self.iterations.len();
        if n == 0 {
            return 0.0;
        }
        self.iterations.iter().filter(|r| r.modality == "audio").count() as f64 / n as f64
    }

    pub fn final_eval(&self) -> Option<&EvalMetrics> {
        self.epochs.last().and_then(|e| e.eval.as_ref())
    }

    /// Iteration rows as CSV, with the seed on every row.
    pub fn write_iterations_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| crate::data::archive::csv_err(path, e))?;
        let wrap = |e| crate::data::archive::csv_err(path, e);
        w.write_record(["seed", "iteration", "epoch", "modality", "loss", "lr"]).map_err(wrap)?;
        for r in &self.iterations {
            w.write_record([
                self.seed.to_string(),
                r.iteration.to_string(),
                r.epoch.to_string(),
                r.modality.clone(),
                r.loss.to_string(),
                r.lr.to_string(),
            ])
            .map_err(wrap)?;
        }
        w.flush().map_err(|e| UavmError::io(path, e))
    }

    /// Epoch summaries as JSON.
    pub fn write_epochs_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            seed: u64,
            epochs: &'a [EpochSummary],
        }
        let text = serde_json::to_string_pretty(&Out {
            seed: self.seed,
            epochs: &self.epochs,
        })?;
        std::fs::write(path, text).map_err(|e| UavmError::io(path, e))
    }
}

fn accuracy(preds: &[Vec<f64>], data: &Dataset) -> f64 {
    let hits = preds
        .iter()
        .zip(&data.samples)
        .filter(|(p, s)| s.label().accepts(argmax(p)))
        .count();
    hits as f64 / data.len().max(1) as f64
}

const EVAL_CHUNK: usize = 64;

/// Classifier outputs for one modality of every sample, no augmentation.
pub fn predict_modality(model: &Uavm, data: &Dataset, modality: Modality) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.samples.chunks(EVAL_CHUNK) {
        let xs: Vec<&FeatureSequence> = chunk.iter().map(|s| s.get(modality)).collect();
        out.extend(model.forward_batch(&xs, false)?.into_iter().map(|(l, _)| l));
    }
    Ok(out)
}

/// Audio, video and fused accuracy on `data`.
pub fn evaluate(model: &Uavm, data: &Dataset) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(UavmError::EmptyInput("evaluation set is empty".into()));
    }
    if model.config().mode == ModelMode::CrossModalAttention {
        let preds = data
            .samples
            .iter()
            .map(|s| model.forward_cross_modal(&s.audio, &s.video, false).map(|(l, _)| l))
            .collect::<Result<Vec<_>>>()?;
        return Ok(EvalMetrics {
            audio_acc: None,
            video_acc: None,
            fused_acc: accuracy(&preds, data),
        });
    }
    let pa = predict_modality(model, data, Modality::Audio)?;
    let pv = predict_modality(model, data, Modality::Video)?;
    let fused = pa
        .iter()
        .zip(&pv)
        .map(|(a, v)| model.fuse(a, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalMetrics {
        audio_acc: Some(accuracy(&pa, data)),
        video_acc: Some(accuracy(&pv, data)),
        fused_acc: accuracy(&fused, data),
    })
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains `model` in place for `cfg.epochs` epochs of
/// `ceil(len / batch_size)` iterations each. Modality choice, batch
/// composition and augmentation draw from separate seeded streams.
pub fn run_training(
    model: &mut Uavm,
    cfg: &TrainConfig,
    train: &Dataset,
    eval: Option<&Dataset>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(UavmError::EmptyInput("training set is empty".into()));
    }
    let mc = model.config();
    if train.num_classes != mc.num_classes {
        return Err(UavmError::data(format!(
            "dataset has {} classes, model expects {}",
            train.num_classes, mc.num_classes
        )));
    }
    if train.seq_len() != Some(mc.seq_len) || train.feature_dim() != Some(mc.feature_dim) {
        return Err(UavmError::data(format!(
            "dataset sequences are {:?}x{:?}, model expects {}x{}",
            train.seq_len(),
            train.feature_dim(),
            mc.seq_len,
            mc.feature_dim
        )));
    }
    let paired = mc.mode == ModelMode::CrossModalAttention;
    let num_classes = mc.num_classes;
    let mut opt = Adam::new(AdamHyper {
        lr: cfg.learning_rate,
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
    });
    let mut modality_rng = stream(cfg.seed, STREAM_MODALITY);
    let mut batch_rng = stream(cfg.seed, STREAM_BATCH);
    let mut aug_rng = stream(cfg.seed, STREAM_AUGMENT);
    let sampler = if cfg.balanced_sampling {
        Some(BalancedSampler::new(train)?)
    } else {
        None
    };
    let n = train.len();
    let bs = cfg.batch_size;
    let steps = n.div_ceil(bs);
    let mut log = TrainLog {
        seed: cfg.seed,
        ..TrainLog::default()
    };
    let mut iteration = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        if sampler.is_none() {
            order.shuffle(&mut batch_rng);
        }
        let mut loss_sum = 0.0;
        let (mut n_audio, mut n_video) = (0, 0);
        for step in 0..steps {
            let idx: Vec<usize> = match &sampler {
                Some(s) => s.draw(bs, &mut batch_rng),
                None => order[step * bs..((step + 1) * bs).min(n)].to_vec(),
            };
            let targets = idx
                .iter()
                .map(|&i| smoothed_target(train.samples[i].label(), cfg.label_smoothing, num_classes))
                .collect::<Result<Vec<_>>>()?;
            let (loss, tag) = if paired {
                let mut audio = Vec::with_capacity(idx.len());
                let mut video = Vec::with_capacity(idx.len());
                for &i in &idx {
                    let s = &train.samples[i];
                    if cfg.time_shift {
                        audio.push(random_time_shift(&s.audio, &mut aug_rng));
                        video.push(random_time_shift(&s.video, &mut aug_rng));
                    } else {
                        audio.push(s.audio.clone());
                        video.push(s.video.clone());
                    }
                }
                let mut targets_v = targets.clone();
                let mut targets = targets;
                // Same draws for both halves keep each pair aligned.
                let snapshot = aug_rng.clone();
                mixup_batch(&mut audio, &mut targets, cfg.mixup_alpha, &mut aug_rng)?;
                let mut replay = snapshot;
                mixup_batch(&mut video, &mut targets_v, cfg.mixup_alpha, &mut replay)?;
                let batch = PairedBatch { audio, video, targets };
                (train_step_paired(model, &mut opt, &batch, lr)?, "both")
            } else {
                let modality = sample_modality(cfg.lambda_mt, &mut modality_rng)?;
                let mut inputs: Vec<FeatureSequence> = idx
                    .iter()
                    .map(|&i| {
                        let x = train.samples[i].get(modality);
                        if cfg.time_shift {
                            random_time_shift(x, &mut aug_rng)
                        } else {
                            x.clone()
                        }
                    })
                    .collect();
                let mut targets = targets;
                mixup_batch(&mut inputs, &mut targets, cfg.mixup_alpha, &mut aug_rng)?;
                match modality {
                    Modality::Audio => n_audio += 1,
                    Modality::Video => n_video += 1,
                }
                let batch = TrainBatch { inputs, targets };
                (train_step(model, &mut opt, &batch, lr)?, modality.as_str())
            };
            loss_sum += loss;
            log.iterations.push(IterationRecord {
                iteration,
                epoch,
                modality: tag.to_string(),
                loss,
                lr,
            });
            iteration += 1;
        }
        let eval_metrics = match eval {
            Some(d) if cfg.eval_every_epoch || epoch + 1 == cfg.epochs => Some(evaluate(model, d)?),
            _ => None,
        };
        log.epochs.push(EpochSummary {
            epoch,
            lr,
            mean_loss: loss_sum / steps as f64,
            audio_iterations: n_audio,
            video_iterations: n_video,
            eval: eval_metrics,
        });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_lambdas() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(sample_modality(1.0, &mut rng).unwrap(), Modality::Audio);
            assert_eq!(sample_modality(0.0, &mut rng).unwrap(), Modality::Video);
        }
        assert!(sample_modality(1.5, &mut rng).is_err());
        assert!(sample_modality(-0.1, &mut rng).is_err());
    }

    #[test]
    fn one_draw_per_sample() {
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = a.clone();
        sample_modality(0.3, &mut a).unwrap();
        let _: f64 = b.random();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
    }
}
