//! The unified audio-visual model.
//!
//! Each modality owns an input projection and `N` modal-specific blocks
//! (`theta_a`, `theta_v`). Their output passes through a bridge into the
//! `N_s` shared blocks, is mean-pooled over time and classified by one
//! linear head (`theta_s`). Audio and video forward passes look up the very
//! same `shared.*` entries in the parameter store, so there is exactly one
//! stored copy of the shared weights.
//!
//! Independent mode swaps `shared.*` for per-modality `audio.head.*` and
//! `video.head.*` copies. Cross-modal-attention mode concatenates both
//! modal-specific outputs into one `2T` sequence before the shared stack.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{FusionKind, LossKind, ModelConfig, ModelMode};
use crate::data::{FeatureSequence, Modality};
use crate::error::{Result, UavmError};
use crate::nn::{self, block_specs, linear_specs, projection_specs, AttentionMaps, InitKind, ParamSpec};
use crate::params::{ParamBinder, ParamGroup, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{softmax_rows_in_place, Tensor};

/// Per-layer record of one forward pass over one input.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// Token matrices: index 0 is the post-projection input, then one entry
    /// per transformer layer.
    pub layers: Vec<Tensor>,
    /// Attention maps of transformer layer `i + 1`.
    pub attention: Vec<AttentionMaps>,
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    /// Mean over tokens of layer `layer`.
    pub fn pooled_layer(&self, layer: usize) -> Option<Vec<f64>> {
        let t = self.layers.get(layer)?;
        let (rows, cols) = t.dims2();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            out.iter_mut().zip(t.row(r)).for_each(|(o, v)| *o += v);
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        Some(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub theta_a: usize,
    pub theta_v: usize,
    pub theta_s: usize,
    pub total: usize,
}

impl ParamCounts {
    pub fn as_map(&self) -> BTreeMap<&'static str, usize> {
        BTreeMap::from([
            ("theta_a", self.theta_a),
            ("theta_v", self.theta_v),
            ("theta_s", self.theta_s),
            ("total", self.total),
        ])
    }
}

/// Tape handles of one batched forward pass.
#[derive(Debug)]
pub struct Graph {
    pub logits: Var,
    pub pooled: Var,
    pub layers: Vec<Var>,
    pub attention: Vec<Var>,
    pub batch: usize,
    /// Token count per sequence at each recorded layer.
    pub layer_seq: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Uavm {
    config: ModelConfig,
    params: ParamStore,
    seed: u64,
}

fn branch_prefix(m: Modality) -> &'static str {
    m.as_str()
}

impl Uavm {
    /// Builds a freshly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for spec in param_layout(&config) {
            let t = spec.materialize(&mut rng, config.init_std);
            params.insert(spec.name, t);
        }
        Ok(Self {
            config,
            params,
            seed,
        })
    }

    /// Reassembles a model, checking every parameter against the layout.
    pub fn from_parts(config: ModelConfig, params: ParamStore, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != params.len() {
            return Err(UavmError::data(format!(
                "expected {} parameter tensors for this config, found {}",
                layout.len(),
                params.len()
            )));
        }
        for spec in &layout {
            let t = params
                .get(&spec.name)
                .ok_or_else(|| UavmError::data(format!("missing parameter `{}`", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(UavmError::Dimension {
                    op: "checkpoint parameter",
                    lhs: spec.shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        Ok(Self {
            config,
            params,
            seed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count_parameters(&self) -> ParamCounts {
        let by = |g| self.params.numel(Some(g));
        ParamCounts {
            theta_a: by(ParamGroup::ThetaA),
            theta_v: by(ParamGroup::ThetaV),
            theta_s: by(ParamGroup::ThetaS),
            total: self.params.numel(None),
        }
    }

    fn check_input(&self, x: &FeatureSequence) -> Result<()> {
        let c = &self.config;
        if x.seq_len() != c.seq_len || x.dim() != c.feature_dim {
            return Err(UavmError::Dimension {
                op: "model input",
                lhs: vec![c.seq_len, c.feature_dim],
                rhs: vec![x.seq_len(), x.dim()],
            });
        }
        if !x.is_finite() {
            return Err(UavmError::NumericInput(format!(
                "features of sample `{}` ({})",
                x.sample_id, x.modality
            )));
        }
        Ok(())
    }

    fn input_var(&self, tape: &mut Tape, xs: &[&FeatureSequence], modality: Modality) -> Result<Var> {
        if xs.is_empty() {
            return Err(UavmError::EmptyInput("empty batch".into()));
        }
        let mut data = Vec::with_capacity(xs.len() * self.config.seq_len * self.config.feature_dim);
        for x in xs {
            self.check_input(x)?;
            if x.modality != modality {
                return Err(UavmError::Contract(format!(
                    "batch mixes modalities: sample `{}` is {} in a {modality} batch",
                    x.sample_id, x.modality
                )));
            }
            data.extend(x.normalized_features());
        }
        let rows = xs.len() * self.config.seq_len;
        Ok(tape.constant(Tensor::matrix(rows, self.config.feature_dim, data)?))
    }

    fn head_prefix(&self, m: Modality) -> String {
        match self.config.mode {
            ModelMode::Independent => format!("{}.head", branch_prefix(m)),
            ModelMode::Unified | ModelMode::CrossModalAttention => "shared".into(),
        }
    }

    fn bridge_prefix(&self, m: Modality) -> String {
        if self.config.per_modality_bridge {
            format!("{}.bridge", branch_prefix(m))
        } else {
            format!("{}.bridge", self.head_prefix(m))
        }
    }

    fn positions(&self, tape: &mut Tape, batch: usize, dim: usize) -> Result<Option<Var>> {
        if !self.config.position_encoding {
            return Ok(None);
        }
        let pe = nn::sinusoidal_positions(self.config.seq_len, dim);
        let tiled: Vec<f64> = (0..batch).flat_map(|_| pe.data().iter().copied()).collect();
        Ok(Some(tape.constant(Tensor::matrix(batch * self.config.seq_len, dim, tiled)?)))
    }

    /// Input projection and modal-specific stack of one branch. Appends the
    /// post-projection tokens and each block's output to `layers`.
    fn encode_branch(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        m: Modality,
        x: Var,
        batch: usize,
        layers: &mut Vec<Var>,
        attention: &mut Vec<Var>,
    ) -> Result<Var> {
        let c = &self.config;
        let mut h = if c.num_modal_layers > 0 {
            nn::linear(tape, binder, x, &format!("{}.input", branch_prefix(m)))?
        } else if c.num_shared_layers > 0 {
            nn::linear(tape, binder, x, &self.bridge_prefix(m))?
        } else {
            x
        };
        if let Some(pe) = self.positions(tape, batch, c.front_dim())? {
            h = tape.add(h, pe)?;
        }
        layers.push(h);
        for i in 0..c.num_modal_layers {
            let prefix = format!("{}.layers.{i}", branch_prefix(m));
            let (out, attn) = nn::transformer_block(
                tape,
                binder,
                h,
                &prefix,
                batch,
                c.seq_len,
                c.num_heads,
                c.layer_norm_eps,
            )?;
            layers.push(out);
            attention.push(attn);
            h = out;
        }
        if c.num_modal_layers > 0 && c.num_shared_layers > 0 {
            h = nn::linear(tape, binder, h, &self.bridge_prefix(m))?;
        }
        Ok(h)
    }

    #[allow(clippy::too_many_arguments)]
    fn shared_stack(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        head: &str,
        mut h: Var,
        batch: usize,
        seq: usize,
        layers: &mut Vec<Var>,
        attention: &mut Vec<Var>,
    ) -> Result<(Var, Var)> {
        let c = &self.config;
        for i in 0..c.num_shared_layers {
            let (out, attn) = nn::transformer_block(
                tape,
                binder,
                h,
                &format!("{head}.layers.{i}"),
                batch,
                seq,
                c.num_heads,
                c.layer_norm_eps,
            )?;
            layers.push(out);
            attention.push(attn);
            h = out;
        }
        let pooled = tape.mean_pool(h, seq)?;
        let logits = nn::linear(tape, binder, pooled, &format!("{head}.classifier"))?;
        Ok((pooled, logits))
    }

    /// Records a batched single-modality forward pass on `tape`.
    pub fn forward_graph(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        xs: &[&FeatureSequence],
        modality: Modality,
    ) -> Result<Graph> {
        if self.config.mode == ModelMode::CrossModalAttention {
            return Err(UavmError::Unsupported(
                "the cross-modal attention model only works when both modalities are input".into(),
            ));
        }
        let x = self.input_var(tape, xs, modality)?;
        let batch = xs.len();
        let mut layers = Vec::new();
        let mut attention = Vec::new();
        let h = self.encode_branch(tape, binder, modality, x, batch, &mut layers, &mut attention)?;
        let head = self.head_prefix(modality);
        let (pooled, logits) = self.shared_stack(
            tape,
            binder,
            &head,
            h,
            batch,
            self.config.seq_len,
            &mut layers,
            &mut attention,
        )?;
        let layer_seq = vec![self.config.seq_len; layers.len()];
        Ok(Graph {
            logits,
            pooled,
            layers,
            attention,
            batch,
            layer_seq,
        })
    }

    /// Records a batched forward pass of the cross-modal-attention baseline.
    /// With `video_first` the concatenation order is `(V, A)`.
    pub fn cross_modal_graph(
        &self,
        tape: &mut Tape,
        binder: &mut ParamBinder,
        audio: &[&FeatureSequence],
        video: &[&FeatureSequence],
        video_first: bool,
    ) -> Result<Graph> {
        if self.config.mode != ModelMode::CrossModalAttention {
            return Err(UavmError::Unsupported(
                "concatenated audio-visual input needs mode = cross_modal_attention".into(),
            ));
        }
        if audio.len() != video.len() {
            return Err(UavmError::Contract(format!(
                "{} audio vs {} video sequences",
                audio.len(),
                video.len()
            )));
        }
        let batch = audio.len();
        let t = self.config.seq_len;
        let xa = self.input_var(tape, audio, Modality::Audio)?;
        let xv = self.input_var(tape, video, Modality::Video)?;
        let mut layers_a = Vec::new();
        let mut layers_v = Vec::new();
        let mut attention = Vec::new();
        let mut attention_v = Vec::new();
        let ha = self.encode_branch(tape, binder, Modality::Audio, xa, batch, &mut layers_a, &mut attention)?;
        let hv = self.encode_branch(tape, binder, Modality::Video, xv, batch, &mut layers_v, &mut attention_v)?;
        // Front layers are recorded as the (first, second) concatenation so
        // every trace layer covers all 2T tokens.
        let (first, second, lf, ls) = if video_first {
            (hv, ha, &layers_v, &layers_a)
        } else {
            (ha, hv, &layers_a, &layers_v)
        };
        let mut layers = Vec::new();
        for (&p, &q) in lf.iter().zip(ls) {
            layers.push(tape.concat_seq(p, q, t, t)?);
        }
        let joint = tape.concat_seq(first, second, t, t)?;
        let mut shared_attention = Vec::new();
        let (pooled, logits) = self.shared_stack(
            tape,
            binder,
            "shared",
            joint,
            batch,
            2 * t,
            &mut layers,
            &mut shared_attention,
        )?;
        let layer_seq = vec![2 * t; layers.len()];
        // Modal-specific attention stays per-branch (T x T); keep the first
        // branch's maps for the trace.
        let mut all_attention = if video_first { attention_v } else { attention };
        all_attention.extend(shared_attention);
        Ok(Graph {
            logits,
            pooled,
            layers,
            attention: all_attention,
            batch,
            layer_seq,
        })
    }

    fn collect(&self, tape: &Tape, g: &Graph, record_trace: bool, branch_seq: usize) -> Vec<(Vec<f64>, Option<ForwardTrace>)> {
        let logits = tape.value(g.logits);
        let pooled = tape.value(g.pooled);
        let n_modal = self.config.num_modal_layers;
        (0..g.batch)
            .map(|b| {
                let l = logits.row(b).to_vec();
                let trace = record_trace.then(|| {
                    let layers = g
                        .layers
                        .iter()
                        .zip(&g.layer_seq)
                        .map(|(&v, &seq)| {
                            let t = tape.value(v);
                            let (_, cols) = t.dims2();
                            let data = t.data()[b * seq * cols..(b + 1) * seq * cols].to_vec();
                            Tensor::matrix(seq, cols, data).expect("slice matches trace shape")
                        })
                        .collect();
                    let attention = g
                        .attention
                        .iter()
                        .enumerate()
                        .map(|(i, &a)| {
                            let seq = if i < n_modal { branch_seq } else { g.layer_seq[i + 1] };
                            AttentionMaps::from_tape(tape, a, b, self.config.num_heads, seq)
                                .expect("attention node holds probabilities")
                        })
                        .collect();
                    ForwardTrace {
                        layers,
                        attention,
                        pooled: pooled.row(b).to_vec(),
                        logits: l.clone(),
                    }
                });
                (l, trace)
            })
            .collect()
    }

    /// Batched single-modality forward. All inputs must share a modality.
    pub fn forward_batch(
        &self,
        xs: &[&FeatureSequence],
        record_trace: bool,
    ) -> Result<Vec<(Vec<f64>, Option<ForwardTrace>)>> {
        let Some(first) = xs.first() else {
            return Ok(Vec::new());
        };
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new(&self.params, false);
        let g = self.forward_graph(&mut tape, &mut binder, xs, first.modality)?;
        Ok(self.collect(&tape, &g, record_trace, self.config.seq_len))
    }

    /// Classifier output for one sequence through its own modality's path.
    pub fn forward_single(
        &self,
        x: &FeatureSequence,
        record_trace: bool,
    ) -> Result<(Vec<f64>, Option<ForwardTrace>)> {
        Ok(self
            .forward_batch(&[x], record_trace)?
            .pop()
            .expect("one input gives one output"))
    }

    pub fn forward_cross_modal(
        &self,
        audio: &FeatureSequence,
        video: &FeatureSequence,
        record_trace: bool,
    ) -> Result<(Vec<f64>, Option<ForwardTrace>)> {
        self.forward_cross_modal_ordered(audio, video, record_trace, false)
    }

    pub fn forward_cross_modal_ordered(
        &self,
        audio: &FeatureSequence,
        video: &FeatureSequence,
        record_trace: bool,
        video_first: bool,
    ) -> Result<(Vec<f64>, Option<ForwardTrace>)> {
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new(&self.params, false);
        let g = self.cross_modal_graph(&mut tape, &mut binder, &[audio], &[video], video_first)?;
        Ok(self
            .collect(&tape, &g, record_trace, self.config.seq_len)
            .pop()
            .expect("one pair gives one output"))
    }

    /// Prediction from whichever modalities are present: one pass per
    /// modality, fused when both exist.
    pub fn infer(&self, audio: Option<&FeatureSequence>, video: Option<&FeatureSequence>) -> Result<Vec<f64>> {
        if self.config.mode == ModelMode::CrossModalAttention {
            return match (audio, video) {
                (Some(a), Some(v)) => Ok(self.forward_cross_modal(a, v, false)?.0),
                _ => Err(UavmError::Unsupported(
                    "the cross-modal attention model only works when both modalities are input".into(),
                )),
            };
        }
        match (audio, video) {
            (None, None) => Err(UavmError::EmptyInput(
                "inference needs at least one modality".into(),
            )),
            (Some(a), None) => Ok(self.forward_single(a, false)?.0),
            (None, Some(v)) => Ok(self.forward_single(v, false)?.0),
            (Some(a), Some(v)) => {
                let pa = self.forward_single(a, false)?.0;
                let pv = self.forward_single(v, false)?.0;
                self.fuse(&pa, &pv)
            }
        }
    }

    /// Fuses two classifier outputs according to the configured fusion kind.
    pub fn fuse(&self, pred_a: &[f64], pred_v: &[f64]) -> Result<Vec<f64>> {
        match self.config.fusion {
            FusionKind::Logits => fuse_predictions(pred_a, pred_v),
            FusionKind::Probabilities => {
                let pa = to_probabilities(pred_a, self.config.loss_kind);
                let pv = to_probabilities(pred_v, self.config.loss_kind);
                fuse_predictions(&pa, &pv)
            }
        }
    }
}

fn to_probabilities(logits: &[f64], kind: LossKind) -> Vec<f64> {
    let mut p = logits.to_vec();
    match kind {
        LossKind::SingleLabelCe => softmax_rows_in_place(&mut p, logits.len().max(1)),
        LossKind::MultiLabelBce => p.iter_mut().for_each(|z| *z = 1.0 / (1.0 + (-*z).exp())),
    }
    p
}

/// Elementwise mean of two classifier outputs.
pub fn fuse_predictions(pred_a: &[f64], pred_v: &[f64]) -> Result<Vec<f64>> {
    if pred_a.len() != pred_v.len() {
        return Err(UavmError::Dimension {
            op: "fuse_predictions",
            lhs: vec![pred_a.len()],
            rhs: vec![pred_v.len()],
        });
    }
    if pred_a.iter().chain(pred_v).any(|v| !v.is_finite()) {
        return Err(UavmError::NumericInput("fuse_predictions".into()));
    }
    Ok(pred_a.iter().zip(pred_v).map(|(a, v)| (a + v) / 2.0).collect())
}

/// Every parameter tensor the config implies, in initialization order.
pub fn param_layout(c: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let n = c.num_modal_layers;
    let ns = c.num_shared_layers;
    let heads: Vec<String> = match c.mode {
        ModelMode::Independent => vec!["audio.head".into(), "video.head".into()],
        _ => vec!["shared".into()],
    };
    // Input rows have unit L2 norm, so a unit-std first projection yields
    // unit-variance tokens; later bridges keep that scale via fan-in init.
    let first = InitKind::NormalStd(1.0);
    let bridge = if n > 0 {
        InitKind::NormalStd(1.0 / (c.branch_out_dim() as f64).sqrt())
    } else {
        first
    };
    for m in Modality::BOTH {
        let p = branch_prefix(m);
        if n > 0 {
            out.extend(projection_specs(&format!("{p}.input"), c.feature_dim, c.modal_dim, first));
            for i in 0..n {
                out.extend(block_specs(&format!("{p}.layers.{i}"), c.modal_dim, c.ffn_multiplier));
            }
        }
        if ns > 0 && c.per_modality_bridge {
            out.extend(projection_specs(&format!("{p}.bridge"), c.branch_out_dim(), c.shared_dim, bridge));
        }
    }
    for head in &heads {
        if ns > 0 && !c.per_modality_bridge {
            out.extend(projection_specs(&format!("{head}.bridge"), c.branch_out_dim(), c.shared_dim, bridge));
        }
        for i in 0..ns {
            out.extend(block_specs(&format!("{head}.layers.{i}"), c.shared_dim, c.ffn_multiplier));
        }
        out.extend(linear_specs(&format!("{head}.classifier"), c.pooled_dim(), c.num_classes));
    }
    out
}

/// Parameter counts implied by a config, without allocating weights.
pub fn count_parameters_for(c: &ModelConfig) -> Result<ParamCounts> {
    c.validate()?;
    let mut counts = ParamCounts {
        theta_a: 0,
        theta_v: 0,
        theta_s: 0,
        total: 0,
    };
    for spec in param_layout(c) {
        let k = spec.numel();
        match ParamGroup::of(&spec.name) {
            ParamGroup::ThetaA => counts.theta_a += k,
            ParamGroup::ThetaV => counts.theta_v += k,
            ParamGroup::ThetaS => counts.theta_s += k,
        }
        counts.total += k;
    }
    Ok(counts)
}
