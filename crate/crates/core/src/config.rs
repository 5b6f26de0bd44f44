use serde::{Deserialize, Serialize};

use crate::error::{Result, UavmError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Modal-specific stacks feed one weight-shared stack and classifier.
    Unified,
    /// Two fully separate networks, classifier included.
    Independent,
    /// Baseline: both modal-specific outputs are concatenated into one
    /// `2T`-token sequence for the shared stack.
    CrossModalAttention,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SingleLabelCe,
    MultiLabelBce,
}

/// What the two single-modality passes average at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Logits,
    Probabilities,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_modal_layers: usize,
    pub num_shared_layers: usize,
    /// Required value of `num_modal_layers + num_shared_layers`.
    pub total_layers: usize,
    pub modal_dim: usize,
    pub shared_dim: usize,
    pub num_heads: usize,
    pub seq_len: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub mode: ModelMode,
    pub loss_kind: LossKind,
    pub fusion: FusionKind,
    pub position_encoding: bool,
    /// Give each modality its own bridge into the shared width instead of
    /// one shared bridge.
    pub per_modality_bridge: bool,
    pub ffn_multiplier: usize,
    pub layer_norm_eps: f64,
    pub init_std: f64,
    /// Fixed block layout, echoed into every saved config.
    pub block_layout: String,
}

pub const BLOCK_LAYOUT: &str = "pre-norm residual; 4 projections; GELU(tanh) FFN";

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_modal_layers: 1,
            num_shared_layers: 2,
            total_layers: 3,
            modal_dim: 64,
            shared_dim: 64,
            num_heads: 4,
            seq_len: 30,
            feature_dim: 64,
            num_classes: 10,
            mode: ModelMode::Unified,
            loss_kind: LossKind::SingleLabelCe,
            fusion: FusionKind::Logits,
            position_encoding: true,
            per_modality_bridge: false,
            ffn_multiplier: 4,
            layer_norm_eps: 1e-5,
            init_std: 0.02,
            block_layout: BLOCK_LAYOUT.to_string(),
        }
    }
}

impl ModelConfig {
    /// Sets `N` and `N_s` and keeps `total_layers` consistent.
    pub fn with_layers(mut self, modal: usize, shared: usize) -> Self {
        self.num_modal_layers = modal;
        self.num_shared_layers = shared;
        self.total_layers = modal + shared;
        self
    }

    pub fn num_transformer_layers(&self) -> usize {
        self.num_modal_layers + self.num_shared_layers
    }

    /// Width of the first projection's output for each branch.
    pub fn front_dim(&self) -> usize {
        if self.num_modal_layers > 0 {
            self.modal_dim
        } else if self.num_shared_layers > 0 {
            self.shared_dim
        } else {
            self.feature_dim
        }
    }

    /// Width of the representation entering the shared stack (or
    /// classifier when there is no shared stack), before bridging.
    pub fn branch_out_dim(&self) -> usize {
        if self.num_modal_layers > 0 {
            self.modal_dim
        } else {
            self.feature_dim
        }
    }

    /// Width of the pooled vector fed to the classifier.
    pub fn pooled_dim(&self) -> usize {
        if self.num_shared_layers > 0 {
            self.shared_dim
        } else {
            self.branch_out_dim()
        }
    }

    /// Width of the token representation at layer index `layer`
    /// (0 = post-projection input).
    pub fn layer_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.front_dim()
        } else if layer <= self.num_modal_layers {
            self.modal_dim
        } else {
            self.shared_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(UavmError::Config(msg));
        let n = self.num_modal_layers;
        let ns = self.num_shared_layers;
        if n + ns != self.total_layers {
            return fail(format!(
                "num_modal_layers ({n}) + num_shared_layers ({ns}) must equal total_layers ({})",
                self.total_layers
            ));
        }
        if self.num_heads == 0 {
            return fail("num_heads must be positive".into());
        }
        for (name, v) in [
            ("modal_dim", self.modal_dim),
            ("shared_dim", self.shared_dim),
            ("seq_len", self.seq_len),
            ("feature_dim", self.feature_dim),
            ("num_classes", self.num_classes),
            ("ffn_multiplier", self.ffn_multiplier),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if n > 0 && self.modal_dim % self.num_heads != 0 {
            return fail(format!(
                "modal_dim {} is not divisible by num_heads {}",
                self.modal_dim, self.num_heads
            ));
        }
        if ns > 0 && self.shared_dim % self.num_heads != 0 {
            return fail(format!(
                "shared_dim {} is not divisible by num_heads {}",
                self.shared_dim, self.num_heads
            ));
        }
        match self.mode {
            ModelMode::Independent if ns != 0 => {
                return fail(format!(
                    "independent mode has no shared layers, got num_shared_layers = {ns}"
                ));
            }
            ModelMode::CrossModalAttention if ns == 0 => {
                return fail("cross_modal_attention mode needs num_shared_layers >= 1".into());
            }
            _ => {}
        }
        if !(self.layer_norm_eps > 0.0) {
            return fail("layer_norm_eps must be positive".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return fail("init_std must be positive and finite".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Probability that an iteration trains on audio.
    pub lambda_mt: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative factor applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    pub mixup_alpha: f64,
    pub label_smoothing: f64,
    pub time_shift: bool,
    pub balanced_sampling: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Evaluate on the eval split after every epoch (otherwise only after
    /// the last one).
    pub eval_every_epoch: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_mt: 0.5,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 5,
            epochs: 20,
            mixup_alpha: 0.5,
            label_smoothing: 0.1,
            time_shift: true,
            balanced_sampling: false,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            eval_every_epoch: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(UavmError::config(msg));
        if !(0.0..=1.0).contains(&self.lambda_mt) {
            return fail("lambda_mt must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay.is_finite()) {
            return fail("lr_decay must be positive so the decayed rate stays positive");
        }
        if self.lr_decay_every == 0 {
            return fail("lr_decay_every must be positive");
        }
        if !(self.mixup_alpha >= 0.0 && self.mixup_alpha.is_finite()) {
            return fail("mixup_alpha must be >= 0");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("label_smoothing must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return fail("adam_eps must be positive");
        }
        Ok(())
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let decays = (epoch / self.lr_decay_every) as i32;
        self.learning_rate * self.lr_decay.powi(decays)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_budget_enforced() {
        let mut c = ModelConfig::default();
        c.num_shared_layers = 3;
        assert!(c.validate().is_err());
        assert!(c.clone().with_layers(0, 6).validate().is_ok());
        assert!(c.clone().with_layers(6, 0).validate().is_ok());
    }

    #[test]
    fn independent_has_no_shared_layers() {
        let c = ModelConfig {
            mode: ModelMode::Independent,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        assert!(c.with_layers(3, 0).validate().is_ok());
    }

    #[test]
    fn heads_must_divide_widths() {
        let c = ModelConfig {
            shared_dim: 30,
            ..ModelConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("shared_dim"));
    }

    #[test]
    fn lr_schedule_halves_every_period() {
        let t = TrainConfig::default();
        assert_eq!(t.lr_at_epoch(0), 1e-3);
        assert_eq!(t.lr_at_epoch(4), 1e-3);
        assert_eq!(t.lr_at_epoch(5), 5e-4);
        assert_eq!(t.lr_at_epoch(19), 1.25e-4);
        assert!((0..1000).all(|e| t.lr_at_epoch(e) > 0.0));
    }
}
