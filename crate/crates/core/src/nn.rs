//! Transformer building blocks recorded on a [`Tape`].
//!
//! Blocks are pre-norm residual: `x + MHA(LN(x))` followed by
//! `x + FFN(LN(x))` with a GELU feed-forward of width `ffn_mult * d`.
//! Weight matrices are stored `[in, out]` so a layer computes `x · W + b`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, UavmError};
use crate::params::ParamBinder;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Per-head attention probabilities for one sequence, `[heads, seq, seq]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMaps {
    pub heads: usize,
    pub seq_len: usize,
    pub data: Vec<f64>,
}

impl AttentionMaps {
    /// Extracts sequence `item` from an attention node's cached probabilities.
    pub fn from_tape(tape: &Tape, node: Var, item: usize, heads: usize, seq_len: usize) -> Option<Self> {
        let probs = tape.attention_probs(node)?;
        let per = heads * seq_len * seq_len;
        let data = probs.get(item * per..(item + 1) * per)?.to_vec();
        Some(Self {
            heads,
            seq_len,
            data,
        })
    }

    pub fn head(&self, h: usize) -> &[f64] {
        let n = self.seq_len * self.seq_len;
        &self.data[h * n..(h + 1) * n]
    }

    /// Largest deviation of any row sum from one.
    pub fn max_row_sum_error(&self) -> f64 {
        self.data
            .chunks(self.seq_len)
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

pub fn linear(tape: &mut Tape, binder: &mut ParamBinder, x: Var, prefix: &str) -> Result<Var> {
    let w = binder.var(tape, &join(prefix, "weight"))?;
    let b = binder.var(tape, &join(prefix, "bias"))?;
    let y = tape.matmul(x, w)?;
    tape.add_row_bias(y, b)
}

/// Multi-head self-attention over `batch` sequences of `seq` tokens
/// stacked as `[batch*seq, d]`. Returns the projected output and the
/// attention node whose cached probabilities feed traces.
pub fn multi_head_attention(
    tape: &mut Tape,
    binder: &mut ParamBinder,
    x: Var,
    prefix: &str,
    batch: usize,
    seq: usize,
    heads: usize,
) -> Result<(Var, Var)> {
    let (_, d) = tape.value(x).dims2();
    if heads == 0 || d % heads != 0 {
        return Err(UavmError::config(format!(
            "embedding dim {d} is not divisible by {heads} heads"
        )));
    }
    let q = linear(tape, binder, x, &join(prefix, "q"))?;
    let k = linear(tape, binder, x, &join(prefix, "k"))?;
    let v = linear(tape, binder, x, &join(prefix, "v"))?;
    let attn = tape.attention(q, k, v, batch, seq, heads)?;
    let out = linear(tape, binder, attn, &join(prefix, "out"))?;
    Ok((out, attn))
}

#[allow(clippy::too_many_arguments)]
pub fn transformer_block(
    tape: &mut Tape,
    binder: &mut ParamBinder,
    x: Var,
    prefix: &str,
    batch: usize,
    seq: usize,
    heads: usize,
    eps: f64,
) -> Result<(Var, Var)> {
    let g1 = binder.var(tape, &join(prefix, "ln1.gain"))?;
    let b1 = binder.var(tape, &join(prefix, "ln1.bias"))?;
    let h = tape.layer_norm(x, g1, b1, eps)?;
    let (a, attn) = multi_head_attention(tape, binder, h, &join(prefix, "attn"), batch, seq, heads)?;
    let x = tape.add(x, a)?;
    let g2 = binder.var(tape, &join(prefix, "ln2.gain"))?;
    let b2 = binder.var(tape, &join(prefix, "ln2.bias"))?;
    let h = tape.layer_norm(x, g2, b2, eps)?;
    let h = linear(tape, binder, h, &join(prefix, "ffn.fc1"))?;
    let h = tape.gelu(h)?;
    let h = linear(tape, binder, h, &join(prefix, "ffn.fc2"))?;
    Ok((tape.add(x, h)?, attn))
}

/// Fixed sinusoidal position encodings, `[seq, dim]`.
pub fn sinusoidal_positions(seq: usize, dim: usize) -> Tensor {
    let mut data = vec![0.0; seq * dim];
    for pos in 0..seq {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / dim as f64);
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![seq, dim], data).expect("position table shape is seq x dim")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitKind {
    /// Normal with the model-wide `init_std`.
    Normal,
    /// Normal with its own std, for projections that set the scale of the
    /// residual stream.
    NormalStd(f64),
    Zeros,
    Ones,
}

/// Name, shape and initializer of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: InitKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn materialize<R: Rng>(&self, rng: &mut R, std: f64) -> Tensor {
        let mut t = Tensor::zeros(&self.shape);
        match self.init {
            InitKind::Zeros => {}
            InitKind::Ones => t.data_mut().fill(1.0),
            InitKind::Normal | InitKind::NormalStd(_) => {
                let std = if let InitKind::NormalStd(s) = self.init { s } else { std };
                let dist = Normal::new(0.0, std).expect("init std is validated positive");
                for v in t.data_mut() {
                    *v = dist.sample(rng);
                }
            }
        }
        t
    }
}

pub fn linear_specs(prefix: &str, fan_in: usize, fan_out: usize) -> Vec<ParamSpec> {
    projection_specs(prefix, fan_in, fan_out, InitKind::Normal)
}

/// A linear layer whose weight uses `init`.
pub fn projection_specs(prefix: &str, fan_in: usize, fan_out: usize, init: InitKind) -> Vec<ParamSpec> {
    vec![
        ParamSpec {
            name: join(prefix, "weight"),
            shape: vec![fan_in, fan_out],
            init,
        },
        ParamSpec {
            name: join(prefix, "bias"),
            shape: vec![fan_out],
            init: InitKind::Zeros,
        },
    ]
}

pub fn block_specs(prefix: &str, dim: usize, ffn_mult: usize) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    for ln in ["ln1", "ln2"] {
        out.push(ParamSpec {
            name: join(prefix, &format!("{ln}.gain")),
            shape: vec![dim],
            init: InitKind::Ones,
        });
        out.push(ParamSpec {
            name: join(prefix, &format!("{ln}.bias")),
            shape: vec![dim],
            init: InitKind::Zeros,
        });
    }
    for proj in ["q", "k", "v", "out"] {
        out.extend(linear_specs(&join(prefix, &format!("attn.{proj}")), dim, dim));
    }
    out.extend(linear_specs(&join(prefix, "ffn.fc1"), dim, ffn_mult * dim));
    out.extend(linear_specs(&join(prefix, "ffn.fc2"), ffn_mult * dim, dim));
    out
}

/// Parameter count of one transformer block of width `dim`.
pub fn block_param_count(dim: usize, ffn_mult: usize) -> usize {
    let attn = 4 * (dim * dim + dim);
    let ffn = dim * ffn_mult * dim + ffn_mult * dim + ffn_mult * dim * dim + dim;
    attn + ffn + 4 * dim
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use crate::params::ParamStore;

    #[test]
    fn block_count_matches_specs() {
        let specs = block_specs("b", 8, 4);
        assert_eq!(specs.iter().map(ParamSpec::numel).sum::<usize>(), block_param_count(8, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gain = specs[0].materialize(&mut rng, 0.02);
        assert!(gain.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn positions_are_bounded_and_distinct() {
        let pe = sinusoidal_positions(30, 16);
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
        assert_ne!(pe.row(0), pe.row(1));
        assert_eq!(pe.get2(0, 1), 1.0);
    }

    #[test]
    fn uniform_attention_averages_values() {
        // Zeroed query/key projections force uniform attention; identity
        // value/output projections then return the mean token.
        let d = 4;
        let seq = 3;
        let mut store = ParamStore::new();
        let eye: Vec<f64> = (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect();
        for proj in ["q", "k"] {
            store.insert(format!("a.{proj}.weight"), Tensor::zeros(&[d, d]));
            store.insert(format!("a.{proj}.bias"), Tensor::zeros(&[d]));
        }
        for proj in ["v", "out"] {
            store.insert(format!("a.{proj}.weight"), Tensor::new(vec![d, d], eye.clone()).unwrap());
            store.insert(format!("a.{proj}.bias"), Tensor::zeros(&[d]));
        }
        let xs: Vec<f64> = (0..seq * d).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut tape = Tape::new();
        let mut binder = ParamBinder::new(&store, false);
        let x = tape.constant(Tensor::new(vec![seq, d], xs.clone()).unwrap());
        let (out, attn) = multi_head_attention(&mut tape, &mut binder, x, "a", 1, seq, 2).unwrap();
        let maps = AttentionMaps::from_tape(&tape, attn, 0, 2, seq).unwrap();
        assert!(maps.data.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
        for c in 0..d {
            let mean = (0..seq).map(|r| xs[r * d + c]).sum::<f64>() / seq as f64;
            for r in 0..seq {
                assert!((tape.value(out).get2(r, c) - mean).abs() < 1e-12);
            }
        }
    }
}
