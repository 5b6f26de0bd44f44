//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and enough
//! cached state to run its local backward rule. [`Tape::backward`] replays
//! the nodes in reverse order exactly once; a second call without a fresh
//! tape is an error.

use crate::error::{Result, UavmError};
use crate::tensor::{gemm, softmax_rows_in_place, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    AddRowBias {
        x: Var,
        bias: Var,
        cols: usize,
    },
    Scale {
        x: Var,
        factor: f64,
    },
    Gelu {
        x: Var,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cols: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
        probs: Vec<f64>,
    },
    MeanPool {
        x: Var,
        group_len: usize,
        cols: usize,
    },
    ConcatSeq {
        a: Var,
        b: Var,
        len_a: usize,
        len_b: usize,
        cols: usize,
    },
    Sum {
        x: Var,
    },
    SoftCrossEntropy {
        logits: Var,
        targets: Vec<f64>,
        probs: Vec<f64>,
        rows: usize,
        cols: usize,
    },
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, mut value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad());
        value = value.with_requires_grad(rg);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf; its `requires_grad` flag is kept as given.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(true))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims2(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(UavmError::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), false, 0.0, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul { a, b, m, k, n }, &[a, b]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(UavmError::Dimension {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul { a, b }, &[a, b]))
    }

    /// `x[r, c] + bias[c]` for every row `r`.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, cols) = self.dims2(x);
        if self.value(bias).numel() != cols {
            return Err(UavmError::Dimension {
                op: "add_row_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.data(bias);
        let data = self
            .data(x)
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b).map(|(v, w)| v + w))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(value, Op::AddRowBias { x, bias, cols }, &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(value, Op::Scale { x, factor }, &[x]))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let data = self
            .data(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        Ok(self.push(value, Op::Gelu { x }, &[x]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(UavmError::config(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        if !self.value(x).is_finite() {
            return Err(UavmError::NumericInput("softmax".into()));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        let mut lane = vec![0.0; len];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                for (j, slot) in lane.iter_mut().enumerate() {
                    *slot = src[base + j * inner];
                }
                softmax_rows_in_place(&mut lane, len);
                for (j, &p) in lane.iter().enumerate() {
                    out[base + j * inner] = p;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Softmax {
                x,
                outer,
                len,
                inner,
            },
            &[x],
        ))
    }

    /// Normalizes each row over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(UavmError::config("layer_norm eps must be positive"));
        }
        let (rows, cols) = self.dims2(x);
        for p in [gain, bias] {
            if self.value(p).numel() != cols {
                return Err(UavmError::Dimension {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let src = self.data(x);
        let g = self.data(gain);
        let b = self.data(bias);
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &src[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                cols,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        ))
    }

    /// Scaled dot-product attention over `batch` independent sequences of
    /// `seq` tokens. `q`, `k`, `v` are `[batch*seq, d]` with heads laid out
    /// as contiguous column blocks of width `d / heads`.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    ) -> Result<Var> {
        self.same_shape("attention", q, k)?;
        self.same_shape("attention", q, v)?;
        let (rows, d) = self.dims2(q);
        if rows != batch * seq {
            return Err(UavmError::Dimension {
                op: "attention",
                lhs: self.shape(q).to_vec(),
                rhs: vec![batch, seq],
            });
        }
        if heads == 0 || d % heads != 0 {
            return Err(UavmError::config(format!(
                "embedding dim {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut probs = vec![0.0; batch * heads * seq * seq];
        let mut out = vec![0.0; rows * d];
        for b in 0..batch {
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                let col = h * dh;
                for i in 0..seq {
                    let qi = &qd[(b * seq + i) * d + col..(b * seq + i) * d + col + dh];
                    for j in 0..seq {
                        let kj = &kd[(b * seq + j) * d + col..(b * seq + j) * d + col + dh];
                        p[i * seq + j] = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                softmax_rows_in_place(p, seq);
                for i in 0..seq {
                    let oi = (b * seq + i) * d + col;
                    for j in 0..seq {
                        let w = p[i * seq + j];
                        let vj = (b * seq + j) * d + col;
                        for c in 0..dh {
                            out[oi + c] += w * vd[vj + c];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(self.shape(q).to_vec(), out)?;
        Ok(self.push(
            value,
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Attention probabilities cached by an [`Tape::attention`] node, laid
    /// out as `[batch, heads, seq, seq]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Mean over consecutive groups of `group_len` rows.
    pub fn mean_pool(&mut self, x: Var, group_len: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        if group_len == 0 || rows % group_len != 0 {
            return Err(UavmError::Dimension {
                op: "mean_pool",
                lhs: self.shape(x).to_vec(),
                rhs: vec![group_len],
            });
        }
        let groups = rows / group_len;
        let src = self.data(x);
        let mut out = vec![0.0; groups * cols];
        for g in 0..groups {
            let dst = &mut out[g * cols..(g + 1) * cols];
            for r in 0..group_len {
                let row = &src[(g * group_len + r) * cols..(g * group_len + r + 1) * cols];
                dst.iter_mut().zip(row).for_each(|(o, v)| *o += v);
            }
            dst.iter_mut().for_each(|o| *o /= group_len as f64);
        }
        let value = Tensor::new(vec![groups, cols], out)?;
        Ok(self.push(
            value,
            Op::MeanPool {
                x,
                group_len,
                cols,
            },
            &[x],
        ))
    }

    /// Per batch item, stacks `len_a` rows of `a` above `len_b` rows of `b`.
    pub fn concat_seq(&mut self, a: Var, b: Var, len_a: usize, len_b: usize) -> Result<Var> {
        let (ra, ca) = self.dims2(a);
        let (rb, cb) = self.dims2(b);
        if ca != cb || len_a == 0 || len_b == 0 || ra % len_a != 0 || ra / len_a != rb / len_b.max(1) || rb % len_b != 0 {
            return Err(UavmError::Dimension {
                op: "concat_seq",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let batch = ra / len_a;
        let cols = ca;
        let (da, db) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity((ra + rb) * cols);
        for i in 0..batch {
            out.extend_from_slice(&da[i * len_a * cols..(i + 1) * len_a * cols]);
            out.extend_from_slice(&db[i * len_b * cols..(i + 1) * len_b * cols]);
        }
        let value = Tensor::new(vec![ra + rb, cols], out)?;
        Ok(self.push(
            value,
            Op::ConcatSeq {
                a,
                b,
                len_a,
                len_b,
                cols,
            },
            &[a, b],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum { x }, &[x]))
    }

    /// Mean over rows of the cross-entropy between `softmax(logits)` and
    /// soft `targets` (`[rows, classes]`, row-major).
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        let (rows, cols) = self.dims2(logits);
        if targets.len() != rows * cols {
            return Err(UavmError::Dimension {
                op: "soft_cross_entropy",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if !self.value(logits).is_finite() {
            return Err(UavmError::NumericInput("soft_cross_entropy logits".into()));
        }
        let mut probs = self.data(logits).to_vec();
        softmax_rows_in_place(&mut probs, cols);
        let mut loss = 0.0;
        for (z_row, t_row) in self.data(logits).chunks(cols).zip(targets.chunks(cols)) {
            let max = z_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z_row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += z_row
                .iter()
                .zip(t_row)
                .map(|(z, t)| t * (lse - z))
                .sum::<f64>();
        }
        loss /= rows as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftCrossEntropy {
                logits,
                targets,
                probs,
                rows,
                cols,
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy with logits over every entry.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Result<Var> {
        if targets.len() != self.value(logits).numel() {
            return Err(UavmError::Dimension {
                op: "bce_with_logits",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let n = targets.len() as f64;
        let loss = self
            .data(logits)
            .iter()
            .zip(&targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits { logits, targets },
            &[logits],
        ))
    }

    /// Back-propagates from a scalar `loss`, storing gradients on every
    /// node that requires them. May be called once per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(UavmError::Autodiff(
                "backward already ran on this tape; rebuild the forward pass".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(UavmError::Autodiff(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].value.requires_grad() {
                continue;
            }
            self.backward_node(idx, &g, &mut grads);
            self.nodes[idx].value.set_grad(g);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad()
    }

    fn backward_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        macro_rules! slot {
            ($v:expr) => {{
                let len = self.nodes[$v.0].value.numel();
                grads[$v.0].get_or_insert_with(|| vec![0.0; len])
            }};
        }
        match &self.nodes[idx].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if self.wants(a) {
                    let da = slot!(a);
                    gemm(m, n, k, g, false, self.data(b), true, 1.0, da);
                }
                if self.wants(b) {
                    let db = slot!(b);
                    gemm(k, m, n, self.data(a), true, g, false, 1.0, db);
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if self.wants(v) {
                        slot!(v).iter_mut().zip(g).for_each(|(d, x)| *d += x);
                    }
                }
            }
            &Op::Mul { a, b } => {
                if self.wants(a) {
                    let other = self.data(b);
                    slot!(a)
                        .iter_mut()
                        .zip(g.iter().zip(other))
                        .for_each(|(d, (x, y))| *d += x * y);
                }
                if self.wants(b) {
                    let other = self.data(a);
                    slot!(b)
                        .iter_mut()
                        .zip(g.iter().zip(other))
                        .for_each(|(d, (x, y))| *d += x * y);
                }
            }
            &Op::AddRowBias { x, bias, cols } => {
                if self.wants(x) {
                    slot!(x).iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if self.wants(bias) {
                    let db = slot!(bias);
                    for row in g.chunks(cols) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
            }
            &Op::Scale { x, factor } => {
                if self.wants(x) {
                    slot!(x).iter_mut().zip(g).for_each(|(d, v)| *d += v * factor);
                }
            }
            &Op::Gelu { x } => {
                if self.wants(x) {
                    let src = self.data(x);
                    slot!(x).iter_mut().zip(g.iter().zip(src)).for_each(|(d, (gv, &v))| {
                        let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                        *d += gv * (0.5 * (1.0 + t) + 0.5 * v * dt);
                    });
                }
            }
            &Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                if self.wants(x) {
                    let y = self.nodes[idx].value.data();
                    let dx = slot!(x);
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * len * inner + i;
                            let dot: f64 = (0..len)
                                .map(|j| g[base + j * inner] * y[base + j * inner])
                                .sum();
                            for j in 0..len {
                                let at = base + j * inner;
                                dx[at] += y[at] * (g[at] - dot);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cols,
                xhat,
                rstd,
            } => {
                let cols = *cols;
                if self.wants(*gain) {
                    let dg = slot!(*gain);
                    for (grow, hrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for c in 0..cols {
                            dg[c] += grow[c] * hrow[c];
                        }
                    }
                }
                if self.wants(*bias) {
                    let db = slot!(*bias);
                    for grow in g.chunks(cols) {
                        db.iter_mut().zip(grow).for_each(|(d, v)| *d += v);
                    }
                }
                if self.wants(*x) {
                    let gain_d = self.data(*gain);
                    let dx = slot!(*x);
                    let mut dh = vec![0.0; cols];
                    for (r, (grow, hrow)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                        for c in 0..cols {
                            dh[c] = grow[c] * gain_d[c];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / cols as f64;
                        let mean_dh_h =
                            dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for c in 0..cols {
                            dx[r * cols + c] += rstd[r] * (dh[c] - mean_dh - hrow[c] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                seq,
                heads,
                probs,
            } => {
                let (batch, seq, heads) = (*batch, *seq, *heads);
                let (_, d) = self.dims2(*q);
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (self.data(*q), self.data(*k), self.data(*v));
                let mut dq = vec![0.0; qd.len()];
                let mut dk = vec![0.0; kd.len()];
                let mut dv = vec![0.0; vd.len()];
                let mut dp = vec![0.0; seq * seq];
                for b in 0..batch {
                    for h in 0..heads {
                        let p = &probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
                        let col = h * dh;
                        let row = |t: usize| (b * seq + t) * d + col;
                        for i in 0..seq {
                            for j in 0..seq {
                                let mut s = 0.0;
                                for c in 0..dh {
                                    s += g[row(i) + c] * vd[row(j) + c];
                                }
                                dp[i * seq + j] = s;
                                let w = p[i * seq + j];
                                for c in 0..dh {
                                    dv[row(j) + c] += w * g[row(i) + c];
                                }
                            }
                        }
                        for i in 0..seq {
                            let dot: f64 = (0..seq).map(|j| p[i * seq + j] * dp[i * seq + j]).sum();
                            for j in 0..seq {
                                let ds = p[i * seq + j] * (dp[i * seq + j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in 0..dh {
                                    dq[row(i) + c] += ds * kd[row(j) + c];
                                    dk[row(j) + c] += ds * qd[row(i) + c];
                                }
                            }
                        }
                    }
                }
                for (var, local) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.wants(var) {
                        slot!(var).iter_mut().zip(&local).for_each(|(d, x)| *d += x);
                    }
                }
            }
            &Op::MeanPool { x, group_len, cols } => {
                if self.wants(x) {
                    let dx = slot!(x);
                    let inv = 1.0 / group_len as f64;
                    for (r, drow) in dx.chunks_mut(cols).enumerate() {
                        let grow = &g[(r / group_len) * cols..(r / group_len + 1) * cols];
                        drow.iter_mut().zip(grow).for_each(|(d, v)| *d += v * inv);
                    }
                }
            }
            &Op::ConcatSeq {
                a,
                b,
                len_a,
                len_b,
                cols,
            } => {
                let chunk = (len_a + len_b) * cols;
                let (na, nb) = (len_a * cols, len_b * cols);
                if self.wants(a) {
                    let da = slot!(a);
                    for (i, part) in g.chunks(chunk).enumerate() {
                        da[i * na..(i + 1) * na]
                            .iter_mut()
                            .zip(&part[..na])
                            .for_each(|(d, v)| *d += v);
                    }
                }
                if self.wants(b) {
                    let db = slot!(b);
                    for (i, part) in g.chunks(chunk).enumerate() {
                        db[i * nb..(i + 1) * nb]
                            .iter_mut()
                            .zip(&part[na..])
                            .for_each(|(d, v)| *d += v);
                    }
                }
            }
            &Op::Sum { x } => {
                if self.wants(x) {
                    slot!(x).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::SoftCrossEntropy {
                logits,
                targets,
                probs,
                rows,
                cols,
            } => {
                if self.wants(*logits) {
                    let cols = *cols;
                    let scale = g[0] / *rows as f64;
                    let dz = slot!(*logits);
                    for ((drow, prow), trow) in dz
                        .chunks_mut(cols)
                        .zip(probs.chunks(cols))
                        .zip(targets.chunks(cols))
                    {
                        let mass: f64 = trow.iter().sum();
                        for c in 0..cols {
                            drow[c] += scale * (prow[c] * mass - trow[c]);
                        }
                    }
                }
            }
            Op::BceWithLogits { logits, targets } => {
                if self.wants(*logits) {
                    let z = self.data(*logits);
                    let scale = g[0] / targets.len() as f64;
                    slot!(*logits)
                        .iter_mut()
                        .zip(z.iter().zip(targets))
                        .for_each(|(d, (&zv, &t))| *d += scale * (1.0 / (1.0 + (-zv).exp()) - t));
                }
            }
        }
    }
}
