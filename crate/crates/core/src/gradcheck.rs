//! Central finite-difference checks of the tape's reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub op: &'static str,
    pub shapes: Vec<Vec<usize>>,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` over all inputs.
    pub rel_error: f64,
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive dims")
}

/// Compares the gradient of `sum(f(inputs) * r)`, for a fixed random `r`,
/// against central differences with step `h`.
pub fn check<F>(op: &'static str, inputs: &[Tensor], f: F, h: f64, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let project = |tape: &mut Tape, out: Var| -> Result<Var> {
        let shape = tape.value(out).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let r = tape.constant(random_tensor(&mut rng, &shape));
        let p = tape.mul(out, r)?;
        tape.sum(p)
    };
    let eval = |vals: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let loss = project(&mut tape, out)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let loss = project(&mut tape, out)?;
    tape.backward(loss)?;

    let mut diff = 0.0;
    let mut norm_a = 0.0;
    let mut norm_n = 0.0;
    let mut work = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for j in 0..inputs[i].numel() {
            let x = inputs[i].data()[j];
            work[i].data_mut()[j] = x + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = x - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            diff += (analytic[j] - numeric).powi(2);
            norm_a += analytic[j].powi(2);
            norm_n += numeric.powi(2);
        }
    }
    let denom = norm_a.sqrt().max(norm_n.sqrt()).max(1e-300);
    Ok(GradCheck {
        op,
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
        rel_error: diff.sqrt() / denom,
    })
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn probabilities(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>() + 0.05).collect();
    for row in t.chunks_mut(cols) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    t
}

/// Checks every differentiable op on `cases` random shapes each.
pub fn standard_suite(cases: usize, h: f64, seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in 0..cases {
        let s = seed.wrapping_add(case as u64);
        let (m, k, n) = (dim(&mut rng, 1, 6), dim(&mut rng, 1, 6), dim(&mut rng, 1, 6));
        let a = random_tensor(&mut rng, &[m, k]);
        let b = random_tensor(&mut rng, &[k, n]);
        out.push(check("matmul", &[a, b], |t, v| t.matmul(v[0], v[1]), h, s)?);

        let x = random_tensor(&mut rng, &[m, n]);
        let y = random_tensor(&mut rng, &[m, n]);
        out.push(check("add", &[x.clone(), y.clone()], |t, v| t.add(v[0], v[1]), h, s)?);
        out.push(check("mul", &[x.clone(), y], |t, v| t.mul(v[0], v[1]), h, s)?);
        let bias = random_tensor(&mut rng, &[n]);
        out.push(check("add_row_bias", &[x.clone(), bias], |t, v| t.add_row_bias(v[0], v[1]), h, s)?);
        let factor = rng.random_range(-2.0..2.0);
        out.push(check("scale", &[x.clone()], move |t, v| t.scale(v[0], factor), h, s)?);
        out.push(check("gelu", &[x.clone()], |t, v| t.gelu(v[0]), h, s)?);
        out.push(check("sum", &[x.clone()], |t, v| t.sum(v[0]), h, s)?);

        let shape3 = [dim(&mut rng, 1, 3), dim(&mut rng, 1, 4), dim(&mut rng, 1, 4)];
        let axis = rng.random_range(0..3);
        let x3 = random_tensor(&mut rng, &shape3);
        out.push(check("softmax", &[x3], move |t, v| t.softmax(v[0], axis), h, s)?);

        let cols = dim(&mut rng, 2, 7);
        let xl = random_tensor(&mut rng, &[m, cols]);
        let g = random_tensor(&mut rng, &[cols]);
        let bl = random_tensor(&mut rng, &[cols]);
        out.push(check("layer_norm", &[xl, g, bl], |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5), h, s)?);

        let (batch, seq, heads, dh) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 5), dim(&mut rng, 1, 3), dim(&mut rng, 1, 3));
        let qkv: Vec<Tensor> = (0..3).map(|_| random_tensor(&mut rng, &[batch * seq, heads * dh])).collect();
        out.push(check(
            "attention",
            &qkv,
            move |t, v| t.attention(v[0], v[1], v[2], batch, seq, heads),
            h,
            s,
        )?);

        let xp = random_tensor(&mut rng, &[batch * seq, n]);
        out.push(check("mean_pool", &[xp], move |t, v| t.mean_pool(v[0], seq), h, s)?);

        let (la, lb) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 4));
        let ca = random_tensor(&mut rng, &[batch * la, n]);
        let cb = random_tensor(&mut rng, &[batch * lb, n]);
        out.push(check("concat_seq", &[ca, cb], move |t, v| t.concat_seq(v[0], v[1], la, lb), h, s)?);

        let targets = probabilities(&mut rng, m, n);
        out.push(check(
            "soft_cross_entropy",
            &[x.clone()],
            move |t, v| t.soft_cross_entropy(v[0], targets.clone()),
            h,
            s,
        )?);
        let bits: Vec<f64> = (0..m * n).map(|_| rng.random::<f64>()).collect();
        out.push(check("bce_with_logits", &[x], move |t, v| t.bce_with_logits(v[0], bits.clone()), h, s)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        // x * x recorded as a product of a value with a constant copy of
        // itself has half the true derivative.
        let x = Tensor::vector(vec![0.7, -1.3]);
        let r = check(
            "half",
            &[x],
            |t, v| {
                let c = t.constant(t.value(v[0]).clone());
                t.mul(v[0], c)
            },
            1e-5,
            0,
        )
        .unwrap();
        assert!(r.rel_error > 0.3, "{}", r.rel_error);
    }
}
