//! Batched forward pass and hand-written reverse-mode gradients.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use super::{write_timestep_embedding, ContextBatch, ModelParams};
use crate::error::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// SiLU, `x * sigmoid(x)`. Smooth, so finite-difference checks are valid everywhere.
#[inline]
pub(crate) fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Transposed products may come back in column-major order; tensors are visited as flat slices.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn affine(x: ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

pub(crate) fn timestep_matrix(taus: &[usize], embed_dim: usize) -> Array2<f64> {
    let mut out = Array2::zeros((taus.len(), embed_dim));
    for (mut row, &tau) in out.axis_iter_mut(Axis(0)).zip(taus) {
        write_timestep_embedding(tau, row.as_slice_mut().expect("standard layout"));
    }
    out
}

struct EncoderTrace {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

fn encode_traced(params: &ModelParams, ctx: &ContextBatch) -> EncoderTrace {
    let mut a = ctx.encoder_input();
    let mut inputs = Vec::with_capacity(params.encoder.len());
    let mut pre = Vec::with_capacity(params.encoder.len());
    let last = params.encoder.len() - 1;
    for (l, layer) in params.encoder.iter().enumerate() {
        let z = affine(a.view(), &layer.weight, &layer.bias);
        inputs.push(a);
        if l == last {
            return EncoderTrace {
                inputs,
                pre,
                output: z,
            };
        }
        a = z.mapv(silu);
        pre.push(z);
    }
    unreachable!("encoder has at least one layer")
}

/// `c_emb` for every row of `ctx`.
pub(crate) fn encode(params: &ModelParams, ctx: &ContextBatch) -> Result<Array2<f64>> {
    ctx.check_dims(&params.dims)?;
    Ok(encode_traced(params, ctx).output)
}

struct PredictorTrace {
    cond: Array2<f64>,
    /// Residual stream before each block, plus the final one.
    hidden: Vec<Array2<f64>>,
    /// Pre-activation inside each block.
    inner: Vec<Array2<f64>>,
    output: Array2<f64>,
}

fn predict_traced(params: &ModelParams, x: ArrayView2<f64>, cond: Array2<f64>) -> PredictorTrace {
    let mut h = affine(x, &params.input.weight, &params.input.bias);
    h += &cond.dot(&params.input.cond_weight);
    let mut hidden = Vec::with_capacity(params.blocks.len() + 1);
    let mut inner = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let mut p = affine(h.mapv(silu).view(), &block.inner.weight, &block.inner.bias);
        p += &cond.dot(&block.inner.cond_weight);
        let next = &h + &affine(p.mapv(silu).view(), &block.outer.weight, &block.outer.bias);
        hidden.push(h);
        inner.push(p);
        h = next;
    }
    let output = affine(h.mapv(silu).view(), &params.output.weight, &params.output.bias);
    hidden.push(h);
    PredictorTrace {
        cond,
        hidden,
        inner,
        output,
    }
}

fn conditioning(params: &ModelParams, c_emb: &Array2<f64>, taus: &[usize]) -> Array2<f64> {
    let temb = timestep_matrix(taus, params.dims.time_embed_dim);
    ndarray::concatenate(Axis(1), &[c_emb.view(), temb.view()]).expect("row counts agree")
}

fn check_batch(params: &ModelParams, x: ArrayView2<f64>, taus: &[usize], ctx: &ContextBatch) -> Result<()> {
    ctx.check_dims(&params.dims)?;
    if x.ncols() != params.dims.state_dim {
        return Err(Error::shape("noisy state", params.dims.state_dim, x.ncols()));
    }
    if x.nrows() != ctx.len() {
        return Err(Error::shape("context rows", x.nrows(), ctx.len()));
    }
    if taus.len() != x.nrows() {
        return Err(Error::shape("diffusion steps", x.nrows(), taus.len()));
    }
    Ok(())
}

/// Reference (uncached) batched noise prediction.
pub(crate) fn predict(
    params: &ModelParams,
    x: ArrayView2<f64>,
    taus: &[usize],
    ctx: &ContextBatch,
) -> Result<Array2<f64>> {
    check_batch(params, x, taus, ctx)?;
    let c_emb = encode_traced(params, ctx).output;
    let cond = conditioning(params, &c_emb, taus);
    Ok(predict_traced(params, x, cond).output)
}

/// One denoising-regression minibatch: noisy states, their steps, the contexts and the true noise.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub x_noisy: Array2<f64>,
    pub taus: Vec<usize>,
    pub context: ContextBatch,
    pub eps: Array2<f64>,
}

impl TrainingBatch {
    fn check(&self, params: &ModelParams) -> Result<()> {
        check_batch(params, self.x_noisy.view(), &self.taus, &self.context)?;
        if self.eps.dim() != self.x_noisy.dim() {
            return Err(Error::shape("noise target", self.x_noisy.len(), self.eps.len()));
        }
        if self.taus.is_empty() {
            return Err(Error::Parameter("empty batch".into()));
        }
        Ok(())
    }
}

fn mean_squared_norm(eps: &Array2<f64>, pred: &Array2<f64>) -> f64 {
    let n = eps.nrows() as f64;
    eps.iter()
        .zip(pred.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

/// Batch mean of `|eps - eps_theta|^2`.
pub fn batch_loss(params: &ModelParams, batch: &TrainingBatch) -> Result<f64> {
    batch.check(params)?;
    let pred = predict(params, batch.x_noisy.view(), &batch.taus, &batch.context)?;
    Ok(mean_squared_norm(&batch.eps, &pred))
}

/// Batch loss and its gradient with respect to every parameter.
pub fn loss_and_gradients(params: &ModelParams, batch: &TrainingBatch) -> Result<(f64, ModelParams)> {
    batch.check(params)?;
    let enc = encode_traced(params, &batch.context);
    let cond = conditioning(params, &enc.output, &batch.taus);
    let trace = predict_traced(params, batch.x_noisy.view(), cond);
    let loss = mean_squared_norm(&batch.eps, &trace.output);

    let mut grads = params.zeros_like();
    let n = batch.eps.nrows() as f64;
    let d_out = (&trace.output - &batch.eps) * (2.0 / n);

    let last_hidden = trace.hidden.last().expect("final residual stream");
    grads.output.weight = standard(last_hidden.mapv(silu).t().dot(&d_out));
    grads.output.bias = d_out.sum_axis(Axis(0));
    let mut dh = d_out.dot(&params.output.weight.t()) * last_hidden.mapv(silu_grad);

    let mut d_cond = Array2::<f64>::zeros(trace.cond.dim());
    for (k, block) in params.blocks.iter().enumerate().rev() {
        let h = &trace.hidden[k];
        let p = &trace.inner[k];
        let g = &mut grads.blocks[k];
        g.outer.weight = standard(p.mapv(silu).t().dot(&dh));
        g.outer.bias = dh.sum_axis(Axis(0));
        let dp = dh.dot(&block.outer.weight.t()) * p.mapv(silu_grad);
        g.inner.weight = standard(h.mapv(silu).t().dot(&dp));
        g.inner.cond_weight = standard(trace.cond.t().dot(&dp));
        g.inner.bias = dp.sum_axis(Axis(0));
        d_cond += &dp.dot(&block.inner.cond_weight.t());
        dh = dh + dp.dot(&block.inner.weight.t()) * h.mapv(silu_grad);
    }

    grads.input.weight = standard(batch.x_noisy.t().dot(&dh));
    grads.input.cond_weight = standard(trace.cond.t().dot(&dh));
    grads.input.bias = dh.sum_axis(Axis(0));
    d_cond += &dh.dot(&params.input.cond_weight.t());

    let context_dim = params.dims.context_dim;
    let mut da = d_cond.slice(s![.., ..context_dim]).to_owned();
    for l in (0..params.encoder.len()).rev() {
        let layer = &params.encoder[l];
        grads.encoder[l].weight = standard(enc.inputs[l].t().dot(&da));
        grads.encoder[l].bias = da.sum_axis(Axis(0));
        if l > 0 {
            da = da.dot(&layer.weight.t()) * enc.pre[l - 1].mapv(silu_grad);
        }
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelDims};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn silu_derivative_matches_difference_quotient() {
        for &x in &[-4.0, -1.0, -0.1, 0.0, 0.3, 2.0, 6.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn identical_rows_give_single_row_gradient() {
        let dims = ModelDims {
            state_dim: 2,
            control_dim: 1,
            exogenous_dim: 1,
            time_embed_dim: 4,
            encoder_hidden: vec![5],
            context_dim: 3,
            predictor_width: 6,
            predictor_blocks: 2,
        };
        let params = init_params(11, &dims).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut row = |cols: usize| -> Vec<f64> { (0..cols).map(|_| rng.sample(StandardNormal)).collect() };
        let x = row(2);
        let e = row(2);
        let xp = row(2);
        let cov = row(2);
        let make = |n: usize| TrainingBatch {
            x_noisy: Array2::from_shape_fn((n, 2), |(_, j)| x[j]),
            taus: vec![17; n],
            context: ContextBatch {
                x_prev: Array2::from_shape_fn((n, 2), |(_, j)| xp[j]),
                covariates: Array2::from_shape_fn((n, 2), |(_, j)| cov[j]),
                mask: Array2::ones((n, 2)),
            },
            eps: Array2::from_shape_fn((n, 2), |(_, j)| e[j]),
        };
        let (l1, g1) = loss_and_gradients(&params, &make(1)).unwrap();
        let (l4, g4) = loss_and_gradients(&params, &make(4)).unwrap();
        assert!((l1 - l4).abs() < 1e-14);
        for (a, b) in g1.to_flat().iter().zip(g4.to_flat()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
