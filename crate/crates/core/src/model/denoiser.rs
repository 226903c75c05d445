//! Sampling-time view of the noise predictor.
//!
//! During reverse sampling the context stays fixed while `tau` runs from `T`
//! down to 1, so the context and timestep contributions to each conditioned
//! layer are computed once and reused.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{s, Array2, ArrayView2};

use super::network::{encode, silu, timestep_matrix};
use super::{ContextBatch, ModelParams};
use crate::error::{Error, Result};

/// Anything that can play the role of `eps_theta` inside the reverse chain.
pub trait Denoiser: Sync {
    type Prepared: Send + Sync;

    fn state_dim(&self) -> usize;

    /// Width of the covariate vector `[u, w]` expected in the context.
    fn covariate_dim(&self) -> usize;

    /// Number of diffusion steps this denoiser supports.
    fn steps(&self) -> usize;

    /// Per-context work shared by every diffusion step.
    fn prepare(&self, ctx: &ContextBatch) -> Result<Self::Prepared>;

    /// Predicted noise for each row of `x_noisy` at step `tau`.
    fn predict(&self, x_noisy: ArrayView2<f64>, tau: usize, prepared: &Self::Prepared) -> Result<Array2<f64>>;
}

/// [`ModelParams`] with timestep contributions precomputed for `1..=steps`.
#[derive(Debug, Clone)]
pub struct ModelDenoiser {
    params: ModelParams,
    steps: usize,
    time_input: Array2<f64>,
    time_blocks: Vec<Array2<f64>>,
}

/// Context contributions to the input layer and to each residual block.
#[derive(Debug, Clone)]
pub struct PreparedContext {
    input: Array2<f64>,
    blocks: Vec<Array2<f64>>,
}

impl ModelDenoiser {
    pub fn new(params: ModelParams, steps: usize) -> Result<Self> {
        params.validate()?;
        let c = params.dims.context_dim;
        let taus: Vec<usize> = (1..=steps).collect();
        let temb = timestep_matrix(&taus, params.dims.time_embed_dim);
        let time_part = |layer: &super::ConditionedDense| {
            let mut t = temb.dot(&layer.cond_weight.slice(s![c.., ..]));
            t += &layer.bias;
            t
        };
        let time_input = time_part(&params.input);
        let time_blocks = params.blocks.iter().map(|b| time_part(&b.inner)).collect();
        Ok(Self {
            params,
            steps,
            time_input,
            time_blocks,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }
}

impl Denoiser for ModelDenoiser {
    type Prepared = PreparedContext;

    fn state_dim(&self) -> usize {
        self.params.dims.state_dim
    }

    fn covariate_dim(&self) -> usize {
        self.params.dims.covariate_dim()
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn prepare(&self, ctx: &ContextBatch) -> Result<PreparedContext> {
        let c_emb = encode(&self.params, ctx)?;
        let c = self.params.dims.context_dim;
        let input = c_emb.dot(&self.params.input.cond_weight.slice(s![..c, ..]));
        let blocks = self
            .params
            .blocks
            .iter()
            .map(|b| c_emb.dot(&b.inner.cond_weight.slice(s![..c, ..])))
            .collect();
        Ok(PreparedContext { input, blocks })
    }

    fn predict(&self, x_noisy: ArrayView2<f64>, tau: usize, prepared: &PreparedContext) -> Result<Array2<f64>> {
        if tau == 0 || tau > self.steps {
            return Err(Error::Parameter(format!(
                "diffusion step {tau} outside 1..={}",
                self.steps
            )));
        }
        if x_noisy.ncols() != self.state_dim() {
            return Err(Error::shape("noisy state", self.state_dim(), x_noisy.ncols()));
        }
        if x_noisy.nrows() != prepared.input.nrows() {
            return Err(Error::shape("prepared context rows", x_noisy.nrows(), prepared.input.nrows()));
        }
        let row = tau - 1;
        let p = &self.params;
        let mut h = x_noisy.dot(&p.input.weight);
        h += &prepared.input;
        h += &self.time_input.row(row);
        for (k, block) in p.blocks.iter().enumerate() {
            let mut inner = h.mapv(silu).dot(&block.inner.weight);
            inner += &prepared.blocks[k];
            inner += &self.time_blocks[k].row(row);
            h += &inner.mapv(silu).dot(&block.outer.weight);
            h += &block.outer.bias;
        }
        let mut out = h.mapv(silu).dot(&p.output.weight);
        out += &p.output.bias;
        Ok(out)
    }
}

/// Wraps a denoiser and counts per-row predictor evaluations.
#[derive(Debug)]
pub struct CountingDenoiser<D> {
    inner: D,
    calls: AtomicU64,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    type Prepared = D::Prepared;

    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn covariate_dim(&self) -> usize {
        self.inner.covariate_dim()
    }

    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn prepare(&self, ctx: &ContextBatch) -> Result<D::Prepared> {
        self.inner.prepare(ctx)
    }

    fn predict(&self, x_noisy: ArrayView2<f64>, tau: usize, prepared: &D::Prepared) -> Result<Array2<f64>> {
        self.calls.fetch_add(x_noisy.nrows() as u64, Ordering::Relaxed);
        self.inner.predict(x_noisy, tau, prepared)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::predict;
    use crate::model::{init_params, ModelDims};

    #[test]
    fn cached_path_matches_reference_forward() {
        let dims = ModelDims {
            state_dim: 3,
            control_dim: 2,
            exogenous_dim: 1,
            time_embed_dim: 6,
            encoder_hidden: vec![8, 8],
            context_dim: 5,
            predictor_width: 9,
            predictor_blocks: 3,
        };
        let params = init_params(21, &dims).unwrap();
        let denoiser = ModelDenoiser::new(params.clone(), 50).unwrap();
        let n = 4;
        let ctx = ContextBatch {
            x_prev: Array2::from_shape_fn((n, 3), |(i, j)| (i as f64 - j as f64) * 0.3),
            covariates: Array2::from_shape_fn((n, 3), |(i, j)| ((i * j) as f64).sin()),
            mask: Array2::from_shape_fn((n, 3), |(i, j)| ((i + j) % 2) as f64),
        };
        let x = Array2::from_shape_fn((n, 3), |(i, j)| (i + 2 * j) as f64 * 0.1 - 0.4);
        let prepared = denoiser.prepare(&ctx).unwrap();
        for tau in [1, 2, 25, 50] {
            let fast = denoiser.predict(x.view(), tau, &prepared).unwrap();
            let slow = predict(&params, x.view(), &vec![tau; n], &ctx).unwrap();
            for (a, b) in fast.iter().zip(slow.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(denoiser.predict(x.view(), 51, &prepared).is_err());
    }
}
