//! Learnable conditioning and noise-prediction network.
//!
//! The context encoder is an MLP over `[x_prev, covariates, covariate_mask]`
//! producing `c_emb`. The noise predictor is a stack of residual fully-connected
//! blocks; the conditioning vector `g = [c_emb, timestep_embedding]` is
//! concatenated into the input layer and into every block. Concatenation is
//! realized as a separate weight matrix for the `g` part, which is
//! algebraically identical and lets the sampler cache the `g` contribution.

mod denoiser;
mod network;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use denoiser::{CountingDenoiser, Denoiser, ModelDenoiser, PreparedContext};
pub use network::{batch_loss, loss_and_gradients, TrainingBatch};

/// Architecture configuration. Fully determines every parameter shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub state_dim: usize,
    pub control_dim: usize,
    pub exogenous_dim: usize,
    pub time_embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub context_dim: usize,
    pub predictor_width: usize,
    pub predictor_blocks: usize,
}

impl ModelDims {
    /// Default sizes: encoder 2x64 -> 64, predictor width 128 with 3 blocks, 64-d timestep embedding.
    pub fn new(state_dim: usize, control_dim: usize, exogenous_dim: usize) -> Self {
        Self {
            state_dim,
            control_dim,
            exogenous_dim,
            time_embed_dim: 64,
            encoder_hidden: vec![64, 64],
            context_dim: 64,
            predictor_width: 128,
            predictor_blocks: 3,
        }
    }

    pub fn covariate_dim(&self) -> usize {
        self.control_dim + self.exogenous_dim
    }

    /// Encoder input: state, covariate values, covariate mask.
    pub fn encoder_input_dim(&self) -> usize {
        self.state_dim + 2 * self.covariate_dim()
    }

    /// Width of the conditioning vector `[c_emb, timestep_embedding]`.
    pub fn conditioning_dim(&self) -> usize {
        self.context_dim + self.time_embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::Config("state dimension must be positive".into()));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "timestep embedding size must be even and positive, got {}",
                self.time_embed_dim
            )));
        }
        if self.context_dim == 0 || self.predictor_width == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.encoder_hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("encoder hidden sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Affine map `y = x W + b`, with `W` stored as `(in, out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn uniform(inputs: usize, outputs: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let bound = scale / (inputs as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((inputs, outputs), |_| rng.gen_range(-bound..bound)),
            bias: Array1::zeros(outputs),
        }
    }
}

/// Affine map over two concatenated inputs: `y = x Wx + g Wg + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionedDense {
    pub weight: Array2<f64>,
    pub cond_weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ConditionedDense {
    fn zeros(inputs: usize, cond: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            cond_weight: Array2::zeros((cond, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn uniform(inputs: usize, cond: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((inputs + cond) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((inputs, outputs), |_| rng.gen_range(-bound..bound)),
            cond_weight: Array2::from_shape_fn((cond, outputs), |_| rng.gen_range(-bound..bound)),
            bias: Array1::zeros(outputs),
        }
    }
}

/// `h + act(act(h) W1 + g G1 + b1) W2 + b2`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlock {
    pub inner: ConditionedDense,
    pub outer: Dense,
}

/// Every learnable weight of the encoder and the noise predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub encoder: Vec<Dense>,
    pub input: ConditionedDense,
    pub blocks: Vec<ResidualBlock>,
    pub output: Dense,
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by `dims`.
    pub fn zeros(dims: &ModelDims) -> Result<Self> {
        dims.validate()?;
        let mut encoder = Vec::new();
        let mut prev = dims.encoder_input_dim();
        for &h in dims.encoder_hidden.iter().chain(std::iter::once(&dims.context_dim)) {
            encoder.push(Dense::zeros(prev, h));
            prev = h;
        }
        let w = dims.predictor_width;
        let g = dims.conditioning_dim();
        Ok(Self {
            dims: dims.clone(),
            encoder,
            input: ConditionedDense::zeros(dims.state_dim, g, w),
            blocks: (0..dims.predictor_blocks)
                .map(|_| ResidualBlock {
                    inner: ConditionedDense::zeros(w, g, w),
                    outer: Dense::zeros(w, w),
                })
                .collect(),
            output: Dense::zeros(w, dims.state_dim),
        })
    }

    /// A zero-filled tensor set with the same shapes (gradient / moment buffers).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_tensor_mut(|t| t.fill(0.0));
        z
    }

    /// Visits every tensor in a fixed canonical order.
    pub fn for_each_tensor(&self, mut f: impl FnMut(&[f64])) {
        for layer in &self.encoder {
            f(layer.weight.as_slice().expect("standard layout"));
            f(layer.bias.as_slice().expect("standard layout"));
        }
        visit_conditioned(&self.input, &mut f);
        for block in &self.blocks {
            visit_conditioned(&block.inner, &mut f);
            f(block.outer.weight.as_slice().expect("standard layout"));
            f(block.outer.bias.as_slice().expect("standard layout"));
        }
        f(self.output.weight.as_slice().expect("standard layout"));
        f(self.output.bias.as_slice().expect("standard layout"));
    }

    /// Mutable counterpart of [`Self::for_each_tensor`], same order.
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&mut [f64])) {
        for layer in &mut self.encoder {
            f(layer.weight.as_slice_mut().expect("standard layout"));
            f(layer.bias.as_slice_mut().expect("standard layout"));
        }
        visit_conditioned_mut(&mut self.input, &mut f);
        for block in &mut self.blocks {
            visit_conditioned_mut(&mut block.inner, &mut f);
            f(block.outer.weight.as_slice_mut().expect("standard layout"));
            f(block.outer.bias.as_slice_mut().expect("standard layout"));
        }
        f(self.output.weight.as_slice_mut().expect("standard layout"));
        f(self.output.bias.as_slice_mut().expect("standard layout"));
    }

    /// All parameters flattened in canonical order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.for_each_tensor(|t| out.extend_from_slice(t));
        out
    }

    /// Overwrites every parameter from a flat vector in canonical order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("set_flat", self.num_params(), flat.len()));
        }
        let mut offset = 0;
        self.for_each_tensor_mut(|t| {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        });
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|t| n += t.len());
        n
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(|t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }

    /// Checks that tensor shapes agree with `dims`.
    pub fn validate(&self) -> Result<()> {
        let reference = Self::zeros(&self.dims)?;
        let mut shapes = Vec::new();
        reference.for_each_tensor(|t| shapes.push(t.len()));
        let mut i = 0;
        let mut ok = true;
        self.for_each_tensor(|t| {
            ok &= shapes.get(i) == Some(&t.len());
            i += 1;
        });
        if !ok || i != shapes.len() {
            return Err(Error::Config(
                "parameter tensors do not match the declared dimensions".into(),
            ));
        }
        if !self.all_finite() {
            return Err(Error::Config("parameters contain non-finite values".into()));
        }
        Ok(())
    }
}

fn visit_conditioned(layer: &ConditionedDense, f: &mut impl FnMut(&[f64])) {
    f(layer.weight.as_slice().expect("standard layout"));
    f(layer.cond_weight.as_slice().expect("standard layout"));
    f(layer.bias.as_slice().expect("standard layout"));
}

fn visit_conditioned_mut(layer: &mut ConditionedDense, f: &mut impl FnMut(&mut [f64])) {
    f(layer.weight.as_slice_mut().expect("standard layout"));
    f(layer.cond_weight.as_slice_mut().expect("standard layout"));
    f(layer.bias.as_slice_mut().expect("standard layout"));
}

/// Fan-in scaled uniform initialization, reproducible from `seed`.
///
/// The output layer is scaled down so that the initial prediction is close to
/// zero and the initial loss is close to `E|eps|^2 = state_dim`.
pub fn init_params(seed: u64, dims: &ModelDims) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut encoder = Vec::new();
    let mut prev = dims.encoder_input_dim();
    for &h in dims.encoder_hidden.iter().chain(std::iter::once(&dims.context_dim)) {
        encoder.push(Dense::uniform(prev, h, 1.0, &mut rng));
        prev = h;
    }
    let w = dims.predictor_width;
    let g = dims.conditioning_dim();
    let input = ConditionedDense::uniform(dims.state_dim, g, w, &mut rng);
    let blocks = (0..dims.predictor_blocks)
        .map(|_| ResidualBlock {
            inner: ConditionedDense::uniform(w, g, w, &mut rng),
            outer: Dense::uniform(w, w, 0.5, &mut rng),
        })
        .collect();
    let output = Dense::uniform(w, dims.state_dim, 0.1, &mut rng);
    Ok(ModelParams {
        dims: dims.clone(),
        encoder,
        input,
        blocks,
        output,
    })
}

/// Sinusoidal features of a diffusion step: `[sin(tau f_0), cos(tau f_0), sin(tau f_1), ...]`
/// with `f_i = 10000^(-2i/E)`.
pub fn embed_timestep(tau: usize, embed_dim: usize) -> Result<Vec<f64>> {
    if embed_dim == 0 || embed_dim % 2 != 0 {
        return Err(Error::Parameter(format!(
            "timestep embedding size must be even and positive, got {embed_dim}"
        )));
    }
    let mut out = vec![0.0; embed_dim];
    write_timestep_embedding(tau, &mut out);
    Ok(out)
}

pub(crate) fn write_timestep_embedding(tau: usize, out: &mut [f64]) {
    let e = out.len() as f64;
    let t = tau as f64;
    for i in 0..out.len() / 2 {
        let freq = 10000f64.powf(-(2.0 * i as f64) / e);
        let (s, c) = (t * freq).sin_cos();
        out[2 * i] = s;
        out[2 * i + 1] = c;
    }
}

/// The conditioning tuple `(x_prev, u, w)` together with its covariate mask.
///
/// Masked-out covariates are stored as zero regardless of the value passed in.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningContext {
    x_prev: Vec<f64>,
    covariates: Vec<f64>,
    mask: Vec<bool>,
    control_dim: usize,
}

impl ConditioningContext {
    /// `mask` covers `[u, w]` in that order; `true` marks an observed entry.
    pub fn new(x_prev: Vec<f64>, u: &[f64], w: &[f64], mask: Vec<bool>) -> Result<Self> {
        let cov_dim = u.len() + w.len();
        if mask.len() != cov_dim {
            return Err(Error::shape("covariate mask", cov_dim, mask.len()));
        }
        let covariates = u
            .iter()
            .chain(w)
            .zip(&mask)
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        Ok(Self {
            x_prev,
            covariates,
            mask,
            control_dim: u.len(),
        })
    }

    pub fn x_prev(&self) -> &[f64] {
        &self.x_prev
    }

    pub fn control(&self) -> &[f64] {
        &self.covariates[..self.control_dim]
    }

    pub fn exogenous(&self) -> &[f64] {
        &self.covariates[self.control_dim..]
    }

    pub fn covariates(&self) -> &[f64] {
        &self.covariates
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    fn check_dims(&self, dims: &ModelDims) -> Result<()> {
        if self.x_prev.len() != dims.state_dim {
            return Err(Error::shape("context state", dims.state_dim, self.x_prev.len()));
        }
        if self.control_dim != dims.control_dim {
            return Err(Error::shape("context control", dims.control_dim, self.control_dim));
        }
        if self.covariates.len() != dims.covariate_dim() {
            return Err(Error::shape(
                "context covariates",
                dims.covariate_dim(),
                self.covariates.len(),
            ));
        }
        Ok(())
    }
}

/// Row-stacked conditioning contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextBatch {
    /// `(n, state_dim)`
    pub x_prev: Array2<f64>,
    /// `(n, covariate_dim)`, zero where masked.
    pub covariates: Array2<f64>,
    /// `(n, covariate_dim)`, 1.0 observed / 0.0 missing.
    pub mask: Array2<f64>,
}

impl ContextBatch {
    pub fn from_contexts(contexts: &[ConditioningContext], dims: &ModelDims) -> Result<Self> {
        let n = contexts.len();
        let c = dims.covariate_dim();
        let mut batch = Self {
            x_prev: Array2::zeros((n, dims.state_dim)),
            covariates: Array2::zeros((n, c)),
            mask: Array2::zeros((n, c)),
        };
        for (i, ctx) in contexts.iter().enumerate() {
            ctx.check_dims(dims)?;
            for (j, v) in ctx.x_prev.iter().enumerate() {
                batch.x_prev[[i, j]] = *v;
            }
            for j in 0..c {
                batch.covariates[[i, j]] = ctx.covariates[j];
                batch.mask[[i, j]] = if ctx.mask[j] { 1.0 } else { 0.0 };
            }
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.x_prev.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn check_dims(&self, dims: &ModelDims) -> Result<()> {
        if self.x_prev.ncols() != dims.state_dim {
            return Err(Error::shape("context state", dims.state_dim, self.x_prev.ncols()));
        }
        if self.covariates.ncols() != dims.covariate_dim() {
            return Err(Error::shape(
                "context covariates",
                dims.covariate_dim(),
                self.covariates.ncols(),
            ));
        }
        if self.mask.dim() != self.covariates.dim() || self.covariates.nrows() != self.len() {
            return Err(Error::shape("context mask rows", self.len(), self.mask.nrows()));
        }
        Ok(())
    }

    /// `[x_prev, covariates, mask]` per row.
    pub(crate) fn encoder_input(&self) -> Array2<f64> {
        ndarray::concatenate(
            ndarray::Axis(1),
            &[self.x_prev.view(), self.covariates.view(), self.mask.view()],
        )
        .expect("row counts agree")
    }
}

/// Encodes one context into `c_emb`.
pub fn encode_context(ctx: &ConditioningContext, params: &ModelParams) -> Result<Vec<f64>> {
    let batch = ContextBatch::from_contexts(std::slice::from_ref(ctx), &params.dims)?;
    let emb = network::encode(params, &batch)?;
    Ok(emb.row(0).to_vec())
}

/// `eps_theta(x_noisy, tau, ctx)` for a single state vector.
pub fn predict_noise(
    x_noisy: &[f64],
    tau: usize,
    ctx: &ConditioningContext,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    if x_noisy.len() != params.dims.state_dim {
        return Err(Error::shape("predict_noise state", params.dims.state_dim, x_noisy.len()));
    }
    let batch = ContextBatch::from_contexts(std::slice::from_ref(ctx), &params.dims)?;
    let x = Array2::from_shape_vec((1, x_noisy.len()), x_noisy.to_vec()).expect("shape");
    let out = network::predict(params, x.view(), &[tau], &batch)?;
    Ok(out.row(0).to_vec())
}
