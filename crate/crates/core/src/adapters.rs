//! Two-level style injection: gated fusion of the prosody stream into the
//! phoneme stream, and FiLM modulation from the paralinguistic prompt.

use candle_core::Tensor;

use crate::nn::{sigmoid, Init, Linear, ParamBuilder};
use crate::{Error, Result};

/// Largest magnitude the gated output may take. In floating point both
/// `tanh` and the sigmoid saturate to exactly 1 for large pre-activations;
/// the clamp keeps the output strictly inside (-1, 1).
const GTU_BOUND: f64 = 1.0 - 1e-7;

/// Gated Tanh Unit: `tanh(W₁ x_t + b₁) ⊙ σ(W₂ s_t + b₂)` at every position.
#[derive(Debug, Clone)]
pub struct Gtu {
    pub w1: Linear,
    pub w2: Linear,
}

impl Gtu {
    pub fn new(pb: &ParamBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            w1: Linear::new(&pb.pp("w1"), dim, dim)?,
            w2: Linear::new(&pb.pp("w2"), dim, dim)?,
        })
    }

    /// `x`, `s_pho`: `(B, L, d₁)`.
    pub fn forward(&self, x: &Tensor, s_pho: &Tensor) -> Result<Tensor> {
        if x.dims() != s_pho.dims() {
            return Err(Error::shape("gtu inputs", x.dims(), s_pho.dims()));
        }
        let y = (self.w1.forward(x)?.tanh()? * sigmoid(&self.w2.forward(s_pho)?)?)?;
        Ok(y.clamp(-GTU_BOUND, GTU_BOUND)?)
    }
}

/// `S_local` (drives FiLM) and `S_global` (conditions posterior, flow and
/// decoder), both `(B, ·)`.
#[derive(Debug, Clone)]
pub struct StyleProjection {
    pub local: Tensor,
    pub global: Tensor,
}

/// Two independent linear maps from the prompt embedding.
#[derive(Debug, Clone)]
pub struct ParaProjection {
    pub local: Linear,
    pub global: Linear,
}

impl ParaProjection {
    pub fn new(pb: &ParamBuilder, prompt_dim: usize, local_dim: usize, global_dim: usize) -> Result<Self> {
        Ok(Self {
            local: Linear::new(&pb.pp("local"), prompt_dim, local_dim)?,
            global: Linear::new(&pb.pp("global"), prompt_dim, global_dim)?,
        })
    }

    /// `s_para`: `(B, d₂)`.
    pub fn forward(&self, s_para: &Tensor) -> Result<StyleProjection> {
        Ok(StyleProjection {
            local: self.local.forward(s_para)?,
            global: self.global.forward(s_para)?,
        })
    }
}

/// Per-utterance scale and shift, `(B, d₁)` each.
#[derive(Debug, Clone)]
pub struct FilmParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// `γ ⊙ x̃_t + β` with one `(γ, β)` pair shared by every position.
pub fn film_apply(x_tilde: &Tensor, params: &FilmParams) -> Result<Tensor> {
    let (b, _, d) = x_tilde.dims3()?;
    for (name, t) in [("film gamma", &params.gamma), ("film beta", &params.beta)] {
        if t.dims() != [b, d] {
            return Err(Error::shape(name, [b, d], t.dims()));
        }
    }
    Ok(x_tilde
        .broadcast_mul(&params.gamma.unsqueeze(1)?)?
        .broadcast_add(&params.beta.unsqueeze(1)?)?)
}

/// Generates `(γ, β)` from `S_local`; starts as the identity modulation.
#[derive(Debug, Clone)]
pub struct Film {
    pub gamma: Linear,
    pub beta: Linear,
}

impl Film {
    pub fn new(pb: &ParamBuilder, cond_dim: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: Linear::with_init(&pb.pp("gamma"), cond_dim, dim, Init::Zeros, Some(Init::Const(1.0)))?,
            beta: Linear::with_init(&pb.pp("beta"), cond_dim, dim, Init::Zeros, Some(Init::Zeros))?,
        })
    }

    pub fn params(&self, s_local: &Tensor) -> Result<FilmParams> {
        Ok(FilmParams {
            gamma: self.gamma.forward(s_local)?,
            beta: self.beta.forward(s_local)?,
        })
    }

    pub fn forward(&self, x_tilde: &Tensor, s_local: &Tensor) -> Result<Tensor> {
        film_apply(x_tilde, &self.params(s_local)?)
    }
}
