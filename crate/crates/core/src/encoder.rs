//! Phoneme and prosody-style text encoders built from Feed-Forward
//! Transformer blocks.

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{check_finite, dropout, softmax_last_dim, Conv1d, Embedding, LayerNorm, Linear, ParamBuilder};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 192,
            layers: 4,
            heads: 2,
            kernel: 3,
            hidden: 768,
            dropout: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("encoder kernel {} must be odd", self.kernel)));
        }
        if self.dim % 2 != 0 {
            return Err(Error::Config(format!("encoder dim {} must be even", self.dim)));
        }
        Ok(())
    }
}

/// Sinusoidal table: `PE[p, 2i] = sin(p / 10000^(2i/d))`,
/// `PE[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding(len: usize, dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    if dim % 2 != 0 {
        return Err(Error::Invalid(format!("positional encoding dim {dim} must be even")));
    }
    let mut v = vec![0f64; len * dim];
    for p in 0..len {
        for i in 0..dim / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            v[p * dim + 2 * i] = angle.sin();
            v[p * dim + 2 * i + 1] = angle.cos();
        }
    }
    Ok(Tensor::from_vec(v, (len, dim), device)?.to_dtype(dtype)?)
}

/// Self-attention followed by a two-convolution feed-forward sublayer,
/// each wrapped in residual + post layer norm.
#[derive(Debug, Clone)]
pub struct FftBlock {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub norm1: LayerNorm,
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub norm2: LayerNorm,
    heads: usize,
    dropout: f64,
}

impl FftBlock {
    pub fn new(pb: &ParamBuilder, cfg: &EncoderConfig) -> Result<Self> {
        let d = cfg.dim;
        Ok(Self {
            q: Linear::new(&pb.pp("attn.q"), d, d)?,
            k: Linear::new(&pb.pp("attn.k"), d, d)?,
            v: Linear::new(&pb.pp("attn.v"), d, d)?,
            o: Linear::new(&pb.pp("attn.o"), d, d)?,
            norm1: LayerNorm::new(&pb.pp("norm1"), d)?,
            conv1: Conv1d::new(&pb.pp("ffn.conv1"), d, cfg.hidden, cfg.kernel, 1)?,
            conv2: Conv1d::new(&pb.pp("ffn.conv2"), cfg.hidden, d, cfg.kernel, 1)?,
            norm2: LayerNorm::new(&pb.pp("norm2"), d)?,
            heads: cfg.heads,
            dropout: cfg.dropout,
        })
    }

    /// `x`: `(B, L, d)`, `mask`: `(B, L)` with 1 on valid positions.
    /// Returns the output and the attention weights `(B, heads, L, L)`.
    pub fn forward_with_attention(
        &self,
        x: &Tensor,
        mask: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, Tensor)> {
        check_finite(x, "fft block input")?;
        let (b, l, d) = x.dims3()?;
        let h = self.heads;
        let dk = d / h;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, l, h, dk))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(x)?)?;
        let k = split(self.k.forward(x)?)?;
        let v = split(self.v.forward(x)?)?;
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? / (dk as f64).sqrt())?;
        let key_bias = ((mask.reshape((b, 1, 1, l))? - 1.0)? * 1e4)?;
        let attn = softmax_last_dim(&scores.broadcast_add(&key_bias)?)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, l, d))?;
        let y = dropout(&self.o.forward(&ctx)?, self.dropout, rng.as_deref_mut())?;
        let x = self.norm1.forward(&(x + y)?)?;

        let m = mask.unsqueeze(1)?;
        let xt = x.transpose(1, 2)?.broadcast_mul(&m)?;
        let hdn = self.conv1.forward(&xt)?.relu()?;
        let hdn = dropout(&hdn, self.dropout, rng.as_deref_mut())?;
        let y = self.conv2.forward(&hdn.broadcast_mul(&m)?)?.broadcast_mul(&m)?;
        let y = dropout(&y.transpose(1, 2)?, self.dropout, rng)?;
        let x = self.norm2.forward(&(x + y)?)?;
        Ok((x.broadcast_mul(&mask.unsqueeze(2)?)?, attn))
    }

    pub fn forward(&self, x: &Tensor, mask: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        Ok(self.forward_with_attention(x, mask, rng)?.0)
    }
}

/// Embedding table + scaled embedding + positional encoding + FFT stack.
#[derive(Debug, Clone)]
pub struct StreamEncoder {
    pub embedding: Embedding,
    pub blocks: Vec<FftBlock>,
    dim: usize,
}

impl StreamEncoder {
    pub fn new(pb: &ParamBuilder, vocab: usize, cfg: &EncoderConfig) -> Result<Self> {
        let blocks = (0..cfg.layers)
            .map(|i| FftBlock::new(&pb.pp(format!("block.{i}")), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embedding: Embedding::new(&pb.pp("embedding"), vocab, cfg.dim)?,
            blocks,
            dim: cfg.dim,
        })
    }

    pub fn forward(&self, ids: &Tensor, mask: &Tensor, mut rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let (_, l) = ids.dims2()?;
        let emb = self.embedding.forward(ids)?;
        let pe = positional_encoding(l, self.dim, emb.dtype(), emb.device())?;
        let mut x = ((emb * (self.dim as f64).sqrt())?.broadcast_add(&pe)?).broadcast_mul(&mask.unsqueeze(2)?)?;
        for block in &self.blocks {
            x = block.forward(&x, mask, rng.as_deref_mut())?;
        }
        Ok(x)
    }
}

/// Output of the text encoder: phoneme stream `x` and prosody stream
/// `s_pho`, both `(B, L, d₁)`.
#[derive(Debug, Clone)]
pub struct EncodedText {
    pub x: Tensor,
    pub s_pho: Tensor,
}

/// Two separate streams with their own embedding tables and FFT stacks.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub phoneme: StreamEncoder,
    pub style: StreamEncoder,
}

impl TextEncoder {
    pub fn new(pb: &ParamBuilder, phoneme_vocab: usize, style_vocab: usize, cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            phoneme: StreamEncoder::new(&pb.pp("phoneme"), phoneme_vocab, cfg)?,
            style: StreamEncoder::new(&pb.pp("style"), style_vocab, cfg)?,
        })
    }

    /// `phonemes`, `styles`: `(B, L)` u32 ids; `mask`: `(B, L)` float.
    pub fn forward(
        &self,
        phonemes: &Tensor,
        styles: &Tensor,
        mask: &Tensor,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<EncodedText> {
        if phonemes.dims() != styles.dims() {
            return Err(Error::shape("phoneme/style ids", phonemes.dims(), styles.dims()));
        }
        let x = self.phoneme.forward(phonemes, mask, rng.as_deref_mut())?;
        let s_pho = self.style.forward(styles, mask, rng)?;
        Ok(EncodedText { x, s_pho })
    }
}
