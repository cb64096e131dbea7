use candle_core::{DType, Tensor, D};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Init, ParamBuilder};
use crate::{Error, Result};

/// Numerically stable logistic function, `0.5 * (tanh(x / 2) + 1)`.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn softmax_last_dim(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&sum)?)
}

/// Inverted dropout with an explicit generator. `rng == None` is eval mode.
pub fn dropout(x: &Tensor, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
    let Some(rng) = rng else {
        return Ok(x.clone());
    };
    if rate <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - rate;
    let n = x.elem_count();
    let mask: Vec<f32> = (0..n)
        .map(|_| if rng.random::<f64>() < keep { (1.0 / keep) as f32 } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok((x * mask)?)
}

/// Sum of `x * mask` divided by the sum of the (broadcast) mask.
pub fn masked_mean(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let m = mask.broadcast_as(x.shape())?;
    let num = (x * &m)?.sum_all()?;
    let den = m.sum_all()?;
    Ok((num / den)?)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// PyTorch-style uniform init with bound `1/sqrt(fan_in)`.
    pub fn new(pb: &ParamBuilder, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self::with_init(pb, d_in, d_out, Init::Uniform(bound), Some(Init::Uniform(bound)))
    }

    pub fn with_init(
        pb: &ParamBuilder,
        d_in: usize,
        d_out: usize,
        weight: Init,
        bias: Option<Init>,
    ) -> Result<Self> {
        let w = pb.get(&[d_out, d_in], "weight", weight)?;
        let b = bias.map(|b| pb.get(&[d_out], "bias", b)).transpose()?;
        Ok(Self { weight: w, bias: b })
    }

    pub fn d_in(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.dims()[0]
    }

    /// Applies `x W^T + b` over the last dimension of any-rank input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().ok_or_else(|| Error::Invalid("linear on a scalar".into()))?;
        if d_in != self.d_in() {
            return Err(Error::shape("linear input", self.d_in(), d_in));
        }
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, d_in))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => (y + add_rows(b, rows)?)?,
            None => y,
        };
        let mut out_dims = dims;
        *out_dims.last_mut().expect("non-empty") = self.d_out();
        Ok(y.reshape(out_dims)?)
    }
}

/// `n` copies of `bias` as an `(n, c)` outer product. Its backward pass is a
/// GEMM, where a broadcast add would reduce over the row dimension slowly.
fn add_rows(bias: &Tensor, n: usize) -> Result<Tensor> {
    let c = bias.elem_count();
    let ones = Tensor::ones((n, 1), bias.dtype(), bias.device())?;
    Ok(ones.matmul(&bias.reshape((1, c))?)?)
}

/// 1-D convolution over `(batch, channels, time)`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub pad_left: usize,
    pub pad_right: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl Conv1d {
    /// Same-padded (for stride 1) convolution with default init.
    pub fn new(
        pb: &ParamBuilder,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        Self::with_init(pb, c_in, c_out, kernel, dilation, Init::Uniform(bound), Init::Uniform(bound))
    }

    pub fn with_init(
        pb: &ParamBuilder,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        dilation: usize,
        weight: Init,
        bias: Init,
    ) -> Result<Self> {
        let span = dilation * (kernel - 1);
        let w = pb.get(&[c_out, c_in, kernel], "weight", weight)?;
        let b = pb.get(&[c_out], "bias", bias)?;
        Ok(Self {
            weight: w,
            bias: Some(b),
            pad_left: span / 2,
            pad_right: span - span / 2,
            stride: 1,
            dilation,
        })
    }

    pub fn with_stride(mut self, stride: usize, pad: usize) -> Self {
        self.stride = stride;
        self.pad_left = pad;
        self.pad_right = pad;
        self
    }

    pub fn out_len(&self, t: usize) -> usize {
        let k = self.weight.dims()[2];
        let span = self.dilation * (k - 1) + 1;
        (t + self.pad_left + self.pad_right - span) / self.stride + 1
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c_in, t) = x.dims3()?;
        let (c_out, wc_in, k) = self.weight.dims3()?;
        if c_in != wc_in {
            return Err(Error::shape("conv1d input channels", wc_in, c_in));
        }
        // Work in (B·T, C) rows so each conv is one 2-D GEMM and the weight
        // gradient needs no reduction over a broadcast batch dimension.
        let xt = x.transpose(1, 2)?.contiguous()?;
        let t_out = self.out_len(t);
        let rows = if k == 1 && self.stride == 1 && self.pad_left == 0 && self.pad_right == 0 {
            xt.reshape((b * t, c_in))?
        } else {
            let xp = xt.pad_with_zeros(1, self.pad_left, self.pad_right)?;
            let idx: Vec<u32> = (0..t_out)
                .flat_map(|o| (0..k).map(move |j| (o * self.stride + j * self.dilation) as u32))
                .collect();
            let idx = Tensor::from_vec(idx, t_out * k, x.device())?;
            xp.index_select(&idx, 1)?.reshape((b * t_out, k * c_in))?
        };
        // (c_out, c_in, k) -> (k·c_in, c_out), matching the row layout above.
        let w = self.weight.permute((2, 1, 0))?.reshape((k * c_in, c_out))?;
        let y = rows.matmul(&w)?;
        let y = match &self.bias {
            Some(bias) => (y + add_rows(bias, b * t_out)?)?,
            None => y,
        };
        Ok(y.reshape((b, t_out, c_out))?.transpose(1, 2)?.contiguous()?)
    }
}

/// Transposed 1-D convolution evaluated in polyphase form: one ordinary
/// convolution producing `stride * c_out` channels, then interleaved.
/// Weight layout matches the usual `(c_in, c_out, kernel)` convention.
/// Only configurations with `kernel - 2 * padding == stride` are supported,
/// so the output length is exactly `stride * t_in`.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    pub weight: Tensor,
    pub bias: Tensor,
    stride: usize,
    taps: usize,
    pad_left: usize,
    pad_right: usize,
    index: Tensor,
}

impl ConvTranspose1d {
    pub fn new(
        pb: &ParamBuilder,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let bound = 1.0 / ((c_out * kernel) as f64).sqrt();
        let w = pb.get(&[c_in, c_out, kernel], "weight", Init::Uniform(bound))?;
        let b = pb.get(&[c_out], "bias", Init::Uniform(bound))?;
        Self::from_parts(w, b, stride, padding)
    }

    pub fn from_parts(weight: Tensor, bias: Tensor, stride: usize, padding: usize) -> Result<Self> {
        let (_, _, k) = weight.dims3()?;
        if stride == 0 || k < 2 * padding || k - 2 * padding != stride {
            return Err(Error::Invalid(format!(
                "transposed conv needs kernel - 2*padding == stride (kernel {k}, stride {stride}, padding {padding})"
            )));
        }
        let (s, p) = (stride as i64, padding as i64);
        let kk = k as i64;
        // y[n*s + r] = sum_q x[n - q] * w[q*s + r + p]
        let mut q_min = i64::MAX;
        let mut q_max = i64::MIN;
        for r in 0..s {
            q_min = q_min.min((-(r + p) + s - 1).div_euclid(s));
            q_max = q_max.max((kk - 1 - r - p).div_euclid(s));
        }
        if q_min > 0 || q_max < 0 {
            return Err(Error::Invalid("degenerate transposed conv geometry".into()));
        }
        let taps = (q_max - q_min + 1) as usize;
        let mut idx = Vec::with_capacity(stride * taps);
        for r in 0..s {
            for j in 0..taps as i64 {
                let w = (q_max - j) * s + r + p;
                idx.push(if (0..kk).contains(&w) { w as u32 } else { k as u32 });
            }
        }
        let index = Tensor::from_vec(idx, stride * taps, weight.device())?;
        Ok(Self {
            weight,
            bias,
            stride,
            taps,
            pad_left: q_max as usize,
            pad_right: (-q_min) as usize,
            index,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c_in, t) = x.dims3()?;
        let (w_in, c_out, _) = self.weight.dims3()?;
        if c_in != w_in {
            return Err(Error::shape("transposed conv input channels", w_in, c_in));
        }
        let s = self.stride;
        let kernel = self
            .weight
            .permute((1, 0, 2))?
            .pad_with_zeros(2, 0, 1)?
            .contiguous()?
            .index_select(&self.index, 2)?
            .reshape((c_out, c_in, s, self.taps))?
            .permute((2, 0, 1, 3))?
            .reshape((s * c_out, c_in, self.taps))?;
        let bias = self.bias.unsqueeze(0)?.broadcast_as((s, c_out))?.reshape(s * c_out)?;
        let conv = Conv1d {
            weight: kernel,
            bias: Some(bias),
            pad_left: self.pad_left,
            pad_right: self.pad_right,
            stride: 1,
            dilation: 1,
        };
        let y = conv
            .forward(x)?
            .reshape((b, s, c_out, t))?
            .permute((0, 2, 3, 1))?
            .reshape((b, c_out, t * s))?;
        Ok(y)
    }
}

/// Layer normalisation over the last dimension.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(pb: &ParamBuilder, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: pb.get(&[dim], "gamma", Init::Const(1.0))?,
            beta: pb.get(&[dim], "beta", Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn new(pb: &ParamBuilder, vocab: usize, dim: usize) -> Result<Self> {
        let table = pb.get(&[vocab, dim], "table", Init::Normal((dim as f64).powf(-0.5)))?;
        Ok(Self { table })
    }

    pub fn vocab_size(&self) -> usize {
        self.table.dims()[0]
    }

    /// `ids` is a `(batch, len)` u32 tensor; returns `(batch, len, dim)`.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let (b, l) = ids.dims2()?;
        let max = ids.max_all()?.to_dtype(DType::U32)?.to_scalar::<u32>()? as usize;
        if max >= self.vocab_size() {
            return Err(Error::IdOutOfRange {
                id: max as u32,
                table: "embedding".into(),
                size: self.vocab_size(),
            });
        }
        let flat = ids.flatten_all()?;
        let dim = self.table.dims()[1];
        Ok(self.table.index_select(&flat, 0)?.reshape((b, l, dim))?)
    }
}

/// Errors with `NonFinite(what)` if any entry of `x` is NaN or infinite.
pub fn check_finite(x: &Tensor, what: &str) -> Result<()> {
    let s = x.abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
