//! Monotonic alignment search, durations and the duration predictor.

use candle_core::{DType, Device, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::nn::{check_finite, dropout, Conv1d, Init, LayerNorm, ParamBuilder};
use crate::{rng, Error, Result};

/// Hard monotonic alignment of `T` frames onto `L` phonemes, stored as the
/// phoneme index of every frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMatrix {
    phonemes: usize,
    frame_to_phoneme: Vec<usize>,
}

impl AlignmentMatrix {
    /// Validates monotonicity (steps of 0 or 1), start at 0, end at `L-1`.
    pub fn from_path(phonemes: usize, frame_to_phoneme: Vec<usize>) -> Result<Self> {
        let bad = |why: &str| Err(Error::Invalid(format!("invalid alignment: {why}")));
        if phonemes == 0 || frame_to_phoneme.is_empty() {
            return bad("empty");
        }
        if frame_to_phoneme[0] != 0 {
            return bad("first frame must map to phoneme 0");
        }
        if *frame_to_phoneme.last().unwrap() != phonemes - 1 {
            return bad("last frame must map to the last phoneme");
        }
        if frame_to_phoneme.windows(2).any(|w| w[1] != w[0] && w[1] != w[0] + 1) {
            return bad("frames must advance by zero or one phoneme");
        }
        Ok(Self {
            phonemes,
            frame_to_phoneme,
        })
    }

    /// From a row-major binary `L × T` matrix.
    pub fn from_dense(l: usize, t: usize, a: &[f64]) -> Result<Self> {
        if a.len() != l * t {
            return Err(Error::shape("alignment matrix", l * t, a.len()));
        }
        let mut path = Vec::with_capacity(t);
        for j in 0..t {
            let ones: Vec<usize> = (0..l).filter(|&p| a[p * t + j] == 1.0).collect();
            if ones.len() != 1 || (0..l).any(|p| a[p * t + j] != 0.0 && a[p * t + j] != 1.0) {
                return Err(Error::Invalid(format!("alignment column {j} is not one-hot")));
            }
            path.push(ones[0]);
        }
        Self::from_path(l, path)
    }

    pub fn phonemes(&self) -> usize {
        self.phonemes
    }

    pub fn frames(&self) -> usize {
        self.frame_to_phoneme.len()
    }

    pub fn path(&self) -> &[usize] {
        &self.frame_to_phoneme
    }

    /// Row-major `L × T` binary matrix.
    pub fn dense(&self) -> Vec<f64> {
        let t = self.frames();
        let mut a = vec![0f64; self.phonemes * t];
        for (j, &p) in self.frame_to_phoneme.iter().enumerate() {
            a[p * t + j] = 1.0;
        }
        a
    }

    pub fn score(&self, log_lik: &[f64]) -> f64 {
        let t = self.frames();
        self.frame_to_phoneme
            .iter()
            .enumerate()
            .map(|(j, &p)| log_lik[p * t + j])
            .sum()
    }
}

/// Best monotonic surjective path through a row-major `L × T` log-likelihood
/// matrix. Ties prefer staying on the current phoneme.
pub fn mas_align(log_lik: &[f64], l: usize, t: usize) -> Result<AlignmentMatrix> {
    if l == 0 || t < l {
        return Err(Error::Invalid(format!("alignment needs 1 <= L <= T, got L={l}, T={t}")));
    }
    if log_lik.len() != l * t {
        return Err(Error::shape("alignment log-likelihood", l * t, log_lik.len()));
    }
    if log_lik.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("alignment log-likelihood".into()));
    }
    let neg = f64::NEG_INFINITY;
    let mut q = vec![neg; l * t];
    q[0] = log_lik[0];
    for j in 1..t {
        // Phoneme p is reachable at frame j only if p <= j and the rest of
        // the phonemes still fit into the remaining frames.
        let lo = (l + j).saturating_sub(t);
        for p in lo..l.min(j + 1) {
            let stay = q[p * t + j - 1];
            let advance = if p > 0 { q[(p - 1) * t + j - 1] } else { neg };
            q[p * t + j] = log_lik[p * t + j] + stay.max(advance);
        }
    }
    // Backtrack; on equal scores the transition is placed as late as
    // possible, i.e. earlier frames stay on the current phoneme.
    let mut path = vec![0usize; t];
    let mut p = l - 1;
    for j in (1..t).rev() {
        path[j] = p;
        if p > 0 && (p == j || q[(p - 1) * t + j - 1] >= q[p * t + j - 1]) {
            p -= 1;
        }
    }
    path[0] = p;
    AlignmentMatrix::from_path(l, path)
}

/// Row sums of the alignment.
pub fn durations_from_alignment(a: &AlignmentMatrix) -> Vec<usize> {
    let mut d = vec![0usize; a.phonemes()];
    for &p in a.path() {
        d[p] += 1;
    }
    d
}

/// `ceil(d · scale)` with a floor of 1.
pub fn round_durations(d: &[f64], scale: f64) -> Result<Vec<usize>> {
    if !(scale > 0.0) {
        return Err(Error::Invalid(format!("duration scale must be positive, got {scale}")));
    }
    d.iter()
        .map(|&x| {
            if !(x > 0.0) || !x.is_finite() {
                Err(Error::Invalid(format!("durations must be positive and finite, got {x}")))
            } else {
                Ok(((x * scale).ceil() as usize).max(1))
            }
        })
        .collect()
}

/// Replicates row `t` of `x` (`(L, C)`) `rounded[t]` times.
pub fn expand_by_duration(x: &Tensor, d: &[f64], scale: f64) -> Result<(Tensor, Vec<usize>)> {
    let (l, _) = x.dims2()?;
    if d.len() != l {
        return Err(Error::shape("durations", l, d.len()));
    }
    let rounded = round_durations(d, scale)?;
    let idx: Vec<u32> = rounded
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| std::iter::repeat_n(i as u32, n))
        .collect();
    let n = idx.len();
    let idx = Tensor::from_vec(idx, n, x.device())?;
    Ok((x.index_select(&idx, 0)?, rounded))
}

/// `(1/L) Σ (log(d+ε) − log(d̂+ε))²` per item, averaged over the batch.
/// `d`, `d_hat`, `mask`: `(B, L)`.
pub fn duration_loss(d: &Tensor, d_hat: &Tensor, mask: &Tensor, eps: f64) -> Result<Tensor> {
    if d.dims() != d_hat.dims() || d.dims() != mask.dims() {
        return Err(Error::shape("duration loss inputs", d.dims(), d_hat.dims()));
    }
    let diff = ((d + eps)?.log()? - (d_hat + eps)?.log()?)?;
    let per_item = (diff.sqr()? * mask)?.sum(1)?.div(&mask.sum(1)?)?;
    Ok(per_item.mean_all()?)
}

/// Convolutional log-duration predictor with a noise-driven affine output:
/// `log d̂ = μ + exp(log s) · ε · noise_scale`, `ε ~ N(0, 1)` drawn from the
/// caller's seed. With the stochastic switch off, `ε = 0`.
#[derive(Debug, Clone)]
pub struct DurationPredictor {
    pub convs: Vec<Conv1d>,
    pub norms: Vec<LayerNorm>,
    pub proj: Conv1d,
    pub stochastic: bool,
    dropout: f64,
}

impl DurationPredictor {
    pub fn new(
        pb: &ParamBuilder,
        dim: usize,
        channels: usize,
        kernel: usize,
        layers: usize,
        dropout: f64,
        stochastic: bool,
    ) -> Result<Self> {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for i in 0..layers {
            let c_in = if i == 0 { dim } else { channels };
            convs.push(Conv1d::new(&pb.pp(format!("conv.{i}")), c_in, channels, kernel, 1)?);
            norms.push(LayerNorm::new(&pb.pp(format!("norm.{i}")), channels)?);
        }
        let last = if layers == 0 { dim } else { channels };
        // Log-duration mean starts near 2 frames per phoneme.
        let proj = Conv1d::with_init(&pb.pp("proj"), last, 2, 1, 1, Init::Uniform(1e-3), Init::Zeros)?;
        Ok(Self {
            convs,
            norms,
            proj,
            stochastic,
            dropout,
        })
    }

    /// `x_hat`: `(B, L, d₁)` (the caller detaches it during training),
    /// `mask`: `(B, L)`. Returns `(μ, log s)` of log-durations, `(B, L)` each.
    pub fn stats(&self, x_hat: &Tensor, mask: &Tensor, mut rng: Option<&mut ChaCha8Rng>) -> Result<(Tensor, Tensor)> {
        check_finite(x_hat, "duration predictor input")?;
        let m = mask.unsqueeze(1)?;
        let mut h = x_hat.transpose(1, 2)?.broadcast_mul(&m)?;
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            h = conv.forward(&h.broadcast_mul(&m)?)?.relu()?;
            h = norm.forward(&h.transpose(1, 2)?)?.transpose(1, 2)?;
            h = dropout(&h, self.dropout, rng.as_deref_mut())?;
        }
        let out = self.proj.forward(&h.broadcast_mul(&m)?)?;
        let mu = (out.narrow(1, 0, 1)?.squeeze(1)? + 2f64.ln())?;
        let log_s = out.narrow(1, 1, 1)?.squeeze(1)?.clamp(-10.0, 3.0)?;
        Ok((mu, log_s))
    }

    /// Positive durations `(B, L)`. Noise for item `i` comes from stream
    /// `i` of `noise_seed`, so results do not depend on padding.
    pub fn predict(
        &self,
        x_hat: &Tensor,
        mask: &Tensor,
        noise_seed: u64,
        noise_scale: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (mu, log_s) = self.stats(x_hat, mask, rng)?;
        let log_d = if self.stochastic && noise_scale != 0.0 {
            let (b, l) = mu.dims2()?;
            let lengths = lengths_from_mask(mask)?;
            let eps = noise_matrix(noise_seed, &lengths, l, b, mu.dtype(), mu.device())?;
            (mu + (log_s.exp()? * eps)? * noise_scale)?
        } else {
            mu
        };
        Ok(log_d.exp()?)
    }
}

fn lengths_from_mask(mask: &Tensor) -> Result<Vec<usize>> {
    Ok(mask
        .to_dtype(DType::F64)?
        .sum(1)?
        .to_vec1::<f64>()?
        .into_iter()
        .map(|v| v.round() as usize)
        .collect())
}

fn noise_matrix(seed: u64, lengths: &[usize], l: usize, b: usize, dtype: DType, dev: &Device) -> Result<Tensor> {
    let mut v = vec![0f64; b * l];
    for (i, &n) in lengths.iter().enumerate() {
        let mut g = rng::stream(seed, i as u64);
        for (k, e) in rng::normal_vec(&mut g, n).into_iter().enumerate() {
            v[i * l + k] = e;
        }
    }
    Ok(Tensor::from_vec(v, (b, l), dev)?.to_dtype(dtype)?)
}
