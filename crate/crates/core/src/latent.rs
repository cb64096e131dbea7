//! Posterior encoder, affine-coupling flow, alignment-expanded prior and
//! the Monte-Carlo KL term.

use candle_core::{DType, Tensor};
use rand_chacha::ChaCha8Rng;

use crate::nn::{check_finite, Conv1d, Init, Linear, ParamBuilder, WaveNet};
use crate::{rng, Error, Result};

/// Lower bound on every predicted standard deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian stored as mean and log standard deviation,
/// `(B, N, T)` each.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

impl GaussianParams {
    /// Builds from explicit standard deviations; every entry must be > 0.
    pub fn from_sigma(mu: Tensor, sigma: Tensor) -> Result<Self> {
        if mu.dims() != sigma.dims() {
            return Err(Error::shape("gaussian sigma", mu.dims(), sigma.dims()));
        }
        let min = sigma.min_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !(min > 0.0) {
            return Err(Error::Invalid(format!("standard deviation must be positive, found {min}")));
        }
        Ok(Self {
            log_sigma: sigma.log()?,
            mu,
        })
    }

    fn from_raw(mu: Tensor, raw_log_sigma: Tensor) -> Result<Self> {
        Ok(Self {
            mu,
            log_sigma: raw_log_sigma.maximum(SIGMA_FLOOR.ln())?,
        })
    }

    pub fn sigma(&self) -> Result<Tensor> {
        Ok(self.log_sigma.exp()?)
    }

    /// Elementwise `log N(x; μ, σ)`.
    pub fn log_density(&self, x: &Tensor) -> Result<Tensor> {
        let z = ((x - &self.mu)? * (self.log_sigma.neg()?.exp()?))?;
        Ok(((z.sqr()? * -0.5)? - &self.log_sigma)?.affine(1.0, -HALF_LOG_2PI)?)
    }
}

/// `Z = μ + σ ⊙ ε`.
pub fn sample_posterior(params: &GaussianParams, noise: &Tensor) -> Result<Tensor> {
    if noise.dims() != params.mu.dims() {
        return Err(Error::shape("posterior noise", params.mu.dims(), noise.dims()));
    }
    Ok((&params.mu + (params.sigma()? * noise)?)?)
}

/// Standard normal noise for a padded batch: item `i` draws its `n × len_i`
/// block from its own stream, so padding never changes an item's draws.
pub fn batch_noise(
    seed: u64,
    channels: usize,
    lengths: &[usize],
    t_max: usize,
    scale: f64,
    dtype: DType,
    device: &candle_core::Device,
) -> Result<Tensor> {
    let mut out = vec![0f64; lengths.len() * channels * t_max];
    for (i, &len) in lengths.iter().enumerate() {
        let mut g = rng::stream(seed, i as u64);
        let draws = rng::normal_vec(&mut g, channels * len);
        for c in 0..channels {
            for t in 0..len {
                out[(i * channels + c) * t_max + t] = scale * draws[c * len + t];
            }
        }
    }
    Ok(Tensor::from_vec(out, (lengths.len(), channels, t_max), device)?.to_dtype(dtype)?)
}

/// Spectrogram → `(μ, σ)`; `S_global` is concatenated channel-wise to the
/// input frames.
#[derive(Debug, Clone)]
pub struct PosteriorEncoder {
    pub pre: Conv1d,
    pub body: WaveNet,
    pub proj: Conv1d,
    latent: usize,
}

impl PosteriorEncoder {
    pub fn new(
        pb: &ParamBuilder,
        mel_bins: usize,
        global_dim: usize,
        hidden: usize,
        latent: usize,
        kernel: usize,
        layers: usize,
    ) -> Result<Self> {
        Ok(Self {
            pre: Conv1d::new(&pb.pp("pre"), mel_bins + global_dim, hidden, 1, 1)?,
            body: WaveNet::new(&pb.pp("wn"), hidden, kernel, 1, layers, 0)?,
            proj: Conv1d::new(&pb.pp("proj"), hidden, 2 * latent, 1, 1)?,
            latent,
        })
    }

    /// `mel`: `(B, F, T)`, `s_global`: `(B, d_g)`, `mask`: `(B, 1, T)`.
    pub fn forward(&self, mel: &Tensor, s_global: &Tensor, mask: &Tensor) -> Result<GaussianParams> {
        check_finite(mel, "posterior spectrogram")?;
        let (b, _, t) = mel.dims3()?;
        let g = s_global.unsqueeze(2)?.broadcast_as((b, s_global.dim(1)?, t))?;
        let x = Tensor::cat(&[mel, &g], 1)?;
        let h = self.pre.forward(&x)?.broadcast_mul(mask)?;
        let h = self.body.forward(&h, mask, None)?;
        let stats = self.proj.forward(&h)?.broadcast_mul(mask)?;
        let mu = stats.narrow(1, 0, self.latent)?;
        let raw = stats.narrow(1, self.latent, self.latent)?;
        GaussianParams::from_raw(mu, raw)
    }
}

/// Affine coupling: the second half of the channels is scaled and shifted
/// by a network reading the first half (and `S_global`).
#[derive(Debug, Clone)]
pub struct AffineCoupling {
    pub pre: Conv1d,
    pub body: WaveNet,
    /// Zero-initialised so that a fresh layer is the identity.
    pub post: Conv1d,
    half: usize,
}

impl AffineCoupling {
    pub fn new(
        pb: &ParamBuilder,
        channels: usize,
        hidden: usize,
        kernel: usize,
        layers: usize,
        cond: usize,
    ) -> Result<Self> {
        if channels % 2 != 0 {
            return Err(Error::Config(format!("flow channels {channels} must be even")));
        }
        let half = channels / 2;
        Ok(Self {
            pre: Conv1d::new(&pb.pp("pre"), half, hidden, 1, 1)?,
            body: WaveNet::new(&pb.pp("wn"), hidden, kernel, 1, layers, cond)?,
            post: Conv1d::with_init(&pb.pp("post"), hidden, 2 * half, 1, 1, Init::Zeros, Init::Zeros)?,
            half,
        })
    }

    fn stats(&self, x0: &Tensor, mask: &Tensor, g: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let h = self.pre.forward(x0)?.broadcast_mul(mask)?;
        let h = self.body.forward(&h, mask, g)?;
        let st = self.post.forward(&h)?.broadcast_mul(mask)?;
        Ok((st.narrow(1, 0, self.half)?, st.narrow(1, self.half, self.half)?))
    }

    /// Returns the output and the per-item log-determinant `(B,)`.
    pub fn forward(&self, x: &Tensor, mask: &Tensor, g: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let x0 = x.narrow(1, 0, self.half)?;
        let x1 = x.narrow(1, self.half, self.half)?;
        let (m, logs) = self.stats(&x0, mask, g)?;
        let y1 = (m + (x1 * logs.exp()?)?)?.broadcast_mul(mask)?;
        let log_det = logs.sum((1, 2))?;
        Ok((Tensor::cat(&[&x0, &y1], 1)?, log_det))
    }

    pub fn inverse(&self, y: &Tensor, mask: &Tensor, g: Option<&Tensor>) -> Result<Tensor> {
        let y0 = y.narrow(1, 0, self.half)?;
        let y1 = y.narrow(1, self.half, self.half)?;
        let (m, logs) = self.stats(&y0, mask, g)?;
        let x1 = ((y1 - m)? * logs.neg()?.exp()?)?.broadcast_mul(mask)?;
        Ok(Tensor::cat(&[&y0, &x1], 1)?)
    }
}

fn flip_channels(x: &Tensor) -> Result<Tensor> {
    let c = x.dim(1)?;
    let idx = Tensor::from_vec((0..c as u32).rev().collect::<Vec<_>>(), c, x.device())?;
    Ok(x.index_select(&idx, 1)?)
}

/// Stack of couplings, each followed by a channel flip.
#[derive(Debug, Clone)]
pub struct Flow {
    pub couplings: Vec<AffineCoupling>,
}

impl Flow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pb: &ParamBuilder,
        channels: usize,
        hidden: usize,
        kernel: usize,
        layers: usize,
        flows: usize,
        cond: usize,
    ) -> Result<Self> {
        let couplings = (0..flows)
            .map(|i| AffineCoupling::new(&pb.pp(format!("coupling.{i}")), channels, hidden, kernel, layers, cond))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { couplings })
    }

    /// `Z → (Z_flow, log_det)` with `log_det` of shape `(B,)`.
    pub fn forward(&self, z: &Tensor, mask: &Tensor, g: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        check_finite(z, "flow input")?;
        let mut x = z.clone();
        let mut log_det = Tensor::zeros(z.dim(0)?, z.dtype(), z.device())?;
        for c in &self.couplings {
            let (y, ld) = c.forward(&x, mask, g)?;
            log_det = (log_det + ld)?;
            x = flip_channels(&y)?;
        }
        Ok((x, log_det))
    }

    pub fn inverse(&self, z_flow: &Tensor, mask: &Tensor, g: Option<&Tensor>) -> Result<Tensor> {
        check_finite(z_flow, "flow inverse input")?;
        let mut x = z_flow.clone();
        for c in self.couplings.iter().rev() {
            x = c.inverse(&flip_channels(&x)?, mask, g)?;
        }
        Ok(x)
    }
}

/// Per-phoneme prior statistics from the style-integrated phonemes.
#[derive(Debug, Clone)]
pub struct PriorHead {
    pub proj: Linear,
    latent: usize,
}

impl PriorHead {
    pub fn new(pb: &ParamBuilder, dim: usize, latent: usize) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(&pb.pp("proj"), dim, 2 * latent)?,
            latent,
        })
    }

    /// `x_hat`: `(B, L, d₁)` → phoneme-rate `(μ, log σ)`, each `(B, N, L)`.
    pub fn phoneme_stats(&self, x_hat: &Tensor) -> Result<GaussianParams> {
        let st = self.proj.forward(x_hat)?.transpose(1, 2)?;
        GaussianParams::from_raw(
            st.narrow(1, 0, self.latent)?.contiguous()?,
            st.narrow(1, self.latent, self.latent)?.contiguous()?,
        )
    }
}

/// Expands phoneme-rate statistics `(B, N, L)` to frame rate with a dense
/// alignment `(B, L, T)`: frame `j` takes the statistics of its phoneme.
pub fn expand_prior(stats: &GaussianParams, alignment: &Tensor) -> Result<GaussianParams> {
    let (b, _, l) = stats.mu.dims3()?;
    let (ab, al, _) = alignment.dims3()?;
    if ab != b || al != l {
        return Err(Error::shape("alignment (batch, phonemes)", (b, l), (ab, al)));
    }
    Ok(GaussianParams {
        mu: stats.mu.matmul(alignment)?,
        log_sigma: stats.log_sigma.matmul(alignment)?,
    })
}

/// `(Σ mask·(log q(Z) − log p(Z_flow)) − Σ log_det) / Σ mask`, i.e. the
/// Monte-Carlo KL per unmasked frame.
pub fn kl_loss(
    z: &Tensor,
    z_flow: &Tensor,
    log_det: &Tensor,
    post: &GaussianParams,
    prior: &GaussianParams,
    mask: &Tensor,
) -> Result<Tensor> {
    for (name, t) in [("z_flow", z_flow), ("posterior", &post.mu), ("prior", &prior.mu)] {
        if t.dims() != z.dims() {
            return Err(Error::shape(name, z.dims(), t.dims()));
        }
    }
    let diff = (post.log_density(z)? - prior.log_density(z_flow)?)?;
    let num = (diff.broadcast_mul(mask)?.sum_all()? - log_det.sum_all()?)?;
    Ok((num / mask.sum_all()?)?)
}

/// Frame log-likelihoods `(L, T)` of one item's `Z_flow` `(N, T)` under the
/// phoneme priors `(N, L)`, summed over channels. Used to score MAS paths.
pub fn alignment_log_likelihood(z_flow: &[f64], mu: &[f64], log_sigma: &[f64], n: usize, l: usize, t: usize) -> Vec<f64> {
    let mut out = vec![0f64; l * t];
    for p in 0..l {
        for c in 0..n {
            let m = mu[c * l + p];
            let ls = log_sigma[c * l + p];
            let inv = (-2.0 * ls).exp();
            let base = -HALF_LOG_2PI - ls;
            let row = &mut out[p * t..(p + 1) * t];
            let zc = &z_flow[c * t..(c + 1) * t];
            for (o, &z) in row.iter_mut().zip(zc) {
                let d = z - m;
                *o += base - 0.5 * d * d * inv;
            }
        }
    }
    out
}

/// Draws prior noise for inference: `μ + σ ⊙ ε · scale`.
pub fn sample_prior(params: &GaussianParams, rng: &mut ChaCha8Rng, scale: f64) -> Result<Tensor> {
    let eps = rng::normal_tensor(rng, params.mu.dims(), params.mu.dtype(), params.mu.device())?;
    Ok((&params.mu + ((params.sigma()? * eps)? * scale)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn one_dimensional_kl_value() {
        let dev = Device::Cpu;
        let z = Tensor::new(&[[[0f64]]], &dev).unwrap();
        let post = GaussianParams::from_sigma(z.clone(), z.ones_like().unwrap()).unwrap();
        let prior = GaussianParams::from_sigma(z.ones_like().unwrap(), z.ones_like().unwrap()).unwrap();
        let mask = z.ones_like().unwrap();
        let ld = Tensor::zeros(1, DType::F64, &dev).unwrap();
        let kl = kl_loss(&z, &z, &ld, &post, &prior, &mask).unwrap().to_scalar::<f64>().unwrap();
        assert!((kl - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sigma_must_be_positive() {
        let dev = Device::Cpu;
        let mu = Tensor::new(&[1f64, 2.0], &dev).unwrap();
        let sigma = Tensor::new(&[1f64, 0.0], &dev).unwrap();
        assert!(GaussianParams::from_sigma(mu, sigma).is_err());
    }

    #[test]
    fn zero_noise_gives_mean() {
        let dev = Device::Cpu;
        let mu = Tensor::new(&[[[0.3f64, -1.0]]], &dev).unwrap();
        let p = GaussianParams::from_sigma(mu.clone(), (mu.ones_like().unwrap() * 2.0).unwrap()).unwrap();
        let z = sample_posterior(&p, &mu.zeros_like().unwrap()).unwrap();
        assert_eq!(z.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![0.3, -1.0]);
    }

    #[test]
    fn batch_noise_ignores_padding() {
        let dev = Device::Cpu;
        let a = batch_noise(5, 2, &[3, 4], 4, 1.0, DType::F64, &dev).unwrap();
        let b = batch_noise(5, 2, &[3, 4], 9, 1.0, DType::F64, &dev).unwrap();
        let a0 = a.narrow(2, 0, 4).unwrap().to_vec3::<f64>().unwrap();
        let b0 = b.narrow(2, 0, 4).unwrap().to_vec3::<f64>().unwrap();
        assert_eq!(a0, b0);
    }
}
