//! Waveform decoder, multi-period discriminator and the GAN-side losses.

use candle_core::Tensor;

use crate::nn::{check_finite, leaky_relu, Conv1d, ConvTranspose1d, ParamBuilder};
use crate::{Error, Result};

const SLOPE: f64 = 0.1;
/// Output magnitude bound; keeps samples strictly inside (-1, 1) even when
/// `tanh` saturates in floating point.
pub const WAVE_BOUND: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    pub initial_channels: usize,
    pub upsample_rates: Vec<usize>,
    pub upsample_kernels: Vec<usize>,
    pub resblock_kernels: Vec<usize>,
    pub resblock_dilations: Vec<usize>,
}

#[derive(Debug, Clone)]
struct ResBlock {
    convs1: Vec<Conv1d>,
    convs2: Vec<Conv1d>,
}

impl ResBlock {
    fn new(pb: &ParamBuilder, ch: usize, kernel: usize, dilations: &[usize]) -> Result<Self> {
        let mut convs1 = Vec::new();
        let mut convs2 = Vec::new();
        for (i, &d) in dilations.iter().enumerate() {
            convs1.push(Conv1d::new(&pb.pp(format!("c1.{i}")), ch, ch, kernel, d)?);
            convs2.push(Conv1d::new(&pb.pp(format!("c2.{i}")), ch, ch, kernel, 1)?);
        }
        Ok(Self { convs1, convs2 })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for (c1, c2) in self.convs1.iter().zip(&self.convs2) {
            let xt = c1.forward(&leaky_relu(&x, SLOPE)?)?;
            let xt = c2.forward(&leaky_relu(&xt, SLOPE)?)?;
            x = (xt + x)?;
        }
        Ok(x)
    }
}

/// Transposed-convolution upsampler with multi-receptive-field residual
/// blocks. Input is the latent slice concatenated with `S_global`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub conv_pre: Conv1d,
    ups: Vec<ConvTranspose1d>,
    resblocks: Vec<Vec<ResBlock>>,
    pub conv_post: Conv1d,
    hop: usize,
}

impl Generator {
    pub fn new(pb: &ParamBuilder, in_channels: usize, cfg: &GeneratorConfig) -> Result<Self> {
        if cfg.upsample_rates.len() != cfg.upsample_kernels.len() || cfg.upsample_rates.is_empty() {
            return Err(Error::Config("upsample rates and kernels must be non-empty and equal length".into()));
        }
        let conv_pre = Conv1d::new(&pb.pp("conv_pre"), in_channels, cfg.initial_channels, 7, 1)?;
        let mut ups = Vec::new();
        let mut resblocks = Vec::new();
        let mut ch = cfg.initial_channels;
        for (i, (&u, &k)) in cfg.upsample_rates.iter().zip(&cfg.upsample_kernels).enumerate() {
            if k < u || (k - u) % 2 != 0 {
                return Err(Error::Config(format!(
                    "upsample kernel {k} must exceed rate {u} by an even amount"
                )));
            }
            let out = (ch / 2).max(1);
            ups.push(ConvTranspose1d::new(&pb.pp(format!("up.{i}")), ch, out, k, u, (k - u) / 2)?);
            ch = out;
            let blocks = cfg
                .resblock_kernels
                .iter()
                .enumerate()
                .map(|(j, &rk)| ResBlock::new(&pb.pp(format!("res.{i}.{j}")), ch, rk, &cfg.resblock_dilations))
                .collect::<Result<Vec<_>>>()?;
            resblocks.push(blocks);
        }
        let conv_post = Conv1d::new(&pb.pp("conv_post"), ch, 1, 7, 1)?;
        Ok(Self {
            conv_pre,
            ups,
            resblocks,
            conv_post,
            hop: cfg.upsample_rates.iter().product(),
        })
    }

    /// Samples per latent frame.
    pub fn hop(&self) -> usize {
        self.hop
    }

    /// `z`: `(B, N, T)`, `s_global`: `(B, d_g)` → `(B, 1, T·hop)` in (-1, 1).
    pub fn forward(&self, z: &Tensor, s_global: &Tensor) -> Result<Tensor> {
        check_finite(z, "decoder input")?;
        let (b, _, t) = z.dims3()?;
        let g = s_global.unsqueeze(2)?.broadcast_as((b, s_global.dim(1)?, t))?;
        let mut x = self.conv_pre.forward(&Tensor::cat(&[z, &g], 1)?)?;
        for (up, blocks) in self.ups.iter().zip(&self.resblocks) {
            x = up.forward(&leaky_relu(&x, SLOPE)?)?;
            if !blocks.is_empty() {
                let mut acc: Option<Tensor> = None;
                for rb in blocks {
                    let y = rb.forward(&x)?;
                    acc = Some(match acc {
                        Some(a) => (a + y)?,
                        None => y,
                    });
                }
                x = (acc.expect("non-empty") / blocks.len() as f64)?;
            }
        }
        let y = self.conv_post.forward(&leaky_relu(&x, 0.01)?)?.tanh()?;
        Ok(y.clamp(-WAVE_BOUND, WAVE_BOUND)?)
    }
}

/// One period branch: the waveform is folded into `p` interleaved columns
/// and each column is processed by strided 1-D convolutions (the 2-D
/// `(k, 1)` kernels of the usual formulation).
#[derive(Debug, Clone)]
pub struct PeriodDiscriminator {
    period: usize,
    convs: Vec<Conv1d>,
    post: Conv1d,
}

impl PeriodDiscriminator {
    pub fn new(pb: &ParamBuilder, period: usize, channels: &[usize]) -> Result<Self> {
        let mut convs = Vec::new();
        let mut c_in = 1;
        for (i, &c) in channels.iter().enumerate() {
            let stride = if i + 1 < channels.len() { 3 } else { 1 };
            convs.push(Conv1d::new(&pb.pp(format!("conv.{i}")), c_in, c, 5, 1)?.with_stride(stride, 2));
            c_in = c;
        }
        let post = Conv1d::new(&pb.pp("post"), c_in, 1, 3, 1)?;
        Ok(Self { period, convs, post })
    }

    /// `w`: `(B, 1, S)` → score `(B, ·)` and per-layer features.
    pub fn forward(&self, w: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let (b, _, s) = w.dims3()?;
        let p = self.period;
        let rem = s % p;
        let w = if rem != 0 {
            let n = p - rem;
            if n >= s {
                return Err(Error::Invalid(format!("waveform of {s} samples too short for period {p}")));
            }
            // reflect padding
            let idx: Vec<u32> = (s..s + n).map(|t| (2 * (s - 1) - t) as u32).collect();
            let idx = Tensor::from_vec(idx, n, w.device())?;
            Tensor::cat(&[w, &w.index_select(&idx, 2)?], 2)?
        } else {
            w.clone()
        };
        let t = w.dim(2)? / p;
        let mut x = w.reshape((b, t, p))?.transpose(1, 2)?.reshape((b * p, 1, t))?;
        let mut feats = Vec::new();
        for conv in &self.convs {
            x = leaky_relu(&conv.forward(&x)?, SLOPE)?;
            feats.push(x.clone());
        }
        x = self.post.forward(&x)?;
        feats.push(x.clone());
        let score = x.reshape((b, ()))?;
        Ok((score, feats))
    }
}

/// Scores and features of every period branch.
#[derive(Debug, Clone)]
pub struct DiscriminatorOutput {
    pub scores: Vec<Tensor>,
    pub features: Vec<Vec<Tensor>>,
}

#[derive(Debug, Clone)]
pub struct MultiPeriodDiscriminator {
    pub branches: Vec<PeriodDiscriminator>,
}

impl MultiPeriodDiscriminator {
    pub fn new(pb: &ParamBuilder, periods: &[usize], channels: &[usize]) -> Result<Self> {
        let branches = periods
            .iter()
            .map(|&p| PeriodDiscriminator::new(&pb.pp(format!("p{p}")), p, channels))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { branches })
    }

    pub fn forward(&self, w: &Tensor) -> Result<DiscriminatorOutput> {
        let mut scores = Vec::new();
        let mut features = Vec::new();
        for br in &self.branches {
            let (s, f) = br.forward(w)?;
            scores.push(s);
            features.push(f);
        }
        Ok(DiscriminatorOutput { scores, features })
    }
}

/// Mean absolute error between log-mel spectrograms.
pub fn recon_loss(y: &Tensor, y_hat: &Tensor) -> Result<Tensor> {
    if y.dims() != y_hat.dims() {
        return Err(Error::shape("reconstruction inputs", y.dims(), y_hat.dims()));
    }
    Ok((y - y_hat)?.abs()?.mean_all()?)
}

/// Least-squares generator term `Σ_branches mean((D(ŷ) − 1)²)`.
pub fn generator_adv_loss(fake: &[Tensor]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for s in fake {
        let term = (s - 1.0)?.sqr()?.mean_all()?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Invalid("no discriminator branches".into()))
}

/// Least-squares discriminator term `Σ_branches mean((D(y) − 1)²) + mean(D(ŷ)²)`.
pub fn discriminator_loss(real: &[Tensor], fake: &[Tensor]) -> Result<Tensor> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::shape("discriminator branches", real.len(), fake.len()));
    }
    let mut total: Option<Tensor> = None;
    for (r, f) in real.iter().zip(fake) {
        let term = ((r - 1.0)?.sqr()?.mean_all()? + f.sqr()?.mean_all()?)?;
        total = Some(match total {
            Some(t) => (t + term)?,
            None => term,
        });
    }
    Ok(total.expect("non-empty"))
}

/// `(generator loss, discriminator loss)` from one pair of outputs.
pub fn adv_losses(real: &[Tensor], fake: &[Tensor]) -> Result<(Tensor, Tensor)> {
    Ok((generator_adv_loss(fake)?, discriminator_loss(real, fake)?))
}

/// `Σ_branches Σ_layers mean|D⁽ˡ⁾(y) − D⁽ˡ⁾(ŷ)|`; real features are detached.
pub fn feature_matching_loss(real: &[Vec<Tensor>], fake: &[Vec<Tensor>]) -> Result<Tensor> {
    if real.len() != fake.len() || real.is_empty() {
        return Err(Error::shape("feature branches", real.len(), fake.len()));
    }
    let mut total: Option<Tensor> = None;
    for (rb, fb) in real.iter().zip(fake) {
        if rb.len() != fb.len() {
            return Err(Error::shape("feature layers", rb.len(), fb.len()));
        }
        for (r, f) in rb.iter().zip(fb) {
            if r.dims() != f.dims() {
                return Err(Error::shape("feature map", r.dims(), f.dims()));
            }
            let term = (r.detach() - f)?.abs()?.mean_all()?;
            total = Some(match total {
                Some(t) => (t + term)?,
                None => term,
            });
        }
    }
    Ok(total.expect("non-empty"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub kl: f64,
    pub dur: f64,
    pub adv: f64,
    pub fm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 45.0,
            kl: 1.0,
            dur: 1.0,
            adv: 1.0,
            fm: 1.0,
        }
    }
}

/// The five scalar generator-side terms.
#[derive(Debug, Clone)]
pub struct LossParts {
    pub recon: Tensor,
    pub kl: Tensor,
    pub dur: Tensor,
    pub adv: Tensor,
    pub fm: Tensor,
}

impl LossParts {
    pub fn named(&self) -> [(&'static str, &Tensor); 5] {
        [
            ("recon", &self.recon),
            ("kl", &self.kl),
            ("dur", &self.dur),
            ("adv", &self.adv),
            ("fm", &self.fm),
        ]
    }
}

/// Weighted sum of the parts; a non-finite part aborts with its name.
pub fn total_generator_loss(parts: &LossParts, w: &LossWeights, step: u64) -> Result<Tensor> {
    let weights = [w.recon, w.kl, w.dur, w.adv, w.fm];
    let mut total: Option<Tensor> = None;
    for ((name, t), wt) in parts.named().into_iter().zip(weights) {
        let v = t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: name.to_string(),
                step,
            });
        }
        let term = (t * wt)?;
        total = Some(match total {
            Some(acc) => (acc + term)?,
            None => term,
        });
    }
    Ok(total.expect("five parts"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};

    fn scalar(v: f64) -> Tensor {
        Tensor::new(v, &Device::Cpu).unwrap()
    }

    #[test]
    fn weighted_total() {
        let p = LossParts {
            recon: scalar(1.0),
            kl: scalar(1.0),
            dur: scalar(1.0),
            adv: scalar(1.0),
            fm: scalar(1.0),
        };
        let t = total_generator_loss(&p, &LossWeights::default(), 0).unwrap();
        assert_eq!(t.to_scalar::<f64>().unwrap(), 49.0);
        let unit = LossWeights {
            recon: 1.0,
            ..LossWeights::default()
        };
        assert_eq!(total_generator_loss(&p, &unit, 0).unwrap().to_scalar::<f64>().unwrap(), 5.0);
        let bad = LossParts { kl: scalar(f64::NAN), ..p };
        match total_generator_loss(&bad, &unit, 12) {
            Err(Error::NonFiniteLoss { term, step }) => assert_eq!((term.as_str(), step), ("kl", 12)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lsgan_terms() {
        let half = vec![Tensor::new(&[[0.5f64]], &Device::Cpu).unwrap()];
        assert_eq!(generator_adv_loss(&half).unwrap().to_scalar::<f64>().unwrap(), 0.25);
        let one = vec![Tensor::new(&[[1f64, 1.0]], &Device::Cpu).unwrap()];
        let zero = vec![Tensor::new(&[[0f64, 0.0]], &Device::Cpu).unwrap()];
        let (g, d) = adv_losses(&one, &zero).unwrap();
        assert_eq!(d.to_scalar::<f64>().unwrap(), 0.0);
        assert_eq!(g.to_scalar::<f64>().unwrap(), 1.0);
    }

    #[test]
    fn generator_length_and_bound() {
        let store = ParamStore::new(2, DType::F32);
        let cfg = GeneratorConfig {
            initial_channels: 16,
            upsample_rates: vec![8, 8, 4],
            upsample_kernels: vec![16, 16, 8],
            resblock_kernels: vec![3],
            resblock_dilations: vec![1, 3],
        };
        let g = Generator::new(&store.root(), 6, &cfg).unwrap();
        let z = Tensor::randn(0f32, 1.0, (1, 4, 32), &Device::Cpu).unwrap();
        let s = Tensor::randn(0f32, 1.0, (1, 2), &Device::Cpu).unwrap();
        let y = g.forward(&z, &s).unwrap();
        assert_eq!(y.dims(), &[1, 1, 8192]);
        let m = y.abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(m < 1.0);
    }

    #[test]
    fn discriminator_branches() {
        let store = ParamStore::new(2, DType::F32);
        let d = MultiPeriodDiscriminator::new(&store.root(), &[2, 3, 5, 7, 11], &[4, 8, 8]).unwrap();
        let w = Tensor::randn(0f32, 0.3, (2, 1, 1000), &Device::Cpu).unwrap();
        let a = d.forward(&w).unwrap();
        let b = d.forward(&w).unwrap();
        assert_eq!(a.scores.len(), 5);
        for (fa, fb) in a.features.iter().zip(&b.features) {
            for (x, y) in fa.iter().zip(fb) {
                assert_eq!(x.flatten_all().unwrap().to_vec1::<f32>().unwrap(), y.flatten_all().unwrap().to_vec1::<f32>().unwrap());
            }
        }
        let fm = feature_matching_loss(&a.features, &b.features).unwrap();
        assert_eq!(fm.to_scalar::<f32>().unwrap(), 0.0);
    }
}
