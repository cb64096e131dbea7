use std::time::Instant;

use candle_core::{DType, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Batch;
use super::optim::AdamW;
use crate::alignment::{duration_loss, durations_from_alignment, mas_align};
use crate::audio::MelTransform;
use crate::gan::{
    discriminator_loss, feature_matching_loss, generator_adv_loss, recon_loss, total_generator_loss, LossParts,
};
use crate::latent::{alignment_log_likelihood, batch_noise, expand_prior, kl_loss, sample_posterior, GaussianParams};
use crate::model::{Discriminator, ParaStyleTts, StyledText};
use crate::{rng, Error, Result};

/// Everything the generator side computes before the adversarial part.
pub struct ForwardPass {
    pub styled: StyledText,
    pub posterior: GaussianParams,
    pub z: Tensor,
    pub z_flow: Tensor,
    pub log_det: Tensor,
    pub prior: GaussianParams,
    pub durations: Vec<Vec<usize>>,
    pub kl: Tensor,
    pub dur: Tensor,
    /// `(B, N, seg)` posterior-sample windows fed to the decoder.
    pub z_slices: Tensor,
    /// `(B, 1, seg·hop)` matching ground-truth audio.
    pub y_real: Tensor,
    pub segment_starts: Vec<usize>,
}

/// Per-step seed for a named consumer.
pub fn step_seed(seed: u64, step: u64, label: &str) -> u64 {
    rng::derive(seed, &format!("{label}/{step}"))
}

/// Text and prompt encoding, posterior, flow, MAS, prior, KL and duration
/// loss, plus the decoder windows. `train` enables dropout.
pub fn forward_pass(model: &ParaStyleTts, batch: &Batch, seed: u64, step: u64, train: bool) -> Result<ForwardPass> {
    let cfg = &model.cfg;
    let dtype = model.dtype();
    let dev = model.device().clone();
    let mut drop_rng = rng::stream(step_seed(seed, step, "dropout"), 0);
    let drop = if train { Some(&mut drop_rng) } else { None };

    let styled = model.encode_styled(&batch.phonemes, &batch.styles, &batch.text_mask, &batch.s_para, drop)?;
    let mask = &batch.frame_mask;
    let posterior = model.posterior.forward(&batch.mel, &styled.s_global, mask)?;
    let (_, n, t_max) = posterior.mu.dims3()?;
    let noise = batch_noise(
        step_seed(seed, step, "posterior"),
        n,
        &batch.frame_lengths,
        t_max,
        1.0,
        dtype,
        &dev,
    )?;
    let z = sample_posterior(&posterior, &noise)?.broadcast_mul(mask)?;
    let (z_flow, log_det) = model.flow.forward(&z, mask, Some(&styled.s_global))?;

    // Alignment on detached statistics.
    let stats = model.prior.phoneme_stats(&styled.x_hat)?;
    let l_max = stats.mu.dim(2)?;
    let zf = z_flow.detach().to_dtype(DType::F64)?.to_vec3::<f64>()?;
    let mu = stats.mu.detach().to_dtype(DType::F64)?.to_vec3::<f64>()?;
    let ls = stats.log_sigma.detach().to_dtype(DType::F64)?.to_vec3::<f64>()?;
    let b = batch.ids.len();
    let mut dense = vec![0f64; b * l_max * t_max];
    let mut durations = Vec::with_capacity(b);
    let mut d_vals = vec![1f64; b * l_max];
    for i in 0..b {
        let (l, t) = (batch.text_lengths[i], batch.frame_lengths[i]);
        let zf_i: Vec<f64> = zf[i].iter().flat_map(|row| row[..t].to_vec()).collect();
        let mu_i: Vec<f64> = mu[i].iter().flat_map(|row| row[..l].to_vec()).collect();
        let ls_i: Vec<f64> = ls[i].iter().flat_map(|row| row[..l].to_vec()).collect();
        let ll = alignment_log_likelihood(&zf_i, &mu_i, &ls_i, n, l, t);
        let a = mas_align(&ll, l, t)?;
        for (j, &p) in a.path().iter().enumerate() {
            dense[(i * l_max + p) * t_max + j] = 1.0;
        }
        let d = durations_from_alignment(&a);
        if d.iter().sum::<usize>() != t {
            return Err(Error::Invalid(format!("durations of {} do not sum to {t}", batch.ids[i])));
        }
        for (k, &v) in d.iter().enumerate() {
            d_vals[i * l_max + k] = v as f64;
        }
        durations.push(d);
    }
    let align = Tensor::from_vec(dense, (b, l_max, t_max), &dev)?.to_dtype(dtype)?;
    let prior = expand_prior(&stats, &align)?;
    let kl = kl_loss(&z, &z_flow, &log_det, &posterior, &prior, mask)?;

    let mut dur_rng = rng::stream(step_seed(seed, step, "duration-dropout"), 0);
    let d_hat = model.duration.predict(
        &styled.x_hat.detach(),
        &batch.text_mask,
        step_seed(seed, step, "duration"),
        1.0,
        if train { Some(&mut dur_rng) } else { None },
    )?;
    let d_true = Tensor::from_vec(d_vals, (b, l_max), &dev)?.to_dtype(dtype)?;
    let dur = duration_loss(&d_true, &d_hat, &batch.text_mask, cfg.duration_eps)?;

    // Random decoder windows inside each item's valid frames.
    let seg = cfg
        .segment_frames
        .min(*batch.frame_lengths.iter().min().expect("non-empty batch"));
    let hop = cfg.hop_length;
    let mut seg_rng = rng::stream(step_seed(seed, step, "segment"), 0);
    let mut starts = Vec::with_capacity(b);
    let mut slices = Vec::with_capacity(b);
    let mut real = Vec::with_capacity(b * seg * hop);
    for i in 0..b {
        let s = seg_rng.random_range(0..=batch.frame_lengths[i] - seg);
        starts.push(s);
        slices.push(z.narrow(0, i, 1)?.narrow(2, s, seg)?);
        real.extend_from_slice(&batch.audio[i][s * hop..(s + seg) * hop]);
    }
    let z_slices = Tensor::cat(&slices, 0)?;
    let y_real = Tensor::from_vec(real, (b, 1, seg * hop), &dev)?.to_dtype(dtype)?;
    Ok(ForwardPass {
        styled,
        posterior,
        z,
        z_flow,
        log_det,
        prior,
        durations,
        kl,
        dur,
        z_slices,
        y_real,
        segment_starts: starts,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub recon: f64,
    pub kl: f64,
    pub dur: f64,
    pub adv: f64,
    pub fm: f64,
    pub disc: f64,
    pub total: f64,
    pub grad_norm_gen: f64,
    pub grad_norm_disc: f64,
    pub lr: f64,
    /// Σd = T held for every item of the batch.
    pub durations_ok: bool,
    pub seconds: f64,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// One optimisation step: discriminator update, then generator update.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &ParaStyleTts,
    disc: &Discriminator,
    opt_g: &mut AdamW,
    opt_d: &mut AdamW,
    mel_tf: &MelTransform,
    batch: &Batch,
    seed: u64,
    step: u64,
) -> Result<StepMetrics> {
    let started = Instant::now();
    let fp = forward_pass(model, batch, seed, step, true)?;
    let y_hat = model.generator.forward(&fp.z_slices, &fp.styled.s_global)?;

    let real_out = disc.mpd.forward(&fp.y_real)?;
    let fake_out = disc.mpd.forward(&y_hat.detach())?;
    let loss_d = discriminator_loss(&real_out.scores, &fake_out.scores)?;
    let disc_value = scalar(&loss_d)?;
    if !disc_value.is_finite() {
        return Err(Error::NonFiniteLoss {
            term: "disc".into(),
            step,
        });
    }
    let grads_d = loss_d.backward()?;
    let grad_norm_disc = opt_d.step(&grads_d)?;
    drop(grads_d);

    let mel_real = mel_tf.forward(&fp.y_real.squeeze(1)?)?;
    let mel_fake = mel_tf.forward(&y_hat.squeeze(1)?)?;
    let recon = recon_loss(&mel_real.detach(), &mel_fake)?;
    let real_out = disc.mpd.forward(&fp.y_real)?;
    let fake_out = disc.mpd.forward(&y_hat)?;
    let adv = generator_adv_loss(&fake_out.scores)?;
    let fm = feature_matching_loss(&real_out.features, &fake_out.features)?;
    let parts = LossParts {
        recon,
        kl: fp.kl.clone(),
        dur: fp.dur.clone(),
        adv,
        fm,
    };
    let total = total_generator_loss(&parts, &model.cfg.loss_weights(), step)?;
    let grads_g = total.backward()?;
    let grad_norm_gen = opt_g.step(&grads_g)?;

    let durations_ok = fp
        .durations
        .iter()
        .zip(&batch.frame_lengths)
        .all(|(d, &t)| d.iter().sum::<usize>() == t);
    Ok(StepMetrics {
        step,
        recon: scalar(&parts.recon)?,
        kl: scalar(&parts.kl)?,
        dur: scalar(&parts.dur)?,
        adv: scalar(&parts.adv)?,
        fm: scalar(&parts.fm)?,
        disc: disc_value,
        total: scalar(&total)?,
        grad_norm_gen,
        grad_norm_disc,
        lr: opt_g.lr(),
        durations_ok,
        seconds: started.elapsed().as_secs_f64(),
    })
}
