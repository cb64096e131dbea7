//! Waveform I/O, resampling and log-mel features.

use std::path::Path;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use rubato::{FftFixedInOut, Resampler};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SAMPLE_RATE: u32 = 22050;
/// Added to the squared magnitude before the square root so the gradient
/// stays finite at zero.
const MAG_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Magnitudes are clamped at this value before the logarithm.
    pub floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            n_fft: 1024,
            win_length: 1024,
            hop_length: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: 11025.0,
            floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft != self.win_length {
            return Err(Error::Config("n_fft must equal win_length".into()));
        }
        if self.hop_length == 0 || self.hop_length > self.win_length {
            return Err(Error::Config("hop_length must be in 1..=win_length".into()));
        }
        if !(self.fmax > self.fmin) || self.fmax > self.sample_rate as f64 / 2.0 {
            return Err(Error::Config("mel range must satisfy fmin < fmax <= sample_rate/2".into()));
        }
        if self.n_mels == 0 || !(self.floor > 0.0) {
            return Err(Error::Config("n_mels and floor must be positive".into()));
        }
        Ok(())
    }

    /// `1 + floor((len − win) / hop)`; inputs shorter than one window are
    /// zero-padded to a single frame.
    pub fn frames(&self, len: usize) -> usize {
        if len <= self.win_length {
            1
        } else {
            1 + (len - self.win_length) / self.hop_length
        }
    }

    fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

fn hz_to_mel(f: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let logstep = 6.4f64.ln() / 27.0;
    if f < 1000.0 {
        f / f_sp
    } else {
        15.0 + (f / 1000.0).ln() / logstep
    }
}

fn mel_to_hz(m: f64) -> f64 {
    let f_sp = 200.0 / 3.0;
    let logstep = 6.4f64.ln() / 27.0;
    if m < 15.0 {
        m * f_sp
    } else {
        1000.0 * ((m - 15.0) * logstep).exp()
    }
}

/// Slaney-style triangular filters with area normalisation, row-major
/// `n_mels × (n_fft/2 + 1)`.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<f64> {
    let bins = cfg.bins();
    let sr = cfg.sample_rate as f64;
    let freqs: Vec<f64> = (0..bins).map(|k| k as f64 * sr / cfg.n_fft as f64).collect();
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let pts: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = vec![0f64; cfg.n_mels * bins];
    for m in 0..cfg.n_mels {
        let (a, b, c) = (pts[m], pts[m + 1], pts[m + 2]);
        let norm = 2.0 / (c - a);
        for (k, &f) in freqs.iter().enumerate() {
            let lower = (f - a) / (b - a);
            let upper = (c - f) / (c - b);
            fb[m * bins + k] = lower.min(upper).max(0.0) * norm;
        }
    }
    fb
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Log-mel spectrogram row-major `n_mels × frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mel {
    pub n_mels: usize,
    pub frames: usize,
    pub data: Vec<f32>,
}

impl Mel {
    pub fn to_tensor(&self, dtype: DType, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.data.clone(), (self.n_mels, self.frames), device)?.to_dtype(dtype)?)
    }
}

/// FFT-based log-mel extractor used for preprocessing.
pub struct MelExtractor {
    cfg: MelConfig,
    window: Vec<f64>,
    fb: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            window: hann(cfg.win_length),
            fb: mel_filterbank(&cfg),
            fft,
            cfg,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn compute(&self, samples: &[f32]) -> Result<Mel> {
        if samples.is_empty() {
            return Err(Error::Audio("cannot compute a spectrogram of an empty waveform".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform".into()));
        }
        let cfg = &self.cfg;
        let frames = cfg.frames(samples.len());
        let bins = cfg.bins();
        let mut out = vec![0f32; cfg.n_mels * frames];
        let mut buf = vec![Complex::new(0f64, 0f64); cfg.n_fft];
        let mut mag = vec![0f64; bins];
        for f in 0..frames {
            let start = f * cfg.hop_length;
            for (i, b) in buf.iter_mut().enumerate() {
                let s = samples.get(start + i).copied().unwrap_or(0.0) as f64;
                *b = Complex::new(s * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (m, b) in mag.iter_mut().zip(&buf) {
                *m = (b.norm_sqr() + MAG_EPS).sqrt();
            }
            for m in 0..cfg.n_mels {
                let row = &self.fb[m * bins..(m + 1) * bins];
                let e: f64 = row.iter().zip(&mag).map(|(w, v)| w * v).sum();
                out[m * frames + f] = e.max(cfg.floor).ln() as f32;
            }
        }
        Ok(Mel {
            n_mels: cfg.n_mels,
            frames,
            data: out,
        })
    }
}

/// Convenience wrapper with the default configuration.
pub fn compute_mel(samples: &[f32]) -> Result<Mel> {
    MelExtractor::new(MelConfig::default())?.compute(samples)
}

/// Differentiable log-mel on `(B, S)` waveforms: windowed DFT as a matmul.
/// Agrees with [`MelExtractor`] up to float rounding.
#[derive(Debug, Clone)]
pub struct MelTransform {
    cfg: MelConfig,
    cos: Tensor,
    sin: Tensor,
    fb: Tensor,
}

impl MelTransform {
    pub fn new(cfg: MelConfig, dtype: DType, device: &Device) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_fft;
        let bins = cfg.bins();
        let w = hann(n);
        let mut c = vec![0f64; n * bins];
        let mut s = vec![0f64; n * bins];
        for i in 0..n {
            for k in 0..bins {
                let a = 2.0 * std::f64::consts::PI * ((i * k) % n) as f64 / n as f64;
                c[i * bins + k] = w[i] * a.cos();
                s[i * bins + k] = -w[i] * a.sin();
            }
        }
        let fb = mel_filterbank(&cfg);
        let fb_t: Vec<f64> = (0..bins)
            .flat_map(|k| (0..cfg.n_mels).map(move |m| (k, m)))
            .map(|(k, m)| fb[m * bins + k])
            .collect();
        Ok(Self {
            cos: Tensor::from_vec(c, (n, bins), device)?.to_dtype(dtype)?,
            sin: Tensor::from_vec(s, (n, bins), device)?.to_dtype(dtype)?,
            fb: Tensor::from_vec(fb_t, (bins, cfg.n_mels), device)?.to_dtype(dtype)?,
            cfg,
        })
    }

    /// `(B, S)` with `S ≥ win` → `(B, n_mels, frames)`.
    pub fn forward(&self, wave: &Tensor) -> Result<Tensor> {
        let (b, s) = wave.dims2()?;
        let cfg = &self.cfg;
        if s < cfg.win_length {
            return Err(Error::shape("mel input samples (at least)", cfg.win_length, s));
        }
        let frames = cfg.frames(s);
        let windows = (0..frames)
            .map(|f| wave.narrow(1, f * cfg.hop_length, cfg.win_length))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let x = Tensor::stack(&windows, 1)?.reshape((b * frames, cfg.win_length))?;
        let re = x.matmul(&self.cos)?;
        let im = x.matmul(&self.sin)?;
        let mag = ((re.sqr()? + im.sqr()?)? + MAG_EPS)?.sqrt()?;
        let mel = mag.matmul(&self.fb)?.clamp(cfg.floor, f64::MAX)?.log()?;
        Ok(mel.reshape((b, frames, cfg.n_mels))?.transpose(1, 2)?.contiguous()?)
    }
}

/// Mirrors `n` samples at each end (edge sample not repeated).
pub fn reflect_pad(samples: &[f32], n: usize) -> Result<Vec<f32>> {
    if n >= samples.len() {
        return Err(Error::Audio(format!(
            "waveform of {} samples too short to reflect-pad by {n}",
            samples.len()
        )));
    }
    let mut out = Vec::with_capacity(samples.len() + 2 * n);
    out.extend(samples[1..=n].iter().rev());
    out.extend_from_slice(samples);
    let len = samples.len();
    out.extend(samples[len - 1 - n..len - 1].iter().rev());
    Ok(out)
}

/// Reads a WAV file as mono `f32` in [-1, 1] plus its sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?,
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?
        }
    };
    let mono = interleaved
        .chunks(channels.max(1))
        .map(|c| c.iter().sum::<f32>() / c.len() as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let err = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(err)?;
    }
    w.finalize().map_err(err)
}

/// Band-limited resampling; output length is `round(len · to / from)`.
pub fn resample(samples: &[f32], from: u32, to: u32) -> Result<Vec<f32>> {
    if from == to {
        return Ok(samples.to_vec());
    }
    let want = ((samples.len() as f64) * to as f64 / from as f64).round() as usize;
    let mut rs = FftFixedInOut::<f64>::new(from as usize, to as usize, 1024, 1)
        .map_err(|e| Error::Audio(format!("resampler: {e}")))?;
    let delay = rs.output_delay();
    let input: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    let mut out: Vec<f64> = Vec::with_capacity(want + delay + 2048);
    let mut pos = 0;
    let err = |e: rubato::ResampleError| Error::Audio(format!("resampler: {e}"));
    while out.len() < want + delay {
        let need = rs.input_frames_next();
        let chunk = if pos + need <= input.len() {
            rs.process(&[&input[pos..pos + need]], None).map_err(err)?
        } else if pos < input.len() {
            rs.process_partial(Some(&[&input[pos..]]), None).map_err(err)?
        } else {
            rs.process_partial::<&[f64]>(None, None).map_err(err)?
        };
        pos += need;
        out.extend_from_slice(&chunk[0]);
    }
    Ok(out[delay..delay + want].iter().map(|&v| v as f32).collect())
}

/// Reads a WAV file and converts it to mono at `target_rate`.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<Vec<f32>> {
    let (samples, sr) = read_wav(path)?;
    resample(&samples, sr, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn framing_rule() {
        let c = MelConfig::default();
        assert_eq!(c.frames(8192), 29);
        assert_eq!(c.frames(100), 1);
        let m = compute_mel(&vec![0.0; 8192]).unwrap();
        assert_eq!(m.frames, 29);
        let floor = (1e-5f64).ln() as f32;
        assert!(m.data.iter().all(|&v| v == floor));
        assert!(compute_mel(&[]).is_err());
    }

    #[test]
    fn tensor_route_matches_fft_route() {
        let wave: Vec<f32> = (0..3000)
            .map(|i| 0.3 * (i as f32 * 0.05).sin() + 0.1 * (i as f32 * 0.31).cos())
            .collect();
        let cfg = MelConfig::default();
        let a = MelExtractor::new(cfg.clone()).unwrap().compute(&wave).unwrap();
        let t = MelTransform::new(cfg, DType::F64, &Device::Cpu).unwrap();
        let x = Tensor::from_vec(wave.iter().map(|&v| v as f64).collect::<Vec<_>>(), (1, 3000), &Device::Cpu).unwrap();
        let b = t.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(b.len(), a.data.len());
        let max = a.data.iter().zip(&b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max);
        assert!(max < 1e-4, "max diff {max}");
    }

    #[test]
    fn resample_halves() {
        let wave: Vec<f32> = (0..44100).map(|i| (i as f32 * 0.01).sin() * 0.5).collect();
        let out = resample(&wave, 44100, 22050).unwrap();
        assert!((out.len() as i64 - 22050).abs() <= 1);
        // a low tone survives resampling
        let mid = out[11025];
        let expect = (22050f32 * 0.01).sin() * 0.5;
        assert!((mid - expect).abs() < 0.02, "{mid} vs {expect}");
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let wave = vec![0.0f32, 0.5, -0.5, 0.999];
        write_wav(&p, &wave, 22050).unwrap();
        let (back, sr) = read_wav(&p).unwrap();
        assert_eq!(sr, 22050);
        for (a, b) in wave.iter().zip(&back) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn reflect_padding() {
        assert_eq!(reflect_pad(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }
}
