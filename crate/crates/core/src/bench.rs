//! Attention-cost benchmark, parameter counting and inference measurement.

use std::collections::BTreeMap;
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use serde::Serialize;

use crate::frontend::Language;
use crate::infer::{StyleSource, Synthesizer};
use crate::nn::{softmax_last_dim, ParamStore};
use crate::{rng, Error, Result};

/// Multiply-add FLOPs of the score (`QKᵀ`) and mixing (`AV`) products of
/// one self-attention layer over `len` positions of width `d`.
pub fn attention_flops(d: usize, len: usize) -> u128 {
    4 * d as u128 * (len as u128) * (len as u128)
}

/// Per-layer constant `c` with `joint − separate = 2·c·N·M`.
pub fn flop_constant(d: usize) -> u128 {
    4 * d as u128
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GridPoint {
    pub n: usize,
    pub m: usize,
    pub flops_separate: u128,
    pub flops_joint: u128,
    pub flops_difference: u128,
    /// `2·c·N·M·layers`.
    pub flops_expected_difference: u128,
    pub identity_holds: bool,
    pub flop_ratio: f64,
    pub seconds_separate: f64,
    pub seconds_joint: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CostFit {
    /// Seconds per unit of `N² + M²` (separate encoding).
    pub c1: f64,
    /// Seconds per unit of `(N + M)²` (joint encoding).
    pub c2: f64,
    pub r2_separate: f64,
    pub r2_joint: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ComplexityReport {
    pub d: usize,
    pub layers: usize,
    pub repeats: usize,
    pub n_list: Vec<usize>,
    pub m_list: Vec<usize>,
    pub per_layer_constant: u128,
    pub grid: Vec<GridPoint>,
    pub identity_holds: bool,
    pub fit: CostFit,
    pub seconds: f64,
}

/// `layers` single-head attention layers with random projections.
struct ToyAttention {
    layers: Vec<[Tensor; 3]>,
    d: usize,
}

impl ToyAttention {
    fn new(d: usize, layers: usize, seed: u64) -> Result<Self> {
        let mut g = rng::stream(seed, 0);
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = Vec::with_capacity(layers);
        for _ in 0..layers {
            let mk = |g: &mut _| -> Result<Tensor> {
                Ok((rng::normal_tensor(g, &[d, d], DType::F32, &Device::Cpu)? * scale)?)
            };
            out.push([mk(&mut g)?, mk(&mut g)?, mk(&mut g)?]);
        }
        Ok(Self { layers: out, d })
    }

    fn run(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let s = 1.0 / (self.d as f64).sqrt();
        for [wq, wk, wv] in &self.layers {
            let q = h.matmul(wq)?;
            let k = h.matmul(wk)?;
            let v = h.matmul(wv)?;
            let a = softmax_last_dim(&(q.matmul(&k.t()?)? * s)?)?;
            h = a.matmul(&v)?;
        }
        Ok(h)
    }
}

fn time_it(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let start = Instant::now();
    for _ in 0..repeats {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() / repeats as f64)
}

/// Least-squares slope through the origin and its R².
fn fit_origin(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let c = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - c * a).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (c, r2)
}

/// Separate encoding (self-attention over N, then over M) against joint
/// encoding over N + M. FLOPs are exact; wall-clock is informational.
pub fn bench_complexity(n_list: &[usize], m_list: &[usize], d: usize, layers: usize, repeats: usize) -> Result<ComplexityReport> {
    if n_list.is_empty() || m_list.is_empty() {
        return Err(Error::Invalid("N and M lists must be non-empty".into()));
    }
    if d == 0 || layers == 0 || repeats == 0 {
        return Err(Error::Invalid("d, layers and repeats must be positive".into()));
    }
    let started = Instant::now();
    let stack = ToyAttention::new(d, layers, 7)?;
    let c = flop_constant(d);
    let mut g = rng::stream(11, 0);
    let mut grid = Vec::new();
    for &n in n_list {
        for &m in m_list {
            if n + m == 0 {
                return Err(Error::Invalid("N + M must be positive".into()));
            }
            let l = layers as u128;
            let sep = l * (attention_flops(d, n) + attention_flops(d, m));
            let joint = l * attention_flops(d, n + m);
            let expected = l * 2 * c * n as u128 * m as u128;
            let xn = rng::normal_tensor(&mut g, &[n.max(1), d], DType::F32, &Device::Cpu)?;
            let xm = rng::normal_tensor(&mut g, &[m.max(1), d], DType::F32, &Device::Cpu)?;
            let xj = rng::normal_tensor(&mut g, &[n + m, d], DType::F32, &Device::Cpu)?;
            let seconds_separate = time_it(repeats, || {
                if n > 0 {
                    stack.run(&xn)?;
                }
                if m > 0 {
                    stack.run(&xm)?;
                }
                Ok(())
            })?;
            let seconds_joint = time_it(repeats, || stack.run(&xj).map(|_| ()))?;
            grid.push(GridPoint {
                n,
                m,
                flops_separate: sep,
                flops_joint: joint,
                flops_difference: joint - sep,
                flops_expected_difference: expected,
                identity_holds: joint - sep == expected,
                flop_ratio: joint as f64 / sep as f64,
                seconds_separate,
                seconds_joint,
            });
        }
    }
    let xs: Vec<f64> = grid.iter().map(|p| (p.n * p.n + p.m * p.m) as f64).collect();
    let ys: Vec<f64> = grid.iter().map(|p| p.seconds_separate).collect();
    let xj: Vec<f64> = grid.iter().map(|p| ((p.n + p.m) * (p.n + p.m)) as f64).collect();
    let yj: Vec<f64> = grid.iter().map(|p| p.seconds_joint).collect();
    let (c1, r2_separate) = fit_origin(&xs, &ys);
    let (c2, r2_joint) = fit_origin(&xj, &yj);
    Ok(ComplexityReport {
        d,
        layers,
        repeats,
        n_list: n_list.to_vec(),
        m_list: m_list.to_vec(),
        per_layer_constant: c,
        identity_holds: grid.iter().all(|p| p.identity_holds),
        grid,
        fit: CostFit {
            c1,
            c2,
            r2_separate,
            r2_joint,
        },
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ParameterCount {
    pub total: usize,
    /// Keyed by the first component of the parameter name.
    pub per_module: BTreeMap<String, usize>,
}

/// Trainable scalars; frozen parameters are excluded.
pub fn count_parameters(store: &ParamStore) -> ParameterCount {
    let mut per_module = BTreeMap::new();
    let mut total = 0;
    for (name, var) in store.trainable() {
        let n = var.elem_count();
        total += n;
        let top = name.split('.').next().unwrap_or(&name).to_string();
        *per_module.entry(top).or_insert(0) += n;
    }
    ParameterCount { total, per_module }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct LatencyStats {
    pub runs: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles over `ms`.
    pub fn from_samples(ms: &[f64]) -> Result<Self> {
        if ms.is_empty() {
            return Err(Error::Invalid("no timing samples".into()));
        }
        let mut v = ms.to_vec();
        v.sort_by(|a, b| a.total_cmp(b));
        let rank = |p: f64| v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1];
        Ok(Self {
            runs: v.len(),
            mean_ms: v.iter().sum::<f64>() / v.len() as f64,
            p50_ms: rank(0.5),
            p95_ms: rank(0.95),
        })
    }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ResourceReport {
    pub methodology: String,
    pub config_hash: String,
    pub device: String,
    pub batch_size: usize,
    pub sentence_count: usize,
    pub warmup_runs: usize,
    pub parameters: ParameterCount,
    /// `None` when the backend cannot report its size.
    pub prompt_encoder_parameters: Option<u64>,
    pub latency_with_prompt_encoder: LatencyStats,
    pub latency_without_prompt_encoder: LatencyStats,
    pub mean_audio_seconds: f64,
    pub real_time_factor: f64,
    pub peak_memory_bytes: Option<u64>,
}

/// Peak resident set size of this process (Linux `VmHWM`).
pub fn peak_memory_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Parses `lang|text` lines (a bare line is English); blank lines and
/// `#` comments are skipped.
pub fn parse_sentences(text: &str) -> Result<Vec<(Language, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('|') {
            Some((lang, t)) => {
                let lang = lang
                    .parse::<Language>()
                    .map_err(|e| Error::Invalid(format!("line {}: {e}", i + 1)))?;
                out.push((lang, t.trim().to_string()));
            }
            None => out.push((Language::En, line.to_string())),
        }
    }
    Ok(out)
}

/// Sentence-by-sentence latency at batch size one. Each sentence is run
/// `warmup` times untimed first. The "with" figure includes encoding the
/// caption; the "without" figure reuses the embedding, as a prompt cache would.
pub fn measure_inference(
    synth: &Synthesizer,
    sentences: &[(Language, String)],
    style: &StyleSource,
    warmup: usize,
    seed: u64,
) -> Result<ResourceReport> {
    if sentences.is_empty() {
        return Err(Error::Invalid("no sentences to measure".into()));
    }
    let caption = match style {
        StyleSource::Prompt(p) => p.clone(),
        StyleSource::Fields(f) => crate::prompt::build_prompt(f),
        StyleSource::CacheKey(_) => return Err(Error::Invalid("measurement needs caption text, not a cache key".into())),
    };
    let backend = synth.backend();
    let mut with_pe = Vec::new();
    let mut without_pe = Vec::new();
    let mut audio_seconds = 0.0;
    let sr = synth.model.cfg.sample_rate as f64;
    for (lang, text) in sentences {
        let seq = synth.frontend.tokenize(*lang, text)?;
        let emb = crate::prompt::encode_prompt(&caption, backend)?;
        for _ in 0..warmup {
            synth.synthesize_sequence(&seq, &emb.vector, 1.0, seed)?;
        }
        let t = Instant::now();
        let fresh = crate::prompt::encode_prompt(&caption, backend)?;
        let (wave, _) = synth.synthesize_sequence(&seq, &fresh.vector, 1.0, seed)?;
        with_pe.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        synth.synthesize_sequence(&seq, &emb.vector, 1.0, seed)?;
        without_pe.push(t.elapsed().as_secs_f64() * 1e3);
        audio_seconds += wave.len() as f64 / sr;
    }
    let without = LatencyStats::from_samples(&without_pe)?;
    let mean_audio = audio_seconds / sentences.len() as f64;
    Ok(ResourceReport {
        methodology: format!(
            "CPU, single thread; each sentence synthesized individually at batch size 1; \
             {warmup} untimed warmup run(s) per sentence; one timed run with and one without \
             prompt encoding per sentence; percentiles by nearest rank; peak memory is process VmHWM"
        ),
        config_hash: synth.model.cfg.schema_hash(),
        device: "cpu".into(),
        batch_size: 1,
        sentence_count: sentences.len(),
        warmup_runs: warmup,
        parameters: count_parameters(&synth.model.store),
        prompt_encoder_parameters: backend.parameter_count(),
        latency_with_prompt_encoder: LatencyStats::from_samples(&with_pe)?,
        real_time_factor: without.mean_ms / 1e3 / mean_audio.max(1e-9),
        latency_without_prompt_encoder: without,
        mean_audio_seconds: mean_audio,
        peak_memory_bytes: peak_memory_bytes(),
    })
}
