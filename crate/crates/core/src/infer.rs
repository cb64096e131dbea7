//! Text (+ style) to waveform.

use std::path::Path;

use candle_core::{DType, Tensor};

use crate::alignment::round_durations;
use crate::frontend::{Frontend, Language, PhonemeSequence};
use crate::latent::{expand_prior, sample_prior};
use crate::model::ParaStyleTts;
use crate::nn::check_finite;
use crate::prompt::{build_prompt, cache_key, encode_prompt, EncoderBackend, PromptCache, PromptEmbedding, StyleCaptionFields};
use crate::train::load_model;
use crate::{rng, Error, Result};

/// Where the sentence-level style comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum StyleSource {
    /// Caption fields rendered through the prompt template.
    Fields(StyleCaptionFields),
    /// Free-form caption text.
    Prompt(String),
    /// Key of an embedding already present in the prompt cache.
    CacheKey(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub text: String,
    pub language: Language,
    pub style: StyleSource,
    pub duration_scale: f64,
    pub seed: u64,
}

impl SynthesisRequest {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_scale > 0.0) || !self.duration_scale.is_finite() {
            return Err(Error::Invalid(format!(
                "duration_scale must be positive, got {}",
                self.duration_scale
            )));
        }
        if self.text.trim().is_empty() {
            return Err(Error::Invalid("empty text".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub sequence: PhonemeSequence,
    /// Frames per phoneme after rounding.
    pub durations: Vec<usize>,
    pub prompt_key: String,
}

/// A loaded model plus the prompt machinery. Synthesis only reads the
/// model, so one instance can serve requests from several threads.
pub struct Synthesizer {
    pub model: ParaStyleTts,
    pub frontend: Frontend,
    backend: Box<dyn EncoderBackend>,
    cache: Option<PromptCache>,
}

impl Synthesizer {
    pub fn new(model: ParaStyleTts, backend: Box<dyn EncoderBackend>, cache: Option<PromptCache>) -> Self {
        Self {
            model,
            frontend: Frontend::bundled().clone(),
            backend,
            cache,
        }
    }

    /// Loads a checkpoint and the prompt backend its config names.
    pub fn from_checkpoint(path: &Path, cache: Option<PromptCache>) -> Result<Self> {
        let (model, _) = load_model(path)?;
        let backend = model.cfg.prompt_backend()?;
        Ok(Self::new(model, backend, cache))
    }

    pub fn with_frontend(mut self, frontend: Frontend) -> Self {
        self.frontend = frontend;
        self
    }

    pub fn backend(&self) -> &dyn EncoderBackend {
        self.backend.as_ref()
    }

    pub fn cache(&self) -> Option<&PromptCache> {
        self.cache.as_ref()
    }

    /// Embedding for a style source. Captions go through the cache when one
    /// is attached; a cache key must already be present.
    pub fn resolve_style(&self, style: &StyleSource) -> Result<(String, PromptEmbedding)> {
        let text = match style {
            StyleSource::CacheKey(k) => {
                let cache = self.cache.as_ref().ok_or_else(|| Error::CacheMiss(k.clone()))?;
                return Ok((k.clone(), cache.require(k)?));
            }
            StyleSource::Fields(f) => build_prompt(f),
            StyleSource::Prompt(p) => p.clone(),
        };
        match &self.cache {
            Some(c) => {
                let (k, emb, _) = c.get_or_encode(&text, self.backend.as_ref())?;
                Ok((k, emb))
            }
            None => Ok((cache_key(&self.backend.id(), &text), encode_prompt(&text, self.backend.as_ref())?)),
        }
    }

    pub fn synthesize(&self, req: &SynthesisRequest) -> Result<Synthesis> {
        req.validate()?;
        let (key, emb) = self.resolve_style(&req.style)?;
        let sequence = self.frontend.tokenize(req.language, &req.text)?;
        let (samples, durations) = self.synthesize_sequence(&sequence, &emb.vector, req.duration_scale, req.seed)?;
        Ok(Synthesis {
            samples,
            sample_rate: self.model.cfg.sample_rate as u32,
            sequence,
            durations,
            prompt_key: key,
        })
    }

    /// The model part of synthesis for an already tokenized sequence and
    /// prompt embedding. Returns the waveform and rounded durations.
    pub fn synthesize_sequence(
        &self,
        sequence: &PhonemeSequence,
        prompt: &[f32],
        duration_scale: f64,
        seed: u64,
    ) -> Result<(Vec<f32>, Vec<usize>)> {
        let m = &self.model;
        let cfg = &m.cfg;
        let (ph, st, mask) = m.sequence_tensors(sequence)?;
        let s_para = m.prompt_tensor(prompt)?;
        let styled = m.encode_styled(&ph, &st, &mask, &s_para, None)?;
        let d_hat = m.duration.predict(
            &styled.x_hat,
            &mask,
            rng::derive(seed, "duration"),
            cfg.duration_noise_scale,
            None,
        )?;
        let d: Vec<f64> = d_hat.to_dtype(DType::F64)?.squeeze(0)?.to_vec1()?;
        let durations = round_durations(&d, duration_scale)?;
        let l = durations.len();
        let t: usize = durations.iter().sum();
        let mut align = vec![0f32; l * t];
        let mut j = 0;
        for (i, &n) in durations.iter().enumerate() {
            for _ in 0..n {
                align[i * t + j] = 1.0;
                j += 1;
            }
        }
        let align = Tensor::from_vec(align, (1, l, t), m.device())?.to_dtype(m.dtype())?;
        let prior = expand_prior(&m.prior.phoneme_stats(&styled.x_hat)?, &align)?;
        let mut noise = rng::stream(rng::derive(seed, "prior"), 0);
        let z_flow = sample_prior(&prior, &mut noise, cfg.noise_scale)?;
        let frame_mask = Tensor::ones((1, 1, t), m.dtype(), m.device())?;
        let z = m.flow.inverse(&z_flow, &frame_mask, Some(&styled.s_global))?;
        let wave = m.generator.forward(&z, &styled.s_global)?;
        check_finite(&wave, "synthesized waveform")?;
        let samples: Vec<f32> = wave.flatten_all()?.to_dtype(DType::F32)?.to_vec1()?;
        Ok((samples, durations))
    }
}
