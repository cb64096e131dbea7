use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};

use crate::audio::{load_audio, reflect_pad, Mel, MelExtractor};
use crate::config::Config;
use crate::frontend::{Frontend, Language, PhonemeSequence};
use crate::prompt::{build_prompt, Age, Emotion, EncoderBackend, Gender, PromptCache, StyleCaptionFields};
use crate::{Error, Result};

/// One parsed manifest line `id|audio_path|language|age|gender|emotion|text`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub line: usize,
    pub id: String,
    pub audio_path: PathBuf,
    pub language: Language,
    pub fields: StyleCaptionFields,
    pub text: String,
}

/// Parses every line; relative audio paths are resolved against `base`.
/// All problems are collected and reported together.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = raw.splitn(7, '|').collect();
        if parts.len() != 7 {
            errors.push(format!("line {line}: expected 7 '|'-separated fields, found {}", parts.len()));
            continue;
        }
        let mut line_errors = Vec::new();
        let language = parts[2].parse::<Language>().map_err(|e| line_errors.push(e.to_string())).ok();
        let age = parts[3].parse::<Age>().map_err(|e| line_errors.push(e.to_string())).ok();
        let gender = parts[4].parse::<Gender>().map_err(|e| line_errors.push(e.to_string())).ok();
        let emotion = parts[5].parse::<Emotion>().map_err(|e| line_errors.push(e.to_string())).ok();
        let path = {
            let p = PathBuf::from(parts[1].trim());
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        if !path.is_file() {
            line_errors.push(format!("audio file {} not found", path.display()));
        }
        if parts[0].trim().is_empty() {
            line_errors.push("empty utterance id".into());
        }
        if parts[6].trim().is_empty() {
            line_errors.push("empty text".into());
        }
        if !line_errors.is_empty() {
            errors.extend(line_errors.into_iter().map(|e| format!("line {line}: {e}")));
            continue;
        }
        let language = language.expect("checked");
        out.push(ManifestEntry {
            line,
            id: parts[0].trim().to_string(),
            audio_path: path,
            language,
            fields: StyleCaptionFields {
                age: age.expect("checked"),
                gender: gender.expect("checked"),
                accent: language.name().to_string(),
                emotion: emotion.expect("checked"),
            },
            text: parts[6].trim().to_string(),
        });
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Manifest(errors))
    }
}

/// A fully preprocessed utterance.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub id: String,
    pub text: String,
    pub language: Language,
    pub fields: StyleCaptionFields,
    pub audio_path: PathBuf,
    pub prompt: String,
    pub prompt_key: String,
    pub prompt_embedding: Vec<f32>,
    pub sequence: PhonemeSequence,
    /// Mono samples at the configured rate, trimmed to whole frames.
    pub audio: Vec<f32>,
    /// Log-mel of the reflect-padded audio; frame `j` is centred on
    /// samples `[j·hop, (j+1)·hop)`.
    pub mel: Mel,
}

impl TrainingExample {
    pub fn frames(&self) -> usize {
        self.mel.frames
    }
}

/// Mel frames aligned with hop-sized sample blocks: the waveform is
/// reflect-padded by `(win − hop)/2` on both sides before framing.
pub fn aligned_mel(extractor: &MelExtractor, audio: &[f32]) -> Result<Mel> {
    let cfg = extractor.config();
    let pad = (cfg.win_length - cfg.hop_length) / 2;
    extractor.compute(&reflect_pad(audio, pad)?)
}

/// Reads, resamples and featurizes every manifest entry. Errors of all
/// lines are reported together and abort ingestion.
pub fn ingest_manifest(
    path: &Path,
    cfg: &Config,
    frontend: &Frontend,
    backend: &dyn EncoderBackend,
    cache: Option<&PromptCache>,
) -> Result<Vec<TrainingExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, base)?;
    let extractor = MelExtractor::new(cfg.mel())?;
    let hop = cfg.hop_length;
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for e in entries {
        let res = (|| -> Result<TrainingExample> {
            let sequence = frontend.tokenize(e.language, &e.text)?;
            let mut audio = load_audio(&e.audio_path, cfg.sample_rate as u32)?;
            let frames = audio.len() / hop;
            if frames < sequence.len() {
                return Err(Error::Audio(format!(
                    "{} frames of audio cannot cover {} phonemes",
                    frames,
                    sequence.len()
                )));
            }
            audio.truncate(frames * hop);
            let mel = aligned_mel(&extractor, &audio)?;
            debug_assert_eq!(mel.frames, frames);
            let prompt = build_prompt(&e.fields);
            let (prompt_key, emb) = match cache {
                Some(c) => {
                    let (k, emb, _) = c.get_or_encode(&prompt, backend)?;
                    (k, emb)
                }
                None => (
                    crate::prompt::cache_key(&backend.id(), &prompt),
                    crate::prompt::encode_prompt(&prompt, backend)?,
                ),
            };
            Ok(TrainingExample {
                id: e.id.clone(),
                text: e.text.clone(),
                language: e.language,
                fields: e.fields.clone(),
                audio_path: e.audio_path.clone(),
                prompt,
                prompt_key,
                prompt_embedding: emb.vector,
                sequence,
                audio,
                mel,
            })
        })();
        match res {
            Ok(x) => out.push(x),
            Err(err) => errors.push(format!("line {} ({}): {err}", e.line, e.id)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Manifest(errors))
    }
}

/// Padded tensors for a list of examples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `(B, L)` u32, padded with id 0.
    pub phonemes: Tensor,
    pub styles: Tensor,
    /// `(B, L)`.
    pub text_mask: Tensor,
    pub text_lengths: Vec<usize>,
    /// `(B, n_mels, T)`.
    pub mel: Tensor,
    /// `(B, 1, T)`.
    pub frame_mask: Tensor,
    pub frame_lengths: Vec<usize>,
    pub audio: Vec<Vec<f32>>,
    /// `(B, d₂)`.
    pub s_para: Tensor,
}

pub fn collate(examples: &[&TrainingExample], dtype: DType, device: &Device) -> Result<Batch> {
    let b = examples.len();
    if b == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    let l = examples.iter().map(|e| e.sequence.len()).max().unwrap_or(0);
    let t = examples.iter().map(|e| e.frames()).max().unwrap_or(0);
    let n_mels = examples[0].mel.n_mels;
    let d2 = examples[0].prompt_embedding.len();
    let mut ph = vec![0u32; b * l];
    let mut st = vec![0u32; b * l];
    let mut tm = vec![0f32; b * l];
    let mut mel = vec![0f32; b * n_mels * t];
    let mut fm = vec![0f32; b * t];
    let mut sp = Vec::with_capacity(b * d2);
    for (i, e) in examples.iter().enumerate() {
        let n = e.sequence.len();
        ph[i * l..i * l + n].copy_from_slice(&e.sequence.phoneme_ids);
        st[i * l..i * l + n].copy_from_slice(&e.sequence.style_ids);
        tm[i * l..i * l + n].fill(1.0);
        let f = e.frames();
        for c in 0..n_mels {
            mel[(i * n_mels + c) * t..(i * n_mels + c) * t + f].copy_from_slice(&e.mel.data[c * f..(c + 1) * f]);
        }
        fm[i * t..i * t + f].fill(1.0);
        if e.prompt_embedding.len() != d2 {
            return Err(Error::shape("prompt embedding", d2, e.prompt_embedding.len()));
        }
        sp.extend_from_slice(&e.prompt_embedding);
    }
    let f = |v: Vec<f32>, shape: &[usize]| -> Result<Tensor> { Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?) };
    Ok(Batch {
        ids: examples.iter().map(|e| e.id.clone()).collect(),
        phonemes: Tensor::from_vec(ph, (b, l), device)?,
        styles: Tensor::from_vec(st, (b, l), device)?,
        text_mask: f(tm, &[b, l])?,
        text_lengths: examples.iter().map(|e| e.sequence.len()).collect(),
        mel: f(mel, &[b, n_mels, t])?,
        frame_mask: f(fm, &[b, 1, t])?,
        frame_lengths: examples.iter().map(|e| e.frames()).collect(),
        audio: examples.iter().map(|e| e.audio.clone()).collect(),
        s_para: f(sp, &[b, d2])?,
    })
}
