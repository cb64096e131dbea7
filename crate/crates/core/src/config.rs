//! Flat `key = value` configuration with a printable schema.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Lists are comma-separated. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::MelConfig;
use crate::encoder::EncoderConfig;
use crate::gan::{GeneratorConfig, LossWeights};
use crate::{Error, Result};

pub trait ConfigValue: Sized {
    const TYPE: &'static str;
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! scalar_value {
    ($t:ty, $name:literal) => {
        impl ConfigValue for $t {
            const TYPE: &'static str = $name;
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.trim().parse::<$t>().map_err(|e| format!("{s:?}: {e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    };
}

scalar_value!(usize, "int");
scalar_value!(u64, "int");
scalar_value!(f64, "float");
scalar_value!(bool, "bool");

impl ConfigValue for String {
    const TYPE: &'static str = "string";
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(s.trim().to_string())
    }
    fn render(&self) -> String {
        self.clone()
    }
}

impl ConfigValue for Vec<usize> {
    const TYPE: &'static str = "int list";
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
            .collect()
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SchemaEntry {
    pub section: &'static str,
    pub key: &'static str,
    pub kind: &'static str,
    pub default: String,
    pub doc: &'static str,
}

macro_rules! config {
    ($( $section:literal { $( $key:ident : $ty:ty = $default:expr, $doc:literal; )* } )*) => {
        /// Every tunable of the model, the data pipeline and the trainer.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct Config {
            $($( #[doc = $doc] pub $key: $ty, )*)*
        }

        impl Default for Config {
            fn default() -> Self {
                Self { $($( $key: $default, )*)* }
            }
        }

        impl Config {
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($( stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::Config(format!("{key}: {e}")))?;
                    } )*)*
                    _ => return Err(Error::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            pub fn schema() -> Vec<SchemaEntry> {
                let d = Self::default();
                vec![$($( SchemaEntry {
                    section: $section,
                    key: stringify!($key),
                    kind: <$ty as ConfigValue>::TYPE,
                    default: ConfigValue::render(&d.$key),
                    doc: $doc,
                }, )*)*]
            }

            /// `(section, key, rendered value)` in schema order.
            pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
                vec![$($( ($section, stringify!($key), ConfigValue::render(&self.$key)), )*)*]
            }
        }
    };
}

config! {
    "model" {
        phoneme_dim: usize = 192, "d1: phoneme/prosody embedding width";
        encoder_layers: usize = 4, "FFT blocks per text stream";
        encoder_heads: usize = 2, "attention heads";
        encoder_kernel: usize = 3, "FFT feed-forward conv kernel (odd)";
        encoder_hidden: usize = 768, "FFT feed-forward hidden width";
        dropout: f64 = 0.1, "dropout in the text encoder and duration predictor";
        prompt_dim: usize = 768, "d2: sentence-embedding width";
        global_dim: usize = 192, "dg: width of S_global";
        latent_channels: usize = 192, "N: latent channels";
        posterior_hidden: usize = 96, "posterior WaveNet width";
        posterior_layers: usize = 4, "posterior WaveNet layers";
        posterior_kernel: usize = 5, "posterior WaveNet kernel";
        flow_count: usize = 4, "affine coupling layers";
        flow_hidden: usize = 96, "coupling WaveNet width";
        flow_layers: usize = 2, "coupling WaveNet layers";
        flow_kernel: usize = 5, "coupling WaveNet kernel";
        duration_channels: usize = 192, "duration predictor width";
        duration_kernel: usize = 3, "duration predictor kernel";
        duration_layers: usize = 2, "duration predictor conv layers";
        duration_stochastic: bool = true, "noise-driven duration output (false: deterministic)";
        gen_channels: usize = 64, "decoder channels after the input conv";
        gen_upsample_rates: Vec<usize> = vec![8, 8, 4], "decoder upsampling factors (product = hop_length)";
        gen_upsample_kernels: Vec<usize> = vec![16, 16, 8], "transposed-conv kernels";
        gen_resblock_kernels: Vec<usize> = vec![3, 7], "residual block kernels";
        gen_resblock_dilations: Vec<usize> = vec![1, 3], "residual block dilations";
        disc_periods: Vec<usize> = vec![2, 3, 5, 7, 11], "multi-period discriminator periods";
        disc_channels: Vec<usize> = vec![16, 32, 64], "period-branch conv widths";
    }
    "audio" {
        sample_rate: u64 = 22050, "waveform sample rate (Hz)";
        n_fft: usize = 1024, "FFT size";
        win_length: usize = 1024, "analysis window (must equal n_fft)";
        hop_length: usize = 256, "frame hop";
        n_mels: usize = 80, "mel bins";
        fmin: f64 = 0.0, "lowest mel frequency";
        fmax: f64 = 11025.0, "highest mel frequency";
        mel_floor: f64 = 1e-5, "magnitude clamp before the log";
    }
    "prompt" {
        prompt_backend: String = "hash".to_string(), "sentence encoder: hash | command";
        prompt_seed: u64 = 0, "seed of the hash encoder";
        prompt_command: String = String::new(), "program for the command encoder (args split on spaces)";
        prompt_cache: String = String::new(), "prompt embedding cache file (empty: none)";
    }
    "training" {
        manifest: String = String::new(), "training manifest path";
        output_dir: String = "runs/default".to_string(), "checkpoints and metrics";
        batch_size: usize = 8, "utterances per step";
        total_steps: u64 = 5000, "optimizer steps";
        learning_rate: f64 = 2e-4, "initial learning rate";
        adam_beta1: f64 = 0.8, "AdamW beta1";
        adam_beta2: f64 = 0.99, "AdamW beta2";
        adam_eps: f64 = 1e-9, "AdamW epsilon";
        weight_decay: f64 = 0.01, "decoupled weight decay";
        lr_decay: f64 = 0.999875, "learning-rate factor per epoch";
        grad_clip: f64 = 0.0, "global gradient-norm clip (0: off)";
        seed: u64 = 1234, "master seed";
        checkpoint_interval: u64 = 1000, "steps between checkpoints";
        log_interval: u64 = 10, "steps between console log lines";
        segment_frames: usize = 32, "latent frames decoded per item per step";
        w_recon: f64 = 45.0, "mel reconstruction weight";
        w_kl: f64 = 1.0, "KL weight";
        w_dur: f64 = 1.0, "duration loss weight";
        w_adv: f64 = 1.0, "adversarial weight";
        w_fm: f64 = 1.0, "feature-matching weight";
        duration_eps: f64 = 1e-9, "epsilon inside the log-duration loss";
        precision: String = "f32".to_string(), "f32 | f64";
    }
    "inference" {
        noise_scale: f64 = 0.667, "prior sampling temperature";
        duration_noise_scale: f64 = 0.8, "duration predictor noise temperature";
        duration_scale: f64 = 1.0, "default length multiplier";
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut errors = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = cfg.set(k.trim(), v) {
                        errors.push(format!("line {}: {e}", i + 1));
                    }
                }
                None => errors.push(format!("line {}: expected key = value", i + 1)),
            }
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors.join("; ")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Renders every key, so `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (sec, key, val) in self.entries() {
            if sec != section {
                out.push_str(&format!("# [{sec}]\n"));
                section = sec;
            }
            out.push_str(&format!("{key} = {val}\n"));
        }
        out
    }

    pub fn print_schema() -> String {
        let mut out = String::new();
        let mut section = "";
        for e in Self::schema() {
            if e.section != section {
                out.push_str(&format!("[{}]\n", e.section));
                section = e.section;
            }
            out.push_str(&format!("  {} ({}) = {}\n      {}\n", e.key, e.kind, e.default, e.doc));
        }
        out
    }

    /// Larger configuration mirroring the reference architecture widths.
    pub fn paper_scale() -> Self {
        Self {
            encoder_layers: 6,
            global_dim: 192,
            posterior_hidden: 192,
            posterior_layers: 16,
            flow_hidden: 192,
            flow_layers: 4,
            duration_channels: 256,
            gen_channels: 512,
            gen_upsample_rates: vec![8, 8, 2, 2],
            gen_upsample_kernels: vec![16, 16, 4, 4],
            gen_resblock_kernels: vec![3, 7, 11],
            gen_resblock_dilations: vec![1, 3, 5],
            disc_channels: vec![32, 128, 512, 1024, 1024],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        self.mel().validate()?;
        let hop: usize = self.gen_upsample_rates.iter().product();
        if hop != self.hop_length {
            return Err(Error::Config(format!(
                "product of gen_upsample_rates ({hop}) must equal hop_length ({})",
                self.hop_length
            )));
        }
        if self.latent_channels % 2 != 0 {
            return Err(Error::Config("latent_channels must be even".into()));
        }
        for (k, v) in [
            ("batch_size", self.batch_size),
            ("segment_frames", self.segment_frames),
            ("prompt_dim", self.prompt_dim),
            ("global_dim", self.global_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !["f32", "f64"].contains(&self.precision.as_str()) {
            return Err(Error::Config(format!("precision must be f32 or f64, got {:?}", self.precision)));
        }
        if !["hash", "command"].contains(&self.prompt_backend.as_str()) {
            return Err(Error::Config(format!("unknown prompt_backend {:?}", self.prompt_backend)));
        }
        Ok(())
    }

    pub fn dtype(&self) -> candle_core::DType {
        if self.precision == "f64" {
            candle_core::DType::F64
        } else {
            candle_core::DType::F32
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.phoneme_dim,
            layers: self.encoder_layers,
            heads: self.encoder_heads,
            kernel: self.encoder_kernel,
            hidden: self.encoder_hidden,
            dropout: self.dropout,
        }
    }

    pub fn mel(&self) -> MelConfig {
        MelConfig {
            sample_rate: self.sample_rate as u32,
            n_fft: self.n_fft,
            win_length: self.win_length,
            hop_length: self.hop_length,
            n_mels: self.n_mels,
            fmin: self.fmin,
            fmax: self.fmax,
            floor: self.mel_floor,
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            initial_channels: self.gen_channels,
            upsample_rates: self.gen_upsample_rates.clone(),
            upsample_kernels: self.gen_upsample_kernels.clone(),
            resblock_kernels: self.gen_resblock_kernels.clone(),
            resblock_dilations: self.gen_resblock_dilations.clone(),
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            recon: self.w_recon,
            kl: self.w_kl,
            dur: self.w_dur,
            adv: self.w_adv,
            fm: self.w_fm,
        }
    }

    /// Hex SHA-256 over the model and audio sections, which determine
    /// parameter shapes and feature layout.
    pub fn schema_hash(&self) -> String {
        let mut h = Sha256::new();
        for (sec, key, val) in self.entries() {
            if sec == "model" || sec == "audio" {
                h.update(format!("{key}={val}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Sentence encoder selected by the prompt section.
    pub fn prompt_backend(&self) -> Result<Box<dyn crate::prompt::EncoderBackend>> {
        match self.prompt_backend.as_str() {
            "hash" => Ok(Box::new(crate::prompt::HashBackend::new(self.prompt_seed, self.prompt_dim))),
            "command" => {
                let mut parts = self.prompt_command.split_whitespace().map(str::to_string);
                let program = parts
                    .next()
                    .ok_or_else(|| Error::Config("prompt_backend = command needs prompt_command".into()))?;
                let name = format!("cmd-{}", self.prompt_command);
                Ok(Box::new(crate::prompt::CommandBackend::new(program, parts.collect(), self.prompt_dim, name)))
            }
            other => Err(Error::Config(format!("unknown prompt_backend {other:?}"))),
        }
    }

    pub fn as_map(&self) -> BTreeMap<String, String> {
        self.entries().into_iter().map(|(_, k, v)| (k.to_string(), v)).collect()
    }
}
