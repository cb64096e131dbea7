use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use parastyle::audio::write_wav;
use parastyle::bench::{bench_complexity, count_parameters, measure_inference, parse_sentences};
use parastyle::config::Config;
use parastyle::frontend::{Frontend, Language};
use parastyle::infer::{StyleSource, SynthesisRequest, Synthesizer};
use parastyle::model::ParaStyleTts;
use parastyle::prompt::{build_prompt, PromptCache, StyleCaptionFields};

#[derive(Parser)]
#[command(name = "parastyle", version, about = "Style-controllable text-to-speech")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print phoneme and prosody-style ids for a sentence.
    Tokenize {
        #[arg(long)]
        text: String,
        #[arg(long, default_value = "en")]
        lang: String,
        /// Replacement pronunciation lexicon (TSV).
        #[arg(long)]
        lexicon: Option<PathBuf>,
        /// Replacement character romanization table (TSV).
        #[arg(long)]
        romanization: Option<PathBuf>,
    },
    /// Build a style caption and embed it, optionally storing it in a cache.
    EmbedPrompt {
        #[command(flatten)]
        style: StyleArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Also print the embedding vector.
        #[arg(long)]
        vector: bool,
    },
    /// Synthesize a sentence to a WAV file.
    Synth {
        #[arg(long)]
        text: String,
        #[arg(long, default_value = "en")]
        lang: String,
        #[command(flatten)]
        style: StyleArgs,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a config file; resumes from the output directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override config keys, `key=value`.
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Separate vs joint attention cost over an (N, M) grid.
    BenchComplexity {
        #[arg(long, value_delimiter = ',', default_values_t = [32, 64, 128])]
        n: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [8, 16, 32])]
        m: Vec<usize>,
        #[arg(long, default_value_t = 192)]
        d: usize,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-sentence latency and memory at batch size one.
    BenchResources {
        #[arg(long)]
        ckpt: PathBuf,
        /// `lang|text` per line.
        #[arg(long)]
        sentences: PathBuf,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trainable parameter counts per module.
    Params {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the large reference configuration.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Configuration helpers.
    Config {
        #[arg(long)]
        print_schema: bool,
        /// Print every key with its default value.
        #[arg(long)]
        print_defaults: bool,
    },
}

#[derive(Args)]
struct StyleArgs {
    #[arg(long)]
    age: Option<String>,
    #[arg(long)]
    gender: Option<String>,
    /// Accent name used in the caption, e.g. English.
    #[arg(long)]
    accent: Option<String>,
    #[arg(long)]
    emotion: Option<String>,
    /// Free-form style caption.
    #[arg(long)]
    prompt: Option<String>,
    /// Key of a cached prompt embedding.
    #[arg(long)]
    prompt_key: Option<String>,
}

impl StyleArgs {
    fn source(&self) -> Result<StyleSource> {
        let fields = [&self.age, &self.gender, &self.accent, &self.emotion];
        let any_field = fields.iter().any(|f| f.is_some());
        let count = any_field as usize + self.prompt.is_some() as usize + self.prompt_key.is_some() as usize;
        if count != 1 {
            bail!("give exactly one style source: --age/--gender/--accent/--emotion, --prompt or --prompt-key");
        }
        if let Some(p) = &self.prompt {
            return Ok(StyleSource::Prompt(p.clone()));
        }
        if let Some(k) = &self.prompt_key {
            return Ok(StyleSource::CacheKey(k.clone()));
        }
        let need = |v: &Option<String>, name: &str| v.clone().with_context(|| format!("--{name} is required with caption fields"));
        Ok(StyleSource::Fields(StyleCaptionFields {
            age: need(&self.age, "age")?.parse()?,
            gender: need(&self.gender, "gender")?.parse()?,
            accent: need(&self.accent, "accent")?,
            emotion: need(&self.emotion, "emotion")?.parse()?,
        }))
    }
}

fn write_report(out: Option<&PathBuf>, json: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Command::Tokenize {
            text,
            lang,
            lexicon,
            romanization,
        } => {
            let fe = Frontend::with_overrides(lexicon.as_deref(), romanization.as_deref())?;
            let seq = fe.tokenize(lang.parse::<Language>()?, &text)?;
            let phonemes: Vec<&str> = seq
                .phoneme_ids
                .iter()
                .map(|&i| fe.vocab.phonemes.symbol(i))
                .collect::<parastyle::Result<_>>()?;
            let styles: Vec<&str> = seq
                .style_ids
                .iter()
                .map(|&i| fe.vocab.styles.symbol(i))
                .collect::<parastyle::Result<_>>()?;
            let report = serde_json::json!({
                "phoneme_ids": seq.phoneme_ids,
                "style_ids": seq.style_ids,
                "phonemes": phonemes,
                "styles": styles,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::EmbedPrompt {
            style,
            config,
            cache,
            vector,
        } => {
            let cfg = match config {
                Some(p) => Config::load(&p)?,
                None => Config::default(),
            };
            let text = match style.source()? {
                StyleSource::Fields(f) => build_prompt(&f),
                StyleSource::Prompt(p) => p,
                StyleSource::CacheKey(_) => bail!("embed-prompt needs caption fields or --prompt"),
            };
            let backend = cfg.prompt_backend()?;
            let (key, emb, hit) = match cache {
                Some(path) => {
                    let c = PromptCache::open(&path)?;
                    let r = c.get_or_encode(&text, backend.as_ref())?;
                    c.sync()?;
                    r
                }
                None => (
                    parastyle::prompt::cache_key(&backend.id(), &text),
                    parastyle::prompt::encode_prompt(&text, backend.as_ref())?,
                    false,
                ),
            };
            let mut report = serde_json::json!({
                "prompt": text,
                "key": key,
                "backend": emb.backend_id,
                "dim": emb.vector.len(),
                "cache_hit": hit,
            });
            if vector {
                report["vector"] = serde_json::json!(emb.vector);
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Synth {
            text,
            lang,
            style,
            scale,
            seed,
            ckpt,
            cache,
            out,
        } => {
            let cache = cache.map(PromptCache::open).transpose()?;
            let synth = Synthesizer::from_checkpoint(&ckpt, cache)?;
            let req = SynthesisRequest {
                text,
                language: lang.parse()?,
                style: style.source()?,
                duration_scale: scale,
                seed,
            };
            let s = synth.synthesize(&req)?;
            if let Some(c) = synth.cache() {
                c.sync()?;
            }
            write_wav(&out, &s.samples, s.sample_rate)?;
            log::info!(
                "wrote {} ({:.2}s, {} phonemes, {} frames)",
                out.display(),
                s.samples.len() as f64 / s.sample_rate as f64,
                s.sequence.len(),
                s.durations.iter().sum::<usize>()
            );
        }
        Command::Train { config, overrides } => {
            let mut cfg = Config::load(&config)?;
            for o in &overrides {
                let (k, v) = o.split_once('=').with_context(|| format!("--set expects key=value, got {o}"))?;
                cfg.set(k.trim(), v)?;
            }
            cfg.validate()?;
            let latest = parastyle::train::train(&cfg)?;
            log::info!("final checkpoint {}", latest.display());
        }
        Command::BenchComplexity {
            n,
            m,
            d,
            layers,
            repeats,
            out,
        } => {
            let report = bench_complexity(&n, &m, d, layers, repeats)?;
            if !report.identity_holds {
                bail!("FLOP identity violated");
            }
            write_report(out.as_ref(), &serde_json::to_string_pretty(&report)?)?;
        }
        Command::BenchResources {
            ckpt,
            sentences,
            warmup,
            out,
        } => {
            let synth = Synthesizer::from_checkpoint(&ckpt, None)?;
            let text = std::fs::read_to_string(&sentences).with_context(|| format!("reading {}", sentences.display()))?;
            let list = parse_sentences(&text)?;
            let style = StyleSource::Prompt("A adult female is speaking English with neutral emotion.".into());
            let report = measure_inference(&synth, &list, &style, warmup, 0)?;
            write_report(out.as_ref(), &serde_json::to_string_pretty(&report)?)?;
        }
        Command::Params { config, paper_scale } => {
            let cfg = match (config, paper_scale) {
                (Some(_), true) => bail!("--config and --paper-scale are exclusive"),
                (Some(p), false) => Config::load(&p)?,
                (None, true) => Config::paper_scale(),
                (None, false) => Config::default(),
            };
            let model = ParaStyleTts::new(&cfg, &Frontend::bundled().vocab, 0)?;
            let count = count_parameters(&model.store);
            println!("{}", serde_json::to_string_pretty(&count)?);
            println!("total: {:.2}M", count.total as f64 / 1e6);
        }
        Command::Config {
            print_schema,
            print_defaults,
        } => {
            if print_schema {
                print!("{}", Config::print_schema());
            }
            if print_defaults {
                print!("{}", Config::default().render());
            }
            if !print_schema && !print_defaults {
                bail!("nothing to do: pass --print-schema or --print-defaults");
            }
        }
    }
    Ok(())
}
