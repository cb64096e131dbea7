//! One check per acceptance criterion. Each returns a short summary on
//! success and a reason on failure.
#![allow(dead_code)]

use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use parastyle::adapters::{film_apply, Film, FilmParams, Gtu};
use parastyle::alignment::{duration_loss, mas_align};
use parastyle::bench::{bench_complexity, count_parameters};
use parastyle::config::Config;
use parastyle::frontend::{english_words, sequence_to_text, text_to_sequence, Frontend, Language, PhonemeSequence};
use parastyle::latent::{kl_loss, sample_posterior, Flow, GaussianParams};
use parastyle::model::ParaStyleTts;
use parastyle::nn::{Init, Linear, ParamStore};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{brute_force_mas, fixtures, gaussian_kl, gradcheck, log_abs_det, numeric_jacobian, randomize, rng, tensor, to_vec, uniform};

pub type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Dynamic programming against exhaustive enumeration. Log-likelihoods are
/// multiples of 1/8 so every partial sum is exact in f64.
pub fn mas_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut ties = 0;
    for case in 0..1000 {
        let l = r.random_range(1..=4usize);
        let t = r.random_range(l..=7usize);
        let ll: Vec<f64> = (0..l * t).map(|_| r.random_range(-40i32..=0) as f64 / 8.0).collect();
        let a = mas_align(&ll, l, t).map_err(err)?;
        let path = a.path();
        ensure(path[0] == 0 && path[t - 1] == l - 1, || format!("case {case}: path endpoints {path:?}"))?;
        ensure(path.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1), || format!("case {case}: non-monotonic {path:?}"))?;
        let dp = a.score(&ll);
        let bf = brute_force_mas(&ll, l, t);
        ensure(dp == bf, || format!("case {case} (L={l}, T={t}): dp {dp} vs brute force {bf}"))?;
        let mut d = vec![0usize; l];
        for &p in path {
            d[p] += 1;
        }
        ensure(d.iter().sum::<usize>() == t && d.iter().all(|&x| x >= 1), || format!("case {case}: durations {d:?}"))?;
        ties += usize::from(ll.windows(2).any(|w| w[0] == w[1]));
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 10.0, || format!("took {secs:.2}s"))?;
    Ok(format!("1000 instances exact ({ties} with repeated values), {secs:.3}s"))
}

fn small_flow(channels: usize, hidden: usize, cond: usize, dtype: DType, seed: u64) -> Result<Flow, String> {
    let store = ParamStore::new(seed, dtype);
    let flow = Flow::new(&store.root(), channels, hidden, 3, 2, 4, cond).map_err(err)?;
    randomize(&store, seed + 1, 0.3);
    Ok(flow)
}

/// Round trip in f32 with padding, then log-determinant against a
/// finite-difference Jacobian in f64.
pub fn flow_invertibility() -> Outcome {
    let flow = small_flow(8, 32, 6, DType::F32, 11)?;
    let mut r = rng(12);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let b = 2;
        let t = r.random_range(4..=24usize);
        let x = tensor(uniform(&mut r, b * 8 * t, -2.0, 2.0), &[b, 8, t]).to_dtype(DType::F32).map_err(err)?;
        let lens = [t, r.random_range(1..=t)];
        let mask: Vec<f64> = lens.iter().flat_map(|&n| (0..t).map(move |j| f64::from(u8::from(j < n)))).collect();
        let mask = tensor(mask, &[b, 1, t]).to_dtype(DType::F32).map_err(err)?;
        let x = x.broadcast_mul(&mask).map_err(err)?;
        let g = tensor(uniform(&mut r, b * 6, -1.0, 1.0), &[b, 6]).to_dtype(DType::F32).map_err(err)?;
        let (y, _) = flow.forward(&x, &mask, Some(&g)).map_err(err)?;
        let back = flow.inverse(&y, &mask, Some(&g)).map_err(err)?;
        let e = (back - &x).and_then(|d| d.abs()).and_then(|d| d.max_all()).map_err(err)?;
        worst = worst.max(e.to_scalar::<f32>().map_err(err)? as f64);
    }
    ensure(worst < 1e-5, || format!("round-trip sup error {worst:e}"))?;

    let mut worst_ld: f64 = 0.0;
    for (k, (n, t)) in [(2usize, 6usize), (4, 3), (2, 4), (4, 2), (6, 2), (2, 1)].into_iter().enumerate() {
        let flow = small_flow(n, 8, 3, DType::F64, 40 + k as u64)?;
        let x = uniform(&mut r, n * t, -1.5, 1.5);
        let g = tensor(uniform(&mut r, 3, -1.0, 1.0), &[1, 3]);
        let mask = Tensor::ones((1, 1, t), DType::F64, &Device::Cpu).map_err(err)?;
        let f = |v: &[f64]| {
            let (y, _) = flow.forward(&tensor(v.to_vec(), &[1, n, t]), &mask, Some(&g)).unwrap();
            to_vec(&y)
        };
        let (_, ld) = flow.forward(&tensor(x.clone(), &[1, n, t]), &mask, Some(&g)).map_err(err)?;
        let analytic = to_vec(&ld)[0];
        let numeric = log_abs_det(numeric_jacobian(f, &x, 1e-5), n * t);
        worst_ld = worst_ld.max((analytic - numeric).abs());
    }
    ensure(worst_ld < 1e-4, || format!("log_det error {worst_ld:e}"))?;
    Ok(format!("round trip {worst:.2e}, log_det {worst_ld:.2e}"))
}

/// Monte-Carlo KL with an identity flow against the closed form.
pub fn kl_estimator() -> Outcome {
    let mut r = rng(22);
    let n = 4;
    let samples = 10_000;
    let mut worst_z: f64 = 0.0;
    for draw in 0..20 {
        let mq = uniform(&mut r, n, -1.0, 1.0);
        let sq = uniform(&mut r, n, 0.3, 1.5);
        let mp = uniform(&mut r, n, -1.0, 1.0);
        let sp = uniform(&mut r, n, 0.3, 1.5);
        let expand = |v: &[f64]| tensor(v.iter().flat_map(|&x| std::iter::repeat_n(x, samples)).collect(), &[1, n, samples]);
        let post = GaussianParams::from_sigma(expand(&mq), expand(&sq)).map_err(err)?;
        let prior = GaussianParams::from_sigma(expand(&mp), expand(&sp)).map_err(err)?;
        let eps: Vec<f64> = (0..n * samples).map(|_| r.sample(StandardNormal)).collect();
        let z = sample_posterior(&post, &tensor(eps, &[1, n, samples])).map_err(err)?;
        let mask = Tensor::ones((1, 1, samples), DType::F64, &Device::Cpu).map_err(err)?;
        let log_det = Tensor::zeros(1, DType::F64, &Device::Cpu).map_err(err)?;
        let kl = to_vec(&kl_loss(&z, &z, &log_det, &post, &prior, &mask).map_err(err)?)[0];
        // Per-sample terms for the standard error.
        let per = (post.log_density(&z).map_err(err)? - prior.log_density(&z).map_err(err)?)
            .and_then(|d| d.sum(1))
            .map_err(err)?;
        let per = to_vec(&per);
        let mean = per.iter().sum::<f64>() / samples as f64;
        ensure((mean - kl).abs() < 1e-9, || format!("draw {draw}: kl_loss {kl} vs per-sample mean {mean}"))?;
        let var = per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
        let se = (var / samples as f64).sqrt();
        let exact = gaussian_kl(&mq, &sq, &mp, &sp);
        let zscore = (kl - exact).abs() / se;
        ensure(zscore < 3.0, || format!("draw {draw}: MC {kl:.5} vs exact {exact:.5} ({zscore:.2} SE)"))?;
        worst_z = worst_z.max(zscore);
    }
    Ok(format!("20 draws within {worst_z:.2} standard errors"))
}

fn linear(w: Tensor, b: Tensor) -> Linear {
    Linear {
        weight: w,
        bias: Some(b),
    }
}

pub fn adapter_exactness() -> Outcome {
    let dev = &Device::Cpu;
    // Zero parameters give exactly zero.
    let store = ParamStore::new(0, DType::F64);
    let pb = store.root();
    let gtu = Gtu {
        w1: Linear::with_init(&pb.pp("w1"), 8, 8, Init::Zeros, Some(Init::Zeros)).map_err(err)?,
        w2: Linear::with_init(&pb.pp("w2"), 8, 8, Init::Zeros, Some(Init::Zeros)).map_err(err)?,
    };
    let x = Tensor::randn(0f64, 3.0, (2, 5, 8), dev).map_err(err)?;
    let y = to_vec(&gtu.forward(&x, &x).map_err(err)?);
    ensure(y.iter().all(|&v| v == 0.0), || "zero-parameter GTU output is not zero".into())?;

    // Saturating inputs in f32 still stay strictly inside (-1, 1).
    let store = ParamStore::new(1, DType::F32);
    let gtu = Gtu::new(&store.root(), 16).map_err(err)?;
    let big = Tensor::randn(0f32, 1e4, (3, 7, 16), dev).map_err(err)?;
    let y = gtu.forward(&big, &big).map_err(err)?;
    let max = y.abs().and_then(|a| a.max_all()).and_then(|m| m.to_scalar::<f32>()).map_err(err)?;
    ensure(max < 1.0, || format!("GTU magnitude reached {max}"))?;

    // FiLM identity and a hand-computed d₁ = 2 case.
    let store = ParamStore::new(2, DType::F64);
    let film = Film::new(&store.root(), 6, 4).map_err(err)?;
    let xt = Tensor::randn(0f64, 1.0, (2, 5, 4), dev).map_err(err)?;
    let s = Tensor::randn(0f64, 1.0, (2, 6), dev).map_err(err)?;
    let same = to_vec(&film.forward(&xt, &s).map_err(err)?) == to_vec(&xt);
    ensure(same, || "fresh FiLM is not the identity".into())?;
    let hand = film_apply(
        &tensor(vec![1.0, -2.0, 0.5, 4.0], &[1, 2, 2]),
        &FilmParams {
            gamma: tensor(vec![3.0, -0.5], &[1, 2]),
            beta: tensor(vec![0.25, 1.0], &[1, 2]),
        },
    )
    .map_err(err)?;
    ensure(to_vec(&hand) == vec![3.25, 2.0, 1.75, -1.0], || format!("FiLM hand case gave {:?}", to_vec(&hand)))?;

    // Gradient checks in double precision.
    let mut r = rng(31);
    let mut t = |shape: &[usize], lo: f64, hi: f64| tensor(uniform(&mut r, shape.iter().product(), lo, hi), shape);
    let d = 3;
    let g_gtu = gradcheck(
        |a: &[Tensor]| {
            let g = Gtu {
                w1: linear(a[2].clone(), a[3].clone()),
                w2: linear(a[4].clone(), a[5].clone()),
            };
            g.forward(&a[0], &a[1]).unwrap().sqr().unwrap().sum_all().unwrap()
        },
        &[t(&[2, 3, d], -1.0, 1.0), t(&[2, 3, d], -1.0, 1.0), t(&[d, d], -1.0, 1.0), t(&[d], -1.0, 1.0), t(&[d, d], -1.0, 1.0), t(&[d], -1.0, 1.0)],
    );
    let g_film = gradcheck(
        |a: &[Tensor]| {
            let f = Film {
                gamma: linear(a[2].clone(), a[3].clone()),
                beta: linear(a[4].clone(), a[5].clone()),
            };
            f.forward(&a[0], &a[1]).unwrap().sqr().unwrap().sum_all().unwrap()
        },
        &[t(&[2, 3, d], -1.0, 1.0), t(&[2, 4], -1.0, 1.0), t(&[d, 4], -1.0, 1.0), t(&[d], 0.5, 1.5), t(&[d, 4], -1.0, 1.0), t(&[d], -1.0, 1.0)],
    );
    let mask = tensor(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0], &[2, 4]);
    let g_dur = gradcheck(
        |a: &[Tensor]| duration_loss(&a[0], &a[1], &mask, 1e-4).unwrap(),
        &[t(&[2, 4], 1.0, 6.0), t(&[2, 4], 0.5, 6.0)],
    );
    let fmask = tensor(vec![1.0, 1.0, 1.0, 1.0, 1.0, 0.0], &[2, 1, 3]);
    let g_kl = gradcheck(
        |a: &[Tensor]| {
            let post = GaussianParams {
                mu: a[2].clone(),
                log_sigma: a[3].clone(),
            };
            let prior = GaussianParams {
                mu: a[4].clone(),
                log_sigma: a[5].clone(),
            };
            kl_loss(&a[0], &a[1], &a[6], &post, &prior, &fmask).unwrap()
        },
        &[
            t(&[2, 2, 3], -1.0, 1.0),
            t(&[2, 2, 3], -1.0, 1.0),
            t(&[2, 2, 3], -1.0, 1.0),
            t(&[2, 2, 3], -0.5, 0.5),
            t(&[2, 2, 3], -1.0, 1.0),
            t(&[2, 2, 3], -0.5, 0.5),
            t(&[2], -1.0, 1.0),
        ],
    );
    for (name, e) in [("gtu", g_gtu), ("film", g_film), ("duration", g_dur), ("kl", g_kl)] {
        ensure(e < 1e-4, || format!("{name} gradient rel err {e:e}"))?;
    }
    Ok(format!(
        "exact cases hold; grad rel err gtu {g_gtu:.1e} film {g_film:.1e} dur {g_dur:.1e} kl {g_kl:.1e}"
    ))
}

#[derive(serde::Deserialize)]
struct Golden {
    text: String,
    phonemes: Vec<u32>,
    styles: Vec<u32>,
}

fn load_golden(name: &str) -> Result<Vec<Golden>, String> {
    let text = std::fs::read_to_string(fixtures().join(name)).map_err(err)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| serde_json::from_str(l).map_err(err)).collect()
}

fn check_common(fe: &Frontend, seq: &PhonemeSequence, text: &str) -> Result<(), String> {
    seq.validate(&fe.vocab).map_err(|e| format!("{text:?}: {e}"))?;
    let rendered = sequence_to_text(seq, &fe.vocab).map_err(err)?;
    let back = text_to_sequence(&rendered, seq.language, &fe.vocab).map_err(err)?;
    ensure(&back == seq, || format!("{text:?}: rendering is not id-lossless"))
}

pub fn tokenizer_suite() -> Outcome {
    let fe = Frontend::bundled();
    fe.vocab.check_reference_counts().map_err(err)?;
    let boundary = fe.vocab.style_special(parastyle::frontend::BOUNDARY);
    let mut counts = [0usize; 2];
    for (k, (file, lang)) in [("golden_en.jsonl", Language::En), ("golden_zh.jsonl", Language::Zh)].into_iter().enumerate() {
        let golden = load_golden(file)?;
        ensure(golden.len() >= 50, || format!("{file}: only {} utterances", golden.len()))?;
        for g in &golden {
            let seq = fe.tokenize(lang, &g.text).map_err(|e| format!("{:?}: {e}", g.text))?;
            ensure(seq.phoneme_ids == g.phonemes && seq.style_ids == g.styles, || format!("{:?}: differs from golden", g.text))?;
            check_common(fe, &seq, &g.text)?;
            ensure(fe.tokenize(lang, &g.text).ok().as_ref() == Some(&seq), || format!("{:?}: not deterministic", g.text))?;
            match lang {
                Language::En => {
                    let marked: usize = english_words(&g.text)
                        .iter()
                        .map(|w| {
                            fe.english.lexicon()[w].arpabet.iter().filter(|s| s.ends_with(|c: char| c.is_ascii_digit())).count()
                        })
                        .sum();
                    let stressed = seq.style_ids.iter().filter(|&&s| (0..3).any(|d| fe.vocab.stress_id(char::from(b'0' + d)) == Some(s))).count();
                    ensure(marked == stressed, || format!("{:?}: {stressed} stress ids for {marked} marked vowels", g.text))?;
                }
                Language::Zh => {
                    let tones: Vec<u32> = g
                        .text
                        .chars()
                        .filter(|c| c.is_alphanumeric())
                        .map(|c| {
                            let p = fe.chinese.romanize(c).unwrap_or("5");
                            let d = p.chars().last().filter(char::is_ascii_digit).unwrap_or('5');
                            fe.vocab.tone_id(d).unwrap_or(u32::MAX)
                        })
                        .collect();
                    let inner = &seq.style_ids[1..seq.len() - 1];
                    let spans: Vec<&[u32]> = inner.split(|&s| s == boundary).collect();
                    ensure(spans.len() == tones.len(), || format!("{:?}: {} syllables vs {} characters", g.text, spans.len(), tones.len()))?;
                    for (span, tone) in spans.iter().zip(&tones) {
                        ensure(!span.is_empty() && span.iter().all(|s| s == tone), || format!("{:?}: syllable tone mismatch", g.text))?;
                    }
                }
            }
            counts[k] += 1;
        }
    }
    Ok(format!("{} English and {} Chinese utterances match golden ids; vocabulary 81/5/3/3", counts[0], counts[1]))
}

pub fn complexity_identity() -> Outcome {
    let start = Instant::now();
    let report = bench_complexity(&[16, 32, 64], &[16, 32, 64], 64, 2, 1).map_err(err)?;
    ensure(report.grid.len() == 9, || format!("grid has {} points", report.grid.len()))?;
    let c = report.per_layer_constant * report.layers as u128;
    for p in &report.grid {
        let diff = p.flops_joint - p.flops_separate;
        ensure(diff == 2 * c * p.n as u128 * p.m as u128, || format!("N={} M={}: difference {diff}", p.n, p.m))?;
        if p.n == p.m {
            ensure(p.flops_joint == 2 * p.flops_separate && p.flop_ratio == 2.0, || format!("N=M={}: ratio {}", p.n, p.flop_ratio))?;
        }
    }
    ensure(report.identity_holds, || "report flags the identity as violated".into())?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("report took {secs:.1}s"))?;
    Ok(format!("identity exact on 3x3 grid, N=M ratio 2, {secs:.2}s"))
}

pub fn paper_scale_parameters() -> Outcome {
    let cfg = Config::paper_scale();
    let model = ParaStyleTts::new(&cfg, &Frontend::bundled().vocab, 0).map_err(err)?;
    let count = count_parameters(&model.store);
    let m = count.total as f64 / 1e6;
    ensure((30.0..=80.0).contains(&m), || format!("{m:.2}M outside [30M, 80M]"))?;
    Ok(format!("{m:.2}M trainable parameters (reference 52.51M)"))
}

/// Fresh-model synthesizer; identical seeds give identical parameters.
pub fn synthesizer(cfg: &Config, seed: u64, cache: Option<parastyle::prompt::PromptCache>) -> Result<parastyle::infer::Synthesizer, String> {
    let model = ParaStyleTts::new(cfg, &Frontend::bundled().vocab, seed).map_err(err)?;
    let backend = cfg.prompt_backend().map_err(err)?;
    Ok(parastyle::infer::Synthesizer::new(model, backend, cache))
}

pub fn toy_trainer(cfg: &Config) -> Result<parastyle::train::Trainer, String> {
    let backend = cfg.prompt_backend().map_err(err)?;
    let examples = parastyle::train::ingest_manifest(
        std::path::Path::new(&cfg.manifest),
        cfg,
        Frontend::bundled(),
        backend.as_ref(),
        None,
    )
    .map_err(err)?;
    parastyle::train::Trainer::new(cfg, examples).map_err(err)
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn tensor_bits(t: &Tensor) -> Vec<u32> {
    bits(&t.flatten_all().unwrap().to_dtype(DType::F32).unwrap().to_vec1::<f32>().unwrap())
}

pub fn determinism_and_cache() -> Outcome {
    use parastyle::infer::{StyleSource, SynthesisRequest};
    use parastyle::prompt::{Age, Emotion, Gender, PromptCache, StyleCaptionFields};

    let dir = tempfile::tempdir().map_err(err)?;
    let cfg = super::toy_config(dir.path());
    let fields = StyleCaptionFields {
        age: Age::Adult,
        gender: Gender::Female,
        accent: "English".into(),
        emotion: Emotion::Happy,
    };
    let request = |style: StyleSource, seed: u64| SynthesisRequest {
        text: "The birch canoe slid on the smooth planks.".into(),
        language: Language::En,
        style,
        duration_scale: 1.0,
        seed,
    };

    let synth = synthesizer(&cfg, 5, None)?;
    let a = synth.synthesize(&request(StyleSource::Fields(fields.clone()), 9)).map_err(err)?;
    let b = synth.synthesize(&request(StyleSource::Fields(fields.clone()), 9)).map_err(err)?;
    ensure(bits(&a.samples) == bits(&b.samples) && a.durations == b.durations, || "same seed gave different audio".into())?;
    let other = synth.synthesize(&request(StyleSource::Fields(fields.clone()), 10)).map_err(err)?;
    ensure(bits(&other.samples) != bits(&a.samples), || "seed has no effect".into())?;

    // Populate a cache, reopen it and synthesize from the key alone.
    let cache_path = dir.path().join("prompts.bin");
    {
        let cached = synthesizer(&cfg, 5, Some(PromptCache::open(&cache_path).map_err(err)?))?;
        let c = cached.synthesize(&request(StyleSource::Fields(fields.clone()), 9)).map_err(err)?;
        ensure(c.prompt_key == a.prompt_key, || "cache key differs from fresh key".into())?;
        cached.cache().unwrap().sync().map_err(err)?;
    }
    let reopened = synthesizer(&cfg, 5, Some(PromptCache::open(&cache_path).map_err(err)?))?;
    let c = reopened.synthesize(&request(StyleSource::CacheKey(a.prompt_key.clone()), 9)).map_err(err)?;
    ensure(bits(&c.samples) == bits(&a.samples), || "cached embedding gave different audio".into())?;

    // Checkpoint round trip after one optimizer step.
    let mut trainer = toy_trainer(&cfg)?;
    trainer.step_once().map_err(err)?;
    let path = dir.path().join("rt.ckpt");
    trainer.save(&path).map_err(err)?;
    let ck = parastyle::train::Checkpoint::read(&path).map_err(err)?;
    let mut fresh = toy_trainer(&cfg)?;
    // Move the fresh trainer off its initial state so the restore is observable.
    fresh.step_once().map_err(err)?;
    fresh.step_once().map_err(err)?;
    fresh.resume(&ck).map_err(err)?;
    ensure(fresh.step == trainer.step, || "step counter not restored".into())?;
    for (store_a, store_b) in [(&trainer.model.store, &fresh.model.store), (&trainer.disc.store, &fresh.disc.store)] {
        for ((na, va), (nb, vb)) in store_a.vars().iter().zip(store_b.vars().iter()) {
            ensure(na == nb && tensor_bits(va.as_tensor()) == tensor_bits(vb.as_tensor()), || format!("parameter {na} differs after load"))?;
        }
    }
    for (oa, ob) in [(&trainer.opt_g, &fresh.opt_g), (&trainer.opt_d, &fresh.opt_d)] {
        ensure(oa.t == ob.t && oa.lr() == ob.lr(), || "optimizer counters differ".into())?;
        for (x, y) in oa.m.iter().zip(&ob.m).chain(oa.v.iter().zip(&ob.v)) {
            ensure(tensor_bits(x) == tensor_bits(y), || "optimizer moments differ".into())?;
        }
    }
    Ok("repeat synthesis, cached-vs-fresh prompt and checkpoint round trip are bit-identical".into())
}
