//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

use std::path::PathBuf;

use candle_core::{DType, Device, Tensor, Var};
use parastyle::config::Config;
use parastyle::nn::ParamStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn tensor(data: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::from_vec(data, shape, &Device::Cpu).unwrap()
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

/// Overwrites every parameter with uniform noise so that zero-initialised
/// layers stop being the identity.
pub fn randomize(store: &ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for (_, v) in store.vars() {
        let n = v.elem_count();
        let t = tensor(uniform(&mut r, n, -scale, scale), v.dims()).to_dtype(v.dtype()).unwrap();
        v.set(&t).unwrap();
    }
}

/// Best score over every monotonic surjective path, by enumerating all
/// compositions of `t` frames into `l` positive durations.
pub fn brute_force_mas(ll: &[f64], l: usize, t: usize) -> f64 {
    fn go(ll: &[f64], l: usize, t: usize, p: usize, j: usize, acc: f64, best: &mut f64) {
        if p == l {
            if j == t {
                *best = best.max(acc);
            }
            return;
        }
        let remaining = l - p - 1;
        for d in 1..=(t - j).saturating_sub(remaining) {
            let s: f64 = (j..j + d).map(|f| ll[p * t + f]).sum();
            go(ll, l, t, p + 1, j + d, acc + s, best);
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(ll, l, t, 0, 0, 0.0, &mut best);
    best
}

/// `log |det A|` by Gaussian elimination with partial pivoting.
pub fn log_abs_det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).unwrap();
        if p != c {
            for k in 0..n {
                a.swap(c * n + k, p * n + k);
            }
        }
        let piv = a[c * n + c];
        acc += piv.abs().ln();
        for r in c + 1..n {
            let f = a[r * n + c] / piv;
            for k in c..n {
                a[r * n + k] -= f * a[c * n + k];
            }
        }
    }
    acc
}

/// Central-difference Jacobian of `f` at `x`, row-major `(out, in)`.
pub fn numeric_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let n_in = x.len();
    let n_out = f(x).len();
    let mut jac = vec![0.0; n_out * n_in];
    let mut xp = x.to_vec();
    for i in 0..n_in {
        xp[i] = x[i] + h;
        let up = f(&xp);
        xp[i] = x[i] - h;
        let dn = f(&xp);
        xp[i] = x[i];
        for o in 0..n_out {
            jac[o * n_in + i] = (up[o] - dn[o]) / (2.0 * h);
        }
    }
    jac
}

/// Compares autograd against central differences for a scalar function of
/// several f64 tensors. Returns the worst relative error, measured as
/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn gradcheck(f: impl Fn(&[Tensor]) -> Tensor, inputs: &[Tensor]) -> f64 {
    let vars: Vec<Var> = inputs.iter().map(|t| Var::from_tensor(t).unwrap()).collect();
    let ts: Vec<Tensor> = vars.iter().map(|v| v.as_tensor().clone()).collect();
    let grads = f(&ts).backward().unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(v).map(to_vec).unwrap_or_else(|| vec![0.0; v.elem_count()]);
        let base = to_vec(v.as_tensor());
        for i in 0..base.len() {
            let eval = |delta: f64| {
                let mut data = base.clone();
                data[i] += delta;
                let mut args: Vec<Tensor> = inputs.to_vec();
                args[k] = tensor(data, v.dims());
                f(&args).to_scalar::<f64>().unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

/// `KL(N(μ_q, σ_q) || N(μ_p, σ_p))` summed over dimensions.
pub fn gaussian_kl(mq: &[f64], sq: &[f64], mp: &[f64], sp: &[f64]) -> f64 {
    (0..mq.len())
        .map(|i| (sp[i] / sq[i]).ln() + (sq[i].powi(2) + (mq[i] - mp[i]).powi(2)) / (2.0 * sp[i].powi(2)) - 0.5)
        .sum()
}

/// Desk configuration used for the toy corpus runs.
pub fn toy_config(output_dir: &std::path::Path) -> Config {
    let mut cfg = Config::default();
    let manifest = fixtures().join("toy_corpus/manifest.txt");
    cfg.set("manifest", manifest.to_str().unwrap()).unwrap();
    cfg.set("output_dir", output_dir.to_str().unwrap()).unwrap();
    cfg
}

/// Settings for the toy overfit run.
pub fn toy_overfit_config(output_dir: &std::path::Path) -> Config {
    let mut cfg = toy_config(output_dir);
    for (k, v) in [
        ("total_steps", "2000"),
        ("segment_frames", "32"),
        ("learning_rate", "1e-3"),
        ("lr_decay", "0.998"),
        ("checkpoint_interval", "0"),
        ("log_interval", "0"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

pub mod criteria;
