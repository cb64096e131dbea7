use std::path::Path;
use std::process::{Command, Output};

fn parastyle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_parastyle"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = parastyle(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn toy_manifest() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/toy_corpus/manifest.txt")
        .to_str()
        .unwrap()
        .to_string()
}

#[test]
fn tokenize_prints_parallel_ids() {
    let out = ok(&["tokenize", "--text", "cat", "--lang", "en"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["phonemes"], serde_json::json!(["[START]", "k", "æ", "t", "[END]"]));
    assert_eq!(v["phoneme_ids"].as_array().unwrap().len(), v["style_ids"].as_array().unwrap().len());
    let zh = ok(&["tokenize", "--text", "你好", "--lang", "zh"]);
    assert!(zh.contains("T3"));
}

#[test]
fn style_sources_are_exclusive() {
    let out = parastyle(&["embed-prompt", "--prompt", "x", "--emotion", "happy"]);
    assert!(!out.status.success());
    let out = parastyle(&["embed-prompt", "--age", "adult", "--gender", "female", "--accent", "English", "--emotion", "bored"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bored"));
}

#[test]
fn embed_prompt_hits_cache_second_time() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("c.bin");
    let args = [
        "embed-prompt", "--age", "child", "--gender", "male", "--accent", "English", "--emotion", "sad", "--cache",
        cache.to_str().unwrap(),
    ];
    let first: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    let second: serde_json::Value = serde_json::from_str(&ok(&args)).unwrap();
    assert_eq!(first["cache_hit"], false);
    assert_eq!(second["cache_hit"], true);
    assert_eq!(first["key"], second["key"]);
    assert_eq!(first["prompt"], "A child male is speaking English with sad emotion.");
    assert_eq!(first["dim"], 768);
}

#[test]
fn config_and_parameter_reports() {
    let defaults = ok(&["config", "--print-defaults"]);
    assert!(defaults.contains("phoneme_dim"));
    assert!(ok(&["config", "--print-schema"]).contains("learning_rate"));
    let paper = ok(&["params", "--paper-scale"]);
    let total: f64 = paper.lines().last().unwrap().trim_start_matches("total: ").trim_end_matches('M').parse().unwrap();
    assert!((30.0..=80.0).contains(&total), "{total}");
}

#[test]
fn complexity_report() {
    let out = ok(&["bench-complexity", "--n", "8,16", "--m", "4,8", "--d", "16", "--layers", "1", "--repeats", "1"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["identity_holds"], true);
    assert_eq!(v["grid"].as_array().unwrap().len(), 4);
}

#[test]
fn train_then_synthesize() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("toy.cfg");
    std::fs::write(&cfg, ok(&["config", "--print-defaults"])).unwrap();
    let run = dir.path().join("run");
    let manifest = toy_manifest();
    let sets = [
        format!("manifest={manifest}"),
        format!("output_dir={}", run.display()),
        "total_steps=2".to_string(),
        "segment_frames=8".to_string(),
    ];
    let mut args = vec!["train", "--config", cfg.to_str().unwrap()];
    for s in &sets {
        args.extend(["--set", s.as_str()]);
    }
    ok(&args);
    let ckpt = run.join("latest.ckpt");
    assert!(ckpt.is_file());
    assert_eq!(std::fs::read_to_string(run.join("metrics.csv")).unwrap().lines().count(), 3);

    let wav = dir.path().join("out.wav");
    ok(&[
        "synth", "--text", "good morning", "--lang", "en", "--prompt", "A adult female is speaking English with happy emotion.",
        "--ckpt", ckpt.to_str().unwrap(), "--out", wav.to_str().unwrap(),
    ]);
    let spec = hound::WavReader::open(&wav).unwrap().spec();
    assert_eq!(spec.sample_rate, 22050);

    let sentences = dir.path().join("s.txt");
    std::fs::write(&sentences, "en|good morning\nzh|你好\n").unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&ok(&["bench-resources", "--ckpt", ckpt.to_str().unwrap(), "--sentences", sentences.to_str().unwrap()])).unwrap();
    assert_eq!(report["sentence_count"], 2);
    assert_eq!(report["batch_size"], 1);

    // A missing checkpoint is an error, not a panic.
    let out = parastyle(&["synth", "--text", "cat", "--prompt", "x", "--ckpt", "/nonexistent.ckpt", "--out", wav.to_str().unwrap()]);
    assert!(!out.status.success());
}
