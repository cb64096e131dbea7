use std::io::Write;

use parastyle::prompt::{build_prompt, cache_key, encode_prompt, Age, Emotion, Gender, HashBackend, PromptCache, StyleCaptionFields};
use parastyle::Error;

fn fields() -> StyleCaptionFields {
    StyleCaptionFields {
        age: Age::YoungAdult,
        gender: Gender::Male,
        accent: "Chinese".into(),
        emotion: Emotion::Angry,
    }
}

#[test]
fn caption_template() {
    assert_eq!(build_prompt(&fields()), "A young male is speaking Chinese with angry emotion.");
    assert!("elderly".parse::<Age>().is_err());
    assert_eq!("young".parse::<Age>().unwrap(), Age::YoungAdult);
}

#[test]
fn keys_ignore_unicode_normalization_form() {
    let composed = "A child female is speaking English with happy emotion. caf\u{e9}";
    let decomposed = "A child female is speaking English with happy emotion. cafe\u{301}";
    assert_eq!(cache_key("b", composed), cache_key("b", decomposed));
    assert_ne!(cache_key("a", composed), cache_key("b", composed));
}

#[test]
fn hash_backend_is_deterministic_and_finite() {
    let b = HashBackend::new(7, 32);
    let text = build_prompt(&fields());
    let x = encode_prompt(&text, &b).unwrap();
    assert_eq!(x, encode_prompt(&text, &b).unwrap());
    assert_eq!(x.dim(), 32);
    assert!(x.vector.iter().all(|v| v.is_finite()));
    assert_ne!(x.vector, encode_prompt(&text, &HashBackend::new(8, 32)).unwrap().vector);
}

#[test]
fn torn_tail_is_dropped_and_earlier_entries_survive() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.bin");
    let b = HashBackend::new(1, 8);
    let (k1, e1, _) = PromptCache::open(&path).unwrap().get_or_encode("first", &b).unwrap();
    let len = std::fs::metadata(&path).unwrap().len();
    PromptCache::open(&path).unwrap().get_or_encode("second", &b).unwrap();
    // Cut the second entry in half.
    let full = std::fs::metadata(&path).unwrap().len();
    let f = std::fs::OpenOptions::new().write(true).open(&path).unwrap();
    f.set_len(len + (full - len) / 2).unwrap();
    let c = PromptCache::open(&path).unwrap();
    assert_eq!(c.len(), 1);
    assert_eq!(c.require(&k1).unwrap(), e1);
    assert_eq!(c.issues().len(), 1);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), len);
}

#[test]
fn corrupted_entry_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.bin");
    let b = HashBackend::new(1, 8);
    let (k1, ..) = PromptCache::open(&path).unwrap().get_or_encode("first", &b).unwrap();
    let len = std::fs::metadata(&path).unwrap().len() as usize;
    let (k2, e2, _) = PromptCache::open(&path).unwrap().get_or_encode("second", &b).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[len - 10] ^= 0xff;
    std::fs::File::create(&path).unwrap().write_all(&bytes).unwrap();
    let c = PromptCache::open(&path).unwrap();
    assert!(matches!(c.require(&k1), Err(Error::CacheMiss(_))));
    assert_eq!(c.require(&k2).unwrap(), e2);
}

#[test]
fn non_cache_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bin");
    std::fs::write(&path, b"definitely not a cache").unwrap();
    assert!(matches!(PromptCache::open(&path), Err(Error::CorruptCache { .. })));
}
