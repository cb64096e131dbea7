mod common;

use parastyle::frontend::{sequence_to_text, text_to_sequence, Frontend, Language, PhonemeSequence, BOUNDARY, START};
use parastyle::Error;
use proptest::prelude::*;

#[test]
fn golden_corpora_and_invariants() {
    common::criteria::tokenizer_suite().unwrap();
}

#[test]
fn lexicon_override_replaces_bundled_entries() {
    let dir = tempfile::tempdir().unwrap();
    let lex = dir.path().join("lex.tsv");
    std::fs::write(&lex, "ZORP\tZ AO1 R P\n").unwrap();
    let fe = Frontend::with_overrides(Some(&lex), None).unwrap();
    let seq = fe.tokenize(Language::En, "zorp").unwrap();
    assert_eq!(seq.len(), 6);
    assert!(matches!(fe.tokenize(Language::En, "cat"), Err(Error::UnknownWord(w)) if w == "CAT"));
}

#[test]
fn corrupted_id_is_a_range_error() {
    let fe = Frontend::bundled();
    let mut seq = fe.tokenize(Language::En, "cat").unwrap();
    seq.phoneme_ids[1] = 9999;
    assert!(matches!(seq.validate(&fe.vocab), Err(Error::IdOutOfRange { id: 9999, .. })));
    assert!(matches!(sequence_to_text(&seq, &fe.vocab), Err(Error::IdOutOfRange { .. })));
}

fn boundaries(seq: &PhonemeSequence) -> usize {
    let b = Frontend::bundled().vocab.phoneme_special(BOUNDARY);
    seq.phoneme_ids.iter().filter(|&&p| p == b).count()
}

const WORDS: [&str; 8] = ["cat", "dog", "the", "smooth", "planks", "glue", "sheet", "blue"];
const CHARS: [char; 8] = ['你', '好', '我', '们', '中', '国', '大', '学'];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn english_structure(words in proptest::collection::vec(0usize..WORDS.len(), 1..8)) {
        let fe = Frontend::bundled();
        let text = words.iter().map(|&i| WORDS[i]).collect::<Vec<_>>().join(" ");
        let seq = fe.tokenize(Language::En, &text).unwrap();
        prop_assert_eq!(seq.phoneme_ids.len(), seq.style_ids.len());
        prop_assert_eq!(seq.phoneme_ids[0], fe.vocab.phoneme_special(START));
        prop_assert_eq!(boundaries(&seq), words.len() - 1);
        let back = text_to_sequence(&sequence_to_text(&seq, &fe.vocab).unwrap(), Language::En, &fe.vocab).unwrap();
        prop_assert_eq!(back, seq);
    }

    #[test]
    fn chinese_structure(chars in proptest::collection::vec(0usize..CHARS.len(), 1..8)) {
        let fe = Frontend::bundled();
        let text: String = chars.iter().map(|&i| CHARS[i]).collect();
        let seq = fe.tokenize(Language::Zh, &text).unwrap();
        prop_assert_eq!(seq.phoneme_ids.len(), seq.style_ids.len());
        prop_assert_eq!(boundaries(&seq), chars.len() - 1);
        prop_assert_eq!(fe.tokenize(Language::Zh, &text).unwrap(), seq);
    }
}
