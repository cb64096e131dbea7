//! Text → parallel (IPA phoneme, prosody style) id sequences for English
//! and Mandarin.
//!
//! English words go through an ARPAbet lexicon; the stress digit of each
//! vowel becomes its style token and consonants get `[NONE]`. Chinese
//! characters are romanized to toned pinyin, split into initial and final,
//! and every phoneme of the syllable carries the syllable's tone. Words
//! (characters for Chinese) are separated by `[|]` and the sequence is
//! wrapped in `[START]` / `[END]` in both streams.

mod chinese;
mod english;
mod tables;
mod vocab;

pub use chinese::{tokenize_chinese, ChineseTables};
pub use english::{english_words, tokenize_english, EnglishTables, LexiconEntry};
pub use tables::{parse_tsv, read_tsv};
pub use vocab::{SymbolTable, Vocabulary, BOUNDARY, END, NONE, START};

use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Language {
    En,
    Zh,
}

impl Language {
    /// Language name used in style captions.
    pub fn name(self) -> &'static str {
        match self {
            Language::En => "English",
            Language::Zh => "Chinese",
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Zh => "zh",
        }
    }
}

impl FromStr for Language {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "en" | "english" => Ok(Language::En),
            "zh" | "chinese" | "mandarin" => Ok(Language::Zh),
            other => Err(Error::Invalid(format!("unknown language {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhonemeSequence {
    pub phoneme_ids: Vec<u32>,
    pub style_ids: Vec<u32>,
    pub language: Language,
}

impl PhonemeSequence {
    pub fn len(&self) -> usize {
        self.phoneme_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phoneme_ids.is_empty()
    }

    /// Checks the structural invariants against `vocab`.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.phoneme_ids.len() != self.style_ids.len() {
            return Err(Error::shape("phoneme/style lengths", self.phoneme_ids.len(), self.style_ids.len()));
        }
        let (p, s) = (&self.phoneme_ids, &self.style_ids);
        if p.len() < 2
            || p[0] != vocab.phoneme_special(START)
            || s[0] != vocab.style_special(START)
            || p[p.len() - 1] != vocab.phoneme_special(END)
            || s[s.len() - 1] != vocab.style_special(END)
        {
            return Err(Error::Invalid("sequence must start with [START] and end with [END]".into()));
        }
        for &id in p {
            vocab.phonemes.symbol(id)?;
        }
        for &id in s {
            vocab.styles.symbol(id)?;
        }
        Ok(())
    }
}

/// Joins per-word id spans with boundaries and wraps them in START/END.
pub(crate) fn assemble(
    words: Vec<(Vec<u32>, Vec<u32>)>,
    vocab: &Vocabulary,
    language: Language,
) -> PhonemeSequence {
    let mut phoneme_ids = vec![vocab.phoneme_special(START)];
    let mut style_ids = vec![vocab.style_special(START)];
    for (i, (p, s)) in words.into_iter().enumerate() {
        if i > 0 {
            phoneme_ids.push(vocab.phoneme_special(BOUNDARY));
            style_ids.push(vocab.style_special(BOUNDARY));
        }
        phoneme_ids.extend(p);
        style_ids.extend(s);
    }
    phoneme_ids.push(vocab.phoneme_special(END));
    style_ids.push(vocab.style_special(END));
    PhonemeSequence {
        phoneme_ids,
        style_ids,
        language,
    }
}

/// Renders a sequence as space-separated IPA with style suffixes:
/// `:d` for stress `Sd`, `^d` for tone `Td`, `|` for a word boundary.
/// START/END are implicit.
pub fn sequence_to_text(seq: &PhonemeSequence, vocab: &Vocabulary) -> Result<String> {
    if seq.phoneme_ids.len() != seq.style_ids.len() {
        return Err(Error::shape("phoneme/style lengths", seq.phoneme_ids.len(), seq.style_ids.len()));
    }
    let start = (vocab.phoneme_special(START), vocab.style_special(START));
    let end = (vocab.phoneme_special(END), vocab.style_special(END));
    let boundary = (vocab.phoneme_special(BOUNDARY), vocab.style_special(BOUNDARY));
    let none = vocab.style_special(NONE);
    let mut pairs: Vec<(u32, u32)> = seq
        .phoneme_ids
        .iter()
        .copied()
        .zip(seq.style_ids.iter().copied())
        .collect();
    for &(p, s) in &pairs {
        vocab.phonemes.symbol(p)?;
        vocab.styles.symbol(s)?;
    }
    if pairs.first() == Some(&start) {
        pairs.remove(0);
    }
    if pairs.last() == Some(&end) {
        pairs.pop();
    }
    let mut out = Vec::with_capacity(pairs.len());
    for (p, s) in pairs {
        if (p, s) == boundary {
            out.push("|".to_string());
            continue;
        }
        let sym = vocab.phonemes.symbol(p)?;
        let style = vocab.styles.symbol(s)?;
        let token = if s == none {
            sym.to_string()
        } else if let Some(d) = style.strip_prefix('S').filter(|d| d.len() == 1) {
            format!("{sym}:{d}")
        } else if let Some(d) = style.strip_prefix('T').filter(|d| d.len() == 1) {
            format!("{sym}^{d}")
        } else {
            format!("{sym}@{style}")
        };
        out.push(token);
    }
    Ok(out.join(" "))
}

/// Inverse of [`sequence_to_text`].
pub fn text_to_sequence(text: &str, language: Language, vocab: &Vocabulary) -> Result<PhonemeSequence> {
    let none = vocab.style_special(NONE);
    let mut words = vec![(Vec::new(), Vec::new())];
    for token in text.split_whitespace() {
        if token == "|" {
            words.push((Vec::new(), Vec::new()));
            continue;
        }
        let (sym, style) = if let Some((sym, style)) = token.rsplit_once('@') {
            (sym, vocab.styles.id(style))
        } else if let Some((sym, d)) = token.rsplit_once(':') {
            (sym, vocab.styles.id(&format!("S{d}")))
        } else if let Some((sym, d)) = token.rsplit_once('^') {
            (sym, vocab.styles.id(&format!("T{d}")))
        } else {
            (token, Some(none))
        };
        let pid = vocab.phonemes.id(sym).ok_or_else(|| Error::UnmappedSymbol {
            symbol: sym.to_string(),
            table: "ipa inventory".into(),
        })?;
        let sid = style.ok_or_else(|| Error::UnmappedSymbol {
            symbol: token.to_string(),
            table: "style markers".into(),
        })?;
        let w = words.last_mut().expect("non-empty");
        w.0.push(pid);
        w.1.push(sid);
    }
    if words.len() == 1 && words[0].0.is_empty() {
        words.clear();
    }
    Ok(assemble(words, vocab, language))
}

/// Vocabulary plus both languages' tables.
#[derive(Debug, Clone)]
pub struct Frontend {
    pub vocab: Vocabulary,
    pub english: EnglishTables,
    pub chinese: ChineseTables,
}

impl Frontend {
    /// Tables shipped with the crate; parsed once per process.
    pub fn bundled() -> &'static Frontend {
        static BUNDLED: OnceLock<Frontend> = OnceLock::new();
        BUNDLED.get_or_init(|| {
            use tables::bundled::*;
            let vocab = Vocabulary::from_lists(IPA_PHONEMES, "ipa_phonemes.txt", STYLE_MARKERS, "style_markers.txt")
                .expect("bundled vocabulary is valid");
            let english = EnglishTables::parse(ARPABET_IPA, LEXICON_EN).expect("bundled lexicon is valid");
            let chinese = ChineseTables::parse(ROMANIZATION_ZH, PINYIN_SPLIT, PINYIN_INITIALS, PINYIN_FINALS)
                .expect("bundled pinyin tables are valid");
            Frontend { vocab, english, chinese }
        })
    }

    /// Bundled tables with a replacement lexicon and/or romanization file.
    pub fn with_overrides(lexicon: Option<&Path>, romanization: Option<&Path>) -> Result<Frontend> {
        use tables::bundled::*;
        let mut fe = Self::bundled().clone();
        if let Some(path) = lexicon {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            fe.english = EnglishTables::parse(ARPABET_IPA, &text)?;
        }
        if let Some(path) = romanization {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            fe.chinese = ChineseTables::parse(&text, PINYIN_SPLIT, PINYIN_INITIALS, PINYIN_FINALS)?;
        }
        Ok(fe)
    }

    pub fn tokenize(&self, language: Language, text: &str) -> Result<PhonemeSequence> {
        match language {
            Language::En => tokenize_english(text, &self.english, &self.vocab),
            Language::Zh => tokenize_chinese(text, &self.chinese, &self.vocab),
        }
    }
}
