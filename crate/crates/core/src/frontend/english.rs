use std::collections::HashMap;

use unicode_normalization::UnicodeNormalization;

use super::tables::{parse_tsv, tsv_map};
use super::{assemble, Language, PhonemeSequence, Vocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub word: String,
    pub arpabet: Vec<String>,
}

/// ARPAbet → IPA mapping plus a pronunciation lexicon.
#[derive(Debug, Clone)]
pub struct EnglishTables {
    arpabet: HashMap<String, String>,
    lexicon: HashMap<String, LexiconEntry>,
}

impl EnglishTables {
    pub fn parse(arpabet_ipa: &str, lexicon: &str) -> Result<Self> {
        let arpabet = tsv_map(parse_tsv(arpabet_ipa, "arpabet_ipa")?);
        let mut tables = Self {
            arpabet,
            lexicon: HashMap::new(),
        };
        for (word, pron) in parse_tsv(lexicon, "lexicon")? {
            let entry = LexiconEntry {
                word: word.to_uppercase(),
                arpabet: pron.split_whitespace().map(str::to_string).collect(),
            };
            for sym in &entry.arpabet {
                tables.ipa_for(sym)?;
            }
            tables.lexicon.insert(entry.word.clone(), entry);
        }
        Ok(tables)
    }

    pub fn lexicon(&self) -> &HashMap<String, LexiconEntry> {
        &self.lexicon
    }

    pub fn insert(&mut self, entry: LexiconEntry) -> Result<()> {
        for sym in &entry.arpabet {
            self.ipa_for(sym)?;
        }
        self.lexicon.insert(entry.word.to_uppercase(), entry);
        Ok(())
    }

    /// IPA symbol for an ARPAbet symbol; a stress-specific entry such as
    /// `AH0` wins over the bare `AH`.
    fn ipa_for(&self, sym: &str) -> Result<&str> {
        if let Some(ipa) = self.arpabet.get(sym) {
            return Ok(ipa);
        }
        let base = sym.trim_end_matches(|c: char| c.is_ascii_digit());
        self.arpabet
            .get(base)
            .map(String::as_str)
            .ok_or_else(|| Error::UnmappedSymbol {
                symbol: sym.to_string(),
                table: "arpabet_ipa".into(),
            })
    }
}

/// Splits on anything that is neither alphanumeric nor an apostrophe and
/// drops apostrophes at word edges.
pub fn english_words(text: &str) -> Vec<String> {
    let text: String = text.nfc().collect();
    text.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\''))
        .filter(|w| !w.is_empty())
        .map(str::to_uppercase)
        .collect()
}

pub fn tokenize_english(
    text: &str,
    tables: &EnglishTables,
    vocab: &Vocabulary,
) -> Result<PhonemeSequence> {
    let none = vocab.style_special(super::vocab::NONE);
    let mut words = Vec::new();
    for word in english_words(text) {
        let entry = tables
            .lexicon
            .get(&word)
            .ok_or_else(|| Error::UnknownWord(word.clone()))?;
        let mut phonemes = Vec::with_capacity(entry.arpabet.len());
        let mut styles = Vec::with_capacity(entry.arpabet.len());
        for sym in &entry.arpabet {
            let ipa = tables.ipa_for(sym)?;
            let pid = vocab.phonemes.id(ipa).ok_or_else(|| Error::UnmappedSymbol {
                symbol: ipa.to_string(),
                table: "ipa inventory".into(),
            })?;
            let sid = match sym.chars().last().filter(char::is_ascii_digit) {
                Some(d) => vocab.stress_id(d).ok_or_else(|| Error::UnmappedSymbol {
                    symbol: format!("S{d}"),
                    table: "style markers".into(),
                })?,
                None => none,
            };
            phonemes.push(pid);
            styles.push(sid);
        }
        words.push((phonemes, styles));
    }
    Ok(assemble(words, vocab, Language::En))
}
