use std::collections::HashMap;

use unicode_normalization::UnicodeNormalization;

use super::tables::{parse_tsv, tsv_map};
use super::{assemble, Language, PhonemeSequence, Vocabulary};
use crate::{Error, Result};

/// Character romanization, syllable split and initial/final → IPA tables.
#[derive(Debug, Clone)]
pub struct ChineseTables {
    romanization: HashMap<char, String>,
    split: HashMap<String, (String, String)>,
    initials: HashMap<String, String>,
    finals: HashMap<String, String>,
}

/// Marker for a syllable without an initial in the split table.
const EMPTY_INITIAL: &str = "_";

impl ChineseTables {
    pub fn parse(romanization: &str, split: &str, initials: &str, finals: &str) -> Result<Self> {
        let mut roman = HashMap::new();
        for (k, v) in parse_tsv(romanization, "romanization")? {
            let mut chars = k.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => {
                    roman.insert(c, v);
                }
                _ => return Err(Error::Invalid(format!("romanization key {k:?} is not one character"))),
            }
        }
        let mut split_map = HashMap::new();
        for (k, v) in parse_tsv(split, "pinyin_split")? {
            let (ini, fin) = v
                .split_once(' ')
                .ok_or_else(|| Error::Invalid(format!("split entry {k:?} needs 'INITIAL FINAL'")))?;
            split_map.insert(k, (ini.to_string(), fin.to_string()));
        }
        Ok(Self {
            romanization: roman,
            split: split_map,
            initials: tsv_map(parse_tsv(initials, "pinyin_initials_ipa")?),
            finals: tsv_map(parse_tsv(finals, "pinyin_finals_ipa")?),
        })
    }

    pub fn romanize(&self, c: char) -> Option<&str> {
        self.romanization.get(&c).map(String::as_str)
    }

    /// IPA symbols of a toneless syllable.
    fn syllable_ipa(&self, syllable: &str) -> Result<Vec<&str>> {
        let (ini, fin) = self.split.get(syllable).ok_or_else(|| Error::UnmappedSymbol {
            symbol: syllable.to_string(),
            table: "pinyin_split".into(),
        })?;
        let mut out = Vec::new();
        if ini != EMPTY_INITIAL {
            let ipa = self.initials.get(ini).ok_or_else(|| Error::UnmappedSymbol {
                symbol: ini.clone(),
                table: "pinyin_initials_ipa".into(),
            })?;
            out.extend(ipa.split_whitespace());
        }
        let ipa = self.finals.get(fin).ok_or_else(|| Error::UnmappedSymbol {
            symbol: fin.clone(),
            table: "pinyin_finals_ipa".into(),
        })?;
        out.extend(ipa.split_whitespace());
        Ok(out)
    }
}

/// Every character is its own word; whitespace and punctuation are skipped.
pub fn tokenize_chinese(
    text: &str,
    tables: &ChineseTables,
    vocab: &Vocabulary,
) -> Result<PhonemeSequence> {
    let text: String = text.nfc().collect();
    let mut words = Vec::new();
    for c in text.chars().filter(|c| c.is_alphanumeric()) {
        let pinyin = tables.romanize(c).ok_or(Error::UnknownCharacter(c))?;
        let (syllable, tone) = match pinyin.char_indices().last() {
            Some((i, d)) if d.is_ascii_digit() => (&pinyin[..i], d),
            _ => (pinyin, '5'),
        };
        let tone_id = vocab.tone_id(tone).ok_or_else(|| Error::UnmappedSymbol {
            symbol: format!("T{tone}"),
            table: "style markers".into(),
        })?;
        let mut phonemes = Vec::new();
        for ipa in tables.syllable_ipa(syllable)? {
            phonemes.push(vocab.phonemes.id(ipa).ok_or_else(|| Error::UnmappedSymbol {
                symbol: ipa.to_string(),
                table: "ipa inventory".into(),
            })?);
        }
        let styles = vec![tone_id; phonemes.len()];
        words.push((phonemes, styles));
    }
    Ok(assemble(words, vocab, Language::Zh))
}
