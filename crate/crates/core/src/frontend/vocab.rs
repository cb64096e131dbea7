use std::collections::HashMap;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::{Error, Result};

pub const START: &str = "[START]";
pub const END: &str = "[END]";
pub const BOUNDARY: &str = "[|]";
/// Style of a phoneme that carries neither tone nor stress.
pub const NONE: &str = "[NONE]";

/// Size of the shipped IPA inventory.
pub const IPA_PHONEMES: usize = 81;
pub const TONE_MARKERS: usize = 5;
pub const STRESS_MARKERS: usize = 3;
pub const SPECIAL_TOKENS: usize = 3;

/// Dense symbol ↔ id mapping; ids follow insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolTable {
    name: String,
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl SymbolTable {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            symbols: Vec::new(),
            index: HashMap::new(),
        }
    }

    fn push(&mut self, symbol: &str) -> Result<u32> {
        if self.index.contains_key(symbol) {
            return Err(Error::DuplicateSymbol {
                symbol: symbol.to_string(),
                file: self.name.clone(),
            });
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(symbol.to_string());
        self.index.insert(symbol.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> Result<&str> {
        self.symbols
            .get(id as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::IdOutOfRange {
                id,
                table: self.name.clone(),
                size: self.symbols.len(),
            })
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

/// Phoneme and prosody-style tables. Special tokens are appended after the
/// file contents, so they carry the highest ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    pub phonemes: SymbolTable,
    pub styles: SymbolTable,
}

impl Vocabulary {
    pub fn build_vocabulary(ipa_list_file: &Path, style_list_file: &Path) -> Result<Self> {
        let ipa = std::fs::read_to_string(ipa_list_file).map_err(|e| Error::io(ipa_list_file, e))?;
        let style =
            std::fs::read_to_string(style_list_file).map_err(|e| Error::io(style_list_file, e))?;
        Self::from_lists(
            &ipa,
            &ipa_list_file.display().to_string(),
            &style,
            &style_list_file.display().to_string(),
        )
    }

    pub fn from_lists(ipa: &str, ipa_name: &str, style: &str, style_name: &str) -> Result<Self> {
        let mut phonemes = SymbolTable::new(ipa_name);
        for s in parse_symbol_list(ipa, ipa_name)? {
            phonemes.push(&s)?;
        }
        let mut styles = SymbolTable::new(style_name);
        for s in parse_symbol_list(style, style_name)? {
            styles.push(&s)?;
        }
        styles.push(NONE)?;
        for special in [START, END, BOUNDARY] {
            phonemes.push(special)?;
            styles.push(special)?;
        }
        Ok(Self { phonemes, styles })
    }

    /// Checks the inventory sizes the model is specified against
    /// (81 phonemes, 5 tones, 3 stresses, 3 specials).
    pub fn check_reference_counts(&self) -> Result<()> {
        let want_p = IPA_PHONEMES + SPECIAL_TOKENS;
        let want_s = TONE_MARKERS + STRESS_MARKERS + 1 + SPECIAL_TOKENS;
        let tones = (1..=5).filter(|t| self.styles.id(&format!("T{t}")).is_some()).count();
        let stresses = (0..=2).filter(|s| self.styles.id(&format!("S{s}")).is_some()).count();
        if self.phonemes.len() != want_p
            || self.styles.len() != want_s
            || tones != TONE_MARKERS
            || stresses != STRESS_MARKERS
        {
            return Err(Error::Invalid(format!(
                "vocabulary sizes {}/{} (tones {tones}, stresses {stresses}) differ from {want_p}/{want_s}",
                self.phonemes.len(),
                self.styles.len()
            )));
        }
        Ok(())
    }

    pub fn phoneme_special(&self, symbol: &str) -> u32 {
        self.phonemes.id(symbol).expect("special tokens are always present")
    }

    pub fn style_special(&self, symbol: &str) -> u32 {
        self.styles.id(symbol).expect("special tokens are always present")
    }

    pub fn is_special_phoneme(&self, id: u32) -> bool {
        id as usize >= self.phonemes.len() - SPECIAL_TOKENS
    }

    pub fn is_special_style(&self, id: u32) -> bool {
        id as usize >= self.styles.len() - SPECIAL_TOKENS
    }

    pub fn stress_id(&self, digit: char) -> Option<u32> {
        self.styles.id(&format!("S{digit}"))
    }

    pub fn tone_id(&self, digit: char) -> Option<u32> {
        self.styles.id(&format!("T{digit}"))
    }
}

/// One symbol per line, NFC-normalised. `# count N` declares the expected
/// number of symbols; other `#` lines are comments.
fn parse_symbol_list(text: &str, name: &str) -> Result<Vec<String>> {
    let mut declared = None;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(n) = rest.strip_prefix("count") {
                let n = n.trim().parse::<usize>().map_err(|_| {
                    Error::Invalid(format!("{name}: malformed count header {line:?}"))
                })?;
                declared = Some(n);
            }
            continue;
        }
        let sym: String = line.nfc().collect();
        if out.contains(&sym) {
            return Err(Error::DuplicateSymbol {
                symbol: sym,
                file: name.to_string(),
            });
        }
        out.push(sym);
    }
    if out.is_empty() {
        return Err(Error::Invalid(format!("{name}: symbol list is empty")));
    }
    if let Some(declared) = declared {
        if declared != out.len() {
            return Err(Error::SymbolCount {
                file: name.to_string(),
                declared,
                found: out.len(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_symbol_is_named() {
        let err = Vocabulary::from_lists("a\nb\na\n", "ipa", "T1\n", "style").unwrap_err();
        match err {
            Error::DuplicateSymbol { symbol, .. } => assert_eq!(symbol, "a"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_lists_are_rejected() {
        assert!(Vocabulary::from_lists("", "ipa", "T1\n", "style").is_err());
        assert!(Vocabulary::from_lists("a\n", "ipa", "\n\n", "style").is_err());
    }

    #[test]
    fn count_header_is_enforced() {
        let err = Vocabulary::from_lists("# count 3\na\nb\n", "ipa", "T1\n", "style").unwrap_err();
        assert!(matches!(err, Error::SymbolCount { declared: 3, found: 2, .. }));
    }

    #[test]
    fn specials_are_appended_last() {
        let v = Vocabulary::from_lists("a\nb\n", "ipa", "T1\nS1\n", "style").unwrap();
        assert_eq!(v.phonemes.id(START), Some(2));
        assert_eq!(v.phonemes.id(BOUNDARY), Some(4));
        assert_eq!(v.styles.id(NONE), Some(2));
        assert_eq!(v.styles.id(BOUNDARY), Some(5));
        assert!(v.is_special_phoneme(2));
        assert!(!v.is_special_style(2));
    }
}
