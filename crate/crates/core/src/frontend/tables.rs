use std::collections::HashMap;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::{Error, Result};

/// Parses `KEY<TAB>VALUE` lines (NFC-normalised, blank lines ignored).
pub fn parse_tsv(text: &str, name: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('\t').ok_or_else(|| {
            Error::Invalid(format!("{name}:{}: expected KEY<TAB>VALUE, got {line:?}", n + 1))
        })?;
        out.push((k.trim().nfc().collect(), v.trim().nfc().collect()));
    }
    Ok(out)
}

pub fn read_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, &path.display().to_string())
}

pub fn tsv_map(rows: Vec<(String, String)>) -> HashMap<String, String> {
    rows.into_iter().collect()
}

pub(crate) mod bundled {
    pub const IPA_PHONEMES: &str = include_str!("../../data/ipa_phonemes.txt");
    pub const STYLE_MARKERS: &str = include_str!("../../data/style_markers.txt");
    pub const ARPABET_IPA: &str = include_str!("../../data/arpabet_ipa.tsv");
    pub const LEXICON_EN: &str = include_str!("../../data/lexicon_en.tsv");
    pub const ROMANIZATION_ZH: &str = include_str!("../../data/romanization_zh.tsv");
    pub const PINYIN_SPLIT: &str = include_str!("../../data/pinyin_split.tsv");
    pub const PINYIN_INITIALS: &str = include_str!("../../data/pinyin_initials_ipa.tsv");
    pub const PINYIN_FINALS: &str = include_str!("../../data/pinyin_finals_ipa.tsv");
}
