#!/usr/bin/env python3
"""Regenerate the tokenizer tables under crates/core/data/.

Requires the `cmudict` and `pypinyin` packages. The hand-written mapping
tables (ARPAbet/pinyin -> IPA) live in this file; the lexicon and the
character romanization table are extracted from those packages.
"""
import os
import re
import unicodedata

import cmudict
from pypinyin import Style, pinyin

OUT = os.path.join(os.path.dirname(__file__), "..", "crates", "core", "data")

ARPABET_IPA = [
    ("AA", "ɑ"), ("AE", "æ"), ("AH", "ʌ"), ("AH0", "ə"), ("AO", "ɔ"),
    ("AW", "aʊ"), ("AY", "aɪ"), ("EH", "ɛ"), ("ER", "ɝ"), ("ER0", "ɚ"),
    ("EY", "eɪ"), ("IH", "ɪ"), ("IY", "i"), ("OW", "oʊ"), ("OY", "ɔɪ"),
    ("UH", "ʊ"), ("UW", "u"),
    ("B", "b"), ("CH", "tʃ"), ("D", "d"), ("DH", "ð"), ("F", "f"),
    ("G", "ɡ"), ("HH", "h"), ("JH", "dʒ"), ("K", "k"), ("L", "l"),
    ("M", "m"), ("N", "n"), ("NG", "ŋ"), ("P", "p"), ("R", "ɹ"),
    ("S", "s"), ("SH", "ʃ"), ("T", "t"), ("TH", "θ"), ("V", "v"),
    ("W", "w"), ("Y", "j"), ("Z", "z"), ("ZH", "ʒ"),
]

INITIALS_IPA = [
    ("b", "p"), ("p", "pʰ"), ("m", "m"), ("f", "f"), ("d", "t"),
    ("t", "tʰ"), ("n", "n"), ("l", "l"), ("g", "k"), ("k", "kʰ"),
    ("h", "x"), ("j", "tɕ"), ("q", "tɕʰ"), ("x", "ɕ"), ("zh", "ʈʂ"),
    ("ch", "ʈʂʰ"), ("sh", "ʂ"), ("r", "ʐ"), ("z", "ts"), ("c", "tsʰ"),
    ("s", "s"),
]

FINALS_IPA = [
    ("a", "a"), ("o", "o"), ("e", "ɤ"), ("i", "i"), ("u", "u"), ("v", "y"),
    ("ai", "aɪ"), ("ei", "eɪ"), ("ao", "aʊ"), ("ou", "oʊ"),
    ("an", "a n"), ("en", "ə n"), ("ang", "ɑ ŋ"), ("eng", "ə ŋ"),
    ("ong", "ʊ ŋ"), ("er", "ɚ"),
    ("ia", "j a"), ("ie", "j ɛ"), ("iao", "j aʊ"), ("iu", "j oʊ"),
    ("io", "j o"), ("ian", "j ɛ n"), ("in", "i n"), ("iang", "j ɑ ŋ"),
    ("ing", "i ŋ"), ("iong", "j ʊ ŋ"),
    ("ua", "w a"), ("uo", "w o"), ("uai", "w aɪ"), ("ui", "w eɪ"),
    ("uan", "w a n"), ("un", "w ə n"), ("uang", "w ɑ ŋ"), ("ueng", "w ə ŋ"),
    ("ve", "ɥ e"), ("van", "ɥ ɛ n"), ("vn", "y n"),
    ("ii", "ɹ̩"), ("iii", "ɻ̩"),
]

# Symbols outside the closure of the two mapping tables, appended so the
# inventory reaches its fixed size of 81.
PADDING = [
    "ʔ", "ɾ", "ɫ", "ç", "ɲ", "ʎ", "β", "ɣ", "ʁ", "χ",
    "ø", "œ", "ɯ", "ɐ", "ɜ", "ɒ", "ɵ", "ʉ", "ɨ",
]

Y_W_REWRITE = {
    "yi": "i", "ya": "ia", "ye": "ie", "yao": "iao", "you": "iu", "yan": "ian",
    "yin": "in", "yang": "iang", "ying": "ing", "yong": "iong", "yo": "io",
    "yu": "v", "yue": "ve", "yuan": "van", "yun": "vn",
    "wu": "u", "wa": "ua", "wo": "uo", "wai": "uai", "wei": "ui",
    "wan": "uan", "wen": "un", "wang": "uang", "weng": "ueng",
}

INITIAL_ORDER = ["zh", "ch", "sh"] + [k for k, _ in INITIALS_IPA if len(k) == 1]


def nfc(s):
    return unicodedata.normalize("NFC", s)


def split_syllable(syl):
    if syl in Y_W_REWRITE:
        return "_", Y_W_REWRITE[syl]
    for ini in INITIAL_ORDER:
        if syl.startswith(ini) and len(syl) > len(ini):
            fin = syl[len(ini):]
            if ini in ("j", "q", "x") and fin.startswith("u"):
                fin = "v" + fin[1:]
            if fin == "i" and ini in ("zh", "ch", "sh", "r"):
                fin = "iii"
            elif fin == "i" and ini in ("z", "c", "s"):
                fin = "ii"
            return ini, fin
    return "_", syl


def main():
    finals = {k for k, _ in FINALS_IPA}

    inventory = []
    for table in (ARPABET_IPA, INITIALS_IPA, FINALS_IPA):
        for _, v in table:
            for sym in v.split():
                sym = nfc(sym)
                if sym not in inventory:
                    inventory.append(sym)
    closure = len(inventory)
    for sym in PADDING:
        assert sym not in inventory, sym
        inventory.append(sym)
    assert len(inventory) == 81, (closure, len(inventory))

    with open(os.path.join(OUT, "ipa_phonemes.txt"), "w", encoding="utf-8") as f:
        f.write("# count 81\n")
        f.write(f"# first {closure} symbols: closure of the ARPAbet and pinyin mapping tables\n")
        for sym in inventory:
            f.write(sym + "\n")

    with open(os.path.join(OUT, "style_markers.txt"), "w", encoding="utf-8") as f:
        f.write("# count 8\n")
        for sym in ["T1", "T2", "T3", "T4", "T5", "S0", "S1", "S2"]:
            f.write(sym + "\n")

    def write_tsv(name, rows):
        with open(os.path.join(OUT, name), "w", encoding="utf-8") as f:
            for k, v in rows:
                f.write(f"{k}\t{nfc(v)}\n")

    write_tsv("arpabet_ipa.tsv", ARPABET_IPA)
    write_tsv("pinyin_initials_ipa.tsv", INITIALS_IPA)
    write_tsv("pinyin_finals_ipa.tsv", FINALS_IPA)

    # English lexicon: first pronunciation of every purely alphabetic entry.
    d = cmudict.dict()
    rows = []
    for word in sorted(d):
        if not re.fullmatch(r"[a-z]+('[a-z]+)?", word):
            continue
        rows.append((word.upper(), " ".join(d[word][0])))
    write_tsv("lexicon_en.tsv", rows)

    # Character romanization over the CJK Unified Ideographs block.
    roman = []
    syllables = set()
    for cp in range(0x4E00, 0x9FA6):
        ch = chr(cp)
        py = pinyin(ch, style=Style.TONE3, neutral_tone_with_five=True)[0][0]
        m = re.fullmatch(r"([a-z]+)([1-5])", py)
        if not m:
            continue
        syl = m.group(1)
        ini, fin = split_syllable(syl)
        if fin not in finals:
            continue
        roman.append((ch, py))
        syllables.add(syl)
    write_tsv("romanization_zh.tsv", roman)
    write_tsv(
        "pinyin_split.tsv",
        [(s, " ".join(split_syllable(s))) for s in sorted(syllables)],
    )
    print(f"inventory closure {closure}, lexicon {len(rows)}, chars {len(roman)}, syllables {len(syllables)}")


if __name__ == "__main__":
    main()
