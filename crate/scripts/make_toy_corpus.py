#!/usr/bin/env python3
"""Writes the 10-utterance toy corpus used by the overfit check.

The audio is a deterministic source-filter synthesis: a harmonic pulse train
shaped by moving vowel formants, one syllable per written syllable. It is not
speech, but it has the pitch and spectral-envelope structure that makes a
mel reconstruction loss meaningful.
"""
import argparse
import pathlib
import wave

import numpy as np

SR = 22050

# (id, language, age, gender, emotion, text, syllables)
UTTERANCES = [
    ("toy01", "en", "adult", "female", "happy", "Good morning.", 3),
    ("toy02", "en", "adult", "male", "sad", "Thank you very much.", 5),
    ("toy03", "en", "child", "female", "surprise", "Look at the moon.", 4),
    ("toy04", "en", "teenager", "male", "neutral", "Close the door.", 3),
    ("toy05", "en", "youngadult", "female", "angry", "Stop that now.", 3),
    ("toy06", "zh", "adult", "male", "happy", "你好。", 2),
    ("toy07", "zh", "teenager", "female", "neutral", "谢谢你。", 3),
    ("toy08", "zh", "adult", "female", "sad", "我很好。", 3),
    ("toy09", "zh", "child", "male", "surprise", "下雨了。", 3),
    ("toy10", "zh", "adult", "female", "neutral", "早上好。", 3),
]

F0 = {("female", "child"): 290, ("male", "child"): 270, ("female", "teenager"): 230,
      ("male", "teenager"): 160, ("female", "youngadult"): 215, ("male", "youngadult"): 125,
      ("female", "adult"): 205, ("male", "adult"): 115}
VOWELS = [(730, 1090), (270, 2290), (300, 870), (530, 1840), (640, 1190), (490, 1350)]


def syllable(rng, f0, n, vowel, emotion):
    t = np.arange(n) / SR
    glide = {"happy": 0.25, "surprise": 0.4, "angry": 0.1, "sad": -0.15}.get(emotion, 0.0)
    pitch = f0 * (1.0 + glide * np.sin(np.pi * t / t[-1]) + 0.01 * rng.standard_normal())
    phase = 2 * np.pi * np.cumsum(pitch) / SR
    f1, f2 = vowel
    out = np.zeros(n)
    for h in range(1, 40):
        freq = h * pitch
        gain = (np.exp(-((freq - f1) / 120.0) ** 2) + 0.6 * np.exp(-((freq - f2) / 180.0) ** 2) + 0.05 / h)
        gain = np.where(freq < SR / 2 - 500, gain, 0.0)
        out += gain * np.sin(h * phase)
    env = np.minimum(1.0, np.minimum(t, t[-1] - t) / 0.02)
    return out * env


def synth(seed, f0, syllables, emotion):
    rng = np.random.default_rng(seed)
    parts = [np.zeros(int(0.05 * SR))]
    for _ in range(syllables):
        n = int(SR * rng.uniform(0.16, 0.24))
        parts.append(syllable(rng, f0, n, VOWELS[rng.integers(len(VOWELS))], emotion))
        parts.append(np.zeros(int(SR * rng.uniform(0.02, 0.05))))
    parts.append(np.zeros(int(0.05 * SR)))
    y = np.concatenate(parts)
    y += 0.003 * rng.standard_normal(len(y))
    return 0.5 * y / np.max(np.abs(y))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", type=pathlib.Path)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (uid, lang, age, gender, emotion, text, syl) in enumerate(UTTERANCES):
        y = synth(1000 + i, F0[(gender, age)], syl, emotion)
        pcm = np.clip(np.round(y * 32767), -32768, 32767).astype("<i2")
        with wave.open(str(args.out / f"{uid}.wav"), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(SR)
            w.writeframes(pcm.tobytes())
        lines.append(f"{uid}|{uid}.wav|{lang}|{age}|{gender}|{emotion}|{text}")
    (args.out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


if __name__ == "__main__":
    main()
