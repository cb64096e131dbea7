#!/usr/bin/env python3
"""Prompt encoder for the `command` backend.

Reads one caption from stdin and prints its 768-dim sentence embedding
(mean-pooled all-mpnet-base-v2) as a JSON array on stdout.

    prompt_backend = "command"
    prompt_command = "python3 scripts/mpnet_embed.py"
"""
import json
import sys

from sentence_transformers import SentenceTransformer

MODEL = "sentence-transformers/all-mpnet-base-v2"


def main() -> None:
    text = sys.stdin.read().strip()
    if not text:
        sys.exit("empty prompt")
    model = SentenceTransformer(MODEL, device="cpu")
    vec = model.encode([text], normalize_embeddings=False)[0]
    json.dump([float(v) for v in vec], sys.stdout)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
