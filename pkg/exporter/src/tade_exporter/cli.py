"""Dump contextual word vectors and phrase vectors to a TADE file.

Exit codes: 0 success, 2 for input or model-loading problems, 3 for
extraction failures (tokenization misalignment, reported with sentence id).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .extract import (
    AlignmentError,
    load_model,
    phrase_vector,
    read_conll_tokens,
    sentence_vectors,
)
from .tade import TadeWriter, phrase_key, sentence_key


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tade-export",
        description="Extract frozen word-level and phrase embeddings into a TADE file.",
    )
    parser.add_argument("--model-name", required=True, help="model id or local directory")
    parser.add_argument("--input", required=True, help="CoNLL file (first column tokens)")
    parser.add_argument("--phrases", help="optional file, one phrase per line")
    parser.add_argument("--out", required=True, help="output TADE file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.input).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read {args.input}: {exc}", file=sys.stderr)
        return 2
    sentences = read_conll_tokens(text)
    if not sentences:
        print(f"error: {args.input} holds no sentences", file=sys.stderr)
        return 2
    phrases: list[str] = []
    if args.phrases:
        try:
            raw = Path(args.phrases).read_text(encoding="utf-8")
        except OSError as exc:
            print(f"error: cannot read {args.phrases}: {exc}", file=sys.stderr)
            return 2
        phrases = [line.strip() for line in raw.splitlines() if line.strip()]

    try:
        model, tokenizer = load_model(args.model_name)
    except Exception as exc:
        print(f"error: failed to load model {args.model_name!r}: {exc}", file=sys.stderr)
        return 2

    dim = int(model.config.hidden_size)
    written = skipped = 0
    try:
        with TadeWriter(args.out, dim) as writer:
            for index, words in enumerate(sentences):
                try:
                    rows = sentence_vectors(model, tokenizer, words)
                except AlignmentError as exc:
                    print(f"error: sentence {index}: {exc}", file=sys.stderr)
                    return 3
                if writer.add(sentence_key(words), rows):
                    written += 1
                else:
                    skipped += 1
            for phrase in phrases:
                try:
                    row = phrase_vector(model, tokenizer, phrase)
                except AlignmentError as exc:
                    print(f"error: phrase {phrase!r}: {exc}", file=sys.stderr)
                    return 3
                if writer.add(phrase_key(phrase), row):
                    written += 1
                else:
                    skipped += 1
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return 2

    note = f" ({skipped} duplicate key(s) skipped)" if skipped else ""
    print(f"wrote {written} record(s) of width {dim} to {args.out}{note}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
