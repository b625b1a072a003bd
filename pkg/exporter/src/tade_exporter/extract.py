"""Frozen feature extraction with subword-to-word mean pooling."""

from __future__ import annotations

import numpy as np
import torch


class AlignmentError(RuntimeError):
    """Tokenizer output could not be aligned back to the input words."""


def load_model(model_name: str):
    from transformers import AutoModel, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_name)
    model = AutoModel.from_pretrained(model_name)
    model.eval()
    return model, tokenizer


def read_conll_tokens(text: str) -> list[list[str]]:
    """Token-per-line CoNLL: first column is the word, blank lines split sentences."""
    sentences, words = [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            if words:
                sentences.append(words)
                words = []
            continue
        if line.startswith("-DOCSTART-"):
            continue
        words.append(line.split()[0])
    if words:
        sentences.append(words)
    return sentences


@torch.no_grad()
def sentence_vectors(model, tokenizer, words: list[str]) -> np.ndarray:
    """One row per input word: mean over that word's subword hidden states."""
    encoded = tokenizer(
        words,
        is_split_into_words=True,
        return_tensors="pt",
        truncation=False,
        add_special_tokens=True,
    )
    n_pieces = encoded["input_ids"].shape[1]
    max_len = getattr(model.config, "max_position_embeddings", None)
    if max_len is not None and n_pieces > max_len:
        raise AlignmentError(f"{n_pieces} pieces exceed the model limit of {max_len}")
    hidden = model(**encoded).last_hidden_state[0]
    word_ids = encoded.word_ids(0)

    buckets: dict[int, list[int]] = {}
    for piece_index, word_index in enumerate(word_ids):
        if word_index is not None:
            buckets.setdefault(word_index, []).append(piece_index)
    if sorted(buckets) != list(range(len(words))):
        missing = [i for i in range(len(words)) if i not in buckets]
        raise AlignmentError(f"no subword pieces for word position(s) {missing}")

    rows = np.empty((len(words), hidden.shape[1]), dtype=np.float32)
    for word_index in range(len(words)):
        rows[word_index] = hidden[buckets[word_index]].mean(dim=0).numpy()
    return rows


def phrase_vector(model, tokenizer, phrase: str) -> np.ndarray:
    """Single row: mean over the phrase's word vectors."""
    words = phrase.split()
    if not words:
        raise AlignmentError("empty phrase")
    return sentence_vectors(model, tokenizer, words).mean(axis=0, keepdims=True)
