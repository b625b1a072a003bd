"""Synthetic vocab-separable corpora and a tuned training recipe for end-to-end tests.

The toy language: filler verbs carry no entities; every mention sits between
the universal delimiters "at" ... "fin", so boundary detection is learnable
from context and transfers to unseen types without adaptation. Each entity
type owns a disjoint mention vocabulary: a head token (always present, the
type's lexical anchor) and an optional tail token. Sources use two-token
mentions with probability p_tail; target mentions stay single-token so that
support fine-tuning covers the full mention vocabulary even at 1-shot.

The span encoder uses a context window of 1 (boundaries live in context); the
type encoder uses a window of 0 (type identity lives in the token), trained
with weight decay so untrained-token vectors keep their own directions
instead of collapsing onto one trained cluster.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from tadner.corpus import LabeledSentence, TaggingScheme, TypeNameMap
from tadner.encoder import Encoder, EncoderConfig, build_vocab
from tadner.episodes import Episode, SamplingConfig, sample_episode
from tadner.optim import OptimizerConfig
from tadner.pipeline import Models
from tadner.rng import PortableRng
from tadner.span_detector import FinetuneConfig, SpanHead, train_source_span
from tadner.type_classifier import train_source_type

FILLERS = ["walk", "jump", "rest", "sing", "hum", "drift", "gaze", "roam"]
LO, HI = "at", "fin"
DIM = 32


@dataclass(frozen=True)
class SynthType:
    label: str
    name: str
    head: str
    tail: str


def make_type(label: str) -> SynthType:
    return SynthType(label, f"{label}kind", f"{label}head", f"{label}extra")


def make_sentence(rng, types, extra=None, p_tail=0.0) -> LabeledSentence:
    tokens, tags = [], []

    def fill(k):
        for _ in range(k):
            tokens.append(FILLERS[rng.randint(len(FILLERS))])
            tags.append("O")

    fill(1 + rng.randint(2))
    picks = [types[rng.randint(len(types))] for _ in range(1 + rng.randint(2))]
    if extra is not None:
        picks.append(extra[rng.randint(len(extra))])
    for t in picks:
        tokens.append(LO)
        tags.append("O")
        tokens.append(t.head)
        tags.append(f"I-{t.label}")
        if p_tail and rng.uniform() < p_tail:
            tokens.append(t.tail)
            tags.append(f"I-{t.label}")
        tokens.append(HI)
        tags.append("O")
        fill(1 + rng.randint(2))
    return LabeledSentence(tuple(tokens), tuple(tags), TaggingScheme.IO)


def make_corpus(rng, types, n, **kw):
    return [make_sentence(rng, types, **kw) for _ in range(n)]


@dataclass
class SynthWorld:
    source: list
    target_pool: list
    distractor_queries: list
    name_map: TypeNameMap
    models: Models
    source_types: list
    target_types: list
    vocab: dict
    build_seconds: float = 0.0

    def span_finetune(self) -> FinetuneConfig:
        return FinetuneConfig(beta=2, learning_rate=0.5, max_steps=60)

    def type_finetune(self) -> FinetuneConfig:
        return FinetuneConfig(beta=2, learning_rate=0.1, max_steps=100)

    def episode(self, index: int, n_query: int = 30) -> Episode:
        sampled = sample_episode(
            self.target_pool, SamplingConfig(2, 1, seed=0), PortableRng(500 + index)
        )
        in_support = set(sampled.support)
        rest = [s for s in self.target_pool if s not in in_support]
        return Episode(
            sampled.support, tuple(rest[index * n_query : (index + 1) * n_query]), sampled.types
        )

    def distractor_episode(self) -> Episode:
        sampled = sample_episode(self.target_pool, SamplingConfig(2, 1, seed=0), PortableRng(555))
        return Episode(sampled.support, tuple(self.distractor_queries), sampled.types)


def build_world(master_seed: int = 1234) -> SynthWorld:
    """Generate the 4-source / 2-target corpus and train source models (about 20 s)."""
    started = time.monotonic()
    rng = PortableRng(master_seed)
    source_types = [make_type(f"src{i}") for i in range(4)]
    target_types = [make_type("tgtA"), make_type("tgtB")]
    all_types = source_types + target_types
    source = make_corpus(rng.spawn("src"), source_types, 300, p_tail=0.3)
    target_pool = make_corpus(rng.spawn("tgt"), target_types, 200)
    distractor_queries = make_corpus(rng.spawn("dist"), target_types, 40, extra=source_types)
    name_map = TypeNameMap({t.label: t.name for t in all_types})
    vocab = build_vocab(source + target_pool + distractor_queries + [[t.name for t in all_types]])

    seeds = PortableRng(master_seed + 1)
    span_seed = seeds.next_u64() & 0x7FFFFFFF
    type_seed = seeds.next_u64() & 0x7FFFFFFF
    span_encoder = Encoder.init(
        EncoderConfig(dim=DIM, vocab=vocab, context_window=1, layers=1, seed=span_seed)
    )
    type_encoder = Encoder.init(
        EncoderConfig(dim=DIM, vocab=vocab, context_window=0, layers=1, seed=type_seed)
    )
    head = SpanHead.init(2, DIM, seeds.spawn("head"), dropout_rate=0.2)
    train_source_span(
        span_encoder,
        head,
        source,
        OptimizerConfig(learning_rate=0.5, warmup_fraction=0.01, batch_size=32, max_steps=500),
        seeds.spawn("span"),
    )
    train_source_type(
        type_encoder,
        source,
        name_map,
        OptimizerConfig(
            learning_rate=0.15,
            warmup_fraction=0.01,
            batch_size=32,
            max_steps=1200,
            weight_decay=0.015,
        ),
        seeds.spawn("type"),
        tau=0.05,
    )
    return SynthWorld(
        source=source,
        target_pool=target_pool,
        distractor_queries=distractor_queries,
        name_map=name_map,
        models=Models(span_encoder, head, type_encoder, TaggingScheme.IO),
        source_types=source_types,
        target_types=target_types,
        vocab=vocab,
        build_seconds=time.monotonic() - started,
    )
