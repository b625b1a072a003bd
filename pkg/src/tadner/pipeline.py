"""End-to-end episode inference: adapt on support, extract, filter, classify.

Every episode adapts fresh copies of the source-trained parameters; the source
models passed in are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import LabeledSentence, SpanAnnotation, TaggingScheme, TypeNameMap, spans_from_tags
from .encoder import Encoder
from .rng import PortableRng
from .span_detector import FinetuneConfig, SpanHead, extract_candidate_spans, finetune_span
from .type_classifier import (
    SpanInContext,
    build_prototypes,
    classify_spans,
    collect_entity_tokens,
    compute_threshold,
    finetune_type,
    make_name_fn,
    support_only_prototypes,
    zero_shot_prototypes,
)


@dataclass
class Models:
    span_encoder: Encoder
    span_head: SpanHead
    type_encoder: Encoder
    scheme: TaggingScheme


@dataclass
class PipelineAblations:
    no_filter: bool = False
    no_type_names: bool = False
    no_span_finetune: bool = False
    no_type_finetune: bool = False


@dataclass
class PipelineConfig:
    span_finetune: FinetuneConfig
    type_finetune: FinetuneConfig
    ablations: PipelineAblations = field(default_factory=PipelineAblations)
    zero_shot: bool = False
    literal_adaptation_loss: bool = False
    name_vector_seed: int = 0

    def __post_init__(self):
        # zero-shot has no support set, so both fine-tuning stages are off
        # and the support-derived filter threshold cannot exist.
        if self.zero_shot:
            self.ablations.no_span_finetune = True
            self.ablations.no_type_finetune = True


@dataclass(frozen=True)
class EpisodePrediction:
    sentences: tuple[LabeledSentence, ...]
    pred_spans: tuple[tuple[SpanAnnotation, ...], ...]
    gold_spans: tuple[tuple[SpanAnnotation, ...], ...]


def _episode_tokens(episode, name_map: TypeNameMap | None):
    """Every token the episode can ask the encoders about, including type names."""
    tokens: set[str] = set()
    for sent in list(episode.support) + list(episode.query):
        tokens.update(sent.tokens)
    if name_map is not None:
        for label in episode.types:
            tokens.update(name_map.name_for(label).split())
    return tokens


def run_episode(
    models: Models,
    episode,
    cfg: PipelineConfig,
    name_map: TypeNameMap | None,
    seed: int = 0,
) -> EpisodePrediction:
    rng = PortableRng(seed)
    # adapt fresh copies whose vocabularies cover the episode's tokens; novel
    # tokens get seeded random rows and train only through the fine-tunes
    tokens = _episode_tokens(episode, name_map)
    span_encoder = models.span_encoder.extended(tokens)
    span_head = models.span_head.copy()
    type_encoder = models.type_encoder.extended(tokens)
    support = list(episode.support)
    types = list(episode.types)
    abl = cfg.ablations

    if support and not abl.no_span_finetune:
        finetune_span(span_encoder, span_head, support, cfg.span_finetune, rng.spawn("span"))

    name_fn = (
        make_name_fn(type_encoder, None, random_vectors=True, seed=cfg.name_vector_seed)
        if abl.no_type_names
        else None
    )
    if support and not abl.no_type_finetune:
        finetune_type(
            type_encoder,
            support,
            types,
            name_map,
            cfg.type_finetune,
            literal=cfg.literal_adaptation_loss,
            name_fn=name_fn,
        )

    candidates = []
    for q_index, sent in enumerate(episode.query):
        for span in extract_candidate_spans(span_encoder, span_head, sent.tokens, models.scheme):
            candidates.append(SpanInContext(sent.tokens, span.start, span.end, q_index))

    filtering = bool(support) and not abl.no_filter and not cfg.zero_shot
    threshold = None
    if filtering:
        threshold = compute_threshold(
            type_encoder, collect_entity_tokens(support), name_map, name_fn=name_fn
        )

    if cfg.zero_shot or not support:
        prototypes = zero_shot_prototypes(type_encoder, types, name_map, name_fn=name_fn)
    elif abl.no_type_names:
        prototypes = support_only_prototypes(type_encoder, support, types)
    else:
        prototypes = build_prototypes(type_encoder, support, types, name_map)

    kept = classify_spans(type_encoder, prototypes, threshold, candidates)

    pred: list[list[SpanAnnotation]] = [[] for _ in episode.query]
    for cand, label in kept:
        pred[cand.sentence_index].append(SpanAnnotation(cand.start, cand.end, label))
    for spans in pred:
        spans.sort(key=lambda s: s.start)

    gold = []
    for sent in episode.query:
        gold.append(
            tuple(s for s in spans_from_tags(sent) if s.entity_type in episode.types)
        )

    return EpisodePrediction(
        tuple(episode.query),
        tuple(tuple(spans) for spans in pred),
        tuple(gold),
    )
