"""Two-stage few-shot NER: span detection plus type-aware classification with span filtering."""

from .corpus import (
    LabeledSentence,
    LabelSet,
    SpanAnnotation,
    TaggingScheme,
    TypeNameMap,
    builtin_name_map,
    convert_tags,
    map_type_name,
    parse_conll,
    serialize_conll,
    spans_from_tags,
    tags_from_spans,
)
from .encoder import (
    Encoder,
    EncoderConfig,
    PrecomputedEncoder,
    build_vocab,
    load_precomputed,
    read_tade,
    write_tade,
)
from .episodes import Episode, SamplingConfig, load_episodes, sample_episode, sample_support_set, save_episodes
from .evaluation import ErrorBreakdown, MetricsSummary, aggregate, error_breakdown, micro_f1
from .pipeline import Models, PipelineAblations, PipelineConfig, run_episode
from .span_detector import (
    FinetuneConfig,
    SpanHead,
    extract_candidate_spans,
    finetune_span,
    span_loss,
    tag_probabilities,
    train_source_span,
)
from .type_classifier import (
    ContrastiveBatch,
    EntityToken,
    FilterThreshold,
    Prototype,
    SpanInContext,
    TypeAwareRep,
    adaptation_loss,
    build_prototypes,
    build_type_aware_reps,
    classify_spans,
    compute_threshold,
    contrastive_loss,
    finetune_type,
    normalized_sim,
    train_source_type,
    zero_shot_prototypes,
)

__version__ = "0.1.0"
