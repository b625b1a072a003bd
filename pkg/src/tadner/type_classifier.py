"""Type-aware contrastive training, domain adaptation, span filtering, prototypes, inference.

Entity tokens always enter with their sentence context (the contextual row of
the encoder output); type names are phrase-encoded standalone. A type-aware
representation concatenates the two in both orders, and the contrastive loss
pulls same-label pairs across orders together while pushing different labels
apart, normalising each dot product by its column sum before the temperature.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .corpus import TypeNameMap, parse_tag
from .errors import (
    DegenerateDenominator,
    EmptySupport,
    FrozenEncoder,
    MissingTypeInSupport,
    NonFiniteLoss,
    UnknownLabel,
)
from .optim import EarlyStopMonitor, OptimizerConfig, Sgdw
from .rng import PortableRng
from .span_detector import FinetuneConfig

_DENOM_FLOOR = 1e-12
_RMS_EPS = 1e-6


@dataclass(frozen=True)
class EntityToken:
    """One entity token, carrying its sentence context and gold label."""

    tokens: tuple[str, ...]
    index: int
    label: str


@dataclass(frozen=True)
class SpanInContext:
    """A candidate span inside its sentence."""

    tokens: tuple[str, ...]
    start: int
    end: int
    sentence_index: int = 0


@dataclass(frozen=True)
class TypeAwareRep:
    entity_label: np.ndarray  # (2r,)
    label_entity: np.ndarray  # (2r,)
    label: str


@dataclass(frozen=True)
class ContrastiveBatch:
    reps: tuple[TypeAwareRep, ...]
    temperature: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "reps", tuple(self.reps))
        if len(self.reps) < 1:
            raise ValueError("batch needs at least one representation")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if any(not rep.label for rep in self.reps):
            raise ValueError("labels must be non-empty")


@dataclass(frozen=True)
class Prototype:
    entity_type: str
    vector: np.ndarray  # (2r,)


@dataclass(frozen=True)
class FilterThreshold:
    gamma: float


def collect_entity_tokens(sentences) -> list[EntityToken]:
    out: list[EntityToken] = []
    for sent in sentences:
        for i, tag in enumerate(sent.tags):
            _, entity_type = parse_tag(tag, sent.scheme)
            if entity_type is not None:
                out.append(EntityToken(sent.tokens, i, entity_type))
    return out


def random_name_vector(label: str, dim: int, seed: int) -> np.ndarray:
    """Seeded stand-in for an encoded type name (the no-type-names ablation).

    Shaped like encoder output: strictly positive (softplus of normals) and
    RMS-normalized, so downstream dot products stay positive.
    """
    rng = PortableRng(seed).spawn(f"name:{label}")
    vec = np.logaddexp(0.0, rng.normals(dim))
    return vec / math.sqrt(float(np.mean(vec**2)) + _RMS_EPS)


def make_name_fn(encoder, name_map: TypeNameMap | None, *, random_vectors: bool = False, seed: int = 0):
    """Label -> name vector. Random vectors are constants; encoded names backpropagate."""
    if random_vectors:
        return lambda label: random_name_vector(label, encoder.dim, seed)
    if name_map is None:
        raise ValueError("name_map required unless random_vectors=True")
    return lambda label: encoder.encode_phrase(name_map.name_for(label).split())


class _SentenceCache:
    """Encode each distinct sentence once per pass."""

    def __init__(self, encoder):
        self.encoder = encoder
        self._rows: dict[tuple[str, ...], np.ndarray] = {}

    def rows(self, tokens: tuple[str, ...]) -> np.ndarray:
        if tokens not in self._rows:
            self._rows[tokens] = self.encoder.encode(tokens)
        return self._rows[tokens]


def build_type_aware_reps(encoder, entities, name_map: TypeNameMap, *, name_fn=None) -> list[TypeAwareRep]:
    """h_el = f(entity) (+) f(name); h_le = f(name) (+) f(entity)."""
    if name_fn is None:
        name_fn = make_name_fn(encoder, name_map)
    cache = _SentenceCache(encoder)
    name_vecs: dict[str, np.ndarray] = {}
    reps = []
    for ent in entities:
        if ent.label not in name_vecs:
            name_vecs[ent.label] = name_fn(ent.label)
        entity_vec = cache.rows(ent.tokens)[ent.index]
        name_vec = name_vecs[ent.label]
        reps.append(
            TypeAwareRep(
                np.concatenate([entity_vec, name_vec]),
                np.concatenate([name_vec, entity_vec]),
                ent.label,
            )
        )
    return reps


def normalized_sim(a: np.ndarray, b: np.ndarray, batch_entity_label_vectors) -> float:
    """(a . b) / sum_k (h_el_k . b); raises when the denominator is non-positive or tiny."""
    denom = float(sum(float(np.dot(el, b)) for el in batch_entity_label_vectors))
    if denom < _DENOM_FLOOR:
        raise DegenerateDenominator(f"similarity denominator {denom!r}")
    return float(np.dot(a, b)) / denom


def _sim_matrix(h_el: np.ndarray, h_le: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dots = h_el @ h_le.T
    col_sums = dots.sum(axis=0)
    if np.any(col_sums < _DENOM_FLOOR):
        raise DegenerateDenominator(f"column sums {col_sums.min()!r}")
    return dots / col_sums[None, :], dots, col_sums


def _contrastive_core(h_el, h_le, labels, tau):
    """Loss plus gradients with respect to the stacked h_el / h_le matrices."""
    m = h_el.shape[0]
    sims, dots, col_sums = _sim_matrix(h_el, h_le)
    labels = np.asarray(labels)
    loss = 0.0
    g_sims = np.zeros_like(sims)
    for i in range(m):
        row = sims[i] / tau
        shift = row - row.max()
        expd = np.exp(shift)
        den = expd.sum()
        mask = labels == labels[i]
        num = expd[mask].sum()
        loss += math.log(den) - math.log(num) + math.log(mask.sum())
        p = expd / den
        q = np.where(mask, expd / num, 0.0)
        g_sims[i] = (p - q) / tau
    col_weight = (g_sims * dots).sum(axis=0)
    g_dots = g_sims / col_sums[None, :] - (col_weight / col_sums**2)[None, :]
    return loss, g_dots @ h_le, g_dots.T @ h_el


def contrastive_loss(batch: ContrastiveBatch):
    """Sum of per-entity terms (each >= 0) plus gradients w.r.t. every h_el and h_le."""
    h_el = np.stack([rep.entity_label for rep in batch.reps])
    h_le = np.stack([rep.label_entity for rep in batch.reps])
    labels = [rep.label for rep in batch.reps]
    return _contrastive_core(h_el, h_le, labels, batch.temperature)


def _split_rep_grads(g_el, g_le, dim):
    """Fold concatenation-order gradients back onto entity and name vectors."""
    g_entity = g_el[:, :dim] + g_le[:, dim:]
    g_name = g_el[:, dim:] + g_le[:, :dim]
    return g_entity, g_name


def _accumulate_entity_grads(encoder, entities, g_entity):
    by_sentence: dict[tuple[str, ...], np.ndarray] = {}
    for ent, grad_vec in zip(entities, g_entity):
        upstream = by_sentence.setdefault(ent.tokens, np.zeros((len(ent.tokens), encoder.dim)))
        upstream[ent.index] += grad_vec
    total = np.zeros_like(encoder.params)
    for tokens, upstream in by_sentence.items():
        total += encoder.backward(tokens, upstream)
    return total


def _accumulate_name_grads(encoder, name_map, labels_per_rep, g_name):
    by_label: dict[str, np.ndarray] = defaultdict(lambda: np.zeros(encoder.dim))
    for label, grad_vec in zip(labels_per_rep, g_name):
        by_label[label] += grad_vec
    total = np.zeros_like(encoder.params)
    for label, grad_vec in by_label.items():
        total += encoder.phrase_backward(name_map.name_for(label).split(), grad_vec)
    return total


def contrastive_loss_and_param_grad(
    encoder, entities, name_map: TypeNameMap | None, tau: float, *, name_fn=None
):
    """Full chain: contrastive loss and its gradient w.r.t. encoder parameters.

    When name_fn supplies constant vectors (random-name ablation), the name
    side contributes no parameter gradient.
    """
    trainable_names = name_fn is None
    reps = build_type_aware_reps(encoder, entities, name_map, name_fn=name_fn)
    h_el = np.stack([rep.entity_label for rep in reps])
    h_le = np.stack([rep.label_entity for rep in reps])
    labels = [rep.label for rep in reps]
    loss, g_el, g_le = _contrastive_core(h_el, h_le, labels, tau)
    g_entity, g_name = _split_rep_grads(g_el, g_le, encoder.dim)
    grad = _accumulate_entity_grads(encoder, entities, g_entity)
    if trainable_names:
        grad += _accumulate_name_grads(encoder, name_map, labels, g_name)
    return loss, grad


def train_source_type(
    encoder,
    corpus,
    name_map: TypeNameMap | None,
    opt_cfg: OptimizerConfig,
    rng: PortableRng,
    tau: float = 0.05,
    *,
    random_name_vectors: bool = False,
    name_seed: int = 0,
) -> list[float]:
    """Minimise the contrastive loss over the corpus entity tokens in place."""
    entities = collect_entity_tokens(corpus)
    if not entities:
        raise ValueError("corpus has no entity tokens")
    name_fn = (
        make_name_fn(encoder, None, random_vectors=True, seed=name_seed)
        if random_name_vectors
        else None
    )
    optimizer = Sgdw(opt_cfg)
    history: list[float] = []
    order = list(range(len(entities)))
    cursor = len(order)
    while optimizer.step_count < opt_cfg.max_steps:
        if cursor >= len(order):
            rng.shuffle(order)
            cursor = 0
        batch = [entities[i] for i in order[cursor : cursor + opt_cfg.batch_size]]
        cursor += opt_cfg.batch_size
        loss, grad = contrastive_loss_and_param_grad(encoder, batch, name_map, tau, name_fn=name_fn)
        optimizer.step((encoder.params,), (grad,), loss)
        history.append(loss)
    return history


# ---------------------------------------------------------------------------
# target-domain adaptation


def adaptation_loss(
    encoder,
    support_entities,
    target_types,
    name_map: TypeNameMap | None,
    *,
    literal: bool = False,
    name_fn=None,
):
    """Mean per-entity loss over dot products with the target type names, plus parameter grad.

    The default is the negative log softmax of s(entity, correct name) over all
    target names; literal=True keeps the printed ratio form (audit only).
    """
    entities = list(support_entities)
    if not entities:
        raise EmptySupport("no support entities")
    types = list(target_types)
    for ent in entities:
        if ent.label not in types:
            raise UnknownLabel(ent.label)
    trainable_names = name_fn is None
    if name_fn is None:
        name_fn = make_name_fn(encoder, name_map)

    cache = _SentenceCache(encoder)
    entity_vecs = np.stack([cache.rows(ent.tokens)[ent.index] for ent in entities])
    name_vecs = np.stack([name_fn(t) for t in types])
    gold = np.array([types.index(ent.label) for ent in entities])
    m = len(entities)

    scores = entity_vecs @ name_vecs.T  # (M, n_types)
    if literal:
        row_sums = scores.sum(axis=1)
        if np.any(np.abs(row_sums) < _DENOM_FLOOR):
            raise DegenerateDenominator("row sum of similarities near zero")
        picked = scores[np.arange(m), gold]
        loss = float(np.mean(picked / row_sums))
        g_scores = -picked[:, None] / row_sums[:, None] ** 2
        g_scores = np.tile(g_scores, (1, len(types)))
        g_scores[np.arange(m), gold] += 1.0 / row_sums
        g_scores /= m
    else:
        shifted = scores - scores.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        probs = expd / expd.sum(axis=1, keepdims=True)
        picked = probs[np.arange(m), gold]
        loss = float(np.mean(-np.log(np.maximum(picked, 1e-300))))
        g_scores = probs.copy()
        g_scores[np.arange(m), gold] -= 1.0
        g_scores /= m

    g_entity = g_scores @ name_vecs
    grad = _accumulate_entity_grads(encoder, entities, g_entity)
    if trainable_names:
        g_names = g_scores.T @ entity_vecs
        for t, g_vec in zip(types, g_names):
            grad += encoder.phrase_backward(name_map.name_for(t).split(), g_vec)
    return loss, grad


def finetune_type(
    encoder,
    support,
    target_types,
    name_map: TypeNameMap | None,
    cfg: FinetuneConfig,
    *,
    literal: bool = False,
    name_fn=None,
):
    """Adapt the type encoder on the support set with the same early stopping as the span stage."""
    if not getattr(encoder, "trainable", True):
        raise FrozenEncoder(
            "type fine-tuning needs a trainable encoder; skip it (no_type_finetune) "
            "when serving precomputed vectors"
        )
    entities = collect_entity_tokens(support)
    if not entities:
        raise EmptySupport("support set has no entity tokens")
    monitor = EarlyStopMonitor(cfg.beta, cfg.stop_on_equal)
    snapshots = [encoder.params.copy()]
    loss, _ = adaptation_loss(
        encoder, entities, target_types, name_map, literal=literal, name_fn=name_fn
    )
    if not np.isfinite(loss):
        raise NonFiniteLoss("adaptation loss not finite before fine-tuning")
    monitor.observe(loss)
    for _ in range(cfg.max_steps):
        _, grad = adaptation_loss(
            encoder, entities, target_types, name_map, literal=literal, name_fn=name_fn
        )
        encoder.params -= cfg.learning_rate * grad
        if not np.all(np.isfinite(encoder.params)):
            raise NonFiniteLoss("parameters became non-finite during type fine-tuning")
        snapshots.append(encoder.params.copy())
        loss, _ = adaptation_loss(
            encoder, entities, target_types, name_map, literal=literal, name_fn=name_fn
        )
        if not np.isfinite(loss):
            raise NonFiniteLoss("adaptation loss became non-finite")
        keep = monitor.observe(loss)
        if keep is not None:
            encoder.params[:] = snapshots[keep]
            break
    return encoder


# ---------------------------------------------------------------------------
# threshold, prototypes, inference


def compute_threshold(encoder, support_entities, name_map: TypeNameMap | None, *, name_fn=None) -> FilterThreshold:
    """Minimum over support entities of f(entity) . f(type name of its label)."""
    entities = list(support_entities)
    if not entities:
        raise EmptySupport("threshold needs at least one support entity")
    if name_fn is None:
        name_fn = make_name_fn(encoder, name_map)
    cache = _SentenceCache(encoder)
    name_vecs: dict[str, np.ndarray] = {}
    gamma = math.inf
    for ent in entities:
        if ent.label not in name_vecs:
            name_vecs[ent.label] = name_fn(ent.label)
        dot = float(np.dot(cache.rows(ent.tokens)[ent.index], name_vecs[ent.label]))
        gamma = min(gamma, dot)
    return FilterThreshold(gamma)


def support_mean_vectors(encoder, entities, target_types) -> dict[str, np.ndarray]:
    """Per-type mean of support entity vectors, summed with fsum so ordering and
    duplication cannot change the result."""
    cache = _SentenceCache(encoder)
    grouped: dict[str, list[np.ndarray]] = defaultdict(list)
    for ent in entities:
        grouped[ent.label].append(cache.rows(ent.tokens)[ent.index])
    means: dict[str, np.ndarray] = {}
    for t in target_types:
        vecs = grouped.get(t)
        if not vecs:
            continue
        n = len(vecs)
        means[t] = np.array(
            [math.fsum(v[d] for v in vecs) / n for d in range(encoder.dim)]
        )
    return means


def build_prototypes(
    encoder,
    support,
    target_types,
    name_map: TypeNameMap | None,
    *,
    name_fn=None,
    fallback_to_name: bool = False,
) -> list[Prototype]:
    """Type name vector concatenated with the mean support entity vector, one per target type."""
    if name_fn is None:
        name_fn = make_name_fn(encoder, name_map)
    entities = collect_entity_tokens(support)
    means = support_mean_vectors(encoder, entities, target_types)
    prototypes = []
    for t in target_types:
        name_vec = name_fn(t)
        if t in means:
            prototypes.append(Prototype(t, np.concatenate([name_vec, means[t]])))
        elif fallback_to_name:
            prototypes.append(Prototype(t, np.concatenate([name_vec, name_vec])))
        else:
            raise MissingTypeInSupport(t)
    return prototypes


def zero_shot_prototypes(encoder, target_types, name_map: TypeNameMap | None, *, name_fn=None) -> list[Prototype]:
    """Self-concatenated type-name vectors (no support set needed)."""
    if name_fn is None:
        name_fn = make_name_fn(encoder, name_map)
    out = []
    for t in target_types:
        name_vec = name_fn(t)
        out.append(Prototype(t, np.concatenate([name_vec, name_vec])))
    return out


def support_only_prototypes(encoder, support, target_types) -> list[Prototype]:
    """Self-concatenated support means (the no-type-names ablation)."""
    entities = collect_entity_tokens(support)
    means = support_mean_vectors(encoder, entities, target_types)
    out = []
    for t in target_types:
        if t not in means:
            raise MissingTypeInSupport(t)
        out.append(Prototype(t, np.concatenate([means[t], means[t]])))
    return out


def classify_spans(
    encoder,
    prototypes,
    threshold: FilterThreshold | None,
    candidates,
) -> list[tuple[SpanInContext, str]]:
    """Label candidates at their best prototype; keep those with max_sim / 2 > gamma.

    threshold=None disables filtering (the no-filter ablation and zero-shot
    mode). Span vectors are the mean of the span's in-context token rows,
    self-concatenated to prototype width.
    """
    if not candidates:
        return []
    if not prototypes:
        raise ValueError("need at least one prototype")
    proto_matrix = np.stack([p.vector for p in prototypes])
    cache = _SentenceCache(encoder)
    kept: list[tuple[SpanInContext, str]] = []
    for cand in candidates:
        rows = cache.rows(cand.tokens)
        span_vec = rows[cand.start : cand.end + 1].mean(axis=0)
        h = np.concatenate([span_vec, span_vec])
        scores = proto_matrix @ h
        best = int(np.argmax(scores))
        if threshold is None or scores[best] / 2.0 > threshold.gamma:
            kept.append((cand, prototypes[best].entity_type))
    return kept
