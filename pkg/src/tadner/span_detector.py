"""Boundary model: train, fine-tune with loss-rise early stopping, extract candidate spans.

The head is dropout on the encoder output followed by a linear layer and a
softmax over the scheme's typeless tag inventory (IO by default, so two
classes). The training loss is the per-sentence mean cross-entropy, averaged
over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import LabeledSentence, SpanAnnotation, TaggingScheme, _decode_spans, parse_tag
from .errors import LengthMismatch, NonFiniteLoss
from .optim import EarlyStopMonitor, OptimizerConfig, Sgdw
from .rng import PortableRng


@dataclass
class SpanHead:
    weight: np.ndarray  # (n_tags, r)
    bias: np.ndarray  # (n_tags,)
    dropout_rate: float = 0.2

    def __post_init__(self):
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ValueError("weight and bias disagree on the number of tags")

    @classmethod
    def init(cls, n_tags: int, dim: int, rng: PortableRng, dropout_rate: float = 0.2) -> "SpanHead":
        weight = rng.normals((n_tags, dim)) / np.sqrt(dim)
        return cls(weight, np.zeros(n_tags), dropout_rate)

    @property
    def n_tags(self) -> int:
        return self.bias.shape[0]

    def copy(self) -> "SpanHead":
        return SpanHead(self.weight.copy(), self.bias.copy(), self.dropout_rate)


@dataclass(frozen=True)
class FinetuneConfig:
    beta: int
    learning_rate: float = 0.05
    max_steps: int = 100
    stop_on_equal: bool = False

    def __post_init__(self):
        if self.beta < 1:
            raise ValueError("beta must be >= 1")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def boundary_tag_indices(sentence: LabeledSentence) -> np.ndarray:
    """Per-token index into scheme.boundary_tags() (type information stripped)."""
    inventory = sentence.scheme.boundary_tags()
    lookup = {tag: i for i, tag in enumerate(inventory)}
    return np.array([lookup[parse_tag(t, sentence.scheme)[0]] for t in sentence.tags], dtype=np.intp)


def _head_forward(encoder, head: SpanHead, tokens, training: bool, rng: PortableRng | None):
    hidden = encoder.encode(tokens)
    if training and head.dropout_rate > 0:
        if rng is None:
            raise ValueError("training-mode dropout needs an rng")
        keep = 1.0 - head.dropout_rate
        mask = (rng.uniforms(hidden.shape) < keep).astype(np.float64) / keep
    else:
        mask = np.ones_like(hidden)
    dropped = hidden * mask
    logits = dropped @ head.weight.T + head.bias
    return _softmax(logits), dropped, mask


def tag_probabilities(
    encoder, head: SpanHead, tokens, training: bool = False, rng: PortableRng | None = None
) -> np.ndarray:
    """N x |C| matrix; rows sum to 1. Deterministic when training=False."""
    return _head_forward(encoder, head, tokens, training, rng)[0]


def span_loss(probs: np.ndarray, gold: np.ndarray | list) -> float:
    gold = np.asarray(gold, dtype=np.intp)
    if probs.shape[0] != gold.shape[0]:
        raise LengthMismatch(f"{probs.shape[0]} rows vs {gold.shape[0]} gold tags")
    picked = probs[np.arange(len(gold)), gold]
    return float(np.mean(-np.log(np.maximum(picked, 1e-300))))


def span_loss_and_grads(
    encoder,
    head: SpanHead,
    sentences,
    training: bool = False,
    rng: PortableRng | None = None,
):
    """Batch loss plus gradients for (encoder params, head weight, head bias).

    With a frozen encoder (no trainable parameters), the encoder gradient is
    returned as None and only the head learns.
    """
    total = 0.0
    g_theta = np.zeros_like(encoder.params) if encoder.trainable else None
    g_weight = np.zeros_like(head.weight)
    g_bias = np.zeros_like(head.bias)
    batch = len(sentences)
    for sent in sentences:
        probs, dropped, mask = _head_forward(encoder, head, sent.tokens, training, rng)
        gold = boundary_tag_indices(sent)
        sentence_loss = span_loss(probs, gold)
        if not np.isfinite(sentence_loss):
            raise NonFiniteLoss("boundary loss is not finite")
        total += sentence_loss
        dlogits = probs.copy()
        dlogits[np.arange(len(gold)), gold] -= 1.0
        dlogits /= len(gold) * batch
        g_weight += dlogits.T @ dropped
        g_bias += dlogits.sum(axis=0)
        if g_theta is not None:
            dhidden = (dlogits @ head.weight) * mask
            g_theta += encoder.backward(sent.tokens, dhidden)
    return total / batch, g_theta, g_weight, g_bias


def train_source_span(
    encoder,
    head: SpanHead,
    corpus,
    opt_cfg: OptimizerConfig,
    rng: PortableRng,
) -> list[float]:
    """Minimise the boundary loss over the corpus in place; returns the loss trajectory."""
    if not corpus:
        raise ValueError("corpus is empty")
    optimizer = Sgdw(opt_cfg)
    history: list[float] = []
    order = list(range(len(corpus)))
    cursor = len(order)
    while optimizer.step_count < opt_cfg.max_steps:
        if cursor >= len(order):
            rng.shuffle(order)
            cursor = 0
        batch = [corpus[i] for i in order[cursor : cursor + opt_cfg.batch_size]]
        cursor += opt_cfg.batch_size
        loss, g_theta, g_w, g_b = span_loss_and_grads(encoder, head, batch, training=True, rng=rng)
        if g_theta is None:
            optimizer.step((head.weight, head.bias), (g_w, g_b), loss)
        else:
            optimizer.step((encoder.params, head.weight, head.bias), (g_theta, g_w, g_b), loss)
        history.append(loss)
    return history


def support_loss(encoder, head: SpanHead, support) -> float:
    """Dropout-free loss over the support set (the early-stopping signal)."""
    total = 0.0
    for sent in support:
        probs = tag_probabilities(encoder, head, sent.tokens, training=False)
        total += span_loss(probs, boundary_tag_indices(sent))
    return total / len(support)


def finetune_span(
    encoder,
    head: SpanHead,
    support,
    cfg: FinetuneConfig,
    rng: PortableRng,
):
    """Fine-tune on the support set, stopping after `beta` consecutive loss rises.

    One full-batch gradient step per epoch; the loss is re-evaluated on the
    support set after each epoch. On a stop, the parameters from the epoch
    preceding the rise streak are restored; otherwise training runs to
    max_steps. A frozen encoder stays fixed and only the head adapts.
    """
    if not support:
        raise ValueError("support set is empty")
    monitor = EarlyStopMonitor(cfg.beta, cfg.stop_on_equal)

    def snapshot():
        theta = encoder.params.copy() if encoder.trainable else None
        return theta, head.weight.copy(), head.bias.copy()

    snapshots = [snapshot()]
    loss = support_loss(encoder, head, support)
    if not np.isfinite(loss):
        raise NonFiniteLoss("support loss is not finite before fine-tuning")
    monitor.observe(loss)
    for _ in range(cfg.max_steps):
        _, g_theta, g_w, g_b = span_loss_and_grads(encoder, head, support, training=True, rng=rng)
        if g_theta is not None:
            encoder.params -= cfg.learning_rate * g_theta
            if not np.all(np.isfinite(encoder.params)):
                raise NonFiniteLoss("parameters became non-finite during fine-tuning")
        head.weight -= cfg.learning_rate * g_w
        head.bias -= cfg.learning_rate * g_b
        if not (np.all(np.isfinite(head.weight)) and np.all(np.isfinite(head.bias))):
            raise NonFiniteLoss("parameters became non-finite during fine-tuning")
        snapshots.append(snapshot())
        loss = support_loss(encoder, head, support)
        if not np.isfinite(loss):
            raise NonFiniteLoss("support loss became non-finite during fine-tuning")
        keep = monitor.observe(loss)
        if keep is not None:
            theta, weight, bias = snapshots[keep]
            if theta is not None:
                encoder.params[:] = theta
            head.weight[:] = weight
            head.bias[:] = bias
            break
    return encoder, head


def extract_candidate_spans(encoder, head: SpanHead, tokens, scheme: TaggingScheme) -> list[SpanAnnotation]:
    """Argmax-decode each token over the typeless inventory, then merge maximal runs."""
    probs = tag_probabilities(encoder, head, tokens, training=False)
    inventory = scheme.boundary_tags()
    tags = [inventory[i] for i in probs.argmax(axis=1)]
    return _decode_spans(tags, scheme)
