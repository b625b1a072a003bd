import math

import numpy as np
import pytest

import tadner.type_classifier as tc
from tadner.corpus import LabeledSentence, TaggingScheme, TypeNameMap
from tadner.encoder import Encoder, EncoderConfig, build_vocab
from tadner.errors import (
    DegenerateDenominator,
    EmptySupport,
    MissingTypeInSupport,
    UnknownLabel,
)
from tadner.optim import OptimizerConfig
from tadner.rng import PortableRng
from tadner.span_detector import FinetuneConfig
from tadner.type_classifier import (
    ContrastiveBatch,
    EntityToken,
    FilterThreshold,
    SpanInContext,
    adaptation_loss,
    build_prototypes,
    build_type_aware_reps,
    classify_spans,
    collect_entity_tokens,
    compute_threshold,
    contrastive_loss,
    contrastive_loss_and_param_grad,
    finetune_type,
    make_name_fn,
    normalized_sim,
    random_name_vector,
    support_only_prototypes,
    train_source_type,
    zero_shot_prototypes,
)

IO = TaggingScheme.IO

NAME_MAP = TypeNameMap({"A": "feline", "B": "canine", "C": "aquatic"})
WORDS = ["walk", "lo", "hi", "rest", "catx", "dogx", "fishx", "feline", "canine", "aquatic"]


def sent(tokens, tags):
    return LabeledSentence(tuple(tokens), tuple(tags), IO)


def tiny_corpus(n=12):
    kinds = [("catx", "A"), ("dogx", "B"), ("fishx", "C")]
    out = []
    for i in range(n):
        tok, lab = kinds[i % 3]
        out.append(sent(["walk", "lo", tok, "hi", "rest"], ["O", "O", f"I-{lab}", "O", "O"]))
    return out


def make_encoder(dim=12, window=1, seed=5):
    vocab = build_vocab([WORDS])
    return Encoder.init(EncoderConfig(dim=dim, vocab=vocab, context_window=window, layers=1, seed=seed))


# ---------------------------------------------------------------------------
# representations


def test_rep_halves_mirror_each_other():
    enc = make_encoder()
    entities = collect_entity_tokens(tiny_corpus(3))
    for rep in build_type_aware_reps(enc, entities, NAME_MAP):
        r = enc.dim
        assert np.array_equal(rep.entity_label[:r], rep.label_entity[r:])
        assert np.array_equal(rep.entity_label[r:], rep.label_entity[:r])


def test_same_label_shares_name_half():
    enc = make_encoder()
    entities = [e for e in collect_entity_tokens(tiny_corpus(6)) if e.label == "A"]
    reps = build_type_aware_reps(enc, entities, NAME_MAP)
    assert len(reps) == 2
    assert np.array_equal(reps[0].entity_label[enc.dim :], reps[1].entity_label[enc.dim :])


def test_name_half_is_encoded_phrase():
    enc = make_encoder()
    entities = collect_entity_tokens(tiny_corpus(1))
    rep = build_type_aware_reps(enc, entities, NAME_MAP)[0]
    assert np.array_equal(rep.entity_label[enc.dim :], enc.encode_phrase(["feline"]))


def test_unknown_label_in_name_map():
    enc = make_encoder()
    bad = [EntityToken(("walk", "x"), 1, "Z")]
    with pytest.raises(UnknownLabel):
        build_type_aware_reps(enc, bad, NAME_MAP)


# ---------------------------------------------------------------------------
# normalized similarity


def test_normalized_sim_single_pair_is_one():
    v = np.array([1.0, 2.0, 0.5])
    assert normalized_sim(v, v, [v]) == pytest.approx(1.0, rel=1e-15)


def test_normalized_sim_scale_invariance():
    rng = PortableRng(3)
    els = [np.abs(rng.normals(6)) + 0.1 for _ in range(4)]
    b = np.abs(rng.normals(6)) + 0.1
    base = normalized_sim(els[0], b, els)
    scaled = normalized_sim(3.5 * els[0], b, [3.5 * e for e in els])
    assert scaled == pytest.approx(base, rel=1e-12)


def test_normalized_sim_hand_computed():
    els = [np.array([1.0, 0.0]), np.array([0.0, 2.0]), np.array([1.0, 1.0])]
    b = np.array([2.0, 1.0])
    # dots with b: 2, 2, 3 -> denominator 7
    assert normalized_sim(els[0], b, els) == pytest.approx(2 / 7, rel=1e-12)


def test_normalized_sim_degenerate_denominator():
    with pytest.raises(DegenerateDenominator):
        normalized_sim(np.array([1.0, 0.0]), np.array([0.0, 1.0]), [np.array([1.0, -1.0])])


# ---------------------------------------------------------------------------
# contrastive loss


def rep_from(u, v, label):
    return tc.TypeAwareRep(np.concatenate([u, v]), np.concatenate([v, u]), label)


def test_single_rep_loss_is_exactly_zero():
    rng = PortableRng(4)
    u, v = np.abs(rng.normals(5)) + 0.1, np.abs(rng.normals(5)) + 0.1
    loss, g_el, g_le = contrastive_loss(ContrastiveBatch((rep_from(u, v, "A"),), 0.05))
    assert loss == 0.0


def test_two_same_label_reps_give_two_log_two():
    u = np.array([1.0, 0.5, 0.25])
    v = np.array([0.5, 1.0, 0.75])
    batch = ContrastiveBatch((rep_from(u, v, "A"), rep_from(u, v, "A")), 0.05)
    loss, _, _ = contrastive_loss(batch)
    assert loss == pytest.approx(2 * math.log(2), rel=1e-14)


def test_every_term_is_nonnegative():
    rng = PortableRng(6)
    for _ in range(20):
        reps = tuple(
            rep_from(np.abs(rng.normals(6)) + 0.05, np.abs(rng.normals(6)) + 0.05, "AB"[rng.randint(2)])
            for _ in range(5)
        )
        loss, _, _ = contrastive_loss(ContrastiveBatch(reps, 0.05))
        assert loss >= 0.0


def test_contrastive_param_gradient_matches_finite_differences():
    enc = make_encoder(dim=8)
    entities = collect_entity_tokens(tiny_corpus(6))
    assert len(entities) == 6 and len({e.label for e in entities}) == 3
    rng = PortableRng(7)
    loss, grad = contrastive_loss_and_param_grad(enc, entities, NAME_MAP, 0.05)
    base = enc.params.copy()
    h = 3e-5
    worst = 0.0
    for _ in range(30):
        d = rng.normals(enc.params.shape)
        d /= np.linalg.norm(d)
        enc.params[:] = base + h * d
        up, _ = contrastive_loss_and_param_grad(enc, entities, NAME_MAP, 0.05)
        enc.params[:] = base - h * d
        down, _ = contrastive_loss_and_param_grad(enc, entities, NAME_MAP, 0.05)
        enc.params[:] = base
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(fd - float(grad @ d)) / max(abs(fd), abs(float(grad @ d)), 1e-12))
    assert worst < 1e-4


def test_train_source_type_zero_lr_keeps_state():
    enc = make_encoder()
    before = enc.params.copy()
    train_source_type(
        enc,
        tiny_corpus(),
        NAME_MAP,
        OptimizerConfig(learning_rate=0.0, warmup_fraction=0.0, batch_size=6, max_steps=10),
        PortableRng(8),
    )
    assert np.array_equal(before, enc.params)


def test_train_source_type_loss_halves_and_is_deterministic():
    histories = []
    for _ in range(2):
        enc = make_encoder()
        histories.append(
            train_source_type(
                enc,
                tiny_corpus(24),
                NAME_MAP,
                OptimizerConfig(learning_rate=0.1, warmup_fraction=0.01, batch_size=12, max_steps=120),
                PortableRng(9),
            )
        )
    assert histories[0] == histories[1]
    floor = 0.0  # per-term floor is log|Z_i|, subtract it before comparing
    m = 12
    per_label = m / 3
    floor = m * math.log(per_label)
    assert histories[0][-1] - floor < 0.5 * (histories[0][0] - floor)


def test_within_type_similarity_beats_cross_type_by_margin():
    enc = make_encoder(dim=16, window=0)
    corpus = tiny_corpus(30)
    train_source_type(
        enc,
        corpus,
        NAME_MAP,
        OptimizerConfig(learning_rate=0.15, warmup_fraction=0.01, batch_size=15, max_steps=300),
        PortableRng(10),
    )
    groups = {}
    for e in collect_entity_tokens(corpus):
        groups.setdefault(e.label, []).append(enc.encode(e.tokens)[e.index])
    within, cross = [], []
    labels = sorted(groups)
    for i, a in enumerate(labels):
        va = np.stack(groups[a])
        va /= np.linalg.norm(va, axis=1, keepdims=True)
        for j, b in enumerate(labels):
            vb = np.stack(groups[b])
            vb /= np.linalg.norm(vb, axis=1, keepdims=True)
            (within if i == j else cross).append(float((va @ vb.T).mean()))
    assert np.mean(within) - np.mean(cross) >= 0.3


def test_random_name_vectors_train_without_name_map():
    enc = make_encoder()
    history = train_source_type(
        enc,
        tiny_corpus(12),
        None,
        OptimizerConfig(learning_rate=0.1, warmup_fraction=0.0, batch_size=6, max_steps=20),
        PortableRng(11),
        random_name_vectors=True,
        name_seed=3,
    )
    assert len(history) == 20
    assert np.array_equal(random_name_vector("A", enc.dim, 3), random_name_vector("A", enc.dim, 3))
    assert not np.array_equal(random_name_vector("A", enc.dim, 3), random_name_vector("B", enc.dim, 3))


# ---------------------------------------------------------------------------
# adaptation loss


def test_single_target_type_gives_zero_loss():
    enc = make_encoder()
    entities = [e for e in collect_entity_tokens(tiny_corpus(3)) if e.label == "A"]
    loss, grad = adaptation_loss(enc, entities, ["A"], NAME_MAP)
    assert loss == 0.0
    assert np.allclose(grad, 0.0, atol=1e-15)


def test_raising_correct_similarity_lowers_loss():
    enc = make_encoder(window=0)
    entities = [e for e in collect_entity_tokens(tiny_corpus(3)) if e.label == "A"]
    correct = enc.encode_phrase(["feline"])
    wrong = enc.encode_phrase(["canine"])

    def loss_with_boost(boost):
        def name_fn(label):
            return correct * boost if label == "A" else wrong

        return adaptation_loss(enc, entities, ["A", "B"], None, name_fn=name_fn)[0]

    assert loss_with_boost(1.5) < loss_with_boost(1.0)


def test_adaptation_gradient_matches_finite_differences():
    enc = make_encoder(dim=8)
    entities = [e for e in collect_entity_tokens(tiny_corpus(6)) if e.label in ("A", "B")][:3]
    rng = PortableRng(12)
    loss, grad = adaptation_loss(enc, entities, ["A", "B"], NAME_MAP)
    base = enc.params.copy()
    h = 3e-5
    worst = 0.0
    for _ in range(30):
        d = rng.normals(enc.params.shape)
        d /= np.linalg.norm(d)
        enc.params[:] = base + h * d
        up, _ = adaptation_loss(enc, entities, ["A", "B"], NAME_MAP)
        enc.params[:] = base - h * d
        down, _ = adaptation_loss(enc, entities, ["A", "B"], NAME_MAP)
        enc.params[:] = base
        fd = (up - down) / (2 * h)
        worst = max(worst, abs(fd - float(grad @ d)) / max(abs(fd), abs(float(grad @ d)), 1e-12))
    assert worst < 1e-4


def test_literal_ratio_mode_differs_from_log_softmax():
    enc = make_encoder()
    entities = collect_entity_tokens(tiny_corpus(4))[:3]
    log_loss, _ = adaptation_loss(enc, entities, ["A", "B", "C"], NAME_MAP)
    lit_loss, _ = adaptation_loss(enc, entities, ["A", "B", "C"], NAME_MAP, literal=True)
    assert log_loss != lit_loss
    assert 0.0 < lit_loss < 1.0  # a ratio of positive dots


def test_adaptation_rejects_labels_outside_target_types():
    enc = make_encoder()
    entities = collect_entity_tokens(tiny_corpus(3))
    with pytest.raises(UnknownLabel):
        adaptation_loss(enc, entities, ["A"], NAME_MAP)
    with pytest.raises(EmptySupport):
        adaptation_loss(enc, [], ["A"], NAME_MAP)


def test_finetune_type_scripted_early_stop(monkeypatch):
    # observations follow the schedule; the first rise (0.95 after 0.9) stops
    # a beta=1 run after exactly two epochs
    enc = make_encoder()
    support = tiny_corpus(3)
    calls = {"n": 0}
    observations = [1.0, 0.9, 0.95, 0.2, 0.1]

    def scripted(encoder, entities, types, name_map, **kw):
        # call pattern: eval, (grad, eval) per epoch; observations are calls 0, 2, 4, ...
        index = calls["n"]
        calls["n"] += 1
        value = observations[index // 2] if index % 2 == 0 else 0.0
        return value, np.zeros_like(encoder.params)

    monkeypatch.setattr(tc, "adaptation_loss", scripted)
    finetune_type(
        enc, support, ["A", "B", "C"], NAME_MAP, FinetuneConfig(beta=1, learning_rate=0.05, max_steps=10)
    )
    # initial eval + two epochs of (grad, eval), stopping at the 0.95 observation
    assert calls["n"] == 5


def test_finetune_type_restores_pre_rise_parameters():
    # a huge learning rate overshoots immediately: with beta=1 the first rise
    # restores the initial parameters bit-exactly
    enc = make_encoder()
    support = tiny_corpus(3)
    initial = enc.params.copy()
    finetune_type(enc, support, ["A", "B", "C"], NAME_MAP, FinetuneConfig(beta=1, learning_rate=1e4, max_steps=10))
    assert np.array_equal(enc.params, initial)


def test_finetune_type_runs_to_budget_when_loss_decreases():
    enc = make_encoder()
    support = tiny_corpus(3)
    before = enc.params.copy()
    finetune_type(enc, support, ["A", "B", "C"], NAME_MAP, FinetuneConfig(beta=2, learning_rate=0.01, max_steps=5))
    assert not np.array_equal(before, enc.params)


# ---------------------------------------------------------------------------
# threshold, prototypes, classification


def test_threshold_single_entity_is_its_own_dot():
    enc = make_encoder()
    entities = collect_entity_tokens(tiny_corpus(1))
    th = compute_threshold(enc, entities, NAME_MAP)
    vec = enc.encode(entities[0].tokens)[entities[0].index]
    assert th.gamma == pytest.approx(float(vec @ enc.encode_phrase(["feline"])), rel=1e-15)


def test_threshold_only_drops_when_entities_added():
    enc = make_encoder()
    entities = collect_entity_tokens(tiny_corpus(6))
    prev = math.inf
    for n in range(1, len(entities) + 1):
        gamma = compute_threshold(enc, entities[:n], NAME_MAP).gamma
        assert gamma <= prev + 1e-15
        prev = gamma


def test_threshold_matches_external_min(monkeypatch):
    enc = make_encoder()
    entities = collect_entity_tokens(tiny_corpus(5))
    manual = min(
        float(enc.encode(e.tokens)[e.index] @ enc.encode_phrase(NAME_MAP.name_for(e.label).split()))
        for e in entities
    )
    assert compute_threshold(enc, entities, NAME_MAP).gamma == pytest.approx(manual, rel=1e-15)


def test_threshold_empty_support():
    with pytest.raises(EmptySupport):
        compute_threshold(make_encoder(), [], NAME_MAP)


def test_prototype_one_shot_concatenation():
    enc = make_encoder()
    support = tiny_corpus(1)
    protos = build_prototypes(enc, support, ["A"], NAME_MAP)
    entity = collect_entity_tokens(support)[0]
    expected = np.concatenate(
        [enc.encode_phrase(["feline"]), enc.encode(entity.tokens)[entity.index]]
    )
    assert np.allclose(protos[0].vector, expected, rtol=0, atol=1e-12)


def test_prototypes_invariant_to_order_and_duplication():
    enc = make_encoder()
    support = tiny_corpus(6)
    base = build_prototypes(enc, support, ["A", "B", "C"], NAME_MAP)
    shuffled = build_prototypes(enc, list(reversed(support)), ["A", "B", "C"], NAME_MAP)
    doubled = build_prototypes(enc, support + support, ["A", "B", "C"], NAME_MAP)
    for a, b, c in zip(base, shuffled, doubled):
        assert np.array_equal(a.vector, b.vector)
        assert np.array_equal(a.vector, c.vector)


def test_prototype_mean_matches_external_average():
    enc = make_encoder()
    support = tiny_corpus(9)
    entities = [e for e in collect_entity_tokens(support) if e.label == "A"]
    assert len(entities) == 3
    vecs = [enc.encode(e.tokens)[e.index] for e in entities]
    manual = (vecs[0] + vecs[1] + vecs[2]) / 3.0
    proto = [p for p in build_prototypes(enc, support, ["A", "B", "C"], NAME_MAP) if p.entity_type == "A"][0]
    assert np.allclose(proto.vector[enc.dim :], manual, rtol=0, atol=1e-12)


def test_prototype_missing_type():
    enc = make_encoder()
    support = [s for s in tiny_corpus(3) if "I-A" in s.tags]
    with pytest.raises(MissingTypeInSupport):
        build_prototypes(enc, support, ["A", "B"], NAME_MAP)
    protos = build_prototypes(enc, support, ["A", "B"], NAME_MAP, fallback_to_name=True)
    name_vec = enc.encode_phrase(["canine"])
    fallback = [p for p in protos if p.entity_type == "B"][0]
    assert np.array_equal(fallback.vector, np.concatenate([name_vec, name_vec]))


def test_zero_shot_prototypes_self_concatenate():
    enc = make_encoder()
    for proto in zero_shot_prototypes(enc, ["A", "B"], NAME_MAP):
        assert np.array_equal(proto.vector[: enc.dim], proto.vector[enc.dim :])


def test_zero_shot_classification_reduces_to_nearest_name():
    enc = make_encoder()
    protos = zero_shot_prototypes(enc, ["A", "B", "C"], NAME_MAP)
    names = {t: enc.encode_phrase(NAME_MAP.name_for(t).split()) for t in ("A", "B", "C")}
    rng = PortableRng(14)
    cands = [
        SpanInContext(("walk", "lo", ["catx", "dogx", "fishx"][rng.randint(3)], "hi", "rest"), 2, 2, i)
        for i in range(10)
    ]
    kept = classify_spans(enc, protos, None, cands)
    for cand, label in kept:
        vec = enc.encode(cand.tokens)[cand.start]
        by_name = max(names, key=lambda t: float(vec @ names[t]))
        assert label == by_name


def test_one_shot_support_lookalike_span_kept_and_labelled(tmp_path):
    # constructed geometry: orthogonal name vectors, a one-shot support entity
    # per type, and a query span identical to one support entity; the span
    # must survive the filter and take that entity's type
    from tadner.encoder import load_precomputed, phrase_key, sentence_key, write_tade

    dim = 4
    # keep rule needs (name dot + self dot) / 2 > min name dot, so the
    # entity's self similarity must exceed its name similarity
    name_a, name_b = np.array([2.0, 0, 0, 0]), np.array([0, 2.0, 0, 0])
    ent_a, ent_b = np.array([3.0, 0.2, 0.4, 0]), np.array([0.2, 3.0, 0, 0.4])
    support_a = ("lo", "anchorA", "hi")
    support_b = ("lo", "anchorB", "hi")
    query = support_a
    pad = np.full(dim, 0.05)
    path = tmp_path / "geom.tade"
    write_tade(
        path,
        dim,
        [
            (sentence_key(support_a), np.stack([pad, ent_a, pad])),
            (sentence_key(support_b), np.stack([pad, ent_b, pad])),
            (phrase_key("alpha"), name_a[None, :]),
            (phrase_key("beta"), name_b[None, :]),
        ],
    )
    enc = load_precomputed(path)
    names = TypeNameMap({"A": "alpha", "B": "beta"})
    support = [
        LabeledSentence(support_a, ("O", "I-A", "O"), IO),
        LabeledSentence(support_b, ("O", "I-B", "O"), IO),
    ]
    prototypes = build_prototypes(enc, support, ["A", "B"], names)
    threshold = compute_threshold(enc, collect_entity_tokens(support), names)
    kept = classify_spans(enc, prototypes, threshold, [SpanInContext(query, 1, 1, 0)])
    assert len(kept) == 1
    assert kept[0][1] == "A"


def test_classify_infinite_threshold_filters_everything():
    enc = make_encoder()
    protos = zero_shot_prototypes(enc, ["A", "B"], NAME_MAP)
    cands = [SpanInContext(("walk", "lo", "catx", "hi", "rest"), 2, 2, 0)]
    assert classify_spans(enc, protos, FilterThreshold(math.inf), cands) == []
    assert classify_spans(enc, protos, None, []) == []


class ScaledEncoder:
    """Test double: the same encoder with every output scaled by a constant."""

    def __init__(self, inner, scale):
        self.inner = inner
        self.scale = scale
        self.dim = inner.dim

    def encode(self, tokens):
        return self.inner.encode(tokens) * self.scale

    def encode_phrase(self, tokens):
        return self.inner.encode_phrase(tokens) * self.scale


def test_classification_invariant_under_uniform_scaling():
    enc = make_encoder()
    support = tiny_corpus(6)
    cands = [
        SpanInContext(("walk", "lo", tok, "hi", "rest"), 2, 2, i)
        for i, tok in enumerate(["catx", "dogx", "fishx", "catx"])
    ]
    results = []
    for scale in (1.0, 3.0):
        scaled = ScaledEncoder(enc, scale)
        protos = build_prototypes(scaled, support, ["A", "B", "C"], NAME_MAP)
        th = compute_threshold(scaled, collect_entity_tokens(support), NAME_MAP)
        kept = classify_spans(scaled, protos, th, cands)
        results.append([(c.sentence_index, label) for c, label in kept])
    assert results[0] == results[1]


def test_filtering_monotone_in_gamma():
    enc = make_encoder()
    support = tiny_corpus(6)
    protos = build_prototypes(enc, support, ["A", "B", "C"], NAME_MAP)
    rng = PortableRng(15)
    cands = [
        SpanInContext(("walk", "lo", ["catx", "dogx", "fishx"][rng.randint(3)], "hi", "rest"), 2, 2, i)
        for i in range(12)
    ]
    sizes = []
    for gamma in (-1e9, 0.0, 5.0, 10.0, 1e9):
        kept = classify_spans(enc, protos, FilterThreshold(gamma), cands)
        sizes.append(len(kept))
    assert sizes == sorted(sizes, reverse=True)


def test_support_only_prototypes_self_concatenate_means():
    enc = make_encoder()
    support = tiny_corpus(6)
    protos = support_only_prototypes(enc, support, ["A", "B", "C"])
    for p in protos:
        assert np.array_equal(p.vector[: enc.dim], p.vector[enc.dim :])


def test_make_name_fn_requires_map_or_random():
    enc = make_encoder()
    with pytest.raises(ValueError):
        make_name_fn(enc, None)
