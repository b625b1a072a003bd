"""N-way K-shot episode construction and storage.

Episode-level sampling follows the greedy k~2k construction: shuffle the
dataset, keep a sentence when some needed type is still under quota k and no
type would exceed 2k, stop once every quota sits in [k, 2k]. Dataset-level
support sampling drops the 2k cap and stops at >= k per type. Both resample
from scratch (bounded retries) when a pass cannot satisfy the quotas.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

from .corpus import LabeledSentence, LabelSet, TaggingScheme, parse_tag, spans_from_tags
from .errors import InsufficientData, SchemaViolation
from .rng import PortableRng

_MAX_RESAMPLES = 64


@dataclass(frozen=True)
class SamplingConfig:
    n_way: int
    k_shot: int
    protocol: str = "episode_level"
    seed: int = 0

    def __post_init__(self):
        if self.n_way < 1 or self.k_shot < 1:
            raise ValueError("n_way and k_shot must be >= 1")
        if self.protocol not in ("episode_level", "dataset_level"):
            raise ValueError(f"unknown protocol {self.protocol!r}")


@dataclass(frozen=True)
class Episode:
    support: tuple[LabeledSentence, ...]
    query: tuple[LabeledSentence, ...]
    types: LabelSet

    def __post_init__(self):
        object.__setattr__(self, "support", tuple(self.support))
        object.__setattr__(self, "query", tuple(self.query))
        for label, _count in entity_counts(self.support).items():
            if label not in self.types:
                raise ValueError(f"support contains type {label!r} outside the episode types")


def entity_counts(sentences) -> Counter:
    """Entity mentions (spans) per type."""
    counts: Counter = Counter()
    for sent in sentences:
        for span in spans_from_tags(sent):
            if span.entity_type is not None:
                counts[span.entity_type] += 1
    return counts


def _sentence_types(sentence: LabeledSentence) -> set[str]:
    out = set()
    for tag in sentence.tags:
        _, entity_type = parse_tag(tag, sentence.scheme)
        if entity_type is not None:
            out.add(entity_type)
    return out


def _greedy_fill(pool, types, k, cap, rng) -> list[LabeledSentence] | None:
    """One greedy pass; None when the quotas cannot be met from this ordering."""
    order = list(pool)
    rng.shuffle(order)
    picked: list[LabeledSentence] = []
    counts: Counter = Counter()
    needed = set(types)
    for sent in order:
        stypes = _sentence_types(sent)
        if not stypes or not stypes <= set(types):
            continue
        mention_counts = entity_counts([sent])
        if not any(counts[t] < k for t in stypes):
            continue
        if cap is not None and any(counts[t] + mention_counts[t] > cap for t in stypes):
            continue
        picked.append(sent)
        counts.update(mention_counts)
        if all(counts[t] >= k for t in needed):
            return picked
    return None


def _pick_types(dataset, cfg: SamplingConfig, rng: PortableRng) -> LabelSet:
    counts = entity_counts(dataset)
    eligible = sorted(t for t, c in counts.items() if c >= cfg.k_shot)
    if len(eligible) < cfg.n_way:
        raise InsufficientData(
            f"need {cfg.n_way} types with >= {cfg.k_shot} entities, found {len(eligible)}"
        )
    rng.shuffle(eligible)
    return LabelSet(tuple(sorted(eligible[: cfg.n_way])))


def sample_support_set(dataset, cfg: SamplingConfig, rng: PortableRng | None = None):
    """Support sentences giving every sampled type at least k entity mentions."""
    rng = rng if rng is not None else PortableRng(cfg.seed)
    types = _pick_types(dataset, cfg, rng)
    cap = 2 * cfg.k_shot if cfg.protocol == "episode_level" else None
    for _ in range(_MAX_RESAMPLES):
        picked = _greedy_fill(dataset, types, cfg.k_shot, cap, rng)
        if picked is not None:
            return picked, types
    raise InsufficientData(
        f"could not satisfy k={cfg.k_shot} quotas for types {list(types)} "
        f"within {_MAX_RESAMPLES} resampling passes"
    )


def sample_episode(dataset, cfg: SamplingConfig, rng: PortableRng | None = None) -> Episode:
    rng = rng if rng is not None else PortableRng(cfg.seed)
    support, types = sample_support_set(dataset, cfg, rng)
    support_set = set(support)
    remainder = [s for s in dataset if s not in support_set]
    cap = 2 * cfg.k_shot if cfg.protocol == "episode_level" else None
    for _ in range(_MAX_RESAMPLES):
        query = _greedy_fill(remainder, types, cfg.k_shot, cap, rng)
        if query is not None:
            return Episode(tuple(support), tuple(query), types)
    raise InsufficientData("not enough disjoint sentences left for a query set")


# ---------------------------------------------------------------------------
# JSONL storage
#
# One episode per line:
#   {"types": [...], "support": [{"tokens": [...], "tags": [...]}],
#    "query": [...same...], "scheme": "IO"|"BIO"|"BIOES"}


def _sentence_to_obj(sent: LabeledSentence) -> dict:
    return {"tokens": list(sent.tokens), "tags": list(sent.tags)}


def _sentence_from_obj(obj: dict, scheme: TaggingScheme, line_no: int) -> LabeledSentence:
    if not isinstance(obj, dict) or "tokens" not in obj or "tags" not in obj:
        raise SchemaViolation(line_no, "sentence object needs 'tokens' and 'tags'")
    try:
        return LabeledSentence(tuple(obj["tokens"]), tuple(obj["tags"]), scheme)
    except ValueError as exc:
        raise SchemaViolation(line_no, str(exc)) from None


def save_episodes(episodes, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            obj = {
                "types": list(ep.types),
                "support": [_sentence_to_obj(s) for s in ep.support],
                "query": [_sentence_to_obj(s) for s in ep.query],
                "scheme": ep.support[0].scheme.value if ep.support else "IO",
            }
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def load_episodes(path) -> list[Episode]:
    episodes: list[Episode] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(line_no, f"not valid JSON: {exc}") from None
            for key in ("types", "support", "query", "scheme"):
                if key not in obj:
                    raise SchemaViolation(line_no, f"missing {key!r} field")
            try:
                scheme = TaggingScheme(obj["scheme"])
            except ValueError:
                raise SchemaViolation(line_no, f"unknown scheme {obj['scheme']!r}") from None
            support = tuple(_sentence_from_obj(s, scheme, line_no) for s in obj["support"])
            query = tuple(_sentence_from_obj(s, scheme, line_no) for s in obj["query"])
            try:
                types = LabelSet(tuple(obj["types"]))
                episodes.append(Episode(support, query, types))
            except ValueError as exc:
                raise SchemaViolation(line_no, str(exc)) from None
    return episodes
