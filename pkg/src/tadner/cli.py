"""Command-line driver.

Subcommands: train-source, sample-episodes, evaluate, predict.
Exit codes: 0 success; 2 input/config problems (missing or malformed files,
bad configs, bad episode files); 3 numeric/runtime failures. Set TADNER_LOG
to DEBUG/INFO/WARNING/ERROR to control logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .corpus import LabelSet, parse_conll
from .encoder import Encoder, EncoderConfig, build_vocab
from .episodes import Episode, SamplingConfig, entity_counts, load_episodes, sample_episode, save_episodes
from .errors import (
    ConfigError,
    EmptyCorpus,
    FormatError,
    InsufficientData,
    InvalidTag,
    MalformedLine,
    MissingKey,
    SchemaViolation,
    TadnerError,
    UnknownLabel,
)
from .evaluation import error_breakdown, micro_f1
from .pipeline import Models, run_episode
from .report import EpisodeResult, write_report
from .rng import PortableRng
from .span_detector import SpanHead, train_source_span
from .type_classifier import train_source_type

logger = logging.getLogger(__name__)

_INPUT_ERRORS = (
    ConfigError,
    EmptyCorpus,
    FormatError,
    InsufficientData,
    InvalidTag,
    MalformedLine,
    MissingKey,
    SchemaViolation,
    UnknownLabel,
    FileNotFoundError,
    IsADirectoryError,
)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "scheme", None) is not None:
        cfg.scheme = args.scheme
    if getattr(args, "name_map", None) is not None:
        cfg.name_map = args.name_map
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    for flag in ("no_filter", "no_type_names", "no_span_finetune", "no_type_finetune"):
        if getattr(args, flag, False):
            setattr(cfg.ablations, flag, True)
    if getattr(args, "zero_shot", False):
        cfg.zero_shot = True
    if getattr(args, "literal_adaptation_loss", False):
        cfg.literal_adaptation_loss = True
    return cfg


def _read_corpus(path, scheme):
    text = Path(path).read_text(encoding="utf-8")
    return parse_conll(text, scheme)


def _infer_k(episode: Episode) -> int:
    counts = entity_counts(episode.support)
    present = [counts[t] for t in episode.types if counts[t] > 0]
    return max(1, min(present)) if present else 1


def cmd_train_source(args) -> int:
    cfg = _load_run_config(args)
    scheme = cfg.tagging_scheme
    corpus = _read_corpus(args.data, scheme)
    name_map = cfg.load_name_map()
    if name_map is None and not cfg.ablations.no_type_names:
        raise ConfigError("train-source needs a name map (config name_map or --name-map)")

    seeds = PortableRng(cfg.seed)
    span_seed = seeds.next_u64() & 0x7FFFFFFF
    type_seed = seeds.next_u64() & 0x7FFFFFFF
    vocab = build_vocab(corpus)
    enc_kwargs = dict(
        dim=cfg.encoder.dim,
        vocab=vocab,
        context_window=cfg.encoder.context_window,
        layers=cfg.encoder.layers,
    )
    span_encoder = Encoder.init(EncoderConfig(seed=span_seed, **enc_kwargs))
    type_encoder = Encoder.init(EncoderConfig(seed=type_seed, **enc_kwargs))
    head = SpanHead.init(
        len(scheme.boundary_tags()), cfg.encoder.dim, seeds.spawn("head"), cfg.dropout
    )

    logger.info("training span detector (%d steps)", cfg.optimizer.span_steps)
    span_history = train_source_span(
        span_encoder, head, corpus, cfg.optimizer_config(cfg.optimizer.span_steps), seeds.spawn("span")
    )
    logger.info("training type classifier (%d steps)", cfg.optimizer.type_steps)
    type_history = train_source_type(
        type_encoder,
        corpus,
        name_map,
        cfg.optimizer_config(cfg.optimizer.type_steps),
        seeds.spawn("type"),
        tau=cfg.temperature,
        random_name_vectors=cfg.ablations.no_type_names,
        name_seed=cfg.seed,
    )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = Models(span_encoder, head, type_encoder, scheme)
    save_checkpoint(out / "checkpoint.bin", models)
    (out / "config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out / "train_log.json").write_text(
        json.dumps({"span_loss": span_history, "type_loss": type_history}, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {out / 'checkpoint.bin'}")
    return 0


def cmd_sample_episodes(args) -> int:
    cfg = _load_run_config(args)
    corpus = _read_corpus(args.data, cfg.tagging_scheme)
    sampling = SamplingConfig(args.n_way, args.k_shot, cfg.protocol, cfg.seed)
    episodes = []
    base = PortableRng(cfg.seed)
    for i in range(args.count):
        episodes.append(sample_episode(corpus, sampling, base.spawn(f"episode:{i}")))
    save_episodes(episodes, args.out)
    print(f"wrote {len(episodes)} episode(s) to {args.out}")
    return 0


def _score_episode(task) -> EpisodeResult:
    models, episode, cfg, name_map, index = task
    try:
        pipe_cfg = cfg.pipeline_config(_infer_k(episode))
        seed = PortableRng(cfg.seed).spawn(f"episode:{index}").next_u64() & 0x7FFFFFFF
        prediction = run_episode(models, episode, pipe_cfg, name_map, seed)
        metrics = micro_f1(prediction.pred_spans, prediction.gold_spans)
        breakdown = error_breakdown(prediction.pred_spans, prediction.gold_spans)
        return EpisodeResult(index, metrics, breakdown), prediction
    except TadnerError as exc:
        logger.warning("episode %d failed: %s", index, exc)
        return EpisodeResult(index, None, None, error=str(exc)), None


def cmd_evaluate(args) -> int:
    cfg = _load_run_config(args)
    models = load_checkpoint(args.checkpoints)
    episodes = load_episodes(args.episodes)
    if not episodes:
        raise EmptyCorpus(f"{args.episodes}: no episodes")
    name_map = None if cfg.ablations.no_type_names else cfg.load_name_map()
    if name_map is None and not cfg.ablations.no_type_names:
        raise ConfigError("evaluate needs a name map (config name_map or --name-map)")

    tasks = [(models, ep, cfg, name_map, i) for i, ep in enumerate(episodes)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(_score_episode, tasks))
    else:
        outcomes = [_score_episode(t) for t in tasks]

    results = [res for res, _pred in outcomes]
    report_dir = Path(args.report)
    payload = write_report(results, report_dir, config_echo=cfg.to_dict())

    with open(report_dir / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for _res, prediction in outcomes:
            if prediction is None:
                continue
            for sent, pred, gold in zip(
                prediction.sentences, prediction.pred_spans, prediction.gold_spans
            ):
                fh.write(
                    json.dumps(
                        {
                            "tokens": list(sent.tokens),
                            "pred_spans": [
                                {"start": s.start, "end": s.end, "type": s.entity_type}
                                for s in pred
                            ],
                            "gold_spans": [
                                {"start": s.start, "end": s.end, "type": s.entity_type}
                                for s in gold
                            ],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    agg = payload["aggregate"]["f1"]
    print(f"micro-F1 mean {agg['mean']:.4f} std {agg['std']:.4f} over {agg['n']} episode(s)")
    print(f"report written to {report_dir}")
    return 0


def cmd_predict(args) -> int:
    cfg = _load_run_config(args)
    models = load_checkpoint(args.checkpoints)
    support = _read_corpus(args.support, models.scheme)
    queries = _read_corpus(args.input, models.scheme)
    types = LabelSet.from_sentences(support)
    if len(types) == 0:
        raise EmptyCorpus(f"{args.support}: support has no entities")
    name_map = None if cfg.ablations.no_type_names else cfg.load_name_map()
    if name_map is None and not cfg.ablations.no_type_names:
        raise ConfigError("predict needs a name map (config name_map or --name-map)")

    episode = Episode(tuple(support), tuple(queries), types)
    pipe_cfg = cfg.pipeline_config(_infer_k(episode))
    prediction = run_episode(models, episode, pipe_cfg, name_map, cfg.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        for sent, pred, gold in zip(
            prediction.sentences, prediction.pred_spans, prediction.gold_spans
        ):
            fh.write(
                json.dumps(
                    {
                        "tokens": list(sent.tokens),
                        "pred_spans": [
                            {"start": s.start, "end": s.end, "type": s.entity_type} for s in pred
                        ],
                        "gold_spans": [
                            {"start": s.start, "end": s.end, "type": s.entity_type} for s in gold
                        ],
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    print(f"wrote predictions for {len(queries)} sentence(s) to {args.out}")
    return 0


def _add_common(sub, config=True):
    if config:
        sub.add_argument("--config", help="run config JSON (flags override)")
    sub.add_argument("--seed", type=int, help="override the config seed")
    sub.add_argument("--name-map", dest="name_map", help="'builtin:<dataset>' or a JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tadner",
        description="Two-stage few-shot NER: train on a source corpus, adapt per episode, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-source", help="train the span detector and type classifier")
    p.add_argument("--data", required=True, help="CoNLL training corpus")
    p.add_argument("--out", required=True, help="output directory for the checkpoint")
    p.add_argument("--scheme", choices=["IO", "BIO", "BIOES"])
    _add_common(p)
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("sample-episodes", help="sample N-way K-shot episodes from a corpus")
    p.add_argument("--data", required=True)
    p.add_argument("--n-way", dest="n_way", type=int, required=True)
    p.add_argument("--k-shot", dest="k_shot", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scheme", choices=["IO", "BIO", "BIOES"])
    _add_common(p)
    p.set_defaults(func=cmd_sample_episodes)

    p = sub.add_parser("evaluate", help="run episodes from a file and write a report")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--episodes", required=True)
    p.add_argument("--report", required=True, help="output directory")
    p.add_argument("--workers", type=int)
    p.add_argument("--no-filter", dest="no_filter", action="store_true")
    p.add_argument("--no-type-names", dest="no_type_names", action="store_true")
    p.add_argument("--no-span-finetune", dest="no_span_finetune", action="store_true")
    p.add_argument("--no-type-finetune", dest="no_type_finetune", action="store_true")
    p.add_argument("--zero-shot", dest="zero_shot", action="store_true")
    p.add_argument(
        "--literal-adaptation-loss",
        dest="literal_adaptation_loss",
        action="store_true",
        help="audit mode: minimise the raw similarity ratio instead of its negative log softmax",
    )
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="adapt on a support file and tag an input file")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--support", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--zero-shot", dest="zero_shot", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("TADNER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TadnerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
