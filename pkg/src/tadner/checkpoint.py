"""Versioned binary checkpoint: both encoder configs + parameters and the span head.

Layout: magic "TNCK", u32 LE version=1, u32 LE header length, UTF-8 JSON
header, then float32 little-endian arrays in header-declared order
(span encoder params, type encoder params, head weight, head bias).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .corpus import TaggingScheme
from .encoder import Encoder, EncoderConfig, ParamLayout
from .errors import FormatError
from .pipeline import Models
from .span_detector import SpanHead

_MAGIC = b"TNCK"
_VERSION = 1


def _encoder_header(config: EncoderConfig) -> dict:
    return {
        "dim": config.dim,
        "vocab": config.vocab,
        "unk_id": config.unk_id,
        "context_window": config.context_window,
        "layers": config.layers,
        "seed": config.seed,
    }


def _encoder_from_header(obj: dict) -> EncoderConfig:
    return EncoderConfig(
        dim=obj["dim"],
        vocab={str(k): int(v) for k, v in obj["vocab"].items()},
        unk_id=obj["unk_id"],
        context_window=obj["context_window"],
        layers=obj["layers"],
        seed=obj["seed"],
    )


def save_checkpoint(path, models: Models) -> None:
    header = {
        "scheme": models.scheme.value,
        "span_encoder": _encoder_header(models.span_encoder.config),
        "type_encoder": _encoder_header(models.type_encoder.config),
        "head": {
            "n_tags": models.span_head.n_tags,
            "dim": models.span_encoder.dim,
            "dropout_rate": models.span_head.dropout_rate,
        },
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(blob)))
        fh.write(blob)
        for arr in (
            models.span_encoder.params,
            models.type_encoder.params,
            models.span_head.weight,
            models.span_head.bias,
        ):
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path) -> Models:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad checkpoint header: {exc}") from None

    span_cfg = _encoder_from_header(header["span_encoder"])
    type_cfg = _encoder_from_header(header["type_encoder"])
    n_tags = header["head"]["n_tags"]
    dim = header["head"]["dim"]

    pos = 12 + header_len
    counts = [
        ParamLayout(span_cfg).size,
        ParamLayout(type_cfg).size,
        n_tags * dim,
        n_tags,
    ]
    arrays = []
    for count in counts:
        nbytes = count * 4
        if pos + nbytes > len(blob):
            raise FormatError("truncated parameter block")
        arrays.append(np.frombuffer(blob, dtype="<f4", count=count, offset=pos).astype(np.float64))
        pos += nbytes
    if pos != len(blob):
        raise FormatError("trailing bytes after parameter block")

    span_encoder = Encoder(span_cfg, arrays[0])
    type_encoder = Encoder(type_cfg, arrays[1])
    head = SpanHead(arrays[2].reshape(n_tags, dim), arrays[3], header["head"]["dropout_rate"])
    return Models(span_encoder, head, type_encoder, TaggingScheme(header["scheme"]))
