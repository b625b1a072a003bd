"""Per-token contextual vectors behind one contract, two implementations.

Encoder is a small trainable network: embedding lookup, `layers` rounds of
windowed context mixing (one r x r matrix per offset in [-w, w] plus a bias,
softplus activation), and RMS row normalization. Row i therefore depends on
tokens within layers*context_window of i, and all activations are strictly
positive, which keeps downstream dot products positive.

PrecomputedEncoder serves stored vectors from a TADE file and cannot
backpropagate.

TADE binary format: magic "TADE", u32 LE version=1, u32 LE dim, then records:
u32 key length, UTF-8 key, u32 row count, rows*dim float32 LE values. Keys are
"sent:<sha1 hex of tokens joined with single spaces>" or "phrase:<text>".
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, FrozenEncoder, MissingKey
from .rng import PortableRng

UNK_TOKEN = "<unk>"
_RMS_EPS = 1e-6
_TADE_MAGIC = b"TADE"
_TADE_VERSION = 1


def build_vocab(sentences_or_tokens) -> dict[str, int]:
    """Token -> id map with the unknown token at id 0. Accepts sentences or raw token lists."""
    vocab = {UNK_TOKEN: 0}
    for item in sentences_or_tokens:
        tokens = item.tokens if hasattr(item, "tokens") else item
        for tok in tokens:
            if tok not in vocab:
                vocab[tok] = len(vocab)
    return vocab


@dataclass(frozen=True)
class EncoderConfig:
    dim: int
    vocab: dict[str, int]
    unk_id: int = 0
    context_window: int = 1
    layers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.context_window < 0:
            raise ValueError("context_window must be >= 0")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        ids = sorted(self.vocab.values())
        if ids != list(range(len(ids))):
            raise ValueError("vocab ids must be dense 0..V-1")
        if self.unk_id not in self.vocab.values():
            raise ValueError("unk_id missing from vocab")

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class ParamLayout:
    """Named slices into one flat parameter vector."""

    def __init__(self, config: EncoderConfig):
        self.slices: dict[str, tuple[int, tuple[int, ...]]] = {}
        offset = 0

        def add(name: str, shape: tuple[int, ...]):
            nonlocal offset
            self.slices[name] = (offset, shape)
            offset += int(np.prod(shape))

        r, w = config.dim, config.context_window
        add("embed", (config.vocab_size, r))
        for layer in range(config.layers):
            for d in range(-w, w + 1):
                add(f"mix{layer}.w{d}", (r, r))
            add(f"mix{layer}.b", (r,))
        self.size = offset

    def view(self, params: np.ndarray, name: str) -> np.ndarray:
        offset, shape = self.slices[name]
        return params[offset : offset + int(np.prod(shape))].reshape(shape)


class Encoder:
    trainable = True

    def __init__(self, config: EncoderConfig, params: np.ndarray):
        self.config = config
        self.layout = ParamLayout(config)
        if params.shape != (self.layout.size,):
            raise ValueError(f"expected {self.layout.size} parameters, got {params.shape}")
        self.params = params

    @classmethod
    def init(cls, config: EncoderConfig) -> "Encoder":
        layout = ParamLayout(config)
        rng = PortableRng(config.seed)
        params = np.zeros(layout.size, dtype=np.float64)
        enc = cls(config, params)
        r, w = config.dim, config.context_window
        enc.view("embed")[:] = rng.normals((config.vocab_size, r))
        mix_scale = 1.0 / np.sqrt(r * (2 * w + 1))
        for layer in range(config.layers):
            for d in range(-w, w + 1):
                enc.view(f"mix{layer}.w{d}")[:] = rng.normals((r, r)) * mix_scale
        return enc

    @property
    def dim(self) -> int:
        return self.config.dim

    def view(self, name: str) -> np.ndarray:
        return self.layout.view(self.params, name)

    def copy(self) -> "Encoder":
        return Encoder(self.config, self.params.copy())

    def extended(self, tokens) -> "Encoder":
        """Copy with vocabulary rows for any novel tokens.

        New embedding rows are seeded from (config.seed, token string), so the
        result does not depend on the order tokens are encountered in or on
        which other tokens arrive alongside them. Trained parameters are
        untouched.
        """
        novel = sorted({tok for tok in tokens if tok not in self.config.vocab})
        if not novel:
            return self.copy()
        vocab = dict(self.config.vocab)
        for tok in novel:
            vocab[tok] = len(vocab)
        config = EncoderConfig(
            dim=self.config.dim,
            vocab=vocab,
            unk_id=self.config.unk_id,
            context_window=self.config.context_window,
            layers=self.config.layers,
            seed=self.config.seed,
        )
        new_rows = np.stack(
            [
                PortableRng(self.config.seed).spawn(f"tok:{tok}").normals(self.config.dim)
                for tok in novel
            ]
        )
        embed_size = self.config.vocab_size * self.config.dim  # embed is first in the layout
        params = np.concatenate([self.params[:embed_size], new_rows.ravel(), self.params[embed_size:]])
        return Encoder(config, params)

    def _token_ids(self, tokens) -> np.ndarray:
        vocab, unk = self.config.vocab, self.config.unk_id
        return np.array([vocab.get(tok, unk) for tok in tokens], dtype=np.intp)

    def _forward(self, tokens):
        if len(tokens) == 0:
            raise ValueError("cannot encode an empty token sequence")
        cfg = self.config
        ids = self._token_ids(tokens)
        x = self.view("embed")[ids]
        acts = [x]
        pre = []
        n = len(ids)
        for layer in range(cfg.layers):
            z = np.tile(self.view(f"mix{layer}.b"), (n, 1))
            for d in range(-cfg.context_window, cfg.context_window + 1):
                w_d = self.view(f"mix{layer}.w{d}")
                if d >= 0:
                    z[: n - d] += acts[-1][d:] @ w_d.T
                else:
                    z[-d:] += acts[-1][: n + d] @ w_d.T
            pre.append(z)
            acts.append(np.logaddexp(0.0, z))
        final = acts[-1]
        scale = np.sqrt(np.mean(final**2, axis=1) + _RMS_EPS)
        return ids, acts, pre, final / scale[:, None], scale

    def encode(self, tokens) -> np.ndarray:
        """N x r matrix of contextual token vectors."""
        return self._forward(tokens)[3]

    def encode_phrase(self, tokens) -> np.ndarray:
        """Single vector for a phrase: mean over its standalone token rows."""
        return self.encode(tokens).mean(axis=0)

    def backward(self, tokens, upstream: np.ndarray) -> np.ndarray:
        """Gradient of <upstream, encode(tokens)> with respect to the flat parameters."""
        cfg = self.config
        ids, acts, pre, _h, scale = self._forward(tokens)
        n, r = len(ids), cfg.dim
        if upstream.shape != (n, r):
            raise ValueError(f"upstream must be {(n, r)}, got {upstream.shape}")

        grad = np.zeros_like(self.params)
        gview = self.layout.view

        final = acts[-1]
        gdot = np.sum(upstream * final, axis=1)
        dx = upstream / scale[:, None] - final * (gdot / (r * scale**3))[:, None]

        for layer in reversed(range(cfg.layers)):
            dz = dx * _sigmoid(pre[layer])
            gview(grad, f"mix{layer}.b")[:] += dz.sum(axis=0)
            below = acts[layer]
            dbelow = np.zeros_like(below)
            for d in range(-cfg.context_window, cfg.context_window + 1):
                w_d = self.view(f"mix{layer}.w{d}")
                gw = gview(grad, f"mix{layer}.w{d}")
                if d >= 0:
                    gw += dz[: n - d].T @ below[d:]
                    dbelow[d:] += dz[: n - d] @ w_d
                else:
                    gw += dz[-d:].T @ below[: n + d]
                    dbelow[: n + d] += dz[-d:] @ w_d
            dx = dbelow

        np.add.at(gview(grad, "embed"), ids, dx)
        return grad

    def phrase_backward(self, tokens, upstream_vec: np.ndarray) -> np.ndarray:
        """Gradient of <upstream_vec, encode_phrase(tokens)> with respect to parameters."""
        n = len(tokens)
        tiled = np.tile(upstream_vec / n, (n, 1))
        return self.backward(tokens, tiled)


# ---------------------------------------------------------------------------
# precomputed vectors


def sentence_key(tokens) -> str:
    digest = hashlib.sha1(" ".join(tokens).encode("utf-8")).hexdigest()
    return f"sent:{digest}"


def phrase_key(text_or_tokens) -> str:
    if not isinstance(text_or_tokens, str):
        text_or_tokens = " ".join(text_or_tokens)
    return f"phrase:{text_or_tokens}"


def write_tade(path, dim: int, records) -> None:
    """records: iterable of (key, N x dim array). Keys must be unique."""
    seen = set()
    with open(path, "wb") as fh:
        fh.write(_TADE_MAGIC)
        fh.write(struct.pack("<II", _TADE_VERSION, dim))
        for key, rows in records:
            if key in seen:
                raise FormatError(f"duplicate key {key!r}")
            seen.add(key)
            rows = np.atleast_2d(np.asarray(rows))
            if rows.shape[1] != dim:
                raise FormatError(f"record {key!r} has width {rows.shape[1]}, expected {dim}")
            encoded = key.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", rows.shape[0]))
            fh.write(rows.astype("<f4").tobytes())


def read_tade(path) -> tuple[int, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _TADE_MAGIC:
        raise FormatError("bad magic bytes")
    if len(blob) < 12:
        raise FormatError("truncated header")
    version, dim = struct.unpack_from("<II", blob, 4)
    if version != _TADE_VERSION:
        raise FormatError(f"unsupported version {version}")
    records: dict[str, np.ndarray] = {}
    pos = 12
    while pos < len(blob):
        if pos + 4 > len(blob):
            raise FormatError("truncated record header")
        (key_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        if pos + key_len + 4 > len(blob):
            raise FormatError("truncated record key")
        key = blob[pos : pos + key_len].decode("utf-8")
        pos += key_len
        (n_rows,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        nbytes = n_rows * dim * 4
        if pos + nbytes > len(blob):
            raise FormatError(f"truncated values for key {key!r}")
        rows = np.frombuffer(blob, dtype="<f4", count=n_rows * dim, offset=pos)
        pos += nbytes
        if key in records:
            raise FormatError(f"duplicate key {key!r}")
        records[key] = rows.reshape(n_rows, dim).astype(np.float64)
    return dim, records


class PrecomputedEncoder:
    trainable = False

    def __init__(self, dim: int, records: dict[str, np.ndarray]):
        self.dim = dim
        self._records = records

    def encode(self, tokens) -> np.ndarray:
        key = sentence_key(tokens)
        if key not in self._records:
            raise MissingKey(key)
        rows = self._records[key]
        if rows.shape[0] != len(tokens):
            raise FormatError(f"{key} stores {rows.shape[0]} rows for {len(tokens)} tokens")
        return rows.copy()

    def encode_phrase(self, tokens) -> np.ndarray:
        key = phrase_key(tokens)
        if key not in self._records:
            raise MissingKey(key)
        return self._records[key][0].copy()

    def backward(self, tokens, upstream):
        raise FrozenEncoder("precomputed encoders have no parameters to train")

    def phrase_backward(self, tokens, upstream_vec):
        raise FrozenEncoder("precomputed encoders have no parameters to train")

    def copy(self) -> "PrecomputedEncoder":
        return self

    def extended(self, tokens) -> "PrecomputedEncoder":
        # stored vectors are keyed by whole sentences; there is no vocabulary to grow
        return self


def load_precomputed(path) -> PrecomputedEncoder:
    dim, records = read_tade(path)
    return PrecomputedEncoder(dim, records)
