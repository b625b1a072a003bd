"""TADE binary writer.

Format: magic "TADE", u32 LE version=1, u32 LE dim, then records of
u32 key length, UTF-8 key, u32 row count, rows*dim float32 LE values.
Sentence keys are "sent:<sha1 hex of tokens joined with single spaces>";
phrase keys are "phrase:<text>".
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MAGIC = b"TADE"
VERSION = 1


def sentence_key(words) -> str:
    return "sent:" + hashlib.sha1(" ".join(words).encode("utf-8")).hexdigest()


def phrase_key(text: str) -> str:
    return "phrase:" + text


class TadeWriter:
    def __init__(self, path, dim: int):
        self.dim = dim
        self._seen: set[str] = set()
        self._fh = open(path, "wb")
        self._fh.write(MAGIC)
        self._fh.write(struct.pack("<II", VERSION, dim))

    def add(self, key: str, rows: np.ndarray) -> bool:
        """Write one record; duplicate keys are skipped (returns False)."""
        if key in self._seen:
            return False
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float32))
        if rows.shape[1] != self.dim:
            raise ValueError(f"record {key!r} has width {rows.shape[1]}, expected {self.dim}")
        self._seen.add(key)
        encoded = key.encode("utf-8")
        self._fh.write(struct.pack("<I", len(encoded)))
        self._fh.write(encoded)
        self._fh.write(struct.pack("<I", rows.shape[0]))
        self._fh.write(rows.astype("<f4").tobytes())
        return True

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
