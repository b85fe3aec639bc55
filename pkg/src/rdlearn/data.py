"""Sample sets of binary configurations and their on-disk format.

File layout (all integers little-endian)::

    bytes 0..7    magic  b"RBMDSET1"
    bytes 8..11   uint32 H, length of the JSON header
    next H bytes  UTF-8 JSON, keys sorted, no whitespace:
                  {"count", "format_version", "meta", "model_hash", "n_visible"}
    rest          count rows of ceil(n_visible / 8) bytes each; row k holds
                  sample k packed MSB-first (numpy.packbits, bitorder="big"),
                  zero-padded in the last byte

A sidecar ``<file>.json`` repeats the header and adds the SHA-256 of the
data file, for tools that should not parse the binary.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DATASET_MAGIC = b"RBMDSET1"
DATASET_VERSION = 1


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass(eq=False)
class Dataset:
    """An ordered set of ``{0,1}^Nx`` samples plus provenance metadata."""

    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim != 2:
            raise ValueError(f"samples must be a 2-D array, got shape {s.shape}")
        if s.size and not np.all((s == 0) | (s == 1)):
            raise ValueError("samples must contain only 0/1 entries")
        s = s.astype(np.uint8)
        s.setflags(write=False)
        self.samples = s

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def n_visible(self) -> int:
        return self.samples.shape[1]

    def packed(self) -> bytes:
        return np.packbits(self.samples, axis=1, bitorder="big").tobytes()

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<IQ", self.n_visible, len(self)))
        h.update(self.packed())
        return h.hexdigest()

    def header(self) -> dict:
        return {
            "count": len(self),
            "format_version": DATASET_VERSION,
            "meta": self.meta,
            "model_hash": self.meta.get("model_hash", ""),
            "n_visible": self.n_visible,
        }

    def to_bytes(self) -> bytes:
        head = _json_bytes(self.header())
        return DATASET_MAGIC + struct.pack("<I", len(head)) + head + self.packed()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Dataset":
        if raw[:8] != DATASET_MAGIC:
            raise ValueError(f"not a dataset file (magic {raw[:8]!r})")
        (hlen,) = struct.unpack("<I", raw[8:12])
        head = json.loads(raw[12:12 + hlen].decode("utf-8"))
        if head.get("format_version") != DATASET_VERSION:
            raise ValueError(f"unsupported dataset format version {head.get('format_version')}")
        nx, count = int(head["n_visible"]), int(head["count"])
        row = (nx + 7) // 8
        body = raw[12 + hlen:]
        if len(body) != row * count:
            raise ValueError(f"dataset body has {len(body)} bytes, expected {row * count}")
        packed = np.frombuffer(body, dtype=np.uint8).reshape(count, row)
        bits = np.unpackbits(packed, axis=1, count=nx, bitorder="big")
        return cls(bits, head.get("meta", {}))

    def sidecar_bytes(self, raw: bytes | None = None) -> bytes:
        raw = self.to_bytes() if raw is None else raw
        side = dict(self.header(), file_sha256=hashlib.sha256(raw).hexdigest(), content_hash=self.content_hash())
        return (json.dumps(side, sort_keys=True, indent=2) + "\n").encode("utf-8")

    def save(self, path) -> str:
        """Write the dataset and its sidecar; returns the file's SHA-256."""
        path = Path(path)
        raw = self.to_bytes()
        path.write_bytes(raw)
        Path(str(path) + ".json").write_bytes(self.sidecar_bytes(raw))
        return hashlib.sha256(raw).hexdigest()

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_bytes(Path(path).read_bytes())

    def subset(self, idx) -> "Dataset":
        return Dataset(self.samples[idx], dict(self.meta))


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
