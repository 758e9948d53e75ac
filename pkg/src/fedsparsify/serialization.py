"""Bit-exact sparse model file format.

Layout (little-endian throughout):

    magic   4 bytes  b"FSPW"
    version u32      currently 1
    params  u64      flat parameter count P
    sparsity f64     1 - popcount / P (redundant, validated on load)
    digest  32 bytes sha256 of the canonical model-spec JSON
    mask    ceil(P/8) bytes, parameter 0 = least-significant bit of byte 0
    values  4 * popcount bytes, kept parameters as f32 in ascending index

File size adapts to density: header + P/8 bits + 4 bytes per kept weight.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .sparsify import PruneMask

MAGIC = b"FSPW"
VERSION = 1
_HEADER = struct.Struct("<4sIQd32s")


class ModelFileError(ValueError):
    """Malformed sparse model file."""


class BadMagicError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class TruncatedFileError(ModelFileError):
    pass


class PopcountMismatchError(ModelFileError):
    pass


def spec_digest(spec: nn.ModelSpec) -> bytes:
    """sha256 over a canonical JSON rendering of the model spec."""
    doc = {
        "input_shape": list(spec.input_shape),
        "loss": spec.loss,
        "layers": [
            [type(layer).__name__] + [list(v) if isinstance(v, tuple) else v
                                      for v in vars(layer).values()]
            for layer in spec.layers
        ],
    }
    return hashlib.sha256(json.dumps(doc, separators=(",", ":")).encode()).digest()


@dataclass
class SparseModelFile:
    param_count: int
    sparsity: float
    digest: bytes
    mask: PruneMask
    values: np.ndarray  # kept parameters, ascending index, float32

    @property
    def params(self) -> np.ndarray:
        """Reconstructed flat parameter vector (pruned coordinates are 0)."""
        out = np.zeros(self.param_count, dtype=np.float32)
        out[self.mask.bits] = self.values
        return out


def save_model(path, params: np.ndarray, mask: PruneMask, spec=None, digest: bytes = b"") -> None:
    """Write a sparse model file; pass a spec (or a raw digest) to stamp it."""
    params = np.asarray(params, dtype=np.float32)
    p = len(params)
    if len(mask) != p:
        raise ValueError(f"mask length {len(mask)} != param length {p}")
    if spec is not None:
        digest = spec_digest(spec)
    digest = digest.ljust(32, b"\0")[:32]
    sparsity = 1.0 - mask.nonzero_count / p if p else 0.0
    header = _HEADER.pack(MAGIC, VERSION, p, sparsity, digest)
    mask_bytes = np.packbits(mask.bits, bitorder="little").tobytes()
    values = params[mask.bits].astype("<f4").tobytes()
    Path(path).write_bytes(header + mask_bytes + values)


def load_model(path) -> SparseModelFile:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise TruncatedFileError(f"file is {len(blob)} bytes, header needs {_HEADER.size}")
    magic, version, p, sparsity, digest = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise VersionMismatchError(f"file version {version}, reader supports {VERSION}")
    n_mask_bytes = (p + 7) // 8
    body = blob[_HEADER.size :]
    if len(body) < n_mask_bytes:
        raise TruncatedFileError("file ends inside the mask section")
    bits = np.unpackbits(
        np.frombuffer(body[:n_mask_bytes], dtype=np.uint8), bitorder="little", count=p
    ).astype(bool)
    mask = PruneMask(bits)
    expected_sparsity = 1.0 - mask.nonzero_count / p if p else 0.0
    if sparsity != expected_sparsity:
        raise PopcountMismatchError(
            f"header sparsity {sparsity} does not match mask popcount "
            f"{mask.nonzero_count} of {p}"
        )
    value_bytes = body[n_mask_bytes:]
    if len(value_bytes) < 4 * mask.nonzero_count:
        raise TruncatedFileError("file ends inside the values section")
    if len(value_bytes) > 4 * mask.nonzero_count:
        raise ModelFileError("unexpected trailing bytes after the values section")
    values = np.frombuffer(value_bytes, dtype="<f4").copy()
    return SparseModelFile(p, sparsity, digest, mask, values)
