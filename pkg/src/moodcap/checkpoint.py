"""Versioned binary checkpoints: config block + named f64 parameter payloads.

Layout: magic ``MCKP``, version u32, config-block length u32 and its
UTF-8 JSON (model config, vocabulary, trainable set), parameter count
u32, then per parameter a u16 name length, the name, a u8 rank, u32
dims, and the row-major little-endian f64 payload. Round-trips are
bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import Vocabulary
from .errors import ParseError
from .model import ModelConfig, Parameters

MAGIC = b"MCKP"
VERSION = 1


def save_checkpoint(path: str | Path, params: Parameters, vocab: Vocabulary) -> None:
    header = {
        "model": params.config.to_dict(),
        "vocab": vocab.words,
        "trainable": sorted(params.trainable),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(params.values)))
        for name, arr in params.values.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[Parameters, ModelConfig, Vocabulary]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file (magic {blob[:4]!r})")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    try:
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt config block: {exc}") from exc
    offset += header_len
    config = ModelConfig.from_dict(header["model"])
    vocab = Vocabulary(header["vocab"])

    (n_params,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    values: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset:offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        if offset + 8 * count > len(blob):
            raise ParseError(f"{path}: truncated payload for parameter {name!r} "
                             f"at offset {offset}")
        values[name] = np.frombuffer(blob, dtype="<f8", count=count,
                                     offset=offset).reshape(shape).copy()
        offset += 8 * count
    if offset != len(blob):
        raise ParseError(f"{path}: {len(blob) - offset} trailing bytes")
    params = Parameters(config, values, frozenset(header["trainable"]))
    return params, config, vocab
