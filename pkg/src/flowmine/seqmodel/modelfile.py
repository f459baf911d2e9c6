"""Binary scorer files.

Layout (little-endian)::

    b"FMLM" | u16 version | u8 kind | u32 header length | JSON header
    | float64 tensors in header order | u32 CRC32 of everything before it
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..errors import CorruptFile, VersionMismatch
from .scorers import AttentionScorer, ModelConfig, NGramScorer, config_dict
from .vocab import Vocab

MAGIC = b"FMLM"
VERSION = 1
_KINDS = {"attention": 0, "ngram": 1}
_PREFIX = struct.Struct("<4sHBI")


def dumps(scorer) -> bytes:
    if isinstance(scorer, AttentionScorer):
        tensors = list(scorer.params.items())
        header = {"config": config_dict(scorer.config), "history": scorer.history}
    elif isinstance(scorer, NGramScorer):
        tensors = [("bigrams", scorer.bigrams)]
        if scorer.trigrams is not None:
            tensors.append(("trigrams", scorer.trigrams))
        header = {"order": scorer.order, "smoothing": scorer.smoothing}
    else:
        raise TypeError(f"cannot serialize {type(scorer).__name__}")
    header["vocab"] = list(scorer.vocab.ids)
    header["tensors"] = [[name, list(arr.shape)] for name, arr in tensors]
    blob = json.dumps(header, sort_keys=True).encode()
    parts = [_PREFIX.pack(MAGIC, VERSION, _KINDS[scorer.kind], len(blob)), blob]
    for _, arr in tensors:
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes):
    if len(data) < _PREFIX.size + 4:
        raise CorruptFile("file too short")
    magic, version, kind, hlen = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise VersionMismatch(f"bad magic {magic!r}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFile("checksum mismatch")
    if version != VERSION:
        raise VersionMismatch(f"model file version {version}, expected {VERSION}")
    try:
        header = json.loads(body[_PREFIX.size:_PREFIX.size + hlen])
        off = _PREFIX.size + hlen
        tensors = {}
        for name, shape in header["tensors"]:
            count = int(np.prod(shape))
            arr = np.frombuffer(body, dtype="<f8", count=count, offset=off)
            tensors[name] = arr.astype(np.float64).reshape(shape)
            off += 8 * count
    except (ValueError, KeyError) as exc:
        raise CorruptFile(f"malformed model file: {exc}") from None
    if off != len(body):
        raise CorruptFile("trailing bytes after tensors")
    vocab = Vocab(tuple(header["vocab"]))
    if kind == _KINDS["attention"]:
        return AttentionScorer(ModelConfig(**header["config"]), vocab, tensors,
                               header.get("history", []))
    if kind == _KINDS["ngram"]:
        tri = tensors.get("trigrams")
        return NGramScorer(vocab, header["order"], header["smoothing"],
                           tensors["bigrams"].astype(np.int64),
                           None if tri is None else tri.astype(np.int64))
    raise VersionMismatch(f"unknown scorer kind {kind}")


def save(scorer, path):
    Path(path).write_bytes(dumps(scorer))


def load(path):
    return loads(Path(path).read_bytes())
