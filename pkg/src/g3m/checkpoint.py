"""Binary checkpoint container for :class:`~g3m.model.G3M`.

Layout (all integers little-endian)::

    b"G3M1" | u32 version | u32 n_sections | sections... | u32 crc32

A section is ``u16 name_len | name (utf-8) | u8 kind | payload``.  Array
payloads are ``u8 ndim | u64 dims... | float64 data``; JSON payloads are
``u64 length | utf-8 bytes``.  The CRC covers every byte before it.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .corpus import Vocabulary, ZScore
from .encoder import EncoderConfig
from .gates import CooccurrenceMatrix
from .layers import ParamSet

MAGIC = b"G3M1"
FORMAT_VERSION = 1

_ARRAY, _JSON = 0, 1
_PARAM_PREFIX = "param:"


class CheckpointError(ValueError):
    pass


class ChecksumError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


def _array_section(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = _name(name) + struct.pack("<BB", _ARRAY, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes()


def _json_section(name: str, obj) -> bytes:
    raw = json.dumps(obj, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return _name(name) + struct.pack("<BQ", _JSON, len(raw)) + raw


def _name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def to_bytes(model) -> bytes:
    sections = [
        _json_section("meta", {
            "variant": model.variant,
            "g": model.g,
            "encoder": model.enc_cfg.to_dict(),
            "vocab": model.vocab.to_dict(),
            "train_config": model.train_config,
        }),
        _array_section("zscore", np.array([model.zscore.mean, model.zscore.sigma])),
        _array_section("cooc.counts", model.cooc.counts),
        _array_section("cooc.D", model.cooc.D),
    ]
    sections += [_array_section(_PARAM_PREFIX + p.name, p.value) for p in model.params]
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(sections)) + b"".join(sections)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes, pos: int):
        self.buf, self.pos = buf, pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("section runs past end of file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _parse(buf: bytes) -> dict:
    if buf[:4] != MAGIC:
        raise CheckpointError("not a G3M checkpoint (bad magic bytes)")
    if len(buf) < 12:
        raise ChecksumError("checkpoint truncated")
    (version,) = struct.unpack("<I", buf[4:8])
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version}, this build reads version {FORMAT_VERSION}")
    if len(buf) < 16:
        raise ChecksumError("checkpoint truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("checkpoint CRC-32 mismatch (file corrupt or truncated)")
    r = _Reader(body, 8)
    (n,) = r.unpack("<I")
    out = {}
    for _ in range(n):
        (ln,) = r.unpack("<H")
        name = r.take(ln).decode("utf-8")
        (kind,) = r.unpack("<B")
        if kind == _ARRAY:
            (ndim,) = r.unpack("<B")
            shape = r.unpack(f"<{ndim}Q")
            count = int(np.prod(shape, dtype=np.int64))
            out[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        elif kind == _JSON:
            (ln,) = r.unpack("<Q")
            out[name] = json.loads(r.take(ln).decode("utf-8"))
        else:
            raise CheckpointError(f"unknown section kind {kind} in {name!r}")
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after last section")
    return out


def from_bytes(buf: bytes):
    from .model import G3M

    sec = _parse(buf)
    meta = sec["meta"]
    ps = ParamSet()
    for name, arr in sec.items():
        if name.startswith(_PARAM_PREFIX):
            ps.add(name[len(_PARAM_PREFIX):], arr)
    z = sec["zscore"]
    model = G3M(
        Vocabulary.from_dict(meta["vocab"]),
        EncoderConfig(**meta["encoder"]),
        int(meta["g"]),
        ZScore(float(z[0]), float(z[1])),
        CooccurrenceMatrix(sec["cooc.counts"], sec["cooc.D"]),
        variant=meta["variant"],
        params=ps,
    )
    model.train_config = meta["train_config"]
    return model


def save_checkpoint(model, path) -> None:
    Path(path).write_bytes(to_bytes(model))


def load_checkpoint(path):
    return from_bytes(Path(path).read_bytes())
