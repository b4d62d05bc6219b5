"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MTCK" | u32 version | u32 section count
    section: u16 name length | name (utf-8) | u8 kind | u64 payload length | payload | u32 crc32(payload)

A tensor payload (kind 0) is ``u32 count`` followed by, per tensor,
``u16 name length | name | u32 ndim | u32 dims... | float32 data``. A meta
payload (kind 1) is UTF-8 JSON.
"""
from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import DataError

MAGIC = b"MTCK"
VERSION = 1
KIND_TENSORS, KIND_JSON = 0, 1
MODEL_SECTIONS = ("detector", "densemotion", "generator", "feature-pyramid")


class CheckpointError(DataError):
    """Malformed, truncated or corrupted checkpoint (a data error)."""


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    sections: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _tensor_payload(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            raise TypeError(f"tensor {name!r}: expected float32, got {arr.dtype}")
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)) + nb)
        buf.write(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        buf.write(arr.astype("<f4").tobytes())
    return buf.getvalue()


def _parse_tensors(payload: bytes, section: str) -> dict[str, np.ndarray]:
    view = memoryview(payload)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError(f"section {section!r}: truncated tensor data")
        out = view[pos:pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = bytes(take(nlen)).decode()
        (ndim,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(dims, dtype=np.int64))
        out[name] = np.frombuffer(take(4 * size), dtype="<f4").astype(np.float32).reshape(dims)
    if pos != len(view):
        raise CheckpointError(f"section {section!r}: {len(view) - pos} trailing bytes")
    return out


def save(path, ckpt: Checkpoint) -> None:
    items = [("meta", KIND_JSON, json.dumps(ckpt.meta, sort_keys=True).encode())]
    items += [(name, KIND_TENSORS, _tensor_payload(t)) for name, t in ckpt.sections.items()]
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<II", VERSION, len(items)))
    for name, kind, payload in items:
        nb = name.encode()
        buf.write(struct.pack("<H", len(nb)) + nb + struct.pack("<BQ", kind, len(payload)))
        buf.write(payload)
        buf.write(struct.pack("<I", zlib.crc32(payload)))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    pos = 12
    ckpt = Checkpoint()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode()
            pos += nlen
            kind, plen = struct.unpack_from("<BQ", data, pos)
            pos += 9
            payload = data[pos:pos + plen]
            if len(payload) != plen:
                raise CheckpointError(f"{path}: section {name!r} truncated")
            pos += plen
            (crc,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if zlib.crc32(payload) != crc:
                raise CheckpointError(f"{path}: checksum mismatch in section {name!r}")
            if kind == KIND_JSON:
                ckpt.meta = json.loads(payload.decode())
            elif kind == KIND_TENSORS:
                ckpt.sections[name] = _parse_tensors(payload, name)
            else:
                raise CheckpointError(f"{path}: section {name!r} has unknown kind {kind}")
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from exc
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return ckpt


# ---------------------------------------------------------------------------- model helpers

def add_model(ckpt: Checkpoint, model) -> Checkpoint:
    ckpt.sections.update(model.state())
    ckpt.meta["model"] = model.config.to_dict()
    return ckpt


def add_basis(ckpt: Checkpoint, basis) -> Checkpoint:
    ckpt.sections["motion-basis"] = basis.to_state()
    return ckpt


def add_embedder(ckpt: Checkpoint, embedder) -> Checkpoint:
    ckpt.sections["embedder"] = dict(embedder.state_dict())
    ckpt.meta["embedder"] = {"image_shape": list(embedder.image_shape), "groups": embedder.groups,
                             "convs_per_block": embedder.convs_per_block}
    return ckpt


def from_model(model, basis=None, embedder=None, meta: dict | None = None) -> Checkpoint:
    ckpt = add_model(Checkpoint(meta=dict(meta or {})), model)
    if basis is not None:
        add_basis(ckpt, basis)
    if embedder is not None:
        add_embedder(ckpt, embedder)
    return ckpt


def has_model(ckpt: Checkpoint) -> bool:
    return all(s in ckpt.sections for s in MODEL_SECTIONS)


def get_model(ckpt: Checkpoint):
    from .model import MTConfig, MTModel

    missing = [s for s in MODEL_SECTIONS if s not in ckpt.sections]
    if missing:
        raise CheckpointError(f"checkpoint lacks model sections {missing}")
    try:
        model = MTModel(MTConfig.from_dict(ckpt.meta.get("model", {})))
        model.load_state({k: ckpt.sections[k] for k in MODEL_SECTIONS})
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"checkpoint model sections do not match their config: {exc}") from exc
    return model


def get_basis(ckpt: Checkpoint):
    """The motion basis, or None when the section is absent."""
    from .mtaug import MotionBasis

    if "motion-basis" not in ckpt.sections:
        return None
    return MotionBasis.from_state(ckpt.sections["motion-basis"])


def get_embedder(ckpt: Checkpoint):
    """The recognition embedder, or None when the section is absent."""
    from .fvreval import Embedder

    if "embedder" not in ckpt.sections:
        return None
    cfg = ckpt.meta.get("embedder", {})
    emb = Embedder(tuple(cfg.get("image_shape", (64, 144))), groups=cfg.get("groups", 4),
                   convs_per_block=cfg.get("convs_per_block", 1))
    try:
        emb.load_state_dict(ckpt.sections["embedder"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"embedder section does not match its config: {exc}") from exc
    return emb
