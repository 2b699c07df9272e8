"""Binary tensor container shared by weight and calibration files.

Layout (all integers little-endian)::

    b"ICW1"  u32 version  u32 count
    count x { u16 name_len, name (UTF-8), u8 dtype (0=f32, 1=f64), u8 rank,
              rank x u64 dim, raw little-endian data }
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ICW1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}


class ContainerError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


def encode(tensors: dict, dtype: str = "f64") -> bytes:
    """Serialise ``{name: array}`` in insertion order. ``dtype`` is ``f64`` or ``f32``."""
    target = np.dtype("<f8") if dtype == "f64" else np.dtype("<f4")
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    seen = set()
    for name, value in tensors.items():
        if name in seen:
            raise ValueError(f"duplicate tensor name {name!r}")
        seen.add(name)
        arr = np.asarray(value)
        if arr.dtype not in (np.dtype("<f4"), np.dtype("<f8")) or dtype == "f32":
            arr = arr.astype(target)
        raw_name = name.encode("utf-8")
        if len(raw_name) > 0xFFFF or arr.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} does not fit the header fields")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", _CODES[arr.dtype.newbyteorder("<")], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict:
    view = memoryview(buf)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ContainerError(f"truncated while reading {what}", pos)
        out = view[pos:pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise ContainerError("bad magic", 0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise ContainerError(f"unsupported version {version}", 4)
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        start = pos
        try:
            name = bytes(take(name_len, "name")).decode("utf-8")
        except UnicodeDecodeError:
            raise ContainerError("tensor name is not UTF-8", start) from None
        code_pos = pos
        code, rank = struct.unpack("<BB", take(2, "dtype/rank"))
        if code not in _DTYPES:
            raise ContainerError(f"unknown dtype code {code}", code_pos)
        dims = struct.unpack(f"<{rank}Q", take(8 * rank, "dims"))
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize if rank else dt.itemsize
        data = take(nbytes, f"data of {name!r}")
        if name in out:
            raise ContainerError(f"duplicate tensor name {name!r}", start)
        out[name] = np.frombuffer(data, dtype=dt).reshape(dims).copy()
    if pos != len(view):
        raise ContainerError("trailing bytes after last tensor", pos)
    return out


def save_weights(path, tensors: dict, dtype: str = "f64") -> None:
    Path(path).write_bytes(encode(tensors, dtype))


def load_weights(path) -> dict:
    return decode(Path(path).read_bytes())


# ---- model / calibration <-> named tensors ------------------------------------

_CONFIG_FIELDS = ("depth", "hidden", "heads", "tokens", "mlp_ratio", "cond_classes", "embed_scale")


def model_to_tensors(weights) -> dict:
    cfg = weights.config
    out = {"config": np.array([float(getattr(cfg, f)) for f in _CONFIG_FIELDS])}
    for b, blk in enumerate(weights.blocks):
        for slot, lin in blk.linears.items():
            out[f"blocks.{b}.{slot}.weight"] = lin.weight
            out[f"blocks.{b}.{slot}.bias"] = lin.bias
        for ln in ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            out[f"blocks.{b}.{ln}"] = getattr(blk, ln)
    out["head.weight"] = weights.head.weight
    out["head.bias"] = weights.head.bias
    out["class_embed"] = weights.class_embed
    return out


def tensors_to_model(t: dict):
    from .model import SLOTS, BlockWeights, Linear, ModelConfig, ModelWeights

    try:
        raw = t["config"]
        kw = {f: (float(v) if f == "embed_scale" else int(v)) for f, v in zip(_CONFIG_FIELDS, raw)}
        cfg = ModelConfig(**kw)
        f64 = lambda k: np.asarray(t[k], dtype=np.float64)  # noqa: E731
        blocks = []
        for b in range(cfg.depth):
            lins = {s: Linear(f64(f"blocks.{b}.{s}.weight"), f64(f"blocks.{b}.{s}.bias")) for s in SLOTS}
            blocks.append(BlockWeights(lins, *(f64(f"blocks.{b}.{ln}") for ln in
                                               ("ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"))))
        return ModelWeights(cfg, blocks, Linear(f64("head.weight"), f64("head.bias")), f64("class_embed"))
    except KeyError as exc:
        raise ValueError(f"weight file is missing tensor {exc}") from None


def calib_to_tensors(params, scales=None) -> dict:
    out = {}
    for layer, f in params.layers.items():
        out[f"{params.method}/{layer.name}/wa"] = f.wa
        out[f"{params.method}/{layer.name}/wb"] = f.wb
        if scales is not None:
            out[f"{params.method}/{layer.name}/s_i"] = scales[layer].s_i
            out[f"{params.method}/{layer.name}/s_o"] = scales[layer].s_o
    return out


def tensors_to_calib(t: dict):
    from .calibration import CalibParams, LayerCalib
    from .model import LayerId

    layers, method = {}, None
    for key in t:
        m, lname, part = key.split("/")
        if part != "wa":
            continue
        method = m
        layer = LayerId.parse(lname)
        wa = np.asarray(t[key], dtype=np.float64)
        wb = np.asarray(t[f"{m}/{lname}/wb"], dtype=np.float64)
        layers[layer] = LayerCalib(wa, wb, m)
    if not layers:
        raise ValueError("no calibration factors in file")
    rank = next(iter(layers.values())).rank
    return CalibParams(layers, rank, method)
