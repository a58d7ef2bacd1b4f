"""Single-file checkpoints.

Layout: magic ``SCFC``, u16 version, u32 metadata length, utf-8 JSON
metadata (sorted keys), then the raw little-endian float64 arrays listed in
``metadata["arrays"]`` in order. Floats inside the JSON round-trip exactly,
so a saved model reproduces its forward outputs bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import AreaParams, ScfModel, UnimodalArea
from .errors import InputError
from .trainer import Adam, ConcatBaseline, EpochRecord, MlpHead

MAGIC = b"SCFC"
VERSION = 1
_HEADER = struct.Struct("<4sHI")


@dataclass
class Checkpoint:
    fuser: ScfModel | ConcatBaseline
    head: MlpHead
    optimizer: Adam | None = None
    config: dict | None = None
    history: list[EpochRecord] | None = None
    best_epoch: int = 0


def _fuser_meta(fuser, arrays):
    if isinstance(fuser, ConcatBaseline):
        return {"kind": "concat"}
    areas = []
    for area in fuser.unimodal:
        arrays[f"rf.{area.name}"] = area.rf
        areas.append(
            {"name": area.name, "params": asdict(area.params), "feedback": area.feedback, "gain": area.gain}
        )
    return {
        "kind": "scf",
        "shape": list(fuser.shape),
        "steps": fuser.steps,
        "trainable": sorted(fuser.trainable),
        "unimodal": areas,
        "multimodal": asdict(fuser.multimodal),
    }


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    arrays: dict[str, np.ndarray] = {}
    meta = {"fuser": _fuser_meta(ckpt.fuser, arrays)}
    for i, (w, b) in enumerate(zip(ckpt.head.weights, ckpt.head.biases)):
        arrays[f"head.W{i}"] = w
        arrays[f"head.b{i}"] = b
    meta["head"] = {"layers": len(ckpt.head.weights), "dropout": list(ckpt.head.dropout)}
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        meta["optimizer"] = {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps, "t": opt.t,
            "keys": sorted(opt.m),
        }
        for k in sorted(opt.m):
            arrays[f"adam.m.{k}"] = opt.m[k]
            arrays[f"adam.v.{k}"] = opt.v[k]
    meta["config"] = ckpt.config
    meta["history"] = [asdict(r) for r in ckpt.history] if ckpt.history is not None else None
    meta["best_epoch"] = ckpt.best_epoch
    listing = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        listing.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        offset += len(raw)
        blobs.append(raw)
    meta["arrays"] = listing
    meta_raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(meta_raw)) + meta_raw + b"".join(blobs)


def decode_checkpoint(buf: bytes) -> Checkpoint:
    if len(buf) < _HEADER.size:
        raise InputError("truncated checkpoint header")
    magic, version, meta_len = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise InputError(f"not a checkpoint: magic {magic!r}")
    if version != VERSION:
        raise InputError(f"unsupported checkpoint version {version}")
    start = _HEADER.size
    try:
        meta = json.loads(buf[start : start + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"corrupt checkpoint metadata: {exc}") from exc
    base = start + meta_len
    arrays = {}
    for item in meta["arrays"]:
        lo = base + item["offset"]
        hi = lo + item["nbytes"]
        if hi > len(buf):
            raise InputError(f"checkpoint truncated inside array {item['name']!r} at offset {lo}")
        arrays[item["name"]] = np.frombuffer(buf[lo:hi], dtype="<f8").reshape(item["shape"]).astype(float)

    fm = meta["fuser"]
    if fm["kind"] == "concat":
        fuser = ConcatBaseline()
    else:
        fuser = ScfModel(
            shape=tuple(fm["shape"]),
            unimodal=[
                UnimodalArea(AreaParams(**a["params"]), arrays[f"rf.{a['name']}"], a["feedback"], a["gain"], a["name"])
                for a in fm["unimodal"]
            ],
            multimodal=AreaParams(**fm["multimodal"]),
            steps=fm["steps"],
            trainable=frozenset(fm["trainable"]),
        )
    n = meta["head"]["layers"]
    head = MlpHead(
        [arrays[f"head.W{i}"] for i in range(n)],
        [arrays[f"head.b{i}"] for i in range(n)],
        list(meta["head"]["dropout"]),
    )
    opt = None
    if meta.get("optimizer"):
        om = meta["optimizer"]
        opt = Adam(om["lr"], om["beta1"], om["beta2"], om["eps"])
        opt.t = om["t"]
        opt.m = {k: arrays[f"adam.m.{k}"] for k in om["keys"]}
        opt.v = {k: arrays[f"adam.v.{k}"] for k in om["keys"]}
    history = [EpochRecord(**r) for r in meta["history"]] if meta.get("history") is not None else None
    return Checkpoint(fuser, head, opt, meta.get("config"), history, meta.get("best_epoch", 0))


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(encode_checkpoint(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
