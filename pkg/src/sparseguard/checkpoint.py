"""Binary model checkpoints: magic prefix, JSON header, raw arrays, bitsets.

Layout: b"SFCMP1" | u32 little-endian header length | header JSON (UTF-8) |
every parameter array as little-endian float64 in model.params() order |
every mask as a little-bit-order packed bitset in masked_layers() order.
Loading rebuilds the architecture from the recorded target spec and restores
weights bit-exactly and masks exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .models import SparseModel, TargetSpec, build_target
from .sparse import active_count

MAGIC = b"SFCMP1"
VERSION = 1


@dataclass
class Checkpoint:
    model: SparseModel
    omega: float
    iteration: int
    seed: int
    dataset: dict
    attacker_mode: str
    spec_digest: str


def _spec_doc(spec: TargetSpec) -> dict:
    return {
        "kind": spec.kind,
        "input_shape": list(spec.input_shape),
        "classes": spec.classes,
        "hidden": list(spec.hidden),
        "channels": list(spec.channels),
        "kernel": spec.kernel,
    }


def _digest(spec_doc: dict, omega: float) -> str:
    blob = json.dumps({"target": spec_doc, "omega": omega},
                      sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, model: SparseModel, *, iteration: int, seed: int,
                    dataset: dict, attacker_mode: str) -> None:
    spec_doc = _spec_doc(model.spec)
    params = model.params()
    masks = [layer.mask for layer in model.masked_layers()]
    omega = float(model.omega)
    header = {
        "version": VERSION,
        "target": spec_doc,
        "omega": omega,
        "epsilon": float(model.epsilon),
        "iteration": int(iteration),
        "seed": int(seed),
        "dataset": dataset,
        "attacker_mode": attacker_mode,
        "active_count": active_count(model),
        "param_shapes": [list(p.data.shape) for p in params],
        "mask_shapes": [list(m.shape) for m in masks],
        "spec_digest": _digest(spec_doc, omega),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        for m in masks:
            bits = np.packbits(m.astype(np.uint8).reshape(-1),
                               bitorder="little")
            fh.write(bits.tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"truncated checkpoint: expected {n} bytes of {what}")
    return data


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError("not a checkpoint file (bad magic)")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        if header.get("version") != VERSION:
            raise ValueError(f"unsupported checkpoint version: "
                             f"{header.get('version')}")
        spec_doc = header["target"]
        if header["spec_digest"] != _digest(spec_doc, header["omega"]):
            raise ValueError("checkpoint header digest mismatch")
        spec = TargetSpec(kind=spec_doc["kind"],
                          input_shape=tuple(spec_doc["input_shape"]),
                          classes=spec_doc["classes"],
                          hidden=tuple(spec_doc["hidden"]),
                          channels=tuple(spec_doc["channels"]),
                          kernel=spec_doc["kernel"])
        # build at full density (always feasible), then overwrite everything
        model = build_target(spec, 1.0, np.random.default_rng(0))
        params = model.params()
        if [list(p.data.shape) for p in params] != header["param_shapes"]:
            raise ValueError("checkpoint/spec mismatch: parameter shapes differ")
        for p in params:
            raw = _read_exact(fh, p.data.size * 8, "weights")
            p.data[...] = np.frombuffer(raw, dtype="<f8").reshape(p.data.shape)
        layers = model.masked_layers()
        if [list(l.mask.shape) for l in layers] != header["mask_shapes"]:
            raise ValueError("checkpoint/spec mismatch: mask shapes differ")
        total_active = 0
        for layer in layers:
            size = layer.mask.size
            raw = _read_exact(fh, (size + 7) // 8, "masks")
            bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8),
                                 count=size, bitorder="little")
            layer.mask[...] = bits.reshape(layer.mask.shape).astype(np.float64)
            total_active += int(bits.sum())
        if fh.read(1):
            raise ValueError("trailing bytes after checkpoint payload")
    if total_active != header["active_count"]:
        raise ValueError("mask popcount does not match recorded active count")
    model.omega = float(header["omega"])
    model.epsilon = float(header["epsilon"])
    return Checkpoint(model=model, omega=float(header["omega"]),
                      iteration=int(header["iteration"]),
                      seed=int(header["seed"]), dataset=header["dataset"],
                      attacker_mode=header["attacker_mode"],
                      spec_digest=header["spec_digest"])
