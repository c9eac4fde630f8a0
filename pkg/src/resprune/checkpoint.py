"""Single-file checkpoint format.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic  b"RPCKPT01"
    offset 8   8 bytes   uint64 manifest length M
    offset 16  M bytes   UTF-8 JSON manifest
    offset 16+M          tensor blobs, back to back

Every blob is a row-major little-endian float32 array. The manifest holds
``format`` (=1), ``spec`` (ModelSpec fields), ``init_seed``, ``epoch``,
``masks`` (conv path -> keep-vector as a '0'/'1' string), ``kept`` (conv
path -> kept filter indices, present for compact models), ``meta`` (free
form) and ``tensors``: a list of ``{"name", "shape", "offset", "nbytes"}``
with offsets relative to the start of the blob section. Model tensors use
their parameter/buffer paths (``layer1.0.conv1.weight``,
``bn1.running_mean`` ...); optimizer velocities are stored as
``optimizer.velocity.<parameter path>``.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptionError, IngestionError
from .models import ModelSpec, ResNet, _apply_structure, build_resnet

MAGIC = b"RPCKPT01"
VELOCITY_PREFIX = "optimizer.velocity."


def encode_mask(keep: np.ndarray) -> str:
    return "".join("1" if k else "0" for k in np.asarray(keep, dtype=bool))


def decode_mask(text: str) -> np.ndarray:
    return np.array([c == "1" for c in text], dtype=bool)


@dataclass
class Checkpoint:
    spec: ModelSpec
    init_seed: int
    epoch: int
    masks: dict[str, np.ndarray] = field(default_factory=dict)
    kept: dict[str, np.ndarray] = field(default_factory=dict)
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def model_state(self) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.tensors.items() if not k.startswith(VELOCITY_PREFIX)}

    def velocity(self) -> dict[str, np.ndarray]:
        return {k[len(VELOCITY_PREFIX):]: v for k, v in self.tensors.items()
                if k.startswith(VELOCITY_PREFIX)}

    def build_model(self) -> ResNet:
        model = build_resnet(self.spec, self.init_seed)
        if self.kept:
            _apply_structure(model, self.kept)
        model.load_state_dict(self.model_state())
        return model


def save_checkpoint(path, model: ResNet, init_seed: int, epoch: int,
                    masks: dict[str, np.ndarray] | None = None,
                    velocity: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Write atomically (temp file + rename) so an interrupted save never corrupts ``path``."""
    tensors = dict(model.state_dict())
    for name, v in (velocity or {}).items():
        tensors[VELOCITY_PREFIX + name] = v
    entries, blobs, offset = [], [], 0
    for name, arr in tensors.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    manifest = {
        "format": 1,
        "spec": model.spec.to_dict(),
        "init_seed": int(init_seed),
        "epoch": int(epoch),
        "masks": {k: encode_mask(v) for k, v in (masks or {}).items()},
        "kept": {k: [int(i) for i in v] for k, v in model.kept.items()},
        "meta": meta or {},
        "tensors": entries,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(head)))
        f.write(head)
        for b in blobs:
            f.write(b)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC or len(raw) < 16:
        raise CorruptionError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<Q", raw[8:16])
    try:
        manifest = json.loads(raw[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptionError(f"{path}: unreadable manifest ({exc})") from exc
    base = 16 + n
    tensors = {}
    for e in manifest["tensors"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(raw):
            raise CorruptionError(f"{path}: tensor {e['name']} runs past end of file")
        arr = np.frombuffer(raw, dtype="<f4", count=e["nbytes"] // 4, offset=start)
        tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return Checkpoint(
        spec=ModelSpec.from_dict(manifest["spec"]),
        init_seed=manifest["init_seed"],
        epoch=manifest["epoch"],
        masks={k: decode_mask(v) for k, v in manifest["masks"].items()},
        kept={k: np.asarray(v, dtype=np.int64) for k, v in manifest["kept"].items()},
        tensors=tensors,
        meta=manifest.get("meta", {}),
    )
