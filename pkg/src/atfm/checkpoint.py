"""Model checkpoints: parameters in the tensor container plus a JSON sidecar."""

from __future__ import annotations

import difflib
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from . import container
from .data.cache import sidecar_path
from .data.external import ExternalVocab
from .errors import DataError, MetadataMismatchError
from .models import SpnConfig, declare_spn
from .params import ParamStore
from .scaling import Scaler

FORMAT = "atfm-checkpoint/1"


@dataclass
class Checkpoint:
    store: ParamStore
    cfg: SpnConfig
    scaler: Scaler
    vocab: ExternalVocab
    meta: dict


def checkpoint_metadata(store: ParamStore, cfg: SpnConfig, scaler: Scaler, vocab: ExternalVocab, blob: bytes,
                        extra: dict | None = None) -> dict:
    return {
        "run": dict(extra or {}),
        "format": FORMAT,
        "config": cfg.to_dict(),
        "scaler": scaler.to_dict(),
        "vocabulary": vocab.to_dict(),
        "vocabulary_sha256": vocab.digest(),
        "parameters": {name: list(t.shape) for name, t in store.items()},
        "container_sha256": hashlib.sha256(blob).hexdigest(),
    }


def save_checkpoint(path, store: ParamStore, cfg: SpnConfig, scaler: Scaler, vocab: ExternalVocab,
                    extra: dict | None = None) -> dict:
    """Write parameters and metadata; returns the sidecar dict.

    The store is rounded in place to the container's float32 precision so
    the live model and a reloaded one predict identically.
    """
    for _, t in store.items():
        t.data = container.quantize(t.data)
    blob = container.encode(store.state())
    meta = checkpoint_metadata(store, cfg, scaler, vocab, blob, extra)
    path = Path(path)
    path.write_bytes(blob)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return meta


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    side = sidecar_path(path)
    if not path.exists() or not side.exists():
        raise DataError(f"checkpoint {path} or its sidecar is missing")
    meta = json.loads(side.read_text(encoding="utf-8"))
    if meta.get("format") != FORMAT:
        raise DataError(f"{side}: not a checkpoint sidecar")
    blob = path.read_bytes()
    if hashlib.sha256(blob).hexdigest() != meta["container_sha256"]:
        raise MetadataMismatchError(f"{path}: contents do not match the sidecar digest")
    cfg = SpnConfig.from_dict(meta["config"])
    vocab = ExternalVocab.from_dict(meta["vocabulary"])
    if vocab.digest() != meta["vocabulary_sha256"]:
        raise MetadataMismatchError(f"{side}: vocabulary digest mismatch")
    store = declare_spn(cfg)
    declared = {name: list(t.shape) for name, t in store.items()}
    if declared != meta["parameters"]:
        raise MetadataMismatchError("checkpoint parameters differ from the configured model:\n"
                                    + metadata_diff(meta["parameters"], declared, "checkpoint", "model"))
    store.load_state(container.decode(blob))
    return Checkpoint(store, cfg, Scaler.from_dict(meta["scaler"]), vocab, meta)


def metadata_diff(a: dict, b: dict, label_a: str = "a", label_b: str = "b") -> str:
    left = json.dumps(a, indent=2, sort_keys=True).splitlines()
    right = json.dumps(b, indent=2, sort_keys=True).splitlines()
    return "\n".join(difflib.unified_diff(left, right, label_a, label_b, lineterm=""))


def check_series_compatible(ckpt: Checkpoint, shape: tuple[int, int], d_ext: int, scaler: Scaler | None = None) -> None:
    """Refuse a series whose grid, external dimension or scaler disagrees with the checkpoint."""
    want = {"grid": [ckpt.cfg.h, ckpt.cfg.w], "d_ext": ckpt.cfg.d_ext}
    have = {"grid": list(shape), "d_ext": d_ext}
    if scaler is not None:
        want["scaler"] = ckpt.scaler.to_dict()
        have["scaler"] = scaler.to_dict()
    if want != have:
        raise MetadataMismatchError("series does not match checkpoint:\n"
                                    + metadata_diff(want, have, "checkpoint", "series"))
