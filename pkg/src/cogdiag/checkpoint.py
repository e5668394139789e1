"""Checkpoint serialization: one deterministic JSON file.

Arrays travel as base64 of their little-endian float64 bytes, keys are
sorted, separators fixed, nan/inf rejected.  Saving the same checkpoint
twice therefore produces byte-identical files, and load -> save is the
identity on bytes.  No pickling, so checkpoints are safe to share.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import MLP_PARAMS, DiagnosticFunction
from .numerics import ParameterStore

FORMAT_VERSION = 1

# parameters updated row-wise during training; everything else is dense
EMBEDDING_PARAMS = ("student_mu", "student_logvar", "exercise_diff", "exercise_disc")


class CheckpointError(RuntimeError):
    """Unreadable, wrong-version, or internally inconsistent checkpoint."""


@dataclass
class Checkpoint:
    variant: str
    irt_scale: float
    mlp_hidden: tuple[int, ...]
    params: dict[str, np.ndarray]
    consensus_mean: np.ndarray | None
    student_ids: list[str]
    exercise_ids: list[str]
    concept_ids: list[str]
    run_config: dict
    best_epoch: int
    val_metrics: dict[str, float] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return arr.reshape(obj["shape"])


def save_checkpoint(ck: Checkpoint, path) -> None:
    doc = {
        "format_version": ck.format_version,
        "variant": ck.variant,
        "irt_scale": ck.irt_scale,
        "mlp_hidden": list(ck.mlp_hidden),
        "params": {name: _encode_array(arr) for name, arr in ck.params.items()},
        "consensus_mean": None if ck.consensus_mean is None else _encode_array(ck.consensus_mean),
        "student_ids": ck.student_ids,
        "exercise_ids": ck.exercise_ids,
        "concept_ids": ck.concept_ids,
        "run_config": ck.run_config,
        "best_epoch": ck.best_epoch,
        "val_metrics": ck.val_metrics,
    }
    text = json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(text)
        fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, encoding="ascii") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path} has format_version {version!r}, this build reads {FORMAT_VERSION}"
        )
    try:
        return Checkpoint(
            variant=doc["variant"],
            irt_scale=doc["irt_scale"],
            mlp_hidden=tuple(doc["mlp_hidden"]),
            params={name: _decode_array(obj) for name, obj in doc["params"].items()},
            consensus_mean=(
                None if doc["consensus_mean"] is None else _decode_array(doc["consensus_mean"])
            ),
            student_ids=doc["student_ids"],
            exercise_ids=doc["exercise_ids"],
            concept_ids=doc["concept_ids"],
            run_config=doc["run_config"],
            best_epoch=doc["best_epoch"],
            val_metrics=doc["val_metrics"],
            format_version=version,
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint {path} is malformed: {exc}") from exc


def diagnostic_from_checkpoint(ck: Checkpoint) -> DiagnosticFunction:
    return DiagnosticFunction(
        variant=ck.variant, irt_scale=ck.irt_scale, mlp_hidden=tuple(ck.mlp_hidden)
    )


def store_from_checkpoint(ck: Checkpoint) -> ParameterStore:
    """Rebuild a parameter store (fresh optimizer state) from saved arrays."""
    store = ParameterStore()
    for name in EMBEDDING_PARAMS:
        if name in ck.params:
            store.add(name, ck.params[name], row_sparse=True)
    for name in MLP_PARAMS:
        if name in ck.params:
            store.add(name, ck.params[name])
    leftover = set(ck.params) - set(store.params)
    if leftover:
        raise CheckpointError(f"checkpoint holds unknown parameters: {sorted(leftover)}")
    return store
