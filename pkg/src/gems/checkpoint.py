"""Checkpoint container: one JSON header line + matrix blocks.

Arrays are stored in the shared matrix serialization (JSON shape header
followed by little-endian f32 payload), in an order fully determined by
the header, so `save(load(path))` reproduces the file byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .gating import GatingNet
from .linalg import load_matrix, save_matrix
from .subspace import DenseAdamState, SubspaceState

CHECKPOINT_SCHEMA = 1

__all__ = ["Checkpoint", "save_checkpoint", "load_checkpoint"]


@dataclass
class Checkpoint:
    config_hash: str
    step: int
    variant: str
    params: dict = field(default_factory=dict)
    tuner_meta: dict = field(default_factory=dict)  # name -> per-subspace scalars
    tuner_arrays: dict = field(default_factory=dict)  # name -> tag -> arrays
    dense_meta: dict = field(default_factory=dict)
    dense_arrays: dict = field(default_factory=dict)
    gate: GatingNet | None = None
    param_vec: dict = field(default_factory=dict)  # name -> stored as 1-D


def _state_scalars(s: SubspaceState) -> dict:
    return {
        "step": s.step,
        "rank": s.rank,
        "refresh_every": s.refresh_every,
        "scale": s.scale,
        "lr": s.lr,
        "beta1": s.beta1,
        "beta2": s.beta2,
        "eps": s.eps,
        "reset_moments_on_refresh": s.reset_moments_on_refresh,
        "freeze_basis": s.freeze_basis,
    }


def _dense_scalars(s: DenseAdamState) -> dict:
    return {"step": s.step, "lr": s.lr, "beta1": s.beta1,
            "beta2": s.beta2, "eps": s.eps}


def checkpoint_from_run(config_hash, optimizer, params, gate) -> Checkpoint:
    ckpt = Checkpoint(
        config_hash=config_hash,
        step=optimizer.step_count,
        variant=optimizer.variant,
        gate=gate,
    )
    for name, value in params.items():
        ckpt.params[name] = value
        ckpt.param_vec[name] = value.ndim == 1
    for name, tuner in optimizer.tuners.items():
        meta = {"transpose": tuner.transpose}
        arrays = {}
        for tag in ("shared", "src", "rec"):
            state = getattr(tuner, tag)
            if state is None:
                meta[tag] = None
                continue
            meta[tag] = _state_scalars(state)
            arrays[tag] = (state.basis, state.m1, state.m2)
        ckpt.tuner_meta[name] = meta
        ckpt.tuner_arrays[name] = arrays
    for name, state in optimizer.dense.items():
        ckpt.dense_meta[name] = _dense_scalars(state)
        ckpt.dense_arrays[name] = (state.m1, state.m2)
    return ckpt


def _write_array(arr, fh):
    save_matrix(arr[None, :] if arr.ndim == 1 else arr, fh)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = {
        "schema_version": CHECKPOINT_SCHEMA,
        "config_hash": ckpt.config_hash,
        "step": ckpt.step,
        "variant": ckpt.variant,
        "params": sorted(ckpt.params),
        "param_vec": {k: ckpt.param_vec[k] for k in sorted(ckpt.param_vec)},
        "tuners": {k: ckpt.tuner_meta[k] for k in sorted(ckpt.tuner_meta)},
        "dense": {k: ckpt.dense_meta[k] for k in sorted(ckpt.dense_meta)},
        "gate": (
            {"temperature": ckpt.gate.temperature} if ckpt.gate is not None else None
        ),
    }
    with open(path, "wb") as fh:
        fh.write(
            json.dumps(header, sort_keys=True, separators=(",", ":")).encode("ascii")
            + b"\n"
        )
        for name in sorted(ckpt.params):
            _write_array(ckpt.params[name], fh)
        for name in sorted(ckpt.tuner_meta):
            for tag in ("shared", "src", "rec"):
                if ckpt.tuner_meta[name][tag] is None:
                    continue
                for arr in ckpt.tuner_arrays[name][tag]:
                    _write_array(arr, fh)
        for name in sorted(ckpt.dense_meta):
            for arr in ckpt.dense_arrays[name]:
                _write_array(arr, fh)
        if ckpt.gate is not None:
            for arr in (ckpt.gate.w1, ckpt.gate.b1, ckpt.gate.w2, ckpt.gate.b2):
                _write_array(arr, fh)


def _read_array(fh, as_vector: bool):
    arr = load_matrix(fh)
    return arr[0] if as_vector else arr


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("ascii"))
        if header.get("schema_version") != CHECKPOINT_SCHEMA:
            raise ValueError("unsupported checkpoint schema version")
        ckpt = Checkpoint(
            config_hash=header["config_hash"],
            step=header["step"],
            variant=header["variant"],
        )
        ckpt.param_vec = dict(header["param_vec"])
        for name in header["params"]:
            ckpt.params[name] = _read_array(fh, ckpt.param_vec[name])
        ckpt.tuner_meta = dict(header["tuners"])
        for name in sorted(ckpt.tuner_meta):
            arrays = {}
            for tag in ("shared", "src", "rec"):
                if ckpt.tuner_meta[name][tag] is None:
                    continue
                arrays[tag] = tuple(_read_array(fh, False) for _ in range(3))
            ckpt.tuner_arrays[name] = arrays
        ckpt.dense_meta = dict(header["dense"])
        for name in sorted(ckpt.dense_meta):
            vec = ckpt.param_vec.get(name, False)
            ckpt.dense_arrays[name] = tuple(_read_array(fh, vec) for _ in range(2))
        if header["gate"] is not None:
            w1 = _read_array(fh, False)
            b1 = _read_array(fh, True)
            w2 = _read_array(fh, False)
            b2 = _read_array(fh, True)
            ckpt.gate = GatingNet(
                w1=w1, b1=b1, w2=w2, b2=b2,
                temperature=header["gate"]["temperature"],
            )
    return ckpt
