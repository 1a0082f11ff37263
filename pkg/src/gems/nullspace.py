"""Knowledge projector: keep updates off the dominant pre-trained directions.

The projector is derived from the covariance of hidden states collected
on a general-domain probe corpus.  `complement` mode (the default)
removes the component of an update that lies along the top-k principal
directions; `literal` mode keeps only that component instead, and is
shipped for side-by-side comparison.  Updates are projected on their
input dimension, so inputs lying in the protected span produce
unchanged layer outputs.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, covariance, load_matrix, save_matrix, svd

__all__ = [
    "KnowledgeProjector",
    "ProbeCorpus",
    "collect_features",
    "build_projector",
    "project_update",
    "drift_probe",
    "save_projector",
    "load_projector",
]


@dataclass(frozen=True)
class KnowledgeProjector:
    basis_k: np.ndarray  # (n, k) top-k principal directions; k may be 0
    mode: str  # "complement" or "literal"
    projector: np.ndarray  # (n, n), cached once at build time
    energy_fraction: float

    @property
    def k(self) -> int:
        return self.basis_k.shape[1]

    @property
    def dim(self) -> int:
        return self.projector.shape[0]


@dataclass(frozen=True)
class ProbeCorpus:
    """Token sequences drawn from the synthetic general-domain generator."""

    inputs: tuple

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise ValueError("probe corpus must be non-empty")


def collect_features(model, corpus: ProbeCorpus, layer: str) -> np.ndarray:
    """Stack the layer's final-token input hidden state per probe instance.

    Returns an (n, C) matrix with one column per corpus instance.
    """
    columns = []
    for tokens in corpus.inputs:
        states = model.layer_input_states(tokens)
        if layer not in states:
            raise KeyError(f"model exposes no hidden state for layer {layer!r}")
        columns.append(states[layer])
    f = np.column_stack(columns)
    if f.shape[1] < f.shape[0]:
        warnings.warn(
            f"probe corpus has {f.shape[1]} instances for a {f.shape[0]}-dim "
            "layer; covariance may be rank-deficient",
            stacklevel=2,
        )
    return f


def build_projector(f, k_or_energy, mode: str = "complement") -> KnowledgeProjector:
    """SVD the feature covariance and cache the projection matrix.

    `k_or_energy`: an int picks the top-k directions explicitly; a float
    in (0, 1] picks the smallest k whose cumulative squared singular
    values reach that energy fraction.
    """
    if mode not in ("complement", "literal"):
        raise ValueError(f"unknown projector mode {mode!r}")
    f = as_matrix(f, "feature matrix")
    n = f.shape[0]
    cov = covariance(f)
    res = svd(cov)

    if isinstance(k_or_energy, (int, np.integer)) and not isinstance(k_or_energy, bool):
        k = int(k_or_energy)
        if not (0 <= k <= n):
            raise ValueError(f"k={k} out of range for dimension {n}")
        energy_fraction = 1.0
    else:
        frac = float(k_or_energy)
        if not (0.0 < frac <= 1.0):
            raise ValueError(f"energy fraction {frac} outside (0, 1]")
        sq = res.sigma**2
        total = sq.sum()
        if total == 0.0:
            k = 0
        else:
            cum = np.cumsum(sq) / total
            k = int(np.searchsorted(cum, frac - 1e-15) + 1)
        energy_fraction = frac

    basis_k = res.u[:, :k].copy()
    onto = basis_k @ basis_k.T
    projector = np.eye(n) - onto if mode == "complement" else onto
    return KnowledgeProjector(
        basis_k=basis_k,
        mode=mode,
        projector=projector,
        energy_fraction=energy_fraction,
    )


def project_update(p: KnowledgeProjector, delta_fused) -> np.ndarray:
    """Apply the cached projector on the input (right) dimension."""
    delta_fused = as_matrix(delta_fused, "fused update")
    if delta_fused.shape[1] != p.dim:
        raise ValueError(
            f"update input dimension {delta_fused.shape[1]} does not match "
            f"projector dimension {p.dim}"
        )
    return delta_fused @ p.projector


def drift_probe(model_before, model_after, corpus: ProbeCorpus) -> float:
    """Mean per-layer Frobenius distance of probe hidden states."""
    dists = []
    for tokens in corpus.inputs:
        before = model_before.layer_input_states(tokens)
        after = model_after.layer_input_states(tokens)
        for name in before:
            dists.append(float(np.linalg.norm(after[name] - before[name])))
    return float(np.mean(dists))


def save_projector(p: KnowledgeProjector, path, layer: str) -> None:
    sidecar = {
        "mode": p.mode,
        "k": p.k,
        "energy_fraction": p.energy_fraction,
        "layer": layer,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(sidecar, separators=(",", ":")).encode("ascii") + b"\n")
        # a k=0 basis has zero columns, which the matrix format cannot carry;
        # the cached projector is always written, the basis only when k > 0
        save_matrix(p.projector, fh)
        if p.k > 0:
            save_matrix(p.basis_k, fh)


def load_projector(path) -> tuple[KnowledgeProjector, str]:
    with open(path, "rb") as fh:
        line = fh.readline()
        sidecar = json.loads(line.decode("ascii"))
        projector = load_matrix(fh)
        k = int(sidecar["k"])
        if k > 0:
            basis_k = load_matrix(fh)
        else:
            basis_k = np.zeros((projector.shape[0], 0))
    p = KnowledgeProjector(
        basis_k=basis_k,
        mode=sidecar["mode"],
        projector=projector,
        energy_fraction=float(sidecar["energy_fraction"]),
    )
    return p, sidecar["layer"]
