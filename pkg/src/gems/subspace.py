"""Low-rank Adam in a periodically refreshed singular subspace.

One `SubspaceState` per (layer, subspace).  The raw loss gradient is
projected onto the current top-r left-singular basis, Adam moments are
kept in subspace coordinates, and the resulting step is mapped back to
the full parameter shape scaled by `scale`.

Sign convention: the state consumes the raw gradient of the loss and
applies the single descent negation inside `adam_step`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .linalg import as_matrix, truncated_basis

__all__ = [
    "SubspaceState",
    "SubspaceUpdate",
    "DenseAdamState",
    "maybe_refresh_basis",
    "project",
    "adam_step",
    "project_back",
    "step",
    "dense_adam_step",
]


@dataclass
class SubspaceState:
    """Basis + Adam moments for one layer/subspace pair.

    `basis` is (m, r) orthonormal; moments are (r, n).  `step` counts
    completed adam steps and drives both bias correction and the refresh
    schedule (refresh fires when step % refresh_every == 0).
    """

    basis: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    step: int
    rank: int
    refresh_every: int
    scale: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    reset_moments_on_refresh: bool = False
    freeze_basis: bool = False  # test hook: pin the basis, skip refreshes

    @classmethod
    def fresh(cls, m: int, n: int, rank: int, refresh_every: int, **hyper):
        if not (1 <= rank <= min(m, n)):
            raise ValueError(f"rank {rank} out of range for layer ({m}, {n})")
        if refresh_every < 1:
            raise ValueError("refresh_every must be positive")
        basis = np.zeros((m, rank))
        basis[:rank, :rank] = np.eye(rank)  # placeholder until first refresh
        return cls(
            basis=basis,
            m1=np.zeros((rank, n)),
            m2=np.zeros((rank, n)),
            step=0,
            rank=rank,
            refresh_every=refresh_every,
            **hyper,
        )


@dataclass(frozen=True)
class SubspaceUpdate:
    """Full-shape delta produced by one subspace step."""

    delta: np.ndarray
    source_tag: str  # one of {"shared", "src", "rec"}


def maybe_refresh_basis(state: SubspaceState, g) -> SubspaceState:
    """Refresh the basis from the current gradient on schedule steps."""
    if state.freeze_basis or state.step % state.refresh_every != 0:
        return state
    g = as_matrix(g, "gradient")
    new_state = replace(state, basis=truncated_basis(g, state.rank))
    if state.reset_moments_on_refresh:
        new_state = replace(
            new_state, m1=np.zeros_like(state.m1), m2=np.zeros_like(state.m2)
        )
    return new_state


def project(state: SubspaceState, g) -> np.ndarray:
    g = as_matrix(g, "gradient")
    return state.basis.T @ g


def adam_step(state: SubspaceState, g_proj) -> tuple[SubspaceState, np.ndarray]:
    """One Adam step in subspace coordinates; returns (state, delta_r)."""
    g_proj = as_matrix(g_proj, "projected gradient")
    t = state.step + 1
    m1 = state.beta1 * state.m1 + (1.0 - state.beta1) * g_proj
    m2 = state.beta2 * state.m2 + (1.0 - state.beta2) * (g_proj * g_proj)
    m1_hat = m1 / (1.0 - state.beta1**t)
    m2_hat = m2 / (1.0 - state.beta2**t)
    delta_r = -state.lr * m1_hat / (np.sqrt(m2_hat) + state.eps)
    return replace(state, m1=m1, m2=m2, step=t), delta_r


def project_back(
    state: SubspaceState, delta_r, source_tag: str = "shared"
) -> SubspaceUpdate:
    delta_r = as_matrix(delta_r, "subspace delta")
    return SubspaceUpdate(
        delta=state.scale * (state.basis @ delta_r), source_tag=source_tag
    )


def step(
    state: SubspaceState, g, source_tag: str = "shared"
) -> tuple[SubspaceState, SubspaceUpdate]:
    """refresh -> project -> adam -> back-project, in that order."""
    state = maybe_refresh_basis(state, g)
    g_proj = project(state, g)
    state, delta_r = adam_step(state, g_proj)
    return state, project_back(state, delta_r, source_tag)


# -- plain dense Adam, used for 1-D parameters and the dense-joint variant --


@dataclass
class DenseAdamState:
    m1: np.ndarray
    m2: np.ndarray
    step: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, shape, **hyper):
        return cls(m1=np.zeros(shape), m2=np.zeros(shape), step=0, **hyper)


def dense_adam_step(state: DenseAdamState, g) -> tuple[DenseAdamState, np.ndarray]:
    g = np.asarray(g, dtype=np.float64)
    t = state.step + 1
    m1 = state.beta1 * state.m1 + (1.0 - state.beta1) * g
    m2 = state.beta2 * state.m2 + (1.0 - state.beta2) * (g * g)
    m1_hat = m1 / (1.0 - state.beta1**t)
    m2_hat = m2 / (1.0 - state.beta2**t)
    delta = -state.lr * m1_hat / (np.sqrt(m2_hat) + state.eps)
    return DenseAdamState(
        m1=m1, m2=m2, step=t,
        lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
    ), delta
