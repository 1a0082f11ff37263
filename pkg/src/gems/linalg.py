"""Deterministic dense linear algebra.

Everything downstream (subspace bases, knowledge projectors, conflict
metrics) is built on the routines here.  The SVD is a one-sided Jacobi
with a fixed cyclic sweep order and a fixed sign convention, so repeated
runs on identical input bytes produce identical output bytes -- a
property LAPACK drivers do not promise across builds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "SvdResult",
    "svd",
    "truncated_basis",
    "covariance",
    "frobenius_norm",
    "flat_cosine",
    "as_matrix",
    "save_matrix",
    "load_matrix",
]

# Relative threshold below which a Jacobi column is treated as numerically
# zero and its direction replaced by an orthonormal fill.
_ZERO_SIGMA_REL = 1e-13


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return `a` as a finite 2-D float64 array."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={out.ndim}")
    if out.shape[0] < 1 or out.shape[1] < 1:
        raise ValueError(f"{name} must have positive shape, got {out.shape}")
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise ValueError(
            f"{name} contains a non-finite entry at ({bad[0]}, {bad[1]})"
        )
    return out


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD a = u @ diag(sigma) @ v.T with p = min(m, n) columns."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


@njit(cache=True)
def _jacobi_kernel(b, v, tol, max_sweeps):  # pragma: no cover - compiled
    rows, cols = b.shape
    for _ in range(max_sweeps):
        rotated = False
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(rows):
                    alpha += b[i, p] * b[i, p]
                    beta += b[i, q] * b[i, q]
                    gamma += b[i, p] * b[i, q]
                if alpha == 0.0 or beta == 0.0:
                    continue
                if abs(gamma) <= tol * math.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (
                    abs(zeta) + math.sqrt(1.0 + zeta * zeta)
                )
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for i in range(rows):
                    bp = b[i, p]
                    bq = b[i, q]
                    b[i, p] = c * bp - s * bq
                    b[i, q] = s * bp + c * bq
                for i in range(cols):
                    vp = v[i, p]
                    vq = v[i, q]
                    v[i, p] = c * vp - s * vq
                    v[i, q] = s * vp + c * vq
        if not rotated:
            break


def _orthonormal_fill(columns: np.ndarray, n_fill: int) -> np.ndarray:
    """Deterministically extend `columns` (orthonormal) by n_fill columns."""
    dim = columns.shape[0]
    basis = [columns[:, j] for j in range(columns.shape[1])]
    filled = []
    for i in range(dim):
        if len(filled) == n_fill:
            break
        cand = np.zeros(dim)
        cand[i] = 1.0
        for _ in range(2):  # twice-through Gram-Schmidt for stability
            for b in basis:
                cand = cand - (b @ cand) * b
        nrm = np.linalg.norm(cand)
        if nrm > 1e-6:
            cand = cand / nrm
            basis.append(cand)
            filled.append(cand)
    if len(filled) < n_fill:
        raise RuntimeError("orthonormal fill exhausted candidate vectors")
    return np.column_stack(filled)


def svd(a) -> SvdResult:
    """Deterministic thin SVD via cyclic one-sided Jacobi.

    Sign convention: in every left singular vector the entry of largest
    magnitude (first such index on ties) is non-negative.  Singular
    values are sorted non-increasing with a stable order.
    """
    a = as_matrix(a, "svd input")
    m, n = a.shape
    transposed = m < n
    work = a.T.copy() if transposed else a.copy()
    rows, cols = work.shape
    v = np.eye(cols)
    _jacobi_kernel(work, v, 1e-14, 64)

    norms = np.sqrt(np.sum(work * work, axis=0))
    order = np.argsort(-norms, kind="stable")
    sigma = norms[order]
    work = work[:, order]
    v = v[:, order]

    u = np.zeros((rows, cols))
    zero_tol = _ZERO_SIGMA_REL * (sigma[0] if sigma.size else 0.0)
    dead = []
    for j in range(cols):
        if sigma[j] > zero_tol and sigma[j] > 0.0:
            u[:, j] = work[:, j] / sigma[j]
        else:
            dead.append(j)
    if dead:
        live = np.delete(np.arange(cols), dead)
        fill = _orthonormal_fill(u[:, live], len(dead))
        for idx, j in enumerate(dead):
            u[:, j] = fill[:, idx]
            sigma[j] = norms[order[j]]  # keep the computed (tiny) value

    left, right = (v, u) if transposed else (u, v)
    # sign fix on the left factor, mirrored on the right
    for j in range(cols):
        k = int(np.argmax(np.abs(left[:, j])))
        if left[k, j] < 0.0:
            left[:, j] = -left[:, j]
            right[:, j] = -right[:, j]
    return SvdResult(u=left, sigma=sigma, v=right)


def truncated_basis(a, r: int) -> np.ndarray:
    """Top-r left singular vectors of `a` as an (m, r) orthonormal matrix."""
    a = as_matrix(a, "truncated_basis input")
    m, n = a.shape
    if not (1 <= r <= min(m, n)):
        raise ValueError(f"rank r={r} out of range for shape {a.shape}")
    return svd(a).u[:, :r].copy()


def covariance(f) -> np.ndarray:
    """f @ f.T for an (n, C) feature matrix, symmetrized exactly."""
    f = as_matrix(f, "covariance input")
    c = f @ f.T
    return 0.5 * (c + c.T)


def frobenius_norm(a) -> float:
    a = as_matrix(a, "frobenius_norm input")
    return float(np.sqrt(np.sum(a * a)))


def flat_cosine(a, b) -> float:
    """Cosine similarity of the two matrices flattened to vectors."""
    a = as_matrix(a, "flat_cosine lhs")
    b = as_matrix(b, "flat_cosine rhs")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    na = frobenius_norm(a)
    nb = frobenius_norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("degenerate gradient: zero-norm operand")
    return float(np.sum(a * b) / (na * nb))


# -- serialization: one-line JSON header + little-endian f32 payload --------


def save_matrix(a, fh) -> None:
    a = as_matrix(a, "save_matrix input")
    header = json.dumps(
        {"rows": a.shape[0], "cols": a.shape[1], "dtype": "f32"},
        separators=(",", ":"),
    )
    fh.write(header.encode("ascii") + b"\n")
    fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_matrix(fh) -> np.ndarray:
    line = bytearray()
    while True:
        ch = fh.read(1)
        if not ch:
            raise ValueError("truncated matrix header")
        if ch == b"\n":
            break
        line.extend(ch)
    header = json.loads(line.decode("ascii"))
    if header.get("dtype") != "f32":
        raise ValueError(f"unsupported dtype {header.get('dtype')!r}")
    rows, cols = int(header["rows"]), int(header["cols"])
    payload = fh.read(rows * cols * 4)
    if len(payload) != rows * cols * 4:
        raise ValueError("truncated matrix payload")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return data.reshape(rows, cols)
