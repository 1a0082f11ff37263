"""Training diagnostics: gradient conflict, intent flips, memory audit."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .linalg import flat_cosine, frobenius_norm

__all__ = [
    "ConflictRecord",
    "MemoryAudit",
    "conflict_coefficient",
    "conflict_heatmap",
    "intent_preservation",
    "memory_audit",
    "classify_layer",
]

LAYER_KINDS = ("query", "key", "value", "output", "ffn_up", "ffn_down", "other")

# fixed substring -> kind mapping for transformer-style layer names
_KIND_PATTERNS = (
    ("wq", "query"),
    ("wk", "key"),
    ("wv", "value"),
    ("wo", "output"),
    ("ffn_up", "ffn_up"),
    ("ffn_down", "ffn_down"),
)


def classify_layer(name: str) -> str:
    lowered = name.lower()
    for pat, kind in _KIND_PATTERNS:
        if pat in lowered:
            return kind
    return "other"


@dataclass(frozen=True)
class ConflictRecord:
    step: int
    layer_name: str
    layer_kind: str
    rho: float  # None-valued rho is never stored; degenerate pairs are skipped


@dataclass(frozen=True)
class MemoryAudit:
    m: int
    n: int
    r: int
    gems_weights: int
    gems_states: int
    lora_weights: int
    lora_states: int


def conflict_coefficient(g_src, g_rec) -> float:
    """rho = 1 - cosine of the flattened task gradients; in [0, 2]."""
    return 1.0 - flat_cosine(g_src, g_rec)


def try_conflict_coefficient(g_src, g_rec) -> float | None:
    """Like `conflict_coefficient`, but degenerate pairs yield None.

    A pair is degenerate when either operand has zero norm or carries a
    non-finite entry (the caller is expected to fail the step itself).
    """
    if not (np.all(np.isfinite(g_src)) and np.all(np.isfinite(g_rec))):
        return None
    if frobenius_norm(g_src) == 0.0 or frobenius_norm(g_rec) == 0.0:
        return None
    return conflict_coefficient(g_src, g_rec)


def conflict_heatmap(records: list[ConflictRecord], n_phases: int = 10) -> str:
    """Mean rho bucketed by layer kind and training-phase decile, as CSV.

    Phases split the observed step range into `n_phases` equal bins.
    Empty buckets are emitted blank.
    """
    if not records:
        raise ValueError("no conflict records to aggregate")
    lo = min(r.step for r in records)
    hi = max(r.step for r in records)
    span = max(hi - lo, 1)
    kinds = [k for k in LAYER_KINDS if any(r.layer_kind == k for r in records)]

    sums = {}
    counts = {}
    for r in records:
        phase = min(int((r.step - lo) * n_phases / (span + 1)), n_phases - 1)
        key = (r.layer_kind, phase)
        sums[key] = sums.get(key, 0.0) + r.rho
        counts[key] = counts.get(key, 0) + 1
    used_phases = sorted({p for (_, p) in sums})

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer_kind"] + [f"phase_{p}" for p in used_phases])
    for kind in kinds:
        row = [kind]
        for p in used_phases:
            key = (kind, p)
            row.append(
                f"{sums[key] / counts[key]:.10g}" if key in counts else ""
            )
        writer.writerow(row)
    return buf.getvalue()


def intent_preservation(model_base, model_tuned, probe_eval, decode) -> float:
    """Fraction of base-correct probes the tuned model gets wrong.

    `decode(model, record)` must return the top-1 predicted identifier for
    the record under fixed decoding settings; "correct" means it equals
    the record's ground-truth identifier.
    """
    base_correct = 0
    flipped = 0
    for record in probe_eval:
        if decode(model_base, record) != record.target:
            continue
        base_correct += 1
        if decode(model_tuned, record) != record.target:
            flipped += 1
    if base_correct == 0:
        raise ValueError(
            "intent preservation undefined: base model is correct on no probe record"
        )
    return flipped / base_correct


def memory_audit(m: int, n: int, r: int) -> MemoryAudit:
    """Closed-form weight/optimizer-state element counts vs a LoRA layer.

    Convention m <= n; arguments are swapped (with a warning) otherwise.
    The state count assumes one rank-r shared subspace plus two rank-r/2
    task subspaces, bases included.
    """
    if m > n:
        import warnings

        warnings.warn(f"memory_audit expects m <= n; swapping ({m}, {n})", stacklevel=2)
        m, n = n, m
    if r % 2 != 0:
        raise ValueError("memory audit requires an even shared rank r")
    return MemoryAudit(
        m=m,
        n=n,
        r=r,
        gems_weights=m * n,
        gems_states=2 * m * r + 4 * n * r,
        lora_weights=m * n + m * r + n * r,
        lora_states=2 * m * r + 2 * n * r,
    )


def live_state_elements(shared, src, rec) -> int:
    """Element count of the basis + moment arrays of three live states."""
    total = 0
    for state in (shared, src, rec):
        total += state.basis.size + state.m1.size + state.m2.size
    return total
