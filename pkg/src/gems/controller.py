"""The multi-subspace update controller.

`GemsOptimizer.step` consumes per-layer task gradients and applies one
fused update: three subspace tuners per 2-D layer (shared at rank r,
task-specific at rank ceil(r/2)), an adaptive gate over the two task
updates, and an optional knowledge projector on the input dimension.
1-D parameters (biases, norm gains) take a plain dense Adam step on the
shared gradient.

Ablation variants reuse the same step path with parts disabled:

    full          shared + task subspaces, gate, null-space projection
    shared_only   single shared subspace, projection kept
    no_nullspace  shared + task subspaces, gate, projection off
    subspace_only single shared subspace, projection off
    dense_joint   plain dense Adam on the summed gradient

Internally every 2-D layer is handled in a canonical orientation with
rows <= cols, so subspace bases always live on the smaller dimension
and the optimizer-state accounting matches the closed-form audit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import classify_layer, try_conflict_coefficient
from .gating import GatingNet, TaskBatchStats, gate_features, gate_forward
from .nullspace import KnowledgeProjector, project_update
from .subspace import (
    DenseAdamState,
    SubspaceState,
    dense_adam_step,
    step as subspace_step,
)

__all__ = ["GemsOptimizer", "StepReport", "NumericError", "VARIANTS", "fuse"]

VARIANTS = ("full", "shared_only", "no_nullspace", "subspace_only", "dense_joint")


class NumericError(RuntimeError):
    """A non-finite value reached the update path."""


@dataclass
class StepReport:
    step: int
    loss_src: float
    loss_rec: float
    alpha_src: float
    alpha_rec: float
    raw_rho: dict = field(default_factory=dict)  # layer -> rho of task grads
    component_rho: dict = field(default_factory=dict)  # layer -> rho of task deltas
    # layer -> rho of the per-task applied updates: shared + gated task
    # delta under the multi variants, per-task dense Adam deltas under
    # dense_joint; empty for single-subspace variants
    applied_rho: dict = field(default_factory=dict)
    update_norms: dict = field(default_factory=dict)
    wall_ms: float = 0.0

    @property
    def mean_rho(self) -> float:
        return float(np.mean(list(self.raw_rho.values()))) if self.raw_rho else math.nan

    @property
    def max_rho(self) -> float:
        return float(max(self.raw_rho.values())) if self.raw_rho else math.nan

    @property
    def mean_component_rho(self) -> float:
        vals = list(self.component_rho.values())
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mean_applied_rho(self) -> float:
        vals = list(self.applied_rho.values())
        return float(np.mean(vals)) if vals else math.nan


def fuse(delta_shared, delta_src, delta_rec, alpha_src, alpha_rec):
    """Delta_shared always enters with weight 1; task deltas are gated."""
    if not (delta_shared.shape == delta_src.shape == delta_rec.shape):
        raise ValueError("fused deltas must share one shape")
    if alpha_src < 0 or alpha_rec < 0 or abs(alpha_src + alpha_rec - 1.0) > 1e-9:
        raise ValueError("gate weights must lie on the simplex")
    return delta_shared + alpha_src * delta_src + alpha_rec * delta_rec


@dataclass
class _LayerTuner:
    shared: SubspaceState
    src: SubspaceState | None
    rec: SubspaceState | None
    transpose: bool  # stored layer was transposed into rows <= cols


class GemsOptimizer:
    def __init__(
        self,
        params: dict[str, np.ndarray],
        *,
        rank: int = 8,
        refresh_every: int = 50,
        scale: float = 2.0,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        gate: GatingNet | None = None,
        variant: str = "full",
        projectors: dict[str, KnowledgeProjector] | None = None,
        reset_moments_on_refresh: bool = False,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        if variant in ("full", "no_nullspace") and gate is None:
            raise ValueError(f"variant {variant!r} requires a gating net")
        self.variant = variant
        self.gate = gate
        self.projectors = dict(projectors or {})
        self.hyper = dict(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        self.rank = rank
        self.scale = scale
        self.refresh_every = refresh_every
        self.tuners: dict[str, _LayerTuner] = {}
        self.dense: dict[str, DenseAdamState] = {}
        self.step_count = 0
        self.collect_components = False
        # layer -> (delta_shared, delta_src, delta_rec) after projection,
        # or a bare dense delta; populated only when collect_components is set
        self.last_components: dict = {}

        multi = variant in ("full", "no_nullspace")
        task_rank = math.ceil(rank / 2)
        # dense_joint keeps shadow per-task Adam states on 2-D layers so
        # the conflict of its per-task applied components is observable
        self.task_probes: dict[str, tuple] = {}
        for name, value in params.items():
            if variant == "dense_joint" or value.ndim != 2:
                self.dense[name] = DenseAdamState.fresh(value.shape, **self.hyper)
                if variant == "dense_joint" and value.ndim == 2:
                    self.task_probes[name] = (
                        DenseAdamState.fresh(value.shape, **self.hyper),
                        DenseAdamState.fresh(value.shape, **self.hyper),
                    )
                continue
            m, n = value.shape
            transpose = m > n
            if transpose:
                m, n = n, m
            common = dict(
                refresh_every=refresh_every,
                scale=scale,
                reset_moments_on_refresh=reset_moments_on_refresh,
                **self.hyper,
            )
            self.tuners[name] = _LayerTuner(
                shared=SubspaceState.fresh(m, n, rank, **common),
                src=SubspaceState.fresh(m, n, task_rank, **common) if multi else None,
                rec=SubspaceState.fresh(m, n, task_rank, **common) if multi else None,
                transpose=transpose,
            )

    # ------------------------------------------------------------------

    def _canon(self, name: str, g: np.ndarray) -> np.ndarray:
        return g.T if self.tuners[name].transpose else g

    def _uncanon(self, name: str, delta: np.ndarray) -> np.ndarray:
        return delta.T if self.tuners[name].transpose else delta

    def _apply_projector(self, name: str, delta: np.ndarray) -> np.ndarray:
        """Project on the dimension the layer consumes its input on.

        Block-internal layers compute `a @ W`, so that is the rows of the
        stored layout; the tied output head computes `h @ embed.T`, so
        there it is the columns.
        """
        proj = self.projectors.get(name)
        if proj is None or self.variant in ("no_nullspace", "subspace_only",
                                            "dense_joint"):
            return delta
        if delta.shape[0] == proj.dim:
            return project_update(proj, delta.T).T
        if delta.shape[1] == proj.dim:
            return project_update(proj, delta)
        raise ValueError(
            f"projector dimension {proj.dim} matches neither dimension "
            f"{delta.shape} of layer {name!r}"
        )

    def step(
        self,
        params: dict[str, np.ndarray],
        g_src: dict[str, np.ndarray],
        g_rec: dict[str, np.ndarray],
        stats: TaskBatchStats,
    ) -> tuple[dict[str, np.ndarray], StepReport]:
        """One fused update over every parameter; returns fresh params.

        Raises NumericError when a non-finite update appears; in that
        case neither the caller's params nor the optimizer state are
        modified.
        """
        multi = self.variant in ("full", "no_nullspace")
        if multi:
            z = gate_features(stats)
            alpha_src, alpha_rec = gate_forward(self.gate, z)
        else:
            alpha_src = alpha_rec = 0.5

        report = StepReport(
            step=self.step_count,
            loss_src=stats.loss_src,
            loss_rec=stats.loss_rec,
            alpha_src=alpha_src,
            alpha_rec=alpha_rec,
        )

        new_params: dict[str, np.ndarray] = {}
        new_tuners: dict[str, _LayerTuner] = {}
        new_dense: dict[str, DenseAdamState] = {}
        new_probes: dict[str, tuple] = {}
        components: dict = {}
        for name in params:
            gs, gr = g_src[name], g_rec[name]
            if not (np.all(np.isfinite(gs)) and np.all(np.isfinite(gr))):
                raise NumericError(
                    f"non-finite gradient for layer {name!r} at step "
                    f"{self.step_count}"
                )
            g_shared = gs + gr
            if name in self.dense:
                state, delta = dense_adam_step(self.dense[name], g_shared)
                new_dense[name] = state
                if self.collect_components:
                    components[name] = delta
                if gs.ndim == 2:
                    rho = try_conflict_coefficient(gs, gr)
                    if rho is not None:
                        report.raw_rho[name] = rho
                if name in self.task_probes:
                    ps, pr = self.task_probes[name]
                    ps, d_src = dense_adam_step(ps, gs)
                    pr, d_rec = dense_adam_step(pr, gr)
                    new_probes[name] = (ps, pr)
                    applied = try_conflict_coefficient(d_src, d_rec)
                    if applied is not None:
                        report.applied_rho[name] = applied
            else:
                tuner = self.tuners[name]
                rho = try_conflict_coefficient(gs, gr)
                if rho is not None:
                    report.raw_rho[name] = rho

                shared_state, upd_shared = subspace_step(
                    tuner.shared, self._canon(name, g_shared), "shared"
                )
                if multi:
                    src_state, upd_src = subspace_step(
                        tuner.src, self._canon(name, gs), "src"
                    )
                    rec_state, upd_rec = subspace_step(
                        tuner.rec, self._canon(name, gr), "rec"
                    )
                    comp = try_conflict_coefficient(upd_src.delta, upd_rec.delta)
                    if comp is not None:
                        report.component_rho[name] = comp
                    applied = try_conflict_coefficient(
                        upd_shared.delta + alpha_src * upd_src.delta,
                        upd_shared.delta + alpha_rec * upd_rec.delta,
                    )
                    if applied is not None:
                        report.applied_rho[name] = applied
                    delta = fuse(
                        upd_shared.delta, upd_src.delta, upd_rec.delta,
                        alpha_src, alpha_rec,
                    )
                else:
                    src_state = rec_state = None
                    delta = upd_shared.delta
                delta = self._uncanon(name, delta)
                if not np.all(np.isfinite(delta)):
                    raise NumericError(
                        f"non-finite update for layer {name!r} at step "
                        f"{self.step_count}"
                    )
                delta = self._apply_projector(name, delta)
                if self.collect_components:
                    def _proc(d, name=name):
                        return self._apply_projector(name, self._uncanon(name, d))

                    if multi:
                        components[name] = (
                            _proc(upd_shared.delta),
                            _proc(upd_src.delta),
                            _proc(upd_rec.delta),
                        )
                    else:
                        components[name] = _proc(upd_shared.delta)
                new_tuners[name] = _LayerTuner(
                    shared=shared_state, src=src_state, rec=rec_state,
                    transpose=tuner.transpose,
                )

            if not np.all(np.isfinite(delta)):
                raise NumericError(
                    f"non-finite update for layer {name!r} at step {self.step_count}"
                )
            report.update_norms[name] = float(np.linalg.norm(delta))
            new_params[name] = params[name] + delta

        self.tuners.update(new_tuners)
        self.dense.update(new_dense)
        self.task_probes.update(new_probes)
        if self.collect_components:
            self.last_components = components
        self.step_count += 1
        return new_params, report

    def conflict_records(self, report: StepReport, which: str = "raw"):
        from .diagnostics import ConflictRecord

        source = report.raw_rho if which == "raw" else report.component_rho
        return [
            ConflictRecord(
                step=report.step,
                layer_name=name,
                layer_kind=classify_layer(name),
                rho=rho,
            )
            for name, rho in sorted(source.items())
        ]
