"""Adaptive gate over the two task-specific subspace updates.

A two-layer ReLU perceptron maps three task-balance ratios (loss,
gradient norm, sample count) to logits, and a temperature-scaled
softmax turns the logits into simplex weights (alpha_src, alpha_rec).
The gate is deterministic from its parameters; an optional SPSA update
rule trains those parameters from paired trial evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TaskBatchStats",
    "GatingNet",
    "gate_features",
    "gate_forward",
    "gate_update",
]

_EPS0 = 1e-12  # division guard in the ratio features


@dataclass(frozen=True)
class TaskBatchStats:
    loss_src: float
    loss_rec: float
    gradnorm_src: float
    gradnorm_rec: float
    count_src: int
    count_rec: int

    def __post_init__(self):
        if self.count_src + self.count_rec < 1:
            raise ValueError("batch must contain at least one sample")


@dataclass
class GatingNet:
    """phi = {w1, b1, w2, b2} plus the softmax temperature tau."""

    w1: np.ndarray  # (h, 3)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (2, h)
    b2: np.ndarray  # (2,)
    temperature: float = 1.0

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = 8, temperature: float = 1.0):
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        return cls(
            w1=rng.standard_normal((hidden, 3)) * 0.5,
            b1=np.zeros(hidden),
            w2=rng.standard_normal((2, hidden)) * 0.5,
            b2=np.zeros(2),
            temperature=temperature,
        )

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]


def gate_features(stats: TaskBatchStats) -> np.ndarray:
    """z = [loss ratio, gradient-norm ratio, sample-count ratio], each in [0,1]."""
    s_loss = stats.loss_src / (stats.loss_src + stats.loss_rec + _EPS0)
    s_grad = stats.gradnorm_src / (stats.gradnorm_src + stats.gradnorm_rec + _EPS0)
    s_sample = stats.count_src / (stats.count_src + stats.count_rec)
    return np.array([s_loss, s_grad, s_sample])


def gate_forward(net: GatingNet, z) -> tuple[float, float]:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (3,):
        raise ValueError(f"gate feature vector must have length 3, got {z.shape}")
    h = np.maximum(net.w1 @ z + net.b1, 0.0)
    o = net.w2 @ h + net.b2
    scaled = o / net.temperature
    scaled = scaled - scaled.max()  # stabilized softmax
    e = np.exp(scaled)
    alpha = e / e.sum()
    return float(alpha[0]), float(alpha[1])


def gate_update(
    net: GatingNet,
    z,
    trial,
    rng: np.random.Generator,
    delta: float = 0.05,
    lr: float = 0.05,
) -> GatingNet:
    """One SPSA step on phi.

    `trial(alpha_src, alpha_rec)` evaluates the combined post-step loss
    under candidate gate weights.  The logits are perturbed by +/-delta
    along a Rademacher direction, the logit gradient is estimated from
    the two trial losses, and it is backpropagated through the net
    analytically for a single SGD step.
    """
    z = np.asarray(z, dtype=np.float64)
    h_pre = net.w1 @ z + net.b1
    h = np.maximum(h_pre, 0.0)
    o = net.w2 @ h + net.b2

    direction = rng.choice([-1.0, 1.0], size=2)

    def alphas(logits):
        s = logits / net.temperature
        s = s - s.max()
        e = np.exp(s)
        a = e / e.sum()
        return float(a[0]), float(a[1])

    loss_plus = trial(*alphas(o + delta * direction))
    loss_minus = trial(*alphas(o - delta * direction))
    if loss_plus == loss_minus:
        return net

    g_o = (loss_plus - loss_minus) / (2.0 * delta) * direction
    g_w2 = np.outer(g_o, h)
    g_b2 = g_o
    g_h = net.w2.T @ g_o
    g_pre = g_h * (h_pre > 0.0)
    g_w1 = np.outer(g_pre, z)
    g_b1 = g_pre
    return GatingNet(
        w1=net.w1 - lr * g_w1,
        b1=net.b1 - lr * g_b1,
        w2=net.w2 - lr * g_w2,
        b2=net.b2 - lr * g_b2,
        temperature=net.temperature,
    )
