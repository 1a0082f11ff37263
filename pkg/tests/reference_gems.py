"""Independent dense reference for the fused multi-subspace update loop.

Written against the documented update rules only, using numpy's LAPACK
SVD plus the documented sign convention (largest-|entry| coordinate of
each left singular vector non-negative, non-increasing singular values).
Everything is straightforward dense arithmetic so it can serve as an
oracle for the production optimizer.
"""

import math

import numpy as np


def ref_basis(g, r):
    u, s, _ = np.linalg.svd(np.asarray(g, dtype=np.float64), full_matrices=False)
    u = u[:, :r].copy()
    for j in range(r):
        k = int(np.argmax(np.abs(u[:, j])))
        if u[k, j] < 0.0:
            u[:, j] = -u[:, j]
    return u


class RefSubspace:
    """Rank-r Adam in the left singular subspace of the gradient."""

    def __init__(self, m, n, r, refresh_every, scale, lr, beta1, beta2, eps):
        self.basis = np.zeros((m, r))
        self.basis[:r, :r] = np.eye(r)
        self.m1 = np.zeros((r, n))
        self.m2 = np.zeros((r, n))
        self.t = 0
        self.r = r
        self.refresh_every = refresh_every
        self.scale = scale
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, g):
        if self.t % self.refresh_every == 0:
            self.basis = ref_basis(g, self.r)
        g_r = self.basis.T @ g
        self.t += 1
        self.m1 = self.beta1 * self.m1 + (1 - self.beta1) * g_r
        self.m2 = self.beta2 * self.m2 + (1 - self.beta2) * g_r * g_r
        m1_hat = self.m1 / (1 - self.beta1**self.t)
        m2_hat = self.m2 / (1 - self.beta2**self.t)
        delta_r = -self.lr * m1_hat / (np.sqrt(m2_hat) + self.eps)
        return self.scale * (self.basis @ delta_r)


def ref_gate(w1, b1, w2, b2, tau, z):
    h = np.maximum(w1 @ np.asarray(z, dtype=np.float64) + b1, 0.0)
    o = (w2 @ h + b2) / tau
    o = o - o.max()
    e = np.exp(o)
    a = e / e.sum()
    return float(a[0]), float(a[1])


def ref_features(loss_src, loss_rec, gn_src, gn_rec, n_src, n_rec, eps0=1e-12):
    return np.array(
        [
            loss_src / (loss_src + loss_rec + eps0),
            gn_src / (gn_src + gn_rec + eps0),
            n_src / (n_src + n_rec),
        ]
    )


class ReferenceGems:
    """Dense reference of the full fused loop for square 2-D layers.

    projectors maps layer name to an (m, m) matrix applied on the input
    dimension of the update; layers compute `a @ W`, so that is the rows.
    """

    def __init__(self, params, rank, refresh_every, scale, lr, beta1, beta2,
                 eps, gate, projectors=None):
        self.gate = gate  # (w1, b1, w2, b2, tau) tuple
        self.projectors = projectors or {}
        task_rank = math.ceil(rank / 2)
        self.layers = {}
        for name, w in params.items():
            m, n = w.shape
            args = (refresh_every, scale, lr, beta1, beta2, eps)
            self.layers[name] = (
                RefSubspace(m, n, rank, *args),
                RefSubspace(m, n, task_rank, *args),
                RefSubspace(m, n, task_rank, *args),
            )

    def step(self, params, g_src, g_rec, stats):
        z = ref_features(*stats)
        a_src, a_rec = ref_gate(*self.gate, z)
        out = {}
        for name, (shared, src, rec) in self.layers.items():
            d = (
                shared.step(g_src[name] + g_rec[name])
                + a_src * src.step(g_src[name])
                + a_rec * rec.step(g_rec[name])
            )
            p = self.projectors.get(name)
            if p is not None:
                d = p @ d
            out[name] = params[name] + d
        return out


def ref_scalar_adam(grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Textbook Adam on a scalar sequence; returns the list of deltas."""
    m1 = 0.0
    m2 = 0.0
    deltas = []
    for t, g in enumerate(grads, start=1):
        m1 = beta1 * m1 + (1 - beta1) * g
        m2 = beta2 * m2 + (1 - beta2) * g * g
        m1h = m1 / (1 - beta1**t)
        m2h = m2 / (1 - beta2**t)
        deltas.append(-lr * m1h / (math.sqrt(m2h) + eps))
    return deltas
