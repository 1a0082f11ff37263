"""Tiny decoder-only transformer with in-repo reverse-mode gradients.

The architecture is fixed (token embedding, learned positions, a stack
of pre-norm attention/FFN blocks, output head tied to the embedding),
which keeps manual backpropagation tractable and lets every layer be
checked against central finite differences.  All math is float64 and
deterministic given the init seed and input tokens.

Every 2-D weight is registered under a stable name ("embed", "pos",
"block0.attn.wq", "block0.ffn_up.w", ...) so the subspace tuners and
the conflict diagnostics can address layers individually.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

__all__ = ["ModelConfig", "ToyModel"]

_LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 2
    n_blocks: int = 2
    d_ff: int = 0  # 0 -> 4 * d_model
    ctx_len: int = 64

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def ff_dim(self) -> int:
        return self.d_ff if self.d_ff > 0 else 4 * self.d_model


def _layernorm_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(0)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    return dx, dg, db


class ToyModel:
    """Backbone for the desk-scale generative search & recommendation runs."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.params: dict[str, np.ndarray] = {}
        if rng is not None:
            self._init_params(rng)

    def _init_params(self, rng):
        c = self.config
        d, v, f = c.d_model, c.vocab_size, c.ff_dim
        scale = 0.05
        p = self.params
        p["embed"] = rng.standard_normal((v, d)) * scale
        p["pos"] = rng.standard_normal((c.ctx_len, d)) * scale
        for i in range(c.n_blocks):
            pre = f"block{i}"
            for nm in ("wq", "wk", "wv", "wo"):
                p[f"{pre}.attn.{nm}"] = rng.standard_normal((d, d)) * scale
            p[f"{pre}.ffn_up.w"] = rng.standard_normal((d, f)) * scale
            p[f"{pre}.ffn_up.b"] = np.zeros(f)
            p[f"{pre}.ffn_down.w"] = rng.standard_normal((f, d)) * scale
            p[f"{pre}.ffn_down.b"] = np.zeros(d)
            for ln in ("ln1", "ln2"):
                p[f"{pre}.{ln}.g"] = np.ones(d)
                p[f"{pre}.{ln}.b"] = np.zeros(d)
        p["ln_f.g"] = np.ones(d)
        p["ln_f.b"] = np.zeros(d)

    def clone(self) -> "ToyModel":
        other = ToyModel(self.config)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def matrix_layer_names(self) -> list[str]:
        return sorted(k for k, v in self.params.items() if v.ndim == 2)

    def hidden_layer_names(self) -> list[str]:
        """Linear layers whose input is a hidden activation.

        Covers the block-internal layers plus the tied output head: the
        embedding matrix doubles as the unembedding, so its input-side
        activation is the final post-norm hidden state.
        """
        names = []
        for i in range(self.config.n_blocks):
            pre = f"block{i}"
            names.extend(f"{pre}.attn.{nm}" for nm in ("wq", "wk", "wv", "wo"))
            names.extend((f"{pre}.ffn_up.w", f"{pre}.ffn_down.w"))
        names.append("embed")
        return names

    # -- forward ------------------------------------------------------------

    def _forward(self, tokens):
        """Run the network and keep every intermediate needed for backward."""
        c = self.config
        p = self.params
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        B, L = tokens.shape
        if L > c.ctx_len:
            raise ValueError(f"sequence length {L} exceeds context {c.ctx_len}")
        h = c.n_heads
        dh = c.d_model // h

        x = p["embed"][tokens] + p["pos"][:L]
        causal = np.triu(np.full((L, L), -1e30), k=1)

        cache = {"tokens": tokens, "x0": x, "blocks": []}
        for i in range(c.n_blocks):
            pre = f"block{i}"
            bc = {"x_in": x}
            a, bc["ln1"] = _layernorm_fwd(x, p[f"{pre}.ln1.g"], p[f"{pre}.ln1.b"])
            bc["a"] = a
            q = a @ p[f"{pre}.attn.wq"]
            k = a @ p[f"{pre}.attn.wk"]
            v = a @ p[f"{pre}.attn.wv"]
            qh = q.reshape(B, L, h, dh).transpose(0, 2, 1, 3)
            kh = k.reshape(B, L, h, dh).transpose(0, 2, 1, 3)
            vh = v.reshape(B, L, h, dh).transpose(0, 2, 1, 3)
            scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh) + causal
            scores -= scores.max(-1, keepdims=True)
            e = np.exp(scores)
            att = e / e.sum(-1, keepdims=True)
            ctx = att @ vh
            ctx_flat = ctx.transpose(0, 2, 1, 3).reshape(B, L, c.d_model)
            attn_out = ctx_flat @ p[f"{pre}.attn.wo"]
            x = x + attn_out
            bc.update(qh=qh, kh=kh, vh=vh, att=att, ctx_flat=ctx_flat)

            bc["x_mid"] = x
            a2, bc["ln2"] = _layernorm_fwd(x, p[f"{pre}.ln2.g"], p[f"{pre}.ln2.b"])
            bc["a2"] = a2
            up = a2 @ p[f"{pre}.ffn_up.w"] + p[f"{pre}.ffn_up.b"]
            relu = np.maximum(up, 0.0)
            x = x + relu @ p[f"{pre}.ffn_down.w"] + p[f"{pre}.ffn_down.b"]
            bc.update(up=up, relu=relu)
            cache["blocks"].append(bc)

        hfin, cache["ln_f"] = _layernorm_fwd(x, p["ln_f.g"], p["ln_f.b"])
        cache["hfin"] = hfin
        logits = hfin @ p["embed"].T
        return logits, cache

    def logits(self, tokens) -> np.ndarray:
        return self._forward(tokens)[0]

    def token_logprobs(self, tokens) -> np.ndarray:
        """Log-softmax over the vocabulary at every position; (B, L, V)."""
        logits, _ = self._forward(tokens)
        m = logits.max(-1, keepdims=True)
        lse = m + np.log(np.exp(logits - m).sum(-1, keepdims=True))
        return logits - lse

    # -- loss + gradients ---------------------------------------------------

    def loss_and_grads(self, tokens, targets, mask):
        """Teacher-forced NLL over masked positions, averaged per sample.

        tokens, targets, mask: (B, L) arrays.  Position (b, l) contributes
        -log P(targets[b, l] | tokens[b, :l+1]) when mask[b, l] is set.
        Returns (loss, grads) with grads keyed like `self.params`.
        """
        tokens = np.asarray(tokens, dtype=np.int64)
        targets = np.asarray(targets, dtype=np.int64)
        mask = np.asarray(mask, dtype=np.float64)
        if tokens.ndim == 1:
            tokens, targets, mask = tokens[None], targets[None], mask[None]
        B, L = tokens.shape

        logits, cache = self._forward(tokens)
        m = logits.max(-1, keepdims=True)
        e = np.exp(logits - m)
        z = e.sum(-1, keepdims=True)
        logprobs = logits - m - np.log(z)
        picked = np.take_along_axis(logprobs, targets[..., None], axis=-1)[..., 0]
        loss = float(-(picked * mask).sum() / B)

        probs = e / z
        dlogits = probs * mask[..., None]
        np.add.at(dlogits, (np.arange(B)[:, None], np.arange(L)[None, :], targets),
                  -mask)
        dlogits /= B
        return loss, self._backward(dlogits, cache)

    def _backward(self, dlogits, cache):
        c = self.config
        p = self.params
        tokens = cache["tokens"]
        B, L = tokens.shape
        h = c.n_heads
        dh = c.d_model // h
        grads = {k: np.zeros_like(v) for k, v in p.items()}

        hfin = cache["hfin"]
        grads["embed"] += dlogits.reshape(-1, p["embed"].shape[0]).T @ hfin.reshape(
            -1, c.d_model
        )
        dhfin = dlogits @ p["embed"]
        dx, grads["ln_f.g"], grads["ln_f.b"] = _layernorm_bwd(dhfin, cache["ln_f"])

        for i in reversed(range(c.n_blocks)):
            pre = f"block{i}"
            bc = cache["blocks"][i]

            # FFN branch
            drelu_out = dx  # gradient on (relu @ w_down + b_down)
            grads[f"{pre}.ffn_down.b"] += drelu_out.reshape(-1, c.d_model).sum(0)
            grads[f"{pre}.ffn_down.w"] += (
                bc["relu"].reshape(-1, c.ff_dim).T @ drelu_out.reshape(-1, c.d_model)
            )
            dup = (drelu_out @ p[f"{pre}.ffn_down.w"].T) * (bc["up"] > 0.0)
            grads[f"{pre}.ffn_up.b"] += dup.reshape(-1, c.ff_dim).sum(0)
            grads[f"{pre}.ffn_up.w"] += (
                bc["a2"].reshape(-1, c.d_model).T @ dup.reshape(-1, c.ff_dim)
            )
            da2 = dup @ p[f"{pre}.ffn_up.w"].T
            dx_mid, dg2, db2 = _layernorm_bwd(da2, bc["ln2"])
            grads[f"{pre}.ln2.g"] += dg2
            grads[f"{pre}.ln2.b"] += db2
            dx = dx + dx_mid  # residual

            # attention branch
            dattn_out = dx
            grads[f"{pre}.attn.wo"] += (
                bc["ctx_flat"].reshape(-1, c.d_model).T
                @ dattn_out.reshape(-1, c.d_model)
            )
            dctx_flat = dattn_out @ p[f"{pre}.attn.wo"].T
            dctx = dctx_flat.reshape(B, L, h, dh).transpose(0, 2, 1, 3)
            datt = dctx @ bc["vh"].transpose(0, 1, 3, 2)
            dvh = bc["att"].transpose(0, 1, 3, 2) @ dctx
            att = bc["att"]
            dscores = att * (datt - (datt * att).sum(-1, keepdims=True))
            dscores /= np.sqrt(dh)
            dqh = dscores @ bc["kh"]
            dkh = dscores.transpose(0, 1, 3, 2) @ bc["qh"]
            dq = dqh.transpose(0, 2, 1, 3).reshape(B, L, c.d_model)
            dk = dkh.transpose(0, 2, 1, 3).reshape(B, L, c.d_model)
            dv = dvh.transpose(0, 2, 1, 3).reshape(B, L, c.d_model)
            a_flat = bc["a"].reshape(-1, c.d_model)
            grads[f"{pre}.attn.wq"] += a_flat.T @ dq.reshape(-1, c.d_model)
            grads[f"{pre}.attn.wk"] += a_flat.T @ dk.reshape(-1, c.d_model)
            grads[f"{pre}.attn.wv"] += a_flat.T @ dv.reshape(-1, c.d_model)
            da = (
                dq @ p[f"{pre}.attn.wq"].T
                + dk @ p[f"{pre}.attn.wk"].T
                + dv @ p[f"{pre}.attn.wv"].T
            )
            dx_in, dg1, db1 = _layernorm_bwd(da, bc["ln1"])
            grads[f"{pre}.ln1.g"] += dg1
            grads[f"{pre}.ln1.b"] += db1
            dx = dx + dx_in

        grads["pos"][:L] += dx.sum(0)
        np.add.at(grads["embed"], tokens, dx)
        return grads

    # -- probe instrumentation ---------------------------------------------

    def layer_input_states(self, tokens) -> dict[str, np.ndarray]:
        """Final-token input hidden state per hidden linear layer."""
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        if tokens.shape[0] != 1:
            raise ValueError("layer_input_states expects a single sequence")
        _, cache = self._forward(tokens)
        last = tokens.shape[1] - 1
        states = {}
        for i in range(self.config.n_blocks):
            pre = f"block{i}"
            bc = cache["blocks"][i]
            a_last = bc["a"][0, last]
            for nm in ("wq", "wk", "wv"):
                states[f"{pre}.attn.{nm}"] = a_last.copy()
            states[f"{pre}.attn.wo"] = bc["ctx_flat"][0, last].copy()
            states[f"{pre}.ffn_up.w"] = bc["a2"][0, last].copy()
            states[f"{pre}.ffn_down.w"] = bc["relu"][0, last].copy()
        # tied output head: logits are hfin @ embed.T
        states["embed"] = cache["hfin"][0, last].copy()
        return states

    def state_dict(self) -> dict[str, np.ndarray]:
        return copy.deepcopy(self.params)
