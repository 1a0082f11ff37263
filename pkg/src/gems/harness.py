"""Batch assembly and per-task gradient computation for the toy workload."""

from __future__ import annotations

import numpy as np

from .data import Vocab, format_prompt
from .gating import TaskBatchStats
from .model import ToyModel

__all__ = ["assemble_batch", "nll_loss", "task_gradients", "sample_batch"]


def assemble_batch(records, vocab: Vocab, n_max: int | None = None):
    """Pack records into padded (tokens, targets, mask) arrays.

    Each row is `prompt + identifier`; the mask selects the identifier
    positions, where position l predicts token l+1 teacher-forced.
    """
    rows = []
    for record in records:
        prompt = format_prompt(record, vocab, n_max)
        rows.append((prompt, vocab.item_tokens(record.target)))
    max_len = max(len(p) + len(t) for p, t in rows)
    B = len(rows)
    tokens = np.full((B, max_len), vocab.pad, dtype=np.int64)
    targets = np.zeros((B, max_len), dtype=np.int64)
    mask = np.zeros((B, max_len), dtype=np.float64)
    for b, (prompt, ident) in enumerate(rows):
        seq = prompt + ident
        tokens[b, : len(seq)] = seq
        # positions predicting the identifier: the last prompt token up to
        # the second-to-last identifier token
        for j, tok in enumerate(ident):
            pos = len(prompt) - 1 + j
            targets[b, pos] = tok
            mask[b, pos] = 1.0
    return tokens, targets, mask


def nll_loss(model: ToyModel, records, vocab: Vocab, n_max: int | None = None):
    """Teacher-forced NLL (mean per record) and its parameter gradients."""
    tokens, targets, mask = assemble_batch(records, vocab, n_max)
    return model.loss_and_grads(tokens, targets, mask)


def task_gradients(model: ToyModel, batch, vocab: Vocab, n_max: int | None = None):
    """Two backward passes over the task-partitioned batch.

    Returns (g_src, g_rec, stats): per-layer gradient dicts (zeros for an
    absent task) and the gate statistics of the batch.
    """
    if not batch:
        raise ValueError("empty batch")
    src = [r for r in batch if r.task == "src"]
    rec = [r for r in batch if r.task == "rec"]

    def run(records):
        if not records:
            zeros = {k: np.zeros_like(v) for k, v in model.params.items()}
            return 0.0, zeros
        return nll_loss(model, records, vocab, n_max)

    loss_src, g_src = run(src)
    loss_rec, g_rec = run(rec)

    def norm(grads):
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))

    stats = TaskBatchStats(
        loss_src=loss_src,
        loss_rec=loss_rec,
        gradnorm_src=norm(g_src) if src else 0.0,
        gradnorm_rec=norm(g_rec) if rec else 0.0,
        count_src=len(src),
        count_rec=len(rec),
    )
    return g_src, g_rec, stats


def sample_batch(rng: np.random.Generator, train_records, batch_size: int,
                 src_fraction: float = 0.5):
    """Draw a mixed batch with the configured src:rec composition."""
    src_pool = [r for r in train_records if r.task == "src"]
    rec_pool = [r for r in train_records if r.task == "rec"]
    n_src = int(round(batch_size * src_fraction))
    n_src = min(n_src, batch_size) if src_pool else 0
    n_rec = batch_size - n_src if rec_pool else 0
    batch = []
    if n_src:
        batch.extend(src_pool[i] for i in rng.integers(0, len(src_pool), n_src))
    if n_rec:
        batch.extend(rec_pool[i] for i in rng.integers(0, len(rec_pool), n_rec))
    if not batch:
        raise ValueError("no records available to sample")
    return batch
