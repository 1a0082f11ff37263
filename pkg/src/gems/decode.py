"""Trie-constrained beam search over candidate identifiers, plus ranking
metrics (Hit@K, NDCG@K) over the 100-candidate evaluation protocol."""

from __future__ import annotations

import math

import numpy as np

from .data import ItemId, Vocab

__all__ = [
    "IdTrie",
    "constrained_beam_search",
    "hit_at_k",
    "ndcg_at_k",
    "rank_candidates",
    "top1",
    "evaluate",
]


class IdTrie:
    """Prefix tree over token-id sequences of the candidate identifiers."""

    def __init__(self, sequences):
        self.root: dict = {}
        for seq in sequences:
            node = self.root
            for tok in seq:
                node = node.setdefault(tok, {})

    def next_tokens(self, prefix) -> list[int]:
        node = self.root
        for tok in prefix:
            node = node.get(tok)
            if node is None:
                return []
        return sorted(node.keys())


def constrained_beam_search(model, prompt, candidates, K, vocab: Vocab,
                            beam_width: int | None = None):
    """Rank candidates by summed token log-probability under the model.

    Decoding is restricted at every position to tokens that extend some
    candidate.  With `beam_width >= len(candidates)` (the default) the
    result is identical to exhaustively scoring every candidate.  Ties
    are broken by candidate index for determinism.

    Returns the top-K list of (ItemId, score).
    """
    if not candidates:
        raise ValueError("candidate list is empty")
    if K > len(candidates):
        raise ValueError(f"K={K} exceeds {len(candidates)} candidates")
    width = len(candidates) if beam_width is None else max(beam_width, K)

    seqs = [tuple(vocab.item_tokens(c)) for c in candidates]
    trie = IdTrie(seqs)
    id_len = len(seqs[0])
    # smallest candidate index reachable from each prefix, for tie-breaks
    prefix_order: dict[tuple, int] = {}
    for idx, s in enumerate(seqs):
        for cut in range(id_len + 1):
            prefix = s[:cut]
            if prefix not in prefix_order:
                prefix_order[prefix] = idx

    prompt = list(prompt)
    beams = [((), 0.0)]
    for _ in range(id_len):
        expansions = []
        batch = np.array([prompt + list(prefix) for prefix, _ in beams])
        logprobs = model.token_logprobs(batch)[:, -1, :]
        for b, (prefix, score) in enumerate(beams):
            for tok in trie.next_tokens(prefix):
                nxt = prefix + (tok,)
                expansions.append((nxt, score + float(logprobs[b, tok])))
        expansions.sort(key=lambda e: (-e[1], prefix_order[e[0]]))
        beams = expansions[:width]

    ranked = sorted(beams, key=lambda e: (-e[1], prefix_order[e[0]]))
    return [(candidates[prefix_order[prefix]], score) for prefix, score in ranked[:K]]


def hit_at_k(ranking, target: ItemId, K: int) -> int:
    return int(any(item == target for item, _ in ranking[:K]))


def ndcg_at_k(ranking, target: ItemId, K: int) -> float:
    for rank, (item, _) in enumerate(ranking[:K], start=1):
        if item == target:
            return 1.0 / math.log2(rank + 1)
    return 0.0


def rank_candidates(model, record, vocab: Vocab, n_max: int | None = None):
    """Full ranking of a record's candidate list (target + negatives).

    Candidates are ordered lexicographically by identifier so the tie
    order carries no information about which entry is the target.
    """
    from .data import format_prompt

    candidates = sorted([record.target, *record.negatives])
    prompt = format_prompt(record, vocab, n_max)
    return constrained_beam_search(model, prompt, candidates, len(candidates), vocab)


def top1(model, record, vocab: Vocab) -> ItemId:
    return rank_candidates(model, record, vocab)[0][0]


def evaluate(model, records, vocab: Vocab, k_list=(5, 10)) -> dict:
    """Per-task mean Hit@K / NDCG@K over each record's 100-candidate list."""
    if not records:
        raise ValueError("no records to evaluate")
    tables: dict[str, dict] = {}
    for record in records:
        task = getattr(record, "task", "gen")
        table = tables.setdefault(
            task,
            {"n": 0, **{f"hit@{k}": 0.0 for k in k_list},
             **{f"ndcg@{k}": 0.0 for k in k_list}},
        )
        ranking = rank_candidates(model, record, vocab)
        table["n"] += 1
        for k in k_list:
            table[f"hit@{k}"] += hit_at_k(ranking, record.target, k)
            table[f"ndcg@{k}"] += ndcg_at_k(ranking, record.target, k)
    for table in tables.values():
        n = table["n"]
        for key in list(table):
            if key != "n":
                table[key] /= n
    return tables
