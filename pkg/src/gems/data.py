"""Synthetic unified search & recommendation workload with planted structure.

The generator plants signal both tasks can learn while keeping their
optimal features deliberately different:

* recommendation targets repeat the user's favorite item and otherwise
  stay inside the user's latent-cluster item pool, so interaction
  history is predictive;
* search targets are drawn uniformly over the whole catalog and the
  query is a noisy copy of the target's identifier tokens (plus the
  user's cluster token), so the query is predictive and the history is
  actively misleading.

This opposition is what makes the two tasks' gradients conflict during
joint training.  A disjoint "general-domain" token distribution with a
fixed prompt-to-identifier mapping supports pretraining and the
knowledge-preservation probes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DataConfig",
    "Vocab",
    "ItemId",
    "Interaction",
    "EvalRecord",
    "ProbeRecord",
    "Dataset",
    "generate_dataset",
    "format_prompt",
    "general_domain",
    "save_dataset",
    "load_dataset",
]

DATASET_SCHEMA = 1


@dataclass(frozen=True)
class DataConfig:
    users: int = 64
    items: int = 128
    history_len: int = 8  # N_max retained in the prompt
    interactions_per_user: int = 12
    id_len: int = 3
    alphabet: int = 16
    clusters: int = 8
    cluster_pool: int = 8  # items a user's rec behavior draws from
    favorite_prob: float = 0.6
    query_noise: float = 0.1
    src_prob: float = 0.5
    gen_tokens: int = 32
    gen_pairs: int = 64
    negatives: int = 99

    def __post_init__(self):
        if self.users < 10 or self.items < 10:
            raise ValueError("need at least 10 users and 10 items")
        if self.items < self.negatives + 1:
            raise ValueError(
                f"{self.items} items cannot supply {self.negatives} distinct negatives"
            )
        if self.items > self.alphabet**self.id_len:
            raise ValueError("identifier space too small for the catalog")


class Vocab:
    """Fixed token layout: specials, per-position identifier symbols,
    cluster tokens, general-domain tokens."""

    SPECIALS = (
        "[PAD]", "[SRC]", "[REC]", "[B_SRC]", "[B_REC]",
        "[NO_QUERY]", "[EMPTY_HIST]", "[TRUNC]", "[SEP]", "[GEN]",
    )

    def __init__(self, cfg: DataConfig):
        self.cfg = cfg
        self.pad = 0
        for idx, name in enumerate(self.SPECIALS):
            setattr(self, name.strip("[]").lower(), idx)
        self._id_base = len(self.SPECIALS)
        self._cluster_base = self._id_base + cfg.id_len * cfg.alphabet
        self._gen_base = self._cluster_base + cfg.clusters
        self.size = self._gen_base + cfg.gen_tokens

    def id_token(self, position: int, symbol: int) -> int:
        return self._id_base + position * self.cfg.alphabet + symbol

    def cluster_token(self, cluster: int) -> int:
        return self._cluster_base + cluster

    def gen_token(self, j: int) -> int:
        return self._gen_base + j

    def item_tokens(self, item: "ItemId") -> list[int]:
        return [self.id_token(p, s) for p, s in enumerate(item.tokens)]


@dataclass(frozen=True, order=True)
class ItemId:
    """Fixed-length semantic identifier: one symbol per position."""

    tokens: tuple

    def __post_init__(self):
        if not all(isinstance(t, int) and t >= 0 for t in self.tokens):
            raise ValueError("identifier symbols must be non-negative ints")


@dataclass(frozen=True)
class Interaction:
    item: ItemId
    behavior: str  # "src" | "rec"
    query: tuple | None = None  # token ids; present iff behavior == "src"

    def __post_init__(self):
        if self.behavior not in ("src", "rec"):
            raise ValueError(f"unknown behavior {self.behavior!r}")
        if (self.query is not None) != (self.behavior == "src"):
            raise ValueError("query presence must match behavior")


@dataclass(frozen=True)
class EvalRecord:
    user: int
    history: tuple  # of Interaction
    query: tuple | None
    target: ItemId
    negatives: tuple  # of ItemId, distinct, never the target
    task: str  # "src" | "rec"

    def __post_init__(self):
        if self.task not in ("src", "rec"):
            raise ValueError(f"unknown task {self.task!r}")
        if len(set(self.negatives)) != len(self.negatives):
            raise ValueError("negatives must be distinct")
        if self.target in self.negatives:
            raise ValueError("target must not appear among negatives")


@dataclass(frozen=True)
class ProbeRecord:
    """General-domain probe: prompt tokens with a mapped identifier."""

    prompt: tuple
    target: ItemId
    negatives: tuple


@dataclass
class Dataset:
    config: DataConfig
    catalog: list = field(default_factory=list)  # all ItemIds
    train: list = field(default_factory=list)
    valid: list = field(default_factory=list)
    test: list = field(default_factory=list)


def _decode_code(code: int, id_len: int, alphabet: int) -> ItemId:
    symbols = []
    for _ in range(id_len):
        symbols.append(int(code % alphabet))
        code //= alphabet
    return ItemId(tokens=tuple(symbols))


def _sample_negatives(rng, catalog, target, k):
    pool = [it for it in catalog if it != target]
    idx = rng.choice(len(pool), size=k, replace=False)
    return tuple(pool[i] for i in sorted(idx))


def _noisy_query(rng, vocab: Vocab, item: ItemId, cluster: int) -> tuple:
    cfg = vocab.cfg
    toks = []
    for p, s in enumerate(item.tokens):
        if rng.random() < cfg.query_noise:
            s = int(rng.integers(0, cfg.alphabet))
        toks.append(vocab.id_token(p, s))
    toks.append(vocab.cluster_token(cluster))
    return tuple(toks)


def generate_dataset(cfg: DataConfig, seed: int) -> Dataset:
    """Deterministic synthetic corpus with a leave-one-out split."""
    rng = np.random.default_rng(seed)
    vocab = Vocab(cfg)

    codes = rng.choice(cfg.alphabet**cfg.id_len, size=cfg.items, replace=False)
    catalog = [_decode_code(int(c), cfg.id_len, cfg.alphabet) for c in codes]

    perm = rng.permutation(cfg.items)
    cluster_pools = []
    for c in range(cfg.clusters):
        members = perm[c::cfg.clusters][: cfg.cluster_pool]
        if len(members) == 0:
            raise ValueError("too many clusters for the catalog size")
        cluster_pools.append([catalog[i] for i in members])

    ds = Dataset(config=cfg, catalog=catalog)
    for user in range(cfg.users):
        cluster = int(rng.integers(0, cfg.clusters))
        pool = cluster_pools[cluster]
        favorite = pool[int(rng.integers(0, len(pool)))]

        interactions = []
        for _ in range(cfg.interactions_per_user):
            if rng.random() < cfg.src_prob:
                target = catalog[int(rng.integers(0, cfg.items))]
                query = _noisy_query(rng, vocab, target, cluster)
                interactions.append(Interaction(item=target, behavior="src", query=query))
            else:
                if rng.random() < cfg.favorite_prob:
                    target = favorite
                else:
                    target = pool[int(rng.integers(0, len(pool)))]
                interactions.append(Interaction(item=target, behavior="rec"))

        def record(n: int) -> EvalRecord:
            inter = interactions[n]
            return EvalRecord(
                user=user,
                history=tuple(interactions[:n]),
                query=inter.query,
                target=inter.item,
                negatives=_sample_negatives(rng, catalog, inter.item, cfg.negatives),
                task=inter.behavior,
            )

        last = cfg.interactions_per_user - 1
        ds.train.extend(record(n) for n in range(1, last - 1))
        ds.valid.append(record(last - 1))
        ds.test.append(record(last))
    return ds


def format_prompt(record, vocab: Vocab, n_max: int | None = None) -> list[int]:
    """Deterministic prompt layout:

        [task] ([TRUNC]?) <history: behavior tag + item tokens>
        <query tokens | [NO_QUERY]> [SEP]

    History keeps at most `n_max` most-recent interactions; an empty
    history is marked explicitly.
    """
    if isinstance(record, ProbeRecord):
        return list(record.prompt)
    cfg = vocab.cfg
    n_max = cfg.history_len if n_max is None else n_max
    toks = [vocab.src if record.task == "src" else vocab.rec]
    history = list(record.history)
    if len(history) > n_max:
        toks.append(vocab.trunc)
        history = history[-n_max:]
    if not history:
        toks.append(vocab.empty_hist)
    for inter in history:
        toks.append(vocab.b_src if inter.behavior == "src" else vocab.b_rec)
        toks.extend(vocab.item_tokens(inter.item))
    if record.query is not None:
        toks.extend(record.query)
    else:
        toks.append(vocab.no_query)
    toks.append(vocab.sep)
    return toks


def general_domain(cfg: DataConfig, seed: int):
    """Fixed prompt -> identifier mapping over the disjoint GEN tokens.

    Returns a list of ProbeRecords; each prompt is `[GEN] g1 g2 [SEP]`
    and the mapped identifier is drawn uniformly over the full code
    space, with the usual 99 sampled negatives for ranking probes.
    """
    rng = np.random.default_rng(seed)
    vocab = Vocab(cfg)
    n_pairs = cfg.gen_pairs
    pairs = set()
    while len(pairs) < n_pairs:
        g1, g2 = rng.integers(0, cfg.gen_tokens, 2)
        pairs.add((int(g1), int(g2)))
    pairs = sorted(pairs)

    space = cfg.alphabet**cfg.id_len
    codes = rng.choice(space, size=n_pairs, replace=False)
    records = []
    for (g1, g2), code in zip(pairs, codes):
        target = _decode_code(int(code), cfg.id_len, cfg.alphabet)
        neg_codes = set()
        while len(neg_codes) < cfg.negatives:
            cand = int(rng.integers(0, space))
            if cand != int(code):
                neg_codes.add(cand)
        negatives = tuple(
            _decode_code(c, cfg.id_len, cfg.alphabet) for c in sorted(neg_codes)
        )
        prompt = (vocab.gen, vocab.gen_token(g1), vocab.gen_token(g2), vocab.sep)
        records.append(ProbeRecord(prompt=prompt, target=target, negatives=negatives))
    return records


# -- newline-delimited JSON persistence -------------------------------------


def _interaction_to_json(inter: Interaction):
    return {
        "item": list(inter.item.tokens),
        "behavior": inter.behavior,
        "query": list(inter.query) if inter.query is not None else None,
    }


def _record_to_json(rec: EvalRecord):
    return {
        "user": rec.user,
        "history": [_interaction_to_json(i) for i in rec.history],
        "query": list(rec.query) if rec.query is not None else None,
        "target": list(rec.target.tokens),
        "negatives": [list(n.tokens) for n in rec.negatives],
        "task": rec.task,
    }


def _record_from_json(obj) -> EvalRecord:
    return EvalRecord(
        user=obj["user"],
        history=tuple(
            Interaction(
                item=ItemId(tuple(h["item"])),
                behavior=h["behavior"],
                query=tuple(h["query"]) if h["query"] is not None else None,
            )
            for h in obj["history"]
        ),
        query=tuple(obj["query"]) if obj["query"] is not None else None,
        target=ItemId(tuple(obj["target"])),
        negatives=tuple(ItemId(tuple(n)) for n in obj["negatives"]),
        task=obj["task"],
    )


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        header = {
            "schema_version": DATASET_SCHEMA,
            "splits": {
                "train": len(ds.train),
                "valid": len(ds.valid),
                "test": len(ds.test),
            },
            "catalog": [list(it.tokens) for it in ds.catalog],
            "config": vars(ds.config),
        }
        fh.write(json.dumps(header, separators=(",", ":"), sort_keys=True) + "\n")
        for split in (ds.train, ds.valid, ds.test):
            for rec in split:
                fh.write(
                    json.dumps(_record_to_json(rec), separators=(",", ":")) + "\n"
                )


def load_dataset(path) -> Dataset:
    with open(path, "r", encoding="ascii") as fh:
        header = json.loads(fh.readline())
        if header.get("schema_version") != DATASET_SCHEMA:
            raise ValueError("unsupported dataset schema version")
        cfg = DataConfig(**header["config"])
        ds = Dataset(
            config=cfg,
            catalog=[ItemId(tuple(t)) for t in header["catalog"]],
        )
        counts = header["splits"]
        for name in ("train", "valid", "test"):
            split = getattr(ds, name)
            for _ in range(counts[name]):
                split.append(_record_from_json(json.loads(fh.readline())))
    return ds
