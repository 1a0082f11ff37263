"""Run configuration: JSON in, validated dataclass out, stable hash.

Unknown keys are rejected (fail-closed) so a typo in a hyperparameter
name cannot silently fall back to a default.  A single root seed is
expanded into named streams so that, e.g., changing the batch order
leaves the dataset untouched.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .data import DataConfig
from .model import ModelConfig

__all__ = ["RunConfig", "ConfigError", "seed_stream", "rng_for"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0

    # model dims
    d_model: int = 32
    n_heads: int = 2
    n_blocks: int = 2
    ctx_len: int = 64

    # dataset sizes
    users: int = 64
    items: int = 128
    history_len: int = 8
    interactions_per_user: int = 12
    id_len: int = 3
    alphabet: int = 16
    clusters: int = 8
    cluster_pool: int = 8
    favorite_prob: float = 0.6
    query_noise: float = 0.1
    src_prob: float = 0.5
    gen_tokens: int = 32
    gen_pairs: int = 64

    # subspace optimizer; scale/tau defaults sit at the tuning-grid midpoints
    rank: int = 8
    refresh_every: int = 50
    scale: float = 2.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    # gate
    tau: float = 1.0
    gate_hidden: int = 8
    gate_training: bool = False

    # null-space projection
    nullspace: str = "complement"  # off | complement | literal
    nullspace_k: int = 0  # explicit k; 0 -> use energy_fraction
    energy_fraction: float = 0.9

    # training loop
    steps: int = 400
    batch_size: int = 8
    src_fraction: float = 0.5
    eval_every: int = 100
    pretrain_steps: int = 0
    pretrain_lr: float = 3e-3

    out_dir: str = "runs"

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {self.schema_version}"
            )
        positives = (
            "d_model", "n_heads", "n_blocks", "ctx_len", "users", "items",
            "history_len", "interactions_per_user", "id_len", "alphabet",
            "clusters", "cluster_pool", "rank", "refresh_every", "scale",
            "lr", "tau", "gate_hidden", "batch_size", "eval_every",
        )
        for name in positives:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.rank < 2:
            raise ConfigError("rank must be at least 2")
        if self.rank % 2 != 0:
            raise ConfigError("rank must be even (task ranks are rank/2)")
        if self.rank > self.d_model:
            raise ConfigError("rank cannot exceed d_model")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("beta1/beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.nullspace not in ("off", "complement", "literal"):
            raise ConfigError(f"unknown nullspace mode {self.nullspace!r}")
        if self.nullspace_k < 0:
            raise ConfigError("nullspace_k must be non-negative")
        if not (0.0 < self.energy_fraction <= 1.0):
            raise ConfigError("energy_fraction must lie in (0, 1]")
        if not (0.0 <= self.src_fraction <= 1.0):
            raise ConfigError("src_fraction must lie in [0, 1]")
        if self.steps < 0 or self.pretrain_steps < 0:
            raise ConfigError("step counts must be non-negative")

    # ------------------------------------------------------------------

    @classmethod
    def field_names(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        if "schema_version" not in obj:
            raise ConfigError("config is missing schema_version")
        unknown = set(obj) - set(cls.field_names())
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config does not parse: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(obj)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("ascii")).hexdigest()

    def data_config(self) -> DataConfig:
        return DataConfig(
            users=self.users,
            items=self.items,
            history_len=self.history_len,
            interactions_per_user=self.interactions_per_user,
            id_len=self.id_len,
            alphabet=self.alphabet,
            clusters=self.clusters,
            cluster_pool=self.cluster_pool,
            favorite_prob=self.favorite_prob,
            query_noise=self.query_noise,
            src_prob=self.src_prob,
            gen_tokens=self.gen_tokens,
            gen_pairs=self.gen_pairs,
        )

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_blocks=self.n_blocks,
            ctx_len=self.ctx_len,
        )

    def k_or_energy(self):
        return self.nullspace_k if self.nullspace_k > 0 else self.energy_fraction


def seed_stream(root_seed: int, name: str) -> int:
    """Stable 63-bit seed for a named stream of the root seed."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(seed_stream(root_seed, name))
