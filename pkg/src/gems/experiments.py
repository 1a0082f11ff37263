"""End-to-end runs: training loops, paired experiments, ablation grid."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import checkpoint_from_run
from .config import RunConfig, rng_for
from .controller import VARIANTS, GemsOptimizer, StepReport
from .data import Dataset, Vocab, generate_dataset, general_domain
from .decode import evaluate, top1
from .diagnostics import intent_preservation
from .gating import GatingNet, gate_features, gate_update
from .harness import nll_loss, sample_batch, task_gradients
from .model import ToyModel
from .nullspace import ProbeCorpus, build_projector, drift_probe
from .subspace import DenseAdamState, dense_adam_step

__all__ = [
    "RunResult",
    "build_model",
    "pretrain_general_domain",
    "build_all_projectors",
    "run_training",
    "metrics_csv",
    "conflict_csv",
    "run_ablation",
    "run_intent_experiment",
]


@dataclass
class RunResult:
    config: RunConfig
    variant: str
    dataset: Dataset
    vocab: Vocab
    model: ToyModel
    base_model: ToyModel
    gate: GatingNet | None
    optimizer: GemsOptimizer
    reports: list = field(default_factory=list)
    eval_tables: dict = field(default_factory=dict)
    probes: list = field(default_factory=list)
    projectors: dict = field(default_factory=dict)

    def checkpoint(self):
        return checkpoint_from_run(
            self.config.config_hash, self.optimizer, self.model.params, self.gate
        )


def build_model(config: RunConfig, vocab: Vocab) -> ToyModel:
    rng = rng_for(config.seed, "init")
    return ToyModel(config.model_config(vocab.size), rng)


def pretrain_general_domain(
    model: ToyModel, probes: list, vocab: Vocab, config: RunConfig
) -> ToyModel:
    """Memorize the general-domain mapping with plain dense Adam.

    This produces the 'base' backbone whose knowledge the null-space
    projection is meant to preserve during task tuning.
    """
    if config.pretrain_steps == 0:
        return model
    rng = rng_for(config.seed, "pretrain")
    states = {
        name: DenseAdamState.fresh(
            value.shape, lr=config.pretrain_lr,
            beta1=config.beta1, beta2=config.beta2, eps=config.eps,
        )
        for name, value in model.params.items()
    }
    for _ in range(config.pretrain_steps):
        idx = rng.integers(0, len(probes), config.batch_size)
        batch = [probes[i] for i in idx]
        _, grads = nll_loss(model, batch, vocab)
        for name in model.params:
            states[name], delta = dense_adam_step(states[name], grads[name])
            model.params[name] = model.params[name] + delta
    return model


def build_all_projectors(model: ToyModel, probes: list, config: RunConfig) -> dict:
    """One knowledge projector per hidden linear layer, from probe states."""
    if config.nullspace == "off":
        return {}
    corpus = ProbeCorpus(inputs=tuple(p.prompt for p in probes))
    features: dict[str, list] = {name: [] for name in model.hidden_layer_names()}
    for tokens in corpus.inputs:
        states = model.layer_input_states(tokens)
        for name in features:
            features[name].append(states[name])
    projectors = {}
    for name, cols in features.items():
        f = np.column_stack(cols)
        projectors[name] = build_projector(
            f, config.k_or_energy(), mode=config.nullspace
        )
    return projectors


def _make_optimizer(config: RunConfig, variant: str, model, gate, projectors):
    return GemsOptimizer(
        model.params,
        rank=config.rank,
        refresh_every=config.refresh_every,
        scale=config.scale,
        lr=config.lr,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        gate=gate,
        variant=variant,
        projectors=projectors,
    )


def run_training(
    config: RunConfig,
    variant: str = "full",
    dataset: Dataset | None = None,
    eval_splits: bool = True,
) -> RunResult:
    """Full Algorithm-style loop for one variant, deterministic from config."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    data_cfg = config.data_config()
    vocab = Vocab(data_cfg)
    if dataset is None:
        dataset = generate_dataset(data_cfg, rng_for(config.seed, "dataset").integers(2**62))
    probes = general_domain(data_cfg, rng_for(config.seed, "general").integers(2**62))

    model = build_model(config, vocab)
    model = pretrain_general_domain(model, probes, vocab, config)
    base_model = model.clone()

    multi = variant in ("full", "no_nullspace")
    gate = (
        GatingNet.init(rng_for(config.seed, "gate"), hidden=config.gate_hidden,
                       temperature=config.tau)
        if multi
        else None
    )
    uses_projection = variant in ("full", "shared_only")
    projectors = (
        build_all_projectors(base_model, probes, config) if uses_projection else {}
    )
    optimizer = _make_optimizer(config, variant, model, gate, projectors)
    optimizer.collect_components = True

    result = RunResult(
        config=config, variant=variant, dataset=dataset, vocab=vocab,
        model=model, base_model=base_model, gate=gate, optimizer=optimizer,
        probes=probes, projectors=projectors,
    )

    batch_rng = rng_for(config.seed, "batching")
    gate_rng = rng_for(config.seed, "gate-train")
    for _ in range(config.steps):
        batch = sample_batch(
            batch_rng, dataset.train, config.batch_size, config.src_fraction
        )
        g_src, g_rec, stats = task_gradients(model, batch, vocab)
        t0 = time.perf_counter()
        new_params, report = optimizer.step(model.params, g_src, g_rec, stats)
        report.wall_ms = (time.perf_counter() - t0) * 1e3
        model.params = new_params
        result.reports.append(report)

        if config.gate_training and multi:
            gate = _gate_spsa_step(
                gate, optimizer, model, batch, vocab, stats, gate_rng
            )
            optimizer.gate = gate
            result.gate = gate

    if eval_splits and dataset.test:
        result.eval_tables = evaluate(model, dataset.test, vocab)
    return result


def _gate_spsa_step(gate, optimizer, model, batch, vocab, stats, rng):
    """Trial-evaluate the combined loss under candidate gate weights.

    The optimizer has already applied this step with the current gate
    output; each trial rewinds to the pre-step weights and re-fuses the
    collected per-subspace components with candidate alphas.
    """
    from .gating import gate_forward

    z = gate_features(stats)
    a_src, a_rec = gate_forward(gate, z)
    components = optimizer.last_components
    pre_step = {}
    for name, comp in components.items():
        applied = (
            comp[0] + a_src * comp[1] + a_rec * comp[2]
            if isinstance(comp, tuple)
            else comp
        )
        pre_step[name] = model.params[name] - applied
    post_step = {name: model.params[name] for name in components}
    src_recs = [r for r in batch if r.task == "src"]
    rec_recs = [r for r in batch if r.task == "rec"]

    def trial(alpha_src, alpha_rec):
        for name, comp in components.items():
            if isinstance(comp, tuple):
                fused = comp[0] + alpha_src * comp[1] + alpha_rec * comp[2]
            else:
                fused = comp
            model.params[name] = pre_step[name] + fused
        total = 0.0
        for records in (src_recs, rec_recs):
            if records:
                loss, _ = nll_loss(model, records, vocab)
                total += loss
        model.params.update(post_step)
        return total

    return gate_update(gate, z, trial, rng)


# -- reporting --------------------------------------------------------------


def metrics_csv(reports: list[StepReport]) -> str:
    lines = ["step,loss_src,loss_rec,alpha_src,alpha_rec,mean_rho,max_rho,wall_ms"]
    for r in reports:
        lines.append(
            f"{r.step},{r.loss_src:.10g},{r.loss_rec:.10g},"
            f"{r.alpha_src:.10g},{r.alpha_rec:.10g},"
            f"{r.mean_rho:.10g},{r.max_rho:.10g},{r.wall_ms:.3f}"
        )
    return "\n".join(lines) + "\n"


def conflict_csv(records) -> str:
    lines = ["step,layer,kind,rho"]
    for rec in sorted(records, key=lambda r: (r.step, r.layer_name)):
        lines.append(f"{rec.step},{rec.layer_name},{rec.layer_kind},{rec.rho:.10g}")
    return "\n".join(lines) + "\n"


def _mean_rho(reports, which: str) -> float:
    vals = []
    for r in reports:
        source = {
            "raw": r.raw_rho,
            "component": r.component_rho,
            "applied": r.applied_rho,
        }[which]
        vals.extend(source.values())
    return float(np.mean(vals)) if vals else float("nan")


def _mean_hit5(tables: dict) -> float:
    vals = [t["hit@5"] for t in tables.values() if t["n"] > 0]
    return float(np.mean(vals)) if vals else float("nan")


def run_ablation(config: RunConfig, seeds=None) -> dict:
    """All five variants on one dataset family, three seeds each."""
    import dataclasses

    seeds = seeds if seeds is not None else [config.seed + i for i in range(3)]
    rows = {}
    for variant in VARIANTS:
        per_seed = []
        for seed in seeds:
            cfg = dataclasses.replace(config, seed=seed)
            res = run_training(cfg, variant)
            per_seed.append(
                {
                    "seed": seed,
                    "hit5": _mean_hit5(res.eval_tables),
                    "hit5_by_task": {
                        k: v["hit@5"] for k, v in res.eval_tables.items()
                    },
                    "mean_raw_rho": _mean_rho(res.reports, "raw"),
                    "mean_component_rho": _mean_rho(res.reports, "component"),
                    "mean_applied_rho": _mean_rho(res.reports, "applied"),
                }
            )
        rows[variant] = {
            "runs": per_seed,
            "median_hit5": float(np.median([p["hit5"] for p in per_seed])),
            "median_raw_rho": float(np.median([p["mean_raw_rho"] for p in per_seed])),
            "median_component_rho": float(
                np.median([p["mean_component_rho"] for p in per_seed])
            ),
            "median_applied_rho": float(
                np.median([p["mean_applied_rho"] for p in per_seed])
            ),
        }

    # conflict comparison pairs the per-task applied update components:
    # shared + gated task delta under full GEMS, per-task dense Adam
    # deltas under dense joint tuning (raw and task-delta pairings are
    # recorded alongside for the alternative readings)
    dense_rho = rows["dense_joint"]["median_applied_rho"]
    gems_rho = rows["full"]["median_applied_rho"]
    report = {
        "variants": rows,
        "checks": {
            "full_vs_shared_only_hit5": rows["full"]["median_hit5"]
            >= rows["shared_only"]["median_hit5"],
            "conflict_reduction": 1.0 - gems_rho / dense_rho,
            "conflict_reduction_ok": gems_rho <= 0.7 * dense_rho,
        },
    }
    return report


def run_intent_experiment(config: RunConfig, seeds=None) -> dict:
    """Paired null-space-on vs null-space-off runs, drift and flip rates."""
    import dataclasses

    seeds = seeds if seeds is not None else [config.seed + i for i in range(3)]
    out = {"runs": [], "all_on_leq_off": True, "all_drift_on_lt_off": True}
    for seed in seeds:
        cfg_on = dataclasses.replace(config, seed=seed, nullspace="complement")
        cfg_off = dataclasses.replace(config, seed=seed)
        res_on = run_training(cfg_on, "full", eval_splits=False)
        res_off = run_training(cfg_off, "no_nullspace", eval_splits=False)

        corpus = ProbeCorpus(inputs=tuple(p.prompt for p in res_on.probes))
        drift_on = drift_probe(res_on.base_model, res_on.model, corpus)
        drift_off = drift_probe(res_off.base_model, res_off.model, corpus)

        vocab = res_on.vocab

        def decoder(model, record):
            return top1(model, record, vocab)

        flips_on = intent_preservation(
            res_on.base_model, res_on.model, res_on.probes, decoder
        )
        flips_off = intent_preservation(
            res_off.base_model, res_off.model, res_off.probes, decoder
        )
        out["runs"].append(
            {
                "seed": seed,
                "flip_on": flips_on,
                "flip_off": flips_off,
                "drift_on": drift_on,
                "drift_off": drift_off,
            }
        )
        out["all_on_leq_off"] &= flips_on <= flips_off
        out["all_drift_on_lt_off"] &= drift_on < drift_off
    return out
