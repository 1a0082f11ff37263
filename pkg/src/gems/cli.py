"""Command-line entry points.

Every subcommand reads the same JSON run configuration (`--config`),
with individual fields overridable as `--<field> <value>` flags.  The
output directory defaults to the config's `out_dir` and is overridden
by the `GEMS_OUT` environment variable when set.

Exit codes: 0 success, 2 configuration error, 3 numeric failure during
optimization, 4 I/O failure.  Output files are written to a temporary
path and renamed into place so a crash never leaves a partial file.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from .config import ConfigError, RunConfig, rng_for
from .controller import NumericError
from .data import Vocab, generate_dataset, load_dataset, save_dataset
from .decode import evaluate
from .diagnostics import ConflictRecord, conflict_heatmap, memory_audit
from .experiments import (
    build_all_projectors,
    build_model,
    conflict_csv,
    metrics_csv,
    pretrain_general_domain,
    run_ablation,
    run_training,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import general_domain
from .model import ToyModel
from .nullspace import save_projector

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to a JSON run configuration")
    for f in dataclasses.fields(RunConfig):
        if f.name == "schema_version":
            continue
        kind = _parse_bool if f.type == "bool" else type(f.default)
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                            type=kind, default=None)


def _load_config(args: argparse.Namespace) -> RunConfig:
    obj = {"schema_version": 1}
    if args.config is not None:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config does not parse: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config must be a JSON object")
        obj.update(loaded)
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            obj[f.name] = value
    return RunConfig.from_dict(obj)


def _out_dir(config: RunConfig) -> str:
    out = os.environ.get("GEMS_OUT") or config.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def _safe_name(layer: str) -> str:
    return layer.replace("/", "_").replace(".", "_")


# -- subcommands ------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = _load_config(args)
    dataset = generate_dataset(
        config.data_config(), rng_for(config.seed, "dataset").integers(2**62)
    )
    out = os.path.join(_out_dir(config), "dataset.ndjson")
    tmp = out + ".tmp"
    save_dataset(dataset, tmp)
    os.replace(tmp, out)
    print(out)
    return EXIT_OK


def _base_model_and_probes(config: RunConfig):
    data_cfg = config.data_config()
    vocab = Vocab(data_cfg)
    probes = general_domain(data_cfg, rng_for(config.seed, "general").integers(2**62))
    model = build_model(config, vocab)
    model = pretrain_general_domain(model, probes, vocab, config)
    return model, probes, vocab


def cmd_nullspace_build(args) -> int:
    config = _load_config(args)
    if config.nullspace == "off":
        raise ConfigError("nullspace mode is 'off'; nothing to build")
    model, probes, _ = _base_model_and_probes(config)
    projectors = build_all_projectors(model, probes, config)
    out_dir = _out_dir(config)
    for layer, proj in sorted(projectors.items()):
        path = os.path.join(out_dir, f"nullspace_{_safe_name(layer)}.bin")
        tmp = path + ".tmp"
        save_projector(proj, tmp, layer)
        os.replace(tmp, path)
        print(f"{layer}\tk={proj.k}\t{path}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    dataset = load_dataset(args.data) if args.data else None
    result = run_training(config, args.variant, dataset=dataset,
                          eval_splits=False)
    out_dir = _out_dir(config)

    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    tmp = ckpt_path + ".tmp"
    save_checkpoint(result.checkpoint(), tmp)
    os.replace(tmp, ckpt_path)

    _atomic_write(
        os.path.join(out_dir, "metrics.csv"),
        metrics_csv(result.reports).encode("ascii"),
    )
    records = []
    for report in result.reports:
        records.extend(result.optimizer.conflict_records(report, "raw"))
    _atomic_write(
        os.path.join(out_dir, "conflict.csv"),
        conflict_csv(records).encode("ascii"),
    )
    print(ckpt_path)
    return EXIT_OK


def _model_from_checkpoint(config: RunConfig, ckpt_path: str):
    ckpt = load_checkpoint(ckpt_path)
    data_cfg = config.data_config()
    vocab = Vocab(data_cfg)
    model = ToyModel(config.model_config(vocab.size), rng_for(config.seed, "init"))
    missing = set(model.params) - set(ckpt.params)
    if missing:
        raise ConfigError(
            f"checkpoint does not cover layers {sorted(missing)}; "
            "was it produced under a different model configuration?"
        )
    for name in model.params:
        if model.params[name].shape != ckpt.params[name].shape:
            raise ConfigError(
                f"checkpoint shape mismatch for layer {name!r}"
            )
        model.params[name] = ckpt.params[name].astype(model.params[name].dtype)
    return model, vocab


def cmd_eval(args) -> int:
    config = _load_config(args)
    model, vocab = _model_from_checkpoint(config, args.checkpoint)
    if args.data:
        dataset = load_dataset(args.data)
    else:
        dataset = generate_dataset(
            config.data_config(), rng_for(config.seed, "dataset").integers(2**62)
        )
    records = getattr(dataset, args.split)
    tables = evaluate(model, records, vocab)
    payload = json.dumps(tables, indent=2, sort_keys=True) + "\n"
    _atomic_write(
        os.path.join(_out_dir(config), f"eval_{args.split}.json"),
        payload.encode("ascii"),
    )
    print(payload, end="")
    return EXIT_OK


def cmd_conflict(args) -> int:
    config = _load_config(args)
    records = []
    with open(args.input, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "step,layer,kind,rho":
            raise ConfigError(f"unrecognized conflict log header: {header!r}")
        for line in fh:
            step, layer, kind, rho = line.strip().split(",")
            records.append(
                ConflictRecord(step=int(step), layer_name=layer,
                               layer_kind=kind, rho=float(rho))
            )
    if not records:
        raise ConfigError("conflict log holds no records")
    heat = conflict_heatmap(records, n_phases=args.phases)
    _atomic_write(
        os.path.join(_out_dir(config), "conflict_heatmap.csv"),
        heat.encode("ascii"),
    )
    print(heat, end="")
    return EXIT_OK


def cmd_audit(args) -> int:
    audit = memory_audit(args.m, args.n, args.r)
    print(json.dumps(dataclasses.asdict(audit), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = _load_config(args)
    seeds = args.seeds if args.seeds else None
    report = run_ablation(config, seeds=seeds)
    payload = json.dumps(report, indent=2, sort_keys=True) + "\n"
    _atomic_write(
        os.path.join(_out_dir(config), "ablation.json"), payload.encode("ascii")
    )
    print(payload, end="")
    return EXIT_OK


# -- wiring -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gems",
        description="gradient multi-subspace tuning on a toy workload",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate and save the synthetic dataset")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("nullspace-build",
                       help="build and save per-layer knowledge projectors")
    _add_config_flags(p)
    p.set_defaults(func=cmd_nullspace_build)

    p = sub.add_parser("train", help="run the training loop and checkpoint")
    _add_config_flags(p)
    p.add_argument("--variant", default="full")
    p.add_argument("--data", help="pre-generated dataset file (optional)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank-based evaluation of a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="pre-generated dataset file (optional)")
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("conflict", help="aggregate a conflict log into a heatmap")
    _add_config_flags(p)
    p.add_argument("--input", required=True, help="conflict.csv from a train run")
    p.add_argument("--phases", type=int, default=10)
    p.set_defaults(func=cmd_conflict)

    p = sub.add_parser("audit", help="closed-form memory audit for one layer")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--r", type=int, required=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("ablate", help="run the five-variant ablation grid")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, nargs="*", default=None)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
