"""Command-line surface: generate data, run experiments, report results.

Exit codes: 0 success, 1 runtime failure, 2 usage error (argparse's own
convention). The default output root comes from ONIONBENCH_OUT, falling back
to ./runs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context
from pathlib import Path

from .errors import ConfigError, OnionBenchError
from .experiments import ExperimentConfig, build_registry, execute, get_experiment, registry_ids
from .model import BACKBONES, build_model, parameter_breakdown
from .cbam import cbam_param_count
from .synthetic import SyntheticSpec, desk_spec, field_spec, write_dataset

OUTPUT_ROOT_VAR = "ONIONBENCH_OUT"


def _output_root(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ROOT_VAR, "runs"))


def _load_spec_file(path: str) -> SyntheticSpec:
    p = Path(path)
    if p.suffix == ".toml":
        with open(p, "rb") as fh:
            return SyntheticSpec.from_dict(tomllib.load(fh))
    if p.suffix == ".json":
        return SyntheticSpec.from_json(p.read_text(encoding="utf-8"))
    raise ConfigError(f"spec file must be .toml or .json, got {p.name}")


def cmd_generate(args) -> int:
    if args.config:
        spec = _load_spec_file(args.config)
    else:
        spec = desk_spec() if args.preset == "desk" else field_spec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out = Path(args.out) if args.out else _output_root(args) / f"dataset-{args.preset}"
    manifest, catalog = write_dataset(spec, out)
    print(f"wrote {catalog.total} images across {len(catalog)} classes to {out}")
    print(f"manifest: {manifest}")
    print(f"imbalance ratio {catalog.imbalance_ratio:.2f}")
    return 0


def cmd_list(args) -> int:
    for exp_id, cfg in build_registry().items():
        print(f"{exp_id:36s} {cfg.description}")
    return 0


def cmd_describe(args) -> int:
    try:
        cfg = get_experiment(args.id)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"id:          {cfg.id}")
    print(f"description: {cfg.description}")
    if cfg.synthetic is not None:
        s = cfg.synthetic
        print(f"data:        synthetic, {s.total} images, {s.class_count} classes, "
              f"{s.image_size}px, ratio {s.imbalance_ratio:.2f}, seed {s.seed}")
    else:
        print(f"data:        manifest {cfg.manifest} under {cfg.data_root}")
    for rule in cfg.merges:
        print(f"merge:       {rule.first} + {rule.second} -> {rule.merged}")
    if cfg.binary_healthy:
        print(f"coarsening:  {cfg.binary_healthy} vs rest")
    print(f"loss:        {cfg.loss.kind}" + (f" (gamma={cfg.loss.gamma})" if cfg.loss.kind == "focal" else ""))
    print(f"pipeline:    {cfg.aug_kind}" + (", balancing sampler" if cfg.use_sampler else ""))

    n_classes = 2 if cfg.binary_healthy else len(cfg.synthetic.class_names) - len(cfg.merges)
    plain = dataclasses.replace(cfg.model_config(), use_cbam=False)
    gated = dataclasses.replace(cfg.model_config(), use_cbam=True)
    p_plain = parameter_breakdown(build_model(plain, n_classes, seed=0))
    p_gated = parameter_breakdown(build_model(gated, n_classes, seed=0))
    spec = BACKBONES[cfg.backbone]
    closed = cbam_param_count(spec.out_channels, cfg.cbam.reduction, cfg.cbam.spatial_kernel)
    print(f"backbone:    {spec.family} ({cfg.backbone}), {spec.out_channels} feature channels")
    print(f"parameters:  {p_plain['total']} without attention, {p_gated['total']} with attention")
    print(f"attention:   +{p_gated['total'] - p_plain['total']} parameters "
          f"(closed form {closed}), enabled: {cfg.use_cbam}")
    return 0


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    train = cfg.train
    if args.seed is not None:
        train = dataclasses.replace(train, seed=args.seed)
    if args.deterministic is not None:
        train = dataclasses.replace(train, deterministic=args.deterministic)
    return dataclasses.replace(cfg, train=train)


def _resolve_run_configs(args) -> list[ExperimentConfig]:
    configs: list[ExperimentConfig] = []
    for exp_id in args.ids:
        configs.append(get_experiment(exp_id))
    if args.all is not None:
        group = None if args.all == "all" else args.all
        configs.extend(get_experiment(i) for i in registry_ids(group))
    if args.config:
        configs.append(ExperimentConfig.from_file(args.config))
    if not configs:
        raise ConfigError("nothing to run: give experiment ids, --all GROUP, or --config FILE")
    return configs


def _run_one(cfg_dict: dict, out_root: str, cv: bool) -> str:
    # module-level so it pickles into worker processes
    cfg = ExperimentConfig.from_dict(cfg_dict)
    return str(execute(cfg, out_root, cv=cv))


def cmd_run(args) -> int:
    try:
        configs = _resolve_run_configs(args)
        configs = [_apply_overrides(c, args) for c in configs]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_root = _output_root(args)
    if args.jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs, mp_context=get_context("spawn")) as pool:
            futures = [pool.submit(_run_one, c.to_dict(), str(out_root), args.cv) for c in configs]
            for cfg, fut in zip(configs, futures):
                print(f"{cfg.id}: {fut.result()}")
    else:
        for cfg in configs:
            out_dir = execute(cfg, out_root, cv=args.cv)
            print(f"{cfg.id}: {out_dir}")
    return 0


def cmd_report(args) -> int:
    from .reporting import write_report
    out = Path(args.out) if args.out else _output_root(args) / "report"
    path = write_report(args.run_dirs, out)
    print(f"report: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onionbench",
                                     description="Imbalanced leaf-image classification benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="render a synthetic dataset to disk")
    p.add_argument("--preset", choices=("desk", "field"), default="desk")
    p.add_argument("--config", help="synthetic spec file (.toml or .json)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("list", help="print registered experiment ids")
    p.set_defaults(func=cmd_list)

    p = sub.add_parser("describe", help="show one experiment's data/model/loss setup")
    p.add_argument("id")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("run", help="run registered experiments or a config file")
    p.add_argument("ids", nargs="*", help="registered experiment ids")
    p.add_argument("--all", default=None, metavar="GROUP",
                   help="run every id with this prefix (e.g. table1), or 'all'")
    p.add_argument("--config", help="experiment config file (.toml or .json)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--cv", action="store_true", help="cross-validate instead of a single split")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="compare one or more run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except OnionBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
