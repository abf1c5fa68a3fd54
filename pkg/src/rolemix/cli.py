"""Command line entry points.

Every verb takes a YAML config (--config), an optional --seed override and an
--out path. Relative --out paths are resolved against $ROLEMIX_OUT when it is
set, else the working directory. Exit codes: 0 success, 1 configuration
error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import analysis, config, harness
from .checkpoint import CheckpointError
from .config import ConfigError
from .env import EnvError
from .episodes import TraceError
from .expert import DemoError, generate_demos, save_demos
from .maps import MapError, get_map
from .trainer import TransferError, run_phase

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
OUT_ROOT_ENV = "ROLEMIX_OUT"

_CONFIG_ERRORS = (ConfigError, MapError)
_RUNTIME_ERRORS = (DemoError, TraceError, TransferError, EnvError, CheckpointError,
                   OSError, ValueError, KeyError)


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; bad arguments are a
    # configuration problem here, so route them to exit code 1 instead.
    def error(self, message):
        raise _ArgumentError(message)


def _resolve_out(out: str | None, default: str) -> str:
    path = out if out else default
    if not os.path.isabs(path):
        path = os.path.join(os.environ.get(OUT_ROOT_ENV, "."), path)
    return path


def _maybe_reseed(cfg, seed: int | None):
    if seed is None:
        return cfg
    return dataclasses.replace(cfg, seed=seed)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def _cmd_demo_gen(args) -> int:
    cfg = _maybe_reseed(config.demo_from_yaml(args.config), args.seed)
    out_dir = _resolve_out(args.out, "demos")
    spec = get_map(cfg.map)
    records, stats = generate_demos(spec, cfg.env, cfg.count, cfg.seed)
    save_demos(out_dir, records, stats)
    _emit({"out": out_dir, **stats})
    return EXIT_OK


def _cmd_train(args, require_bundle: bool = False) -> int:
    cfg = _maybe_reseed(config.phase_from_yaml(args.config), args.seed)
    if require_bundle and not cfg.init_bundle:
        raise ConfigError("transfer-train needs init_bundle in the config")
    out_dir = _resolve_out(args.out, f"train_seed{cfg.seed}")
    result = run_phase(cfg, out_dir, log=True)
    _emit({
        "out": out_dir, "bundle": result.bundle_path, "metrics": result.metrics_path,
        "env_steps": result.env_steps, "episodes": result.episodes,
        "grad_steps": result.grad_steps, "stopped_early": result.stopped_early,
        "final_eval": result.final_eval() if result.history else None,
    })
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    cfg = _maybe_reseed(config.eval_from_yaml(args.config), args.seed)
    report = harness.evaluate(cfg)
    payload = report.to_dict()
    if args.out:
        out_path = _resolve_out(args.out, "eval.json")
        with open(out_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        payload["out"] = out_path
    _emit(payload)
    return EXIT_OK


def _cmd_pca(args) -> int:
    cfg = _maybe_reseed(config.pca_from_yaml(args.config), args.seed)
    out_path = _resolve_out(args.out, "pca.csv")
    result = analysis.run_pca(cfg, out_path)
    _emit({"out": out_path, "rows": len(result.coords),
           "explained": [float(v) for v in result.explained]})
    return EXIT_OK


def _cmd_visits(args) -> int:
    cfg = _maybe_reseed(config.visits_from_yaml(args.config), args.seed)
    out_path = _resolve_out(args.out, "visits.csv")
    counts = analysis.run_visits(cfg, out_path)
    _emit({"out": out_path, "agents": counts.shape[0], "total": int(counts.sum())})
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = config.experiment_from_yaml(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seeds=(args.seed,))
    out_root = _resolve_out(args.out, ".")
    result = harness.run_experiment(cfg, out_root, log=True)
    _emit({"out": result.out_dir})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rolemix",
                     description="Train, transfer and analyse role-mixing teams.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML config path")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None,
                       help=f"output path (relative paths join ${OUT_ROOT_ENV})")
        p.set_defaults(fn=fn)
        return p

    add("demo-gen", _cmd_demo_gen, "generate scripted expert demonstrations")
    add("train", _cmd_train, "train one phase from scratch")
    add("transfer-train", lambda a: _cmd_train(a, require_bundle=True),
        "continue training from a saved bundle on a (larger) team")
    add("evaluate", _cmd_evaluate, "greedy evaluation of a bundle")
    add("analyze-pca", _cmd_pca, "project role-weight vectors to 2 components")
    add("analyze-visits", _cmd_visits, "per-agent cell visitation counts")
    add("run", _cmd_run, "full multi-seed experiment pipeline")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _RUNTIME_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
