"""Command-line entry point: ``overlap-ab {estimate,simulate,fit-propensity,experiment}``.

Exit codes: 0 success, 1 runtime failure (bad log, support violation, ...),
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .core import PolicyModel, TabularPolicy, policy_from_dict
from .errors import ConfigError, OverlapABError
from .estimators import CSV_FIELDS, DEFAULT_ALPHA, estimate_by_id
from .experiments import PRESETS, ExperimentConfig, env_description, env_for, preset, run_experiment, write_results
from .logio import read_trajectory_log, write_trajectory_log
from .propensity import fit_arm

log = logging.getLogger("overlap_ab")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (overrides the config)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    p.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="worker processes for repetitions")
    p.add_argument("--alpha", type=float, default=argparse.SUPPRESS, help="interval level (default 0.05)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="overlap-ab", parents=[common],
                                     description="Importance-weighted A/B test estimation and simulation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", parents=[common], help="estimate the improvement from a trajectory log")
    est.add_argument("log", help="JSON-lines trajectory log")
    src = est.add_mutually_exclusive_group(required=True)
    src.add_argument("--propensities", help="JSON file with exact policies under keys pi_A and pi_B")
    src.add_argument("--policy-A", dest="policy_A", help="policy JSON for arm A (e.g. a fitted model)")
    est.add_argument("--policy-B", dest="policy_B", help="policy JSON for arm B (with --policy-A)")
    est.add_argument("--estimators", default="diff,fstar", help="comma-separated estimator ids")

    sim = sub.add_parser("simulate", parents=[common], help="simulate a log from a JSON config")
    sim.add_argument("config")

    fit = sub.add_parser("fit-propensity", parents=[common], help="fit a softmax-linear propensity model")
    fit.add_argument("log")
    fit.add_argument("--arm", required=True, choices=["A", "B"])
    fit.add_argument("--reg", type=float, default=1e-4)
    fit.add_argument("--max-iter", dest="max_iter", type=int, default=500)
    fit.add_argument("--tol", type=float, default=1e-6)
    fit.add_argument("--actions", type=int, default=None, help="action-set size (default: largest logged + 1)")

    exp = sub.add_parser("experiment", parents=[common], help="run a seeded repetition sweep")
    g = exp.add_mutually_exclusive_group(required=True)
    g.add_argument("config", nargs="?", help="experiment config JSON")
    g.add_argument("--preset", choices=sorted(PRESETS))
    exp.add_argument("--reps", type=int, default=None, help="override the number of repetitions")
    return parser


# -- helpers -------------------------------------------------------------------------------


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"{path}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def _policy(obj: Any, where: str) -> PolicyModel:
    try:
        if isinstance(obj, list):
            return TabularPolicy(obj)
        return policy_from_dict(obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"{where}: not a policy description ({exc})") from exc


def _load_log(path: str):
    try:
        with open(path, "rb") as fh:
            return read_trajectory_log(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"{path}: no such file") from exc


def _emit(text: str, out: str | None, default_name: str | None = None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    if default_name and (path.is_dir() or out.endswith("/")):
        path = path / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# -- commands ----------------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    data = _load_log(args.log)
    if args.propensities:
        obj = _read_json(args.propensities)
        if not isinstance(obj, dict) or "pi_A" not in obj or "pi_B" not in obj:
            raise UsageError(f"{args.propensities}: expected keys pi_A and pi_B")
        pi_A, pi_B = _policy(obj["pi_A"], "pi_A"), _policy(obj["pi_B"], "pi_B")
    else:
        if not args.policy_B:
            raise UsageError("--policy-A needs --policy-B")
        pi_A = _policy(_read_json(args.policy_A), args.policy_A)
        pi_B = _policy(_read_json(args.policy_B), args.policy_B)
    alpha = getattr(args, "alpha", DEFAULT_ALPHA)
    ids = [e.strip() for e in args.estimators.split(",") if e.strip()]
    if not ids:
        raise UsageError("--estimators is empty")
    reports = []
    for ident in ids:
        try:
            reports.append(estimate_by_id(ident, data, pi_A, pi_B, alpha))
        except NotImplementedError as exc:
            raise UsageError(str(exc)) from exc
        except ValueError as exc:
            if "unknown transform" in str(exc):
                raise UsageError(str(exc)) from exc
            raise
    seed = getattr(args, "seed", None)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in reports:
        w.writerow(r.csv_row(seed))
    payload = json.dumps([r.to_dict() for r in reports], indent=2) + "\n"
    out = getattr(args, "out", None)
    if out is None:
        sys.stdout.write(buf.getvalue())
    else:
        d = Path(out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "reports.json").write_text(payload)
        (d / "summary.csv").write_text(buf.getvalue())
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


_SIM_KEYS = {"schema_version", "environment", "n_A", "n_B", "horizon", "seed", "description"}


def cmd_simulate(args) -> int:
    obj = _read_json(args.config)
    if not isinstance(obj, dict):
        raise ConfigError("config: expected an object")
    extra = sorted(set(obj) - _SIM_KEYS)
    if extra:
        raise ConfigError(f"config: unknown field(s) {', '.join(extra)}")
    if obj.get("schema_version") != 1:
        raise ConfigError("config.schema_version: must be 1")
    for key in ("environment", "n_A", "n_B"):
        if key not in obj:
            raise ConfigError(f"config.{key}: required field missing")
    n_A, n_B = obj["n_A"], obj["n_B"]
    if not all(isinstance(n, int) and n >= 0 for n in (n_A, n_B)):
        raise ConfigError("config.n_A / config.n_B: must be nonnegative integers")
    horizon = int(obj.get("horizon", 1))
    seed = getattr(args, "seed", obj.get("seed", 0))
    # the experiment-config parser validates the environment block
    shell = ExperimentConfig.from_dict({
        "schema_version": 1, "kind": "custom", "environment": obj["environment"],
        "grid": {"cells": [{"n_A": 2, "n_B": 2, "horizon": horizon}]},
    })
    env = env_for(shell, horizon=horizon)
    data = env.simulate(n_A, n_B, int(seed))
    out = getattr(args, "out", None)
    if out is None:
        sys.stdout.buffer.write(write_trajectory_log(data))
        return EXIT_OK
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(write_trajectory_log(data))
    sidecar = {
        "seed": int(seed),
        "n_A": n_A,
        "n_B": n_B,
        "horizon": horizon,
        "config": obj,
        "environment": env_description(env),
        "records": data.n_steps,
        "package_version": __version__,
    }
    path.with_name(path.name + ".spec.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_fit_propensity(args) -> int:
    data = _load_log(args.log)
    if data.arm(args.arm).n_users == 0:
        raise UsageError(f"log has no trajectories in arm {args.arm}")
    K = args.actions if args.actions is not None else int(data.actions.max()) + 1
    model = fit_arm(data, args.arm, K, reg=args.reg, max_iter=args.max_iter, tol=args.tol)
    _emit(json.dumps(model.to_dict(), indent=2) + "\n", getattr(args, "out", None), f"policy_{args.arm}.json")
    return EXIT_OK


def cmd_experiment(args) -> int:
    if args.preset:
        cfg = preset(args.preset)
    else:
        if not Path(args.config).is_file():
            raise UsageError(f"{args.config}: no such file")
        cfg = ExperimentConfig.from_json(Path(args.config).read_text())
    changes = {}
    if args.reps is not None:
        changes["repetitions"] = args.reps
    if hasattr(args, "seed"):
        changes["master_seed"] = args.seed
    if hasattr(args, "alpha"):
        changes["alpha"] = args.alpha
    if changes:
        cfg = cfg.replace(**changes)
    out = getattr(args, "out", None) or cfg.output.get("dir") or "results"
    workers = getattr(args, "workers", 1)
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    result = run_experiment(cfg, workers=workers)
    paths = write_results(result, out)
    for name, p in paths.items():
        print(f"wrote {p}")
    return EXIT_OK


COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "fit-propensity": cmd_fit_propensity,
    "experiment": cmd_experiment,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OverlapABError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
