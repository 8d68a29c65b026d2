"""Seeded repetition sweeps over simulated A/B tests.

A config is one JSON document. It expands into *cells* (one parameter
setting each); every cell is repeated ``repetitions`` times and repetition
``r`` of cell ``c`` draws from ``SeedSequence([master_seed, c, r])``, so the
output depends only on the config, never on scheduling.

Estimator ids are those of :func:`estimators.estimate_by_id`, plus
``fstar_robust:<noise>:sigma`` whose penalty follows the misspecification
level of the cell: ``lambda_eff = sigma * T * n_A``.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .core import Dataset, PolicyModel, TabularPolicy
from .errors import ConfigError, OverlapABError
from .estimators import diff_in_means, f_estimate_view, ips_view, mixture_view
from .propensity import fit_arm, perturb_uniform_mix
from .simulators import (
    DEFAULT_REWARD_PROFILE,
    BanditSpec,
    BoredomSpec,
    PolicyPairSpec,
    boredom_policy,
    epsilon_pair,
    make_policy_pair,
    policy_distance,
    simulate_bandit,
    simulate_boredom_ab,
    true_improvement_bandit,
    true_improvement_mc,
)
from .transforms import FStarRobust, NoiseModel, parse_transform_id
from .view import build_counterfactual_view

SCHEMA_VERSION = 1
KINDS = ("aa_test", "variance_reduction_sweep", "misspecification_sweep", "boredom_horizon_sweep", "custom")
PROPENSITY_MODES = ("exact", "perturbed", "learned")
RATIO_GUARD = 1e-15
DEFAULT_PAIR_SEED = 8

_TOP_KEYS = {
    "schema_version", "kind", "environment", "estimators", "grid", "repetitions", "master_seed",
    "alpha", "propensities", "oracle_reps", "output", "description",
}
_ENV_KEYS = {
    "bandit": {"type", "p", "pair", "pair_seed"},
    "boredom": {"type", "d", "rho", "sigma_noise", "beta_seed", "beta", "inv_temp_A", "inv_temp_B", "s0_low", "s0_high"},
    "epsilon_pair": {"type", "epsilon", "p_hit", "p_miss"},
}
_GRID_KEYS = {
    "aa_test": {"n"},
    "variance_reduction_sweep": {"distance_hints", "n_r", "n_total"},
    "misspecification_sweep": {"scenarios", "sigma", "n_A", "n_B"},
    "boredom_horizon_sweep": {"horizons", "n_A", "n_B"},
    "custom": {"cells"},
}
_CELL_KEYS = {"n_A", "n_B", "sigma", "horizon", "label"}


def _reject_unknown(obj: Mapping[str, Any], allowed: set[str], where: str) -> None:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{where}: expected an object")
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}")


def _need(obj: Mapping[str, Any], key: str, where: str):
    if key not in obj:
        raise ConfigError(f"{where}.{key}: required field missing")
    return obj[key]


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    environment: dict
    estimators: tuple[str, ...]
    grid: dict
    repetitions: int = 100
    master_seed: int = 0
    alpha: float = 0.05
    propensities: str = "exact"
    oracle_reps: int = 200_000
    output: dict = field(default_factory=dict)
    description: str = ""
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "ExperimentConfig":
        _reject_unknown(obj, _TOP_KEYS, "config")
        version = _need(obj, "schema_version", "config")
        if version != SCHEMA_VERSION:
            raise ConfigError(f"config.schema_version: {version} is not supported (expected {SCHEMA_VERSION})")
        kind = _need(obj, "kind", "config")
        if kind not in KINDS:
            raise ConfigError(f"config.kind: {kind!r} is not one of {', '.join(KINDS)}")
        env = dict(_need(obj, "environment", "config"))
        etype = env.get("type")
        if etype not in _ENV_KEYS:
            raise ConfigError(f"config.environment.type: {etype!r} is not one of {', '.join(_ENV_KEYS)}")
        _reject_unknown(env, _ENV_KEYS[etype], "config.environment")
        grid = dict(_need(obj, "grid", "config"))
        _reject_unknown(grid, _GRID_KEYS[kind], "config.grid")
        if kind == "custom":
            for i, cell in enumerate(_need(grid, "cells", "config.grid")):
                _reject_unknown(cell, _CELL_KEYS, f"config.grid.cells[{i}]")
        estimators = obj.get("estimators", ["diff"])
        if isinstance(estimators, str):
            estimators = [e for e in estimators.split(",") if e]
        if not estimators:
            raise ConfigError("config.estimators: at least one estimator is required")
        reps = obj.get("repetitions", 100)
        if not isinstance(reps, int) or reps < 1:
            raise ConfigError("config.repetitions: must be an integer >= 1")
        props = obj.get("propensities", "exact")
        if props not in PROPENSITY_MODES:
            raise ConfigError(f"config.propensities: {props!r} is not one of {', '.join(PROPENSITY_MODES)}")
        alpha = float(obj.get("alpha", 0.05))
        if not 0 < alpha < 1:
            raise ConfigError("config.alpha: must lie in (0, 1)")
        cfg = cls(
            kind=kind,
            environment=env,
            estimators=tuple(str(e) for e in estimators),
            grid=grid,
            repetitions=reps,
            master_seed=int(obj.get("master_seed", 0)),
            alpha=alpha,
            propensities=props,
            oracle_reps=int(obj.get("oracle_reps", 200_000)),
            output=dict(obj.get("output", {})),
            description=str(obj.get("description", "")),
        )
        for ident in cfg.estimators:
            _check_estimator_id(ident)
        expand_cells(cfg)  # surface grid errors early
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(obj)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": self.schema_version,
            "kind": self.kind,
            "description": self.description,
            "environment": copy.deepcopy(self.environment),
            "estimators": list(self.estimators),
            "grid": copy.deepcopy(self.grid),
            "repetitions": self.repetitions,
            "master_seed": self.master_seed,
            "alpha": self.alpha,
            "propensities": self.propensities,
            "oracle_reps": self.oracle_reps,
            "output": dict(self.output),
        }

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(changes)
        return ExperimentConfig.from_dict(d)


def _check_estimator_id(ident: str) -> None:
    key = ident.strip().lower()
    if key in ("diff", "ips", "mixture"):
        return
    if key == "diffq":
        raise ConfigError("estimator 'diffq' is reserved and has no implementation")
    parts = key.split(":")
    if parts[0] == "fstar_robust" and len(parts) == 3 and parts[2] == "sigma":
        NoiseModel.parse(parts[1])
        return
    try:
        parse_transform_id(ident, 1.0)
    except ValueError as exc:
        raise ConfigError(f"config.estimators: {exc}") from exc


# -- environments --------------------------------------------------------------


@dataclass(frozen=True)
class BanditEnv:
    spec: BanditSpec
    distance: float

    n_actions = property(lambda self: self.spec.K)

    @property
    def policies(self) -> tuple[PolicyModel, PolicyModel]:
        return self.spec.policy_A, self.spec.policy_B

    def simulate(self, n_A: int, n_B: int, seed) -> Dataset:
        return simulate_bandit(self.spec, n_A, n_B, seed)

    def oracle(self, reps: int, seed) -> tuple[float, float]:
        return true_improvement_bandit(self.spec), 0.0


@dataclass(frozen=True)
class BoredomEnv:
    spec: BoredomSpec
    pi_A: PolicyModel
    pi_B: PolicyModel

    n_actions = property(lambda self: self.spec.K)

    @property
    def policies(self) -> tuple[PolicyModel, PolicyModel]:
        return self.pi_A, self.pi_B

    def simulate(self, n_A: int, n_B: int, seed) -> Dataset:
        return simulate_boredom_ab(self.spec, self.pi_A, self.pi_B, n_A, n_B, seed)

    def oracle(self, reps: int, seed) -> tuple[float, float]:
        return true_improvement_mc(self.spec, self.pi_A, self.pi_B, reps, seed)


@dataclass(frozen=True)
class EpsilonEnv:
    pi_A: TabularPolicy
    pi_B: TabularPolicy
    env: Any

    n_actions = 2

    @property
    def policies(self) -> tuple[PolicyModel, PolicyModel]:
        return self.pi_A, self.pi_B

    def simulate(self, n_A: int, n_B: int, seed) -> Dataset:
        return self.env.simulate(self.pi_A, self.pi_B, n_A, n_B, seed)

    def oracle(self, reps: int, seed) -> tuple[float, float]:
        return self.env.true_improvement(self.pi_A, self.pi_B), 0.0


def _bandit_env(env: Mapping[str, Any], pair: Mapping[str, Any] | None = None, *, identical: bool = False) -> BanditEnv:
    pair = dict(pair if pair is not None else env.get("pair", {"distance_hint": 0.27}))
    try:
        pair_spec = PolicyPairSpec.from_dict(pair)
        a, b, _ = make_policy_pair(pair_spec, seed=int(env.get("pair_seed", DEFAULT_PAIR_SEED)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.environment.pair: {exc}") from exc
    if identical:
        b = a
    p = env.get("p")
    if p is None:
        p = DEFAULT_REWARD_PROFILE if a.n_actions == len(DEFAULT_REWARD_PROFILE) else None
    if p is None:
        raise ConfigError("config.environment.p: required when K differs from the default profile length")
    try:
        spec = BanditSpec(p=p, pi_A=a.probs, pi_B=b.probs)
    except ValueError as exc:
        raise ConfigError(f"config.environment: {exc}") from exc
    return BanditEnv(spec, policy_distance(spec.pi_A, spec.pi_B))


def _boredom_env(env: Mapping[str, Any], horizon: int) -> BoredomEnv:
    kw = dict(rho=float(env.get("rho", 0.25)), sigma_noise=float(env.get("sigma_noise", 0.1)), horizon=horizon)
    try:
        if "beta" in env:
            spec = BoredomSpec(beta=env["beta"], s0_low=float(env.get("s0_low", 0.0)),
                               s0_high=float(env.get("s0_high", 1.0)), **kw)
        else:
            spec = BoredomSpec.generate(int(env.get("d", 10)), seed=int(env.get("beta_seed", 0)), **kw)
    except ValueError as exc:
        raise ConfigError(f"config.environment: {exc}") from exc
    return BoredomEnv(
        spec,
        boredom_policy(spec, float(env.get("inv_temp_A", 10.0))),
        boredom_policy(spec, float(env.get("inv_temp_B", 5.0))),
    )


def _epsilon_env(env: Mapping[str, Any], horizon: int) -> EpsilonEnv:
    try:
        a, b, e = epsilon_pair(horizon, float(_need(env, "epsilon", "config.environment")),
                               p_hit=float(env.get("p_hit", 0.9)), p_miss=float(env.get("p_miss", 0.1)))
    except ValueError as exc:
        raise ConfigError(f"config.environment: {exc}") from exc
    return EpsilonEnv(a, b, e)


def env_for(cfg: ExperimentConfig, horizon: int = 1, pair=None, identical: bool = False):
    etype = cfg.environment["type"]
    if etype == "bandit":
        if horizon != 1:
            raise ConfigError("bandit environments have horizon 1")
        return _bandit_env(cfg.environment, pair, identical=identical)
    if etype == "boredom":
        return _boredom_env(cfg.environment, horizon)
    return _epsilon_env(cfg.environment, horizon)


# -- cells -----------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    cell_id: int
    params: dict
    env: Any
    n_A: int
    n_B: int
    sigma: float = 0.0
    horizon: int = 1


def _counts(n_total: int, n_r: float) -> tuple[int, int]:
    n_A = int(round(n_total * n_r / (1.0 + n_r)))
    return n_A, n_total - n_A


def _as_list(value, where: str) -> list:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{where}: expected a nonempty list")
    return list(value)


def expand_cells(cfg: ExperimentConfig) -> list[Cell]:
    g = cfg.grid
    cells: list[Cell] = []

    def add(params, env, n_A, n_B, sigma=0.0, horizon=1):
        if n_A < 2 or n_B < 2:
            raise ConfigError(f"config.grid: every cell needs at least 2 users per arm (got {n_A}, {n_B})")
        if not 0 <= sigma <= 1:
            raise ConfigError(f"config.grid: sigma must lie in [0, 1] (got {sigma})")
        cells.append(Cell(len(cells), params, env, int(n_A), int(n_B), float(sigma), int(horizon)))

    if cfg.kind == "aa_test":
        for n in _as_list(_need(g, "n", "config.grid"), "config.grid.n"):
            add({"n_A": n, "n_B": n}, env_for(cfg, identical=True), n, n)
    elif cfg.kind == "variance_reduction_sweep":
        if cfg.environment["type"] != "bandit":
            raise ConfigError("variance_reduction_sweep needs a bandit environment")
        n_total = int(g.get("n_total", 2000))
        pair = dict(cfg.environment.get("pair", {}))
        for hint in _as_list(_need(g, "distance_hints", "config.grid"), "config.grid.distance_hints"):
            env = env_for(cfg, pair={**pair, "distance_hint": float(hint)})
            for n_r in _as_list(g.get("n_r", [1.0]), "config.grid.n_r"):
                n_A, n_B = _counts(n_total, float(n_r))
                add({"distance_hint": hint, "distance": env.distance, "n_r": n_r, "n_A": n_A, "n_B": n_B},
                    env, n_A, n_B)
    elif cfg.kind == "misspecification_sweep":
        if cfg.environment["type"] != "bandit":
            raise ConfigError("misspecification_sweep needs a bandit environment")
        scen = _need(g, "scenarios", "config.grid")
        if not isinstance(scen, Mapping) or not scen:
            raise ConfigError("config.grid.scenarios: expected a nonempty object of policy-pair specs")
        n_A, n_B = int(g.get("n_A", 1000)), int(g.get("n_B", 1000))
        for name in scen:
            env = env_for(cfg, pair=scen[name])
            for sigma in _as_list(_need(g, "sigma", "config.grid"), "config.grid.sigma"):
                add({"scenario": name, "distance": env.distance, "sigma": sigma, "n_A": n_A, "n_B": n_B},
                    env, n_A, n_B, sigma=float(sigma))
    elif cfg.kind == "boredom_horizon_sweep":
        if cfg.environment["type"] != "boredom":
            raise ConfigError("boredom_horizon_sweep needs a boredom environment")
        n_A, n_B = int(g.get("n_A", 1000)), int(g.get("n_B", 1000))
        for T in _as_list(_need(g, "horizons", "config.grid"), "config.grid.horizons"):
            add({"horizon": T, "n_A": n_A, "n_B": n_B}, env_for(cfg, horizon=int(T)), n_A, n_B, horizon=int(T))
    else:
        for i, c in enumerate(_as_list(_need(g, "cells", "config.grid"), "config.grid.cells")):
            T = int(c.get("horizon", 1))
            n_A, n_B = int(_need(c, "n_A", f"config.grid.cells[{i}]")), int(_need(c, "n_B", f"config.grid.cells[{i}]"))
            sigma = float(c.get("sigma", 0.0))
            params = {"label": c.get("label", ""), "horizon": T, "sigma": sigma, "n_A": n_A, "n_B": n_B}
            add(params, env_for(cfg, horizon=T), n_A, n_B, sigma=sigma, horizon=T)
    return cells


# -- one repetition ------------------------------------------------------------------


def rep_seed(master_seed: int, cell_id: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, cell_id, rep])


def _plugin_policies(cell: Cell, mode: str, data: Dataset) -> tuple[PolicyModel, PolicyModel]:
    pi_A, pi_B = cell.env.policies
    if mode == "learned":
        K = cell.env.n_actions
        return fit_arm(data, "A", K), fit_arm(data, "B", K)
    if mode == "perturbed" or cell.sigma > 0:
        return perturb_uniform_mix(pi_A, cell.sigma), perturb_uniform_mix(pi_B, cell.sigma)
    return pi_A, pi_B


def _transform_for(ident: str, cell: Cell):
    parts = ident.strip().lower().split(":")
    n_r = cell.n_A / cell.n_B
    if parts[0] == "fstar_robust" and len(parts) == 3 and parts[2] == "sigma":
        return FStarRobust(n_r, cell.sigma * cell.horizon * cell.n_A, NoiseModel.parse(parts[1]))
    return parse_transform_id(ident, n_r)


def run_repetition(cell: Cell, rep: int, estimators: Sequence[str], master_seed: int, mode: str) -> list[float]:
    """Point estimates of every estimator on one simulated dataset (nan on failure)."""
    data = cell.env.simulate(cell.n_A, cell.n_B, rep_seed(master_seed, cell.cell_id, rep))
    out = []
    try:
        pa, pb = _plugin_policies(cell, mode, data)
    except OverlapABError:
        return [math.nan if e != "diff" else diff_in_means(data).point_estimate for e in estimators]
    views: dict[Any, Any] = {}

    def view(noise):
        key = None if noise is None else noise.kind
        if key not in views:
            views[key] = build_counterfactual_view(data, pa, pb, noise)
        return views[key]

    for ident in estimators:
        key = ident.strip().lower()
        try:
            if key == "diff":
                value = diff_in_means(data).point_estimate
            elif key == "ips":
                value = ips_view(view(None)).point_estimate
            elif key == "mixture":
                value = mixture_view(view(None)).point_estimate
            else:
                f = _transform_for(ident, cell)
                value = f_estimate_view(view(f.noise if f.needs_noise else None), f).point_estimate
        except OverlapABError:
            value = math.nan
        out.append(float(value))
    return out


def _run_chunk(args) -> list[list[float]]:
    cell, reps, estimators, master_seed, mode = args
    return [run_repetition(cell, r, estimators, master_seed, mode) for r in reps]


# -- results -------------------------------------------------------------------------


@dataclass
class CellResult:
    cell: Cell
    estimators: tuple[str, ...]
    estimates: np.ndarray  # (reps, n_estimators)
    oracle: float | None
    oracle_se: float | None
    flag: str = ""

    def column(self, ident: str) -> np.ndarray:
        return self.estimates[:, self.estimators.index(ident)]

    def metrics(self, ident: str) -> dict[str, float]:
        x = self.column(ident)
        ok = x[np.isfinite(x)]
        mean = float(np.mean(ok)) if ok.size else math.nan
        var = float(np.var(ok, ddof=1)) if ok.size > 1 else math.nan
        mse = float(np.mean((ok - self.oracle) ** 2)) if (self.oracle is not None and ok.size) else math.nan
        return {"mean": mean, "var": var, "mse": mse, "n_ok": int(ok.size), "n_failed": int(x.size - ok.size)}

    def v_r(self, ident: str) -> float:
        return guarded_ratio(self.metrics("diff")["var"], self.metrics(ident)["var"])

    def mse_r(self, ident: str) -> float:
        return guarded_ratio(self.metrics("diff")["mse"], self.metrics(ident)["mse"])


def guarded_ratio(num: float, den: float) -> float:
    if math.isnan(num) or math.isnan(den):
        return math.nan
    if den < RATIO_GUARD:
        return math.inf
    return num / den


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: list[CellResult]

    def cell(self, **params) -> CellResult:
        for c in self.cells:
            if all(c.cell.params.get(k) == v for k, v in params.items()):
                return c
        raise KeyError(params)


def _estimator_list(cfg: ExperimentConfig) -> tuple[str, ...]:
    ids = list(dict.fromkeys(cfg.estimators))
    if "diff" not in ids:
        ids.insert(0, "diff")
    return tuple(ids)


def run_experiment(cfg: ExperimentConfig, workers: int = 1, chunk: int = 50) -> ExperimentResult:
    """Run every cell; results are identical for any ``workers``."""
    estimators = _estimator_list(cfg)
    results = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for cell in expand_cells(cfg):
            reps = list(range(cfg.repetitions))
            jobs = [(cell, reps[i:i + chunk], estimators, cfg.master_seed, cfg.propensities)
                    for i in range(0, len(reps), chunk)]
            chunks = pool.map(_run_chunk, jobs) if pool else map(_run_chunk, jobs)
            rows = [row for part in chunks for row in part]
            oracle = oracle_se = None
            flag = ""
            try:
                oracle, oracle_se = cell.env.oracle(cfg.oracle_reps, rep_seed(cfg.master_seed, cell.cell_id, 10**9))
            except (OverlapABError, ValueError) as exc:
                flag = f"oracle unavailable: {exc}"
            results.append(CellResult(cell, estimators, np.asarray(rows, dtype=float), oracle, oracle_se, flag))
    finally:
        if pool:
            pool.shutdown()
    return ExperimentResult(cfg, results)


# -- output ----------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def _param_columns(result: ExperimentResult) -> list[str]:
    cols: list[str] = []
    for c in result.cells:
        for k in c.cell.params:
            if k not in cols:
                cols.append(k)
    return cols


CELL_METRIC_COLUMNS = ["estimator", "oracle", "oracle_se", "mean_estimate", "variance", "mse",
                       "v_r", "mse_r", "n_reps", "n_failed", "flag"]


def cells_csv(result: ExperimentResult) -> str:
    pcols = _param_columns(result)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell_id", *pcols, *CELL_METRIC_COLUMNS])
    for c in result.cells:
        for ident in c.estimators:
            m = c.metrics(ident)
            w.writerow([
                c.cell.cell_id,
                *(_fmt(c.cell.params.get(k)) for k in pcols),
                ident,
                _fmt(c.oracle),
                _fmt(c.oracle_se),
                _fmt(m["mean"]),
                _fmt(m["var"]),
                _fmt(m["mse"]),
                _fmt(c.v_r(ident)),
                _fmt(c.mse_r(ident)),
                m["n_ok"] + m["n_failed"],
                m["n_failed"],
                c.flag,
            ])
    return buf.getvalue()


def long_csv(result: ExperimentResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell_id", "rep", "estimator", "estimate", "error"])
    for c in result.cells:
        for r in range(c.estimates.shape[0]):
            for j, ident in enumerate(c.estimators):
                est = float(c.estimates[r, j])
                err = est - c.oracle if c.oracle is not None else None
                w.writerow([c.cell.cell_id, r, ident, _fmt(est), _fmt(err)])
    return buf.getvalue()


def manifest(result: ExperimentResult, files: Mapping[str, str]) -> dict[str, Any]:
    from . import __version__

    cfg = result.config
    return {
        "package_version": __version__,
        "config": cfg.to_dict(),
        "seed_rule": "repetition r of cell c uses numpy SeedSequence([master_seed, c, r]); "
                     "oracles use SeedSequence([master_seed, c, 1000000000])",
        "estimators": list(_estimator_list(cfg)),
        "cells": [
            {
                "cell_id": c.cell.cell_id,
                "params": c.cell.params,
                "n_A": c.cell.n_A,
                "n_B": c.cell.n_B,
                "sigma": c.cell.sigma,
                "horizon": c.cell.horizon,
                "environment": env_description(c.cell.env),
                "oracle": c.oracle,
                "oracle_se": c.oracle_se,
                "flag": c.flag,
            }
            for c in result.cells
        ],
        "files": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in files.items()},
    }


def env_description(env) -> dict[str, Any]:
    if isinstance(env, BanditEnv):
        return {"type": "bandit", "spec": env.spec.to_dict(), "distance": env.distance}
    if isinstance(env, BoredomEnv):
        return {"type": "boredom", "spec": env.spec.to_dict(), "pi_A": env.pi_A.to_dict(), "pi_B": env.pi_B.to_dict()}
    return {"type": "epsilon_pair", "horizon": env.env.horizon, "pi_A": env.pi_A.to_dict(),
            "pi_B": env.pi_B.to_dict(), "p_hit": env.env.p_hit, "p_miss": env.env.p_miss}


def write_results(result: ExperimentResult, out_dir: str | os.PathLike) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"cells.csv": cells_csv(result), "long.csv": long_csv(result)}
    paths = {}
    for name, text in files.items():
        paths[name] = out / name
        paths[name].write_text(text)
    paths["manifest.json"] = out / "manifest.json"
    paths["manifest.json"].write_text(json.dumps(manifest(result, files), indent=2, sort_keys=True) + "\n")
    return paths


# -- presets -----------------------------------------------------------------------------

_MISSPEC_SCENARIOS = {
    "overlapping": {"distance_hint": 0.27},
    "A_concentrated": {"temp_A": 0.3, "temp_B": 2.0},
    "B_concentrated": {"temp_A": 2.0, "temp_B": 0.3},
}

PRESETS: dict[str, dict[str, Any]] = {
    "aa_test": {
        "schema_version": SCHEMA_VERSION,
        "kind": "aa_test",
        "environment": {"type": "bandit"},
        "estimators": ["diff", "h1", "fstar", "fstar_robust:d3:0.5"],
        "grid": {"n": [1000]},
        "repetitions": 200,
    },
    "variance_reduction_sweep": {
        "schema_version": SCHEMA_VERSION,
        "kind": "variance_reduction_sweep",
        "environment": {"type": "bandit"},
        "estimators": ["diff", "h1", "fstar:1", "fstar"],
        "grid": {"distance_hints": [0.27, 8.0, 80.0], "n_r": [0.25, 1.0, 4.0], "n_total": 2000},
        "repetitions": 500,
    },
    "misspecification_sweep": {
        "schema_version": SCHEMA_VERSION,
        "kind": "misspecification_sweep",
        "environment": {"type": "bandit"},
        "estimators": ["diff", "h1", "fstar", "fstar_robust:d1:sigma", "fstar_robust:d2:sigma",
                       "fstar_robust:d3:sigma"],
        "grid": {"scenarios": _MISSPEC_SCENARIOS, "sigma": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
                 "n_A": 1000, "n_B": 1000},
        "propensities": "perturbed",
        "repetitions": 2000,
    },
    "boredom_horizon_sweep": {
        "schema_version": SCHEMA_VERSION,
        "kind": "boredom_horizon_sweep",
        "environment": {"type": "boredom", "d": 10, "rho": 0.25, "sigma_noise": 0.1, "beta_seed": 0,
                        "inv_temp_A": 10.0, "inv_temp_B": 5.0},
        "estimators": ["diff", "ips", "fstar:1", "fstar_robust:d3:0.5"],
        "grid": {"horizons": [1, 2, 4, 8], "n_A": 1000, "n_B": 1000},
        "propensities": "learned",
        "repetitions": 200,
    },
    "epsilon_pair": {
        "schema_version": SCHEMA_VERSION,
        "kind": "custom",
        "environment": {"type": "epsilon_pair", "epsilon": 0.05},
        "estimators": ["diff", "fstar:1"],
        "grid": {"cells": [{"horizon": T, "n_A": 1000, "n_B": 1000} for T in (5, 20, 80)]},
        "repetitions": 200,
    },
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    d = copy.deepcopy(PRESETS[name])
    d.update(overrides)
    return ExperimentConfig.from_dict(d)
