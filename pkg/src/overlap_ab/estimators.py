"""Improvement estimators for two-arm experiments.

Every estimator is an average of independent per-user contributions, one
average per arm. Reports carry those contributions and a CLT interval built
from their empirical variances.

Sign convention for contributions: the point estimate is always
``mean(contributions_A) + mean(contributions_B)``; for difference-in-means the
B contributions are therefore the *negated* reward sums.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from statistics import NormalDist
from typing import Any

import numpy as np

from .core import Dataset, PolicyModel
from .errors import InsufficientDataError, IntervalUnavailableError
from .transforms import NoiseModel, WeightTransform, parse_transform_id
from .view import CounterfactualView, build_counterfactual_view

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05

# Reserved: difference-in-Q-values baseline for Markovian interference (no implementation here).
RESERVED_ESTIMATORS = {"diffq"}


@lru_cache(maxsize=64)
def _z(level: float) -> float:
    return NormalDist().inv_cdf(level)


@dataclass
class ImprovementReport:
    estimator_id: str
    point_estimate: float
    contributions_A: np.ndarray
    contributions_B: np.ndarray
    variance_estimate: float
    n_A: int
    n_B: int
    alpha: float = DEFAULT_ALPHA
    ci_lower: float = math.nan
    ci_upper: float = math.nan
    ci_lower_one_sided: float = math.nan
    warnings: list[str] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def variance_defined(self) -> bool:
        return math.isfinite(self.variance_estimate)

    @property
    def std_error(self) -> float:
        return math.sqrt(self.variance_estimate) if self.variance_defined else math.nan

    def to_dict(self) -> dict[str, Any]:
        return {
            "estimator_id": self.estimator_id,
            "point_estimate": self.point_estimate,
            "variance_estimate": _json_float(self.variance_estimate),
            "variance_defined": self.variance_defined,
            "alpha": self.alpha,
            "ci_lower": _json_float(self.ci_lower),
            "ci_upper": _json_float(self.ci_upper),
            "ci_lower_one_sided": _json_float(self.ci_lower_one_sided),
            "n_A": self.n_A,
            "n_B": self.n_B,
            "contributions_A": self.contributions_A.tolist(),
            "contributions_B": self.contributions_B.tolist(),
            "warnings": list(self.warnings),
            "metadata": dict(self.metadata),
        }

    def csv_row(self, seed: int | None = None) -> dict[str, Any]:
        return {
            "estimator_id": self.estimator_id,
            "point": repr(self.point_estimate),
            "var": repr(self.variance_estimate),
            "ci_lo": repr(self.ci_lower),
            "ci_hi": repr(self.ci_upper),
            "n_A": self.n_A,
            "n_B": self.n_B,
            "seed": "" if seed is None else seed,
        }


CSV_FIELDS = ["estimator_id", "point", "var", "ci_lo", "ci_hi", "n_A", "n_B", "seed"]


def _json_float(x: float):
    return x if math.isfinite(x) else None


def confidence_interval(report: ImprovementReport, alpha: float = DEFAULT_ALPHA) -> tuple[float, float, float]:
    """Normal-approximation interval ``(lower, upper, one_sided_lower)`` at level ``alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not report.variance_defined:
        raise IntervalUnavailableError(
            f"{report.estimator_id}: variance undefined (each contributing arm needs >= 2 users)"
        )
    se = math.sqrt(report.variance_estimate)
    half = _z(1.0 - alpha / 2.0) * se
    return (
        report.point_estimate - half,
        report.point_estimate + half,
        report.point_estimate - _z(1.0 - alpha) * se,
    )


def _make_report(
    estimator_id: str,
    contrib_A: np.ndarray,
    contrib_B: np.ndarray,
    n_A: int,
    n_B: int,
    alpha: float,
    *,
    warnings: list[str] | None = None,
    metadata: dict[str, Any] | None = None,
) -> ImprovementReport:
    point = 0.0
    var = 0.0
    for c in (contrib_A, contrib_B):
        if c.size == 0:
            continue
        point += float(np.mean(c))
        var += float(np.var(c, ddof=1)) / c.size if c.size >= 2 else math.nan
    report = ImprovementReport(
        estimator_id=estimator_id,
        point_estimate=point,
        contributions_A=contrib_A,
        contributions_B=contrib_B,
        variance_estimate=var,
        n_A=n_A,
        n_B=n_B,
        alpha=alpha,
        warnings=list(warnings or []),
        metadata=dict(metadata or {}),
    )
    if report.variance_defined:
        report.ci_lower, report.ci_upper, report.ci_lower_one_sided = confidence_interval(report, alpha)
    else:
        report.warnings.append("variance undefined: an arm has fewer than 2 users")
    return report


def _require_arms(n_A: int, n_B: int, need_A: bool = True, need_B: bool = True) -> None:
    if need_A and n_A < 1:
        raise InsufficientDataError("the A arm is empty")
    if need_B and n_B < 1:
        raise InsufficientDataError("the B arm is empty")


def _split(view: CounterfactualView, per_user: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return per_user[~view.user_is_b], per_user[view.user_is_b]


def _noise_for(view: CounterfactualView, f: WeightTransform) -> np.ndarray | None:
    if not f.needs_noise:
        return None
    if view.cum_noise is None:
        raise ValueError(f"{f.name} needs a noise model; build the view with one")
    return view.cum_noise


# -- estimators on a prepared view -------------------------------------------------


def diff_in_means(data: Dataset, alpha: float = DEFAULT_ALPHA) -> ImprovementReport:
    """Classical ``V_hat(A) - V_hat(B)`` from per-user cumulative rewards."""
    _require_arms(data.n_A, data.n_B)
    sums = data.user_reward_sums()
    return _make_report("diff", sums[~data.is_b], -sums[data.is_b], data.n_A, data.n_B, alpha)


def f_contributions(view: CounterfactualView, f: WeightTransform) -> np.ndarray:
    """Per-user contribution of the f-estimator (A users: corrected sums, B users: f-weighted sums)."""
    noise = _noise_for(view, f)
    b = view.is_b
    coef = np.empty(len(b))
    coef[b] = f.evaluate(view.ratio[b], None if noise is None else noise[b])
    coef[~b] = f.correction(view.weight[~b], None if noise is None else noise[~b])
    return view.per_user(coef * view.rewards)


def f_estimate_view(view: CounterfactualView, f: WeightTransform, alpha: float = DEFAULT_ALPHA,
                    estimator_id: str | None = None) -> ImprovementReport:
    _require_arms(view.n_A, view.n_B)
    warn = []
    if not f.satisfies_c1:
        warn.append(f"{f.name} violates f(0) = -1: the estimate is biased in general")
        logger.warning(warn[-1])
    cA, cB = _split(view, f_contributions(view, f))
    return _make_report(estimator_id or f.name, cA, cB, view.n_A, view.n_B, alpha, warnings=warn,
                        metadata={"transform": f.name})


def ips_view(view: CounterfactualView, alpha: float = DEFAULT_ALPHA) -> ImprovementReport:
    _require_arms(view.n_A, view.n_B, need_A=False)
    b = view.is_b
    coef = np.zeros(len(b))
    coef[b] = view.ratio[b] - 1.0
    _, cB = _split(view, view.per_user(coef * view.rewards))
    return _make_report("ips", np.zeros(0), cB, view.n_A, view.n_B, alpha)


def mixture_view(view: CounterfactualView, alpha: float = DEFAULT_ALPHA) -> ImprovementReport:
    """Pooled-data IPS under the allocation mixture ``beta pi_A + (1 - beta) pi_B``."""
    _require_arms(view.n_A, view.n_B)
    n_A, n_B = view.n_A, view.n_B
    n_U = n_A + n_B
    beta = n_A / n_U
    b = view.is_b
    term = np.empty(len(b))
    x = view.ratio[b]  # (pi_A - pi_B) / pi_beta with both divided by pi_B
    term[b] = (x - 1.0) / (beta * x + (1.0 - beta))
    w = view.weight[~b]  # divided by pi_A
    term[~b] = (1.0 - w) / (beta + (1.0 - beta) * w)
    per_user = view.per_user(term * view.rewards)
    # scale so that the arm means add up to the pooled average
    scale = np.where(view.user_is_b, n_B / n_U, n_A / n_U)
    cA, cB = _split(view, per_user * scale)
    return _make_report("mixture", cA, cB, n_A, n_B, alpha)


def reverse_f_view(view: CounterfactualView, f_prime: WeightTransform, alpha: float = DEFAULT_ALPHA) -> ImprovementReport:
    """Roles swapped: ``f'``-weighted IPS on A data, corrected with B data."""
    _require_arms(view.n_A, view.n_B)
    noise = _noise_for(view, f_prime)
    b = view.is_b
    coef = np.empty(len(b))
    coef[~b] = f_prime.evaluate(view.weight[~b], None if noise is None else noise[~b])
    x = view.ratio[b]
    inner = np.full(x.shape, -1.0)
    pos = x > 0  # x = 0 kills the bounded bracket
    xp = x[pos]
    fp = f_prime.evaluate(1.0 / xp, None if noise is None else noise[b][pos])
    inner[pos] = xp * (1.0 - fp) - 1.0
    coef[b] = inner
    cA, cB = _split(view, view.per_user(coef * view.rewards))
    return _make_report(f"reverse:{f_prime.name}", cA, cB, view.n_A, view.n_B, alpha)


def variance_surrogate_view(view: CounterfactualView, f: WeightTransform) -> float:
    """Plug-in variance surrogate: per-arm mean of summed squared terms, divided by arm size."""
    _require_arms(view.n_A, view.n_B)
    noise = _noise_for(view, f)
    b = view.is_b
    sq = np.empty(len(b))
    sq[b] = f.evaluate(view.ratio[b], None if noise is None else noise[b]) ** 2
    sq[~b] = f.correction(view.weight[~b], None if noise is None else noise[~b]) ** 2
    per_user = view.per_user(sq * view.rewards**2)
    sA, sB = _split(view, per_user)
    return float(np.mean(sB)) / view.n_B + float(np.mean(sA)) / view.n_A


# -- dataset-level entry points -----------------------------------------------------


def _view(data, pi_A, pi_B, noise=None, noise_policies=None) -> CounterfactualView:
    return build_counterfactual_view(data, pi_A, pi_B, noise, noise_policies=noise_policies)


def _noise_model(f: WeightTransform, noise: NoiseModel | None) -> NoiseModel | None:
    if noise is not None:
        return noise
    return getattr(f, "noise", None) if f.needs_noise else None


def ips_improvement(data: Dataset, pi_A: PolicyModel, pi_B: PolicyModel, alpha: float = DEFAULT_ALPHA) -> ImprovementReport:
    """Naive IPS on B data: ``mean_B sum_t (w_t - 1) r_t`` with ``w = pi_A / pi_B``."""
    _require_arms(data.n_A, data.n_B, need_A=False)
    return ips_view(_view(data, pi_A, pi_B), alpha)


def f_estimate(
    data: Dataset,
    pi_A: PolicyModel,
    pi_B: PolicyModel,
    f: WeightTransform,
    noise: NoiseModel | None = None,
    *,
    noise_policies: tuple[PolicyModel, PolicyModel] | None = None,
    alpha: float = DEFAULT_ALPHA,
) -> ImprovementReport:
    """The f-regularised IPS on B data plus its bias correction on A data.

    ``noise`` overrides the noise model carried by a robust transform.
    """
    _require_arms(data.n_A, data.n_B)
    model = _noise_model(f, noise)
    if f.needs_noise and model is None:
        raise ValueError(f"{f.name} needs a noise model")
    return f_estimate_view(_view(data, pi_A, pi_B, model, noise_policies), f, alpha)


def f_estimate_mixture_form(data: Dataset, pi_A: PolicyModel, pi_B: PolicyModel,
                            alpha: float = DEFAULT_ALPHA) -> ImprovementReport:
    _require_arms(data.n_A, data.n_B)
    return mixture_view(_view(data, pi_A, pi_B), alpha)


def reverse_f_estimate(data: Dataset, pi_A: PolicyModel, pi_B: PolicyModel, f_prime: WeightTransform,
                       noise: NoiseModel | None = None, alpha: float = DEFAULT_ALPHA) -> ImprovementReport:
    _require_arms(data.n_A, data.n_B)
    model = _noise_model(f_prime, noise)
    if f_prime.needs_noise and model is None:
        raise ValueError(f"{f_prime.name} needs a noise model")
    return reverse_f_view(_view(data, pi_A, pi_B, model), f_prime, alpha)


def variance_surrogate_empirical(data: Dataset, pi_A: PolicyModel, pi_B: PolicyModel, f: WeightTransform,
                                 noise: NoiseModel | None = None) -> float:
    _require_arms(data.n_A, data.n_B)
    model = _noise_model(f, noise)
    return variance_surrogate_view(_view(data, pi_A, pi_B, model), f)


# -- exact bandit surrogate ----------------------------------------------------------


def surrogate_from_values(pi_A: np.ndarray, pi_B: np.ndarray, p: np.ndarray, values: np.ndarray,
                          n_A: float, n_B: float) -> float:
    """One-step surrogate when ``f`` takes value ``values[a]`` at the weight of action ``a``.

    Rewards are Bernoulli(``p``), so ``E[r^2] = p``.
    """
    pi_A, pi_B, p, values = (np.asarray(v, dtype=float) for v in (pi_A, pi_B, p, values))
    b_term = np.sum(np.where(pi_B > 0, pi_B * p * values**2, 0.0))
    a_mask = pi_A > 0
    wbar = np.where(a_mask, pi_B / np.where(a_mask, pi_A, 1.0), 0.0)
    corr = 1.0 - wbar * (1.0 + values)
    a_term = np.sum(np.where(a_mask, pi_A * p * corr**2, 0.0))
    return float(b_term / n_B + a_term / n_A)


def variance_surrogate_exact_bandit(spec, f: WeightTransform, n_A: float, n_B: float) -> float:
    """Exact surrogate for a one-step bandit by enumerating actions and reward outcomes."""
    pi_A = np.asarray(spec.pi_A, dtype=float)
    pi_B = np.asarray(spec.pi_B, dtype=float)
    p = np.asarray(spec.p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("reward probabilities must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(pi_B > 0, pi_A / pi_B, np.inf)
    noise_model = getattr(f, "noise", None)
    noise = None
    if f.needs_noise:
        noise = noise_model(x) if noise_model is not None else np.zeros_like(x)
    # B side uses f(x); A side the correction at wbar = 1/x
    b_vals = np.where(pi_B > 0, f.evaluate(np.where(pi_B > 0, x, 0.0), noise), 0.0)
    with np.errstate(divide="ignore"):
        wbar = np.where(pi_A > 0, pi_B / np.where(pi_A > 0, pi_A, 1.0), 0.0)
    corr = f.correction(wbar, noise)
    b_term = np.sum(pi_B * p * b_vals**2)
    a_term = np.sum(np.where(pi_A > 0, pi_A * p * corr**2, 0.0))
    return float(b_term / n_B + a_term / n_A)


# -- identifier dispatch -------------------------------------------------------------


def estimate_by_id(
    ident: str,
    data: Dataset,
    pi_A: PolicyModel,
    pi_B: PolicyModel,
    alpha: float = DEFAULT_ALPHA,
    *,
    view: CounterfactualView | None = None,
    noise_policies: tuple[PolicyModel, PolicyModel] | None = None,
) -> ImprovementReport:
    """Run the estimator named ``ident`` (``diff``, ``ips``, ``mixture`` or a transform id)."""
    key = ident.strip().lower()
    if key in RESERVED_ESTIMATORS:
        raise NotImplementedError(f"{ident!r} is a reserved external baseline without an implementation")
    if key == "diff":
        return diff_in_means(data, alpha)
    if key == "ips":
        return ips_view(view or _view(data, pi_A, pi_B), alpha)
    if key == "mixture":
        return mixture_view(view or _view(data, pi_A, pi_B), alpha)
    _require_arms(data.n_A, data.n_B)
    f = parse_transform_id(ident, data.n_A / data.n_B)
    noise = getattr(f, "noise", None) if f.needs_noise else None
    if view is None or (noise is not None and view.noise != noise):
        view = _view(data, pi_A, pi_B, noise, noise_policies)
    return f_estimate_view(view, f, alpha, estimator_id=ident)
