"""Bounded importance-weight transforms and propensity-noise models.

A transform ``f`` maps a prefix weight ``x = pi_A(tau_t) / pi_B(tau_t)`` in
``[0, inf]`` to a real number. It is used twice by the improvement
estimator: as ``f(x)`` on B-arm prefixes and through the correction
coefficient ``1 - wbar * (1 + f(1 / wbar))`` on A-arm prefixes, where
``wbar = 1 / x``. :meth:`WeightTransform.correction` computes the latter with
the limit at ``wbar = 0`` made explicit.

Condition flags:

* C1: ``f(0) = -1`` (unbiasedness)
* C2: ``f(1) = 0`` (no variance on identical policies)
* C3: ``-1 <= f(x) <= min(2x - 1, 1)`` (variance surrogate below difference-in-means)
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

CONDITION_TOL = 1e-12

# 4096 log-spaced points plus 0, 1 and +inf.
DEFAULT_GRID = np.unique(np.concatenate([[0.0, 1.0], np.logspace(-8, 12, 4096), [np.inf]]))


class NoiseKind(str, enum.Enum):
    constant_one = "constant_one"
    abs_ratio_minus_one = "abs_ratio_minus_one"
    clipped_log = "clipped_log"


_NOISE_ALIASES = {
    "d1": NoiseKind.constant_one,
    "delta1": NoiseKind.constant_one,
    "const": NoiseKind.constant_one,
    "d2": NoiseKind.abs_ratio_minus_one,
    "delta2": NoiseKind.abs_ratio_minus_one,
    "abs": NoiseKind.abs_ratio_minus_one,
    "d3": NoiseKind.clipped_log,
    "delta3": NoiseKind.clipped_log,
    "log": NoiseKind.clipped_log,
}


@dataclass(frozen=True)
class NoiseModel:
    """Per-step misspecification magnitude as a function of the step ratio.

    The ratio is ``pi_A(a|s) / pi_B(a|s)``, the same orientation as the
    transform argument.
    """

    kind: NoiseKind

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))

    @classmethod
    def parse(cls, name: str) -> "NoiseModel":
        key = name.strip().lower()
        return cls(_NOISE_ALIASES.get(key, key))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is NoiseKind.constant_one:
            out = np.ones_like(x)
        elif self.kind is NoiseKind.abs_ratio_minus_one:
            out = np.abs(x - 1.0)
        else:
            with np.errstate(divide="ignore"):
                out = np.minimum(np.abs(np.log(x)), 1.0)
        return float(out) if out.ndim == 0 else out

    def __str__(self) -> str:
        return self.kind.value


def eval_noise(model: NoiseModel, x):
    return model(x)


class WeightTransform:
    """Base class: subclasses implement ``_finite`` and ``_at_inf``."""

    kind: str = "custom"
    needs_noise: bool = False
    bound: float = math.inf

    def _finite(self, x: np.ndarray, noise: np.ndarray | None) -> np.ndarray:
        raise NotImplementedError

    def _at_inf(self, noise: np.ndarray | None) -> np.ndarray:
        raise NotImplementedError

    def _init_flags(self) -> None:
        self.satisfies_c1, self.satisfies_c2, self.satisfies_c3 = check_conditions(self)

    def evaluate(self, x, noise=None) -> np.ndarray:
        """Vectorised ``f(x)``; ``noise`` is the cumulative prefix noise."""
        x = np.asarray(x, dtype=float)
        if self.needs_noise and noise is None:
            raise ValueError(f"{self.name} needs the cumulative noise of each prefix")
        if noise is not None:
            noise = np.broadcast_to(np.asarray(noise, dtype=float), x.shape)
        if np.any(x < 0) or np.any(np.isnan(x)):
            raise ValueError("weights must lie in [0, +inf]")
        out = np.empty(x.shape)
        fin = np.isfinite(x)
        out[fin] = self._finite(x[fin], None if noise is None else noise[fin])
        if not fin.all():
            out[~fin] = self._at_inf(None if noise is None else noise[~fin])
        return out

    def __call__(self, x, cumulative_noise=None):
        out = self.evaluate(x, cumulative_noise)
        return float(out) if out.ndim == 0 else out

    def correction(self, wbar, noise=None) -> np.ndarray:
        """A-arm coefficient ``1 - wbar * (1 + f(1/wbar))``.

        ``wbar = 0`` gives 1 because ``f`` is bounded.
        """
        wbar = np.asarray(wbar, dtype=float)
        if noise is not None:
            noise = np.broadcast_to(np.asarray(noise, dtype=float), wbar.shape)
        out = np.ones(wbar.shape)
        pos = wbar > 0
        if pos.any():
            with np.errstate(divide="ignore", over="ignore"):
                x = 1.0 / wbar[pos]
            fx = self.evaluate(x, None if noise is None else noise[pos])
            out[pos] = 1.0 - wbar[pos] * (1.0 + fx)
        return out

    def single_step(self, x) -> np.ndarray:
        """``f(x)`` with the noise of a one-step prefix whose ratio is ``x``."""
        if not self.needs_noise:
            return self.evaluate(x)
        noise_model = getattr(self, "noise", None)
        x = np.asarray(x, dtype=float)
        noise = np.zeros_like(x) if noise_model is None else noise_model(x)
        return self.evaluate(x, noise)

    @property
    def flags(self) -> tuple[bool, bool, bool]:
        return self.satisfies_c1, self.satisfies_c2, self.satisfies_c3

    @property
    def name(self) -> str:
        return self.kind

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name}>"


class ConstantMinusOne(WeightTransform):
    """``h_minus(x) = -1``; recovers difference-in-means."""

    kind = "constant_minus_one"
    bound = 1.0

    def __init__(self):
        self._init_flags()

    def _finite(self, x, noise):
        return np.full(x.shape, -1.0)

    def _at_inf(self, noise):
        return -1.0

    @property
    def name(self) -> str:
        return "diff"


class HPlus(WeightTransform):
    """Upper edge of the C3 region, ``min(2x - 1, 1)``."""

    kind = "h_plus"
    bound = 1.0

    def __init__(self):
        self._init_flags()

    def _finite(self, x, noise):
        return np.minimum(2.0 * x - 1.0, 1.0)

    def _at_inf(self, noise):
        return 1.0

    @property
    def name(self) -> str:
        return "hplus"


class H1(WeightTransform):
    """Clipped IPS weight for improvements, ``min(x - 1, 1)``."""

    kind = "h1"
    bound = 1.0

    def __init__(self):
        self._init_flags()

    def _finite(self, x, noise):
        return np.minimum(x - 1.0, 1.0)

    def _at_inf(self, noise):
        return 1.0


class FStar(WeightTransform):
    """Surrogate-optimal ``(x - 1) / (n_r x + 1)`` for allocation ratio ``n_r = n_A / n_B``."""

    kind = "f_star"

    def __init__(self, n_r: float):
        if not n_r > 0 or not math.isfinite(n_r):
            raise ValueError(f"n_r must be a positive real, got {n_r}")
        self.n_r = float(n_r)
        self.bound = max(1.0, 1.0 / self.n_r)
        self._init_flags()

    def _finite(self, x, noise):
        return (x - 1.0) / (self.n_r * x + 1.0)

    def _at_inf(self, noise):
        return 1.0 / self.n_r

    @property
    def name(self) -> str:
        return f"fstar:{self.n_r:g}"


class FStarRobust(WeightTransform):
    """Misspecification-aware optimum.

    ``f(x) = ((1 - g) x - 1) / ((n_r + g) x + 1)`` with
    ``g = lambda_eff * D**2``, ``D`` the cumulative prefix noise. With
    ``absorbed=False`` the coefficient is ``lambda_eff * horizon * n_A * D**2``.
    """

    kind = "f_star_robust"
    needs_noise = True

    def __init__(
        self,
        n_r: float,
        lambda_eff: float,
        noise: NoiseModel | str | None = None,
        *,
        absorbed: bool = True,
        horizon: int | None = None,
        n_A: int | None = None,
    ):
        if not n_r > 0 or not math.isfinite(n_r):
            raise ValueError(f"n_r must be a positive real, got {n_r}")
        if not lambda_eff >= 0:
            raise ValueError(f"lambda_eff must be nonnegative, got {lambda_eff}")
        if not absorbed and (horizon is None or n_A is None):
            raise ValueError("the unabsorbed parameterisation needs horizon and n_A")
        self.n_r = float(n_r)
        self.lambda_eff = float(lambda_eff)
        self.noise = NoiseModel.parse(noise) if isinstance(noise, str) else noise
        self.absorbed = absorbed
        self.scale = self.lambda_eff if absorbed else self.lambda_eff * horizon * n_A
        self.bound = max(1.0, 1.0 / self.n_r)
        self._init_flags()

    def gamma(self, noise) -> np.ndarray:
        noise = np.asarray(noise, dtype=float)
        with np.errstate(invalid="ignore"):
            g = self.scale * noise**2
        # 0 * inf: no weight on the noise term at all
        return np.where(self.scale == 0, 0.0, g)

    def _finite(self, x, noise):
        g = self.gamma(noise)
        out = np.full(x.shape, -1.0)
        ok = np.isfinite(g)
        xs, gs = x[ok], g[ok]
        out[ok] = ((1.0 - gs) * xs - 1.0) / ((self.n_r + gs) * xs + 1.0)
        return out

    def _at_inf(self, noise):
        g = self.gamma(noise)
        out = np.full(np.shape(g), -1.0)
        ok = np.isfinite(g)
        out[ok] = (1.0 - g[ok]) / (self.n_r + g[ok])
        return out

    @property
    def name(self) -> str:
        noise = self.noise.kind.value if self.noise else "none"
        return f"fstar_robust:{noise}:{self.lambda_eff:g}"


class CustomTransform(WeightTransform):
    """Closed-form transform from a vectorised callable.

    ``limit`` is the value at ``+inf``; by default ``func(1e12)``.
    """

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], *, limit: float | None = None,
                 bound: float | None = None, name: str = "custom"):
        self.func = func
        self.limit = float(func(np.array([1e12]))[0]) if limit is None else float(limit)
        self._name = name
        if bound is None:
            vals = self.evaluate(DEFAULT_GRID)
            bound = float(np.max(np.abs(vals)))
        self.bound = bound
        self._init_flags()

    def _finite(self, x, noise):
        return np.asarray(self.func(x), dtype=float)

    def _at_inf(self, noise):
        return self.limit

    @property
    def name(self) -> str:
        return self._name


class TabulatedTransform(WeightTransform):
    """Piecewise-linear interpolation of ``(xs, ys)``, flat beyond the last knot."""

    def __init__(self, xs: Sequence[float], ys: Sequence[float], name: str = "tabulated"):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or len(xs) < 1:
            raise ValueError("xs and ys must be equal-length vectors")
        if np.any(np.diff(xs) <= 0) or xs[0] < 0 or not np.all(np.isfinite(xs)):
            raise ValueError("xs must be finite, nonnegative and strictly increasing")
        self.xs, self.ys = xs, ys
        self.bound = float(np.max(np.abs(ys)))
        self._name = name
        self._init_flags()

    def _finite(self, x, noise):
        return np.interp(x, self.xs, self.ys)

    def _at_inf(self, noise):
        return self.ys[-1]

    @property
    def name(self) -> str:
        return self._name


class ReverseTransform(WeightTransform):
    """``z(x) = x (1 - f'(1/x)) - 1``: the transform equivalent to running the
    estimator with the roles of the two arms swapped.

    ``z`` is unbounded unless ``f'(0) = 1``; its A-arm correction keeps the
    limit ``f'(0)`` at ``wbar = 0``.
    """

    def __init__(self, f_prime: WeightTransform):
        self.f_prime = f_prime
        self.needs_noise = f_prime.needs_noise
        self.noise = getattr(f_prime, "noise", None)
        fp0 = float(f_prime.single_step(0.0))
        self.bound = 2.0 + f_prime.bound if abs(fp0 - 1.0) <= CONDITION_TOL else math.inf
        self._init_flags()

    def _finite(self, x, noise):
        out = np.full(x.shape, -1.0)
        pos = x > 0
        xp = x[pos]
        out[pos] = xp * (1.0 - self.f_prime.evaluate(1.0 / xp, None if noise is None else noise[pos])) - 1.0
        return out

    def _at_inf(self, noise):
        fp0 = self.f_prime.evaluate(np.zeros(np.shape(noise) if noise is not None else ()), noise)
        big = 1e12
        near = big * (1.0 - self.f_prime.evaluate(np.full(np.shape(fp0), 1.0 / big), noise)) - 1.0
        return np.where(np.abs(fp0 - 1.0) <= CONDITION_TOL, near, np.sign(1.0 - fp0) * np.inf)

    def correction(self, wbar, noise=None) -> np.ndarray:
        wbar = np.asarray(wbar, dtype=float)
        out = super().correction(np.where(wbar == 0, 1.0, wbar), noise)
        zero = wbar == 0
        if zero.any():
            nz = None if noise is None else np.broadcast_to(np.asarray(noise, dtype=float), wbar.shape)[zero]
            out[zero] = self.f_prime.evaluate(np.zeros(int(zero.sum())), nz)
        return out

    @property
    def name(self) -> str:
        return f"reverse({self.f_prime.name})"


class ConvexCombination(WeightTransform):
    """Pointwise ``lam * f + (1 - lam) * g``."""

    def __init__(self, f: WeightTransform, g: WeightTransform, lam: float):
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {lam}")
        self.f, self.g, self.lam = f, g, float(lam)
        self.needs_noise = f.needs_noise or g.needs_noise
        self.noise = getattr(f, "noise", None) or getattr(g, "noise", None)
        self.bound = self.lam * f.bound + (1.0 - self.lam) * g.bound if self.lam not in (0.0, 1.0) else (
            f.bound if self.lam == 1.0 else g.bound
        )
        self._init_flags()

    def _part(self, t: WeightTransform, x, noise):
        return t.evaluate(x, noise if t.needs_noise else None)

    def _mix(self, a, b):
        if self.lam == 1.0:
            return a
        if self.lam == 0.0:
            return b
        return self.lam * a + (1.0 - self.lam) * b

    def _finite(self, x, noise):
        return self._mix(self._part(self.f, x, noise), self._part(self.g, x, noise))

    def _at_inf(self, noise):
        x = np.full(np.shape(noise) if noise is not None else (), np.inf)
        return self._mix(self._part(self.f, x, noise), self._part(self.g, x, noise))

    def correction(self, wbar, noise=None) -> np.ndarray:
        cf = self.f.correction(wbar, noise if self.f.needs_noise else None)
        cg = self.g.correction(wbar, noise if self.g.needs_noise else None)
        return self._mix(cf, cg)

    @property
    def name(self) -> str:
        return f"convex({self.f.name},{self.g.name},{self.lam:g})"


def reverse_transform(f_prime: WeightTransform) -> ReverseTransform:
    return ReverseTransform(f_prime)


def convex_combine(f: WeightTransform, g: WeightTransform, lam: float) -> ConvexCombination:
    return ConvexCombination(f, g, lam)


def eval_transform(f: WeightTransform, x: float, cumulative_noise: float | None = None) -> float:
    return f(x, cumulative_noise)


def check_conditions(f: WeightTransform, grid: np.ndarray | None = None) -> tuple[bool, bool, bool]:
    """Numerically check C1, C2 and C3 on ``grid`` (default: :data:`DEFAULT_GRID`).

    Noise-dependent transforms are checked along their one-step curve.
    """
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0 or not np.any(grid == 0) or not np.any(grid == 1) or grid.max() < 100:
        raise ValueError("grid must contain 0 and 1 and reach at least 100")
    vals = f.single_step(grid)
    c1 = abs(float(f.single_step(0.0)) + 1.0) <= CONDITION_TOL
    c2 = abs(float(f.single_step(1.0))) <= CONDITION_TOL
    with np.errstate(invalid="ignore"):
        upper = np.minimum(2.0 * grid - 1.0, 1.0)
        c3 = bool(np.all((vals >= -1.0 - CONDITION_TOL) & (vals <= upper + CONDITION_TOL)))
    return c1, c2, c3


def parse_transform_id(ident: str, n_r: float) -> WeightTransform:
    """Build a transform from a CLI/config identifier.

    ``diff``, ``hplus``, ``h1``, ``fstar`` (``n_r`` from the data),
    ``fstar:<n_r>`` and ``fstar_robust:<noise>:<lambda_eff>``.
    """
    parts = ident.strip().split(":")
    head = parts[0].lower()
    if head in ("diff", "hminus", "h_minus") and len(parts) == 1:
        return ConstantMinusOne()
    if head in ("hplus", "h_plus") and len(parts) == 1:
        return HPlus()
    if head == "h1" and len(parts) == 1:
        return H1()
    if head == "fstar" and len(parts) <= 2:
        return FStar(float(parts[1]) if len(parts) == 2 else n_r)
    if head == "fstar_robust" and len(parts) == 3:
        return FStarRobust(n_r, float(parts[2]), NoiseModel.parse(parts[1]))
    raise ValueError(f"unknown transform identifier {ident!r}")
