"""Synthetic environments, policy-pair construction and improvement oracles.

Randomness: every simulator takes ``seed`` as an int or a
:class:`numpy.random.SeedSequence`. Each arm draws from its own child
stream, and inside an arm user ``i`` always consumes row ``i`` of every
block of draws, so a dataset depends only on ``(spec, counts, seed)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .core import Arm, Dataset, PolicyModel, SoftmaxLinearPolicy, TabularPolicy
from .errors import CalibrationError

SIMPLEX_TOL = 1e-9

# Sparse success profile for ten actions: most arms rarely pay off.
DEFAULT_REWARD_PROFILE = (0.02, 0.03, 0.05, 0.04, 0.08, 0.06, 0.10, 0.03, 0.25, 0.40)


def as_seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    if isinstance(seed, (list, tuple)):
        return np.random.SeedSequence([int(s) for s in seed])
    return np.random.SeedSequence(int(seed))


def child_stream(seed, *key: int) -> np.random.Generator:
    """Generator for the sub-stream ``key`` of ``seed`` (no spawn-counter state)."""
    seq = as_seed_sequence(seed)
    child = np.random.SeedSequence(seq.entropy, spawn_key=tuple(seq.spawn_key) + tuple(int(k) for k in key))
    return np.random.default_rng(child)


def _check_simplex(name: str, v: np.ndarray) -> None:
    if v.ndim != 1 or np.any(v < 0) or abs(v.sum() - 1.0) > SIMPLEX_TOL or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be a probability vector")


def _arm_ids(prefix: str, n: int) -> list[str]:
    return [f"{prefix}{i:06d}" for i in range(n)]


# -- bandit -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BanditSpec:
    """Single-step, single-state problem with Bernoulli rewards.

    ``p[a]`` is the success probability of action ``a``; ``pi_A`` / ``pi_B``
    are the two policies as probability vectors.
    """

    p: np.ndarray
    pi_A: np.ndarray
    pi_B: np.ndarray

    def __post_init__(self):
        for name in ("p", "pi_A", "pi_B"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.p.ndim != 1 or np.any(~np.isfinite(self.p)) or np.any((self.p < 0) | (self.p > 1)):
            raise ValueError("p must be a vector in [0, 1]^K")
        _check_simplex("pi_A", self.pi_A)
        _check_simplex("pi_B", self.pi_B)
        if not len(self.p) == len(self.pi_A) == len(self.pi_B):
            raise ValueError("p, pi_A and pi_B must have the same length")

    @property
    def K(self) -> int:
        return len(self.p)

    @property
    def policy_A(self) -> TabularPolicy:
        return TabularPolicy(self.pi_A)

    @property
    def policy_B(self) -> TabularPolicy:
        return TabularPolicy(self.pi_B)

    def to_dict(self) -> dict[str, Any]:
        return {"p": self.p.tolist(), "pi_A": self.pi_A.tolist(), "pi_B": self.pi_B.tolist()}

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "BanditSpec":
        return cls(p=obj["p"], pi_A=obj["pi_A"], pi_B=obj["pi_B"])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BanditSpec):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("p", "pi_A", "pi_B"))


def simulate_bandit_arm(probs: np.ndarray, p: np.ndarray, n: int, rng: np.random.Generator):
    """Actions, rewards and propensities of ``n`` one-step users."""
    u = rng.random((n, 2))
    cdf = np.cumsum(probs)
    actions = np.minimum((u[:, :1] >= cdf[None, :-1]).sum(axis=1), len(probs) - 1).astype(np.int64)
    rewards = (u[:, 1] < p[actions]).astype(float)
    return actions, rewards, probs[actions]


def simulate_bandit(spec: BanditSpec, n_A: int, n_B: int, seed) -> Dataset:
    """One-step trajectories: A users first, then B users."""
    if n_A < 0 or n_B < 0:
        raise ValueError("user counts must be nonnegative")
    if n_A + n_B == 0:
        return Dataset.empty()
    parts = []
    for idx, (arm, probs, n) in enumerate(((Arm.A, spec.pi_A, n_A), (Arm.B, spec.pi_B, n_B))):
        parts.append(simulate_bandit_arm(probs, spec.p, n, child_stream(seed, idx)))
    n = n_A + n_B
    return Dataset(
        user_ids=_arm_ids("A", n_A) + _arm_ids("B", n_B),
        arms=np.r_[np.zeros(n_A, bool), np.ones(n_B, bool)],
        offsets=np.arange(n + 1),
        states=np.zeros((n, 0)),
        actions=np.concatenate([parts[0][0], parts[1][0]]),
        rewards=np.concatenate([parts[0][1], parts[1][1]]),
        logged_propensities=np.concatenate([parts[0][2], parts[1][2]]),
    )


def true_improvement_bandit(spec: BanditSpec) -> float:
    return float(np.dot(spec.pi_A - spec.pi_B, spec.p))


def default_bandit_spec(pi_A, pi_B, p: Sequence[float] | None = None) -> BanditSpec:
    return BanditSpec(p=DEFAULT_REWARD_PROFILE if p is None else p, pi_A=pi_A, pi_B=pi_B)


# -- distance and policy pairs ---------------------------------------------


def policy_distance(pi_A, pi_B, *, with_flag: bool = False):
    """Symmetrised chi-square style distance between two action distributions.

    ``0.5 * (E_A[(pi_B/pi_A - 1)^2] + E_B[(pi_A/pi_B - 1)^2])``. Actions where
    an expectation's own policy is zero drop out of that expectation; if the
    supports differ the result is partial (``with_flag=True`` returns the
    flag too).

    >>> round(policy_distance([0.5, 0.5], [0.25, 0.75]), 6)
    0.291667
    """
    a = np.asarray(pi_A, dtype=float)
    b = np.asarray(pi_B, dtype=float)
    _check_simplex("pi_A", a)
    _check_simplex("pi_B", b)
    if a.shape != b.shape:
        raise ValueError("policies must have the same length")
    sa, sb = a > 0, b > 0
    term_A = np.sum((b[sa] - a[sa]) ** 2 / a[sa])
    term_B = np.sum((a[sb] - b[sb]) ** 2 / b[sb])
    value = 0.5 * float(term_A + term_B)
    partial = bool(np.any(sa != sb))
    return (value, partial) if with_flag else value


class PairFamily(str, enum.Enum):
    SOFTMAX_TEMPERATURE = "softmax_temperature"
    EXPLICIT = "explicit"


@dataclass(frozen=True)
class PolicyPairSpec:
    """How to build a pair of action distributions.

    Softmax family: ``pi_X ∝ exp(scores / temp_X)``; a negative temperature
    reverses the preference order and ``inf`` gives the uniform policy. With
    a ``distance_hint`` the temperatures are replaced by ``±2/g`` and the
    gap ``g`` is calibrated by bisection. Missing ``base_scores`` are drawn
    as standard normals from the seed.
    """

    family: PairFamily = PairFamily.SOFTMAX_TEMPERATURE
    K: int = 10
    base_scores: tuple[float, ...] | None = None
    temp_A: float = 1.0
    temp_B: float = 1.0
    distance_hint: float | None = None
    pi_A: tuple[float, ...] | None = None
    pi_B: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", PairFamily(self.family))
        if self.family is PairFamily.EXPLICIT:
            if self.pi_A is None or self.pi_B is None:
                raise ValueError("explicit family needs pi_A and pi_B")
            object.__setattr__(self, "K", len(self.pi_A))
        if self.base_scores is not None:
            object.__setattr__(self, "base_scores", tuple(float(s) for s in self.base_scores))
            object.__setattr__(self, "K", len(self.base_scores))
        if self.K < 2:
            raise ValueError("need at least two actions")
        if self.distance_hint is not None and not self.distance_hint > 0:
            raise ValueError("distance_hint must be positive")
        if self.temp_A == 0 or self.temp_B == 0:
            raise ValueError("temperatures must be nonzero")

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family.value,
            "K": self.K,
            "base_scores": None if self.base_scores is None else list(self.base_scores),
            "temp_A": _enc(self.temp_A),
            "temp_B": _enc(self.temp_B),
            "distance_hint": self.distance_hint,
            "pi_A": None if self.pi_A is None else list(self.pi_A),
            "pi_B": None if self.pi_B is None else list(self.pi_B),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "PolicyPairSpec":
        obj = dict(obj)
        for k in ("temp_A", "temp_B"):
            if k in obj:
                obj[k] = float(obj[k])
        for k in ("base_scores", "pi_A", "pi_B"):
            if obj.get(k) is not None:
                obj[k] = tuple(obj[k])
        return cls(**obj)


def _enc(x: float):
    return "inf" if math.isinf(x) else x


def softmax_scores(scores: np.ndarray, temp: float) -> np.ndarray:
    if math.isinf(temp):
        return np.full(len(scores), 1.0 / len(scores))
    z = np.asarray(scores, dtype=float) / temp
    z = np.exp(z - z.max())
    return z / z.sum()


def _gap_pair(scores: np.ndarray, g: float) -> tuple[np.ndarray, np.ndarray]:
    return softmax_scores(scores, 2.0 / g), softmax_scores(scores, -2.0 / g)


def calibrate_gap(scores: np.ndarray, hint: float, *, g_max: float = 200.0, rel_tol: float = 0.25) -> float:
    """Bisection (in log g) for the gap whose pair sits at distance ``hint``."""
    lo, hi = 1e-8, g_max
    if policy_distance(*_gap_pair(scores, hi)) < hint:
        raise CalibrationError(f"distance {hint} is out of reach of the softmax family (gap <= {g_max})")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        if policy_distance(*_gap_pair(scores, mid)) < hint:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + 1e-12:
            break
    g = math.sqrt(lo * hi)
    achieved = policy_distance(*_gap_pair(scores, g))
    if abs(achieved - hint) > rel_tol * hint:
        raise CalibrationError(f"bisection ended at distance {achieved:.4g}, hint was {hint}")
    return g


def make_policy_pair(spec: PolicyPairSpec, seed=0) -> tuple[TabularPolicy, TabularPolicy, float]:
    """Build ``(pi_A, pi_B, distance)`` from ``spec``."""
    if spec.family is PairFamily.EXPLICIT:
        a, b = np.asarray(spec.pi_A, float), np.asarray(spec.pi_B, float)
    else:
        if spec.base_scores is None:
            scores = child_stream(seed, 0).standard_normal(spec.K)
        else:
            scores = np.asarray(spec.base_scores, dtype=float)
        if spec.distance_hint is not None:
            a, b = _gap_pair(scores, calibrate_gap(scores, spec.distance_hint))
        else:
            a, b = softmax_scores(scores, spec.temp_A), softmax_scores(scores, spec.temp_B)
    return TabularPolicy(a), TabularPolicy(b), policy_distance(a, b)


# -- boredom process ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoredomSpec:
    """Non-Markov user-boredom process.

    ``s_{t+1} = clip(rho*s_0 + (1-rho)*(s_t + sigma*eps - beta_a*s_t))`` and
    reward ``r_t ~ Bernoulli(clip(<beta_a, s_t>/d))``. ``beta`` has one row
    per action; ``s_0`` is uniform on ``[s0_low, s0_high]^d``.
    """

    beta: np.ndarray
    rho: float = 0.25
    sigma_noise: float = 0.1
    horizon: int = 1
    s0_low: float = 0.0
    s0_high: float = 1.0

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        if beta.ndim != 2 or beta.size == 0:
            raise ValueError("beta must be a (K, d) matrix")
        if np.any((beta < 0) | (beta > 1)):
            raise ValueError("beta entries must lie in [0, 1]")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.sigma_noise < 0:
            raise ValueError("sigma_noise must be nonnegative")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be at least 1")
        object.__setattr__(self, "horizon", int(self.horizon))
        if not 0.0 <= self.s0_low <= self.s0_high <= 1.0:
            raise ValueError("need 0 <= s0_low <= s0_high <= 1")

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def d(self) -> int:
        return self.beta.shape[1]

    @classmethod
    def generate(cls, d: int = 10, seed=0, *, rho: float = 0.25, sigma_noise: float = 0.1, horizon: int = 1,
                 background: float = 0.1, dominant: tuple[float, float] = (0.5, 1.0)) -> "BoredomSpec":
        """Random ``beta`` with small background entries and one dominant coordinate per action."""
        rng = child_stream(seed, 0)
        beta = rng.uniform(0.0, background, size=(d, d))
        beta[np.arange(d), np.arange(d)] = rng.uniform(*dominant, size=d)
        return cls(beta=beta, rho=rho, sigma_noise=sigma_noise, horizon=horizon)

    def with_horizon(self, horizon: int) -> "BoredomSpec":
        return BoredomSpec(self.beta, self.rho, self.sigma_noise, horizon, self.s0_low, self.s0_high)

    def to_dict(self) -> dict[str, Any]:
        return {
            "beta": self.beta.tolist(),
            "rho": self.rho,
            "sigma_noise": self.sigma_noise,
            "horizon": self.horizon,
            "s0_low": self.s0_low,
            "s0_high": self.s0_high,
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "BoredomSpec":
        return cls(**dict(obj))


def boredom_policy(spec: BoredomSpec, inv_temp: float) -> SoftmaxLinearPolicy:
    """``pi(a|s) ∝ exp(inv_temp * <beta_a, s>)``, a softmax-linear policy."""
    K, d = spec.beta.shape
    return SoftmaxLinearPolicy(np.hstack([inv_temp * spec.beta, np.zeros((K, 1))]))


def _run_boredom(spec: BoredomSpec, policy: PolicyModel, n: int, rng: np.random.Generator):
    """Simulate ``n`` users; arrays are returned step-major, shape ``(T, n, ...)``."""
    T, d = spec.horizon, spec.d
    s0 = rng.uniform(spec.s0_low, spec.s0_high, size=(n, d))
    s = s0
    states = np.empty((T, n, d))
    actions = np.empty((T, n), dtype=np.int64)
    y = np.empty((T, n))
    u_rew = np.empty((T, n))
    props = np.empty((T, n))
    for t in range(T):
        u = rng.random((n, 2))
        eps = rng.standard_normal((n, d))
        probs = policy.action_probabilities(s)
        cdf = np.cumsum(probs, axis=1)
        a = np.minimum((u[:, :1] >= cdf[:, :-1]).sum(axis=1), spec.K - 1)
        ba = spec.beta[a]
        states[t] = s
        actions[t] = a
        props[t] = probs[np.arange(n), a]
        y[t] = np.clip(np.einsum("ij,ij->i", ba, s) / d, 0.0, 1.0)
        u_rew[t] = u[:, 1]
        s = np.clip(spec.rho * s0 + (1.0 - spec.rho) * (s + spec.sigma_noise * eps - ba * s), 0.0, 1.0)
    return states, actions, y, u_rew, props


def _boredom_dataset(spec, policy, n, rng, arm: Arm, prefix: str) -> Dataset:
    T, d = spec.horizon, spec.d
    if n == 0:
        return Dataset.empty(d)
    states, actions, y, u_rew, props = _run_boredom(spec, policy, n, rng)
    rewards = (u_rew < y).astype(float)
    # step-major -> user-major
    return Dataset(
        user_ids=_arm_ids(prefix, n),
        arms=np.full(n, arm is Arm.B),
        offsets=np.arange(0, n * T + 1, T),
        states=states.transpose(1, 0, 2).reshape(n * T, d),
        actions=actions.T.reshape(-1),
        rewards=rewards.T.reshape(-1),
        logged_propensities=props.T.reshape(-1),
    )


def simulate_boredom(spec: BoredomSpec, policy: PolicyModel, n_users: int, seed, *, arm: Arm | str = Arm.A) -> Dataset:
    """``n_users`` trajectories of exactly ``spec.horizon`` steps, all in ``arm``."""
    if n_users < 0:
        raise ValueError("n_users must be nonnegative")
    arm = Arm(arm)
    idx = 0 if arm is Arm.A else 1
    return _boredom_dataset(spec, policy, n_users, child_stream(seed, idx), arm, arm.value)


def simulate_boredom_ab(spec: BoredomSpec, pi_A: PolicyModel, pi_B: PolicyModel, n_A: int, n_B: int, seed) -> Dataset:
    return Dataset.concat([
        simulate_boredom(spec, pi_A, n_A, seed, arm=Arm.A),
        simulate_boredom(spec, pi_B, n_B, seed, arm=Arm.B),
    ])


def true_improvement_mc(spec: BoredomSpec, pi_A: PolicyModel, pi_B: PolicyModel, reps: int, seed) -> tuple[float, float]:
    """Monte-Carlo value difference with the success probabilities summed exactly.

    Returns ``(estimate, standard_error)``.
    """
    if reps < 1000:
        raise ValueError("reps must be at least 1000")
    values = []
    for idx, policy in enumerate((pi_A, pi_B)):
        rng = child_stream(seed, 100 + idx)
        _, _, y, _, _ = _run_boredom(spec, policy, reps, rng)
        values.append(y.sum(axis=0))
    va, vb = values
    est = float(va.mean() - vb.mean())
    se = float(math.sqrt(va.var(ddof=1) / reps + vb.var(ddof=1) / reps))
    return est, se


# -- epsilon pair ---------------------------------------------------------------


@dataclass(frozen=True)
class EpsilonPairEnv:
    """Binary actions (0 = a-, 1 = a+) over exactly ``horizon`` steps.

    The only reward arrives at the last step: Bernoulli(``p_hit``) if ``a+``
    was ever played, else Bernoulli(``p_miss``).
    """

    horizon: int
    p_hit: float = 0.9
    p_miss: float = 0.1

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not (0 <= self.p_miss <= 1 and 0 <= self.p_hit <= 1):
            raise ValueError("reward probabilities must lie in [0, 1]")

    def value(self, policy: TabularPolicy) -> float:
        miss = policy.probs[0] ** self.horizon
        return float(self.p_miss * miss + self.p_hit * (1.0 - miss))

    def true_improvement(self, pi_A: TabularPolicy, pi_B: TabularPolicy) -> float:
        return self.value(pi_A) - self.value(pi_B)

    def _arm(self, policy: TabularPolicy, n: int, rng: np.random.Generator):
        T = self.horizon
        u = rng.random((n, T))
        actions = (u < policy.probs[1]).astype(np.int64)
        hit = actions.any(axis=1)
        rew = np.zeros((n, T))
        rew[:, -1] = rng.random(n) < np.where(hit, self.p_hit, self.p_miss)
        return actions.reshape(-1), rew.reshape(-1), policy.probs[actions].reshape(-1)

    def simulate(self, pi_A: TabularPolicy, pi_B: TabularPolicy, n_A: int, n_B: int, seed) -> Dataset:
        T = self.horizon
        a_A, r_A, p_A = self._arm(pi_A, n_A, child_stream(seed, 0))
        a_B, r_B, p_B = self._arm(pi_B, n_B, child_stream(seed, 1))
        n = n_A + n_B
        return Dataset(
            user_ids=_arm_ids("A", n_A) + _arm_ids("B", n_B),
            arms=np.r_[np.zeros(n_A, bool), np.ones(n_B, bool)],
            offsets=np.arange(0, n * T + 1, T),
            states=np.zeros((n * T, 0)),
            actions=np.concatenate([a_A, a_B]),
            rewards=np.concatenate([r_A, r_B]),
            logged_propensities=np.concatenate([p_A, p_B]),
        )


def epsilon_pair(T0: int, epsilon: float, *, p_hit: float = 0.9, p_miss: float = 0.1
                 ) -> tuple[TabularPolicy, TabularPolicy, EpsilonPairEnv]:
    """A never plays ``a+``; B plays it with probability ``epsilon`` at every step."""
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    return (
        TabularPolicy([1.0, 0.0]),
        TabularPolicy([1.0 - epsilon, epsilon]),
        EpsilonPairEnv(int(T0), p_hit, p_miss),
    )


def bandit_estimator_variance(spec: BanditSpec, f, n_A: int, n_B: int) -> float:
    """Exact variance of the ``f``-estimator on ``spec`` with exact propensities.

    Each arm contributes ``Var(term)/n``; ``r ~ Bernoulli(p[a])`` so the
    second moment of ``g(a) * r`` is ``sum_a pi(a) g(a)^2 p(a)``.
    """
    a, b, p = spec.pi_A, spec.pi_B, spec.p
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(b > 0, a / b, np.inf)
        wbar = np.where(a > 0, b / a, np.inf)
    gB = np.asarray(f(np.where(b > 0, x, 1.0)), dtype=float)
    gA = np.asarray(f.correction(np.where(a > 0, wbar, 1.0)), dtype=float)
    var = 0.0
    for pi, g, n in ((b, gB, n_B), (a, gA, n_A)):
        m1 = float(np.sum(pi * g * p))
        m2 = float(np.sum(pi * g * g * p))
        var += (m2 - m1 * m1) / n
    return var
