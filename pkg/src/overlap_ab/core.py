"""Trajectories, two-arm datasets, policies and prefix importance weights.

Datasets are stored column-wise (one row per logged step) so that
estimators can work on whole arrays; :class:`Trajectory` and :class:`Step`
objects are materialised on demand.

Weights are plain floats: ``0.0`` and ``math.inf`` play the role of the
extended nonnegative reals, with ``1/inf == 0`` and ``1/0 == inf``.
"""

from __future__ import annotations

import enum
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import IntegrityError, StepRangeError, SupportError

# Log-propensity products below this are treated as an exact zero.
LOG_UNDERFLOW = -700.0


class Arm(str, enum.Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True)
class Step:
    state: tuple[float, ...]
    action: int
    reward: float
    logged_propensity: float

    def __post_init__(self):
        if not 0.0 <= self.reward <= 1.0:
            raise ValueError(f"reward must lie in [0, 1], got {self.reward}")
        if not 0.0 < self.logged_propensity <= 1.0:
            raise ValueError(f"logged_propensity must lie in (0, 1], got {self.logged_propensity}")
        if self.action < 0:
            raise ValueError(f"action must be nonnegative, got {self.action}")


@dataclass(frozen=True)
class Trajectory:
    user_id: str
    arm: Arm
    steps: tuple[Step, ...]

    def __post_init__(self):
        object.__setattr__(self, "arm", Arm(self.arm))
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise ValueError("a trajectory needs at least one step")
        dims = {len(s.state) for s in self.steps}
        if len(dims) != 1:
            raise ValueError(f"steps of {self.user_id!r} mix state dimensions {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def horizon(self) -> int:
        return len(self.steps)

    @property
    def states(self) -> np.ndarray:
        return np.array([s.state for s in self.steps], dtype=float).reshape(len(self.steps), -1)

    @property
    def actions(self) -> np.ndarray:
        return np.array([s.action for s in self.steps], dtype=np.int64)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.steps], dtype=float)


class Dataset:
    """Logged trajectories of both arms in a columnar layout.

    Parameters
    ----------
    user_ids : sequence of str, one per trajectory (unique).
    arms : sequence of ``"A"``/``"B"`` (or :class:`Arm`), one per trajectory.
    offsets : int array of length ``n_users + 1``; steps of user ``i`` are rows
        ``offsets[i]:offsets[i+1]``.
    states : array of shape ``(n_steps, d)``.
    actions, rewards, logged_propensities : arrays of shape ``(n_steps,)``.
    """

    def __init__(
        self,
        user_ids: Sequence[str],
        arms: Sequence[Arm | str] | np.ndarray,
        offsets: Sequence[int] | np.ndarray,
        states: np.ndarray,
        actions: np.ndarray,
        rewards: np.ndarray,
        logged_propensities: np.ndarray,
    ):
        self.user_ids = tuple(str(u) for u in user_ids)
        arms = np.asarray([Arm(a).value for a in arms] if not isinstance(arms, np.ndarray) else arms)
        if arms.dtype == bool:
            self.is_b = arms.copy()
        else:
            bad = ~np.isin(arms, ["A", "B"])
            if bad.any():
                raise IntegrityError(f"unknown arm label {arms[bad][0]!r}")
            self.is_b = arms == "B"
        self.offsets = np.asarray(offsets, dtype=np.int64)
        n_steps = int(self.offsets[-1]) if len(self.offsets) else 0
        states = np.asarray(states, dtype=float)
        if states.ndim != 2:
            states = states.reshape(n_steps, -1) if n_steps else states.reshape(0, 0)
        self.states = states
        self.actions = np.asarray(actions, dtype=np.int64)
        self.rewards = np.asarray(rewards, dtype=float)
        self.logged_propensities = np.asarray(logged_propensities, dtype=float)
        for arr in (self.is_b, self.offsets, self.states, self.actions, self.rewards, self.logged_propensities):
            arr.setflags(write=False)
        self._validate()

    def _validate(self) -> None:
        n = len(self.user_ids)
        if len(self.is_b) != n or len(self.offsets) != n + 1:
            raise IntegrityError("user_ids, arms and offsets disagree on the number of trajectories")
        if len(set(self.user_ids)) != n:
            raise IntegrityError("user_ids must be unique")
        if n and (self.offsets[0] != 0 or np.any(np.diff(self.offsets) < 1)):
            raise IntegrityError("every trajectory needs at least one step")
        n_steps = int(self.offsets[-1])
        for name in ("actions", "rewards", "logged_propensities"):
            if len(getattr(self, name)) != n_steps:
                raise IntegrityError(f"{name} has the wrong length")
        if len(self.states) != n_steps:
            raise IntegrityError("states has the wrong length")
        if np.any(self.actions < 0):
            raise IntegrityError("actions must be nonnegative")
        if np.any((self.rewards < 0) | (self.rewards > 1)) or np.any(np.isnan(self.rewards)):
            raise IntegrityError("rewards must lie in [0, 1]")
        lp = self.logged_propensities
        if np.any(~(lp > 0) | (lp > 1)):
            raise IntegrityError("logged propensities must lie in (0, 1]")
        if not np.all(np.isfinite(self.states)):
            raise IntegrityError("states must be finite")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_trajectories(cls, trajectories: Iterable[Trajectory], state_dim: int | None = None) -> "Dataset":
        trajectories = list(trajectories)
        dims = {len(tr.steps[0].state) for tr in trajectories}
        if len(dims) > 1:
            raise IntegrityError(f"trajectories mix state dimensions {sorted(dims)}")
        d = dims.pop() if dims else (state_dim or 0)
        steps = [s for tr in trajectories for s in tr.steps]
        offsets = np.concatenate([[0], np.cumsum([len(tr.steps) for tr in trajectories], dtype=np.int64)])
        return cls(
            user_ids=[tr.user_id for tr in trajectories],
            arms=[tr.arm for tr in trajectories],
            offsets=offsets,
            states=np.array([s.state for s in steps], dtype=float).reshape(len(steps), d),
            actions=np.array([s.action for s in steps], dtype=np.int64),
            rewards=np.array([s.reward for s in steps], dtype=float),
            logged_propensities=np.array([s.logged_propensity for s in steps], dtype=float),
        )

    @classmethod
    def empty(cls, state_dim: int = 0) -> "Dataset":
        return cls([], np.zeros(0, dtype=bool), [0], np.zeros((0, state_dim)), [], [], [])

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        parts = [p for p in parts if p.n_users] or list(parts[:1])
        if not parts:
            return cls.empty()
        lengths = np.concatenate([np.diff(p.offsets) for p in parts])
        return cls(
            user_ids=[u for p in parts for u in p.user_ids],
            arms=np.concatenate([p.is_b for p in parts]),
            offsets=np.concatenate([[0], np.cumsum(lengths)]),
            states=np.concatenate([p.states for p in parts]),
            actions=np.concatenate([p.actions for p in parts]),
            rewards=np.concatenate([p.rewards for p in parts]),
            logged_propensities=np.concatenate([p.logged_propensities for p in parts]),
        )

    # -- shape ----------------------------------------------------------------

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_steps(self) -> int:
        return int(self.offsets[-1])

    @property
    def n_A(self) -> int:
        return int(np.count_nonzero(~self.is_b))

    @property
    def n_B(self) -> int:
        return int(np.count_nonzero(self.is_b))

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def step_user(self) -> np.ndarray:
        """Index of the owning trajectory for every step row."""
        return np.repeat(np.arange(self.n_users), self.lengths)

    @property
    def step_t(self) -> np.ndarray:
        """1-based step index within its trajectory for every step row."""
        return np.arange(self.n_steps) - np.repeat(self.offsets[:-1], self.lengths) + 1

    @property
    def step_is_b(self) -> np.ndarray:
        return np.repeat(self.is_b, self.lengths)

    def arm_of(self, i: int) -> Arm:
        return Arm.B if self.is_b[i] else Arm.A

    def user_reward_sums(self) -> np.ndarray:
        return per_user_sum(self.rewards, self.offsets)

    def select(self, mask: np.ndarray) -> "Dataset":
        """Sub-dataset made of the trajectories where ``mask`` is true."""
        mask = np.asarray(mask, dtype=bool)
        rows = np.repeat(mask, self.lengths)
        return Dataset(
            user_ids=[u for u, m in zip(self.user_ids, mask) if m],
            arms=self.is_b[mask],
            offsets=np.concatenate([[0], np.cumsum(self.lengths[mask])]),
            states=self.states[rows],
            actions=self.actions[rows],
            rewards=self.rewards[rows],
            logged_propensities=self.logged_propensities[rows],
        )

    def arm(self, arm: Arm | str) -> "Dataset":
        return self.select(self.is_b if Arm(arm) is Arm.B else ~self.is_b)

    # -- trajectory view ------------------------------------------------------

    def trajectory(self, i: int) -> Trajectory:
        lo, hi = self.offsets[i], self.offsets[i + 1]
        steps = tuple(
            Step(
                state=tuple(float(v) for v in self.states[k]),
                action=int(self.actions[k]),
                reward=float(self.rewards[k]),
                logged_propensity=float(self.logged_propensities[k]),
            )
            for k in range(lo, hi)
        )
        return Trajectory(self.user_ids[i], self.arm_of(i), steps)

    @property
    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(self.n_users)]

    def __iter__(self) -> Iterator[Trajectory]:
        return (self.trajectory(i) for i in range(self.n_users))

    def __len__(self) -> int:
        return self.n_users

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.user_ids == other.user_ids
            and np.array_equal(self.is_b, other.is_b)
            and np.array_equal(self.offsets, other.offsets)
            and self.states.shape == other.states.shape
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
            and np.array_equal(self.logged_propensities, other.logged_propensities)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Dataset(n_A={self.n_A}, n_B={self.n_B}, n_steps={self.n_steps}, d={self.state_dim})"


def per_user_sum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Sum ``values`` (one per step row) within each trajectory."""
    n = len(offsets) - 1
    if n == 0:
        return np.zeros(0)
    return np.bincount(np.repeat(np.arange(n), np.diff(offsets)), weights=values, minlength=n)


def segmented_cumsum(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Running sum of ``values`` restarted at every trajectory start.

    Values may include ``-inf`` or ``+inf`` (not both in one trajectory).
    """
    lengths = np.diff(offsets)
    n = len(lengths)
    if n == 0:
        return np.zeros(0)
    user = np.repeat(np.arange(n), lengths)
    pos = np.arange(len(values)) - np.repeat(offsets[:-1], lengths)
    padded = np.zeros((n, int(lengths.max())))
    padded[user, pos] = values
    return np.cumsum(padded, axis=1)[user, pos]


# -- policies -----------------------------------------------------------------


class PolicyModel(ABC):
    """A conditional distribution over a finite action set given a state."""

    n_actions: int

    @abstractmethod
    def action_probabilities(self, states: np.ndarray) -> np.ndarray:
        """Return an ``(N, n_actions)`` array of probabilities for ``N`` states."""

    @abstractmethod
    def to_dict(self) -> dict[str, Any]:
        ...

    def propensities(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.int64)
        if actions.size and (actions.min() < 0 or actions.max() >= self.n_actions):
            raise SupportError(f"action index outside the action set of size {self.n_actions}")
        probs = self.action_probabilities(np.asarray(states, dtype=float).reshape(len(actions), -1))
        return probs[np.arange(len(actions)), actions]

    def propensity(self, state: Sequence[float], action: int) -> float:
        return float(self.propensities(np.asarray([state], dtype=float), np.array([action]))[0])

    def sample_many(self, states: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
        """Inverse-CDF sampling: one action per state from one uniform each."""
        cdf = np.cumsum(self.action_probabilities(states), axis=1)
        actions = (uniforms[:, None] >= cdf[:, :-1]).sum(axis=1)
        return actions.astype(np.int64)

    def sample(self, state: Sequence[float], rng: np.random.Generator) -> int:
        return int(self.sample_many(np.asarray([state], dtype=float), rng.random(1))[0])


class TabularPolicy(PolicyModel):
    """State-independent action distribution (bandits, constant policies)."""

    def __init__(self, probs: Sequence[float] | np.ndarray):
        probs = np.asarray(probs, dtype=float)
        if probs.ndim != 1 or len(probs) < 1:
            raise ValueError("probs must be a nonempty vector")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probs must lie on the probability simplex")
        self.probs = probs
        self.probs.setflags(write=False)
        self.n_actions = len(probs)

    def action_probabilities(self, states: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.probs, (len(states), self.n_actions))

    def propensities(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        actions = np.asarray(actions, dtype=np.int64)
        if actions.size and (actions.min() < 0 or actions.max() >= self.n_actions):
            raise SupportError(f"action index outside the action set of size {self.n_actions}")
        return self.probs[actions]

    def to_dict(self) -> dict[str, Any]:
        return {"type": "tabular", "probs": self.probs.tolist()}

    def __repr__(self) -> str:
        return f"TabularPolicy({np.array2string(self.probs, precision=4)})"


class SoftmaxLinearPolicy(PolicyModel):
    """``pi(a|s) ∝ exp(W[a, :d] @ s + W[a, d])`` (last column is the intercept)."""

    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 2 or weights.shape[0] < 1:
            raise ValueError("weights must have shape (n_actions, d + 1)")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        self.weights = weights
        self.weights.setflags(write=False)
        self.n_actions = weights.shape[0]
        self.dim = weights.shape[1] - 1

    def logits(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if states.ndim != 2:
            states = states.reshape(-1, self.dim)
        return states @ self.weights[:, :-1].T + self.weights[:, -1]

    def action_probabilities(self, states: np.ndarray) -> np.ndarray:
        z = self.logits(states)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict[str, Any]:
        return {"type": "softmax_linear", "weights": self.weights.tolist(), "actions": self.n_actions, "dim": self.dim}


def policy_from_dict(obj: Mapping[str, Any]) -> PolicyModel:
    """Rebuild a policy from its JSON description (see ``to_dict`` methods)."""
    from .propensity import FittedPolicy, UniformMixPolicy

    kind = obj.get("type")
    if kind is None and "weights" in obj:
        kind = "fitted" if "diagnostics" in obj else "softmax_linear"
    if kind == "tabular":
        return TabularPolicy(obj["probs"])
    if kind == "softmax_linear":
        return SoftmaxLinearPolicy(np.asarray(obj["weights"], dtype=float).reshape(int(obj["actions"]), -1))
    if kind == "fitted":
        return FittedPolicy.from_dict(obj)
    if kind == "uniform_mix":
        return UniformMixPolicy(policy_from_dict(obj["base"]), float(obj["sigma"]))
    raise ValueError(f"unknown policy description type {kind!r}")


# -- propensities and weights ---------------------------------------------------


def _log_or_neg_inf(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def prefix_log_propensities(policy: PolicyModel, data: Dataset) -> np.ndarray:
    """Log of ``pi(tau_t)`` for every logged prefix (one value per step row).

    Only exact zero factors give ``-inf``; callers that need the product
    itself should go through :func:`propensity_from_log`.
    """
    step_log = _log_or_neg_inf(policy.propensities(data.states, data.actions))
    return segmented_cumsum(step_log, data.offsets)


def propensity_from_log(log_p: np.ndarray) -> np.ndarray:
    """``exp(log_p)`` with products below ``exp(LOG_UNDERFLOW)`` set to exactly 0."""
    log_p = np.asarray(log_p, dtype=float)
    return np.where(log_p < LOG_UNDERFLOW, 0.0, np.exp(np.maximum(log_p, LOG_UNDERFLOW)))


def ratio_from_logs(log_num: np.ndarray, log_den: np.ndarray) -> np.ndarray:
    """``exp(log_num - log_den)`` with the zero/infinity conventions.

    Zero numerator gives 0, zero denominator gives ``inf``; both zero is left
    as ``nan`` for the caller to reject.
    """
    log_num = np.asarray(log_num, dtype=float)
    log_den = np.asarray(log_den, dtype=float)
    out = np.full(np.broadcast(log_num, log_den).shape, np.nan)
    num_zero = np.isneginf(log_num)
    den_zero = np.isneginf(log_den)
    both = ~num_zero & ~den_zero
    with np.errstate(over="ignore"):
        out[both] = np.exp(log_num[both] - log_den[both])
    out[num_zero & ~den_zero] = 0.0
    out[~num_zero & den_zero] = np.inf
    return out


def _trajectory_arrays(trajectory: Trajectory, t: int) -> tuple[np.ndarray, np.ndarray]:
    if not 1 <= t <= trajectory.horizon:
        raise StepRangeError(f"t={t} outside 1..{trajectory.horizon}")
    steps = trajectory.steps[:t]
    states = np.array([s.state for s in steps], dtype=float).reshape(t, -1)
    actions = np.array([s.action for s in steps], dtype=np.int64)
    return states, actions


def _log_trajectory_propensity(policy: PolicyModel, trajectory: Trajectory, t: int) -> float:
    states, actions = _trajectory_arrays(trajectory, t)
    logs = _log_or_neg_inf(policy.propensities(states, actions))
    total = float(np.sum(logs))
    return -math.inf if total < LOG_UNDERFLOW else total


def trajectory_propensity(policy: PolicyModel, trajectory: Trajectory, t: int) -> float:
    """Probability that ``policy`` takes the logged actions over steps ``1..t``."""
    return math.exp(_log_trajectory_propensity(policy, trajectory, t))


def prefix_weight(target: PolicyModel, behavior: PolicyModel, trajectory: Trajectory, t: int) -> float:
    """``target(tau_t) / behavior(tau_t)`` as an extended nonnegative real."""
    log_t = _log_trajectory_propensity(target, trajectory, t)
    log_b = _log_trajectory_propensity(behavior, trajectory, t)
    if math.isinf(log_t) and math.isinf(log_b):
        raise SupportError(
            f"prefix t={t} of {trajectory.user_id!r} has zero probability under both policies"
        )
    return float(ratio_from_logs(np.array(log_t), np.array(log_b)))
