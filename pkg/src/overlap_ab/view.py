"""Per-prefix weights and noise levels of a dataset under a pair of policies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    PolicyModel,
    per_user_sum,
    prefix_log_propensities,
    propensity_from_log,
    ratio_from_logs,
    segmented_cumsum,
)
from .errors import SupportError
from .transforms import NoiseModel


@dataclass(frozen=True, eq=False)
class CounterfactualView:
    """Everything the estimators need, one entry per logged prefix (step row).

    ``ratio`` is ``pi_A(tau_t) / pi_B(tau_t)`` on every row (the transform
    argument). ``weight`` is the other-over-own prefix weight: ``ratio`` on
    B rows and ``1 / ratio`` on A rows. ``cum_noise`` is the running sum of
    step noise levels, or ``None`` when no noise model was given.
    """

    user: np.ndarray
    t: np.ndarray
    is_b: np.ndarray
    rewards: np.ndarray
    log_own: np.ndarray
    log_other: np.ndarray
    ratio: np.ndarray
    weight: np.ndarray
    cum_noise: np.ndarray | None
    user_is_b: np.ndarray
    offsets: np.ndarray
    user_ids: tuple[str, ...]
    noise: NoiseModel | None = None

    @property
    def n_A(self) -> int:
        return int(np.count_nonzero(~self.user_is_b))

    @property
    def n_B(self) -> int:
        return int(np.count_nonzero(self.user_is_b))

    @property
    def own_propensity(self) -> np.ndarray:
        return propensity_from_log(self.log_own)

    @property
    def other_propensity(self) -> np.ndarray:
        return propensity_from_log(self.log_other)

    def per_user(self, values: np.ndarray) -> np.ndarray:
        return per_user_sum(values, self.offsets)


def _step_ratio(pi_A: PolicyModel, pi_B: PolicyModel, data: Dataset) -> np.ndarray:
    pa = pi_A.propensities(data.states, data.actions)
    pb = pi_B.propensities(data.states, data.actions)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = pa / pb
    x[(pa == 0) & (pb == 0)] = 1.0  # noise of a step neither policy can take is irrelevant
    return x


def build_counterfactual_view(
    data: Dataset,
    pi_A: PolicyModel,
    pi_B: PolicyModel,
    noise: NoiseModel | None = None,
    *,
    noise_policies: tuple[PolicyModel, PolicyModel] | None = None,
) -> CounterfactualView:
    """Compute prefix weights of ``data`` under ``pi_A`` / ``pi_B``.

    The policies may be exact or plug-in estimates. Step noise levels use the
    step ratios of ``noise_policies`` when given (e.g. the true policies in an
    oracle study), otherwise those of ``pi_A`` / ``pi_B``.

    Raises :class:`SupportError` when a trajectory gets zero probability
    under the policy of its own arm.
    """
    log_A = prefix_log_propensities(pi_A, data)
    log_B = prefix_log_propensities(pi_B, data)
    is_b = data.step_is_b
    log_own = np.where(is_b, log_B, log_A)
    bad = np.flatnonzero(np.isneginf(log_own))
    if bad.size:
        k = int(bad[0])
        user = int(data.step_user[k])
        arm = "B" if is_b[k] else "A"
        raise SupportError(
            f"policy of arm {arm} gives zero probability to user {data.user_ids[user]!r} "
            f"at step t={int(data.step_t[k])} (action {int(data.actions[k])})"
        )
    log_other = np.where(is_b, log_A, log_B)
    ratio = ratio_from_logs(log_A, log_B)
    with np.errstate(divide="ignore"):
        weight = np.where(is_b, ratio, 1.0 / ratio)
    cum_noise = None
    if noise is not None:
        na, nb = noise_policies if noise_policies is not None else (pi_A, pi_B)
        cum_noise = segmented_cumsum(np.asarray(noise(_step_ratio(na, nb, data)), dtype=float), data.offsets)
    return CounterfactualView(
        user=data.step_user,
        t=data.step_t,
        is_b=is_b,
        rewards=data.rewards,
        log_own=log_own,
        log_other=log_other,
        ratio=ratio,
        weight=weight,
        cum_noise=cum_noise,
        user_is_b=data.is_b,
        offsets=data.offsets,
        user_ids=data.user_ids,
        noise=noise,
    )
