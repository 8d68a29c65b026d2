"""Propensity models learned from logs, and controlled misspecification."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.optimize import minimize

from .core import Arm, Dataset, PolicyModel, SoftmaxLinearPolicy
from .errors import InsufficientDataError
from .view import CounterfactualView, build_counterfactual_view

__all__ = [
    "FittedPolicy",
    "UniformMixPolicy",
    "PerturbationSpec",
    "fit_softmax_mle",
    "fit_arm",
    "perturb_uniform_mix",
    "build_counterfactual_view",
    "CounterfactualView",
]

DEFAULT_REG = 1e-4


@dataclass(frozen=True)
class FitDiagnostics:
    final_nll: float
    iterations: int
    grad_norm: float
    converged: bool
    n_samples: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "final_nll": self.final_nll,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "converged": self.converged,
            "n_samples": self.n_samples,
        }


class FittedPolicy(SoftmaxLinearPolicy):
    """Softmax-linear policy with the diagnostics of the fit that produced it."""

    def __init__(self, weights: np.ndarray, diagnostics: FitDiagnostics):
        super().__init__(weights)
        self.diagnostics = diagnostics

    def to_dict(self) -> dict[str, Any]:
        return {
            "weights": self.weights.tolist(),
            "actions": self.n_actions,
            "dim": self.dim,
            "diagnostics": self.diagnostics.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> "FittedPolicy":
        k, d = int(obj["actions"]), int(obj["dim"])
        weights = np.asarray(obj["weights"], dtype=float)
        if weights.shape != (k, d + 1):
            raise ValueError(f"weights have shape {weights.shape}, expected {(k, d + 1)}")
        diag = obj.get("diagnostics", {})
        return cls(
            weights,
            FitDiagnostics(
                final_nll=float(diag.get("final_nll", math.nan)),
                iterations=int(diag.get("iterations", 0)),
                grad_norm=float(diag.get("grad_norm", math.nan)),
                converged=bool(diag.get("converged", False)),
                n_samples=int(diag.get("n_samples", 0)),
            ),
        )


def _objective(flat: np.ndarray, X: np.ndarray, Y: np.ndarray, reg: float, k: int):
    W = flat.reshape(k, X.shape[1])
    z = X @ W.T
    z -= z.max(axis=1, keepdims=True)
    n = len(X)
    logZ = np.log(np.exp(z).sum(axis=1))
    nll = float(np.sum(logZ - z[np.arange(n), Y]) / n)
    P = np.exp(z - logZ[:, None])
    P[np.arange(n), Y] -= 1.0
    # the intercept (last column) is not penalised
    Wp = W.copy()
    Wp[:, -1] = 0.0
    grad = P.T @ X / n + reg * Wp
    return nll + 0.5 * reg * float(np.sum(Wp * Wp)), grad.ravel()


def fit_softmax_mle(
    states: np.ndarray,
    actions: np.ndarray,
    n_actions: int,
    reg: float = DEFAULT_REG,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> FittedPolicy:
    """Maximum-likelihood softmax-linear policy (intercept included).

    Minimises ``mean NLL + reg/2 * ||W||^2`` (intercept unpenalised) from
    zero weights with L-BFGS; the objective is an average, so duplicating
    every record leaves the optimum unchanged. ``max_iter=0`` returns the uniform policy.
    """
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions, dtype=np.int64)
    if states.ndim == 1:
        states = states.reshape(len(actions), -1)
    if len(actions) == 0:
        raise InsufficientDataError("no step records to fit")
    if not np.all(np.isfinite(states)):
        raise ValueError("state features must be finite")
    if actions.min() < 0 or actions.max() >= n_actions:
        raise ValueError(f"actions must lie in 0..{n_actions - 1}")
    if reg < 0:
        raise ValueError("reg must be nonnegative")
    X = np.hstack([states, np.ones((len(states), 1))])
    w0 = np.zeros(n_actions * X.shape[1])
    if max_iter > 0:
        res = minimize(
            _objective,
            w0,
            args=(X, actions, reg, n_actions),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "gtol": tol / math.sqrt(w0.size), "ftol": 1e-15, "maxcor": 20},
        )
        w, iterations = res.x, int(res.nit)
    else:
        w, iterations = w0, 0
    value, grad = _objective(w, X, actions, reg, n_actions)
    gnorm = float(np.linalg.norm(grad))
    diag = FitDiagnostics(
        final_nll=value,
        iterations=iterations,
        grad_norm=gnorm,
        converged=gnorm <= tol,
        n_samples=len(actions),
    )
    return FittedPolicy(w.reshape(n_actions, X.shape[1]), diag)


def fit_arm(data: Dataset, arm: Arm | str, n_actions: int, **kwargs) -> FittedPolicy:
    """Fit the propensity model of one arm from that arm's logged steps."""
    sub = data.arm(arm)
    if sub.n_users == 0:
        raise InsufficientDataError(f"arm {Arm(arm).value} has no trajectories")
    return fit_softmax_mle(sub.states, sub.actions, n_actions, **kwargs)


@dataclass(frozen=True)
class PerturbationSpec:
    sigma: float

    def __post_init__(self):
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError(f"sigma must lie in [0, 1], got {self.sigma}")


class UniformMixPolicy(PolicyModel):
    """``(1 - sigma) * base + sigma / K``."""

    def __init__(self, base: PolicyModel, sigma: float):
        PerturbationSpec(sigma)
        self.base = base
        self.sigma = float(sigma)
        self.n_actions = base.n_actions

    def action_probabilities(self, states: np.ndarray) -> np.ndarray:
        probs = self.base.action_probabilities(states)
        if self.sigma == 0.0:
            return probs
        return (1.0 - self.sigma) * probs + self.sigma / self.n_actions

    def propensities(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        p = self.base.propensities(states, actions)
        if self.sigma == 0.0:
            return p
        return (1.0 - self.sigma) * p + self.sigma / self.n_actions

    def to_dict(self) -> dict[str, Any]:
        return {"type": "uniform_mix", "sigma": self.sigma, "base": self.base.to_dict()}


def perturb_uniform_mix(policy: PolicyModel, spec: PerturbationSpec | float) -> UniformMixPolicy:
    sigma = spec.sigma if isinstance(spec, PerturbationSpec) else float(spec)
    return UniformMixPolicy(policy, sigma)
