"""Importance-weighted A/B testing estimators that exploit policy overlap."""

from __future__ import annotations

from .core import (
    Arm,
    Dataset,
    PolicyModel,
    SoftmaxLinearPolicy,
    Step,
    TabularPolicy,
    Trajectory,
    policy_from_dict,
    prefix_weight,
    trajectory_propensity,
)
from .errors import (
    CalibrationError,
    ConfigError,
    InsufficientDataError,
    IntegrityError,
    IntervalUnavailableError,
    LogParseError,
    OverlapABError,
    StepRangeError,
    SupportError,
)
from .estimators import (
    ImprovementReport,
    confidence_interval,
    diff_in_means,
    estimate_by_id,
    f_estimate,
    f_estimate_mixture_form,
    ips_improvement,
    reverse_f_estimate,
    variance_surrogate_empirical,
    variance_surrogate_exact_bandit,
)
from .logio import read_trajectory_log, write_trajectory_log
from .propensity import FittedPolicy, PerturbationSpec, UniformMixPolicy, fit_softmax_mle, perturb_uniform_mix
from .transforms import (
    ConstantMinusOne,
    FStar,
    FStarRobust,
    H1,
    HPlus,
    NoiseModel,
    WeightTransform,
    check_conditions,
    convex_combine,
    eval_transform,
    parse_transform_id,
    reverse_transform,
)
from .view import CounterfactualView, build_counterfactual_view

__version__ = "0.1.0"
