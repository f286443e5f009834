"""Forecast aggregators: averages, median, and the linearly extremized average.

The extremized aggregate of problem k is ``alpha * (w' X_k - mu0) + mu0``.
Fitting it by least squares is a convex QP in ``beta = (beta_0, ..., beta_N)``
with design ``(1, X_k')`` and ``beta_j >= 0`` for the forecast coefficients;
``alpha``, ``w`` and ``mu0`` are recovered from ``beta`` afterwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import qp
from .errors import DegenerateDesign, DimensionMismatch, EmptyPanel, NegativeBeta, TooFewPoints
from .pif import ForecastPanel

ALPHA_EPS = 1e-12
UNIT_ALPHA_EPS = 1e-8
NEG_BETA_TOL = 1e-9


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.size == 0:
            raise EmptyPanel("weight vector is empty")
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights are not on the simplex: {w.tolist()}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n: int) -> "WeightVector":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class ExtremizedAggregator:
    weights: np.ndarray
    alpha: float
    mu0: float
    beta_raw: np.ndarray
    mu0_defined: bool = True
    weights_defined: bool = True
    training_loss: float = float("nan")
    kkt_residual: float = 0.0
    ridge: float = 0.0

    def to_json(self) -> dict:
        return {
            "alpha": float(self.alpha),
            "weights": [float(v) for v in self.weights],
            "mu0": float(self.mu0),
            "mu0_defined": bool(self.mu0_defined),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def from_json(cls, obj: dict) -> "ExtremizedAggregator":
        alpha = float(obj["alpha"])
        w = np.asarray(obj["weights"], dtype=float)
        mu0 = float(obj["mu0"])
        beta = np.concatenate([[mu0 * (1.0 - alpha)], alpha * w])
        return cls(w, alpha, mu0, beta, bool(obj.get("mu0_defined", True)))


class RecoveredParameters(NamedTuple):
    alpha: float
    weights: np.ndarray
    mu0: float
    mu0_defined: bool
    weights_defined: bool


def _check_panel(p: ForecastPanel):
    if p.n_forecasters < 1 or p.n_problems < 1:
        raise EmptyPanel("panel has no forecasts")


def equal_average(p: ForecastPanel) -> np.ndarray:
    _check_panel(p)
    return p.forecasts.mean(axis=0)


def median_aggregate(p: ForecastPanel) -> np.ndarray:
    """Per-problem median; an even number of forecasters uses the midpoint."""
    _check_panel(p)
    return np.median(p.forecasts, axis=0)


def apply_weights(w: WeightVector, p: ForecastPanel) -> np.ndarray:
    weights = w.weights if isinstance(w, WeightVector) else np.asarray(w, dtype=float)
    if weights.size != p.n_forecasters:
        raise DimensionMismatch(f"{weights.size} weights for {p.n_forecasters} forecasters")
    return weights @ p.forecasts


def fit_weighted_average(train: ForecastPanel, tol: float = qp.DEFAULT_TOL) -> WeightVector:
    """Simplex weights minimizing the training quadratic loss."""
    if train.n_problems < 2:
        raise TooFewPoints("fitting needs at least two problems")
    x, y, k = train.forecasts, train.outcomes, train.n_problems
    n = train.n_forecasters
    # dividing by K leaves the argmin alone and keeps the KKT residual O(1)
    problem = qp.QpProblem(
        q=2.0 * (x @ x.T) / k,
        c=-2.0 * (x @ y) / k,
        nonneg_indices=range(n),
        sum_constraint=(range(n), 1.0),
    )
    sol = qp.solve(problem, tol=tol)
    w = np.clip(sol.beta, 0.0, None)
    return WeightVector(w / w.sum())


def extremized_problem(train: ForecastPanel) -> qp.QpProblem:
    """The least-squares QP over ``beta`` for a training panel (scaled by 1/K)."""
    k = train.n_problems
    design = np.column_stack([np.ones(k), train.forecasts.T])
    return qp.QpProblem(
        q=design.T @ design / k,
        c=-(design.T @ train.outcomes) / k,
        nonneg_indices=range(1, train.n_forecasters + 1),
    )


def recover_parameters(beta) -> RecoveredParameters:
    """Map ``beta`` back to ``(alpha, w, mu0)``.

    ``alpha == 0`` leaves ``w`` unidentified (uniform weights are reported);
    ``alpha == 1`` leaves ``mu0`` unidentified (0 is reported).
    """
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size < 2:
        raise DimensionMismatch("beta needs an intercept and at least one coefficient")
    coef = beta[1:]
    if np.any(coef < -NEG_BETA_TOL):
        raise NegativeBeta(f"negative forecast coefficient {coef.min():.3e}")
    coef = np.clip(coef, 0.0, None)
    alpha = float(coef.sum())
    if alpha > ALPHA_EPS:
        weights, weights_defined = coef / alpha, True
    else:
        weights, weights_defined = np.full(coef.size, 1.0 / coef.size), False
    if abs(1.0 - alpha) > UNIT_ALPHA_EPS:
        # X* = alpha w'X + (1 - alpha) mu0, so the intercept is (1 - alpha) mu0
        mu0, mu0_defined = float(beta[0]) / (1.0 - alpha), True
    else:
        mu0, mu0_defined = 0.0, False
    return RecoveredParameters(alpha, weights, mu0, mu0_defined, weights_defined)


def fit_extremized(train: ForecastPanel, tol: float = qp.DEFAULT_TOL) -> ExtremizedAggregator:
    if train.n_problems < 2:
        raise TooFewPoints("fitting needs at least two problems")
    if np.all(np.ptp(train.forecasts, axis=1) == 0.0):
        raise DegenerateDesign("every forecaster reports a constant value")
    problem = extremized_problem(train)
    sol = qp.solve(problem, tol=tol)
    beta = sol.beta.copy()
    beta[1:] = np.clip(beta[1:], 0.0, None)
    params = recover_parameters(beta)
    fitted = beta[0] + beta[1:] @ train.forecasts
    return ExtremizedAggregator(
        weights=params.weights,
        alpha=params.alpha,
        mu0=params.mu0,
        beta_raw=beta,
        mu0_defined=params.mu0_defined,
        weights_defined=params.weights_defined,
        training_loss=float(np.mean((train.outcomes - fitted) ** 2)),
        kkt_residual=sol.kkt_residual,
        ridge=sol.ridge,
    )


def apply_extremized(a: ExtremizedAggregator, p: ForecastPanel) -> np.ndarray:
    base = apply_weights(np.asarray(a.weights), p)
    mu0 = a.mu0 if a.mu0_defined else 0.0
    if a.alpha == 1.0:
        return base
    return a.alpha * (base - mu0) + mu0


def is_extremization_of(candidate, base, mu0: float) -> np.ndarray:
    """Pointwise check that ``candidate`` moves ``base`` away from ``mu0``."""
    candidate = np.asarray(candidate, dtype=float)
    base = np.asarray(base, dtype=float)
    if candidate.shape != base.shape:
        raise DimensionMismatch(f"shapes {candidate.shape} and {base.shape} differ")
    return ((candidate <= base) & (base <= mu0)) | ((mu0 <= base) & (base <= candidate))
