"""Gaussian partial-information model.

The outcome ``Y`` and the forecasts ``X_1..X_N`` are jointly Gaussian with
mean zero, unit outcome variance and covariance::

    [ 1      delta' ]
    [ delta  Sigma  ]

where ``Sigma`` has ``delta`` on its diagonal and the pairwise information
overlaps off the diagonal.  Under this model every forecaster is reliable and
the best possible aggregate ``E(Y | X)`` is linear in the forecasts.

Random numbers come from numpy's PCG64 bit generator.  Any seed accepted by
``numpy.random.SeedSequence`` works; independent substreams are obtained with
``SeedSequence.spawn`` so that work split across processes draws exactly the
same numbers as the sequential run.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from .errors import (
    CholeskyFailure,
    DeltaOutOfRange,
    DimensionMismatch,
    NotPositiveSemidefinite,
    ParseError,
    SingularStructure,
)

PSD_RTOL = 1e-10
SINGULAR_RTOL = 1e-12
JITTER_SCALE = 1e-12
JITTER_RETRIES = 3

# Named scenarios with five forecasters, delta_j = 0.1 + 0.02 j.
SCENARIO_DELTA = tuple(0.1 + 0.02 * j for j in range(1, 6))
SCENARIOS = {
    "no-overlap": 0.0,
    "high-overlap": 0.12,
}


@dataclass(frozen=True)
class InformationStructure:
    """Validated covariance structure for ``n_forecasters`` forecasters."""

    delta: np.ndarray
    rho: np.ndarray
    n_forecasters: int = field(init=False)

    def __post_init__(self):
        delta = np.array(self.delta, dtype=float).reshape(-1)
        rho = np.array(self.rho, dtype=float)
        n = delta.size
        if n < 1:
            raise DimensionMismatch("delta must contain at least one forecaster")
        if rho.shape != (n, n):
            raise DimensionMismatch(f"rho has shape {rho.shape}, expected {(n, n)}")
        if not (np.all(np.isfinite(delta)) and np.all(np.isfinite(rho))):
            raise ValueError("structure entries must be finite")
        if np.any(delta < 0.0) or np.any(delta > 1.0):
            raise DeltaOutOfRange(f"information levels must lie in [0, 1], got {delta.tolist()}")
        if not np.array_equal(rho, rho.T):
            raise DimensionMismatch("rho must be exactly symmetric")
        if not np.array_equal(np.diag(rho), delta):
            raise DimensionMismatch("diagonal of rho must equal delta")
        delta.setflags(write=False)
        rho.setflags(write=False)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "n_forecasters", n)

        eig = np.linalg.eigvalsh(self.covariance())
        if eig[0] < -PSD_RTOL * max(eig[-1], 0.0):
            raise NotPositiveSemidefinite(eig[0])

    @property
    def sigma(self) -> np.ndarray:
        """Forecast covariance block (same array as ``rho``)."""
        return self.rho

    def covariance(self) -> np.ndarray:
        """Full (N+1)x(N+1) covariance of ``(Y, X_1, ..., X_N)``."""
        n = self.n_forecasters
        cov = np.empty((n + 1, n + 1))
        cov[0, 0] = 1.0
        cov[0, 1:] = self.delta
        cov[1:, 0] = self.delta
        cov[1:, 1:] = self.rho
        return cov

    def to_json(self) -> dict:
        return {"delta": self.delta.tolist(), "rho": self.rho.tolist()}


@dataclass(frozen=True)
class ForecastPanel:
    """K outcomes with an N x K matrix of forecasts (row j is forecaster j)."""

    outcomes: np.ndarray
    forecasts: np.ndarray

    def __post_init__(self):
        y = np.array(self.outcomes, dtype=float).reshape(-1)
        x = np.array(self.forecasts, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.ndim != 2:
            raise DimensionMismatch("forecasts must be a 2-D N x K matrix")
        if y.size < 1 or x.shape[0] < 1:
            raise DimensionMismatch("a panel needs K >= 1 problems and N >= 1 forecasters")
        if x.shape[1] != y.size:
            raise DimensionMismatch(
                f"forecasts have {x.shape[1]} columns but there are {y.size} outcomes"
            )
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x))):
            raise ValueError("panel entries must be finite")
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "forecasts", x)

    @property
    def n_forecasters(self) -> int:
        return self.forecasts.shape[0]

    @property
    def n_problems(self) -> int:
        return self.outcomes.size

    def shifted(self, mu0: float) -> "ForecastPanel":
        """Panel with outcomes and forecasts translated by ``mu0``."""
        return ForecastPanel(self.outcomes + mu0, self.forecasts + mu0)

    def subset(self, forecasters) -> "ForecastPanel":
        return ForecastPanel(self.outcomes, self.forecasts[list(forecasters)])


def build_structure(delta, rho_offdiag=0.0) -> InformationStructure:
    """Assemble and validate an information structure.

    ``rho_offdiag`` is either a scalar overlap shared by every pair or a full
    symmetric N x N matrix whose diagonal is ignored and replaced by ``delta``.
    """
    delta = np.array(delta, dtype=float).reshape(-1)
    n = delta.size
    if n < 1:
        raise DimensionMismatch("delta must contain at least one forecaster")
    rho_in = np.asarray(rho_offdiag, dtype=float)
    if rho_in.ndim == 0:
        rho = np.full((n, n), float(rho_in))
    elif rho_in.shape == (n, n):
        if not np.allclose(rho_in, rho_in.T, rtol=0.0, atol=1e-12):
            raise DimensionMismatch("overlap matrix must be symmetric")
        rho = 0.5 * (rho_in + rho_in.T)
    else:
        raise DimensionMismatch(f"overlap has shape {rho_in.shape}, expected scalar or {(n, n)}")
    np.fill_diagonal(rho, delta)
    return InformationStructure(delta, rho)


def scenario_structure(name: str) -> InformationStructure:
    """One of the two published five-forecaster scenarios."""
    try:
        overlap = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; expected one of {sorted(SCENARIOS)}") from None
    return build_structure(SCENARIO_DELTA, overlap)


def structure_from_json(obj) -> InformationStructure:
    """Parse ``{"delta": [...], "rho": scalar-or-matrix}``; ``rho`` defaults to 0."""
    if not isinstance(obj, dict) or "delta" not in obj:
        raise ParseError('structure JSON must be an object with a "delta" array')
    return build_structure(obj["delta"], obj.get("rho", 0.0))


def load_structure(path) -> InformationStructure:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    return structure_from_json(obj)


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    """Matrix ``F`` with ``F @ F.T == cov``.

    Plain Cholesky first.  For PSD-but-singular matrices a pivoted LDL' with
    the tiny diagonal entries clipped to zero keeps exact linear relations
    (e.g. a fully informed forecaster equals the outcome); jitter on the
    diagonal is the last resort.
    """
    scale = float(np.max(np.diag(cov)))
    try:
        chol = np.linalg.cholesky(cov)
        # a pivot at rounding level means the matrix is singular in truth
        if np.min(np.diag(chol)) ** 2 > PSD_RTOL * scale:
            return chol
    except np.linalg.LinAlgError:
        pass
    lu, d, _ = scipy.linalg.ldl(cov, lower=True)
    dd = np.diag(d)
    is_diagonal = np.count_nonzero(d - np.diag(dd)) == 0
    if is_diagonal and dd.min() >= -PSD_RTOL * scale:
        return lu * np.sqrt(np.clip(dd, 0.0, None))
    jitter = JITTER_SCALE * scale
    for attempt in range(1, JITTER_RETRIES + 1):
        try:
            return np.linalg.cholesky(cov + attempt * jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            continue
    raise CholeskyFailure(f"could not factor covariance after {JITTER_RETRIES} jitter retries")


def sample_panel(s: InformationStructure, k: int, seed) -> ForecastPanel:
    """Draw ``k`` independent problems from the structure.

    Deterministic in ``(s, k, seed)``.
    """
    if k < 1:
        raise ValueError("panel size must be at least 1")
    factor = _psd_factor(s.covariance())
    z = _generator(seed).standard_normal((k, s.n_forecasters + 1))
    draws = z @ factor.T
    return ForecastPanel(draws[:, 0], draws[:, 1:].T)


def _check_invertible(s: InformationStructure):
    eig = np.linalg.eigvalsh(s.sigma)
    if eig[0] <= SINGULAR_RTOL * eig[-1]:
        raise SingularStructure(
            f"forecast covariance is singular (eigenvalues {eig[0]:.3e} .. {eig[-1]:.3e})"
        )


def revealed_coefficients(s: InformationStructure) -> np.ndarray:
    """Coefficients ``c`` of the revealed aggregate ``c' X_k``."""
    _check_invertible(s)
    return np.linalg.solve(s.sigma, s.delta)


def revealed_variance(s: InformationStructure) -> float:
    """Variance of the revealed aggregate, ``delta' Sigma^-1 delta``."""
    return float(s.delta @ revealed_coefficients(s))


def revealed_aggregate(s: InformationStructure, p: ForecastPanel) -> np.ndarray:
    if p.n_forecasters != s.n_forecasters:
        raise DimensionMismatch(
            f"panel has {p.n_forecasters} forecasters, structure has {s.n_forecasters}"
        )
    return revealed_coefficients(s) @ p.forecasts


def write_panel_csv(p: ForecastPanel, path):
    """CSV with header ``y,x1,...,xN`` and one row per problem."""
    header = ["y"] + [f"x{j + 1}" for j in range(p.n_forecasters)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(p.n_problems):
            writer.writerow([repr(float(p.outcomes[k]))] + [repr(float(v)) for v in p.forecasts[:, k]])


def read_panel_csv(path) -> ForecastPanel:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        expected = ["y"] + [f"x{j + 1}" for j in range(len(header) - 1)]
        if [h.strip() for h in header] != expected or len(header) < 2:
            raise ParseError(f"{path}: header must be y,x1,...,xN")
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: no data rows")
    data = np.array(rows)
    return ForecastPanel(data[:, 0], data[:, 1:].T)
