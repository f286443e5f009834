"""Quadratic loss, its reliability/resolution/uncertainty split, and
reliability diagrams for real-valued forecasts."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, ParseError, TooFewPoints, TooManyBins

DEFAULT_BINS = 10
DEFAULT_BOOTSTRAP = 1000
ENVELOPE_QUANTILES = (2.5, 97.5)


def _pair(y, f):
    y = np.asarray(y, dtype=float).reshape(-1)
    f = np.asarray(f, dtype=float).reshape(-1)
    if y.size != f.size:
        raise DimensionMismatch(f"{y.size} outcomes but {f.size} forecasts")
    if y.size < 1:
        raise TooFewPoints("need at least one forecast-outcome pair")
    return y, f


def quadratic_loss(y, f) -> float:
    y, f = _pair(y, f)
    return float(np.mean((y - f) ** 2))


def sample_variance(f) -> float:
    f = np.asarray(f, dtype=float).reshape(-1)
    if f.size < 2:
        raise TooFewPoints("sample variance needs at least two values")
    return float(np.var(f, ddof=1))


@dataclass(frozen=True)
class DecompositionResult:
    loss: float
    rel: float
    res: float
    unc: float
    identity_residual: float
    n_groups: int
    binned: bool

    def to_json(self) -> dict:
        return {
            "loss": self.loss,
            "rel": self.rel,
            "res": self.res,
            "unc": self.unc,
            "identity_residual": self.identity_residual,
            "n_groups": self.n_groups,
            "binned": self.binned,
        }


def equal_count_order(f: np.ndarray) -> np.ndarray:
    """Stable forecast order; ties keep their original index order."""
    return np.argsort(f, kind="stable")


def _bin_sizes(k: int, n_bins: int) -> np.ndarray:
    base, extra = divmod(k, n_bins)
    return np.array([base + 1] * extra + [base] * (n_bins - extra), dtype=int)


def _bin_labels(k: int, n_bins: int) -> np.ndarray:
    return np.repeat(np.arange(n_bins), _bin_sizes(k, n_bins))


def decompose(y, f, n_bins: int | None = None) -> DecompositionResult:
    """Split the average quadratic loss into REL - RES + UNC.

    With ``n_bins=None`` forecasts are grouped by exact value and the identity
    is exact.  With ``n_bins`` equal-count bins each group's forecast is the
    within-bin mean forecast; the loss is still computed on the raw forecasts,
    so the identity only holds up to ``identity_residual``.
    """
    y, f = _pair(y, f)
    k = y.size
    if n_bins is None:
        values, labels = np.unique(f, return_inverse=True)
        groups = values.size
        counts = np.bincount(labels, minlength=groups)
        f_group = values
    else:
        if n_bins < 1:
            raise ValueError("n_bins must be positive")
        if n_bins > k:
            raise TooManyBins(f"{n_bins} bins for {k} pairs")
        groups = n_bins
        labels = np.empty(k, dtype=int)
        labels[equal_count_order(f)] = _bin_labels(k, n_bins)
        counts = np.bincount(labels, minlength=groups)
        f_group = np.bincount(labels, weights=f, minlength=groups) / counts
    y_group = np.bincount(labels, weights=y, minlength=groups) / counts
    y_bar = float(np.mean(y))

    loss = float(np.mean((y - f) ** 2))
    rel = float(np.sum(counts * (f_group - y_group) ** 2) / k)
    res = float(np.sum(counts * (y_group - y_bar) ** 2) / k)
    unc = float(np.mean((y - y_bar) ** 2))
    return DecompositionResult(
        loss=loss,
        rel=rel,
        res=res,
        unc=unc,
        identity_residual=abs(loss - (rel - res + unc)),
        n_groups=int(groups),
        binned=n_bins is not None,
    )


@dataclass(frozen=True)
class ReliabilityDiagram:
    mean_forecast: np.ndarray
    mean_outcome: np.ndarray
    counts: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    marginal_mean: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    n_bins: int
    bootstrap_b: int
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def bins(self) -> list[tuple[float, float, int]]:
        return [
            (float(a), float(b), int(c))
            for a, b, c in zip(self.mean_forecast, self.mean_outcome, self.counts)
        ]

    def summary(self) -> dict:
        return {
            "n_bins": self.n_bins,
            "bootstrap_b": self.bootstrap_b,
            "seed": self.seed,
            "marginal_mean": self.marginal_mean,
            "envelope_quantiles": list(ENVELOPE_QUANTILES),
            "bins": [
                {"mean_forecast": a, "mean_outcome": b, "count": c, "lo": float(lo), "hi": float(hi)}
                for (a, b, c), lo, hi in zip(self.bins, self.lower, self.upper)
            ],
            "histogram": {
                "edges": [float(e) for e in self.hist_edges],
                "counts": [int(c) for c in self.hist_counts],
            },
            **self.extra,
        }

    def write(self, out_dir, stem: str = "") -> dict[str, Path]:
        """Write ``bins.csv``, ``hist.csv`` and ``summary.json`` (prefixed by ``stem``)."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        prefix = f"{stem}_" if stem else ""
        paths = {
            "bins": out_dir / f"{prefix}bins.csv",
            "hist": out_dir / f"{prefix}hist.csv",
            "summary": out_dir / f"{prefix}summary.json",
        }
        with open(paths["bins"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["mean_forecast", "mean_outcome", "count", "lo", "hi"])
            for (a, b, c), lo, hi in zip(self.bins, self.lower, self.upper):
                w.writerow([repr(a), repr(b), c, repr(float(lo)), repr(float(hi))])
        with open(paths["hist"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["edge_lo", "edge_hi", "count"])
            for lo, hi, c in zip(self.hist_edges[:-1], self.hist_edges[1:], self.hist_counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
        with open(paths["summary"], "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")
        return paths


def _binned_means(y_sorted, f_sorted, labels, n_bins):
    counts = np.bincount(labels, minlength=n_bins)
    mf = np.bincount(labels, weights=f_sorted, minlength=n_bins) / counts
    my = np.bincount(labels, weights=y_sorted, minlength=n_bins) / counts
    return mf, my, counts


def reliability_diagram(
    y,
    f,
    n_bins: int = DEFAULT_BINS,
    b: int = DEFAULT_BOOTSTRAP,
    seed=0,
    marginal_mean: float | None = None,
    hist_bins: int = 20,
    executor=None,
) -> ReliabilityDiagram:
    """Equal-count reliability diagram with a percentile bootstrap band.

    Each bootstrap replicate resamples the pairs with replacement, re-bins the
    resample and records every bin's mean outcome.  Replicate ``r`` draws from
    its own child of ``SeedSequence(seed)``, so the band does not depend on
    how replicates are scheduled; pass a ``concurrent.futures`` executor to
    run them in parallel.  The band is widened to contain the point
    estimate when the percentiles alone would miss it.
    """
    y, f = _pair(y, f)
    k = y.size
    if n_bins < 2:
        raise ValueError("n_bins must be at least 2")
    if n_bins > k:
        raise TooManyBins(f"{n_bins} bins for {k} pairs")
    if b < 0:
        raise ValueError("bootstrap count must be nonnegative")

    order = equal_count_order(f)
    labels = _bin_labels(k, n_bins)
    mf, my, counts = _binned_means(y[order], f[order], labels, n_bins)

    if b > 0:
        rank = np.empty(k, dtype=np.int64)
        rank[order] = np.arange(k)
        children = np.random.SeedSequence(seed).spawn(b)

        def replicate(child):
            idx = np.random.Generator(np.random.PCG64(child)).integers(0, k, size=k)
            # sorting the resample by rank reproduces the stable forecast order
            sorted_idx = order[np.sort(rank[idx])]
            return np.bincount(labels, weights=y[sorted_idx], minlength=n_bins) / counts

        mapper = map if executor is None else executor.map
        reps = np.array(list(mapper(replicate, children)))
        lo, hi = np.percentile(reps, ENVELOPE_QUANTILES, axis=0)
        lower = np.minimum(lo, my)
        upper = np.maximum(hi, my)
    else:
        lower = my.copy()
        upper = my.copy()

    hist_counts, hist_edges = np.histogram(f, bins=hist_bins)
    return ReliabilityDiagram(
        mean_forecast=mf,
        mean_outcome=my,
        counts=counts,
        lower=lower,
        upper=upper,
        marginal_mean=float(np.mean(y)) if marginal_mean is None else float(marginal_mean),
        hist_edges=hist_edges,
        hist_counts=hist_counts,
        n_bins=n_bins,
        bootstrap_b=b,
        seed=seed if isinstance(seed, int) else None,
    )


def read_pairs_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Two numeric columns ``y,f`` with an optional header row."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                if lineno == 1 and not rows:
                    continue
                raise ParseError(f"{path}:{lineno}: non-numeric value in {row}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    data = np.array(rows)
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{path}: non-finite values")
    return data[:, 0], data[:, 1]
