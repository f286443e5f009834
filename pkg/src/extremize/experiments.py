"""End-to-end experiments: the Gaussian simulation, the concrete case study,
and standalone reliability diagrams.

Every random choice descends from ``SeedSequence(cfg.seed)`` through
``spawn``, so results depend only on the configuration and the input bytes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import aggregators as agg
from . import evaluation as ev
from . import pif
from . import regression as reg
from .errors import ConfigError, ExtremizeError, SingularStructure, TooFewRows

log = logging.getLogger(__name__)

CONCRETE_SCENARIOS = {
    "no-overlap": ("M1", "M2"),
    "high-overlap": ("M1", "M3"),
}


@dataclass
class ExperimentConfig:
    mode: str = "simulate"
    seed: int = 0
    k_train: int = 10_000
    k_test: int = 10_000
    scenario: str = "no-overlap"
    folds: int = 10
    split_ratio: float = 0.5
    n_bins: int = ev.DEFAULT_BINS
    bootstrap_b: int = ev.DEFAULT_BOOTSTRAP
    output_dir: Path | None = None

    def validate(self):
        if self.mode not in ("simulate", "concrete", "diagram"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "simulate" and (self.k_train < 2 or self.k_test < 2):
            raise ConfigError("k_train and k_test must be at least 2")
        if self.mode == "concrete":
            if self.folds < 2:
                raise ConfigError("folds must be at least 2")
            if not 0.0 < self.split_ratio < 1.0:
                raise ConfigError("split_ratio must lie strictly between 0 and 1")
        if self.n_bins < 2:
            raise ConfigError("n_bins must be at least 2")
        if self.bootstrap_b < 0:
            raise ConfigError("bootstrap count must be nonnegative")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        return self

    def echo(self) -> dict:
        out = asdict(self)
        out.pop("output_dir")
        return out


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    forecast: str
    decomposition: ev.DecompositionResult
    s2: float

    @property
    def loss(self) -> float:
        return self.decomposition.loss


@dataclass(frozen=True)
class ParameterRow:
    scenario: str
    forecast: str
    mu0: float | None
    alpha: float | None
    weights: tuple


@dataclass
class ResultsTable:
    rows: list = field(default_factory=list)
    parameters: list = field(default_factory=list)

    def add(self, scenario: str, forecast: str, y, f, n_bins: int) -> ResultRow:
        row = ResultRow(scenario, forecast, ev.decompose(y, f, n_bins), ev.sample_variance(f))
        self.rows.append(row)
        return row

    def row(self, scenario: str, forecast: str) -> ResultRow:
        for r in self.rows:
            if r.scenario == scenario and r.forecast == forecast:
                return r
        raise KeyError((scenario, forecast))

    def param(self, scenario: str, forecast: str) -> ParameterRow:
        for r in self.parameters:
            if r.scenario == scenario and r.forecast == forecast:
                return r
        raise KeyError((scenario, forecast))

    def check_identity(self):
        """Every row's components reproduce its loss up to the reported residual."""
        for r in self.rows:
            d = r.decomposition
            gap = abs(d.loss - (d.rel - d.res + d.unc))
            if gap > d.identity_residual + 1e-12 * max(1.0, d.loss):
                raise AssertionError(f"{r.scenario}/{r.forecast}: identity gap {gap} not reported")

    def write(self, out_dir: Path) -> dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        results = out_dir / "results.csv"
        with open(results, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "forecast", "L", "REL", "RES", "UNC", "s2", "identity_residual"])
            for r in self.rows:
                d = r.decomposition
                w.writerow([r.scenario, r.forecast] + [repr(v) for v in (d.loss, d.rel, d.res, d.unc, r.s2, d.identity_residual)])
        params = out_dir / "parameters.csv"
        n = max((len(p.weights) for p in self.parameters), default=0)
        with open(params, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "forecast", "mu0", "alpha"] + [f"w{j + 1}" for j in range(n)])
            for p in self.parameters:
                w.writerow(
                    [p.scenario, p.forecast, "" if p.mu0 is None else repr(p.mu0), "" if p.alpha is None else repr(p.alpha)]
                    + [repr(float(v)) for v in p.weights]
                )
        return {"results": results, "parameters": params}

    def to_json(self) -> dict:
        return {
            "results": [
                {"scenario": r.scenario, "forecast": r.forecast, "s2": r.s2, **r.decomposition.to_json()}
                for r in self.rows
            ],
            "parameters": [
                {
                    "scenario": p.scenario,
                    "forecast": p.forecast,
                    "mu0": p.mu0,
                    "alpha": p.alpha,
                    "weights": [float(v) for v in p.weights],
                }
                for p in self.parameters
            ],
        }


@dataclass
class ExperimentResult:
    table: ResultsTable
    manifest: dict
    diagrams: dict = field(default_factory=dict)
    aggregators: dict = field(default_factory=dict)
    panels: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _diagrams(named_pairs, cfg: ExperimentConfig, seed_root: np.random.SeedSequence, marginal_mean=None):
    children = seed_root.spawn(len(named_pairs))
    out = {}
    for (name, (y, f)), child in zip(named_pairs.items(), children):
        out[name] = ev.reliability_diagram(
            y, f, n_bins=cfg.n_bins, b=cfg.bootstrap_b, seed=_int_seed(child), marginal_mean=marginal_mean
        )
    return out


def _emit(result: ExperimentResult, out_dir: Path | None):
    if out_dir is None:
        return result
    out_dir = Path(out_dir)
    files = list(result.table.write(out_dir).values())
    for name, diagram in result.diagrams.items():
        files.extend(diagram.write(out_dir / "diagrams", stem=name).values())
    for name, a in result.aggregators.items():
        path = out_dir / "aggregators" / f"{name}.json"
        _write_json(path, a)
        files.append(path)
    manifest = out_dir / "manifest.json"
    _write_json(manifest, result.manifest)
    files.append(manifest)
    result.files = sorted(files)
    return result


def resolve_scenario(scenario: str) -> pif.InformationStructure:
    if scenario in pif.SCENARIOS:
        return pif.scenario_structure(scenario)
    path = Path(scenario)
    if not path.exists():
        raise ConfigError(f"scenario {scenario!r} is neither a known name nor an existing file")
    return pif.load_structure(path)


def _weights_json(w: agg.WeightVector) -> dict:
    return {"weights": [float(v) for v in w.weights]}


def run_simulate(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate()
    structure = resolve_scenario(cfg.scenario)
    scenario = cfg.scenario if cfg.scenario in pif.SCENARIOS else Path(cfg.scenario).stem
    train_ss, test_ss, diag_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    train = pif.sample_panel(structure, cfg.k_train, train_ss)
    test = pif.sample_panel(structure, cfg.k_test, test_ss)
    log.info("simulate %s: K_train=%d K_test=%d", scenario, cfg.k_train, cfg.k_test)

    w = agg.fit_weighted_average(train)
    xstar = agg.fit_extremized(train)

    y = test.outcomes
    losses = [ev.quadratic_loss(y, test.forecasts[j]) for j in range(test.n_forecasters)]
    best = int(np.argmin(losses))
    forecasts = {
        "best_individual": test.forecasts[best],
        "median": agg.median_aggregate(test),
        "xbar": agg.equal_average(test),
        "xw": agg.apply_weights(w, test),
        "xstar": agg.apply_extremized(xstar, test),
    }
    revealed = None
    try:
        revealed = pif.revealed_coefficients(structure)
        forecasts["xrevealed"] = revealed @ test.forecasts
    except SingularStructure as exc:
        log.warning("revealed aggregate skipped: %s", exc)

    table = ResultsTable()
    for name, f in forecasts.items():
        table.add(scenario, name, y, f, cfg.n_bins)
    table.parameters.append(ParameterRow(scenario, "xw", None, None, tuple(w.weights)))
    table.parameters.append(
        ParameterRow(scenario, "xstar", xstar.mu0 if xstar.mu0_defined else None, xstar.alpha, tuple(xstar.weights))
    )
    table.check_identity()

    diagrams = _diagrams({name: (y, f) for name, f in forecasts.items()}, cfg, diag_ss, marginal_mean=0.0)
    manifest = {
        "mode": "simulate",
        "config": cfg.echo(),
        "scenario": scenario,
        "structure": structure.to_json(),
        "rng": {"bit_generator": "PCG64", "numpy": np.__version__, "streams": ["train", "test", "diagrams"]},
        "best_individual": best + 1,
        "individual_losses": losses,
        "revealed_coefficients": None if revealed is None else revealed.tolist(),
        "fits": {
            "xw": _weights_json(w),
            "xstar": {**xstar.to_json(), "beta": xstar.beta_raw.tolist(), "training_loss": xstar.training_loss,
                      "kkt_residual": xstar.kkt_residual, "ridge": xstar.ridge},
        },
        **table.to_json(),
    }
    result = ExperimentResult(
        table=table,
        manifest=manifest,
        diagrams=diagrams,
        aggregators={"xw": _weights_json(w), "xstar": xstar.to_json()},
        panels={"train": train, "test": test},
    )
    return _emit(result, cfg.output_dir)


def _with_fold_context(exc: ExtremizeError, fold: int) -> ExtremizeError:
    msg = exc.args[0] if exc.args else ""
    exc.args = (f"fold {fold}: {msg}",) + exc.args[1:]
    exc.fold = fold
    return exc


def _file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _concrete_fold(d: reg.Dataset, test_rows, train_rows, split_ss, split_ratio):
    rng = np.random.Generator(np.random.PCG64(split_ss))
    shuffled = rng.permutation(train_rows)
    n1 = int(round(split_ratio * shuffled.size))
    half1, half2 = shuffled[:n1], shuffled[n1:]
    models = {name: reg.fit_ols(d, idx, half1) for name, idx in reg.MODELS.items()}
    pred_h2 = {name: reg.predict(m, d, half2) for name, m in models.items()}
    pred_test = {name: reg.predict(m, d, test_rows) for name, m in models.items()}

    fold = {"test": pred_test, "fits": {}, "agg_test": {}}
    y2 = d.outcome[half2]
    for scenario, members in CONCRETE_SCENARIOS.items():
        train_panel = pif.ForecastPanel(y2, np.vstack([pred_h2[m] for m in members]))
        test_panel = pif.ForecastPanel(d.outcome[test_rows], np.vstack([pred_test[m] for m in members]))
        w = agg.fit_weighted_average(train_panel)
        xstar = agg.fit_extremized(train_panel)
        fold["fits"][scenario] = {"xw": w, "xstar": xstar}
        fold["agg_test"][scenario] = {
            "xbar": agg.equal_average(test_panel),
            "xw": agg.apply_weights(w, test_panel),
            "xstar": agg.apply_extremized(xstar, test_panel),
        }
    return fold


def run_concrete(cfg: ExperimentConfig, dataset_path) -> ExperimentResult:
    cfg.validate()
    dataset_path = Path(dataset_path)
    d = reg.load_concrete_csv(dataset_path)
    perm_ss, split_ss, diag_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    perm = np.random.Generator(np.random.PCG64(perm_ss)).permutation(d.n_rows)
    folds = np.array_split(perm, cfg.folds)
    split_children = split_ss.spawn(cfg.folds)

    y_parts = []
    ind_parts = {name: [] for name in reg.MODELS}
    agg_parts = {s: {"xbar": [], "xw": [], "xstar": []} for s in CONCRETE_SCENARIOS}
    fits = {s: {"xw": [], "xstar": []} for s in CONCRETE_SCENARIOS}
    for i, test_rows in enumerate(folds, start=1):
        in_test = np.zeros(d.n_rows, dtype=bool)
        in_test[test_rows] = True
        train_rows = perm[~in_test[perm]]
        try:
            if test_rows.size == 0:
                raise TooFewRows(f"empty test fold ({d.n_rows} rows for {cfg.folds} folds)")
            fold = _concrete_fold(d, test_rows, train_rows, split_children[i - 1], cfg.split_ratio)
        except ExtremizeError as exc:
            raise _with_fold_context(exc, i)
        y_parts.append(d.outcome[test_rows])
        for name in reg.MODELS:
            ind_parts[name].append(fold["test"][name])
        for s in CONCRETE_SCENARIOS:
            for name in ("xbar", "xw", "xstar"):
                agg_parts[s][name].append(fold["agg_test"][s][name])
            fits[s]["xw"].append(fold["fits"][s]["xw"])
            fits[s]["xstar"].append(fold["fits"][s]["xstar"])

    y = np.concatenate(y_parts)
    table = ResultsTable()
    pooled = {}
    for name in reg.MODELS:
        f = np.concatenate(ind_parts[name])
        table.add("individual", name, y, f, cfg.n_bins)
        pooled[name] = (y, f)
    per_fold = {}
    for s in CONCRETE_SCENARIOS:
        for name in ("xbar", "xw", "xstar"):
            f = np.concatenate(agg_parts[s][name])
            table.add(s, name, y, f, cfg.n_bins)
            pooled[f"{s}_{name}"] = (y, f)
        w_mean = np.mean([w.weights for w in fits[s]["xw"]], axis=0)
        stars = fits[s]["xstar"]
        mu0s = [a.mu0 for a in stars if a.mu0_defined]
        table.parameters.append(ParameterRow(s, "xw", None, None, tuple(w_mean)))
        table.parameters.append(
            ParameterRow(
                s,
                "xstar",
                float(np.mean(mu0s)) if mu0s else None,
                float(np.mean([a.alpha for a in stars])),
                tuple(np.mean([a.weights for a in stars], axis=0)),
            )
        )
        per_fold[s] = {
            "xw": [_weights_json(w) for w in fits[s]["xw"]],
            "xstar": [
                {**a.to_json(), "beta": a.beta_raw.tolist(), "training_loss": a.training_loss,
                 "kkt_residual": a.kkt_residual, "ridge": a.ridge}
                for a in stars
            ],
        }
    table.check_identity()

    diagrams = _diagrams(pooled, cfg, diag_ss)
    manifest = {
        "mode": "concrete",
        "config": cfg.echo(),
        "dataset": {"name": dataset_path.name, "sha256": _file_digest(dataset_path), "rows": d.n_rows},
        "rng": {"bit_generator": "PCG64", "numpy": np.__version__, "streams": ["permutation", "half-splits", "diagrams"]},
        "models": {name: list(idx) for name, idx in reg.MODELS.items()},
        "scenarios": {s: list(m) for s, m in CONCRETE_SCENARIOS.items()},
        "fold_sizes": [int(f.size) for f in folds],
        "per_fold_fits": per_fold,
        **table.to_json(),
    }
    aggregators_out = {}
    for p in table.parameters:
        if p.forecast == "xstar":
            aggregators_out[f"{p.scenario}_xstar"] = {
                "alpha": p.alpha,
                "weights": [float(v) for v in p.weights],
                "mu0": 0.0 if p.mu0 is None else p.mu0,
                "mu0_defined": p.mu0 is not None,
            }
        else:
            aggregators_out[f"{p.scenario}_xw"] = {"weights": [float(v) for v in p.weights]}
    result = ExperimentResult(table=table, manifest=manifest, diagrams=diagrams, aggregators=aggregators_out)
    return _emit(result, cfg.output_dir)


def run_diagram(input_csv, cfg: ExperimentConfig) -> ExperimentResult:
    """Reliability diagram and decomposition for a two-column ``y,f`` CSV."""
    cfg.validate()
    y, f = ev.read_pairs_csv(input_csv)
    diagram = ev.reliability_diagram(y, f, n_bins=cfg.n_bins, b=cfg.bootstrap_b, seed=cfg.seed)
    decomposition = ev.decompose(y, f, cfg.n_bins)
    diagram.extra["decomposition"] = decomposition.to_json()
    result = ExperimentResult(table=ResultsTable(), manifest={}, diagrams={"": diagram})
    if cfg.output_dir is not None:
        result.files = sorted(diagram.write(cfg.output_dir).values())
    return result
