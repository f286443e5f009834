"""Command-line entry point: ``extremize {simulate,concrete,diagram}``.

Failures exit with status 1 and print a JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation as ev
from . import pif
from .errors import ExtremizeError, QpFailure
from .experiments import ExperimentConfig, run_concrete, run_diagram, run_simulate

log = logging.getLogger("extremize")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master RNG seed (default: 0)")
    common.add_argument("--bins", type=int, default=ev.DEFAULT_BINS, help="equal-count bins (default: 10)")
    common.add_argument(
        "--bootstrap", type=int, default=ev.DEFAULT_BOOTSTRAP, help="bootstrap replicates per diagram (default: 1000)"
    )
    common.add_argument("--out", type=Path, required=True, help="output directory")
    common.add_argument("--debug", action="store_true", help="dump the QP (q, c, beta, residual) of a failed fit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="extremize", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[common], help="Gaussian partial-information experiment")
    sim.add_argument("--k-train", type=int, default=10_000)
    sim.add_argument("--k-test", type=int, default=10_000)
    sim.add_argument(
        "--scenario",
        default="no-overlap",
        help="no-overlap, high-overlap, or a structure JSON file {\"delta\": [...], \"rho\": ...}",
    )
    sim.add_argument("--save-panels", action="store_true", help="also write the train/test panels as CSV")

    con = sub.add_parser("concrete", parents=[common], help="concrete compressive-strength case study")
    con.add_argument("--data", type=Path, required=True, help="9-column concrete CSV with header")
    con.add_argument("--folds", type=int, default=10)
    con.add_argument("--split-ratio", type=float, default=0.5, help="share of training rows used to fit the models")

    dia = sub.add_parser("diagram", parents=[common], help="reliability diagram for a y,f CSV")
    dia.add_argument("--data", type=Path, required=True, help="two-column CSV of outcome,forecast pairs")
    return parser


def _error_record(exc: BaseException, command: str | None) -> dict:
    record = {"error": type(exc).__name__, "message": str(exc), "command": command}
    fold = getattr(exc, "fold", None)
    if fold is not None:
        record["fold"] = fold
    return record


def _dump_qp(exc: QpFailure, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "qp_debug.json"
    sol = exc.solution
    payload = {
        "problem": None if exc.problem is None else exc.problem.to_json(),
        "beta": None if sol is None else sol.beta.tolist(),
        "kkt_residual": None if sol is None else sol.kkt_residual,
        "solution": None if sol is None else sol.to_json(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
    return path


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "simulate":
            cfg = ExperimentConfig(
                mode="simulate",
                seed=args.seed,
                k_train=args.k_train,
                k_test=args.k_test,
                scenario=args.scenario,
                n_bins=args.bins,
                bootstrap_b=args.bootstrap,
                output_dir=args.out,
            )
            result = run_simulate(cfg)
            if args.save_panels:
                panels = args.out / "panels"
                panels.mkdir(parents=True, exist_ok=True)
                for name, panel in result.panels.items():
                    pif.write_panel_csv(panel, panels / f"{name}.csv")
                    result.files.append(panels / f"{name}.csv")
        elif args.command == "concrete":
            cfg = ExperimentConfig(
                mode="concrete",
                seed=args.seed,
                folds=args.folds,
                split_ratio=args.split_ratio,
                n_bins=args.bins,
                bootstrap_b=args.bootstrap,
                output_dir=args.out,
            )
            result = run_concrete(cfg, args.data)
        else:
            cfg = ExperimentConfig(
                mode="diagram", seed=args.seed, n_bins=args.bins, bootstrap_b=args.bootstrap, output_dir=args.out
            )
            result = run_diagram(args.data, cfg)
    except (ExtremizeError, OSError) as exc:
        if args.debug and isinstance(exc, QpFailure):
            log.error("QP dump written to %s", _dump_qp(exc, args.out))
        print(json.dumps(_error_record(exc, args.command)), file=sys.stderr)
        return 1

    for path in result.files:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
