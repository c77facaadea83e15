"""Command-line front end.

``straggler-fl run --config scenario.toml --out results/``
``straggler-fl sweep --config scenario.toml --ratios 0,0.3 --strategies fedavg,fedlesscan --out results/``

``--out`` falls back to ``$STRAGGLER_FL_OUT``. Exit codes: 0 success, 2 config
error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import STRATEGIES, ScenarioConfig, load_config
from .errors import ConfigError, DivergenceError
from .simulation import ExperimentReport, Simulation, derive_seed

__all__ = ["main", "run", "sweep"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
OUT_ENV = "STRAGGLER_FL_OUT"

logger = logging.getLogger("straggler_fl")


def _execute(config: ScenarioConfig) -> ExperimentReport:
    sim = Simulation(config)
    try:
        sim.run()
    except DivergenceError as exc:
        sim.report.error = str(exc)
    return sim.report


def _json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False, default=str) + "\n"


def write_report(report: ExperimentReport, out: Path, store_text: str | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(report.csv_text())
    summary = {k: (None if isinstance(v, float) and v != v else v) for k, v in report.summary().items()}
    (out / "summary.json").write_text(_json(summary))
    (out / "plans.jsonl").write_text("".join(json.dumps(p, sort_keys=True) + "\n" for p in report.plans))
    (out / "clusters.json").write_text(_json(report.clusters))
    if store_text is not None:
        (out / "behavior.jsonl").write_text(store_text)


def run(config_path: str | Path, output_dir: str | Path) -> int:
    config = load_config(config_path)
    sim = Simulation(config)
    try:
        sim.run()
    except DivergenceError as exc:
        sim.report.error = str(exc)
    write_report(sim.report, Path(output_dir), sim.store.dumps())
    if sim.report.error:
        logger.error("divergence: %s", sim.report.error)
        return EXIT_DIVERGENCE
    return EXIT_OK


def _cell_config(base: ScenarioConfig, strategy: str, ratio: float) -> ScenarioConfig:
    return base.with_overrides({
        "strategy": strategy,
        "stragglers.ratio": ratio,
        "seed": derive_seed(base.seed, strategy, ratio),
    })


def sweep(
    config_path: str | Path,
    ratios: list[float],
    strategies: list[str],
    output_dir: str | Path,
    jobs: int = 1,
) -> int:
    if not ratios:
        raise ConfigError("ratios must list at least one straggler ratio", field="ratios")
    if not strategies:
        raise ConfigError("strategies must list at least one strategy", field="strategies")
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; choose from {', '.join(STRATEGIES)}", field="strategies")
    for r in ratios:
        if not 0 <= r <= 1:
            raise ConfigError(f"ratio {r} outside [0, 1]", field="ratios")
    base = load_config(config_path)
    cells = [(s, r) for s in strategies for r in ratios]
    configs = [_cell_config(base, s, r) for s, r in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_execute, configs))
    else:
        reports = [_execute(c) for c in configs]

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    combined = []
    table: dict = {}
    status = EXIT_OK
    for (strategy, ratio), report in zip(cells, reports):
        write_report(report, out / f"{strategy}_r{ratio:g}")
        combined.append(report.csv_text(header=not combined))
        table.setdefault(strategy, {})[f"{ratio:g}"] = {
            "accuracy": report.final_accuracy,
            "eur": report.mean_eur,
            "total_time": report.total_time,
            "total_cost": report.total_cost,
            "bias": report.bias,
        }
        if report.error:
            logger.error("divergence in %s at ratio %g: %s", strategy, ratio, report.error)
            status = EXIT_DIVERGENCE
    (out / "sweep.csv").write_text("".join(combined))
    (out / "comparison.json").write_text(_json(table))
    return status


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="straggler-fl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="scenario TOML file")
        p.add_argument("--out", default=os.environ.get(OUT_ENV),
                       help=f"output directory (default: ${OUT_ENV})")

    p_run = sub.add_parser("run", help="run one experiment")
    common(p_run)
    p_sweep = sub.add_parser("sweep", help="run strategies x straggler ratios")
    common(p_sweep)
    p_sweep.add_argument("--ratios", type=_floats, default=[0.0, 0.1, 0.3, 0.5, 0.7])
    p_sweep.add_argument("--strategies", type=_names, default=list(STRATEGIES))
    p_sweep.add_argument("--jobs", type=int, default=1, help="parallel experiment cells")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.out:
        print(f"error: --out is required when ${OUT_ENV} is unset", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "run":
            return run(args.config, args.out)
        return sweep(args.config, args.ratios, args.strategies, args.out, args.jobs)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
