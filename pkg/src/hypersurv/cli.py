"""Command-line entry point: synth, preprocess, train, evaluate, km-export."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .cohort import DataError, generate_synthetic_cohort, load_cohort, save_cohort
from .pipeline import (
    TASKS,
    RunConfig,
    SelectionResult,
    TestReport,
    TrainingError,
    combo_report,
    fit_preprocessing,
    predict_test,
    prepare_cohort,
    run_cv_search,
)
from .survstats import KMCurve

logger = logging.getLogger("hypersurv")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _global_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = _Parser(prog="hypersurv", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic cohort as CSV")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--kind", choices=["classification", "survival"], default="survival")
    p.add_argument("--signal", default="2.25,-1.8,1.5", help="comma-separated leading coefficients")
    p.add_argument("--censor-rate", type=float, default=0.3)
    p.add_argument("--id-prefix", default="P")

    def data_args(p):
        p.add_argument("--features", type=Path, help="features CSV")
        p.add_argument("--endpoints", type=Path, help="endpoints CSV")

    p = sub.add_parser("preprocess", parents=[common], help="fit standardiser, clustering and ranking")
    data_args(p)
    p.add_argument("--task", choices=sorted(TASKS))
    p.add_argument("--n-bootstrap", type=int)

    p = sub.add_parser("train", parents=[common], help="cross-validated grid search")
    data_args(p)
    p.add_argument("--task", choices=sorted(TASKS))
    p.add_argument("--model", choices=["linear", "lpnl", "phgn"])
    p.add_argument("--n-jobs", type=int)

    p = sub.add_parser("evaluate", parents=[common], help="predict a test cohort from trained runs")
    data_args(p)
    p.add_argument("--run", type=Path, action="append", help="training output directory (repeatable)")

    p = sub.add_parser("km-export", parents=[common], help="write KM curves of a test report as CSV")
    p.add_argument("--report", type=Path, required=True)
    return parser


def _load_config(path: Path | None) -> dict[str, Any]:
    if path is None:
        return {}
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc


def _pick(cli_value, config: dict, *keys, default=None):
    if cli_value is not None:
        return cli_value
    node: Any = config
    for k in keys:
        if not isinstance(node, dict) or k not in node:
            return default
        node = node[k]
    if isinstance(node, dict) and "name" in node:
        return node["name"]
    return node


def _out_dir(args, config) -> Path:
    out = _pick(args.out, config, "output", "dir", default=".")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args, config) -> int:
    return int(_pick(args.seed, config, "options", "seed", default=0))


def _cohort(args, config, which: str):
    features = _pick(args.features, config, "data", f"{which}_features")
    endpoints = _pick(args.endpoints, config, "data", f"{which}_endpoints")
    if features is None or endpoints is None:
        raise UsageError(f"{which} features and endpoints paths are required")
    for path in (features, endpoints):
        if not Path(path).exists():
            raise DataError(f"file not found: {path}")
    return load_cohort(features, endpoints)


def _run_config(args, config) -> RunConfig:
    data = dict(config)
    data["task"] = _pick(getattr(args, "task", None), config, "task")
    data["model"] = _pick(getattr(args, "model", None), config, "model", default="linear")
    if data["task"] is None:
        raise UsageError("task is required (flag --task or config section 'task')")
    options = dict(config.get("options", {}))
    options["seed"] = _seed(args, config)
    if getattr(args, "n_jobs", None) is not None:
        options["n_jobs"] = args.n_jobs
    if getattr(args, "n_bootstrap", None) is not None:
        options["n_bootstrap"] = args.n_bootstrap
    data["options"] = options
    try:
        return RunConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_synth(args, config) -> None:
    out = _out_dir(args, config)
    lead = [float(v) for v in args.signal.split(",") if v.strip()]
    if len(lead) > args.p:
        raise UsageError("signal has more coefficients than features")
    signal = np.zeros(args.p)
    signal[: len(lead)] = lead
    cohort = generate_synthetic_cohort(
        args.n, args.p, args.kind, signal, censor_rate=args.censor_rate if args.kind == "survival" else 0.0,
        seed=_seed(args, config), id_prefix=args.id_prefix,
    )
    save_cohort(cohort, out / "features.csv", out / "endpoints.csv")
    logger.info("wrote %d patients to %s", len(cohort), out)


def cmd_preprocess(args, config) -> None:
    cfg = _run_config(args, config)
    out = _out_dir(args, config)
    data = prepare_cohort(_cohort(args, config, "train"), cfg)
    prep = fit_preprocessing(
        data, cfg.endpoint, cfg.kind, n_bootstrap=cfg.n_bootstrap, seed=cfg.seed,
        cluster_threshold=cfg.cluster_threshold,
    )
    prep.standardizer.save(out / "standardizer.json")
    (out / "clusters.json").write_text(json.dumps(prep.clusters.to_dict(), indent=1))
    prep.ranking.save(out / "ranking.json")
    logger.info("ranked %d features; artifacts in %s", len(prep.ranking.feature_names), out)


def cmd_train(args, config) -> None:
    cfg = _run_config(args, config)
    out = _out_dir(args, config)
    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logger.addHandler(handler)
    try:
        cohort = _cohort(args, config, "train")
        selection = run_cv_search(cohort, cfg)
        selection.save(out)
    finally:
        logger.removeHandler(handler)
        handler.close()
    best = max((c for c in selection.configs if c.status == "ok"), key=lambda c: (c.score, -c.index))
    logger.info("best configuration %d, score %.4f; checkpoint in %s", best.index, best.score, out)


def _write_report(report: TestReport, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "test_report.json")
    for group, curve in report.km.items():
        curve.write_csv(out / f"km_{group}.csv")


def cmd_evaluate(args, config) -> None:
    out = _out_dir(args, config)
    runs = args.run or [Path(r) for r in config.get("evaluate", {}).get("runs", [])]
    if not runs:
        raise UsageError("at least one --run directory is required")
    test = _cohort(args, config, "test")
    binarize_days = float(config.get("options", {}).get("binarize_days", 730.0))
    reports = []
    for run in runs:
        selection = SelectionResult.load(run)
        reports.append(predict_test(selection, test, binarize_days))
    if len(reports) == 1:
        _write_report(reports[0], out)
        return
    tasks = {r.task for r in reports}
    if len(tasks) != 1:
        raise DataError(f"runs mix tasks: {sorted(tasks)}")
    task = tasks.pop()
    combo = combo_report(reports, test, task, binarize_days) if TASKS[task][1] == "classification" else None
    for run, report in zip(runs, reports):
        report.combo = combo
        _write_report(report, out / Path(run).name)
    if combo is not None:
        (out / "combo.json").write_text(json.dumps(combo, indent=1, sort_keys=True))
        logger.info("Combo AUC %s", combo["metrics"].get("auc"))


def cmd_km_export(args, config) -> None:
    out = _out_dir(args, config)
    if not args.report.exists():
        raise DataError(f"report not found: {args.report}")
    report = json.loads(args.report.read_text())
    if not report.get("km"):
        raise DataError(f"report {args.report} holds no KM curves")
    for group, curve in report["km"].items():
        KMCurve.from_dict(curve).write_csv(out / f"km_{group}.csv")


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "km-export": cmd_km_export,
}


def cli_main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(getattr(logging, args.log_level))
    try:
        config = _load_config(args.config)
        COMMANDS[args.command](args, config)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
