"""Unified command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 endpoint error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from . import pipeline as pipeline_mod
from . import report as report_mod
from .config import PipelineConfig, load_config
from .errors import ConfigError, EndpointUnavailable, HydroError
from .hpo import EarlyStopPolicy, PlateauPolicy, default_space, load_space
from .orchestrate import TrainerSpec, run_study
from .pipeline import Funnel

log = logging.getLogger("hydrocurate.cli")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="hydrocurate", description=__doc__)
    parser.add_argument("--config", default=None, help="pipeline config TOML")
    parser.add_argument("--seed", type=int, default=None, help="override config seeds")
    parser.add_argument("--out-dir", default="out", help="artifact directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="fetch catalog.csv and parameters.csv")

    p = sub.add_parser("daynight", help="classify and keep daytime records")
    p.add_argument("--catalog", required=True)
    p.add_argument("--sites", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--funnel", default=None)

    p = sub.add_parser("segval", help="validate candidate masks against surrogates")
    p.add_argument("--catalog", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gated-out", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, dest="seg_seed")

    p = sub.add_parser("align", help="merge catalog with the parameter series")
    p.add_argument("--catalog", required=True)
    p.add_argument("--params", required=True)

    p = sub.add_parser("study", help="run a hyperparameter study against a trainer")
    p.add_argument("--trainer", required=True, nargs="+")
    p.add_argument("--space", default=None, help="search-space TOML")
    p.add_argument("--budget", type=int, default=20)
    p.add_argument("--seed", type=int, default=7, dest="study_seed")
    p.add_argument("--ledger", required=True)
    p.add_argument("--arch", default="densenet121")
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--plateau-patience", type=int, default=2)

    p = sub.add_parser("evaluate", help="compute the metric suite over predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--table", required=True)

    p = sub.add_parser("report", help="emit funnel and confusion figures")
    p.add_argument("--funnel", default=None)
    p.add_argument("--evaluation", default=None, help="report.json from evaluate")

    p = sub.add_parser("pipeline", help="run ingest through align")
    p.add_argument("--force", action="store_true")
    return parser


def _load_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config.gmm_seed = args.seed
        config.split_seed = args.seed
    return config


def _cmd_ingest(args) -> int:
    config = _load_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline_mod.stage_ingest(config, out)
    return 0


def _cmd_daynight(args) -> int:
    config = _load_config(args)
    if args.sites:
        config.site_registry = args.sites
    funnel = Funnel.empty()
    pipeline_mod.stage_daynight(config, args.catalog, args.out, funnel)
    if args.funnel:
        funnel.write(args.funnel)
    return 0


def _cmd_segval(args) -> int:
    config = _load_config(args)
    config.images_dir = args.images
    config.masks_dir = args.masks
    if args.k is not None:
        config.gmm_k = args.k
    if args.seg_seed is not None:
        config.gmm_seed = args.seg_seed
    pipeline_mod.stage_segval(config, args.catalog, args.out, args.gated_out)
    return 0


def _cmd_align(args) -> int:
    config = _load_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pipeline_mod.stage_align(config, args.catalog, args.params, out)
    return 0


def _cmd_study(args) -> int:
    space = load_space(args.space) if args.space else default_space()
    spec = TrainerSpec(
        command=tuple(args.trainer),
        architecture=args.arch,
        max_epochs=args.max_epochs,
    )
    policies = [
        EarlyStopPolicy(patience=args.patience),
        PlateauPolicy(patience=args.plateau_patience),
    ]
    result = run_study(
        spec, space, budget=args.budget, seed=args.study_seed,
        policies=policies, ledger_path=args.ledger,
    )
    config, objective = result.incumbent
    print(f"incumbent {config.trial_id}: {objective:.6g}")
    return 0


PREDICTION_COLUMNS = ("image_path", "actual", "predicted", "model_tag", "parameter")


def _cmd_evaluate(args) -> int:
    groups: dict[str, dict[str, list[tuple[float, float]]]] = defaultdict(lambda: defaultdict(list))
    with open(args.predictions, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(PREDICTION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{args.predictions} missing columns {sorted(missing)}")
        for row in reader:
            groups[row["parameter"]][row["model_tag"]].append(
                (float(row["actual"]), float(row["predicted"]))
            )

    doc: dict = {"parameters": {}}
    table_lines = []
    for parameter in sorted(groups):
        models = []
        binned = []
        reports = []
        for tag in sorted(groups[parameter]):
            pairs = groups[parameter][tag]
            pset = metrics_mod.PredictionSet(
                actual=np.array([a for a, _ in pairs]),
                predicted=np.array([p for _, p in pairs]),
                model_tag=tag,
            )
            rep = metrics_mod.regression_report(pset)
            reports.append(rep)
            models.append(metrics_mod.report_as_dict(rep))
            br = metrics_mod.binned_confusion(pset)
            binned.append(
                {
                    "model_tag": tag,
                    "cut_points": list(br.cut_points),
                    "confusion": br.confusion.tolist(),
                    "degenerate": br.degenerate,
                }
            )
        doc["parameters"][parameter] = {"models": models, "binned": binned}
        table_lines.append(f"## {parameter}\n")
        table_lines.append(metrics_mod.metric_table(reports))
        table_lines.append("")

    Path(args.out).write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    Path(args.table).write_text("\n".join(table_lines), encoding="utf-8")
    return 0


def _cmd_report(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.funnel:
        funnel = Funnel.read(args.funnel)
        report_mod.emit_funnel(funnel.stages, out / "funnel.svg", out / "funnel.md")
    if args.evaluation:
        doc = json.loads(Path(args.evaluation).read_text(encoding="utf-8"))
        reports = []
        for parameter, payload in sorted(doc["parameters"].items()):
            for entry in payload["binned"]:
                reports.append(
                    metrics_mod.BinnedReport(
                        cut_points=tuple(entry["cut_points"]),
                        confusion=np.array(entry["confusion"], dtype=np.int64),
                        degenerate=entry["degenerate"],
                        model_tag=f"{parameter}_{entry['model_tag']}",
                    )
                )
        report_mod.emit_confusions(reports, out)
    if not args.funnel and not args.evaluation:
        raise _UsageError("report needs --funnel and/or --evaluation")
    return 0


def _cmd_pipeline(args) -> int:
    config = _load_config(args)
    pipeline_mod.run_pipeline(config, args.out_dir, force=args.force)
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "daynight": _cmd_daynight,
    "segval": _cmd_segval,
    "align": _cmd_align,
    "study": _cmd_study,
    "evaluate": _cmd_evaluate,
    "report": _cmd_report,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except EndpointUnavailable as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return 3
    except (HydroError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
