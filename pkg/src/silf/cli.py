"""Command line interface: run a sequence, evaluate a checkpoint, build a report.

Every failure prints a single line starting with ``SILF-ERR:`` and exits
non-zero: 2 for invalid inputs, 3 for a stale (cannibalized) model view,
1 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .checkpoint import NotACheckpointError, CheckpointFormatError, load_checkpoint
from .config import ConfigError, RunSetup, build_datasets, load_config
from .engine import (
    BASELINE_MODES,
    EngineError,
    RunResult,
    config_hash_of,
    evaluate_task,
    run_baseline,
    run_sequence,
)
from .maskstore import StaleModelError
from .metrics import metrics_payload
from .report import MissingArtifactsError, write_report
from .tasksuite import ParseError, load_csv, save_csv

log = logging.getLogger("silf")

CHECKPOINT_NAME = "silf.ckpt"
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse errors are validation errors
        print(f"SILF-ERR: {message}", file=sys.stderr)
        raise SystemExit(2)


def _setup_logging(logfile: Path | None = None) -> None:
    level_name = os.environ.get("SILF_LOG", "info").lower()
    if level_name not in LOG_LEVELS:
        raise ConfigError(f"SILF_LOG must be one of {sorted(LOG_LEVELS)}, got {level_name!r}")
    root = logging.getLogger("silf")
    root.setLevel(LOG_LEVELS[level_name])
    root.handlers.clear()
    stream = logging.StreamHandler(sys.stderr)
    stream.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(stream)
    if logfile is not None:
        logfile.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(logfile, mode="w", encoding="utf-8")
        file_handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        root.addHandler(file_handler)


def _write_relevance_csv(result: RunResult, path: Path) -> None:
    lines = ["task,prev_task,srcc,reuse_ratio,muted_count"]
    for report in result.relevance_reports:
        for row in report.rows:
            lines.append(
                f"{report.task},{row.prev_task},{row.srcc!r},{row.reuse_ratio!r},{row.muted_count}"
            )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _setup_logging(out / "run.log")
    started = time.time()

    setup: RunSetup = load_config(args.config, args.seed)
    datasets = build_datasets(setup)
    log.info("generated %d datasets (%d samples each)", len(datasets), datasets[0].sample_count)

    dataset_dir = out / "datasets"
    dataset_dir.mkdir(exist_ok=True)
    for i, dataset in enumerate(datasets, start=1):
        save_csv(dataset, dataset_dir / f"task_{i}.csv")

    ckpt_path = out / CHECKPOINT_NAME
    if args.baseline is None:
        result = run_sequence(
            setup.config, datasets, out_path=ckpt_path, config_json=setup.canonical_json
        )
    else:
        result = run_baseline(
            setup.config,
            datasets,
            args.baseline,
            out_path=ckpt_path,
            config_json=setup.canonical_json,
        )

    (out / "score_matrix.csv").write_text(result.score_matrix.to_csv_text(), encoding="utf-8")
    payload = metrics_payload(result.score_matrix, setup.config.n)
    (out / "metrics.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _write_relevance_csv(result, out / "relevance.csv")

    artifacts = sorted(
        str(p.relative_to(out))
        for p in out.rglob("*")
        if p.is_file() and p.name != "run_manifest.json"
    )
    manifest = {
        "baseline": args.baseline,
        "seed": setup.config.seed,
        "config_hash": config_hash_of(setup.canonical_json),
        "artifacts": artifacts,
        "relevance_timing": "before reclamation, using each previous task's currently valid view",
        "wall_clock_seconds": {"total": time.time() - started, **result.phase_seconds},
    }
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    log.info("run complete; artifacts in %s", out)
    return 0


def cmd_eval(args) -> int:
    _setup_logging()
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = load_csv(args.data)
    value = evaluate_task(checkpoint, args.task, dataset, split="test", mode=args.mode)
    print(f"{value:.6f}")
    return 0


def cmd_report(args) -> int:
    _setup_logging()
    path = write_report(args.out)
    log.info("report written to %s", path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="silf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train a task sequence and write run artifacts")
    run.add_argument("--config", help="JSON config file (bundled default when omitted)")
    run.add_argument("--out", required=True, help="output directory for artifacts")
    run.add_argument("--baseline", choices=BASELINE_MODES, help="run a reference regime instead")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", help="evaluate one task of a checkpoint on a dataset CSV (test rows)")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--task", required=True, type=int)
    ev.add_argument("--mode", choices=("max", "min"), help="model view; defaults to the valid one")
    ev.add_argument("--data", required=True, help="dataset CSV as written by a run")
    ev.set_defaults(func=cmd_eval)

    rep = sub.add_parser("report", help="render report.md and figures from run artifacts")
    rep.add_argument("--out", required=True, help="directory holding the run artifacts")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit:
        raise
    except (ConfigError, MissingArtifactsError, ParseError, LookupError) as exc:
        print(f"SILF-ERR: {exc}", file=sys.stderr)
        return 2
    except StaleModelError as exc:
        print(f"SILF-ERR: {exc}", file=sys.stderr)
        return 3
    except NotACheckpointError as exc:
        print(f"SILF-ERR: {exc}", file=sys.stderr)
        return 1
    except (CheckpointFormatError, EngineError) as exc:
        print(f"SILF-ERR: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # any other failure is a runtime error
        log.debug("unexpected failure", exc_info=True)
        print(f"SILF-ERR: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
