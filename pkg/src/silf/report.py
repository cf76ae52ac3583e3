"""Render run artifacts into a markdown report with figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .metrics import ScoreMatrix
from . import plotting

REQUIRED_ARTIFACTS = ("score_matrix.csv", "metrics.json", "relevance.csv")
CHECKPOINT_NAME = "silf.ckpt"
REPORT_NAME = "report.md"
BASELINE_DIR_PREFIX = "baseline_"


class MissingArtifactsError(FileNotFoundError):
    """The output directory lacks the artifacts the report needs."""


def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.6f}"


def _read_relevance(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _score_table(matrix: ScoreMatrix) -> list[str]:
    t = matrix.task_count
    lines = ["| after task | " + " | ".join(f"task {i}" for i in range(1, t + 1)) + " |"]
    lines.append("|" + " --- |" * (t + 1))
    for m in range(1, t + 1):
        row = matrix.row(m)
        cells = [f"{v:.4f}" for v in row] + [""] * (t - m)
        lines.append(f"| {m} | " + " | ".join(cells) + " |")
    return lines


def write_report(out_dir: str | Path) -> Path:
    """Compose report.md (plus rendered figures) from the artifacts in ``out_dir``."""
    out = Path(out_dir)
    missing = [name for name in REQUIRED_ARTIFACTS if not (out / name).is_file()]
    if missing:
        raise MissingArtifactsError(
            f"missing run artifacts in {out}: {', '.join(missing)}; run the pipeline first"
        )

    matrix = ScoreMatrix.from_csv_text((out / "score_matrix.csv").read_text(encoding="utf-8"))
    metrics = json.loads((out / "metrics.json").read_text(encoding="utf-8"))
    relevance_rows = _read_relevance(out / "relevance.csv")
    manifest_file = out / "run_manifest.json"
    manifest = json.loads(manifest_file.read_text(encoding="utf-8")) if manifest_file.is_file() else {}

    figures_dir = out / "figures"
    figures = {
        "score_matrix": plotting.score_matrix_heatmap(matrix, figures_dir / "score_matrix.png"),
        "history": plotting.srcc_history(matrix, figures_dir / "srcc_history.png"),
        "metrics": plotting.metric_bars(metrics.get("stages", {}), figures_dir / "metrics.png"),
    }

    ckpt_path = out / CHECKPOINT_NAME
    if ckpt_path.is_file():
        from .checkpoint import load_checkpoint

        checkpoint = load_checkpoint(ckpt_path)
        per_layer = []
        for labels in checkpoint.registry.current:
            import numpy as np

            values, counts = np.unique(labels, return_counts=True)
            per_layer.append({int(v): int(c) for v, c in zip(values, counts)})
        figures["ownership"] = plotting.ownership_bars(per_layer, figures_dir / "ownership.png")

    lines: list[str] = []
    lines.append("# Run report")
    lines.append("")
    if manifest:
        lines.append(f"- mode: {manifest.get('baseline') or 'SILF'}")
        lines.append(f"- seed: {manifest.get('seed')}")
        lines.append(f"- config hash: `{manifest.get('config_hash', 'unknown')}`")
        if manifest.get("relevance_timing"):
            lines.append(
                f"- relevance of additional tasks measured {manifest['relevance_timing']}"
            )
        lines.append("")

    lines.append("## Summary metrics")
    lines.append("")
    lines.append("| stage | average accuracy | average forgetting | average plasticity |")
    lines.append("| --- | --- | --- | --- |")
    for stage, values in metrics.get("stages", {}).items():
        lines.append(
            f"| {stage} | {_fmt(values.get('average_accuracy'))} "
            f"| {_fmt(values.get('average_forgetting'))} "
            f"| {_fmt(values.get('average_plasticity'))} |"
        )
    lines.append("")

    lines.append("## Score matrix")
    lines.append("")
    lines.extend(_score_table(matrix))
    lines.append("")

    lines.append("## Relevance and reuse")
    lines.append("")
    if relevance_rows:
        lines.append("| task | previous task | srcc | reuse ratio | muted weights |")
        lines.append("| --- | --- | --- | --- | --- |")
        for row in relevance_rows:
            lines.append(
                f"| {row['task']} | {row['prev_task']} | {float(row['srcc']):.4f} "
                f"| {float(row['reuse_ratio']):.4f} | {row['muted_count']} |"
            )
    else:
        lines.append("This run recorded no relevance measurements.")
    lines.append("")

    comparisons = sorted(p for p in out.glob(f"{BASELINE_DIR_PREFIX}*") if (p / "metrics.json").is_file())
    if comparisons:
        lines.append("## Baseline comparison")
        lines.append("")
        lines.append("| run | average accuracy | average forgetting | average plasticity |")
        lines.append("| --- | --- | --- | --- |")
        lines.append(
            f"| this run | {_fmt(metrics.get('average_accuracy'))} "
            f"| {_fmt(metrics.get('average_forgetting'))} | {_fmt(metrics.get('average_plasticity'))} |"
        )
        for comp in comparisons:
            other = json.loads((comp / "metrics.json").read_text(encoding="utf-8"))
            lines.append(
                f"| {comp.name.removeprefix(BASELINE_DIR_PREFIX)} | {_fmt(other.get('average_accuracy'))} "
                f"| {_fmt(other.get('average_forgetting'))} | {_fmt(other.get('average_plasticity'))} |"
            )
        lines.append("")

    lines.append("## Figures")
    lines.append("")
    for name, path in figures.items():
        lines.append(f"![{name}]({path.relative_to(out).as_posix()})")
    lines.append("")

    report_path = out / REPORT_NAME
    report_path.write_text("\n".join(lines), encoding="utf-8")
    return report_path
