"""Stagewise comparison reports: aligned text table, JSON Lines, and figures."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import DataError, ParseError
from .evaluation import BenchReport, EntityMetrics
from .fileio import atomic_write_text, dump_json_line, iter_jsonl


@dataclass
class RunRecord:
    """One named run: quality metrics and/or a throughput report."""

    name: str
    metrics: EntityMetrics | None = None
    bench: BenchReport | None = None

    def report_row(self) -> dict:
        return {
            "name": self.name,
            "precision": self.metrics.precision if self.metrics else None,
            "recall": self.metrics.recall if self.metrics else None,
            "f1": self.metrics.f1 if self.metrics else None,
            "sentences_per_second": self.bench.sentences_per_second if self.bench else None,
            "characters_per_second": self.bench.characters_per_second if self.bench else None,
        }


def load_runs(path: str | Path) -> list[RunRecord]:
    """Read run records from a JSON Lines file, merging rows by name.

    Rows carrying count fields become metrics; rows carrying
    ``sentences_per_second`` become bench results.
    """
    runs: dict[str, RunRecord] = {}
    for lineno, obj in iter_jsonl(path):
        if not isinstance(obj, dict) or "name" not in obj:
            raise ParseError("run record must be an object with a name", line=lineno)
        name = str(obj["name"])
        run = runs.setdefault(name, RunRecord(name))
        if "true_positives" in obj:
            run.metrics = EntityMetrics(
                int(obj["true_positives"]),
                int(obj["false_positives"]),
                int(obj["false_negatives"]),
            )
        if "sentences_per_second" in obj and obj["sentences_per_second"] is not None:
            run.bench = BenchReport(
                model_id=str(obj.get("model_id", name)),
                corpus_sentences=int(obj.get("corpus_sentences", 0)),
                corpus_characters=int(obj.get("corpus_characters", 0)),
                wall_time=float(obj.get("wall_time", 0.0)),
                sentences_per_second=float(obj["sentences_per_second"]),
                characters_per_second=float(obj.get("characters_per_second", 0.0)),
                decode_checksum=str(obj.get("decode_checksum", "")),
                threads=int(obj.get("threads", 1)),
            )
    return list(runs.values())


def _fmt(value: float | None, pattern: str = "{:.4f}") -> str:
    return pattern.format(value) if value is not None else "-"


def _delta(value: float | None, base: float | None) -> str:
    if value is None or base is None:
        return "-"
    return f"{(value - base) * 100:+.1f}"


def format_table(runs: Sequence[RunRecord]) -> str:
    """Aligned comparison table with percentage-point deltas vs the first run."""
    if not runs:
        raise DataError("no runs to report")
    base = runs[0]
    base_m = base.metrics
    headers = ["name", "P", "R", "F1", "sent/s", "dP", "dR", "dF1"]
    rows = []
    for run in runs:
        m = run.metrics
        rows.append([
            run.name,
            _fmt(m.precision if m else None),
            _fmt(m.recall if m else None),
            _fmt(m.f1 if m else None),
            _fmt(run.bench.sentences_per_second if run.bench else None, "{:.1f}"),
            _delta(m.precision if m else None, base_m.precision if base_m else None),
            _delta(m.recall if m else None, base_m.recall if base_m else None),
            _delta(m.f1 if m else None, base_m.f1 if base_m else None),
        ])
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def write_report(runs: Sequence[RunRecord], path: str | Path) -> None:
    """JSON Lines report: one run per line with the fixed comparison keys."""
    if not runs:
        raise DataError("no runs to report")
    lines = [dump_json_line(run.report_row()) for run in runs]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def render_figures(runs: Sequence[RunRecord], outdir: str | Path) -> list[Path]:
    """Render comparison figures (PNG) next to the delimited report.

    Produces a grouped precision/recall/F1 bar chart, and a throughput chart
    when any run carries bench results.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not runs:
        raise DataError("no runs to report")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    with_metrics = [r for r in runs if r.metrics is not None]
    if with_metrics:
        names = [r.name for r in with_metrics]
        xs = range(len(names))
        width = 0.27
        fig, ax = plt.subplots(figsize=(max(6.0, 1.6 * len(names)), 4.0))
        for k, (attr, label) in enumerate(
            [("precision", "precision"), ("recall", "recall"), ("f1", "F1")]
        ):
            vals = [getattr(r.metrics, attr) for r in with_metrics]
            ax.bar([x + (k - 1) * width for x in xs], vals, width=width, label=label)
        ax.set_xticks(list(xs))
        ax.set_xticklabels(names, rotation=20, ha="right")
        ax.set_ylim(0.0, 1.05)
        ax.set_ylabel("score")
        ax.set_title("Entity metrics by run")
        ax.legend(loc="lower right")
        fig.tight_layout()
        target = outdir / "metrics.png"
        fig.savefig(target, dpi=120)
        plt.close(fig)
        written.append(target)

    with_bench = [r for r in runs if r.bench is not None]
    if with_bench:
        names = [r.name for r in with_bench]
        vals = [r.bench.sentences_per_second for r in with_bench]
        fig, ax = plt.subplots(figsize=(max(6.0, 1.6 * len(names)), 4.0))
        ax.bar(names, vals)
        ax.set_ylabel("sentences / second")
        ax.set_title("Decode throughput by run")
        fig.tight_layout()
        target = outdir / "throughput.png"
        fig.savefig(target, dpi=120)
        plt.close(fig)
        written.append(target)

    return written


def compare_report(
    runs: Sequence[RunRecord],
    out_path: str | Path | None = None,
    figures_dir: str | Path | None = None,
) -> str:
    """Build the comparison table; optionally write the JSONL report and figures."""
    table = format_table(runs)
    if out_path is not None:
        write_report(runs, out_path)
    if figures_dir is not None:
        render_figures(runs, figures_dir)
    return table
