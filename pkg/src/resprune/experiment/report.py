"""Results tables and MegaFLOPs-vs-accuracy scatter plots."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from ..errors import CorruptionError, IngestionError
from .config import METHODS
from .runner import RunResult

log = logging.getLogger(__name__)

METHOD_LABELS = {
    "control": "Control",
    "mixup": "Mixup",
    "cutout": "Cutout",
    "prune": "Pruning",
    "mixup_prune": "Mixup & Pruning",
    "cutout_prune": "Cutout & Pruning",
}
_LABEL_TO_METHOD = {v.lower(): k for k, v in METHOD_LABELS.items()}


def method_key(name: str) -> str:
    """Accept either a method id (``cutout_prune``) or its display label."""
    if name in METHOD_LABELS:
        return name
    key = _LABEL_TO_METHOD.get(name.strip().lower())
    if key is None:
        raise CorruptionError(f"unknown method {name!r}")
    return key


def _order(method: str) -> int:
    return METHODS.index(method) if method in METHODS else len(METHODS)


def dedupe(results: list[RunResult]) -> list[RunResult]:
    """Keep the last result per (method, depth), sorted by method order then depth."""
    latest: dict[tuple[str, int], RunResult] = {}
    for r in results:
        key = (r.method, r.depth)
        if key in latest:
            log.warning("duplicate result for %s ResNet-%d; keeping the later one", *key)
        latest[key] = r
    return sorted(latest.values(), key=lambda r: (_order(r.method), r.method, r.depth))


@dataclass
class ResultsTable:
    text: str
    csv: str

    def write(self, directory, stem: str = "results") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        txt, cs = directory / f"{stem}.txt", directory / f"{stem}.csv"
        txt.write_text(self.text)
        cs.write_text(self.csv)
        return txt, cs


def emit_results_table(results: list[RunResult]) -> ResultsTable:
    """Published layout: ``Method | Model | MegaFLOPs | Accuracy``, two decimals."""
    rows = [(METHOD_LABELS.get(r.method, r.method), f"ResNet {r.depth}", f"{r.mflops:.2f}",
             f"{r.accuracy:.2f}") for r in dedupe(results)]
    header = ("Method", "Model", "MegaFLOPs", "Accuracy (%)")
    widths = [max([len(h)] + [len(row[i]) for row in rows]) for i, h in enumerate(header)]

    def line(cells):
        left = [c.ljust(w) for c, w in zip(cells[:2], widths[:2])]
        right = [c.rjust(w) for c, w in zip(cells[2:], widths[2:])]
        return " | ".join(left + right).rstrip() + "\n"

    text = line(header) + "-+-".join("-" * w for w in widths) + "\n"
    prev = None
    for row in rows:
        if prev is not None and row[0] != prev:
            text += "-+-".join("-" * w for w in widths) + "\n"
        text += line(row)
        prev = row[0]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "depth", "mflops", "accuracy"])
    for r in dedupe(results):
        w.writerow([r.method, r.depth, f"{r.mflops:.2f}", f"{r.accuracy:.2f}"])
    return ResultsTable(text, buf.getvalue())


def load_results(directory) -> list[RunResult]:
    """Read every ``*.json`` under ``directory`` (recursively, in path order).

    A file holds one result object or a list of them. Later files win on
    duplicate (method, depth).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise IngestionError(f"runs directory not readable: {directory}")
    results = []
    try:
        files = sorted(directory.rglob("*.json"))
    except OSError as exc:
        raise IngestionError(f"cannot list {directory}: {exc}") from exc
    for path in files:
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise IngestionError(f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise CorruptionError(f"{path}: invalid JSON ({exc})") from exc
        for d in data if isinstance(data, list) else [data]:
            if not isinstance(d, dict) or not {"method", "depth", "accuracy", "mflops"} <= d.keys():
                raise CorruptionError(f"{path}: not a run result")
            d = dict(d, method=method_key(d["method"]))
            results.append(RunResult.from_dict(d))
    return results


@dataclass(frozen=True)
class PlotInfo:
    path: Path
    xlim: tuple[float, float]
    ylim: tuple[float, float]
    series: dict  # method -> list of (mflops, accuracy), sorted by depth


def _padded(lo: float, hi: float, frac: float = 0.05) -> tuple[float, float]:
    span = hi - lo
    if span == 0:
        span = abs(lo) or 1.0
        return lo - frac * span, hi + frac * span
    return lo - frac * span, hi + frac * span


def emit_scatter_plot(results: list[RunResult], path, title: str | None = None) -> PlotInfo:
    """SVG with one marker polyline per method; identical input gives identical bytes."""
    import matplotlib
    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    rows = dedupe(results)
    if not rows:
        raise ValueError("emit_scatter_plot needs at least one result")
    series: dict[str, list[tuple[float, float]]] = {}
    for r in rows:
        series.setdefault(r.method, []).append((r.mflops, r.accuracy))
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    xlim, ylim = _padded(min(xs), max(xs)), _padded(min(ys), max(ys))

    path = Path(path)
    with matplotlib.rc_context({"svg.hashsalt": "resprune", "svg.fonttype": "path",
                                "path.simplify": False}):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for method, pts in series.items():
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o",
                    label=METHOD_LABELS.get(method, method))
        ax.set_xlim(*xlim)
        ax.set_ylim(*ylim)
        ax.set_xlabel("MegaFLOPs")
        ax.set_ylabel("Accuracy (%)")
        if title:
            ax.set_title(title)
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return PlotInfo(path, xlim, ylim, series)
