"""Leaderboard rendering: CSV and Markdown tables plus per-metric SVG bar
charts rendered with matplotlib.

Numbers are printed at challenge precision: 2 decimals for FRCorr, FRDist,
FRRea and FRSyn; 4 decimals for the diversity family. FRRea may be absent
(empty CSV cell, dash in Markdown, chart omitted when no row carries it).
Charts are byte-deterministic (fixed svg.hashsalt, no date metadata).
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

from .errors import DataError
from .evaluation import ClipScores, LeaderboardRow

METHOD_COLUMN = "Method"
METRIC_COLUMNS = ("FRCorr", "FRDist", "FRDiv", "FRVar", "FRDvs", "FRRea", "FRSyn")
_FIELD_OF = {
    "FRCorr": "fr_corr", "FRDist": "fr_dist", "FRDiv": "fr_div",
    "FRVar": "fr_var", "FRDvs": "fr_dvs", "FRRea": "fr_rea", "FRSyn": "fr_syn",
}
_DECIMALS = {"FRCorr": 2, "FRDist": 2, "FRDiv": 4, "FRVar": 4, "FRDvs": 4,
             "FRRea": 2, "FRSyn": 2}

# Canonical table order: reference row, naive baselines, then submissions.
_CANONICAL_ORDER = ("gt", "b_random", "b_mime", "b_mean_seq", "b_mean_fr")


def format_metric(column: str, value: float | None) -> str:
    if value is None:
        return ""
    text = f"{value:.{_DECIMALS[column]}f}"
    if text.startswith("-") and float(text) == 0.0:
        text = text[1:]  # values that round to zero print unsigned
    return text


def order_rows(rows: Sequence[LeaderboardRow]) -> list[LeaderboardRow]:
    """Reference/naive rows first (fixed order), then the rest as given."""
    rank = {name: i for i, name in enumerate(_CANONICAL_ORDER)}
    head = sorted((r for r in rows if r.method in rank), key=lambda r: rank[r.method])
    tail = [r for r in rows if r.method not in rank]
    return head + tail


def write_leaderboard_csv(path: str | Path, rows: Sequence[LeaderboardRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([METHOD_COLUMN, *METRIC_COLUMNS])
        for row in order_rows(rows):
            writer.writerow([row.method] + [
                format_metric(col, getattr(row, _FIELD_OF[col])) for col in METRIC_COLUMNS])


def read_leaderboard_csv(path: str | Path) -> list[LeaderboardRow]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != [METHOD_COLUMN, *METRIC_COLUMNS]:
            raise DataError(f"{path}: leaderboard columns {header} do not match "
                            f"{[METHOD_COLUMN, *METRIC_COLUMNS]}")
        rows = []
        for raw in reader:
            if len(raw) != 1 + len(METRIC_COLUMNS):
                raise DataError(f"{path}: malformed leaderboard row {raw}")
            values = {}
            for col, cell in zip(METRIC_COLUMNS, raw[1:]):
                values[_FIELD_OF[col]] = float(cell) if cell not in ("", "-") else None
            for col in METRIC_COLUMNS:
                if col != "FRRea" and values[_FIELD_OF[col]] is None:
                    raise DataError(f"{path}: row {raw[0]!r} is missing {col}")
            rows.append(LeaderboardRow(method=raw[0], **values))
    return rows


def merge_leaderboards(paths: Sequence[str | Path]) -> list[LeaderboardRow]:
    """Concatenate leaderboard files (columns must match exactly)."""
    if not paths:
        raise DataError("no leaderboard files to merge")
    rows: list[LeaderboardRow] = []
    for path in paths:
        rows.extend(read_leaderboard_csv(path))
    return order_rows(rows)


def leaderboard_markdown(rows: Sequence[LeaderboardRow]) -> str:
    lines = [
        "| " + " | ".join([METHOD_COLUMN, *METRIC_COLUMNS]) + " |",
        "|" + "---|" * (1 + len(METRIC_COLUMNS)),
    ]
    for row in order_rows(rows):
        cells = [row.method]
        for col in METRIC_COLUMNS:
            cell = format_metric(col, getattr(row, _FIELD_OF[col]))
            cells.append(cell if cell else "-")
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def write_leaderboard_markdown(path: str | Path, rows: Sequence[LeaderboardRow]) -> None:
    Path(path).write_text(leaderboard_markdown(rows), encoding="utf-8")


def write_clip_scores_csv(path: str | Path, scores: Sequence[ClipScores]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["assignment_id", "fr_dist", "fr_corr", "fr_div", "fr_var",
                         "fr_syn", "best_neighbor_id"])
        for s in sorted(scores, key=lambda s: s.assignment_id):
            writer.writerow([s.assignment_id, repr(s.fr_dist), repr(s.fr_corr),
                             repr(s.fr_div), repr(s.fr_var), repr(s.fr_syn),
                             s.best_neighbor_id])


_SVG_RC = {
    "svg.hashsalt": "mafrg",
    "svg.fonttype": "path",
}


def write_metric_charts(rows: Sequence[LeaderboardRow], out_dir: str | Path) -> list[Path]:
    """One SVG bar chart per metric (one bar per method); metrics with no
    values are skipped. Output is byte-deterministic."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ordered = order_rows(rows)
    written = []
    for col in METRIC_COLUMNS:
        points = [(r.method, getattr(r, _FIELD_OF[col])) for r in ordered
                  if getattr(r, _FIELD_OF[col]) is not None]
        if not points:
            continue
        methods = [p[0] for p in points]
        values = [p[1] for p in points]
        path = out_dir / f"{col.lower()}.svg"
        with plt.rc_context(_SVG_RC):
            fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(methods) + 1.5), 3.4))
            ax.bar(range(len(methods)), values, color="#4878a8")
            ax.set_xticks(range(len(methods)))
            ax.set_xticklabels(methods, rotation=30, ha="right")
            ax.set_xlabel("method")
            ax.set_ylabel(col)
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
        written.append(path)
    return written
