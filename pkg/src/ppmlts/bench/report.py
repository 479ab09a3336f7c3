"""Run records, best-of-seeds aggregation and CSV/text rendering."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

RESULT_COLUMNS = (
    "dataset",
    "method",
    "params",
    "seed",
    "status",
    "f1",
    "val_f1",
    "epsilon",
    "epochs",
    "non_converged",
    "wall_s",
)
TABLE2_COLUMNS = ("dataset", "baseline", "dp", "fedavg_n2", "fedavg_n4", "fedens_n2", "fedens_n4")
# columns holding wall-clock measurements; ignored by determinism checks
TIMING_COLUMNS = frozenset({"wall_s", "avg_s", "std_s", "hardware"})


@dataclass
class RunRow:
    dataset: str
    method: str
    params: str
    seed: int | str
    status: str = "OK"
    f1: float = math.nan
    val_f1: float = math.nan
    epsilon: float | None = None
    epochs: int | None = None
    non_converged: bool = False
    wall_s: float = 0.0
    error: str = field(default="", repr=False)

    @property
    def failed(self) -> bool:
        return self.status != "OK"


@dataclass
class MetricsReport:
    rows: list[RunRow] = field(default_factory=list)
    # extra figure/table data: name -> (columns, rows)
    tables: dict[str, tuple[Sequence[str], list[dict]]] = field(default_factory=dict)

    @property
    def any_failed(self) -> bool:
        return any(r.failed for r in self.rows)

    def sorted_rows(self) -> list[RunRow]:
        return sorted(self.rows, key=lambda r: (r.dataset, r.method, r.params, str(r.seed)))

    def aggregate(self) -> list[RunRow]:
        """Best-of-seeds row per (dataset, method, params): max test F1."""
        groups: dict[tuple, list[RunRow]] = {}
        for r in self.rows:
            groups.setdefault((r.dataset, r.method, r.params), []).append(r)
        out = []
        for (ds, method, params), runs in sorted(groups.items()):
            ok = [r for r in runs if not r.failed and not math.isnan(r.f1)]
            if not ok:
                out.append(RunRow(ds, method, params, "best", status="FAILED"))
                continue
            best = max(ok, key=lambda r: (r.f1, -_seed_key(r.seed)))
            out.append(
                RunRow(
                    ds,
                    method,
                    params,
                    "best",
                    f1=best.f1,
                    val_f1=best.val_f1,
                    epsilon=best.epsilon,
                    epochs=best.epochs,
                    non_converged=best.non_converged,
                    wall_s=sum(r.wall_s for r in runs),
                )
            )
        return out

    def extend(self, other: "MetricsReport") -> None:
        self.rows += other.rows
        for name, (cols, rows) in other.tables.items():
            if name in self.tables:
                self.tables[name][1].extend(rows)
            else:
                self.tables[name] = (cols, list(rows))


def _seed_key(seed) -> int:
    try:
        return int(seed)
    except (TypeError, ValueError):
        return 1 << 30


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.4f}"
    return str(v)


def _row_values(row: RunRow) -> dict:
    return {c: getattr(row, c) for c in RESULT_COLUMNS}


def csv_text(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([format_value(r.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(columns, rows))
    return path


def results_rows(report: MetricsReport, methods: Iterable[str] | None = None) -> list[dict]:
    keep = None if methods is None else set(methods)
    rows = report.sorted_rows() + report.aggregate()
    return [_row_values(r) for r in rows if keep is None or r.method in keep]


def table2_rows(report: MetricsReport) -> list[dict]:
    """Best F1 per dataset with one column per method (missing cells empty)."""
    best: dict[str, dict] = {}
    for r in report.aggregate():
        if r.failed:
            continue
        cell = "baseline" if r.method == "baseline" else r.method
        if cell not in TABLE2_COLUMNS:
            continue
        row = best.setdefault(r.dataset, {"dataset": r.dataset})
        # "dp" is tuned over noise multipliers: keep the best setting
        if row.get(cell) is None or r.f1 > row[cell]:
            row[cell] = r.f1
    return [best[k] for k in sorted(best)]


def render_text(columns: Sequence[str], rows: Sequence[dict]) -> str:
    cells = [[format_value(r.get(c)) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)


def render_report(report: MetricsReport, out_dir: str | Path | None = None, methods: Iterable[str] | None = None) -> str:
    """Text table of per-seed and best-of-seeds rows; writes CSVs when ``out_dir`` is set.

    ``methods`` filters results rows; a filter matching nothing yields a
    header-only results.csv.
    """
    rows = results_rows(report, methods)
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / "results.csv", RESULT_COLUMNS, rows)
        if report.rows:
            write_csv(out / "table2.csv", TABLE2_COLUMNS, table2_rows(report))
        for name, (cols, trows) in sorted(report.tables.items()):
            write_csv(out / f"{name}.csv", cols, trows)
    parts = [render_text(RESULT_COLUMNS, rows)] if report.rows or methods is not None else []
    for name, (cols, trows) in sorted(report.tables.items()):
        parts.append(f"[{name}]\n" + render_text(cols, trows))
    return "\n\n".join(parts) + "\n"


def read_results_csv(path: str | Path) -> list[RunRow]:
    """Load per-seed rows back from a results.csv (aggregate rows are skipped)."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            if rec["seed"] == "best":
                continue
            num = lambda k: float(rec[k]) if rec[k] not in ("", None) else None
            rows.append(
                RunRow(
                    rec["dataset"],
                    rec["method"],
                    rec["params"],
                    int(rec["seed"]),
                    rec["status"],
                    num("f1") if rec["f1"] else math.nan,
                    num("val_f1") if rec["val_f1"] else math.nan,
                    num("epsilon"),
                    int(rec["epochs"]) if rec["epochs"] else None,
                    rec["non_converged"] == "true",
                    num("wall_s") or 0.0,
                )
            )
    return rows


def strip_timing(csv_content: str) -> str:
    """Drop timing columns so two runs can be compared byte-for-byte."""
    reader = list(csv.reader(io.StringIO(csv_content)))
    if not reader:
        return ""
    keep = [i for i, c in enumerate(reader[0]) if c not in TIMING_COLUMNS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in reader:
        w.writerow([row[i] for i in keep])
    return buf.getvalue()
