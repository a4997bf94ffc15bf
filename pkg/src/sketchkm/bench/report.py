"""Render run records as CSV, markdown tables, or plot data."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

FORMATS = ("csv", "markdown", "plotdata")


class ReportError(ValueError):
    pass


def load_records(paths) -> list[dict]:
    records = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            p = p / "record.json"
        try:
            records.append(json.loads(p.read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ReportError(f"cannot read record {p}: {e}") from None
    if not records:
        raise ReportError("no records given")
    tasks = {r["task"] for r in records}
    if len(tasks) > 1:
        raise ReportError(f"records mix tasks {sorted(tasks)}")
    return records


def _pm(agg):
    if agg["kind"] == "accumulation":
        return f"m={agg['m']}"
    if agg["p"] is None:
        return "-"
    return f"p={agg['p']:.4g}"


def _fmt(mean, sd):
    if mean is None:
        return "n/a"
    return f"{mean:.4g} ± {sd:.2g}"


def _rows(records):
    metric = records[0]["metrics"][0]
    for rec in records:
        for agg in rec["aggregates"]:
            yield rec, agg, metric


def to_csv(records) -> str:
    names = records[0]["metrics"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["record", "kind", "s", "p", "m", "n_ok", "n_failed"]
    for k in names + ["fit_time"]:
        head += [f"{k}_mean", f"{k}_sd"]
    w.writerow(head)
    for rec, agg, _ in _rows(records):
        row = [rec["name"], agg["kind"], agg["s"], agg["p"], agg["m"], agg["n_ok"],
               agg["n_failed"]]
        for k in names + ["fit_time"]:
            row += [agg.get(f"{k}_mean"), agg.get(f"{k}_sd")]
        w.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def to_markdown(records) -> str:
    rows = list(_rows(records))
    metric = rows[0][2]
    lines = [f"| kind | s | p/m | {metric} (mean ± sd) | time s (mean ± sd) |",
             "|---|---|---|---|---|"]
    for _, agg, _ in rows:
        s = "-" if agg["s"] is None else str(agg["s"])
        lines.append(f"| {agg['kind']} | {s} | {_pm(agg)} | "
                     f"{_fmt(agg[f'{metric}_mean'], agg[f'{metric}_sd'])} | "
                     f"{_fmt(agg['fit_time_mean'], agg['fit_time_sd'])} |")
    return "\n".join(lines) + "\n"


def to_plotdata(records) -> str:
    """Tab-separated (kind, s, time, metric) per successful replicate."""
    metric = records[0]["metrics"][0]
    out = [f"kind\ts\tp\tfit_time\t{metric}"]
    for rec in records:
        for r in rec["rows"]:
            if r["error"] is None:
                out.append(f"{r['kind']}\t{r['s']}\t{r['p']}\t{r['fit_time']!r}\t"
                           f"{r['metrics'][metric]!r}")
    return "\n".join(out) + "\n"


def report(paths, fmt="markdown") -> str:
    if fmt not in FORMATS:
        raise ReportError(f"format must be one of {FORMATS}")
    records = load_records(paths)
    return {"csv": to_csv, "markdown": to_markdown, "plotdata": to_plotdata}[fmt](records)
