"""Deterministic CSV/JSON report rendering and artifact export.

Reports are lists of dicts with a fixed column order. Floats are rendered with
``repr`` (shortest round-trip form), so a given config and seed produces byte
identical output; nothing time- or environment-dependent is ever written.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .cluster import VirtualTimeline, VolumeLedger
from .errors import ConfigError

LEDGER_COLUMNS = ("rank", "primitive", "sent_elements", "received_elements")


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(rows: list[dict], columns: tuple[str, ...]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(col, "")) for col in columns])
    return buf.getvalue()


def render_json(rows: list[dict], columns: tuple[str, ...]) -> str:
    shaped = [{col: row.get(col, "") for col in columns} for row in rows]
    return json.dumps(shaped, indent=2) + "\n"


def render_report(rows: list[dict], columns: tuple[str, ...], fmt: str) -> str:
    if fmt == "csv":
        return render_csv(rows, columns)
    if fmt == "json":
        return render_json(rows, columns)
    raise ConfigError(f"unknown report format {fmt!r}")


def write_report(text: str, output: str | Path | None) -> None:
    if output is None:
        print(text, end="")
    else:
        Path(output).write_text(text)


def ledger_csv(ledger: VolumeLedger) -> str:
    return render_csv(ledger.to_csv_rows(), LEDGER_COLUMNS)


def timeline_json(timeline: VirtualTimeline) -> str:
    return json.dumps(timeline.to_json_rows(), indent=2) + "\n"


def export_artifacts(artifacts, outdir: str | Path) -> list[Path]:
    """Write outputs, gradients, the ledger, and the timeline to a directory."""
    from .tensorio import write_tensor

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, writer):
        path = outdir / name
        writer(path)
        written.append(path)

    emit("outputs.zgla", lambda p: write_tensor(p, artifacts.outputs))
    if artifacts.grads is not None:
        emit("dq.zgla", lambda p: write_tensor(p, artifacts.grads.dq))
        emit("dk.zgla", lambda p: write_tensor(p, artifacts.grads.dk))
        emit("dv.zgla", lambda p: write_tensor(p, artifacts.grads.dv))
        emit("dg.zgla", lambda p: write_tensor(p, artifacts.grads.dg))
    emit("ledger.csv", lambda p: p.write_text(ledger_csv(artifacts.ledger)))
    emit("timeline.json", lambda p: p.write_text(timeline_json(artifacts.timeline)))
    return written
