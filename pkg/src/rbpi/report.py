"""Run reports: canonical machine output, spreadsheet tables, figures.

Report bodies serialize canonically (sorted keys, fixed separators) so two
runs with the same scenario and seed produce byte-identical files. Wall
clock never enters the body; it only appears on the console summary line.
The table format is a single delimited file in sections, and rendering
drops companion PNG figures next to it.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from . import __version__  # noqa: E402

FORMAT_OBJ = "obj"
FORMAT_TABLE = "table"

_SUMMARY_FIELDS = (
    "segments_dispatched", "delivered_total", "delivered_direct",
    "delivered_after_recovery", "write_offs", "duplicates", "reorders",
    "reprints", "hop_limit_drops", "damage_detected", "cold_chain_breaches",
    "timeout_retirements", "holds_issued", "ece_flags_set", "acks", "refuels",
    "stranded_movers", "delivered_damaged", "on_time_rate", "mean_lead_time",
    "utilization", "empty_run_ratio",
)


@dataclass
class RunReport:
    """Everything one simulation run produced, ready to serialize."""

    metrics: dict
    config_digest: str
    seed: int
    wall_clock: float          # seconds; kept out of the body
    artifact_version: str = __version__

    def body(self) -> dict:
        return {
            "artifact_version": self.artifact_version,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "metrics": self.metrics,
        }


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def report_json(report: RunReport) -> bytes:
    return canonical_json(report.body()).encode()


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_tables(report: RunReport) -> bytes:
    """One delimited file in sections, each introduced by '# table: <name>'."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")

    out.write("# table: run\n")
    writer.writerow(["key", "value"])
    writer.writerow(["artifact_version", report.artifact_version])
    writer.writerow(["config_digest", report.config_digest])
    writer.writerow(["seed", report.seed])

    metrics = report.metrics
    out.write("\n# table: summary\n")
    writer.writerow(["metric", "value"])
    for name in _SUMMARY_FIELDS:
        writer.writerow([name, _cell(metrics.get(name))])

    out.write("\n# table: ledger\n")
    writer.writerow(["entry", "value"])
    for key in sorted(metrics.get("ledger", {})):
        writer.writerow([key, _cell(metrics["ledger"][key])])

    out.write("\n# table: shipments\n")
    cols = ["id", "released", "deadline", "completed", "lead_time", "on_time",
            "segments", "delivered_segments", "acks", "budget"]
    writer.writerow(cols)
    shipments = metrics.get("shipments", {})
    for sid in sorted(shipments, key=int):
        row = shipments[sid]
        writer.writerow([sid] + [_cell(row.get(c)) for c in cols[1:]])

    out.write("\n# table: hop_histogram\n")
    writer.writerow(["hops", "delivered_segments"])
    hops = metrics.get("hop_histogram", {})
    for h in sorted(hops, key=int):
        writer.writerow([h, hops[h]])

    out.write("\n# table: movers\n")
    cols = ["id", "traversals", "empty_runs", "mass_km_loaded",
            "mass_km_capacity", "utilization", "stranded"]
    writer.writerow(cols)
    movers = metrics.get("mover_stats", {})
    for mid in sorted(movers, key=int):
        row = movers[mid]
        writer.writerow([mid] + [_cell(row.get(c)) for c in cols[1:]])

    return out.getvalue().encode()


def summary_line(report: RunReport) -> str:
    m = report.metrics
    shipments = m.get("shipments", {})
    completed = sum(1 for s in shipments.values() if s.get("completed") is not None)
    parts = [
        f"segments {m.get('delivered_total', 0)}/{m.get('segments_dispatched', 0)} delivered",
        f"shipments {completed}/{len(shipments)} complete",
    ]
    if m.get("on_time_rate") is not None:
        parts.append(f"on-time {m['on_time_rate']:.0%}")
    if m.get("utilization") is not None:
        parts.append(f"utilization {m['utilization']:.2f}")
    if m.get("empty_run_ratio") is not None:
        parts.append(f"empty runs {m['empty_run_ratio']:.2f}")
    parts.append(f"wall {report.wall_clock:.2f}s")
    return " | ".join(parts)


# --------------------------------------------------------------------- plots

def _new_axes(title: str, xlabel: str, ylabel: str):
    fig, ax = plt.subplots(figsize=(6.0, 3.7))
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    return fig, ax


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_figures(metrics: dict, base: Path) -> list[Path]:
    """Render the report's figures next to ``base`` (suffix replaced).

    Produces hop-count histogram, per-mover utilization, and per-shipment
    lead times against their deadlines.
    """
    written: list[Path] = []
    stem = base.with_suffix("")

    hops = {int(k): v for k, v in metrics.get("hop_histogram", {}).items()}
    fig, ax = _new_axes("Delivered segments by hop count", "edges traversed",
                        "segments")
    if hops:
        keys = sorted(hops)
        ax.bar([str(k) for k in keys], [hops[k] for k in keys], color="#4878a8")
    written.append(_save(fig, stem.with_name(stem.name + ".hops.png")))

    movers = metrics.get("mover_stats", {})
    fig, ax = _new_axes("Vehicle utilization (mass-km loaded / capacity)",
                        "utilization", "vehicle")
    if movers:
        ids = sorted(movers, key=int)
        util = [movers[i].get("utilization") or 0.0 for i in ids]
        ax.barh([f"mover {i}" for i in ids], util, color="#6aa84f")
        ax.set_xlim(0, 1)
    written.append(_save(fig, stem.with_name(stem.name + ".movers.png")))

    shipments = metrics.get("shipments", {})
    fig, ax = _new_axes("Shipment lead times against deadlines", "shipment",
                        "hours since release")
    if shipments:
        ids = sorted(shipments, key=int)
        labels = [str(i) for i in ids]
        leads = [shipments[i].get("lead_time") for i in ids]
        spans = [shipments[i]["deadline"] - shipments[i]["released"] for i in ids]
        ax.bar(labels, [l if l is not None else 0.0 for l in leads],
               color=["#4878a8" if l is not None else "#c9c9c9" for l in leads],
               label="lead time")
        ax.plot(labels, spans, "r_", markersize=18, label="deadline span")
        ax.legend(frameon=False, fontsize=8)
    written.append(_save(fig, stem.with_name(stem.name + ".leadtimes.png")))
    return written
