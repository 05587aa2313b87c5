"""Operator command line: validate, run, route, codec.

Exit codes are a stable contract: 0 success, 1 domain failure (violations,
no route, corrupt wire data), 2 unreadable or unparsable input.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import click

from . import codec, engine, routing
from .codec import (
    FLAG_ORDER,
    ChecksumError,
    CodecError,
    PiDatagramHeader,
    PiSegmentHeader,
    SegmentFlags,
)
from .report import (
    FORMAT_OBJ,
    FORMAT_TABLE,
    RunReport,
    render_figures,
    report_json,
    report_tables,
    summary_line,
)
from .scenario import ScenarioError, load_scenario

_WARNING_CODES = {"GRAPH_DISCONNECTED"}

_DATAGRAM_FIELDS = ("version", "traffic_class", "flow_label", "payload_length",
                    "next_header", "hop_limit", "source", "destination")
_SEGMENT_FIELDS = ("source_port", "destination_port", "sequence_number",
                   "acknowledgement_number", "data_offset", "reserved", "flags",
                   "window_size", "checksum", "urgent_pointer", "options")


@click.group()
def main():
    """Road-based physical internet toolkit."""


def _load(scenario_path: str):
    try:
        return load_scenario(scenario_path)
    except ScenarioError as exc:
        click.echo(f"parse error: {exc}", err=True)
        sys.exit(2)


def _check(config) -> None:
    violations = engine.validate_scenario(config)
    fatal = False
    for v in violations:
        if v.code in _WARNING_CODES:
            click.echo(f"warning: {v}", err=True)
        else:
            click.echo(str(v))
            fatal = True
    if fatal:
        sys.exit(1)


@main.command()
@click.argument("scenario_path", type=click.Path())
def validate(scenario_path):
    """Check a scenario file; list violations one per line."""
    config, _ = _load(scenario_path)
    _check(config)
    click.echo("ok")


@main.command()
@click.argument("scenario_path", type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Report destination (default report.json / report.csv).")
@click.option("--format", "fmt", type=click.Choice([FORMAT_OBJ, FORMAT_TABLE]),
              default=FORMAT_OBJ, help="Machine object or delimited tables.")
@click.option("--strategy", type=click.Choice(list(routing.STRATEGIES)),
              default=None, help="Override the routing strategy.")
@click.option("--until", type=float, default=None,
              help="Override the simulation horizon in hours.")
@click.option("--figures/--no-figures", default=True,
              help="Render companion figures with table output.")
def run(scenario_path, seed, out_path, fmt, strategy, until, figures):
    """Run a scenario and write its report."""
    config, digest = _load(scenario_path)
    if seed is not None:
        config.seed = seed
    if strategy is not None:
        config.strategy = strategy
    if until is not None:
        config.end_time = until
    _check(config)

    started = time.perf_counter()
    metrics = engine.Simulation(config).run()
    wall = time.perf_counter() - started

    report = RunReport(metrics=metrics.to_dict(), config_digest=digest,
                       seed=config.seed, wall_clock=wall)
    if out_path is None:
        out_path = "report.json" if fmt == FORMAT_OBJ else "report.csv"
    out = Path(out_path)
    body = report_json(report) if fmt == FORMAT_OBJ else report_tables(report)
    try:
        out.write_bytes(body)
    except OSError as exc:
        click.echo(f"cannot write report {out}: {exc}", err=True)
        sys.exit(2)
    written = [out]
    if fmt == FORMAT_TABLE and figures:
        written.extend(render_figures(report.metrics, out))
    click.echo(summary_line(report))
    click.echo("wrote " + " ".join(str(p) for p in written))


def _parse_address(token: str, config) -> int | None:
    nodes = config.graph.nodes
    if ":" in token:
        domain, local = token.split(":", 1)
        try:
            address = (int(domain, 0) << 16) | int(local, 0)
        except ValueError:
            return None
    else:
        try:
            address = int(token, 0)
        except ValueError:
            return None
    known = {nodes[n].address for n in nodes}
    if address in known:
        return address
    if address in nodes:  # convenience: a bare node id
        return nodes[address].address
    return None


@main.command()
@click.argument("scenario_path", type=click.Path())
@click.argument("source")
@click.argument("destination")
@click.option("--payload-kg", type=int, default=0,
              help="Payload mass for capacity-aware selection.")
@click.option("--strategy", type=click.Choice(list(routing.STRATEGIES)),
              default=None, help="Override the routing strategy.")
def route(scenario_path, source, destination, payload_kg, strategy):
    """One-shot routing query after table convergence at time zero."""
    config, _ = _load(scenario_path)
    if strategy is not None:
        config.strategy = strategy
    _check(config)
    src = _parse_address(source, config)
    dst = _parse_address(destination, config)
    if src is None or dst is None:
        bad = source if src is None else destination
        click.echo(f"no-route: unknown address {bad}")
        sys.exit(1)

    sim = engine.Simulation(config)
    sim.build_tables()
    header = PiDatagramHeader(payload_length=payload_kg, hop_limit=255,
                              source=src, destination=dst)
    current = sim.addr_to_node[src]
    goal = sim.addr_to_node[dst]
    path = [current]
    while current != goal:
        nxt = routing.select_next_hop(sim.tables[current], header)
        if nxt is None or nxt in path or len(path) > len(config.graph.nodes):
            click.echo("no-route")
            sys.exit(1)
        path.append(nxt)
        current = nxt

    bandwidth = sim.bandwidth_fn()
    min_capacity = min((bandwidth((path[i], path[i + 1]))
                        for i in range(len(path) - 1)), default=float("inf"))
    click.echo("path: " + " -> ".join(str(n) for n in path))
    click.echo(f"hops: {len(path) - 1}")
    click.echo(f"min_free_capacity_kg: {min_capacity:g}")


def _emit_datagram_fields(header: PiDatagramHeader) -> None:
    for name in _DATAGRAM_FIELDS:
        click.echo(f"{name}={getattr(header, name)}")


def _emit_segment_fields(header: PiSegmentHeader) -> None:
    for name in _SEGMENT_FIELDS:
        if name == "flags":
            click.echo("flags=" + ",".join(header.flags.names()))
        else:
            click.echo(f"{name}={getattr(header, name)}")


def _parse_fields(tokens, kind: str):
    values = {}
    flags = SegmentFlags()
    for token in tokens:
        if "=" not in token:
            raise click.UsageError(f"expected field=value, got {token!r}")
        name, raw = token.split("=", 1)
        if kind == "segment" and name == "flags":
            names = [f for f in raw.split(",") if f]
            unknown = [f for f in names if f not in FLAG_ORDER]
            if unknown:
                raise click.UsageError(f"unknown flags {unknown}")
            flags = SegmentFlags(**{f: True for f in names})
            continue
        allowed = _DATAGRAM_FIELDS if kind == "datagram" else _SEGMENT_FIELDS
        if name not in allowed or name == "flags":
            raise click.UsageError(f"unknown {kind} field {name!r}")
        try:
            values[name] = int(raw, 0)
        except ValueError:
            raise click.UsageError(f"field {name}: {raw!r} is not an integer")
    if kind == "segment":
        values["flags"] = flags
    return values


@main.command(name="codec")
@click.argument("direction", type=click.Choice(["encode", "decode"]))
@click.argument("kind", type=click.Choice(["datagram", "segment"]))
@click.argument("data", nargs=-1)
def codec_cmd(direction, kind, data):
    """Debug the wire formats.

    encode takes field=value pairs (segment flags as flags=syn,ack) and
    prints lowercase hex; decode takes one hex string and prints the fields.
    """
    if direction == "decode":
        if len(data) != 1:
            raise click.UsageError("decode takes exactly one hex string")
        try:
            raw = bytes.fromhex(data[0])
        except ValueError:
            click.echo("not a hex string", err=True)
            sys.exit(2)
        try:
            if kind == "datagram":
                _emit_datagram_fields(codec.decode_datagram(raw))
            else:
                _emit_segment_fields(codec.decode_segment(raw))
        except ChecksumError as exc:
            click.echo(f"checksum error: {exc}", err=True)
            sys.exit(1)
        except CodecError as exc:
            click.echo(f"decode error: {exc}", err=True)
            sys.exit(1)
        return

    values = _parse_fields(data, kind)
    try:
        if kind == "datagram":
            wire = codec.encode_datagram(PiDatagramHeader(**values))
        else:
            wire = codec.encode_segment(PiSegmentHeader(**values))
    except CodecError as exc:
        click.echo(f"encode error: {exc}", err=True)
        sys.exit(1)
    click.echo(wire.hex())


if __name__ == "__main__":
    main()
