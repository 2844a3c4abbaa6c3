"""Command-line interface for SplitBox."""

from __future__ import annotations

import logging
import sys
import threading
from pathlib import Path

import click

from splitbox import __version__
from splitbox.bench import (
    DEFAULT_LOADS,
    DEFAULT_SEARCH_STEPS,
    DEFAULT_TRIALS,
    MODES,
    BenchConfig,
    EquivalenceError,
    run_bench,
)
from splitbox.bundle import BundleError, read_bundle, write_bundles
from splitbox.fabric import CostModel
from splitbox.firewall import (
    HEADER_BITS,
    InexpressibleRangeError,
    RuleSyntaxError,
    Trace,
    TraceFormatError,
    TraceSpec,
    compile_rules,
    generate_trace,
    load_rules,
)
from splitbox.nfmodel import InvalidTreeError, validate_tree
from splitbox.protocol import (
    DEFAULT_DELTA_MIN,
    DEFAULT_DIGEST_BITS,
    DEFAULT_PROCESSORS,
    DEFAULT_TABLE_LENGTH,
    ClientConfig,
    EntryConfig,
    ProcessorConfig,
    ProtocolError,
    ProtocolParams,
    global_setup,
)
from splitbox.randomness import make_rng
from splitbox.report import format_report, write_csv
from splitbox.roles import Client, Delivery, Processor, format_stats
from splitbox.transport import (
    CARRIERS,
    Endpoint,
    Topology,
    TopologyError,
    dump_topology,
    load_topology,
)
from splitbox.udp import (
    UdpEndpointError,
    send_trace,
    serve_client,
    serve_processor,
)

DEFAULT_BASE_PORT = 47_100
LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)


@click.group()
@click.version_option(version=__version__, prog_name="splitbox")
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
def main(verbose: int):
    """SplitBox - private firewall evaluation across untrusted middleboxes."""
    logging.basicConfig(
        level=LOG_LEVELS[min(verbose, len(LOG_LEVELS) - 1)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _fail(message: str) -> None:
    click.echo(f"Error: {message}", err=True)
    sys.exit(1)


def _load_rules_or_exit(path: str):
    try:
        return load_rules(path)
    except (OSError, RuleSyntaxError) as exc:
        _fail(f"{path}: {exc}")


def _load_trace(value: str) -> tuple[TraceSpec | None, Trace | None]:
    """``gen:SPEC`` yields a spec, anything else is read as an SBTR file."""
    if value.startswith("gen:"):
        return TraceSpec.parse(value[4:]), None
    return None, Trace.read(value)


def _int_list(value: str | None) -> tuple[int, ...] | None:
    if not value:
        return None
    try:
        return tuple(int(item) for item in value.split(","))
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated integers: {value}") from exc


def _float_list(value: str | None) -> tuple[float, ...] | None:
    if not value:
        return None
    try:
        return tuple(float(item) for item in value.split(","))
    except ValueError as exc:
        raise click.BadParameter(f"expected comma-separated numbers: {value}") from exc


@main.command()
@click.option("--rules", "rules_path", required=True, help="Ruleset file.")
@click.option("--out-dir", required=True, help="Directory for the role bundles.")
@click.option("--t", "t", default=DEFAULT_PROCESSORS, show_default=True,
              help="Number of processors.")
@click.option("--l", "table_length", default=DEFAULT_TABLE_LENGTH,
              show_default=True, help="Blind-table length.")
@click.option("--rho", default=1.0, show_default=True,
              help="Probability that an emission is a real packet.")
@click.option("--delta-min", default=DEFAULT_DELTA_MIN, show_default=True,
              help="Minimum fixed bits per match.")
@click.option("--digest-bits", default=DEFAULT_DIGEST_BITS, show_default=True,
              help="Digest width in bits.")
@click.option("--allow-weak", is_flag=True, help="Install matches below delta-min.")
@click.option("--seed", type=int, default=None,
              help="Seed for reproducible setup (default: OS entropy).")
@click.option("--base-port", default=DEFAULT_BASE_PORT, show_default=True,
              help="First UDP port of the loopback topology written alongside.")
def setup(rules_path: str, out_dir: str, t: int, table_length: int, rho: float,
          delta_min: int, digest_bits: int, allow_weak: bool, seed: int | None,
          base_port: int):
    """Compile a ruleset and write one config bundle per role."""
    rules = _load_rules_or_exit(rules_path)
    try:
        params = ProtocolParams(
            n=HEADER_BITS,
            table_length=table_length,
            t=t,
            digest_bits=digest_bits,
            delta_min=delta_min,
            rho=rho,
        )
        psi = compile_rules(rules)
        bundle = global_setup(params, psi, make_rng(seed),
                              allow_weak_matches=allow_weak)
        paths = write_bundles(bundle, out_dir)
    except (ValueError, ProtocolError, OSError) as exc:
        _fail(str(exc))

    topology = Topology(
        entry=Endpoint(port=base_port),
        processors=tuple(Endpoint(port=base_port + j + 1) for j in range(t)),
        client=Endpoint(port=base_port + t + 1),
        carrier="udp",
    )
    topology_path = Path(out_dir) / "topology.json"
    topology_path.write_text(dump_topology(topology))
    click.echo(f"Compiled {len(rules)} rule(s) into {len(psi)} node(s)")
    for path in paths:
        click.echo(f"  {path}")
    click.echo(f"  {topology_path}")


@main.command()
@click.argument("mode", type=click.Choice(MODES))
@click.option("--rules", "rules_path", default=None, help="Fixed ruleset file.")
@click.option("--trace", "trace_arg", default=None,
              help="Trace file, or gen:count=N,mean=B,spread=B,seed=S.")
@click.option("--t", "t", default=DEFAULT_PROCESSORS, show_default=True,
              help="Number of processors.")
@click.option("--l", "table_lengths", default=None,
              help="Comma-separated blind-table lengths.")
@click.option("--rho", "rhos", default=None,
              help="Comma-separated real-packet probabilities.")
@click.option("--rule-counts", default=None,
              help="Comma-separated traversed-rule counts.")
@click.option("--loads", default=None,
              help="Comma-separated load fractions (latency mode).")
@click.option("--carrier", type=click.Choice(CARRIERS), default="inproc",
              show_default=True)
@click.option("--seed", default=0, show_default=True, help="Root seed.")
@click.option("--trials", default=DEFAULT_TRIALS, show_default=True,
              help="Equivalence trials.")
@click.option("--workers", default=1, show_default=True,
              help="Workers per processor.")
@click.option("--search-steps", default=DEFAULT_SEARCH_STEPS, show_default=True,
              help="Bisection steps of the rate search.")
@click.option("--reorder", is_flag=True, help="Reorder rules by match frequency.")
@click.option("--allow-weak", is_flag=True, help="Install matches below delta-min.")
@click.option("--calibrate", is_flag=True,
              help="Measure operation costs on this host.")
@click.option("--timing", type=click.Choice(["model", "measured"]), default="model",
              show_default=True)
@click.option("--out", "output_csv", default=None, help="Output CSV file.")
def bench(mode: str, rules_path: str | None, trace_arg: str | None, t: int,
          table_lengths: str | None, rhos: str | None, rule_counts: str | None,
          loads: str | None, carrier: str, seed: int, trials: int, workers: int,
          search_steps: int, reorder: bool, allow_weak: bool, calibrate: bool,
          timing: str, output_csv: str | None):
    """Run one benchmark mode; exit code 0 iff every check passes."""
    rules = _load_rules_or_exit(rules_path) if rules_path else None
    try:
        spec, trace_file = _load_trace(trace_arg) if trace_arg else (None, None)
        cfg = BenchConfig(
            mode=mode,
            rule_counts=_int_list(rule_counts),
            trace=spec or TraceSpec(seed=seed),
            rules=rules,
            trace_file=trace_file,
            t=t,
            table_lengths=_int_list(table_lengths),
            rhos=_float_list(rhos),
            loads=_float_list(loads) or DEFAULT_LOADS,
            carrier=carrier,
            seed=seed,
            trials=trials,
            processor_workers=workers,
            search_steps=search_steps,
            reorder=reorder,
            allow_weak_matches=allow_weak,
            cost_model=CostModel.calibrate() if calibrate else CostModel(),
            timing=timing,
        )
        report = run_bench(cfg)
    except (EquivalenceError, OSError, ValueError, ProtocolError,
            TopologyError) as exc:
        _fail(str(exc))

    click.echo(format_report(report), nl=False)
    if output_csv:
        try:
            path = write_csv(report, output_csv)
        except OSError as exc:
            _fail(f"writing CSV: {exc}")
        click.echo(f"Saved {len(report.rows)} row(s) to {path}")
    sys.exit(0 if report.passed else 1)


def format_delivery(delivery: Delivery) -> str:
    """One output line per verdict: ``seq N drop`` or ``seq N forward HEX``."""
    packet = delivery.verdict.packet
    if packet is None:
        return f"seq {delivery.seq} drop"
    return f"seq {delivery.seq} forward {packet.header.to_bytes().hex()}"


def _stop_after(duration: float | None) -> threading.Event:
    stop = threading.Event()
    if duration:
        timer = threading.Timer(duration, stop.set)
        timer.daemon = True
        timer.start()
    return stop


@main.command()
@click.argument("role", type=click.Choice(["entry", "processor", "client"]))
@click.option("--config", "config_path", required=True, help="Role bundle (.spbx).")
@click.option("--topology", "topology_path", required=True,
              help="JSON topology file.")
@click.option("--trace", "trace_arg", default=None,
              help="Trace to send (entry only): file or gen:SPEC.")
@click.option("--rate", type=float, default=None,
              help="Packets per second (entry only; default unpaced).")
@click.option("--seed", default=0, show_default=True, help="Entry randomness seed.")
@click.option("--duration", type=float, default=None,
              help="Seconds to serve before exiting (default: until interrupted).")
@click.option("--out", "out_path", default="-", show_default=True,
              help="Where the client writes one line per verdict.")
def run(role: str, config_path: str, topology_path: str, trace_arg: str | None,
        rate: float | None, seed: int, duration: float | None, out_path: str):
    """Run one role over UDP."""
    try:
        config = read_bundle(config_path)
        topology = load_topology(topology_path)
    except (OSError, BundleError, TopologyError) as exc:
        _fail(str(exc))

    expected = {"entry": EntryConfig, "processor": ProcessorConfig,
                "client": ClientConfig}[role]
    if not isinstance(config, expected):
        _fail(f"{config_path} is not a {role} bundle")

    stop = _stop_after(duration)
    try:
        if role == "entry":
            if trace_arg is None:
                _fail("the entry needs --trace")
            spec, trace = _load_trace(trace_arg)
            trace = trace or generate_trace(spec)
            entry = send_trace(config, topology, trace.packets(), rate_pps=rate,
                               seed=seed)
            click.echo(format_stats(entry.snapshot()), nl=False)
        elif role == "processor":
            processor = Processor(config)
            serve_processor(processor, topology, stop)
            click.echo(format_stats(processor.snapshot()), nl=False)
        else:
            client = Client(config)
            with click.open_file(out_path, "w") as out:
                def write(delivery: Delivery, now: int) -> None:
                    out.write(format_delivery(delivery) + "\n")
                    out.flush()

                serve_client(client, topology, stop, on_delivery=write)
            client.flush()
            click.echo(format_stats(client.snapshot()), nl=False)
    except KeyboardInterrupt:
        stop.set()
    except (UdpEndpointError, TraceFormatError, OSError) as exc:
        _fail(str(exc))


@main.group()
def rules():
    """Inspect rulesets."""


@rules.command(name="check")
@click.argument("path")
@click.option("--delta-min", default=DEFAULT_DELTA_MIN, show_default=True,
              help="Minimum fixed bits per match.")
def rules_check(path: str, delta_min: int):
    """Parse and compile a ruleset, then report problems and match weights."""
    try:
        parsed = load_rules(path)
    except InexpressibleRangeError as exc:
        _fail(f"{path}: {exc} (field {exc.field_name})")
    except (OSError, RuleSyntaxError) as exc:
        _fail(f"{path}: {exc}")

    try:
        psi = compile_rules(parsed)
    except InvalidTreeError as exc:
        for diagnostic in exc.diagnostics:
            click.echo(f"  {diagnostic}")
        _fail(f"{path}: ruleset does not compile")

    weak = 0
    click.echo(f"{len(parsed)} rule(s), {len(psi)} node(s)")
    for k, rule in enumerate(parsed, start=1):
        bits = rule.fixed_bits
        flag = ""
        if bits < delta_min:
            flag = f"  (below delta-min {delta_min})"
            weak += 1
        click.echo(f"  {k:3d}  {bits:3d} bit(s)  {rule}{flag}")
    diagnostics = validate_tree(psi)
    for diagnostic in diagnostics:
        click.echo(f"  {diagnostic}")
    if weak or diagnostics:
        sys.exit(1)


@main.group()
def trace():
    """Generate traces."""


@trace.command(name="generate")
@click.option("--spec", "spec_text", default="", help="count=N,mean=B,spread=B,seed=S")
@click.option("--out", "output", required=True, help="Output SBTR file.")
def trace_generate(spec_text: str, output: str):
    """Write a synthetic SBTR trace."""
    try:
        spec = TraceSpec.parse(spec_text)
        generated = generate_trace(spec)
        generated.write(output)
    except (TraceFormatError, OSError) as exc:
        _fail(str(exc))
    click.echo(
        f"Wrote {len(generated)} packet(s) to {output} "
        f"(mean payload {generated.mean_payload:.1f} bytes)"
    )
