"""Topology, fault plans and run reports shared by both carriers.

:func:`run_topology` drives a trace through entry, processors and client on
either the in-process virtual-clock fabric (``inproc``) or UDP datagram
endpoints (``udp``).
"""

from __future__ import annotations

import json
import logging
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from splitbox.nfmodel import Packet
from splitbox.protocol import SetupBundle, Verdict
from splitbox.roles import OUTCOMES, conservation_holds, format_stats

logger = logging.getLogger(__name__)

CARRIERS = ("inproc", "udp")
DEFAULT_BANDWIDTH_BPS = 10_000_000_000
DEFAULT_PROPAGATION_NS = 2_000
FAULT_SCOPES = ("all", "shares")


class TopologyError(ValueError):
    """Raised when a topology or the configs it is asked to run disagree."""


@dataclass(frozen=True)
class Endpoint:
    host: str = "127.0.0.1"
    port: int = 0

    @property
    def address(self) -> tuple[str, int]:
        return self.host, self.port


@dataclass(frozen=True)
class LinkSpec:
    """A point-to-point link of the in-process fabric.

    Attributes:
        bandwidth_bps: Serialisation rate in bits per second.
        propagation_ns: One-way propagation delay.
    """

    bandwidth_bps: int = DEFAULT_BANDWIDTH_BPS
    propagation_ns: int = DEFAULT_PROPAGATION_NS

    def serialization_ns(self, nbytes: int) -> int:
        return (nbytes * 8 * 1_000_000_000) // self.bandwidth_bps


@dataclass(frozen=True)
class FaultPlan:
    """Faults injected by the in-process fabric.

    Attributes:
        loss: Per-message loss probability.
        duplication: Per-message duplication probability.
        reorder_window_ns: Extra uniform delay in ``[0, window)`` per message.
        scope: ``all`` links, or only processor-to-client ``shares`` links.
        seed: Seed of the fault stream.
    """

    loss: float = 0.0
    duplication: float = 0.0
    reorder_window_ns: int = 0
    scope: str = "all"
    seed: int = 0

    def __post_init__(self):
        for name in ("loss", "duplication"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {value}")
        if self.reorder_window_ns < 0:
            raise ValueError("reorder window must be non-negative")
        if self.scope not in FAULT_SCOPES:
            raise ValueError(f"scope must be one of {FAULT_SCOPES}, got {self.scope!r}")

    @property
    def is_clean(self) -> bool:
        return not (self.loss or self.duplication or self.reorder_window_ns)

    def applies(self, source: str, destination: str) -> bool:
        if self.scope == "all":
            return True
        return source.startswith("processor") and destination == "client"


@dataclass(frozen=True)
class Topology:
    """Where each role lives.

    The entry reaches every processor and the client; every processor
    reaches the client.
    """

    entry: Endpoint
    processors: tuple[Endpoint, ...]
    client: Endpoint
    link: LinkSpec = field(default_factory=LinkSpec)
    carrier: str = "inproc"

    def __post_init__(self):
        if self.carrier not in CARRIERS:
            raise TopologyError(f"unknown carrier {self.carrier!r}")
        if len(self.processors) < 2:
            raise TopologyError("a topology needs at least two processors")

    @classmethod
    def local(cls, t: int, carrier: str = "inproc", **link) -> Topology:
        """Loopback topology with ephemeral ports."""
        return cls(
            entry=Endpoint(),
            processors=tuple(Endpoint() for _ in range(t)),
            client=Endpoint(),
            link=LinkSpec(**link),
            carrier=carrier,
        )

    @property
    def t(self) -> int:
        return len(self.processors)

    def links(self) -> list[tuple[str, str]]:
        names = [f"processor-{j + 1}" for j in range(self.t)]
        return (
            [("entry", name) for name in names]
            + [("entry", "client")]
            + [(name, "client") for name in names]
        )


def load_topology(path: str | Path, carrier: str | None = None) -> Topology:
    """Read a JSON topology file.

    Raises:
        TopologyError: If the file is not a valid topology.
    """
    try:
        raw = json.loads(Path(path).read_text())
        return Topology(
            entry=Endpoint(**raw["entry"]),
            processors=tuple(Endpoint(**p) for p in raw["processors"]),
            client=Endpoint(**raw["client"]),
            link=LinkSpec(**raw.get("link", {})),
            carrier=carrier or raw.get("carrier", "udp"),
        )
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise TopologyError(f"cannot load topology from {path}: {exc}") from exc


def dump_topology(topology: Topology) -> str:
    raw = asdict(topology)
    raw["processors"] = list(raw["processors"])
    return json.dumps(raw, indent=2) + "\n"


@dataclass(frozen=True)
class PacketRecord:
    """What happened to one trace packet.

    Attributes:
        trace_index: Position in the input trace.
        seq: Sequence number the entry assigned, or None if never emitted.
        verdict: Client verdict, or None if none was produced.
        entry_ns: Time the entry started on the packet.
        exit_ns: Time the client produced the verdict.
    """

    trace_index: int
    seq: int | None
    verdict: Verdict | None
    entry_ns: int | None
    exit_ns: int | None

    @property
    def delay_ns(self) -> int | None:
        if self.entry_ns is None or self.exit_ns is None:
            return None
        return self.exit_ns - self.entry_ns


@dataclass
class RunReport:
    """Result of one pipeline run.

    Attributes:
        carrier: ``inproc``, ``udp`` or ``baseline``.
        records: One record per trace packet, in trace order.
        stats: Flat snapshot of every role's and the carrier's counters.
        duration_ns: From the first entry timestamp to the last exit.
        offered_bytes: Total trace bytes offered.
        captured: Datagrams delivered to each node, when capture was on.
    """

    carrier: str
    records: list[PacketRecord]
    stats: dict[str, int]
    duration_ns: int
    offered_bytes: int = 0
    captured: dict[str, list[bytes]] = field(default_factory=dict)

    @property
    def verdicts(self) -> list[Verdict | None]:
        return [record.verdict for record in self.records]

    @property
    def delivered(self) -> int:
        return sum(1 for record in self.records if record.exit_ns is not None)

    def delays_ns(self) -> np.ndarray:
        delays = [r.delay_ns for r in self.records if r.delay_ns is not None]
        return np.asarray(delays, dtype=np.int64)

    @property
    def lost(self) -> int:
        """Emission slots that produced no outcome, from the counters."""
        stats = self.stats
        return (
            stats.get("fabric.ingress_dropped", 0)
            + stats.get("client.expired", 0)
            + stats.get("client.poisoned", 0)
            + stats.get("client.evicted", 0)
        )

    @property
    def loss_fraction(self) -> float:
        offered = self.stats.get("entry.emitted", 0) + self.stats.get(
            "fabric.ingress_dropped", 0
        )
        return self.lost / offered if offered else 0.0

    def conservation_ok(self) -> bool:
        if self.carrier == "baseline":
            return True
        return conservation_holds(self.stats)

    @property
    def delivered_pps(self) -> float:
        if self.duration_ns <= 0:
            return 0.0
        return self.delivered * 1e9 / self.duration_ns

    @property
    def exit_pps(self) -> float:
        """Rate at which verdicts left, from the first exit to the last."""
        exits = [r.exit_ns for r in self.records if r.exit_ns is not None]
        if len(exits) < 2:
            return 0.0
        span = max(exits) - min(exits)
        return (len(exits) - 1) * 1e9 / span if span > 0 else 0.0

    @property
    def mean_packet_bytes(self) -> float:
        return self.offered_bytes / len(self.records) if self.records else 0.0

    def to_text(self) -> str:
        """Canonical text form; identical runs give identical text."""
        lines = [f"carrier {self.carrier}", f"duration_ns {self.duration_ns}"]
        for record in self.records:
            if record.verdict is None:
                outcome = "none"
            elif record.verdict.dropped:
                outcome = "drop"
            else:
                outcome = f"forward {record.verdict.packet.header}"
            lines.append(
                f"packet {record.trace_index} seq={record.seq} {outcome} "
                f"entry={record.entry_ns} exit={record.exit_ns}"
            )
        return "\n".join(lines) + "\n" + format_stats(self.stats)


def check_bundle(topology: Topology, bundle: SetupBundle) -> None:
    """Reject bundles whose roles disagree with each other or the topology.

    Raises:
        TopologyError: On any mismatch of ``n``, ``l`` or ``t``.
    """
    params = bundle.entry.params
    configs = [bundle.client, *bundle.processors]
    for cfg in configs:
        other = cfg.params
        if (other.n, other.table_length, other.t) != (
            params.n, params.table_length, params.t
        ):
            raise TopologyError(
                f"config mismatch: entry has n={params.n}, l={params.table_length}, "
                f"t={params.t}; another role has n={other.n}, "
                f"l={other.table_length}, t={other.t}"
            )
    if len(bundle.processors) != params.t or topology.t != params.t:
        raise TopologyError(
            f"t={params.t} but {len(bundle.processors)} processor config(s) and "
            f"{topology.t} processor endpoint(s)"
        )


def span_ns(starts: Iterable[int], ends: Iterable[int]) -> int:
    """Time from the earliest start to the latest end; 0 if either is empty."""
    starts, ends = list(starts), list(ends)
    if not starts or not ends:
        return 0
    return max(ends) - min(starts)


def summarize(report: RunReport) -> str:
    stats = report.stats
    parts = [f"{key}={stats.get(f'client.{key}', 0)}" for key in OUTCOMES]
    return f"{report.carrier}: emitted={stats.get('entry.emitted', 0)} " + " ".join(
        parts
    )


def run_topology(
    topology: Topology,
    bundle: SetupBundle,
    packets: Sequence[Packet],
    fault_plan: FaultPlan | None = None,
    **options,
) -> RunReport:
    """Drive ``packets`` through the full pipeline.

    Args:
        topology: Endpoints, link parameters and carrier.
        bundle: Role configurations from setup.
        packets: The trace, as packets.
        fault_plan: Faults to inject (in-process carrier only).
        **options: Carrier options such as ``pacer``, ``seed``,
            ``cost_model`` or ``capture``.

    Returns:
        The run report.

    Raises:
        TopologyError: If the configs disagree with each other or the
            topology, or faults are requested on the UDP carrier.
    """
    # carriers import this module for its types
    from splitbox import fabric, udp

    check_bundle(topology, bundle)
    plan = fault_plan or FaultPlan()
    if topology.carrier == "udp":
        if not plan.is_clean:
            raise TopologyError("fault injection is only available in-process")
        report = udp.run_udp(topology, bundle, packets, **options)
    else:
        report = fabric.InProcessFabric(topology, bundle, fault_plan=plan,
                                        **options).run(packets)
    logger.info("%s", summarize(report))
    return report
