"""In-process carrier on a simpy virtual clock.

Every role runs as a simpy process fed by a bounded store (its NIC ring).
Links serialise datagrams through a single-slot resource, then deliver them
after the propagation delay. Service times come from a :class:`CostModel`,
so a run is a pure function of the trace, the configs and the seeds.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import simpy

from splitbox.nfmodel import BitString, Packet, TriStateString, build_chain
from splitbox.protocol import (
    DEFAULT_TABLE_LENGTH,
    ProtocolParams,
    SetupBundle,
    Verdict,
    global_setup,
)
from splitbox.randomness import SeededRandom
from splitbox.roles import (
    DEFAULT_BUFFER_CAPACITY,
    DEFAULT_TIMEOUT_NS,
    ENTRY_STREAM,
    Client,
    Entry,
    Processor,
)
from splitbox.transport import (
    FaultPlan,
    LinkSpec,
    PacketRecord,
    RunReport,
    Topology,
    span_ns,
)
from splitbox.wire import MessageKind, WireMessage, decode, encode, pack_bits

logger = logging.getLogger(__name__)

DEFAULT_QUEUE_CAPACITY = 256
DEFAULT_WINDOW = 256
DEFAULT_TICK_NS = 100_000
TIMING_MODES = ("model", "measured")

FAULT_STREAM = 2


@dataclass(frozen=True)
class CostModel:
    """Virtual service times in nanoseconds.

    Attributes:
        entry_ns: Entry work per emitted packet (blinding, flag sharing).
        codec_ns: Encoding or decoding one message.
        hash_ns: One digest of a masked header.
        lookup_ns: Reading one blind or one match-table digest.
        action_ns: One cumulative-share update.
        merge_ns: Reconstructing one packet at the client.
        filter_base_ns: Plaintext filter work per packet.
        compare_ns: Plaintext filter work per rule compared.
    """

    entry_ns: int = 300
    codec_ns: int = 150
    hash_ns: int = 500
    lookup_ns: int = 60
    action_ns: int = 50
    merge_ns: int = 400
    filter_base_ns: int = 200
    compare_ns: int = 25

    def entry_cost(self, emitted: int, messages: int) -> int:
        return emitted * (self.entry_ns + self.lookup_ns) + messages * self.codec_ns

    def processor_cost(self, match_attempts: int) -> int:
        return (
            2 * self.codec_ns
            + match_attempts * (self.hash_ns + self.lookup_ns)
            + (match_attempts + 1) * self.action_ns
        )

    def client_cost(self, completed: bool) -> int:
        return self.codec_ns + (self.merge_ns + self.lookup_ns if completed else 0)

    def filter_cost(self, attempts: int) -> int:
        return self.filter_base_ns + attempts * self.compare_ns

    @classmethod
    def calibrate(cls, repeats: int = 20_000) -> CostModel:
        """Measure the host's cost of each operation with ``perf_counter_ns``."""

        def measure(operation: Callable[[], object]) -> int:
            start = time.perf_counter_ns()
            for _ in range(repeats):
                operation()
            return max(1, (time.perf_counter_ns() - start) // repeats)

        header = BitString(0x0A0B0C0D_0A010203_06_1F90_0050, 104)
        blob = header.to_bytes()
        message = WireMessage(MessageKind.TO_PROCESSOR, 1, 1, 1, 1, pack_bits(header))
        datagram = encode(message)
        mask = (1 << 104) - 1
        model = cls(
            entry_ns=measure(lambda: header ^ header),
            codec_ns=measure(lambda: decode(datagram)),
            hash_ns=measure(lambda: hashlib.sha1(blob).digest()),
            action_ns=measure(lambda: header ^ header),
            merge_ns=measure(lambda: (header.value & ~mask) | (mask & header.value)),
            compare_ns=measure(lambda: (header.value & mask) == header.value),
        )
        logger.info("Calibrated cost model: %s", model)
        return model.with_lookups(_calibration_tables(header), repeats=repeats)

    def with_lookups(self, bundle: SetupBundle, repeats: int = 20_000,
                     rounds: int = 3, seed: int = 0) -> CostModel:
        """Copy with ``lookup_ns`` measured on the tables of ``bundle``.

        Counter indices are drawn uniformly over ``1..l``, so the lookups
        touch the whole table the way a long run does. The fastest of
        ``rounds`` passes is kept.
        """
        blinds = bundle.entry.blinds
        table = bundle.processors[0].match_table
        gen = SeededRandom(seed).generator
        indices = gen.integers(1, len(blinds) + 1, size=repeats).tolist()
        match_ids = (
            gen.integers(0, table.match_count, size=repeats).tolist()
            if table.match_count else []
        )
        best = None
        for _ in range(rounds):
            start = time.perf_counter_ns()
            for index in indices:
                blinds.blind(index)
            for index, match_id in zip(indices, match_ids, strict=False):
                table.digest(index, match_id)
            elapsed = time.perf_counter_ns() - start
            best = elapsed if best is None else min(best, elapsed)
        lookups = len(indices) + len(match_ids)
        lookup_ns = max(1, best // lookups)
        logger.debug("Lookup cost at l=%d: %d ns", len(blinds), lookup_ns)
        return replace(self, lookup_ns=lookup_ns)


def _calibration_tables(header: BitString) -> SetupBundle:
    params = ProtocolParams(n=len(header), table_length=DEFAULT_TABLE_LENGTH, t=2)
    psi = build_chain([(TriStateString.exact(header), TriStateString.exact(header))])
    return global_setup(params, psi, SeededRandom(0))


@dataclass(frozen=True)
class TokenBucketPacer:
    """Releases packets in per-tick bursts at a long-run ``rate_pps``.

    Attributes:
        rate_pps: Offered packets per second.
        tick_ns: Tick length; tokens accrue at every tick.
        burst: Bucket capacity; defaults to one tick's worth (at least 1).
    """

    rate_pps: float
    tick_ns: int = DEFAULT_TICK_NS
    burst: float | None = None

    def __post_init__(self):
        if self.rate_pps <= 0:
            raise ValueError(f"rate must be positive, got {self.rate_pps}")
        if self.tick_ns <= 0:
            raise ValueError(f"tick must be positive, got {self.tick_ns}")

    def release_times(self, count: int) -> list[int]:
        """Release time in nanoseconds of each of ``count`` packets."""
        per_tick = self.rate_pps * self.tick_ns / 1e9
        capacity = max(1.0, self.burst if self.burst is not None else per_tick)
        times: list[int] = []
        tokens = 0.0
        tick = 0
        while len(times) < count:
            if tokens < 1.0:
                wait = max(1, math.ceil((1.0 - tokens) / per_tick - 1e-9))
                tick += wait
                tokens = min(capacity, tokens + wait * per_tick + 1e-9)
            release = min(int(tokens), count - len(times))
            times.extend([tick * self.tick_ns] * release)
            tokens -= release
        return times


@dataclass
class _Link:
    spec: LinkSpec
    wire: simpy.Resource
    faulty: bool


@dataclass
class _Counters:
    ingress_dropped: int = 0
    link_lost: int = 0
    link_duplicated: int = 0
    queue_dropped: dict[str, int] = field(default_factory=dict)


class InProcessFabric:
    """Runs entry, processors and client on one simpy environment.

    Args:
        topology: Supplies ``t`` and the link parameters.
        bundle: Role configurations.
        fault_plan: Faults to inject on links.
        pacer: Offered-rate control; None runs closed-loop with at most
            ``window`` real packets outstanding.
        window: Outstanding real packets allowed in closed-loop mode.
        cost_model: Virtual service times.
        timing: ``model`` charges the cost model; ``measured`` charges the
            wall-clock time each role call took.
        queue_capacity: Ring size of each NIC; None for unbounded. The
            client has one ring per input link.
        processor_workers: Parallel workers per processor.
        client_capacity: Reassembly buffer slots.
        client_timeout_ns: Reassembly slot timeout.
        seed: Seed of the entry's randomness.
        capture: Keep every datagram delivered to each node.
    """

    def __init__(
        self,
        topology: Topology,
        bundle: SetupBundle,
        *,
        fault_plan: FaultPlan | None = None,
        pacer: TokenBucketPacer | None = None,
        window: int = DEFAULT_WINDOW,
        cost_model: CostModel | None = None,
        timing: str = "model",
        queue_capacity: int | None = DEFAULT_QUEUE_CAPACITY,
        processor_workers: int = 1,
        client_capacity: int = DEFAULT_BUFFER_CAPACITY,
        client_timeout_ns: int = DEFAULT_TIMEOUT_NS,
        seed: int = 0,
        capture: bool = False,
    ):
        if timing not in TIMING_MODES:
            raise ValueError(f"timing must be one of {TIMING_MODES}, got {timing!r}")
        if processor_workers < 1:
            raise ValueError("need at least one processor worker")
        self.topology = topology
        self.bundle = bundle
        self.fault_plan = fault_plan or FaultPlan()
        self.pacer = pacer
        self.window = window
        self.cost_model = cost_model or CostModel()
        self.timing = timing
        self.queue_capacity = queue_capacity
        self.processor_workers = processor_workers
        self.client_capacity = client_capacity
        self.client_timeout_ns = client_timeout_ns
        self.seed = seed
        self.capture = capture

    def run(self, packets: Sequence[Packet]) -> RunReport:
        return _FabricRun(self, packets).execute()


class _FabricRun:
    """State of a single run; discarded afterwards."""

    def __init__(self, fabric: InProcessFabric, packets: Sequence[Packet]):
        self.fabric = fabric
        self.packets = packets
        self.cost = fabric.cost_model
        bundle = fabric.bundle
        root = SeededRandom(fabric.seed)
        self.n = bundle.params.n
        self.t = bundle.params.t
        self.env = simpy.Environment()
        self.entry = Entry(bundle.entry, root.derive(ENTRY_STREAM))
        self.processors = [Processor(cfg) for cfg in bundle.processors]
        self.client = Client(
            bundle.client,
            capacity=fabric.client_capacity,
            timeout_ns=fabric.client_timeout_ns,
            on_close=self._on_close,
        )
        self.fault_rng = SeededRandom(fabric.fault_plan.seed).derive(FAULT_STREAM)
        self.counters = _Counters()

        self.ingress = simpy.Store(self.env)
        self.queues: dict[str, simpy.Store] = {
            f"processor-{j + 1}": simpy.Store(self.env) for j in range(self.t)
        }
        self.queues["client"] = simpy.Store(self.env)
        self.capacities: dict[str, int | None] = dict.fromkeys(
            self.queues, fabric.queue_capacity
        )
        if fabric.queue_capacity is not None:
            self.capacities["client"] = fabric.queue_capacity * (self.t + 1)
        self.links = {
            (src, dst): _Link(
                fabric.topology.link,
                simpy.Resource(self.env, capacity=1),
                not fabric.fault_plan.is_clean and fabric.fault_plan.applies(src, dst),
            )
            for src, dst in fabric.topology.links()
        }
        self.window = (
            None if fabric.pacer is not None
            else simpy.Container(self.env, init=fabric.window, capacity=fabric.window)
        )

        self.real_seqs: dict[int, int] = {}
        self.outstanding: set[int] = set()
        self.entry_ns: dict[int, int] = {}
        self.exit_ns: dict[int, int] = {}
        self.verdicts: dict[int, Verdict] = {}
        self.captured: dict[str, list[bytes]] = {name: [] for name in self.queues}
        self.pending = 0
        self.in_flight = 0
        self.source_done = False

    def execute(self) -> RunReport:
        env = self.env
        env.process(self._source())
        env.process(self._entry_worker())
        for j, processor in enumerate(self.processors):
            for _ in range(self.fabric.processor_workers):
                env.process(self._processor_worker(f"processor-{j + 1}", processor))
        env.process(self._client_worker())
        env.process(self._expiry())
        env.run()
        self.client.flush(expected=self.entry.stats.emitted)
        return self._report()

    def _service(self, modelled: int, started: int) -> int:
        if self.fabric.timing == "measured":
            return max(1, time.perf_counter_ns() - started)
        return modelled

    def _source(self):
        env = self.env
        pacer = self.fabric.pacer
        releases = pacer.release_times(len(self.packets)) if pacer else None
        for index, packet in enumerate(self.packets):
            if releases is not None and releases[index] > env.now:
                yield env.timeout(releases[index] - env.now)
            if self.window is not None:
                yield self.window.get(1)
            capacity = self.fabric.queue_capacity
            if (
                releases is not None
                and capacity is not None
                and len(self.ingress.items) >= capacity
            ):
                self.counters.ingress_dropped += 1
                continue
            self.pending += 1
            self.ingress.put((index, packet, env.now))
        self.source_done = True

    def _entry_worker(self):
        env = self.env
        while True:
            index, packet, arrived = yield self.ingress.get()
            started = time.perf_counter_ns()
            messages = self.entry.ingest(packet)
            datagrams = [encode(m) for m in messages]
            seq = messages[-1].seq
            emitted = len(messages) // (self.t + 1)
            cost = self._service(self.cost.entry_cost(emitted, len(messages)), started)
            self.real_seqs[seq] = index
            self.entry_ns[seq] = arrived
            self.outstanding.add(seq)
            yield env.timeout(cost)
            for message, data in zip(messages, datagrams, strict=True):
                if message.kind is MessageKind.TO_PROCESSOR:
                    destination = f"processor-{message.processor_id}"
                else:
                    destination = "client"
                self._send("entry", destination, data)
            self.pending -= 1

    def _processor_worker(self, name: str, processor: Processor):
        env = self.env
        queue = self.queues[name]
        while True:
            data = yield queue.get()
            started = time.perf_counter_ns()
            before = processor.stats.match_attempts
            out = processor.handle_datagram(data)
            attempts = processor.stats.match_attempts - before
            yield env.timeout(
                self._service(self.cost.processor_cost(attempts), started)
            )
            if out is not None:
                self._send(name, "client", out)
            self.in_flight -= 1

    def _client_worker(self):
        env = self.env
        queue = self.queues["client"]
        while True:
            data = yield queue.get()
            started = time.perf_counter_ns()
            delivery = self.client.handle_datagram(data, env.now)
            yield env.timeout(
                self._service(self.cost.client_cost(delivery is not None), started)
            )
            if delivery is not None:
                self.exit_ns[delivery.seq] = env.now
                self.verdicts[delivery.seq] = delivery.verdict
            self.in_flight -= 1

    def _send(self, source: str, destination: str, data: bytes) -> None:
        self.in_flight += 1
        self.env.process(self._transmit(source, destination, data))

    def _transmit(self, source: str, destination: str, data: bytes):
        env = self.env
        link = self.links[(source, destination)]
        with link.wire.request() as request:
            yield request
            yield env.timeout(link.spec.serialization_ns(len(data)))
        copies = 1
        delay = link.spec.propagation_ns
        if link.faulty:
            plan = self.fabric.fault_plan
            if self.fault_rng.random() < plan.loss:
                self.counters.link_lost += 1
                self.in_flight -= 1
                return
            if self.fault_rng.random() < plan.duplication:
                self.counters.link_duplicated += 1
                copies = 2
                self.in_flight += 1
            if plan.reorder_window_ns:
                delay += self.fault_rng.integers(0, plan.reorder_window_ns)
        for _ in range(copies):
            env.process(self._deliver(destination, data, delay))

    def _deliver(self, destination: str, data: bytes, delay: int):
        yield self.env.timeout(delay)
        queue = self.queues[destination]
        capacity = self.capacities[destination]
        if capacity is not None and len(queue.items) >= capacity:
            dropped = self.counters.queue_dropped
            dropped[destination] = dropped.get(destination, 0) + 1
            self.in_flight -= 1
            return
        if self.fabric.capture:
            self.captured[destination].append(data)
        queue.put(data)

    def _on_close(self, seq: int, outcome: str) -> None:
        if seq in self.outstanding:
            self.outstanding.discard(seq)
            if self.window is not None:
                self.window.put(1)

    def _quiet(self) -> bool:
        return self.pending == 0 and self.in_flight == 0 and not self.ingress.items

    def _expiry(self):
        env = self.env
        interval = max(1, self.client.timeout_ns // 4)
        while True:
            yield env.timeout(interval)
            self.client.expire(env.now)
            if not self._quiet() or self.client.occupancy:
                continue
            if self.source_done:
                return
            # every message of the outstanding packets was lost on the way
            for seq in list(self.outstanding):
                self._on_close(seq, "lost")

    def _report(self) -> RunReport:
        records: list[PacketRecord] = []
        by_index = {index: seq for seq, index in self.real_seqs.items()}
        for index in range(len(self.packets)):
            seq = by_index.get(index)
            records.append(
                PacketRecord(
                    trace_index=index,
                    seq=seq,
                    verdict=self.verdicts.get(seq) if seq is not None else None,
                    entry_ns=self.entry_ns.get(seq) if seq is not None else None,
                    exit_ns=self.exit_ns.get(seq) if seq is not None else None,
                )
            )
        stats = self.entry.snapshot()
        for processor in self.processors:
            stats.update(processor.snapshot())
        stats.update(self.client.snapshot())
        stats["fabric.ingress_dropped"] = self.counters.ingress_dropped
        stats["fabric.link_lost"] = self.counters.link_lost
        stats["fabric.link_duplicated"] = self.counters.link_duplicated
        for name in self.queues:
            stats[f"fabric.queue_dropped.{name}"] = self.counters.queue_dropped.get(
                name, 0
            )
        return RunReport(
            carrier="inproc",
            records=records,
            stats=stats,
            duration_ns=span_ns(self.entry_ns.values(), self.exit_ns.values()),
            offered_bytes=sum(len(p.to_bits()) // 8 for p in self.packets),
            captured=self.captured if self.fabric.capture else {},
        )


def run_baseline(
    service_ns: Sequence[int],
    packet_bytes: Sequence[int],
    *,
    pacer: TokenBucketPacer | None = None,
    link: LinkSpec | None = None,
    queue_capacity: int | None = DEFAULT_QUEUE_CAPACITY,
) -> RunReport:
    """Simulate the plaintext filter as a single node with one output link.

    Args:
        service_ns: Filter service time of each packet.
        packet_bytes: Size of each packet on the output link.
        pacer: Offered-rate control; None offers everything at time 0.
        link: Output link parameters.
        queue_capacity: Input ring size; None for unbounded.

    Returns:
        A report whose records carry timestamps but no verdicts.
    """
    env = simpy.Environment()
    link = link or LinkSpec()
    ingress = simpy.Store(env)
    wire = simpy.Resource(env, capacity=1)
    count = len(service_ns)
    entry_ns: dict[int, int] = {}
    exit_ns: dict[int, int] = {}
    dropped = 0

    def source():
        nonlocal dropped
        releases = pacer.release_times(count) if pacer else [0] * count
        for index in range(count):
            if releases[index] > env.now:
                yield env.timeout(releases[index] - env.now)
            if queue_capacity is not None and len(ingress.items) >= queue_capacity:
                dropped += 1
                continue
            entry_ns[index] = env.now
            ingress.put(index)

    def transmit(index: int):
        with wire.request() as request:
            yield request
            yield env.timeout(link.serialization_ns(packet_bytes[index]))
        yield env.timeout(link.propagation_ns)
        exit_ns[index] = env.now

    def filter_worker():
        while True:
            index = yield ingress.get()
            yield env.timeout(service_ns[index])
            env.process(transmit(index))

    env.process(source())
    env.process(filter_worker())
    env.run()
    records = [
        PacketRecord(i, None, None, entry_ns.get(i), exit_ns.get(i))
        for i in range(count)
    ]
    stats = {
        "baseline.offered": count,
        "baseline.forwarded": len(exit_ns),
        "entry.emitted": len(entry_ns),
        "fabric.ingress_dropped": dropped,
    }
    return RunReport(
        carrier="baseline",
        records=records,
        stats=stats,
        duration_ns=span_ns(entry_ns.values(), exit_ns.values()),
        offered_bytes=sum(packet_bytes),
    )
