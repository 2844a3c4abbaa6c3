"""UDP carrier: one datagram per wire message, wall-clock timing.

Each role gets a bound socket and a receive loop. :func:`run_udp` starts all
of them on one host (loopback by default) and drives a trace through; the
``serve_*`` helpers run a single role for multi-process deployments.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from collections.abc import Callable, Sequence

from splitbox.nfmodel import Packet
from splitbox.protocol import EntryConfig, SetupBundle, Verdict
from splitbox.randomness import SeededRandom
from splitbox.roles import (
    DEFAULT_BUFFER_CAPACITY,
    DEFAULT_TIMEOUT_NS,
    ENTRY_STREAM,
    Client,
    Delivery,
    Entry,
    Processor,
)
from splitbox.transport import Endpoint, PacketRecord, RunReport, Topology, span_ns
from splitbox.wire import MAX_DATAGRAM, MessageKind, encode

logger = logging.getLogger(__name__)

DEFAULT_SOCKET_BUFFER = 4 * 1024 * 1024
DEFAULT_POLL_INTERVAL = 0.05
DEFAULT_DRAIN_TIMEOUT = 5.0
DEFAULT_WINDOW = 64
RECEIVE_SIZE = 65_535


class UdpEndpointError(Exception):
    """Raised when a socket cannot be set up."""


def bind_socket(
    endpoint: Endpoint,
    buffer_bytes: int = DEFAULT_SOCKET_BUFFER,
    poll_interval: float = DEFAULT_POLL_INTERVAL,
) -> socket.socket:
    """Open a UDP socket bound to ``endpoint`` (port 0 picks a free port).

    Raises:
        UdpEndpointError: If the socket cannot be bound.
    """
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, buffer_bytes)
        sock.bind(endpoint.address)
    except OSError as exc:
        sock.close()
        raise UdpEndpointError(f"cannot bind {endpoint.address}: {exc}") from exc
    sock.settimeout(poll_interval)
    return sock


class ProcessorEndpoint:
    """Receive loop of one processor."""

    def __init__(
        self, processor: Processor, sock: socket.socket, client: tuple[str, int]
    ):
        self.processor = processor
        self.sock = sock
        self.client = client

    def serve(self, stop: threading.Event) -> None:
        while not stop.is_set():
            try:
                data, _ = self.sock.recvfrom(RECEIVE_SIZE)
            except TimeoutError:
                continue
            out = self.processor.handle_datagram(data)
            if out is not None:
                self.sock.sendto(out, self.client)


DeliveryHook = Callable[[Delivery, int], None]


class ClientEndpoint:
    """Receive loop of the client; also drives slot expiry."""

    def __init__(
        self,
        client: Client,
        sock: socket.socket,
        on_delivery: DeliveryHook | None = None,
    ):
        self.client = client
        self.sock = sock
        self.on_delivery = on_delivery

    def serve(self, stop: threading.Event) -> None:
        interval = max(1, self.client.timeout_ns // 4)
        last_expiry = time.monotonic_ns()
        while not stop.is_set():
            try:
                data, _ = self.sock.recvfrom(RECEIVE_SIZE)
            except TimeoutError:
                data = None
            now = time.monotonic_ns()
            if data is not None:
                delivery = self.client.handle_datagram(data, now)
                if delivery is not None and self.on_delivery is not None:
                    self.on_delivery(delivery, now)
            if now - last_expiry >= interval:
                self.client.expire(now)
                last_expiry = now


class EntryEndpoint:
    """Sends each packet's messages to the processors and the client."""

    def __init__(
        self,
        entry: Entry,
        sock: socket.socket,
        processors: Sequence[tuple[str, int]],
        client: tuple[str, int],
    ):
        self.entry = entry
        self.sock = sock
        self.processors = list(processors)
        self.client = client

    def send(
        self, packet: Packet, before_send: Callable[[int], None] | None = None
    ) -> int:
        """Ingest and transmit one packet; return its sequence number.

        Args:
            packet: The real packet.
            before_send: Called with the sequence number before any
                datagram leaves.
        """
        messages = self.entry.ingest(packet)
        seq = messages[-1].seq
        if before_send is not None:
            before_send(seq)
        for message in messages:
            data = encode(message)
            if len(data) > MAX_DATAGRAM:
                raise UdpEndpointError(f"datagram of {len(data)} bytes is too large")
            if message.kind is MessageKind.TO_PROCESSOR:
                self.sock.sendto(data, self.processors[message.processor_id - 1])
            else:
                self.sock.sendto(data, self.client)
        return seq


def _address(sock: socket.socket, endpoint: Endpoint) -> tuple[str, int]:
    return endpoint.host, sock.getsockname()[1]


def _start(target: Callable[[threading.Event], None], stop: threading.Event,
           name: str) -> threading.Thread:
    thread = threading.Thread(target=target, args=(stop,), name=name, daemon=True)
    thread.start()
    return thread


def run_udp(
    topology: Topology,
    bundle: SetupBundle,
    packets: Sequence[Packet],
    *,
    pacer=None,
    window: int = DEFAULT_WINDOW,
    seed: int = 0,
    client_capacity: int = DEFAULT_BUFFER_CAPACITY,
    client_timeout_ns: int = DEFAULT_TIMEOUT_NS,
    drain_timeout: float = DEFAULT_DRAIN_TIMEOUT,
    capture: bool = False,
) -> RunReport:
    """Run every role on this host and drive ``packets`` through over UDP.

    Args:
        topology: Endpoint addresses.
        bundle: Role configurations.
        packets: The trace.
        pacer: A :class:`~splitbox.fabric.TokenBucketPacer` whose release
            times are followed on the wall clock; None sends closed-loop
            with at most ``window`` real packets outstanding.
        window: Outstanding real packets allowed in closed-loop mode.
        seed: Seed of the entry's randomness.
        client_capacity: Reassembly buffer slots.
        client_timeout_ns: Reassembly slot timeout.
        drain_timeout: Seconds without progress after which the run stops
            waiting for outstanding packets.
        capture: Accepted for interface parity; the UDP carrier captures
            nothing.

    Returns:
        The run report; timestamps are ``time.monotonic_ns`` values.
    """
    lock = threading.Condition()
    outstanding: set[int] = set()
    credits = threading.Semaphore(window)
    real_seqs: dict[int, int] = {}
    entry_ns: dict[int, int] = {}
    exit_ns: dict[int, int] = {}
    verdicts: dict[int, Verdict] = {}

    def on_close(seq: int, outcome: str) -> None:
        with lock:
            if seq in outstanding:
                outstanding.discard(seq)
                credits.release()
                lock.notify_all()

    def on_delivery(delivery: Delivery, now: int) -> None:
        with lock:
            exit_ns[delivery.seq] = now
            verdicts[delivery.seq] = delivery.verdict

    client_sock = bind_socket(topology.client)
    processor_socks = [bind_socket(endpoint) for endpoint in topology.processors]
    entry_sock = bind_socket(topology.entry)
    client_address = _address(client_sock, topology.client)
    processor_addresses = [
        _address(sock, endpoint)
        for sock, endpoint in zip(processor_socks, topology.processors, strict=True)
    ]

    entry = Entry(bundle.entry, SeededRandom(seed).derive(ENTRY_STREAM))
    processors = [Processor(cfg) for cfg in bundle.processors]
    client = Client(bundle.client, client_capacity, client_timeout_ns, on_close)
    sender = EntryEndpoint(entry, entry_sock, processor_addresses, client_address)

    stop = threading.Event()
    threads = [
        _start(ClientEndpoint(client, client_sock, on_delivery).serve, stop, "client")
    ]
    for j, (processor, sock) in enumerate(zip(processors, processor_socks,
                                              strict=True)):
        endpoint = ProcessorEndpoint(processor, sock, client_address)
        threads.append(_start(endpoint.serve, stop, f"processor-{j + 1}"))

    try:
        start = time.monotonic_ns()
        releases = pacer.release_times(len(packets)) if pacer else None
        for index, packet in enumerate(packets):
            if releases is not None:
                delay = start + releases[index] - time.monotonic_ns()
                if delay > 0:
                    time.sleep(delay / 1e9)
            elif not credits.acquire(timeout=drain_timeout):
                logger.warning("UDP run stalled with %d packet(s) outstanding",
                               len(outstanding))
                break

            def register(seq: int, index: int = index) -> None:
                with lock:
                    outstanding.add(seq)
                    real_seqs[seq] = index
                    entry_ns[seq] = time.monotonic_ns()

            sender.send(packet, before_send=register)
        _drain(lock, outstanding, drain_timeout)
    finally:
        stop.set()
        for thread in threads:
            thread.join()
        for sock in (client_sock, entry_sock, *processor_socks):
            sock.close()

    client.flush(expected=entry.stats.emitted)
    records = []
    by_index = {index: seq for seq, index in real_seqs.items()}
    for index in range(len(packets)):
        seq = by_index.get(index)
        records.append(
            PacketRecord(
                trace_index=index,
                seq=seq,
                verdict=verdicts.get(seq) if seq is not None else None,
                entry_ns=entry_ns.get(seq) if seq is not None else None,
                exit_ns=exit_ns.get(seq) if seq is not None else None,
            )
        )
    stats = entry.snapshot()
    for processor in processors:
        stats.update(processor.snapshot())
    stats.update(client.snapshot())
    return RunReport(
        carrier="udp",
        records=records,
        stats=stats,
        duration_ns=span_ns(entry_ns.values(), exit_ns.values()),
        offered_bytes=sum(len(p.to_bits()) // 8 for p in packets),
    )


def _drain(lock: threading.Condition, outstanding: set[int], timeout: float) -> None:
    with lock:
        remaining = len(outstanding)
        deadline = time.monotonic() + timeout
        while outstanding:
            left = deadline - time.monotonic()
            if left <= 0:
                logger.warning("UDP drain timed out with %d packet(s) outstanding",
                               len(outstanding))
                return
            lock.wait(left)
            if len(outstanding) < remaining:
                remaining = len(outstanding)
                deadline = time.monotonic() + timeout


def serve_processor(
    processor: Processor, topology: Topology, stop: threading.Event
) -> None:
    """Serve one processor until ``stop`` is set."""
    endpoint = topology.processors[processor.processor_id - 1]
    sock = bind_socket(endpoint)
    logger.info("Processor %d listening on %s:%d", processor.processor_id,
                endpoint.host, sock.getsockname()[1])
    try:
        ProcessorEndpoint(processor, sock, topology.client.address).serve(stop)
    finally:
        sock.close()


def serve_client(
    client: Client,
    topology: Topology,
    stop: threading.Event,
    on_delivery: DeliveryHook | None = None,
) -> None:
    """Serve the client until ``stop`` is set."""
    sock = bind_socket(topology.client)
    logger.info("Client listening on %s:%d", topology.client.host,
                sock.getsockname()[1])
    try:
        ClientEndpoint(client, sock, on_delivery).serve(stop)
    finally:
        sock.close()


def send_trace(
    config: EntryConfig,
    topology: Topology,
    packets: Sequence[Packet],
    *,
    rate_pps: float | None = None,
    seed: int = 0,
) -> Entry:
    """Send ``packets`` from the entry role to remote processors and client.

    Returns:
        The entry, whose stats describe what was emitted.
    """
    entry = Entry(config, SeededRandom(seed).derive(ENTRY_STREAM))
    sock = bind_socket(topology.entry)
    sender = EntryEndpoint(
        entry, sock, [p.address for p in topology.processors], topology.client.address
    )
    gap = 1.0 / rate_pps if rate_pps else 0.0
    try:
        start = time.monotonic()
        for index, packet in enumerate(packets):
            if gap:
                delay = start + index * gap - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
            sender.send(packet)
    finally:
        sock.close()
    logger.info("Entry sent %d packet(s) as %d emission(s)", len(packets),
                entry.stats.emitted)
    return entry
