"""Role machines: the entry middlebox, the processors and the client.

Each role consumes and produces :class:`~splitbox.wire.WireMessage` values
(or their encoded datagrams); carriers in :mod:`splitbox.fabric` and
:mod:`splitbox.udp` only move bytes between them.
"""

from __future__ import annotations

import logging
import operator
from collections import OrderedDict
from collections.abc import Callable, Mapping
from dataclasses import asdict, dataclass, field
from functools import reduce

from splitbox.nfmodel import ContractError, Packet
from splitbox.protocol import (
    ClientConfig,
    CumulativeShares,
    EntryConfig,
    ProcessorConfig,
    ProtocolError,
    Verdict,
    make_dummy_packet,
    merge_shares,
    private_traversal,
    split_dummy_flag,
    split_packet,
)
from splitbox.randomness import RandomSource
from splitbox.wire import (
    DecodeError,
    MessageKind,
    WireError,
    WireMessage,
    decode,
    encode,
    pack_bits,
    pack_packet,
    pack_shares,
    unpack_bits,
    unpack_packet,
    unpack_shares,
)

logger = logging.getLogger(__name__)

DEFAULT_BUFFER_CAPACITY = 4096
DEFAULT_TIMEOUT_NS = 1_000_000_000
CLOSED_MEMORY_FACTOR = 4
ENTRY_STREAM = 1

OUTCOMES = (
    "reconstructed",
    "dropped",
    "dummies_discarded",
    "expired",
    "poisoned",
    "evicted",
)


@dataclass
class EntryStats:
    emitted: int = 0
    real: int = 0
    dummies: int = 0
    wraps: int = 0


class Entry:
    """The entry middlebox.

    Owns the blind counter and the sequence numbers, so one instance must be
    driven by one caller.

    Args:
        config: Entry configuration from setup.
        rng: Source for dummy decisions, dummy packets and flag shares.
    """

    def __init__(self, config: EntryConfig, rng: RandomSource):
        self.config = config
        self.params = config.params
        self.rng = rng
        self.counter = 1
        self.next_seq = 0
        self.stats = EntryStats()

    def ingest(self, packet: Packet) -> list[WireMessage]:
        """Emit the messages for one real packet, preceded by any dummies.

        Returns:
            ``t + 1`` messages per emitted packet: one per processor, then
            one for the client. The real packet's messages come last.
        """
        messages: list[WireMessage] = []
        rho = self.params.rho
        if rho < 1:
            while self.rng.random() >= rho:
                dummy = make_dummy_packet(self.params.n, len(packet.payload), self.rng)
                messages.extend(self._emit(dummy, is_real=0))
        messages.extend(self._emit(packet, is_real=1))
        return messages

    def _emit(self, packet: Packet, is_real: int) -> list[WireMessage]:
        index = self.counter
        seq = self.next_seq
        split = split_packet(packet, index, self.config.blinds)
        flags = split_dummy_flag(is_real, self.params.t, self.rng)
        body = pack_bits(split.xr)
        messages = [
            WireMessage(MessageKind.TO_PROCESSOR, seq, index, j + 1, flag, body)
            for j, flag in enumerate(flags)
        ]
        messages.append(
            WireMessage(MessageKind.TO_CLIENT_XW, seq, index, 0, 0,
                        pack_packet(split.xw))
        )
        self.next_seq += 1
        self.counter = index % self.params.table_length + 1
        self.stats.emitted += 1
        if self.counter == 1:
            self.stats.wraps += 1
        if is_real:
            self.stats.real += 1
        else:
            self.stats.dummies += 1
        return messages

    def snapshot(self) -> dict[str, int]:
        return {f"entry.{key}": value for key, value in asdict(self.stats).items()}


@dataclass
class ProcessorStats:
    handled: int = 0
    malformed: int = 0
    match_attempts: int = 0


class Processor:
    """A processor middlebox; holds no per-packet state."""

    def __init__(self, config: ProcessorConfig):
        self.config = config
        self.processor_id = config.processor_id
        self.stats = ProcessorStats()

    def handle(self, message: WireMessage) -> WireMessage | None:
        """Evaluate one blinded header.

        Returns:
            The share message for the client, or None if ``message`` was
            malformed (it is counted, never raised).
        """
        if (
            message.kind is not MessageKind.TO_PROCESSOR
            or message.processor_id != self.processor_id
        ):
            return self._malformed("unexpected kind %s for processor %d",
                                   message.kind, message.processor_id)
        try:
            xr = unpack_bits(message.body, self.config.params.n)
            result = private_traversal(self.config, xr, message.counter_index)
        except (WireError, ProtocolError, ContractError) as exc:
            return self._malformed("seq %d rejected: %s", message.seq, exc)
        self.stats.handled += 1
        self.stats.match_attempts += result.match_attempts
        return WireMessage(
            MessageKind.TO_CLIENT_SHARES,
            message.seq,
            message.counter_index,
            self.processor_id,
            message.flag_share,
            pack_shares(result.shares.alpha, result.shares.beta),
        )

    def handle_datagram(self, data: bytes) -> bytes | None:
        try:
            message = decode(data, self.config.params.n)
        except DecodeError as exc:
            return self._malformed("undecodable datagram: %s", exc)
        out = self.handle(message)
        return None if out is None else encode(out)

    def _malformed(self, fmt: str, *args) -> None:
        self.stats.malformed += 1
        logger.debug("Processor %d: " + fmt, self.processor_id, *args)
        return None

    def snapshot(self) -> dict[str, int]:
        prefix = f"processor.{self.processor_id}"
        return {f"{prefix}.{key}": value for key, value in asdict(self.stats).items()}


@dataclass
class ReassemblySlot:
    """Everything received so far for one sequence number."""

    seq: int
    index: int
    first_seen_ns: int
    xw: Packet | None = None
    shares: dict[int, tuple[CumulativeShares, int]] = field(default_factory=dict)
    arrivals_ns: list[int] = field(default_factory=list)

    def complete(self, t: int) -> bool:
        return self.xw is not None and len(self.shares) == t


@dataclass
class ClientStats:
    received: int = 0
    opened: int = 0
    reconstructed: int = 0
    dropped: int = 0
    dummies_discarded: int = 0
    expired: int = 0
    poisoned: int = 0
    evicted: int = 0
    duplicates: int = 0
    malformed: int = 0


@dataclass(frozen=True)
class Delivery:
    """A reconstructed real packet's verdict, tagged with its sequence number."""

    seq: int
    index: int
    verdict: Verdict


CloseHook = Callable[[int, str], None]


class Client:
    """The client merger.

    Files messages into a bounded reassembly buffer keyed by sequence
    number. A slot completes when the writeable copy and all ``t`` share
    messages have arrived with the same counter index.

    Args:
        config: Client configuration from setup.
        capacity: Maximum number of open slots; the oldest is evicted when
            a new one would exceed it.
        timeout_ns: Slots older than this are expired by :meth:`expire`.
        on_close: Called with ``(seq, outcome)`` whenever a slot closes;
            ``outcome`` is one of :data:`OUTCOMES`.
    """

    def __init__(
        self,
        config: ClientConfig,
        capacity: int = DEFAULT_BUFFER_CAPACITY,
        timeout_ns: int = DEFAULT_TIMEOUT_NS,
        on_close: CloseHook | None = None,
    ):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.config = config
        self.params = config.params
        self.capacity = capacity
        self.timeout_ns = timeout_ns
        self.on_close = on_close
        self.stats = ClientStats()
        self._slots: OrderedDict[int, ReassemblySlot] = OrderedDict()
        # every seq below the mark is closed or given up on
        self._closed_below = 0
        self._closed_above: set[int] = set()

    @property
    def occupancy(self) -> int:
        return len(self._slots)

    def handle(self, message: WireMessage, now: int) -> Delivery | None:
        """File one message; return a delivery when it completes a real packet."""
        self.stats.received += 1
        n = self.params.n
        try:
            if message.kind is MessageKind.TO_CLIENT_XW:
                payload = unpack_packet(message.body, n)
            elif (
                message.kind is MessageKind.TO_CLIENT_SHARES
                and 1 <= message.processor_id <= self.params.t
            ):
                alpha, beta = unpack_shares(message.body, n)
                payload = CumulativeShares(alpha, beta)
            else:
                raise WireError(f"unexpected {message.kind.name} message")
        except WireError as exc:
            self.stats.malformed += 1
            logger.debug("Client: seq %d malformed: %s", message.seq, exc)
            return None

        seq = message.seq
        slot = self._slots.get(seq)
        if slot is None and self._is_closed(seq):
            self.stats.duplicates += 1
            return None
        if slot is None:
            if len(self._slots) >= self.capacity:
                oldest, _ = self._slots.popitem(last=False)
                self._close(oldest, "evicted")
            slot = ReassemblySlot(seq, message.counter_index, now)
            self._slots[seq] = slot
            self.stats.opened += 1
        if message.counter_index != slot.index:
            del self._slots[seq]
            self._close(seq, "poisoned")
            return None

        if isinstance(payload, Packet):
            if slot.xw is not None:
                self.stats.duplicates += 1
                return None
            slot.xw = payload
        else:
            if message.processor_id in slot.shares:
                self.stats.duplicates += 1
                return None
            slot.shares[message.processor_id] = (payload, message.flag_share & 1)
        slot.arrivals_ns.append(now)
        if not slot.complete(self.params.t):
            return None
        del self._slots[seq]
        return self._reconstruct(slot)

    def handle_datagram(self, data: bytes, now: int) -> Delivery | None:
        try:
            message = decode(data, self.params.n)
        except DecodeError as exc:
            self.stats.received += 1
            self.stats.malformed += 1
            logger.debug("Client: undecodable datagram: %s", exc)
            return None
        return self.handle(message, now)

    def _reconstruct(self, slot: ReassemblySlot) -> Delivery | None:
        pairs = [slot.shares[j] for j in sorted(slot.shares)]
        is_real = reduce(operator.xor, (flag for _, flag in pairs))
        if not is_real:
            self._close(slot.seq, "dummies_discarded")
            return None
        verdict = merge_shares(
            slot.index, slot.xw, [shares for shares, _ in pairs],
            self.config.blinds, self.params.t,
        )
        self._close(slot.seq, "dropped" if verdict.dropped else "reconstructed")
        return Delivery(slot.seq, slot.index, verdict)

    def _close(self, seq: int, outcome: str) -> None:
        setattr(self.stats, outcome, getattr(self.stats, outcome) + 1)
        if outcome in ("expired", "poisoned", "evicted"):
            logger.debug("Client: slot %d %s", seq, outcome)
        if seq >= self._closed_below:
            self._closed_above.add(seq)
            self._advance_closed()
        if self.on_close is not None:
            self.on_close(seq, outcome)

    def _is_closed(self, seq: int) -> bool:
        return seq < self._closed_below or seq in self._closed_above

    def _advance_closed(self) -> None:
        """Move the closed mark over the contiguous run of closed seqs.

        When too many closes sit above a gap, the missing seqs below the
        oldest of them are given up on: they were never opened, so
        :meth:`flush` already counts them as expired, and a late message
        for one is counted as a duplicate instead of opening a slot.
        """
        while self._closed_below in self._closed_above:
            self._closed_above.remove(self._closed_below)
            self._closed_below += 1
        if len(self._closed_above) > CLOSED_MEMORY_FACTOR * self.capacity:
            self._closed_below = min(self._closed_above)
            self._advance_closed()

    def expire(self, now: int) -> list[int]:
        """Expire slots first seen more than ``timeout_ns`` before ``now``."""
        stale = [
            seq for seq, slot in self._slots.items()
            if now - slot.first_seen_ns > self.timeout_ns
        ]
        for seq in stale:
            del self._slots[seq]
            self._close(seq, "expired")
        return stale

    def flush(self, expected: int | None = None) -> list[int]:
        """Expire every open slot.

        Args:
            expected: Number of sequence numbers the entry emitted; those
                never seen at all are counted as expired too.

        Returns:
            The sequence numbers of the slots that were open.
        """
        stale = list(self._slots)
        for seq in stale:
            del self._slots[seq]
            self._close(seq, "expired")
        if expected is not None and expected > self.stats.opened:
            missing = expected - self.stats.opened
            self.stats.expired += missing
            logger.debug("Client: %d sequence number(s) never arrived", missing)
        return stale

    def snapshot(self) -> dict[str, int]:
        return {f"client.{key}": value for key, value in asdict(self.stats).items()}


def conservation_holds(stats: Mapping[str, int]) -> bool:
    """Every emitted sequence number ended in exactly one client outcome."""
    closed = sum(stats.get(f"client.{key}", 0) for key in OUTCOMES)
    return stats.get("entry.emitted", 0) == closed


def format_stats(stats: Mapping[str, int]) -> str:
    """Render a snapshot as sorted ``key value`` lines."""
    return "".join(f"{key} {stats[key]}\n" for key in sorted(stats))


def parse_stats(text: str) -> dict[str, int]:
    """Inverse of :func:`format_stats`.

    Raises:
        ValueError: On a line that is not ``key value``.
    """
    stats: dict[str, int] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"line {line_no}: expected 'key value', got {line!r}")
        stats[parts[0]] = int(parts[1])
    return stats
