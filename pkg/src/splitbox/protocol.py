"""Private evaluation pipeline.

Setup produces a blind table for the entry and client, a hashed match table
and XOR action shares for each processor, and a private copy of the tree
that carries only ids and public match projections::

    header x ──► entry:      xr = x ^ s_i
                     │
        ┌────────────┼────────────┐
        ▼            ▼            ▼
    processor 1 ... processor t   │   H(mask(pi, xr)) == table[i][j] ?
        │            │            │   accumulate (alpha_j, beta_j)
        └────────────┼────────────┘
                     ▼
    client:  x = xw ^ s_i, then overwrite bits where XOR(beta) is 1
             with XOR(alpha); all-zero header means drop
"""

from __future__ import annotations

import hashlib
import logging
import operator
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Any, NamedTuple

from splitbox.nfmodel import (
    BitString,
    Diagnostic,
    InvalidTreeError,
    Packet,
    PolicyTree,
    TriStateString,
    bits_to_bytes,
    dump_tree,
    embed,
    projection,
    validate_tree,
)
from splitbox.randomness import RandomSource

logger = logging.getLogger(__name__)

DEFAULT_TABLE_LENGTH = 1024
DEFAULT_PROCESSORS = 2
DEFAULT_DIGEST_BITS = 160
DEFAULT_DELTA_MIN = 16
RHO_PRECISION = 1_000_000

HASH_FUNCTIONS: dict[int, Callable[..., Any]] = {
    160: hashlib.sha1,
    224: hashlib.sha224,
    256: hashlib.sha256,
    384: hashlib.sha384,
    512: hashlib.sha512,
}


class ProtocolError(Exception):
    """Base class for private-pipeline failures."""


class WeakMatchError(ProtocolError):
    """Raised when a match fixes too few bits to resist hash inversion."""

    def __init__(self, match: TriStateString, delta_min: int):
        super().__init__(
            f"match {match} fixes {match.weight} bit(s), fewer than "
            f"delta_min={delta_min}; pass allow_weak_matches to override"
        )
        self.match = match
        self.delta_min = delta_min


class CounterIndexError(ProtocolError):
    """Raised when a counter index falls outside ``1..l``."""


class ReassemblyError(ProtocolError):
    """Raised when shares cannot be merged."""


@dataclass(frozen=True)
class ProtocolParams:
    """Parameters shared by every role.

    Attributes:
        n: Header width in bits.
        table_length: Number of blinds ``l``.
        t: Number of processors.
        digest_bits: Digest width ``q``; selects the hash function.
        delta_min: Minimum number of fixed bits in any installed match.
        rho: Probability that an emission slot carries a real packet.
    """

    n: int
    table_length: int = DEFAULT_TABLE_LENGTH
    t: int = DEFAULT_PROCESSORS
    digest_bits: int = DEFAULT_DIGEST_BITS
    delta_min: int = DEFAULT_DELTA_MIN
    rho: Fraction = Fraction(1)

    def __post_init__(self):
        rho = Fraction(self.rho).limit_denominator(RHO_PRECISION)
        object.__setattr__(self, "rho", rho)
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.table_length < 1:
            raise ValueError(f"table length must be >= 1, got {self.table_length}")
        if self.t < 2:
            raise ValueError(f"need at least 2 processors, got t={self.t}")
        if self.digest_bits not in HASH_FUNCTIONS:
            raise ValueError(
                f"unsupported digest width {self.digest_bits}; "
                f"choose one of {sorted(HASH_FUNCTIONS)}"
            )
        if self.delta_min < 0:
            raise ValueError(f"delta_min must be >= 0, got {self.delta_min}")
        if not 0 < rho <= 1:
            raise ValueError(f"rho must be in (0, 1], got {rho}")

    @property
    def field_bytes(self) -> int:
        """Bytes needed for one ``n``-bit value."""
        return (self.n + 7) // 8

    @property
    def digest_bytes(self) -> int:
        return self.digest_bits // 8


def digest(value: int, n: int, digest_bits: int = DEFAULT_DIGEST_BITS) -> bytes:
    """Hash an ``n``-bit value with the function pinned for ``digest_bits``."""
    return HASH_FUNCTIONS[digest_bits](bits_to_bytes(value, n)).digest()


@dataclass(frozen=True)
class BlindTable:
    """The ``l`` uniform blinds, addressed by a 1-based counter index."""

    blinds: tuple[BitString, ...]

    def __len__(self) -> int:
        return len(self.blinds)

    def blind(self, index: int) -> BitString:
        """Blind for counter index ``index``.

        Raises:
            CounterIndexError: If ``index`` is not in ``1..l``.
        """
        if not 1 <= index <= len(self.blinds):
            raise CounterIndexError(
                f"counter index {index} outside 1..{len(self.blinds)}"
            )
        return self.blinds[index - 1]

    @property
    def nbytes(self) -> int:
        """Size of the table in bytes, packed at ``n`` bits per blind."""
        if not self.blinds:
            return 0
        return (len(self.blinds) * len(self.blinds[0]) + 7) // 8


@dataclass(frozen=True)
class HashedMatchTable:
    """Digests of every blinded match, row-major by counter index.

    Attributes:
        digests: ``rows * match_count`` digests of ``digest_bits / 8`` bytes.
        rows: Table length ``l``.
        match_count: Number of distinct matches.
        digest_bits: Digest width ``q``.
    """

    digests: bytes
    rows: int
    match_count: int
    digest_bits: int = DEFAULT_DIGEST_BITS

    def __post_init__(self):
        expected = self.rows * self.match_count * (self.digest_bits // 8)
        if len(self.digests) != expected:
            raise ValueError(
                f"match table holds {len(self.digests)} bytes, expected {expected}"
            )

    def digest(self, index: int, match_id: int) -> bytes:
        """Digest for counter index ``index`` (1-based) and match ``match_id``.

        Raises:
            CounterIndexError: If ``index`` is not in ``1..l``.
        """
        if not 1 <= index <= self.rows:
            raise CounterIndexError(f"counter index {index} outside 1..{self.rows}")
        if not 0 <= match_id < self.match_count:
            raise ProtocolError(f"unknown match id {match_id}")
        width = self.digest_bits // 8
        start = ((index - 1) * self.match_count + match_id) * width
        return self.digests[start:start + width]

    @property
    def nbytes(self) -> int:
        return len(self.digests)


def _sample_blinds(params: ProtocolParams, rng: RandomSource) -> BlindTable:
    n = params.n
    return BlindTable(
        tuple(BitString(rng.bits(n), n) for _ in range(params.table_length))
    )


def _hash_matches(
    params: ProtocolParams, matches: Sequence[TriStateString], blinds: BlindTable
) -> HashedMatchTable:
    n = params.n
    hash_fn = HASH_FUNCTIONS[params.digest_bits]
    buffer = bytearray()
    for blind in blinds.blinds:
        s = blind.value
        for mu in matches:
            buffer += hash_fn(bits_to_bytes(mu.bits ^ (s & mu.care), n)).digest()
    return HashedMatchTable(
        digests=bytes(buffer),
        rows=len(blinds),
        match_count=len(matches),
        digest_bits=params.digest_bits,
    )


def _check_weight(
    params: ProtocolParams, matches: Sequence[TriStateString], allow_weak: bool
) -> None:
    weak = [mu for mu in matches if mu.weight < params.delta_min]
    if not weak:
        return
    if not allow_weak:
        raise WeakMatchError(weak[0], params.delta_min)
    logger.warning(
        "Installing %d match(es) below delta_min=%d (lightest fixes %d bits)",
        len(weak), params.delta_min, min(mu.weight for mu in weak),
    )


def setup_lookup_tables(
    params: ProtocolParams,
    matches: Sequence[TriStateString],
    rng: RandomSource,
    *,
    allow_weak_matches: bool = False,
) -> tuple[BlindTable, HashedMatchTable]:
    """Sample the blinds and hash every blinded match.

    Cell ``(i, j)`` holds ``H(embed(mu_j) ^ mask(pi_j, s_i))``; star
    positions are 0 on both sides of the later comparison.

    Args:
        params: Protocol parameters.
        matches: Distinct matches, indexed by match id.
        rng: Source of the blinds.
        allow_weak_matches: Install matches below ``delta_min`` with a
            warning instead of refusing them.

    Returns:
        The blind table and the hashed match table.

    Raises:
        ValueError: If ``matches`` is empty or a match has the wrong width.
        WeakMatchError: If a match is below ``delta_min`` and not allowed.
    """
    if not matches:
        raise ValueError("need at least one match")
    for mu in matches:
        if mu.length != params.n:
            raise ValueError(f"match {mu} is not {params.n} symbols wide")
    _check_weight(params, matches, allow_weak_matches)
    blinds = _sample_blinds(params, rng)
    return blinds, _hash_matches(params, matches, blinds)


def hide_match(mu: TriStateString) -> BitString:
    """The only match information a processor receives: its projection."""
    return projection(mu)


@dataclass(frozen=True)
class ActionShares:
    """One processor's share of one action.

    Attributes:
        processor_id: 1-based processor index.
        action_id: Id of the action in the private tree.
        alpha: Share of the masked action value.
        beta: Share of the action projection.
    """

    processor_id: int
    action_id: int
    alpha: BitString
    beta: BitString


def split_action(
    alpha: TriStateString, t: int, rng: RandomSource, action_id: int = 0
) -> tuple[ActionShares, ...]:
    """Split an action into ``t`` XOR shares.

    The first ``t - 1`` shares are uniform; the last one makes the XOR of
    all alpha shares equal ``embed(alpha)`` and the XOR of all beta shares
    equal ``projection(alpha)``.

    Raises:
        ValueError: If ``t < 2``.
    """
    if t < 2:
        raise ValueError(f"need at least 2 shares, got t={t}")
    n = alpha.length
    alphas = [rng.bits(n) for _ in range(t - 1)]
    betas = [rng.bits(n) for _ in range(t - 1)]
    alphas.append(reduce(operator.xor, alphas, embed(alpha).value))
    betas.append(reduce(operator.xor, betas, projection(alpha).value))
    return tuple(
        ActionShares(j + 1, action_id, BitString(a, n), BitString(b, n))
        for j, (a, b) in enumerate(zip(alphas, betas, strict=True))
    )


@dataclass(frozen=True)
class PrivateNode:
    """A node of the private tree; parents carry a match id and projection."""

    action_id: int
    match_id: int | None = None
    projection: BitString | None = None
    left: int | None = None
    right: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None and self.right is None


@dataclass(frozen=True)
class PrivatePolicyTree:
    """Same shape and ids as the plaintext tree, with values replaced by ids."""

    nodes: tuple[PrivateNode, ...]

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class EntryConfig:
    params: ProtocolParams
    blinds: BlindTable
    seed: int | None = None


@dataclass(frozen=True)
class ProcessorConfig:
    """Everything processor ``processor_id`` holds.

    Attributes:
        params: Protocol parameters.
        processor_id: 1-based index.
        tree: The private tree.
        match_table: Hashed match table, shared by all processors.
        projections: Public projection of each match, by match id.
        shares: This processor's share of each action, by action id.
    """

    params: ProtocolParams
    processor_id: int
    tree: PrivatePolicyTree
    match_table: HashedMatchTable
    projections: tuple[BitString, ...]
    shares: tuple[ActionShares, ...]


@dataclass(frozen=True)
class ClientConfig:
    """Client state: blinds plus the plaintext tree it was derived from."""

    params: ProtocolParams
    blinds: BlindTable
    tree_text: str
    seed: int | None = None


@dataclass(frozen=True)
class SetupBundle:
    entry: EntryConfig
    processors: tuple[ProcessorConfig, ...]
    client: ClientConfig

    @property
    def params(self) -> ProtocolParams:
        return self.entry.params


def global_setup(
    params: ProtocolParams,
    psi: PolicyTree,
    rng: RandomSource,
    *,
    allow_weak_matches: bool = False,
) -> SetupBundle:
    """Derive every role's configuration from a plaintext tree.

    Distinct matches and actions are numbered in node order; each is hashed
    or split exactly once. Identity actions are split like any other so
    processors cannot tell them apart.

    Raises:
        InvalidTreeError: If ``psi`` fails validation or its width differs
            from ``params.n``.
        WeakMatchError: If a match is below ``delta_min`` and not allowed.
    """
    if psi.n != params.n:
        raise InvalidTreeError(
            [Diagnostic("width", f"tree is {psi.n} bits, params say {params.n}")]
        )
    diagnostics = validate_tree(psi)
    if diagnostics:
        raise InvalidTreeError(diagnostics)

    match_ids: dict[TriStateString, int] = {}
    action_ids: dict[TriStateString, int] = {}
    private_nodes: list[PrivateNode] = []
    for node in psi.nodes:
        action_id = action_ids.setdefault(node.action, len(action_ids))
        if node.is_leaf:
            private_nodes.append(PrivateNode(action_id))
            continue
        match_id = match_ids.setdefault(node.match, len(match_ids))
        private_nodes.append(
            PrivateNode(action_id, match_id, hide_match(node.match),
                        node.left, node.right)
        )
    tree = PrivatePolicyTree(tuple(private_nodes))

    matches = list(match_ids)
    if matches:
        blinds, table = setup_lookup_tables(
            params, matches, rng, allow_weak_matches=allow_weak_matches
        )
    else:
        blinds = _sample_blinds(params, rng)
        table = HashedMatchTable(b"", params.table_length, 0, params.digest_bits)

    per_processor: list[list[ActionShares]] = [[] for _ in range(params.t)]
    for action, action_id in action_ids.items():
        for share in split_action(action, params.t, rng, action_id):
            per_processor[share.processor_id - 1].append(share)

    projections = tuple(hide_match(mu) for mu in matches)
    processors = tuple(
        ProcessorConfig(
            params=params,
            processor_id=j + 1,
            tree=tree,
            match_table=table,
            projections=projections,
            shares=tuple(shares),
        )
        for j, shares in enumerate(per_processor)
    )
    seed = getattr(rng, "seed", None)
    logger.info(
        "Global setup: %d node(s), %d match(es), %d action(s), l=%d, t=%d, "
        "match table %d bytes",
        len(psi), len(matches), len(action_ids), params.table_length, params.t,
        table.nbytes,
    )
    return SetupBundle(
        entry=EntryConfig(params, blinds, seed),
        processors=processors,
        client=ClientConfig(params, blinds, dump_tree(psi), seed),
    )


class SplitPacket(NamedTuple):
    """Output of :func:`split_packet`."""

    xr: BitString
    xw: Packet
    index: int


def split_packet(x: Packet, index: int, blinds: BlindTable) -> SplitPacket:
    """Blind the header with blind ``index``.

    The read-only copy ``xr`` is the blinded header; the writeable copy
    ``xw`` carries the blinded header and the payload in the clear.

    Raises:
        CounterIndexError: If ``index`` is not in ``1..l``.
    """
    xr = x.header ^ blinds.blind(index)
    return SplitPacket(xr, x.with_header(xr), index)


def compute_match(
    xr: BitString,
    index: int,
    match_id: int,
    table: HashedMatchTable,
    proj: BitString,
) -> bool:
    """Test a blinded header against match ``match_id`` without seeing it."""
    masked = xr.value & proj.value
    return digest(masked, len(xr), table.digest_bits) == table.digest(index, match_id)


@dataclass(frozen=True)
class CumulativeShares:
    alpha: BitString
    beta: BitString

    @classmethod
    def zeros(cls, n: int) -> CumulativeShares:
        return cls(BitString(0, n), BitString(0, n))


def compute_action(cum: CumulativeShares, share: ActionShares) -> CumulativeShares:
    return CumulativeShares(cum.alpha ^ share.alpha, cum.beta ^ share.beta)


@dataclass(frozen=True)
class TraversalResult:
    """One processor's output for one packet.

    Attributes:
        index: Counter index the packet was blinded with.
        shares: Cumulative shares at the leaf.
        match_attempts: Number of matches evaluated on the path.
    """

    index: int
    shares: CumulativeShares
    match_attempts: int


def private_traversal(
    cfg: ProcessorConfig, xr: BitString, index: int
) -> TraversalResult:
    """Walk the private tree on a blinded header.

    Raises:
        CounterIndexError: If ``index`` is not in ``1..l``.
        ProtocolError: If the tree has no reachable leaf.
    """
    nodes = cfg.tree.nodes
    cum = CumulativeShares.zeros(cfg.params.n)
    attempts = 0
    node_id = 0
    for _ in range(len(nodes)):
        node = nodes[node_id]
        cum = compute_action(cum, cfg.shares[node.action_id])
        if node.is_leaf:
            return TraversalResult(index, cum, attempts)
        attempts += 1
        matched = compute_match(xr, index, node.match_id, cfg.match_table,
                                node.projection)
        node_id = node.right if matched else node.left
    raise ProtocolError("private tree has no reachable leaf")


@dataclass(frozen=True)
class Verdict:
    """Outcome for one real packet: the forwarded packet, or None if dropped."""

    packet: Packet | None

    @property
    def dropped(self) -> bool:
        return self.packet is None


DROPPED = Verdict(None)


def merge_shares(
    index: int,
    xw: Packet,
    shares: Sequence[CumulativeShares],
    blinds: BlindTable,
    t: int | None = None,
) -> Verdict:
    """Reconstruct the output packet from all processors' shares.

    Raises:
        ReassemblyError: If no shares are given or their number is not ``t``.
        CounterIndexError: If ``index`` is not in ``1..l``.
    """
    if not shares:
        raise ReassemblyError("no shares to merge")
    if t is not None and len(shares) != t:
        raise ReassemblyError(f"expected {t} share pairs, got {len(shares)}")
    alpha = reduce(operator.xor, (s.alpha.value for s in shares))
    beta = reduce(operator.xor, (s.beta.value for s in shares))
    header = xw.header.value ^ blinds.blind(index).value
    header = (header & ~beta) | (alpha & beta)
    if header == 0:
        return DROPPED
    return Verdict(xw.with_header(BitString(header, xw.n)))


def split_dummy_flag(is_real: int, t: int, rng: RandomSource) -> tuple[int, ...]:
    """Share the real/dummy bit ``t`` ways."""
    if t < 2:
        raise ValueError(f"need at least 2 shares, got t={t}")
    shares = [rng.bits(1) for _ in range(t - 1)]
    shares.append(reduce(operator.xor, shares, is_real & 1))
    return tuple(shares)


def make_dummy_packet(n: int, payload_bits: int, rng: RandomSource) -> Packet:
    """A packet with a uniform header and a uniform payload."""
    header = BitString(rng.bits(n), n)
    return Packet(header, BitString(rng.bits(payload_bits), payload_bits))
