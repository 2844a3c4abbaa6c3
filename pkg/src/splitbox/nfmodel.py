"""Plaintext network-function model.

Bit strings, tri-state strings over ``{0, 1, *}``, packets, policy trees and
the reference traversal that every private evaluation is checked against.

Bits are indexed from 0 internally, leftmost first. Diagnostics render them
1-based.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field, replace
from itertools import combinations

logger = logging.getLogger(__name__)

STAR = "*"
ROOT = 0

POLARITY_POS = "pos"
POLARITY_NEG = "neg"


class ContractError(ValueError):
    """Raised when an input violates a length or symbol contract."""


class TreeFormatError(ValueError):
    """Raised when policy-tree text cannot be parsed.

    Attributes:
        line_no: 1-based line of the offending input, or None when the
            problem spans the whole document.
    """

    def __init__(self, line_no: int | None, message: str):
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{prefix}{message}")
        self.line_no = line_no


class InvalidTreeError(ValueError):
    """Raised when a policy tree fails validation.

    Attributes:
        diagnostics: The violations reported by :func:`validate_tree`.
    """

    def __init__(self, diagnostics: Sequence[Diagnostic]):
        self.diagnostics = list(diagnostics)
        summary = "; ".join(str(d) for d in self.diagnostics[:5])
        super().__init__(
            f"policy tree has {len(self.diagnostics)} violation(s): {summary}"
        )


def bits_to_bytes(value: int, length: int) -> bytes:
    """Pack ``length`` bits MSB-first, zero-padded at the end to a byte boundary."""
    nbytes = (length + 7) // 8
    return (value << (8 * nbytes - length)).to_bytes(nbytes, "big")


def bytes_to_bits(data: bytes, length: int) -> int:
    """Inverse of :func:`bits_to_bytes`; trailing pad bits are discarded."""
    nbytes = (length + 7) // 8
    if len(data) < nbytes:
        raise ContractError(f"need {nbytes} bytes for {length} bits, got {len(data)}")
    return int.from_bytes(data[:nbytes], "big") >> (8 * nbytes - length)


@dataclass(frozen=True)
class BitString:
    """A fixed-length string over ``{0, 1}``.

    Attributes:
        value: The bits as an unsigned integer; bit 0 is the most
            significant bit.
        length: Number of bits.
    """

    value: int
    length: int

    def __post_init__(self):
        if self.length < 0:
            raise ContractError(f"negative bit length {self.length}")
        if self.value < 0 or self.value >> self.length:
            raise ContractError(f"value does not fit in {self.length} bits")

    @classmethod
    def zeros(cls, length: int) -> BitString:
        return cls(0, length)

    @classmethod
    def ones(cls, length: int) -> BitString:
        return cls((1 << length) - 1, length)

    @classmethod
    def from_str(cls, text: str) -> BitString:
        """Parse a string of ``0`` and ``1`` characters."""
        if any(ch not in "01" for ch in text):
            raise ContractError(f"not a bit string: {text!r}")
        return cls(int(text, 2) if text else 0, len(text))

    @classmethod
    def from_bytes(cls, data: bytes, length: int | None = None) -> BitString:
        """Read ``length`` bits MSB-first (default: all of ``data``)."""
        if length is None:
            length = 8 * len(data)
        return cls(bytes_to_bits(data, length), length)

    def to_bytes(self) -> bytes:
        return bits_to_bytes(self.value, self.length)

    def __str__(self) -> str:
        return format(self.value, f"0{self.length}b") if self.length else ""

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, index: int) -> int:
        if not 0 <= index < self.length:
            raise IndexError(index)
        return (self.value >> (self.length - 1 - index)) & 1

    def _check_peer(self, other: BitString) -> None:
        if self.length != other.length:
            raise ContractError(
                f"bit-length mismatch: {self.length} != {other.length}"
            )

    def __xor__(self, other: BitString) -> BitString:
        self._check_peer(other)
        return BitString(self.value ^ other.value, self.length)

    def __and__(self, other: BitString) -> BitString:
        self._check_peer(other)
        return BitString(self.value & other.value, self.length)

    @property
    def weight(self) -> int:
        """Hamming weight."""
        return self.value.bit_count()

    def concat(self, other: BitString) -> BitString:
        return BitString((self.value << other.length) | other.value,
                         self.length + other.length)

    def slice(self, start: int, stop: int | None = None) -> BitString:
        """Bits ``start`` (inclusive) to ``stop`` (exclusive)."""
        stop = self.length if stop is None else stop
        if not 0 <= start <= stop <= self.length:
            raise ContractError(f"bad slice [{start}:{stop}] of {self.length} bits")
        width = stop - start
        return BitString(
            (self.value >> (self.length - stop)) & ((1 << width) - 1), width
        )


EMPTY = BitString(0, 0)


@dataclass(frozen=True)
class TriStateString:
    """A string over ``{0, 1, *}``.

    Attributes:
        care: Bit mask of the non-star positions (the projection).
        bits: Values at the non-star positions; 0 wherever ``care`` is 0.
        length: Number of symbols.
    """

    care: int
    bits: int
    length: int

    def __post_init__(self):
        full = (1 << self.length) - 1
        if self.length < 0 or self.care & ~full or self.bits & ~full:
            raise ContractError(f"mask does not fit in {self.length} symbols")
        if self.bits & ~self.care:
            raise ContractError("value bits set at star positions")

    @classmethod
    def from_str(cls, text: str) -> TriStateString:
        care = bits = 0
        for ch in text:
            care <<= 1
            bits <<= 1
            if ch == "1":
                care |= 1
                bits |= 1
            elif ch == "0":
                care |= 1
            elif ch != STAR:
                raise ContractError(f"bad tri-state symbol {ch!r} in {text!r}")
        return cls(care, bits, len(text))

    @classmethod
    def stars(cls, length: int) -> TriStateString:
        """The identity action ``*^n``."""
        return cls(0, 0, length)

    @classmethod
    def exact(cls, value: BitString) -> TriStateString:
        """The star-free tri-state string equal to ``value``."""
        return cls((1 << value.length) - 1, value.value, value.length)

    def __str__(self) -> str:
        out = []
        for pos in range(self.length - 1, -1, -1):
            if not (self.care >> pos) & 1:
                out.append(STAR)
            else:
                out.append("1" if (self.bits >> pos) & 1 else "0")
        return "".join(out)

    def __len__(self) -> int:
        return self.length

    def __getitem__(self, index: int) -> str:
        if not 0 <= index < self.length:
            raise IndexError(index)
        shift = self.length - 1 - index
        if not (self.care >> shift) & 1:
            return STAR
        return "1" if (self.bits >> shift) & 1 else "0"

    @property
    def is_identity(self) -> bool:
        return self.care == 0

    @property
    def weight(self) -> int:
        """Number of non-star symbols."""
        return self.care.bit_count()


def projection(z: TriStateString) -> BitString:
    """Bit ``i`` is 1 iff ``z[i]`` is not a star."""
    return BitString(z.care, z.length)


def embed(z: TriStateString) -> BitString:
    """``z`` as a bit string with its stars replaced by 0."""
    return BitString(z.bits, z.length)


def mask(proj: BitString, x: BitString) -> BitString:
    """Zero ``x`` outside ``proj``.

    Raises:
        ContractError: If the lengths differ.
    """
    return proj & x


def tri_match(x: BitString, mu: TriStateString) -> bool:
    """Return True if every non-star symbol of ``mu`` equals the bit of ``x``.

    Only the first ``len(mu)`` bits of ``x`` take part.

    Raises:
        ContractError: If ``x`` is shorter than ``mu``.
    """
    if len(x) < mu.length:
        raise ContractError(
            f"cannot match {len(x)} bits against a {mu.length}-symbol match"
        )
    head = x.value >> (len(x) - mu.length)
    return (head & mu.care) == mu.bits


@dataclass(frozen=True)
class Packet:
    """A packet split into its ``n``-bit header and the rest.

    Attributes:
        header: The first ``n`` bits, after any zero-prefixing.
        payload: Everything after the header.
        prefix_bits: How many zero bits were prepended to reach ``n``.
    """

    header: BitString
    payload: BitString = field(default=EMPTY)
    prefix_bits: int = 0

    @classmethod
    def from_bits(cls, raw: BitString, n: int) -> Packet:
        """Split a raw bit string, zero-prefixing it when shorter than ``n``."""
        if len(raw) < n:
            return cls(BitString(raw.value, n), EMPTY, n - len(raw))
        return cls(raw.slice(0, n), raw.slice(n))

    @classmethod
    def from_bytes(cls, data: bytes, n: int) -> Packet:
        return cls.from_bits(BitString.from_bytes(data), n)

    def to_bits(self) -> BitString:
        """Reassemble the packet, stripping any ingestion prefix."""
        whole = self.header.concat(self.payload)
        return whole.slice(self.prefix_bits) if self.prefix_bits else whole

    def with_header(self, header: BitString) -> Packet:
        return replace(self, header=header)

    @property
    def n(self) -> int:
        return len(self.header)


def apply_action(x: Packet, alpha: TriStateString) -> Packet:
    """Overwrite the header bits where ``alpha`` is not a star."""
    if alpha.length != x.n:
        raise ContractError(f"action has {alpha.length} symbols, header has {x.n}")
    value = (x.header.value & ~alpha.care) | alpha.bits
    return x.with_header(BitString(value, x.n))


@dataclass(frozen=True)
class PolicyNode:
    """One node of a policy tree.

    ``left`` follows the complement of ``match``, ``right`` follows the
    match. Leaves have neither child and no match.
    """

    action: TriStateString
    match: TriStateString | None = None
    left: int | None = None
    right: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None and self.right is None


@dataclass(frozen=True)
class PolicyTree:
    """A network function: a binary tree of actions joined by match edges.

    Attributes:
        nodes: Nodes indexed by id; node ``0`` is the root.
        n: Header width in bits.
    """

    nodes: tuple[PolicyNode, ...]
    n: int

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[PolicyNode]:
        return iter(self.nodes)

    def preorder(self) -> list[int]:
        """Node ids reachable from the root, right (match) subtree last.

        Raises:
            ContractError: If the structure contains a cycle.
        """
        order: list[int] = []
        seen: set[int] = set()
        stack = [ROOT] if self.nodes else []
        while stack:
            node_id = stack.pop()
            if node_id in seen:
                raise ContractError(f"node {node_id} reached twice")
            seen.add(node_id)
            order.append(node_id)
            node = self.nodes[node_id]
            for child in (node.right, node.left):
                if child is not None:
                    stack.append(child)
        return order

    def paths(self) -> list[list[int]]:
        """Every root-to-leaf path as a list of node ids."""
        out: list[list[int]] = []
        stack: list[list[int]] = [[ROOT]]
        while stack:
            path = stack.pop()
            node = self.nodes[path[-1]]
            if node.is_leaf:
                out.append(path)
                continue
            for child in (node.right, node.left):
                if child is not None:
                    stack.append([*path, child])
        return out

    @property
    def matches(self) -> list[TriStateString]:
        return [node.match for node in self.nodes if node.match is not None]

    @property
    def actions(self) -> list[TriStateString]:
        return [node.action for node in self.nodes]


def identity_tree(n: int) -> PolicyTree:
    """A single identity leaf: forwards every packet unchanged."""
    return PolicyTree(nodes=(PolicyNode(TriStateString.stars(n)),), n=n)


StepHook = Callable[[int, Packet], Packet]


def traverse(psi: PolicyTree, x: Packet, *, on_step: StepHook | None = None) -> Packet:
    """Evaluate ``psi`` on ``x``.

    Matches are tested against the packet as received; actions accumulate
    on a separate working copy, which is returned at the first leaf.

    Args:
        psi: A tree that passes :func:`validate_tree`.
        x: The input packet.
        on_step: Optional hook called after each node's action with
            ``(node_id, working_copy)``; its return value replaces the
            working copy.

    Returns:
        The working copy at the leaf.

    Raises:
        ContractError: If no leaf is reached within ``len(psi)`` steps.
    """
    read_only = x.header
    working = x
    node_id = ROOT
    for _ in range(len(psi.nodes)):
        node = psi.nodes[node_id]
        working = apply_action(working, node.action)
        if on_step is not None:
            working = on_step(node_id, working)
        if node.is_leaf:
            return working
        node_id = node.right if tri_match(read_only, node.match) else node.left
    raise ContractError("traversal did not reach a leaf; validate the tree first")


def build_chain(
    policies: Sequence[tuple[TriStateString, TriStateString]],
) -> PolicyTree:
    """Build a first-match-terminates chain from ``(match, action)`` pairs.

    Parent ``k`` sits at id ``2k``; its matching child is the action leaf at
    ``2k + 1`` and its complement child is the next parent. The last
    complement child is an identity leaf.

    Raises:
        ContractError: If ``policies`` is empty or lengths disagree.
    """
    if not policies:
        raise ContractError("a chain needs at least one policy")
    n = policies[0][0].length
    identity = TriStateString.stars(n)
    nodes: list[PolicyNode] = []
    last = len(policies) - 1
    for k, (mu, alpha) in enumerate(policies):
        if mu.length != n or alpha.length != n:
            raise ContractError(f"policy {k + 1} is not {n} symbols wide")
        nodes.append(PolicyNode(identity, mu, left=2 * k + 2, right=2 * k + 1))
        nodes.append(PolicyNode(alpha))
        if k == last:
            nodes.append(PolicyNode(identity))
    return PolicyTree(nodes=tuple(nodes), n=n)


@dataclass(frozen=True)
class Diagnostic:
    """A single validation finding.

    Attributes:
        code: One of ``structure``, ``width``, ``overlap`` or
            ``repeated-action``.
        message: Human-readable description with 1-based bit positions.
        node: The node the finding is attached to, if any.
    """

    code: str
    message: str
    node: int | None = None

    def __str__(self) -> str:
        where = f"node {self.node}: " if self.node is not None else ""
        return f"[{self.code}] {where}{self.message}"


def _render_positions(value: int, length: int) -> str:
    positions = [str(i + 1) for i in range(length) if (value >> (length - 1 - i)) & 1]
    return ",".join(positions)


def _structure_diagnostics(psi: PolicyTree) -> list[Diagnostic]:
    found: list[Diagnostic] = []
    count = len(psi.nodes)
    parents: dict[int, int] = {}
    for node_id, node in enumerate(psi.nodes):
        if node.is_leaf:
            if node.match is not None:
                found.append(Diagnostic("structure", "leaf carries a match", node_id))
            continue
        if node.left is None or node.right is None:
            found.append(Diagnostic("structure", "parent has only one child", node_id))
            continue
        if node.match is None:
            found.append(Diagnostic("structure", "parent has no match", node_id))
        for child in (node.left, node.right):
            if not 0 <= child < count:
                found.append(
                    Diagnostic("structure", f"child {child} does not exist", node_id)
                )
            elif child == ROOT:
                found.append(Diagnostic("structure", "edge back to the root", node_id))
            elif child in parents:
                found.append(
                    Diagnostic("structure", f"node {child} has several parents",
                               node_id)
                )
            else:
                parents[child] = node_id
        if 0 <= node.left < count and not psi.nodes[node.left].action.is_identity:
            found.append(
                Diagnostic("structure", "left child is not the identity action",
                           node_id)
            )
    if found:
        return found
    try:
        reachable = set(psi.preorder())
    except ContractError as exc:
        return [Diagnostic("structure", str(exc))]
    for node_id in range(count):
        if node_id not in reachable:
            found.append(Diagnostic("structure", "unreachable from the root", node_id))
    return found


def validate_tree(psi: PolicyTree) -> list[Diagnostic]:
    """Check that ``psi`` can be evaluated privately.

    Reports structural problems (root and left children must be identity
    actions, every node reachable exactly once), width mismatches, and
    non-identity actions on one root-to-leaf path whose projections overlap.

    Returns:
        The violations found; empty when the tree is safe.
    """
    if not psi.nodes:
        return [Diagnostic("structure", "tree has no nodes")]
    found: list[Diagnostic] = []
    for node_id, node in enumerate(psi.nodes):
        if node.action.length != psi.n:
            found.append(
                Diagnostic("width", f"action has {node.action.length} symbols, "
                           f"expected {psi.n}", node_id)
            )
        if node.match is not None and node.match.length != psi.n:
            found.append(
                Diagnostic("width", f"match has {node.match.length} symbols, "
                           f"expected {psi.n}", node_id)
            )
    if not psi.nodes[ROOT].action.is_identity:
        found.append(Diagnostic("structure", "root is not the identity action", ROOT))
    structural = _structure_diagnostics(psi)
    found.extend(structural)
    if structural:
        return found

    reported: set[tuple[int, int]] = set()
    for path in psi.paths():
        active = [i for i in path if not psi.nodes[i].action.is_identity]
        for a, b in combinations(active, 2):
            if (a, b) in reported:
                continue
            first, second = psi.nodes[a].action, psi.nodes[b].action
            shared = first.care & second.care
            if not shared:
                continue
            reported.add((a, b))
            if first == second:
                found.append(
                    Diagnostic("repeated-action",
                               f"action repeated at node {b} on the same path", a)
                )
            else:
                found.append(
                    Diagnostic("overlap",
                               f"action projection overlaps node {b} at bit(s) "
                               f"{_render_positions(shared, psi.n)}", a)
                )
    return found


def parse_tree(text: str, n: int | None = None) -> PolicyTree:
    """Parse the line-oriented policy-tree format.

    ::

        node <id> action=<tristate>
        edge <parent> <child> match=<tristate> polarity=<pos|neg>

    ``#`` starts a comment. Node ids must be ``0 .. N-1``.

    Args:
        text: The tree text.
        n: Header width; defaults to the width of the root action.

    Raises:
        TreeFormatError: On any syntax error.
    """
    actions: dict[int, TriStateString] = {}
    matches: dict[int, TriStateString] = {}
    children: dict[int, dict[str, int]] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        try:
            keyword, positional, options = _split_tokens(tokens)
            if keyword == "node":
                (node_id,) = _ints(positional, 1)
                if node_id in actions:
                    raise TreeFormatError(line_no, f"node {node_id} defined twice")
                actions[node_id] = TriStateString.from_str(options.pop("action"))
            elif keyword == "edge":
                parent, child = _ints(positional, 2)
                mu = TriStateString.from_str(options.pop("match"))
                polarity = options.pop("polarity")
                if polarity not in (POLARITY_POS, POLARITY_NEG):
                    raise TreeFormatError(line_no, f"bad polarity {polarity!r}")
                if parent in matches and matches[parent] != mu:
                    raise TreeFormatError(
                        line_no, f"edges of node {parent} disagree on the match"
                    )
                slot = children.setdefault(parent, {})
                if polarity in slot:
                    raise TreeFormatError(
                        line_no, f"node {parent} already has a {polarity} edge"
                    )
                matches[parent] = mu
                slot[polarity] = child
            else:
                raise TreeFormatError(line_no, f"unknown keyword {keyword!r}")
            if options:
                raise TreeFormatError(line_no, f"unknown field(s) {sorted(options)}")
        except TreeFormatError:
            raise
        except KeyError as exc:
            raise TreeFormatError(line_no, f"missing field {exc.args[0]}") from exc
        except ValueError as exc:
            raise TreeFormatError(line_no, str(exc)) from exc

    if not actions or sorted(actions) != list(range(len(actions))):
        raise TreeFormatError(None, "node ids must be 0..N-1 and include the root")
    nodes = tuple(
        PolicyNode(
            action=actions[i],
            match=matches.get(i),
            left=children.get(i, {}).get(POLARITY_NEG),
            right=children.get(i, {}).get(POLARITY_POS),
        )
        for i in range(len(actions))
    )
    return PolicyTree(nodes=nodes, n=actions[ROOT].length if n is None else n)


def _split_tokens(tokens: list[str]) -> tuple[str, list[str], dict[str, str]]:
    positional: list[str] = []
    options: dict[str, str] = {}
    for token in tokens[1:]:
        if "=" in token:
            key, _, value = token.partition("=")
            options[key] = value
        else:
            positional.append(token)
    return tokens[0], positional, options


def _ints(values: list[str], count: int) -> list[int]:
    if len(values) != count:
        raise ValueError(f"expected {count} id(s), got {len(values)}")
    ids = [int(v) for v in values]
    if any(i < 0 for i in ids):
        raise ValueError("node ids must be non-negative")
    return ids


def dump_tree(psi: PolicyTree) -> str:
    """Render ``psi`` in canonical form: preorder ids, edges next to children.

    Raises:
        ContractError: If the tree has a cycle.
    """
    order = psi.preorder()
    renumber = {old: new for new, old in enumerate(order)}
    lines: list[str] = []
    stack: list[tuple[int, int | None, str]] = [(ROOT, None, "")]
    while stack:
        old, parent, polarity = stack.pop()
        node = psi.nodes[old]
        if parent is not None:
            lines.append(
                f"edge {renumber[parent]} {renumber[old]} "
                f"match={psi.nodes[parent].match} polarity={polarity}"
            )
        lines.append(f"node {renumber[old]} action={node.action}")
        if node.right is not None:
            stack.append((node.right, old, POLARITY_POS))
        if node.left is not None:
            stack.append((node.left, old, POLARITY_NEG))
    return "\n".join(lines) + "\n"
