"""Five-tuple wildcard firewall on top of the policy-tree model.

Rules are written one per line::

    # comment
    allow src=127.*.*.* dst=* proto=tcp sport=* dport=80
    drop  src=10.0.0.0/8
    allow dst=10.1.0.0/16 set-dst=10.9.0.1

Omitted fields default to ``*``. Each rule compiles to one policy of a
first-match chain: ALLOW becomes the identity action (or a rewrite of the
``set-*`` fields), DROP becomes the all-zero header.
"""

from __future__ import annotations

import ipaddress
import logging
import struct
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from splitbox.nfmodel import (
    EMPTY,
    BitString,
    InvalidTreeError,
    Packet,
    PolicyTree,
    TriStateString,
    build_chain,
    identity_tree,
    validate_tree,
)
from splitbox.protocol import DROPPED, Verdict
from splitbox.randomness import RandomSource, SeededRandom

logger = logging.getLogger(__name__)

FIELDS: tuple[tuple[str, int], ...] = (
    ("src", 32),
    ("dst", 32),
    ("proto", 8),
    ("sport", 16),
    ("dport", 16),
)
HEADER_BITS = sum(width for _, width in FIELDS)
PROTOCOL_NAMES = {"icmp": 1, "tcp": 6, "udp": 17}
PREFIX_LENGTHS = (0, 8, 16, 24, 32)
REWRITABLE = ("src", "dst", "sport", "dport")

TRACE_MAGIC = b"SBTR"
TRACE_VERSION = 1
TRACE_PREAMBLE = struct.Struct(">4sHI")
TRACE_RECORD = struct.Struct(">IIBHHI")

DEFAULT_TRACE_COUNT = 10_000
DEFAULT_MEAN_PAYLOAD = 1024
DEFAULT_PAYLOAD_SPREAD = 512


class RuleSyntaxError(ValueError):
    """Raised for a malformed rule line.

    Attributes:
        line_no: 1-based line of the offending rule, if known.
    """

    def __init__(self, line_no: int | None, message: str):
        self.line_no = line_no
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{prefix}{message}")


class InexpressibleRangeError(RuleSyntaxError):
    """Raised for a range that is not one aligned power-of-two block."""

    def __init__(self, line_no: int | None, field_name: str, text: str):
        self.field_name = field_name
        super().__init__(
            line_no,
            f"{field_name}={text} is not expressible with wildcard bits; "
            f"use a prefix or an aligned power-of-two range",
        )


class TraceFormatError(ValueError):
    """Raised when trace bytes or a trace spec cannot be read."""


@dataclass(frozen=True)
class FiveTuple:
    """Addresses as 32-bit integers, protocol and ports as integers."""

    src: int
    dst: int
    proto: int
    sport: int
    dport: int

    def __str__(self) -> str:
        return (
            f"{ipaddress.IPv4Address(self.src)}:{self.sport} -> "
            f"{ipaddress.IPv4Address(self.dst)}:{self.dport} proto {self.proto}"
        )


@dataclass(frozen=True)
class HeaderLayout:
    """Fixed-order concatenation of named fields, first field most significant."""

    fields: tuple[tuple[str, int], ...] = FIELDS

    @property
    def bits(self) -> int:
        return sum(width for _, width in self.fields)

    def offsets(self) -> dict[str, tuple[int, int]]:
        """``name -> (shift, width)`` where ``shift`` counts from the right."""
        out = {}
        shift = self.bits
        for name, width in self.fields:
            shift -= width
            out[name] = (shift, width)
        return out

    def pack(self, values: dict[str, int]) -> int:
        value = 0
        for name, width in self.fields:
            part = values.get(name, 0)
            if not 0 <= part < (1 << width):
                raise ValueError(f"{name}={part} does not fit in {width} bits")
            value = (value << width) | part
        return value

    def unpack(self, value: int) -> dict[str, int]:
        return {
            name: (value >> shift) & ((1 << width) - 1)
            for name, (shift, width) in self.offsets().items()
        }


LAYOUT = HeaderLayout()


def encode_header(five: FiveTuple) -> BitString:
    """The 104-bit header of ``five``, each field in network byte order."""
    return BitString(
        LAYOUT.pack(
            {
                "src": five.src,
                "dst": five.dst,
                "proto": five.proto,
                "sport": five.sport,
                "dport": five.dport,
            }
        ),
        LAYOUT.bits,
    )


def decode_header(bits: BitString) -> FiveTuple:
    if len(bits) != LAYOUT.bits:
        raise ValueError(f"header has {len(bits)} bits, expected {LAYOUT.bits}")
    return FiveTuple(**LAYOUT.unpack(bits.value))


@dataclass(frozen=True)
class FieldMatch:
    """A wildcard pattern over one header field."""

    value: int
    care: int
    width: int

    @classmethod
    def any(cls, width: int) -> FieldMatch:
        return cls(0, 0, width)

    @classmethod
    def exact(cls, value: int, width: int) -> FieldMatch:
        return cls(value, (1 << width) - 1, width)

    def matches(self, value: int) -> bool:
        return value & self.care == self.value

    @property
    def fixed_bits(self) -> int:
        return self.care.bit_count()

    def render(self, kind: str) -> str:
        full = (1 << self.width) - 1
        if self.care == 0:
            return "*"
        if kind == "ip":
            octet_cares = [(self.care >> s) & 0xFF for s in (24, 16, 8, 0)]
            if all(c in (0, 0xFF) for c in octet_cares):
                octets = [(self.value >> s) & 0xFF for s in (24, 16, 8, 0)]
                return ".".join(
                    str(o) if c else "*"
                    for o, c in zip(octets, octet_cares, strict=True)
                )
            lo, hi = self.value, self.value | (full & ~self.care)
            return f"{ipaddress.IPv4Address(lo)}-{ipaddress.IPv4Address(hi)}"
        if self.care == full:
            return str(self.value)
        return f"{self.value}-{self.value | (full & ~self.care)}"


class RuleVerdict(str, Enum):
    ALLOW = "allow"
    DROP = "drop"


@dataclass(frozen=True)
class FirewallRule:
    """One firewall rule.

    Attributes:
        verdict: ALLOW or DROP.
        src: Source address pattern.
        dst: Destination address pattern.
        proto: Protocol pattern.
        sport: Source port pattern.
        dport: Destination port pattern.
        rewrites: Fields an ALLOW rule overwrites, with their new values.
        line: 1-based source line, 0 when built programmatically.
    """

    verdict: RuleVerdict
    src: FieldMatch = field(default_factory=lambda: FieldMatch.any(32))
    dst: FieldMatch = field(default_factory=lambda: FieldMatch.any(32))
    proto: FieldMatch = field(default_factory=lambda: FieldMatch.any(8))
    sport: FieldMatch = field(default_factory=lambda: FieldMatch.any(16))
    dport: FieldMatch = field(default_factory=lambda: FieldMatch.any(16))
    rewrites: tuple[tuple[str, int], ...] = ()
    line: int = 0

    def field_matches(self) -> dict[str, FieldMatch]:
        return {name: getattr(self, name) for name, _ in FIELDS}

    def matches(self, five: FiveTuple) -> bool:
        return all(
            pattern.matches(getattr(five, name))
            for name, pattern in self.field_matches().items()
        )

    def to_match(self) -> TriStateString:
        patterns = self.field_matches()
        care = LAYOUT.pack({name: p.care for name, p in patterns.items()})
        bits = LAYOUT.pack({name: p.value for name, p in patterns.items()})
        return TriStateString(care, bits, LAYOUT.bits)

    def to_action(self) -> TriStateString:
        if self.verdict is RuleVerdict.DROP:
            return TriStateString((1 << LAYOUT.bits) - 1, 0, LAYOUT.bits)
        if not self.rewrites:
            return TriStateString.stars(LAYOUT.bits)
        offsets = LAYOUT.offsets()
        care = bits = 0
        for name, value in self.rewrites:
            shift, width = offsets[name]
            care |= ((1 << width) - 1) << shift
            bits |= value << shift
        return TriStateString(care, bits, LAYOUT.bits)

    def apply(self, five: FiveTuple) -> FiveTuple | None:
        """Output of this rule for a matching tuple; None when dropped."""
        if self.verdict is RuleVerdict.DROP:
            return None
        values = {name: getattr(five, name) for name, _ in FIELDS}
        values.update(self.rewrites)
        return FiveTuple(**values)

    @property
    def fixed_bits(self) -> int:
        return sum(p.fixed_bits for p in self.field_matches().values())

    def __str__(self) -> str:
        parts = [self.verdict.value]
        for name, pattern in self.field_matches().items():
            if pattern.care:
                kind = "ip" if name in ("src", "dst") else "int"
                parts.append(f"{name}={pattern.render(kind)}")
        for name, value in self.rewrites:
            shown = ipaddress.IPv4Address(value) if name in ("src", "dst") else value
            parts.append(f"set-{name}={shown}")
        return " ".join(parts)


def _parse_int(text: str, width: int, line_no: int, name: str) -> int:
    try:
        value = int(text, 10)
    except ValueError as exc:
        raise RuleSyntaxError(line_no, f"{name}: {text!r} is not a number") from exc
    if not 0 <= value < (1 << width):
        raise RuleSyntaxError(line_no, f"{name}={value} does not fit in {width} bits")
    return value


def _parse_address(text: str, line_no: int, name: str) -> int:
    try:
        return int(ipaddress.IPv4Address(text))
    except ValueError as exc:
        raise RuleSyntaxError(line_no, f"{name}: {exc}") from exc


def _aligned_block(lo: int, hi: int, width: int, line_no: int, name: str,
                   text: str) -> FieldMatch:
    size = hi - lo + 1
    if size <= 0 or size & (size - 1) or lo % size:
        raise InexpressibleRangeError(line_no, name, text)
    care = ((1 << width) - 1) & ~(size - 1)
    return FieldMatch(lo, care, width)


def _parse_ip_pattern(text: str, line_no: int, name: str) -> FieldMatch:
    if text == "*":
        return FieldMatch.any(32)
    if "-" in text:
        lo_text, hi_text = text.split("-", 1)
        lo = _parse_address(lo_text, line_no, name)
        hi = _parse_address(hi_text, line_no, name)
        return _aligned_block(lo, hi, 32, line_no, name, text)
    prefix = 32
    if "/" in text:
        text, _, length = text.partition("/")
        prefix = _parse_int(length, 6, line_no, name)
        if prefix not in PREFIX_LENGTHS:
            raise InexpressibleRangeError(line_no, name, f"{text}/{length}")
    octets = text.split(".")
    if len(octets) != 4:
        raise RuleSyntaxError(line_no, f"{name}: {text!r} is not a dotted quad")
    care = value = 0
    for octet in octets:
        care <<= 8
        value <<= 8
        if octet == "*":
            continue
        care |= 0xFF
        value |= _parse_int(octet, 8, line_no, name)
    prefix_mask = ((1 << prefix) - 1) << (32 - prefix)
    care &= prefix_mask
    return FieldMatch(value & care, care, 32)


def _parse_int_pattern(text: str, width: int, line_no: int, name: str) -> FieldMatch:
    if text == "*":
        return FieldMatch.any(width)
    if name == "proto" and text.lower() in PROTOCOL_NAMES:
        return FieldMatch.exact(PROTOCOL_NAMES[text.lower()], width)
    if "-" in text:
        lo_text, hi_text = text.split("-", 1)
        lo = _parse_int(lo_text, width, line_no, name)
        hi = _parse_int(hi_text, width, line_no, name)
        return _aligned_block(lo, hi, width, line_no, name, text)
    return FieldMatch.exact(_parse_int(text, width, line_no, name), width)


def parse_rule(line: str, line_no: int = 0) -> FirewallRule:
    tokens = line.split()
    if not tokens:
        raise RuleSyntaxError(line_no, "empty rule")
    try:
        verdict = RuleVerdict(tokens[0].lower())
    except ValueError as exc:
        raise RuleSyntaxError(
            line_no, f"expected allow or drop, got {tokens[0]!r}"
        ) from exc
    widths = dict(FIELDS)
    patterns: dict[str, FieldMatch] = {}
    rewrites: dict[str, int] = {}
    for token in tokens[1:]:
        key, sep, text = token.partition("=")
        if not sep or not text:
            raise RuleSyntaxError(line_no, f"expected key=value, got {token!r}")
        if key.startswith("set-"):
            target = key[4:]
            if target not in REWRITABLE:
                raise RuleSyntaxError(line_no, f"cannot rewrite {target!r}")
            if target in rewrites:
                raise RuleSyntaxError(line_no, f"{key} given twice")
            if target in ("src", "dst"):
                rewrites[target] = _parse_address(text, line_no, key)
            else:
                rewrites[target] = _parse_int(text, widths[target], line_no, key)
            continue
        if key not in widths:
            raise RuleSyntaxError(line_no, f"unknown field {key!r}")
        if key in patterns:
            raise RuleSyntaxError(line_no, f"{key} given twice")
        if key in ("src", "dst"):
            patterns[key] = _parse_ip_pattern(text, line_no, key)
        else:
            patterns[key] = _parse_int_pattern(text, widths[key], line_no, key)
    if rewrites and verdict is RuleVerdict.DROP:
        raise RuleSyntaxError(line_no, "a drop rule cannot rewrite fields")
    order = {name: k for k, name in enumerate(REWRITABLE)}
    return FirewallRule(
        verdict=verdict,
        rewrites=tuple(sorted(rewrites.items(), key=lambda item: order[item[0]])),
        line=line_no,
        **patterns,
    )


def parse_rules(text: str) -> list[FirewallRule]:
    """Parse a ruleset.

    Raises:
        RuleSyntaxError: On a malformed line.
        InexpressibleRangeError: On a range that wildcard bits cannot express.
    """
    rules = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            rules.append(parse_rule(line, line_no))
    return rules


def load_rules(path: str | Path) -> list[FirewallRule]:
    return parse_rules(Path(path).read_text())


def format_rules(rules: Iterable[FirewallRule]) -> str:
    return "".join(f"{rule}\n" for rule in rules)


def compile_rules(rules: Sequence[FirewallRule]) -> PolicyTree:
    """Compile ``rules`` into a first-match chain with an implicit final allow.

    Raises:
        InvalidTreeError: If the compiled tree fails validation.
    """
    if not rules:
        return identity_tree(LAYOUT.bits)
    psi = build_chain([(rule.to_match(), rule.to_action()) for rule in rules])
    diagnostics = validate_tree(psi)
    if diagnostics:
        raise InvalidTreeError(diagnostics)
    logger.debug("Compiled %d rule(s) into %d node(s)", len(rules), len(psi))
    return psi


@dataclass(frozen=True)
class TraceRecord:
    five: FiveTuple
    payload_length: int

    @property
    def packet(self) -> Packet:
        if not self.payload_length:
            return Packet(encode_header(self.five), EMPTY)
        return Packet(encode_header(self.five), BitString(0, 8 * self.payload_length))


@dataclass(frozen=True)
class TraceSpec:
    """How to generate a synthetic trace.

    Attributes:
        count: Number of packets.
        mean_payload: Mean payload length in bytes.
        payload_spread: Payloads are uniform in ``mean +/- spread``.
        seed: Seed of the generator.
    """

    count: int = DEFAULT_TRACE_COUNT
    mean_payload: int = DEFAULT_MEAN_PAYLOAD
    payload_spread: int = DEFAULT_PAYLOAD_SPREAD
    seed: int = 0

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be non-negative")
        if not 0 <= self.payload_spread <= self.mean_payload:
            raise ValueError("payload spread must be between 0 and the mean")

    @classmethod
    def parse(cls, text: str) -> TraceSpec:
        """Parse ``count=N,mean=B,spread=B,seed=S`` (any subset, any order)."""
        keys = {"count": "count", "mean": "mean_payload",
                "spread": "payload_spread", "seed": "seed"}
        values = {}
        for item in filter(None, text.split(",")):
            key, sep, raw = item.partition("=")
            if not sep or key.strip() not in keys:
                raise TraceFormatError(f"bad trace spec item {item!r}")
            try:
                values[keys[key.strip()]] = int(raw)
            except ValueError as exc:
                raise TraceFormatError(f"bad trace spec value {item!r}") from exc
        try:
            return cls(**values)
        except ValueError as exc:
            raise TraceFormatError(str(exc)) from exc


@dataclass
class Trace:
    records: list[TraceRecord]
    spec: TraceSpec | None = None

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def packets(self) -> list[Packet]:
        return [record.packet for record in self.records]

    @property
    def mean_payload(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([r.payload_length for r in self.records]))

    def to_bytes(self) -> bytes:
        out = bytearray(TRACE_PREAMBLE.pack(TRACE_MAGIC, TRACE_VERSION, len(self)))
        for record in self.records:
            five = record.five
            out += TRACE_RECORD.pack(five.src, five.dst, five.proto, five.sport,
                                     five.dport, record.payload_length)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> Trace:
        """Parse an SBTR trace.

        Raises:
            TraceFormatError: On bad magic, version or length.
        """
        if len(data) < TRACE_PREAMBLE.size:
            raise TraceFormatError("trace is shorter than its preamble")
        magic, version, count = TRACE_PREAMBLE.unpack_from(data)
        if magic != TRACE_MAGIC:
            raise TraceFormatError(f"bad trace magic {magic!r}")
        if version != TRACE_VERSION:
            raise TraceFormatError(f"unsupported trace version {version}")
        expected = TRACE_PREAMBLE.size + count * TRACE_RECORD.size
        if len(data) != expected:
            raise TraceFormatError(
                f"trace of {count} record(s) should be {expected} bytes, "
                f"got {len(data)}"
            )
        records = []
        for src, dst, proto, sport, dport, length in TRACE_RECORD.iter_unpack(
            data[TRACE_PREAMBLE.size:]
        ):
            five = FiveTuple(src, dst, proto, sport, dport)
            if encode_header(five).value == 0:
                raise TraceFormatError("trace holds an all-zero header")
            records.append(TraceRecord(five, length))
        return cls(records)

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path: str | Path) -> Trace:
        return cls.from_bytes(Path(path).read_bytes())


def _payload_lengths(spec: TraceSpec, gen: np.random.Generator) -> np.ndarray:
    return gen.integers(spec.mean_payload - spec.payload_spread,
                        spec.mean_payload + spec.payload_spread + 1, size=spec.count)


def _fill(pattern: FieldMatch, gen: np.random.Generator) -> int:
    """A uniform value matching ``pattern``."""
    free = ((1 << pattern.width) - 1) & ~pattern.care
    return pattern.value | (int(gen.integers(0, 1 << pattern.width)) & free)


def _nonzero(five: FiveTuple) -> FiveTuple:
    if encode_header(five).value == 0:
        return FiveTuple(five.src, five.dst, five.proto, five.sport, 1)
    return five


def generate_trace(spec: TraceSpec, rng: RandomSource | None = None) -> Trace:
    """Uniform five-tuples with uniform payload lengths around the mean.

    Args:
        spec: Size and seed.
        rng: Source to draw from; defaults to one seeded with ``spec.seed``.
    """
    gen = (rng or SeededRandom(spec.seed)).generator
    src = gen.integers(0, 1 << 32, size=spec.count, dtype=np.uint64)
    dst = gen.integers(0, 1 << 32, size=spec.count, dtype=np.uint64)
    proto = gen.choice(list(PROTOCOL_NAMES.values()), size=spec.count)
    sport = gen.integers(1024, 1 << 16, size=spec.count)
    dport = gen.integers(0, 1 << 16, size=spec.count)
    lengths = _payload_lengths(spec, gen)
    records = [
        TraceRecord(
            _nonzero(FiveTuple(int(src[k]), int(dst[k]), int(proto[k]),
                               int(sport[k]), int(dport[k]))),
            int(lengths[k]),
        )
        for k in range(spec.count)
    ]
    logger.debug("Generated %d-packet trace (seed %d)", spec.count, spec.seed)
    return Trace(records, spec)


CONTROLLED_ALLOW = "allow dst=10.1.*.*"
CONTROLLED_SRC = FieldMatch(int(ipaddress.IPv4Address("172.16.0.0")), 0xFFF00000, 32)
CONTROLLED_DST = FieldMatch(int(ipaddress.IPv4Address("10.1.0.0")), 0xFFFF0000, 32)


def controlled_workload(
    r: int, spec: TraceSpec, rng: RandomSource | None = None
) -> tuple[list[FirewallRule], Trace]:
    """A ruleset and trace where every packet misses ``r - 1`` rules, then allows.

    The drop rules cover ``192.168.k.*`` sources; trace sources lie in
    ``172.16.0.0/12`` and destinations in ``10.1.0.0/16``.

    Raises:
        ValueError: If ``r`` is not in ``1..257``.
    """
    if not 1 <= r <= 257:
        raise ValueError(f"r must be in 1..257, got {r}")
    lines = [f"drop src=192.168.{k}.*" for k in range(r - 1)] + [CONTROLLED_ALLOW]
    rules = parse_rules("\n".join(lines))
    gen = (rng or SeededRandom(spec.seed)).generator
    lengths = _payload_lengths(spec, gen)
    records = []
    for k in range(spec.count):
        five = FiveTuple(
            _fill(CONTROLLED_SRC, gen),
            _fill(CONTROLLED_DST, gen),
            int(gen.choice([6, 17])),
            int(gen.integers(1024, 1 << 16)),
            int(gen.integers(1, 1 << 16)),
        )
        records.append(TraceRecord(five, int(lengths[k])))
    return rules, Trace(records, spec)


_FIRST_OCTETS = (10, 172, 192)
_PORTS = (22, 53, 80, 443)


def _random_ip(gen: np.random.Generator, min_prefix: int) -> FieldMatch:
    prefix = int(gen.choice([p for p in PREFIX_LENGTHS if p >= min_prefix]))
    value = int(gen.choice(_FIRST_OCTETS)) << 24
    for shift in (16, 8, 0):
        value |= int(gen.integers(0, 4)) << shift
    care = ((1 << prefix) - 1) << (32 - prefix)
    return FieldMatch(value & care, care, 32)


def random_ruleset(
    k: int, rng: RandomSource, rewrite_share: float = 0.0
) -> list[FirewallRule]:
    """``k`` random rules drawn from a small address pool, so rules overlap.

    Every rule fixes at least 16 destination bits. ALLOW rules carry a
    destination rewrite with probability ``rewrite_share``.
    """
    gen = rng.generator
    rules = []
    for _ in range(k):
        verdict = RuleVerdict.DROP if gen.random() < 0.5 else RuleVerdict.ALLOW
        proto = int(gen.choice([0, 6, 17]))
        dport = int(gen.choice([0, *_PORTS]))
        rewrites: tuple[tuple[str, int], ...] = ()
        if verdict is RuleVerdict.ALLOW and gen.random() < rewrite_share:
            first = int(gen.choice(_FIRST_OCTETS))
            target = (first << 24) | int(gen.integers(1, 1 << 24))
            rewrites = (("dst", target),)
        rules.append(
            FirewallRule(
                verdict=verdict,
                src=_random_ip(gen, 0),
                dst=_random_ip(gen, 16),
                proto=FieldMatch.exact(proto, 8) if proto else FieldMatch.any(8),
                dport=FieldMatch.exact(dport, 16) if dport else FieldMatch.any(16),
                rewrites=rewrites,
            )
        )
    return rules


def trace_for_rules(
    rules: Sequence[FirewallRule], spec: TraceSpec, rng: RandomSource
) -> Trace:
    """A trace whose packets are aimed at uniformly chosen rules.

    Each packet is drawn to match a rule picked uniformly, or (with
    probability ``1 / (len(rules) + 1)``) is left uniform. Earlier rules may
    still claim it first.
    """
    gen = rng.generator
    lengths = _payload_lengths(spec, gen)
    records = []
    for k in range(spec.count):
        pick = int(gen.integers(0, len(rules) + 1))
        if pick < len(rules):
            patterns = rules[pick].field_matches()
        else:
            patterns = {name: FieldMatch.any(width) for name, width in FIELDS}
        values = {name: _fill(p, gen) for name, p in patterns.items()}
        five = _nonzero(FiveTuple(**values))
        records.append(TraceRecord(five, int(lengths[k])))
    return Trace(records, spec)


@dataclass(frozen=True)
class FilterResult:
    """Plaintext first-match outcome for one packet.

    Attributes:
        verdict: ALLOW or DROP.
        attempts: Rules tested, including the one that matched.
        rule_index: 0-based index of the matching rule; None for the
            implicit final allow.
        output: The forwarded tuple; None when dropped.
    """

    verdict: RuleVerdict
    attempts: int
    rule_index: int | None
    output: FiveTuple | None

    def to_verdict(self, record: TraceRecord) -> Verdict:
        """The verdict the private pipeline should produce for ``record``."""
        if self.output is None:
            return DROPPED
        header = encode_header(self.output)
        if header.value == 0:
            return DROPPED
        return Verdict(record.packet.with_header(header))


def filter_one(rules: Sequence[FirewallRule], five: FiveTuple) -> FilterResult:
    for index, rule in enumerate(rules):
        if rule.matches(five):
            return FilterResult(rule.verdict, index + 1, index, rule.apply(five))
    return FilterResult(RuleVerdict.ALLOW, len(rules), None, five)


def reference_filter(
    rules: Sequence[FirewallRule], trace: Iterable[TraceRecord]
) -> list[FilterResult]:
    """Plaintext first-match filtering with per-packet attempt counts."""
    return [filter_one(rules, record.five) for record in trace]


def _disjoint(a: FirewallRule, b: FirewallRule) -> bool:
    ma, mb = a.to_match(), b.to_match()
    return bool(ma.care & mb.care & (ma.bits ^ mb.bits))


def _swappable(a: FirewallRule, b: FirewallRule) -> bool:
    return _disjoint(a, b) or (a.verdict == b.verdict and a.rewrites == b.rewrites)


def reorder_rules(
    rules: Sequence[FirewallRule], trace: Iterable[TraceRecord]
) -> list[FirewallRule]:
    """Move frequently matched rules earlier without changing any verdict.

    Adjacent rules are swapped only when no header matches both, or when
    they have the same verdict and rewrites.
    """
    hits = [0] * len(rules)
    for result in reference_filter(rules, trace):
        if result.rule_index is not None:
            hits[result.rule_index] += 1
    ordered = list(zip(rules, hits, strict=True))
    swapped = True
    swaps = 0
    while swapped:
        swapped = False
        for k in range(len(ordered) - 1):
            (a, a_hits), (b, b_hits) = ordered[k], ordered[k + 1]
            if b_hits > a_hits and _swappable(a, b):
                ordered[k], ordered[k + 1] = ordered[k + 1], ordered[k]
                swapped = True
                swaps += 1
    logger.info("Rule reordering made %d swap(s)", swaps)
    return [rule for rule, _ in ordered]
