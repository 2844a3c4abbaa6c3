"""SPBX configuration bundles, one file per role.

Layout, big-endian::

    magic      "SPBX"
    version    u16
    params     n, l, t, q, delta_min, rho numerator, rho denominator (7 x u32)
    sections   tag u8, length u32, body; repeated to the end of the file

Section tags:

====  ============  =========================================================
tag   name          body
====  ============  =========================================================
0x01  ROLE          u8: 1 entry, 2 processor, 3 client
0x02  SEED          u64 (present only when setup was seeded)
0x10  BLINDS        l blinds of n bits, concatenated, zero-padded to a byte
0x20  PROCESSOR_ID  u8
0x21  TREE          u32 count, then per node: action id, match id, left,
                    right (u32 each; 0xFFFFFFFF where absent)
0x22  PROJECTIONS   u32 count, then ceil(n/8) bytes per match
0x23  MATCH_TABLE   u32 rows, u32 columns, then rows x columns digests
0x24  SHARES        u32 count, then per action: u32 action id, alpha share,
                    beta share (ceil(n/8) bytes each)
0x30  TREE_TEXT     UTF-8 canonical policy-tree text
====  ============  =========================================================

The entry bundle holds ROLE, SEED, BLINDS; a processor bundle ROLE,
PROCESSOR_ID, TREE, PROJECTIONS, MATCH_TABLE, SHARES; the client bundle
ROLE, SEED, BLINDS, TREE_TEXT.
"""

from __future__ import annotations

import logging
import struct
from enum import IntEnum
from fractions import Fraction
from pathlib import Path

from splitbox.nfmodel import BitString, bits_to_bytes, bytes_to_bits
from splitbox.protocol import (
    ActionShares,
    BlindTable,
    ClientConfig,
    EntryConfig,
    HashedMatchTable,
    PrivateNode,
    PrivatePolicyTree,
    ProcessorConfig,
    ProtocolParams,
    SetupBundle,
)

logger = logging.getLogger(__name__)

MAGIC = b"SPBX"
VERSION = 1
PREAMBLE = struct.Struct(">4sH7I")
SECTION = struct.Struct(">BI")
U8 = struct.Struct(">B")
U32 = struct.Struct(">I")
U64 = struct.Struct(">Q")
NODE = struct.Struct(">4I")
ABSENT = 0xFFFFFFFF

RoleConfig = EntryConfig | ProcessorConfig | ClientConfig


class Role(IntEnum):
    ENTRY = 1
    PROCESSOR = 2
    CLIENT = 3


class Tag(IntEnum):
    ROLE = 0x01
    SEED = 0x02
    BLINDS = 0x10
    PROCESSOR_ID = 0x20
    TREE = 0x21
    PROJECTIONS = 0x22
    MATCH_TABLE = 0x23
    SHARES = 0x24
    TREE_TEXT = 0x30


class BundleError(ValueError):
    """Raised when bundle bytes are malformed or inconsistent."""


def _section(tag: Tag, body: bytes) -> bytes:
    return SECTION.pack(tag, len(body)) + body


def _pack_params(params: ProtocolParams) -> bytes:
    return PREAMBLE.pack(
        MAGIC,
        VERSION,
        params.n,
        params.table_length,
        params.t,
        params.digest_bits,
        params.delta_min,
        params.rho.numerator,
        params.rho.denominator,
    )


def _pack_blinds(params: ProtocolParams, blinds: BlindTable) -> bytes:
    value = 0
    for blind in blinds.blinds:
        value = (value << params.n) | blind.value
    return bits_to_bytes(value, params.n * len(blinds))


def _pack_optional(value: int | None) -> int:
    return ABSENT if value is None else value


def _pack_tree(tree: PrivatePolicyTree) -> bytes:
    out = bytearray(U32.pack(len(tree.nodes)))
    for node in tree.nodes:
        out += NODE.pack(
            node.action_id,
            _pack_optional(node.match_id),
            _pack_optional(node.left),
            _pack_optional(node.right),
        )
    return bytes(out)


def encode_bundle(config: RoleConfig) -> bytes:
    """Serialise one role's configuration.

    Raises:
        BundleError: If ``config`` is not a role configuration.
    """
    if not isinstance(config, EntryConfig | ProcessorConfig | ClientConfig):
        raise BundleError(f"cannot encode {type(config).__name__}")
    params = config.params
    out = bytearray(_pack_params(params))
    if isinstance(config, EntryConfig):
        out += _section(Tag.ROLE, U8.pack(Role.ENTRY))
        if config.seed is not None:
            out += _section(Tag.SEED, U64.pack(config.seed))
        out += _section(Tag.BLINDS, _pack_blinds(params, config.blinds))
    elif isinstance(config, ProcessorConfig):
        out += _section(Tag.ROLE, U8.pack(Role.PROCESSOR))
        out += _section(Tag.PROCESSOR_ID, U8.pack(config.processor_id))
        out += _section(Tag.TREE, _pack_tree(config.tree))
        projections = b"".join(p.to_bytes() for p in config.projections)
        out += _section(
            Tag.PROJECTIONS, U32.pack(len(config.projections)) + projections
        )
        table = config.match_table
        out += _section(
            Tag.MATCH_TABLE,
            U32.pack(table.rows) + U32.pack(table.match_count) + table.digests,
        )
        shares = bytearray(U32.pack(len(config.shares)))
        for share in config.shares:
            shares += U32.pack(share.action_id)
            shares += share.alpha.to_bytes() + share.beta.to_bytes()
        out += _section(Tag.SHARES, bytes(shares))
    else:
        out += _section(Tag.ROLE, U8.pack(Role.CLIENT))
        if config.seed is not None:
            out += _section(Tag.SEED, U64.pack(config.seed))
        out += _section(Tag.BLINDS, _pack_blinds(params, config.blinds))
        out += _section(Tag.TREE_TEXT, config.tree_text.encode("utf-8"))
    return bytes(out)


class _Reader:
    """Bounds-checked cursor over a byte string."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.offset = 0
        self.what = what

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise BundleError(
                f"{self.what}: need {size} bytes at offset {self.offset}, "
                f"only {len(self.data) - self.offset} left"
            )
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: struct.Struct) -> tuple:
        return fmt.unpack(self.take(fmt.size))

    def done(self) -> None:
        if self.offset != len(self.data):
            raise BundleError(
                f"{self.what}: {len(self.data) - self.offset} trailing byte(s)"
            )


def _unpack_optional(value: int) -> int | None:
    return None if value == ABSENT else value


def _read_bits(reader: _Reader, n: int) -> BitString:
    return BitString(bytes_to_bits(reader.take((n + 7) // 8), n), n)


def _parse_params(reader: _Reader) -> ProtocolParams:
    magic, version, n, l_, t, q, delta_min, rho_num, rho_den = reader.unpack(PREAMBLE)
    if magic != MAGIC:
        raise BundleError(f"bad magic {magic!r}")
    if version != VERSION:
        raise BundleError(f"unsupported bundle version {version}")
    if rho_den == 0:
        raise BundleError("rho denominator is zero")
    try:
        return ProtocolParams(
            n=n,
            table_length=l_,
            t=t,
            digest_bits=q,
            delta_min=delta_min,
            rho=Fraction(rho_num, rho_den),
        )
    except ValueError as exc:
        raise BundleError(f"invalid parameters: {exc}") from exc


def _parse_blinds(body: bytes, params: ProtocolParams) -> BlindTable:
    n, count = params.n, params.table_length
    total = n * count
    if len(body) != (total + 7) // 8:
        raise BundleError(f"blind table is {len(body)} bytes, expected "
                          f"{(total + 7) // 8}")
    value = bytes_to_bits(body, total)
    mask = (1 << n) - 1
    return BlindTable(
        tuple(
            BitString((value >> (n * (count - 1 - i))) & mask, n)
            for i in range(count)
        )
    )


def _parse_tree(body: bytes, projections: tuple[BitString, ...]) -> PrivatePolicyTree:
    reader = _Reader(body, "tree")
    (count,) = reader.unpack(U32)
    nodes = []
    for _ in range(count):
        action_id, match_id, left, right = reader.unpack(NODE)
        match_id = _unpack_optional(match_id)
        proj = None
        if match_id is not None:
            if match_id >= len(projections):
                raise BundleError(f"tree refers to unknown match {match_id}")
            proj = projections[match_id]
        nodes.append(
            PrivateNode(action_id, match_id, proj, _unpack_optional(left),
                        _unpack_optional(right))
        )
    reader.done()
    if not nodes:
        raise BundleError("tree has no nodes")
    for k, node in enumerate(nodes):
        children = (node.left, node.right)
        if node.is_leaf:
            continue
        if node.match_id is None or None in children:
            raise BundleError(f"tree node {k} must have a match and two children")
        for child in children:
            if child >= count:
                raise BundleError(f"tree node {k} points at missing node {child}")
    return PrivatePolicyTree(tuple(nodes))


def _parse_projections(body: bytes, n: int) -> tuple[BitString, ...]:
    reader = _Reader(body, "projections")
    (count,) = reader.unpack(U32)
    projections = tuple(_read_bits(reader, n) for _ in range(count))
    reader.done()
    return projections


def _parse_match_table(body: bytes, params: ProtocolParams) -> HashedMatchTable:
    reader = _Reader(body, "match table")
    (rows,) = reader.unpack(U32)
    (columns,) = reader.unpack(U32)
    digests = reader.take(rows * columns * params.digest_bytes)
    reader.done()
    if rows != params.table_length:
        raise BundleError(f"match table has {rows} rows, l={params.table_length}")
    return HashedMatchTable(digests, rows, columns, params.digest_bits)


def _parse_shares(
    body: bytes, n: int, processor_id: int
) -> tuple[ActionShares, ...]:
    reader = _Reader(body, "shares")
    (count,) = reader.unpack(U32)
    shares = []
    for expected_id in range(count):
        (action_id,) = reader.unpack(U32)
        if action_id != expected_id:
            raise BundleError(f"share {expected_id} is keyed {action_id}")
        alpha = _read_bits(reader, n)
        beta = _read_bits(reader, n)
        shares.append(ActionShares(processor_id, action_id, alpha, beta))
    reader.done()
    return tuple(shares)


def decode_bundle(data: bytes) -> RoleConfig:
    """Parse a bundle written by :func:`encode_bundle`.

    Raises:
        BundleError: On any malformed or missing section.
    """
    reader = _Reader(data, "bundle")
    params = _parse_params(reader)
    sections: dict[Tag, bytes] = {}
    while reader.offset < len(data):
        tag, length = reader.unpack(SECTION)
        body = reader.take(length)
        try:
            tag = Tag(tag)
        except ValueError as exc:
            raise BundleError(f"unknown section tag 0x{tag:02x}") from exc
        if tag in sections:
            raise BundleError(f"duplicate {tag.name} section")
        sections[tag] = body

    def need(tag: Tag) -> bytes:
        if tag not in sections:
            raise BundleError(f"missing {tag.name} section")
        return sections[tag]

    role_body = need(Tag.ROLE)
    if len(role_body) != U8.size:
        raise BundleError("ROLE section must be one byte")
    try:
        role = Role(role_body[0])
    except ValueError as exc:
        raise BundleError(f"unknown role {role_body[0]}") from exc
    seed = None
    if Tag.SEED in sections:
        if len(sections[Tag.SEED]) != U64.size:
            raise BundleError("SEED section must be eight bytes")
        (seed,) = U64.unpack(sections[Tag.SEED])

    if role is Role.ENTRY:
        return EntryConfig(params, _parse_blinds(need(Tag.BLINDS), params), seed)
    if role is Role.CLIENT:
        try:
            text = need(Tag.TREE_TEXT).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise BundleError(f"tree text is not UTF-8: {exc}") from exc
        return ClientConfig(params, _parse_blinds(need(Tag.BLINDS), params), text,
                            seed)
    id_body = need(Tag.PROCESSOR_ID)
    if len(id_body) != U8.size:
        raise BundleError("PROCESSOR_ID section must be one byte")
    processor_id = id_body[0]
    projections = _parse_projections(need(Tag.PROJECTIONS), params.n)
    try:
        tree = _parse_tree(need(Tag.TREE), projections)
        shares = _parse_shares(need(Tag.SHARES), params.n, processor_id)
        for k, node in enumerate(tree.nodes):
            if node.action_id >= len(shares):
                raise BundleError(f"tree node {k} refers to unknown action "
                                  f"{node.action_id}")
        return ProcessorConfig(
            params=params,
            processor_id=processor_id,
            tree=tree,
            match_table=_parse_match_table(need(Tag.MATCH_TABLE), params),
            projections=projections,
            shares=shares,
        )
    except ValueError as exc:
        if isinstance(exc, BundleError):
            raise
        raise BundleError(str(exc)) from exc


def bundle_filenames(bundle: SetupBundle) -> dict[str, RoleConfig]:
    """File name for each role's bundle."""
    files: dict[str, RoleConfig] = {"entry.spbx": bundle.entry}
    for cfg in bundle.processors:
        files[f"processor-{cfg.processor_id}.spbx"] = cfg
    files["client.spbx"] = bundle.client
    return files


def write_bundles(bundle: SetupBundle, out_dir: str | Path) -> list[Path]:
    """Write every role's bundle under ``out_dir``.

    Returns:
        The paths written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, cfg in bundle_filenames(bundle).items():
        path = out_dir / name
        path.write_bytes(encode_bundle(cfg))
        paths.append(path)
    logger.info("Wrote %d bundle(s) to %s", len(paths), out_dir)
    return paths


def read_bundle(path: str | Path) -> RoleConfig:
    return decode_bundle(Path(path).read_bytes())


def load_setup(directory: str | Path) -> SetupBundle:
    """Read back a full set of bundles written by :func:`write_bundles`.

    Raises:
        BundleError: If a role is missing or of the wrong kind.
    """
    directory = Path(directory)
    entry = read_bundle(directory / "entry.spbx")
    client = read_bundle(directory / "client.spbx")
    if not isinstance(entry, EntryConfig) or not isinstance(client, ClientConfig):
        raise BundleError(f"{directory} does not hold entry and client bundles")
    processors = []
    for j in range(1, entry.params.t + 1):
        cfg = read_bundle(directory / f"processor-{j}.spbx")
        if not isinstance(cfg, ProcessorConfig):
            raise BundleError(f"processor-{j}.spbx is not a processor bundle")
        processors.append(cfg)
    return SetupBundle(entry, tuple(processors), client)
