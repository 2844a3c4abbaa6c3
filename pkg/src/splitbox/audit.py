"""Check that a processor's view holds nothing it should not see.

A processor may hold projections, hashed digests, action shares and blinded
headers. It must never hold a match or action in the clear, a blind, or a
plaintext header. :func:`audit_processor_view` walks every value reachable
from a :class:`~splitbox.protocol.ProcessorConfig` plus the datagrams the
processor received and reports each violation it finds.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass

from splitbox.nfmodel import BitString, PolicyTree, TriStateString, embed
from splitbox.protocol import ProcessorConfig, SetupBundle
from splitbox.wire import DecodeError, MessageKind, decode, unpack_bits

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AuditFinding:
    """One leak.

    Attributes:
        path: Where the value was found, e.g. ``config.shares[2].alpha``.
        kind: ``tri-state``, ``match``, ``action``, ``blind``, ``header`` or
            ``unexpected-message``.
        detail: Human-readable description.
    """

    path: str
    kind: str
    detail: str

    def __str__(self) -> str:
        return f"{self.path}: {self.kind}: {self.detail}"


@dataclass(frozen=True)
class ProcessorSecrets:
    """Values no processor may hold, keyed by ``(value, length)``."""

    forbidden: dict[tuple[int, int], str]
    texts: frozenset[str]

    @classmethod
    def from_setup(
        cls, bundle: SetupBundle, psi: PolicyTree, headers: Iterable[BitString]
    ) -> ProcessorSecrets:
        """Collect the secrets of one run.

        Args:
            bundle: The setup output, for the blinds.
            psi: The plaintext tree, for matches and actions.
            headers: Plaintext headers of every real packet.
        """
        n = psi.n
        forbidden: dict[tuple[int, int], str] = {}
        texts: set[str] = set()
        public = {mu.care for mu in psi.matches}
        for mu in psi.matches:
            if mu.bits and mu.bits not in public:
                forbidden[(embed(mu).value, n)] = "match"
            texts.add(str(mu))
        for alpha in psi.actions:
            if alpha.is_identity:
                continue
            if alpha.bits and alpha.bits not in public:
                forbidden[(embed(alpha).value, n)] = "action"
            texts.add(str(alpha))
        for blind in bundle.entry.blinds.blinds:
            if blind.value:
                forbidden[(blind.value, n)] = "blind"
        for header in headers:
            forbidden[(header.value, len(header))] = "header"
        return cls(forbidden, frozenset(texts))

    def classify(self, value: BitString) -> str | None:
        return self.forbidden.get((value.value, len(value)))


def _walk(value: object, path: str) -> Iterator[tuple[str, object]]:
    stack = [(path, value)]
    while stack:
        path, value = stack.pop()
        yield path, value
        if isinstance(value, BitString | TriStateString):
            continue
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            for f in dataclasses.fields(value):
                stack.append((f"{path}.{f.name}", getattr(value, f.name)))
        elif isinstance(value, list | tuple):
            for k, item in enumerate(value):
                stack.append((f"{path}[{k}]", item))
        elif isinstance(value, dict):
            for key, item in value.items():
                stack.append((f"{path}[{key!r}]", item))


def _check(path: str, value: object, secrets: ProcessorSecrets) -> AuditFinding | None:
    if isinstance(value, TriStateString):
        return AuditFinding(path, "tri-state", f"holds tri-state string {value}")
    if isinstance(value, BitString):
        kind = secrets.classify(value)
        if kind is not None:
            return AuditFinding(path, kind, f"holds a {kind} in the clear")
    if isinstance(value, str) and value in secrets.texts:
        return AuditFinding(path, "tri-state", f"holds text of {value}")
    return None


def audit_processor_view(
    config: ProcessorConfig,
    inbound: Sequence[bytes],
    secrets: ProcessorSecrets,
) -> list[AuditFinding]:
    """Audit one processor's configuration and received datagrams.

    Args:
        config: The processor's configuration.
        inbound: Every datagram delivered to the processor.
        secrets: What it must not see.

    Returns:
        Every finding; empty when the view is clean.
    """
    findings = []
    for path, value in _walk(config, "config"):
        finding = _check(path, value, secrets)
        if finding is not None:
            findings.append(finding)

    n = config.params.n
    for k, data in enumerate(inbound):
        path = f"inbound[{k}]"
        try:
            message = decode(data, n)
        except DecodeError as exc:
            findings.append(AuditFinding(path, "unexpected-message", str(exc)))
            continue
        if message.kind is not MessageKind.TO_PROCESSOR:
            findings.append(
                AuditFinding(path, "unexpected-message", f"kind {message.kind.name}")
            )
            continue
        finding = _check(f"{path}.body", unpack_bits(message.body, n), secrets)
        if finding is not None:
            findings.append(finding)

    if findings:
        logger.warning("Processor %d audit: %d finding(s)", config.processor_id,
                       len(findings))
    return findings
