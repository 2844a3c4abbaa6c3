"""Shared fixtures and configuration for tests."""

import pytest

from splitbox.firewall import TraceSpec, generate_trace, parse_rules
from splitbox.nfmodel import TriStateString, build_chain
from splitbox.protocol import ProtocolParams, global_setup
from splitbox.randomness import SeededRandom

RULES_TEXT = """\
# small office firewall
drop  src=10.0.0.0/8 dst=192.168.1.*
allow dst=192.168.1.0/24 proto=tcp dport=443
allow dst=192.168.2.0/24 proto=udp dport=53 set-dst=192.168.2.53
drop  dst=192.168.0.0/16
"""


def _tri(text: str) -> TriStateString:
    return TriStateString.from_str(text)


@pytest.fixture
def rng():
    return SeededRandom(7)


@pytest.fixture
def small_params():
    """8-bit headers, short tables, no weight floor."""
    return ProtocolParams(n=8, table_length=8, t=2, delta_min=0)


@pytest.fixture
def small_tree():
    """n=8 chain: drop ``1010****``, then set the low nibble of ``01******``."""
    return build_chain(
        [
            (_tri("1010****"), _tri("00000000")),
            (_tri("01******"), _tri("****0110")),
        ]
    )


@pytest.fixture
def small_bundle(small_params, small_tree):
    return global_setup(small_params, small_tree, SeededRandom(11))


@pytest.fixture
def sample_rules():
    return parse_rules(RULES_TEXT)


@pytest.fixture
def rules_file(tmp_path):
    path = tmp_path / "office.rules"
    path.write_text(RULES_TEXT)
    return path


@pytest.fixture
def small_trace():
    return generate_trace(TraceSpec(count=50, mean_payload=32, payload_spread=16,
                                    seed=3))
