"""Unit tests for setup, the processor algorithms and merging."""

import hashlib
import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitbox.analyzer import bit_frequencies, bit_matrix, max_pairwise_correlation
from splitbox.firewall import HEADER_BITS, compile_rules, parse_rule
from splitbox.nfmodel import (
    BitString,
    InvalidTreeError,
    Packet,
    PolicyNode,
    PolicyTree,
    TriStateString,
    build_chain,
    embed,
    projection,
    traverse,
    tri_match,
)
from splitbox.protocol import (
    DROPPED,
    ActionShares,
    BlindTable,
    CounterIndexError,
    CumulativeShares,
    ProtocolParams,
    ReassemblyError,
    Verdict,
    WeakMatchError,
    compute_action,
    compute_match,
    global_setup,
    hide_match,
    make_dummy_packet,
    merge_shares,
    private_traversal,
    setup_lookup_tables,
    split_action,
    split_dummy_flag,
    split_packet,
)
from splitbox.randomness import SeededRandom

pytestmark = pytest.mark.unit


def tri(text):
    return TriStateString.from_str(text)


def bits(text):
    return BitString.from_str(text)


class ConstantBits:
    """A random source that always returns the same bits."""

    seed = None

    def __init__(self, value):
        self.value = value

    def bits(self, k):
        return self.value & ((1 << k) - 1)

    def random(self):
        return 0.0

    def integers(self, low, high):
        return low


def evaluate(bundle, x, index):
    xr, xw, i = split_packet(x, index, bundle.entry.blinds)
    shares = [private_traversal(cfg, xr, i).shares for cfg in bundle.processors]
    return merge_shares(i, xw, shares, bundle.client.blinds, bundle.params.t)


def expected_verdict(psi, x):
    out = traverse(psi, x)
    return DROPPED if out.header.value == 0 else Verdict(out)


class TestProtocolParams:
    def test_defaults(self):
        params = ProtocolParams(n=104)
        assert (params.table_length, params.t, params.digest_bits) == (1024, 2, 160)
        assert params.delta_min == 16
        assert params.rho == 1

    def test_rho_is_exact(self):
        assert ProtocolParams(n=8, rho=0.75).rho == Fraction(3, 4)

    @pytest.mark.parametrize(
        "kwargs",
        [{"t": 1}, {"table_length": 0}, {"digest_bits": 128}, {"rho": 0},
         {"rho": 1.5}, {"delta_min": -1}],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            ProtocolParams(n=8, **kwargs)


class TestSetupLookupTables:
    def test_hand_computed_cell(self):
        params = ProtocolParams(n=2, table_length=1, delta_min=0)
        blinds, table = setup_lookup_tables(params, [tri("1*")], ConstantBits(0b01))
        assert blinds.blinds == (bits("01"),)
        # embed(1*) ^ (01 & 10) = 10, packed MSB-first
        assert table.digest(1, 0) == hashlib.sha1(b"\x80").digest()

    def test_table_length(self, rng):
        params = ProtocolParams(n=8, table_length=64, delta_min=0)
        blinds, table = setup_lookup_tables(params, [tri("1*******")], rng)
        assert len(blinds) == 64
        assert table.rows == 64
        assert table.nbytes == 64 * 20

    def test_deterministic(self):
        params = ProtocolParams(n=8, table_length=16, delta_min=0)
        matches = [tri("10******"), tri("****0101")]
        first = setup_lookup_tables(params, matches, SeededRandom(1))
        second = setup_lookup_tables(params, matches, SeededRandom(1))
        assert first == second

    def test_weak_match_rejected(self, rng):
        params = ProtocolParams(n=8, table_length=4, delta_min=4)
        with pytest.raises(WeakMatchError, match="delta_min=4"):
            setup_lookup_tables(params, [tri("1*******")], rng)

    def test_weak_match_allowed(self, rng, caplog):
        params = ProtocolParams(n=8, table_length=4, delta_min=4)
        setup_lookup_tables(params, [tri("1*******")], rng, allow_weak_matches=True)
        assert "below delta_min" in caplog.text

    def test_empty_matches(self, rng):
        with pytest.raises(ValueError):
            setup_lookup_tables(ProtocolParams(n=8), [], rng)

    def test_counter_index_bounds(self, rng):
        params = ProtocolParams(n=8, table_length=4, delta_min=0)
        blinds, table = setup_lookup_tables(params, [tri("1*******")], rng)
        with pytest.raises(CounterIndexError):
            blinds.blind(0)
        with pytest.raises(CounterIndexError):
            table.digest(5, 0)


class TestHideMatch:
    def test_projection_only(self):
        assert hide_match(tri("10**")) == bits("1100")
        assert hide_match(tri("****")) == bits("0000")

    def test_slash_eight_rule_weight(self):
        rule = parse_rule("drop src=10.0.0.0/8")
        assert hide_match(rule.to_match()).weight == 8
        assert len(hide_match(rule.to_match())) == HEADER_BITS


class TestSplitAction:
    def test_identity_betas_cancel(self, rng):
        shares = split_action(tri("****"), 3, rng)
        beta = 0
        for share in shares:
            beta ^= share.beta.value
        assert beta == 0

    def test_forced_last_share(self):
        shares = split_action(tri("0000"), 2, ConstantBits(0b0110))
        assert shares[0].alpha == bits("0110")
        assert shares[1].alpha == bits("0110")
        assert shares[1].beta == bits("1001")

    def test_processor_ids(self, rng):
        shares = split_action(tri("0***"), 3, rng, action_id=4)
        assert [s.processor_id for s in shares] == [1, 2, 3]
        assert {s.action_id for s in shares} == {4}

    def test_needs_two_shares(self, rng):
        with pytest.raises(ValueError):
            split_action(tri("0***"), 1, rng)

    def test_short_subsets_look_uniform(self, rng):
        n, t, samples = 8, 3, 200_000
        draws = [split_action(tri("1010**01"), t, rng) for _ in range(samples)]
        for subset in itertools.combinations(range(t), t - 1):
            values = []
            for shares in draws:
                value = 0
                for j in subset:
                    value = (value << n) | shares[j].alpha.value
                values.append(value)
            width = n * (t - 1)
            freqs = bit_frequencies(values, width)
            assert np.all(np.abs(freqs - 0.5) <= 0.005), subset
            assert max_pairwise_correlation(bit_matrix(values, width)) < 0.02

    @given(
        st.integers(2, 5),
        st.text(alphabet="01*", min_size=12, max_size=12),
        st.integers(0, 2**32),
    )
    @settings(max_examples=300)
    def test_reconstruction(self, t, text, seed):
        alpha = tri(text)
        shares = split_action(alpha, t, SeededRandom(seed))
        a = b = 0
        for share in shares:
            a ^= share.alpha.value
            b ^= share.beta.value
        assert a == embed(alpha).value
        assert b == projection(alpha).value


class TestGlobalSetup:
    def test_one_config_per_processor(self, small_bundle):
        assert len(small_bundle.processors) == 2
        assert [c.processor_id for c in small_bundle.processors] == [1, 2]

    def test_trees_are_identical(self, small_bundle):
        first, second = small_bundle.processors
        assert first.tree == second.tree

    def test_processor_holds_no_tristate(self, small_bundle):
        for cfg in small_bundle.processors:
            for node in cfg.tree.nodes:
                assert not isinstance(node.projection, TriStateString)
            assert all(isinstance(p, BitString) for p in cfg.projections)

    def test_each_match_hashed_once(self, small_bundle, small_tree):
        table = small_bundle.processors[0].match_table
        assert table.match_count == len(small_tree.matches)

    def test_client_keeps_tree_text(self, small_bundle):
        assert "action=00000000" in small_bundle.client.tree_text

    def test_rejects_invalid_tree(self, small_params, rng):
        psi = PolicyTree((PolicyNode(tri("0*******")),), 8)
        with pytest.raises(InvalidTreeError):
            global_setup(small_params, psi, rng)

    def test_rejects_width_mismatch(self, rng):
        psi = build_chain([(tri("1***"), tri("0000"))])
        with pytest.raises(InvalidTreeError):
            global_setup(ProtocolParams(n=8, delta_min=0), psi, rng)

    def test_seed_recorded(self, small_bundle):
        assert small_bundle.entry.seed == 11
        assert small_bundle.client.seed == 11


class TestSplitPacket:
    def test_zero_blind(self):
        blinds = BlindTable((bits("0000"),))
        xr, xw, index = split_packet(Packet(bits("1011"), bits("01")), 1, blinds)
        assert xr == bits("1011")
        assert xw.payload == bits("01")
        assert index == 1

    def test_involution(self):
        blinds = BlindTable((bits("0110"),))
        xr, _, _ = split_packet(Packet(bits("1011")), 1, blinds)
        assert xr ^ bits("0110") == bits("1011")

    def test_same_blind_leaks_xor(self):
        blinds = BlindTable((bits("0110"),))
        a, _, _ = split_packet(Packet(bits("1011")), 1, blinds)
        b, _, _ = split_packet(Packet(bits("0001")), 1, blinds)
        assert a ^ b == bits("1011") ^ bits("0001")

    def test_index_out_of_range(self):
        with pytest.raises(CounterIndexError):
            split_packet(Packet(bits("1011")), 2, BlindTable((bits("0000"),)))


class TestComputeMatch:
    def test_agrees_with_tri_match(self, rng):
        params = ProtocolParams(n=HEADER_BITS, table_length=32)
        matches = [parse_rule("drop src=10.0.0.0/8 dport=80").to_match()]
        blinds, table = setup_lookup_tables(params, matches, rng)
        mu = matches[0]
        gen = rng.derive(5)
        for k in range(500):
            value = gen.bits(HEADER_BITS)
            if k % 2:
                value = (value & ~mu.care) | mu.bits
            x = Packet(BitString(value, HEADER_BITS))
            index = k % 32 + 1
            xr, _, _ = split_packet(x, index, blinds)
            got = compute_match(xr, index, 0, table, hide_match(mu))
            assert got == tri_match(x.header, mu)

    def test_all_star_match_always_true(self, rng):
        params = ProtocolParams(n=8, table_length=4, delta_min=0)
        blinds, table = setup_lookup_tables(params, [tri("********")], rng)
        for value in (1, 77, 255):
            xr, _, _ = split_packet(Packet(BitString(value, 8)), 3, blinds)
            assert compute_match(xr, 3, 0, table, bits("00000000"))

    def test_exhaustive_small_headers(self):
        params = ProtocolParams(n=8, table_length=4, delta_min=0)
        gen = SeededRandom(21)
        for _ in range(50):
            care = gen.bits(8)
            mu = TriStateString(care, gen.bits(8) & care, 8)
            blinds, table = setup_lookup_tables(params, [mu], gen)
            proj = hide_match(mu)
            for index in range(1, 5):
                for value in range(256):
                    x = Packet(BitString(value, 8))
                    xr, _, _ = split_packet(x, index, blinds)
                    got = compute_match(xr, index, 0, table, proj)
                    assert got == tri_match(x.header, mu), (mu, index, value)


class TestComputeAction:
    def test_twice_cancels(self):
        share = ActionShares(1, 0, bits("0110"), bits("1100"))
        cum = CumulativeShares.zeros(4)
        assert compute_action(compute_action(cum, share), share) == cum

    def test_order_irrelevant(self):
        a = ActionShares(1, 0, bits("0110"), bits("1100"))
        b = ActionShares(1, 1, bits("0011"), bits("0101"))
        cum = CumulativeShares.zeros(4)
        assert compute_action(compute_action(cum, a), b) == compute_action(
            compute_action(cum, b), a
        )


class TestPrivateTraversal:
    def test_non_matching_uses_identity_shares(self, rng):
        psi = build_chain([(tri("1111****"), tri("00000000"))])
        bundle = global_setup(ProtocolParams(n=8, table_length=4, delta_min=0), psi,
                              rng)
        x = Packet(bits("00010001"))
        for cfg in bundle.processors:
            xr, _, i = split_packet(x, 2, bundle.entry.blinds)
            result = private_traversal(cfg, xr, i)
            identity = cfg.shares[cfg.tree.nodes[0].action_id]
            assert result.shares == compute_action(
                compute_action(CumulativeShares.zeros(8), identity), identity
            )
            assert result.match_attempts == 1

    def test_exhaustive_equivalence(self, small_bundle, small_tree):
        for value in range(1, 256):
            x = Packet(BitString(value, 8), bits("1010"))
            for index in (1, 5, 8):
                assert evaluate(small_bundle, x, index) == expected_verdict(
                    small_tree, x
                )

    def test_three_processors(self, small_tree):
        params = ProtocolParams(n=8, table_length=4, t=3, delta_min=0)
        bundle = global_setup(params, small_tree, SeededRandom(2))
        for value in range(1, 256):
            x = Packet(BitString(value, 8))
            assert evaluate(bundle, x, value % 4 + 1) == expected_verdict(
                small_tree, x
            )


class TestMergeShares:
    def test_identity_path(self, small_bundle):
        x = Packet(bits("00110011"), bits("11"))
        assert evaluate(small_bundle, x, 1) == Verdict(x)

    def test_drop_path(self, small_bundle):
        verdict = evaluate(small_bundle, Packet(bits("10101111")), 2)
        assert verdict == DROPPED
        assert verdict.dropped

    def test_rewrite(self, small_bundle):
        verdict = evaluate(small_bundle, Packet(bits("01001001")), 4)
        assert verdict.packet.header == bits("01000110")

    def test_nat_rewrite_of_destination(self, rng):
        rule = parse_rule("allow dst=10.1.0.0/16 set-dst=192.168.0.7")
        psi = compile_rules([rule])
        bundle = global_setup(ProtocolParams(n=HEADER_BITS, table_length=8), psi, rng)
        header = BitString(
            (0x0A000001 << 72) | (0x0A010203 << 40) | (6 << 32) | (1234 << 16) | 80,
            HEADER_BITS,
        )
        x = Packet(header)
        verdict = evaluate(bundle, x, 3)
        assert verdict == expected_verdict(psi, x)
        assert (verdict.packet.header.value >> 40) & 0xFFFFFFFF == 0xC0A80007

    def test_wrong_share_count(self, small_bundle):
        x = Packet(bits("00110011"))
        xr, xw, i = split_packet(x, 1, small_bundle.entry.blinds)
        shares = [private_traversal(small_bundle.processors[0], xr, i).shares]
        with pytest.raises(ReassemblyError):
            merge_shares(i, xw, shares, small_bundle.client.blinds, 2)
        with pytest.raises(ReassemblyError):
            merge_shares(i, xw, [], small_bundle.client.blinds)


class TestDummies:
    def test_forced_flag_share(self):
        assert split_dummy_flag(1, 2, ConstantBits(0)) == (0, 1)

    def test_flags_reconstruct(self, rng):
        for _ in range(1000):
            for is_real in (0, 1):
                shares = split_dummy_flag(is_real, 3, rng)
                assert shares[0] ^ shares[1] ^ shares[2] == is_real

    def test_single_share_is_balanced(self, rng):
        ones = sum(split_dummy_flag(1, 2, rng)[0] for _ in range(10_000))
        assert abs(ones / 10_000 - 0.5) <= 0.02

    def test_dummy_packets_differ(self):
        a = make_dummy_packet(104, 64, SeededRandom(1))
        b = make_dummy_packet(104, 64, SeededRandom(2))
        assert a != b
        assert len(a.header) == 104
        assert len(a.payload) == 64
