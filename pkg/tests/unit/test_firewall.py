"""Unit tests for the five-tuple firewall."""

import ipaddress

import pytest

from splitbox.firewall import (
    HEADER_BITS,
    FieldMatch,
    FiveTuple,
    InexpressibleRangeError,
    RuleSyntaxError,
    RuleVerdict,
    Trace,
    TraceFormatError,
    TraceRecord,
    TraceSpec,
    compile_rules,
    controlled_workload,
    decode_header,
    encode_header,
    filter_one,
    format_rules,
    generate_trace,
    load_rules,
    parse_rule,
    parse_rules,
    random_ruleset,
    reference_filter,
    reorder_rules,
    trace_for_rules,
)
from splitbox.nfmodel import BitString, traverse
from splitbox.protocol import DROPPED, Verdict
from splitbox.randomness import SeededRandom

pytestmark = pytest.mark.unit


def ip(text):
    return int(ipaddress.IPv4Address(text))


def five(src, dst, proto=6, sport=40000, dport=443):
    return FiveTuple(ip(src), ip(dst), proto, sport, dport)


def plaintext_verdict(psi, record):
    out = traverse(psi, record.packet)
    return DROPPED if out.header.value == 0 else Verdict(out)


class TestHeader:
    def test_layout(self):
        header = encode_header(FiveTuple(1, 2, 6, 3, 4))
        assert len(header) == HEADER_BITS == 104
        assert header.value == (1 << 72) | (2 << 40) | (6 << 32) | (3 << 16) | 4

    def test_decode(self):
        value = five("10.0.0.1", "192.168.1.1")
        assert decode_header(encode_header(value)) == value

    def test_decode_wrong_width(self):
        with pytest.raises(ValueError):
            decode_header(BitString(1, 96))

    def test_str(self):
        assert str(five("10.0.0.1", "10.0.0.2", dport=80)) == (
            "10.0.0.1:40000 -> 10.0.0.2:80 proto 6"
        )


class TestParseRule:
    def test_prefix_and_octet_wildcards(self):
        rule = parse_rule("drop src=10.0.0.0/8 dst=192.168.1.*")
        assert rule.verdict is RuleVerdict.DROP
        assert rule.src == FieldMatch(ip("10.0.0.0"), 0xFF000000, 32)
        assert rule.dst == FieldMatch(ip("192.168.1.0"), 0xFFFFFF00, 32)
        assert rule.fixed_bits == 32

    def test_defaults_are_wildcards(self):
        rule = parse_rule("allow")
        assert rule.fixed_bits == 0
        assert rule.to_match().care == 0

    def test_protocol_names(self):
        assert parse_rule("allow proto=UDP").proto == FieldMatch.exact(17, 8)
        assert parse_rule("allow proto=6").proto == FieldMatch.exact(6, 8)

    def test_aligned_ranges(self):
        assert parse_rule("allow dport=1024-2047").dport.care == 0xFC00
        rule = parse_rule("allow src=10.0.0.0-10.0.0.127")
        assert rule.src.care == 0xFFFFFF80

    @pytest.mark.parametrize(
        "line",
        [
            "drop src=10.0.0.0/12",
            "drop dport=1000-2000",
            "drop dst=10.0.0.1-10.0.0.4",
        ],
    )
    def test_inexpressible(self, line):
        with pytest.raises(InexpressibleRangeError) as info:
            parse_rule(line, 3)
        assert info.value.line_no == 3
        assert info.value.field_name in ("src", "dst", "dport")

    def test_rewrites(self):
        rule = parse_rule("allow dport=53 set-dport=5353 set-dst=10.0.0.53")
        assert rule.rewrites == (("dst", ip("10.0.0.53")), ("dport", 5353))
        action = rule.to_action()
        assert action.care == (0xFFFFFFFF << 40) | 0xFFFF

    def test_drop_action_is_all_zero(self):
        action = parse_rule("drop").to_action()
        assert action.bits == 0
        assert action.care == (1 << HEADER_BITS) - 1

    @pytest.mark.parametrize(
        ("line", "message"),
        [
            ("permit src=*", "expected allow or drop"),
            ("allow color=red", "unknown field"),
            ("allow set-proto=6", "cannot rewrite"),
            ("drop set-dst=1.2.3.4", "cannot rewrite fields"),
            ("allow dport=70000", "does not fit"),
            ("allow dport=80 dport=81", "given twice"),
            ("allow src=10.0.0", "dotted quad"),
            ("allow dst", "key=value"),
        ],
    )
    def test_syntax_errors(self, line, message):
        with pytest.raises(RuleSyntaxError, match=message):
            parse_rule(line)

    def test_error_carries_line(self):
        with pytest.raises(RuleSyntaxError, match="line 2:"):
            parse_rules("allow\nbogus\n")


class TestRuleset:
    def test_comments_and_blanks(self, sample_rules):
        assert len(sample_rules) == 4
        assert [rule.line for rule in sample_rules] == [2, 3, 4, 5]

    def test_load(self, rules_file, sample_rules):
        assert load_rules(rules_file) == sample_rules

    def test_format(self, sample_rules):
        text = format_rules(sample_rules)
        assert text.splitlines()[0] == "drop src=10.*.*.* dst=192.168.1.*"
        assert text.splitlines()[2] == (
            "allow dst=192.168.2.* proto=17 dport=53 set-dst=192.168.2.53"
        )
        assert format_rules(parse_rules(text)) == text

    def test_format_ranges(self):
        rule = parse_rule("allow src=10.0.0.0-10.0.0.127 dport=1024-2047")
        assert str(rule) == "allow src=10.0.0.0-10.0.0.127 dport=1024-2047"


class TestFilter:
    @pytest.mark.parametrize(
        ("packet", "verdict", "rule_index", "attempts"),
        [
            (five("10.1.2.3", "192.168.1.5"), RuleVerdict.DROP, 0, 1),
            (five("11.0.0.1", "192.168.1.5"), RuleVerdict.ALLOW, 1, 2),
            (five("11.0.0.1", "192.168.3.1"), RuleVerdict.DROP, 3, 4),
            (five("11.0.0.1", "8.8.8.8"), RuleVerdict.ALLOW, None, 4),
        ],
    )
    def test_first_match(self, sample_rules, packet, verdict, rule_index, attempts):
        result = filter_one(sample_rules, packet)
        assert (result.verdict, result.rule_index, result.attempts) == (
            verdict, rule_index, attempts
        )

    def test_rewrite_output(self, sample_rules):
        result = filter_one(sample_rules, five("11.0.0.1", "192.168.2.9", 17, 999, 53))
        assert result.output.dst == ip("192.168.2.53")
        assert result.output.sport == 999

    def test_reference_filter(self, sample_rules, small_trace):
        results = reference_filter(sample_rules, small_trace)
        assert len(results) == len(small_trace)


class TestCompile:
    def test_empty_ruleset_is_identity(self):
        psi = compile_rules([])
        record = TraceRecord(five("1.2.3.4", "5.6.7.8"), 0)
        assert traverse(psi, record.packet) == record.packet

    def test_chain_size(self, sample_rules):
        assert len(compile_rules(sample_rules).nodes) == 2 * len(sample_rules) + 1

    def test_matches_reference_filter(self, sample_rules):
        psi = compile_rules(sample_rules)
        trace = trace_for_rules(sample_rules, TraceSpec(count=200, mean_payload=8,
                                                        payload_spread=4),
                                SeededRandom(5))
        for record, result in zip(trace, reference_filter(sample_rules, trace),
                                  strict=True):
            assert plaintext_verdict(psi, record) == result.to_verdict(record)

    def test_random_rulesets(self):
        rng = SeededRandom(21)
        for _ in range(5):
            rules = random_ruleset(12, rng, rewrite_share=0.5)
            psi = compile_rules(rules)
            trace = trace_for_rules(rules, TraceSpec(count=100, mean_payload=0,
                                                     payload_spread=0), rng)
            for record, result in zip(trace, reference_filter(rules, trace),
                                      strict=True):
                assert plaintext_verdict(psi, record) == result.to_verdict(record)

    def test_random_ruleset_shape(self):
        rules = random_ruleset(30, SeededRandom(2))
        assert len(rules) == 30
        assert all(rule.dst.fixed_bits >= 16 for rule in rules)
        assert not any(rule.rewrites for rule in rules)


class TestTrace:
    def test_generate(self):
        trace = generate_trace(TraceSpec(count=300, mean_payload=100,
                                         payload_spread=20, seed=1))
        lengths = [record.payload_length for record in trace]
        assert len(trace) == 300
        assert min(lengths) >= 80 and max(lengths) <= 120
        assert abs(trace.mean_payload - 100) < 5
        assert all(encode_header(r.five).value for r in trace)

    def test_generate_is_seeded(self):
        spec = TraceSpec(count=20, seed=9)
        assert generate_trace(spec).to_bytes() == generate_trace(spec).to_bytes()

    def test_packets(self, small_trace):
        packets = small_trace.packets()
        assert len(packets) == 50
        assert len(packets[0].header) == HEADER_BITS
        assert len(packets[0].payload) == 8 * small_trace.records[0].payload_length

    def test_bytes_layout(self):
        trace = Trace([TraceRecord(FiveTuple(1, 2, 6, 3, 4), 5)])
        assert trace.to_bytes() == bytes.fromhex(
            "53425452" "0001" "00000001"
            "00000001" "00000002" "06" "0003" "0004" "00000005"
        )

    def test_file_round_trip(self, small_trace, tmp_path):
        path = tmp_path / "trace.sbtr"
        small_trace.write(path)
        assert Trace.read(path).records == small_trace.records

    @pytest.mark.parametrize(
        ("data", "message"),
        [
            (b"SB", "preamble"),
            (b"XXXX\x00\x01\x00\x00\x00\x00", "magic"),
            (b"SBTR\x00\x02\x00\x00\x00\x00", "version"),
            (b"SBTR\x00\x01\x00\x00\x00\x01", "should be"),
        ],
    )
    def test_bad_bytes(self, data, message):
        with pytest.raises(TraceFormatError, match=message):
            Trace.from_bytes(data)

    def test_zero_header_rejected(self):
        data = Trace([TraceRecord(FiveTuple(0, 0, 0, 0, 0), 0)]).to_bytes()
        with pytest.raises(TraceFormatError, match="all-zero"):
            Trace.from_bytes(data)


class TestTraceSpec:
    def test_parse(self):
        spec = TraceSpec.parse("count=5,seed=2")
        assert (spec.count, spec.seed, spec.mean_payload) == (5, 2, 1024)

    @pytest.mark.parametrize("text", ["colour=5", "count=x", "mean=10,spread=20"])
    def test_parse_errors(self, text):
        with pytest.raises(TraceFormatError):
            TraceSpec.parse(text)

    def test_negative_count(self):
        with pytest.raises(ValueError):
            TraceSpec(count=-1)


class TestControlledWorkload:
    def test_every_packet_walks_the_chain(self):
        rules, trace = controlled_workload(5, TraceSpec(count=100, seed=4))
        assert len(rules) == 5
        for result in reference_filter(rules, trace):
            assert result.attempts == 5
            assert result.rule_index == 4
            assert result.verdict is RuleVerdict.ALLOW

    def test_single_rule(self):
        rules, _ = controlled_workload(1, TraceSpec(count=1))
        assert format_rules(rules) == "allow dst=10.1.*.*\n"

    @pytest.mark.parametrize("r", [0, 258])
    def test_bounds(self, r):
        with pytest.raises(ValueError):
            controlled_workload(r, TraceSpec(count=1))


class TestReorder:
    def test_hot_disjoint_rule_moves_up(self, caplog):
        rules = parse_rules("allow dst=10.0.0.*\ndrop dst=10.0.1.*\n")
        trace = Trace([TraceRecord(five("1.1.1.1", f"10.0.1.{k}"), 0)
                       for k in range(1, 6)])
        with caplog.at_level("INFO", logger="splitbox.firewall"):
            reordered = reorder_rules(rules, trace)
        assert [rule.verdict for rule in reordered] == [RuleVerdict.DROP,
                                                        RuleVerdict.ALLOW]
        assert "1 swap(s)" in caplog.text

    def test_overlapping_rules_stay(self):
        rules = parse_rules("drop dst=10.0.0.0/16 dport=80\nallow dst=10.0.1.*\n")
        trace = Trace([TraceRecord(five("1.1.1.1", "10.0.1.7"), 0)] * 5)
        assert reorder_rules(rules, trace) == rules

    def test_verdicts_preserved(self):
        rules = random_ruleset(15, SeededRandom(3))
        trace = trace_for_rules(rules, TraceSpec(count=300, mean_payload=0,
                                                 payload_spread=0), SeededRandom(4))
        reordered = reorder_rules(rules, trace)
        before = [r.output for r in reference_filter(rules, trace)]
        after = [r.output for r in reference_filter(reordered, trace)]
        assert before == after
