"""Unit tests for the bench harness helpers."""

import pytest

from splitbox.bench import (
    MODES,
    RUNNERS,
    BenchConfig,
    EquivalenceError,
    find_max_rate,
)
from splitbox.firewall import parse_rules
from splitbox.protocol import DROPPED
from splitbox.transport import PacketRecord, RunReport

pytestmark = pytest.mark.unit


def paced_report(rate_pps, count=101, lost=0):
    """A report whose verdicts left at exactly ``rate_pps``."""
    step = 1e9 / rate_pps
    records = [PacketRecord(k, k, DROPPED, 0, round(k * step)) for k in range(count)]
    stats = {"entry.emitted": count, "client.expired": lost}
    return RunReport("inproc", records, stats, duration_ns=round(count * step))


def bottleneck(capacity_pps, calls=None):
    """A fake carrier that forwards at most ``capacity_pps``."""

    def run_at(pacer):
        if calls is not None:
            calls.append(pacer)
        if pacer is None:
            return paced_report(capacity_pps)
        return paced_report(min(pacer.rate_pps, capacity_pps))

    return run_at


class TestBenchConfig:
    def test_defaults(self):
        cfg = BenchConfig()
        assert cfg.mode == "equivalence"
        assert cfg.table_length == 1024
        assert cfg.rho == 1.0
        assert cfg.t == 2

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"mode": "fuzz"},
            {"carrier": "tcp"},
            {"t": 1},
            {"trials": 0},
            {"rhos": (0.0,)},
            {"loads": (1.5,)},
            {"table_lengths": (0,)},
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            BenchConfig(**kwargs)

    def test_counts(self):
        assert BenchConfig(rule_counts=(3, 4)).counts((1,)) == (3, 4)
        assert BenchConfig().counts((1,)) == (1,)
        rules = parse_rules("allow\ndrop\n")
        assert BenchConfig(rules=rules, rule_counts=(9,)).counts((1,)) == (2,)

    def test_every_mode_has_a_runner(self):
        assert set(RUNNERS) == set(MODES)


class TestFindMaxRate:
    def test_converges_near_capacity(self):
        calls = []
        rate, report = find_max_rate(bottleneck(1000.0, calls), steps=8)
        assert 950 <= rate <= 1021
        assert report.exit_pps == pytest.approx(rate, rel=0.02)
        assert calls[0] is None
        assert len(calls) == 9

    def test_search_window(self):
        calls = []
        find_max_rate(bottleneck(1000.0, calls), steps=1)
        assert calls[1].rate_pps == pytest.approx(875.0)

    def test_nothing_sustainable(self, caplog):
        def lossy(pacer):
            return paced_report(1000.0, lost=10)

        with caplog.at_level("WARNING", logger="splitbox.bench"):
            rate, report = find_max_rate(lossy, steps=2)
        assert rate == pytest.approx(1000.0, rel=0.01)
        assert report.lost == 10
        assert "No sustainable rate" in caplog.text

    def test_dead_carrier(self):
        def silent(pacer):
            return RunReport("inproc", [], {}, duration_ns=0)

        rate, _ = find_max_rate(silent)
        assert rate == 0.0


class TestEquivalenceError:
    def test_message(self):
        error = EquivalenceError(42, 3, 2, "packet 7")
        assert isinstance(error, AssertionError)
        assert str(error) == (
            "2 verdict mismatch(es) in trial 3; reproduce with --seed 42; "
            "first: packet 7"
        )
        assert (error.seed, error.trial, error.mismatches) == (42, 3, 2)
