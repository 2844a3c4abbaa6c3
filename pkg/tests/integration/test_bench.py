"""Integration tests: every bench mode on small configurations."""

from dataclasses import replace

import pytest

from splitbox.bench import BenchConfig, EquivalenceError, run_bench
from splitbox.fabric import CostModel
from splitbox.firewall import TraceSpec
from splitbox.protocol import DROPPED
from splitbox.report import to_csv

pytestmark = pytest.mark.integration

TRACE = TraceSpec(count=200, mean_payload=64, payload_spread=16)


def check_named(report, name):
    return next(check for check in report.checks if check.name == name)


def small_config(mode, **kwargs):
    kwargs.setdefault("trace", TRACE)
    kwargs.setdefault("table_lengths", (64,))
    kwargs.setdefault("search_steps", 2)
    return BenchConfig(mode=mode, **kwargs)


class TestEquivalenceMode:
    def test_passes(self):
        report = run_bench(small_config("equivalence", trials=3, seed=5))
        assert report.passed
        assert [row["variant"] for row in report.rows] == ["plain", "rewrite",
                                                           "dummies"]
        assert [row["t"] for row in report.rows] == [2, 3, 2]
        assert all(row["audit_findings"] == 0 for row in report.rows)
        assert report.rows[0]["rules"] == 60

    def test_fixed_rules(self, sample_rules):
        report = run_bench(small_config("equivalence", trials=2, rules=sample_rules))
        assert report.passed
        assert {row["rules"] for row in report.rows} == {4}

    def test_mismatch_raises(self, sample_rules, mocker):
        mocker.patch("splitbox.bench._as_verdict", return_value=DROPPED)
        with pytest.raises(EquivalenceError, match="reproduce with --seed 9"):
            run_bench(small_config("equivalence", trials=1, seed=9,
                                   rules=sample_rules))


class TestThroughputMode:
    def test_rates_fall_with_rules(self):
        report = run_bench(small_config("throughput", rule_counts=(1, 20)))
        base = [row for row in report.rows if row["workers"] == 1]
        assert [row["rules"] for row in base] == [1, 20]
        assert base[0]["pps"] > base[1]["pps"]
        assert all(row["pps"] < row["plaintext_pps"] for row in base)
        assert any(row["workers"] == 2 for row in report.rows)
        assert all(row["conservation"] for row in report.rows)


class TestLatencyMode:
    def test_delay_rows(self):
        report = run_bench(small_config("latency", rule_counts=(5,),
                                        loads=(0.9, 0.2)))
        assert [row["load"] for row in report.rows] == [0.2, 0.9]
        low, high = report.rows
        assert high["offered_pps"] == pytest.approx(4.5 * low["offered_pps"], rel=1e-3)
        assert high["p50_delay_ns"] >= low["p50_delay_ns"]


class TestLsweepMode:
    def test_wraps_and_tables(self):
        report = run_bench(small_config("lsweep", rule_counts=(3,),
                                        table_lengths=(8, 64)))
        short, long = report.rows
        assert short["wraps"] == 200 // 8
        assert short["mismatches"] == long["mismatches"] == 0
        assert long["table_bytes"] == 8 * short["table_bytes"]

    def test_lookup_cost_growing_with_l_fails(self, mocker):
        def slower_with_l(model, bundle, **kwargs):
            return replace(model, lookup_ns=bundle.params.table_length)

        mocker.patch.object(CostModel, "with_lookups", autospec=True,
                            side_effect=slower_with_l)
        report = run_bench(small_config("lsweep", rule_counts=(3,),
                                        table_lengths=(16, 4096)))
        assert [row["lookup_ns"] for row in report.rows] == [16, 4096]
        check = check_named(report, "l-insensitive throughput")
        assert not check.passed

    def test_constant_lookup_cost_passes(self, mocker):
        mocker.patch.object(CostModel, "with_lookups", autospec=True,
                            side_effect=lambda model, bundle, **kwargs: model)
        report = run_bench(small_config("lsweep", rule_counts=(3,),
                                        table_lengths=(16, 4096)))
        assert [row["lookup_ns"] for row in report.rows] == [60, 60]
        assert check_named(report, "l-insensitive throughput").passed


class TestDummyrateMode:
    def test_real_fraction(self):
        report = run_bench(small_config("dummyrate", rule_counts=(3,),
                                        trace=TraceSpec(count=400, mean_payload=64,
                                                        payload_spread=16),
                                        rhos=(1.0, 0.5)))
        full, half = report.rows
        assert full["real"] == half["real"] == 400
        assert full["dummies"] == 0
        assert 0.4 < half["real_fraction"] < 0.6
        assert half["pps"] < full["pps"]


class TestCsvOutput:
    def test_columns_are_stable(self):
        report = run_bench(small_config("dummyrate", rule_counts=(2,),
                                        rhos=(1.0,)))
        header = to_csv(report).splitlines()[0].split(",")
        assert header[:3] == ["mode", "carrier", "t"]
        assert header[-4:] == ["real", "dummies", "real_fraction", "stats"]
