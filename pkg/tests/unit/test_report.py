"""Unit tests for bench report output."""

import csv

import pytest

from splitbox.bench import BenchReport
from splitbox.checks import CheckResult
from splitbox.report import format_report, to_csv, write_csv

pytestmark = pytest.mark.unit

COLUMNS = ("mode", "rules", "l", "rho", "pps", "p50_delay_ns", "loss_fraction",
           "wraps", "stats")


@pytest.fixture
def bench_report():
    rows = [
        {"mode": "lsweep", "rules": 10, "l": 64, "rho": 1.0, "pps": 1500.0,
         "p50_delay_ns": 800.0, "loss_fraction": 0.0, "wraps": 31,
         "stats": "entry.emitted=2000", "ignored": "x"},
        {"mode": "lsweep", "rules": 10, "l": 1024, "rho": 1.0, "pps": 1490.0,
         "p50_delay_ns": 810.0, "loss_fraction": 0.0, "wraps": 1,
         "stats": "entry.emitted=2000"},
    ]
    checks = [CheckResult("l-insensitive throughput", True, "spread 0.7% across l")]
    return BenchReport("lsweep", COLUMNS, rows, checks)


class TestCsv:
    def test_header_and_rows(self, bench_report):
        lines = to_csv(bench_report).splitlines()
        assert lines[0] == ",".join(COLUMNS)
        assert lines[1].startswith("lsweep,10,64,1.0,1500.0")
        assert len(lines) == 3

    def test_write(self, bench_report, tmp_path):
        path = write_csv(bench_report, tmp_path / "out" / "lsweep.csv")
        assert path.exists()
        with path.open(newline="", encoding="utf-8") as csvfile:
            rows = list(csv.DictReader(csvfile))
        assert [row["wraps"] for row in rows] == ["31", "1"]
        assert "ignored" not in rows[0]


class TestFormat:
    def test_summary_lines(self, bench_report):
        text = format_report(bench_report)
        lines = text.splitlines()
        assert lines[0] == "lsweep: 2 point(s)"
        assert "rules=10 l=64" in lines[1]
        assert "wraps=31" in lines[1]
        assert "  [PASS] l-insensitive throughput: spread 0.7% across l" in lines
        assert lines[-1] == "Overall: PASS"

    def test_failed_check(self, bench_report):
        bench_report.checks.append(CheckResult("conservation", False, "off by one"))
        assert not bench_report.passed
        assert format_report(bench_report).endswith("Overall: FAIL\n")

    def test_no_checks(self):
        text = format_report(BenchReport("latency", ("mode",), []))
        assert "Checks:" not in text
        assert text.endswith("Overall: PASS\n")
