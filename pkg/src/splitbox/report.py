"""CSV and text output of bench reports."""

from __future__ import annotations

import csv
import io
from pathlib import Path

from splitbox.bench import BenchReport

SUMMARY_COLUMNS = ("rules", "l", "rho", "pps", "p50_delay_ns", "loss_fraction")


def _write_rows(report: BenchReport, stream) -> None:
    writer = csv.DictWriter(stream, fieldnames=list(report.columns),
                            lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in report.rows:
        writer.writerow(row)


def to_csv(report: BenchReport) -> str:
    buffer = io.StringIO()
    _write_rows(report, buffer)
    return buffer.getvalue()


def write_csv(report: BenchReport, output_csv: str | Path) -> Path:
    """Write the report rows to a CSV file and return the saved path."""
    output_path = Path(output_csv).expanduser()
    if str(output_path.parent) not in {"", "."}:
        output_path.parent.mkdir(parents=True, exist_ok=True)
    with output_path.open("w", newline="", encoding="utf-8") as csvfile:
        _write_rows(report, csvfile)
    return output_path.resolve()


def format_report(report: BenchReport) -> str:
    """Human-readable summary: one line per row, then every check."""
    lines = [f"{report.mode}: {len(report.rows)} point(s)"]
    extra = [c for c in report.columns if c not in SUMMARY_COLUMNS
             and c not in ("mode", "carrier", "stats")]
    for row in report.rows:
        parts = [f"{key}={row.get(key)}" for key in SUMMARY_COLUMNS]
        parts += [f"{key}={row.get(key)}" for key in extra[-3:]]
        lines.append("  " + " ".join(parts))
    if report.checks:
        lines.append("")
        lines.append("Checks:")
        lines.extend(f"  {check}" for check in report.checks)
    verdict = "PASS" if report.passed else "FAIL"
    lines.append(f"\nOverall: {verdict}")
    return "\n".join(lines) + "\n"
