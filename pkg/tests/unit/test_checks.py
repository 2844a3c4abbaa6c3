"""Unit tests for the acceptance checks."""

import pytest

from splitbox.checks import (
    CheckManager,
    CheckResult,
    CheckRule,
    at_least,
    at_most,
    is_true,
    less_than,
    within,
)

pytestmark = pytest.mark.unit


@pytest.fixture
def measured():
    return {"mismatches": 0, "findings": 2, "private_pps": 900.0,
            "plain_pps": 1000.0, "conserved": True}


class TestCheckRule:
    def test_evaluate_passed(self, measured):
        rule = CheckRule(
            name="Zero mismatches",
            condition=at_most("mismatches", 0),
            message_template="{mismatches} mismatch(es)",
        )
        result = rule.evaluate(measured)
        assert isinstance(result, CheckResult)
        assert result.passed
        assert result.message == "0 mismatch(es)"
        assert str(result) == "[PASS] Zero mismatches: 0 mismatch(es)"

    def test_evaluate_failed(self, measured):
        rule = CheckRule(
            name="No findings",
            condition=at_most("findings", 0),
            message_template="{findings} finding(s)",
        )
        result = rule.evaluate(measured)
        assert not result.passed
        assert str(result).startswith("[FAIL]")

    def test_missing_value(self):
        rule = CheckRule("Rate", at_least("pps", 1), "{pps} pps")
        result = rule.evaluate({})
        assert not result.passed
        assert "missing value" in result.message


class TestConditionFactories:
    def test_at_most_and_at_least(self, measured):
        assert at_most("findings", 2)(measured)
        assert not at_most("findings", 1)(measured)
        assert at_least("private_pps", 900)(measured)
        assert not at_least("private_pps", 901)(measured)

    def test_less_than(self, measured):
        assert less_than("private_pps", "plain_pps")(measured)
        assert not less_than("plain_pps", "private_pps")(measured)

    def test_is_true(self, measured):
        assert is_true("conserved")(measured)
        assert not is_true("mismatches")(measured)

    def test_within(self, measured):
        assert within("private_pps", "plain_pps", 0.1)(measured)
        assert not within("private_pps", "plain_pps", 0.05)(measured)


class TestCheckManager:
    def test_add_and_evaluate(self, measured, caplog):
        manager = CheckManager()
        manager.add_rule(CheckRule("Zero mismatches", at_most("mismatches", 0),
                                   "{mismatches} mismatch(es)"))
        manager.add_rule(CheckRule("No findings", at_most("findings", 0),
                                   "{findings} finding(s)"))
        with caplog.at_level("INFO", logger="splitbox.checks"):
            results = manager.evaluate(measured)
        assert [r.passed for r in results] == [True, False]
        failed = [r for r in caplog.records if r.levelname == "WARNING"]
        assert len(failed) == 1
        assert "No findings" in failed[0].getMessage()

    def test_empty_manager(self, measured):
        assert CheckManager().evaluate(measured) == []
