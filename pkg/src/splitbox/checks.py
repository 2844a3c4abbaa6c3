"""Acceptance checks over benchmark results.

1. Create rules
    ┌────────────────────────────────────────────┐
    │ CheckRule("zero mismatches",               │
    │   condition=at_most("mismatches", 0),      │
    │   template="{mismatches} mismatch(es)")    │
    └────────────────────────────────────────────┘
                    │
2. Register with manager
                    │
    ┌────────────────────────────────────────────┐
    │ CheckManager                               │
    │   rules: [rule_1, rule_2]                  │
    └────────────────────────────────────────────┘
                    │
3. Evaluate against the measured values
                    │
    ┌────────────────────────────────────────────┐
    │ manager.evaluate({"mismatches": 0, ...})   │
    │   → CheckResult("zero mismatches", True)   │
    └────────────────────────────────────────────┘

Every rule yields a result, passed or not; the bench exits non-zero when
any result failed.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

Values = Mapping[str, object]
Condition = Callable[[Values], bool]


@dataclass
class CheckResult:
    """Outcome of one check.

    Attributes:
        name: Name of the rule.
        passed: Whether the condition held.
        message: Formatted message with the measured values.
    """

    name: str
    passed: bool
    message: str

    def __str__(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.message}"


@dataclass
class CheckRule:
    """A named condition over measured values.

    Attributes:
        name: Human-readable rule name.
        condition: Callable that takes the values and returns True on pass.
        message_template: Format string filled from the values.
    """

    name: str
    condition: Condition
    message_template: str

    def evaluate(self, values: Values) -> CheckResult:
        try:
            passed = bool(self.condition(values))
            message = self.message_template.format(**values)
        except KeyError as exc:
            return CheckResult(self.name, False, f"missing value {exc}")
        return CheckResult(self.name, passed, message)


def at_most(key: str, limit: float) -> Condition:
    def condition(values: Values) -> bool:
        return values[key] <= limit

    return condition


def at_least(key: str, limit: float) -> Condition:
    def condition(values: Values) -> bool:
        return values[key] >= limit

    return condition


def less_than(key: str, other: str) -> Condition:
    """``values[key] < values[other]``."""

    def condition(values: Values) -> bool:
        return values[key] < values[other]

    return condition


def is_true(key: str) -> Condition:
    def condition(values: Values) -> bool:
        return bool(values[key])

    return condition


def within(key: str, target: str, tolerance: float) -> Condition:
    """``|values[key] - values[target]| <= tolerance * |values[target]|``."""

    def condition(values: Values) -> bool:
        expected = values[target]
        return abs(values[key] - expected) <= tolerance * abs(expected)

    return condition


@dataclass
class CheckManager:
    """Holds check rules and evaluates them all.

    Attributes:
        rules: Registered rules, evaluated in order.
    """

    rules: list[CheckRule] = field(default_factory=list)

    def add_rule(self, rule: CheckRule) -> None:
        self.rules.append(rule)

    def evaluate(self, values: Values) -> list[CheckResult]:
        """Evaluate every rule.

        Args:
            values: Measured values, keyed by name.

        Returns:
            One result per rule.
        """
        results = [rule.evaluate(values) for rule in self.rules]
        for result in results:
            if result.passed:
                logger.info("%s", result)
            else:
                logger.warning("%s", result)
        return results
