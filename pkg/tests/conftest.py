"""Shared fixtures and the acceptance-criteria summary hook."""

import re

import pytest

from fedln.data import SyntheticSpec, generate_gaussian_mixture, partition_iid

BENCHMARK_SPEC = SyntheticSpec(num_classes=10, dim=32, per_class_count=500,
                               separation=6.0, seed=3)


@pytest.fixture(scope="session")
def benchmark():
    """The desk-scale benchmark: 10-class, 32-d mixture at separation 6."""
    train, test = generate_gaussian_mixture(BENCHMARK_SPEC)
    partition = partition_iid(len(train), 10, seed=17)
    return train, test, partition


_CRITERION = re.compile(r"test_acceptance\.py::test_(a\d+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match:
                key = match.group(1).upper()
                outcomes[key] = "PASS" if status == "passed" else "FAIL"
    if outcomes:
        terminalreporter.write_sep("=", "acceptance criteria")
        for criterion in sorted(outcomes):
            terminalreporter.write_line(f"{criterion}: {outcomes[criterion]}")
