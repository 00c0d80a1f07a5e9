from __future__ import annotations

import json
from importlib.resources import files
from pathlib import Path

import pytest

from gamebug.graph import bundled_graph
from gamebug.ingest import bundled_raw_sample, clean_log, parse_raw_log
from gamebug.summarizer import bundled_examples

FIXTURES = Path(__file__).parent / "fixtures"
GRAPH_PATH = Path(str(files("gamebug.data").joinpath("dejaboom.graph")))
POLICY_PATH = Path(str(files("gamebug.data").joinpath("dejaboom_policy.json")))


@pytest.fixture(scope="session")
def dejaboom():
    return bundled_graph()


@pytest.fixture(scope="session")
def sample_cleaned():
    return clean_log(parse_raw_log(bundled_raw_sample()), "sample")


@pytest.fixture(scope="session")
def example_pairs():
    return bundled_examples()


@pytest.fixture(scope="session")
def policy():
    return json.loads(POLICY_PATH.read_text(encoding="utf-8"))


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
