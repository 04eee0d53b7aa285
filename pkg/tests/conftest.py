from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
sys.path.insert(0, str(Path(__file__).parent))

CONTEXT_FILES = {
    "lucas_prescott": "context_lucas_prescott.txt",
    "amy_johnson": "context_amy_johnson.txt",
    "taylor_graham": "context_taylor_graham.txt",
    "conor_sammon": "context_conor_sammon.txt",
    "tgqa_sample": "context_tgqa_sample.txt",
    "timeqa_sample": "context_timeqa_sample.txt",
    "tempreason_sample": "context_tempreason_sample.txt",
    "tot_sample": "context_tot_sample.txt",
    "multihoprag_sample": "context_multihoprag_sample.txt",
}
TRANSCRIPT_FILES = {
    "amy_johnson_deepseek": "transcript_amy_johnson_deepseek.txt",
    "amy_johnson_gpt4o": "transcript_amy_johnson_gpt4o.txt",
    "taylor_graham": "transcript_taylor_graham.txt",
    "conor_sammon": "transcript_conor_sammon.txt",
    "chris_evans_multi_round": "transcript_chris_evans_multi_round.txt",
}


def read_fixture(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


def context(name: str) -> str:
    return read_fixture(CONTEXT_FILES[name])


def transcript(name: str) -> str:
    return read_fixture(TRANSCRIPT_FILES[name])


def questions() -> dict:
    return json.loads(read_fixture("questions.json"))


@pytest.fixture
def qs() -> dict:
    return questions()


# Acceptance tests append (criterion, passed, detail); the summary hook prints them.
ACCEPTANCE_LINES: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
