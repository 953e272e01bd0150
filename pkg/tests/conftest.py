from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from thunderlens.ingestion import discover_pairs, read_fixture
from thunderlens.pipeline import Settings, analyze_bundle
from thunderlens.registry import load_default
from thunderlens.synth import Scenario, generate, genesis_bundle, synth_registry

settings.register_profile("thunderlens", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("thunderlens")

GOLDEN = Path(__file__).parent / "golden" / "bzx_hack.json"
GOLDEN_TX = "0xb5c8bd9430b6cc87a0e2fe110ece6bf527fa4f170a4bc8cd032f768fc5219838"
GOLDEN_SPANS = (
    ("Flash Loan in dYdX", 2, 188),
    ("Collateral Borrowing in Compound", 21, 46),
    ("Margin Trading in bZx", 47, 174),
    ("First Swapping in Uniswap", 158, 161),
    ("Second Swapping in Uniswap", 176, 180),
)


def make_registry():
    """Default catalog plus synthetic config, with every synthetic pair discovered."""
    reg = synth_registry(load_default())
    discover_pairs([genesis_bundle()], reg)
    return reg


@pytest.fixture
def registry():
    return make_registry()


@pytest.fixture
def golden():
    return read_fixture(GOLDEN)


def run_script(registry, *steps, settings=Settings(), seed=1):
    bundle, truth = generate(Scenario(seed, tuple(steps)))
    return bundle, truth, analyze_bundle(bundle, registry, settings)


# -- acceptance summary ---------------------------------------------------------------

_ACCEPTANCE: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(name): primary acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        note = getattr(item, "acceptance_note", "")
        _ACCEPTANCE.append(("PASS" if report.passed else "FAIL", marker.args[0], note))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, note in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {name}" + (f"  ({note})" if note else ""))
