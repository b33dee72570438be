import math
from collections import OrderedDict

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion -> list of (part, passed, detail); filled by test_acceptance.py
ACCEPTANCE = OrderedDict()
# criterion -> supplementary diagnostics that do not enter the verdict
NOTES = OrderedDict()


def record(criterion, title, part, passed, detail):
    ACCEPTANCE.setdefault((criterion, title), []).append((part, bool(passed), detail))
    line = f"[{criterion}] {title} / {part}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    return passed


def note(criterion, text):
    NOTES.setdefault(criterion, []).append(text)
    print(f"[{criterion}] note: {text}")


@pytest.fixture
def acceptance_record():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for (crit, title), parts in sorted(ACCEPTANCE.items(), key=lambda kv: kv[0][0]):
        ok = all(p[1] for p in parts)
        details = "; ".join(f"{name}: {'PASS' if passed else 'FAIL'} ({detail})"
                            for name, passed, detail in parts)
        tr.write_line(f"criterion {crit:>2} {'PASS' if ok else 'FAIL'}  {title}  |  {details}")
        for text in NOTES.get(crit, []):
            tr.write_line(f"             note: {text}")


@pytest.fixture(scope="session")
def well3():
    from homopolymer.potentials import unit_well
    return unit_well(3)


@pytest.fixture(scope="session")
def beta_cr3():
    return math.pi ** 2 / 8
