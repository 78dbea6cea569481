import pytest

from misrank.panel import FilingRecord, MisstatementLabel, build_panel
from misrank.synth import SynthParams, generate_panel


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one acceptance line: criterion, title, outcome, detail, runtime, budget."""

    def record(number, title, ok, detail, seconds, budget):
        limit = f" (budget {budget}s)" if budget else ""
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}: {detail}; {seconds:.1f}s{limit}"
        request.config.stash[_ACCEPTANCE].append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


def rec(company, year, misstated=False, restated=None, text=None, **fin):
    return FilingRecord(company, year, fin, text, MisstatementLabel(misstated, restated))


@pytest.fixture(scope="session")
def small_synth():
    params = SynthParams(n_companies=120, year_range=(1998, 2004), episode_start_rate=0.05, seed=11, text_length=40)
    panel, episodes = generate_panel(params)
    return params, panel, episodes


@pytest.fixture
def toy_panel():
    return build_panel([
        rec("A", 2001, True, 2003, at=100.0),
        rec("A", 2002, False, at=110.0),
        rec("B", 2001, False, at=50.0),
        rec("B", 2002, True, 2002, at=55.0),
    ])
