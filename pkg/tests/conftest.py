import pytest

from avaas.network import builtin_network


@pytest.fixture
def ring():
    return builtin_network("ring", length_m=1000.0, lanes=1)


@pytest.fixture
def corridor():
    return builtin_network("corridor", edges=2, lanes=2, edge_length_m=500.0)


# -- acceptance reporting: one PASS/FAIL line per criterion ------------------

_CRITERIA: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def detail(request):
    """Free-form measurements shown next to the criterion's verdict."""
    d: dict = {}
    request.node._criterion_detail = d
    return d


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        d = getattr(item, "_criterion_detail", {})
        text = ", ".join(f"{k}: {v}" for k, v in d.items())
        _CRITERIA.append((marker.args[0], marker.args[1], rep.passed, text))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    grouped: dict[int, list] = {}
    for n, title, ok, text in _CRITERIA:
        grouped.setdefault(n, []).append((title, ok, text))
    terminalreporter.section("acceptance criteria")
    for n in sorted(grouped):
        runs = grouped[n]
        ok = all(r[1] for r in runs)
        text = "; ".join(r[2] for r in runs if r[2])
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{n:2d}] {runs[0][0]}" + (f"  ({text})" if text else ""))
