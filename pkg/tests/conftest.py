import pytest

from brachistochrone.chain import ChainSpec
from brachistochrone.io import bundled_seed_store
from brachistochrone.solver import solve_shooting, sweep


@pytest.fixture(scope="session")
def seed_store():
    return bundled_seed_store()


@pytest.fixture(scope="session")
def solved15(seed_store):
    """Fifteen-site solution by continuation from the stored ten-site one."""
    sols = sweep(range(10, 16), seeds={10: seed_store.get(10).params})
    assert all(s.converged for s in sols)
    return sols[-1]


@pytest.fixture(scope="session")
def solved3():
    return solve_shooting(ChainSpec(3))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    rep = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    entry = item.config._criteria.setdefault(number, {"title": title, "outcomes": [],
                                                      "measured": []})
    entry["outcomes"].append("error" if rep.when != "call" and rep.failed else rep.outcome)
    if rep.when == "call":
        entry["measured"] += [v for k, v in item.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter, config):
    criteria = getattr(config, "_criteria", {})
    if not criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(criteria):
        entry = criteria[number]
        ok = all(o == "passed" for o in entry["outcomes"])
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {entry['title']}"
        if entry["measured"]:
            line += "  [" + "; ".join(entry["measured"]) + "]"
        terminalreporter.write_line(line)
