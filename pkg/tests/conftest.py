import pytest

from kinoltl.scenario import ModelSpec, Region, Scenario


def small_scenario(**kw) -> Scenario:
    """Unobstructed 2-D box with the goal close to the start."""
    args = dict(
        name="smoke",
        workspace_lower=(0.0, 0.0), workspace_upper=(2.0, 2.0),
        model=ModelSpec("single-integrator-2d", input_bound=0.5),
        regions=(),
        start=(0.2, 0.2), goal=(0.6, 0.5),
        formula_text="true",
        iterations=200, time_budget=60.0, seed=0,
    )
    args.update(kw)
    return Scenario(**args).validate()


@pytest.fixture
def smoke():
    return small_scenario()


@pytest.fixture
def visit_and_avoid():
    """Visit one target while avoiding a wall between start and goal."""
    return small_scenario(
        name="visit-avoid",
        regions=(Region("A", (1.5, 0.4), (0.2, 0.2)),
                 Region("W", (1.0, 1.0), (0.1, 0.5), "obstacle")),
        start=(0.2, 1.0), goal=(1.8, 1.0),
        formula_text="F in(A) & G !in(W)",
        iterations=300, mu2=100.0,
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria with PASS/FAIL lines")


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
