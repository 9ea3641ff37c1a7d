import numpy as np
import pytest

from qsage import synth
from qsage.ingest import JobRecord


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and report.when == "call":
        report.user_properties.append(("criterion", marker.args))


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            for name, value in getattr(rep, "user_properties", ()):
                if name == "criterion":
                    lines.append((value[0], "PASS" if rep.passed else "FAIL", value[1]))
    if lines:
        terminalreporter.section("acceptance criteria")
        for number, verdict, title in sorted(lines):
            terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {title}")


def random_log(seed, n_jobs, total_nodes=8, queue="normal"):
    """A small simulated log with real backlog (roughly 90% utilisation)."""
    rng = np.random.default_rng(seed)
    nodes = {1: 0.5, 2: 0.3, 4: 0.2}
    mins = {10: 0.4, 30: 0.4, 90: 0.2}
    mean_work = sum(k * v for k, v in nodes.items()) * 0.55 * sum(k * v for k, v in mins.items())
    rate = 0.9 * total_nodes * 60 / mean_work * float(rng.uniform(0.7, 1.3))
    w = synth.WorkloadConfig(n_jobs, rate, nodes, mins, seed=seed, queue=queue)
    return synth.simulate(w, synth.ClusterConfig(total_nodes))


@pytest.fixture
def small_log():
    return random_log(0, 400)


@pytest.fixture
def hand_log():
    # t=0 a runs 0..100; b waits 10..100 then runs to 160; c submitted at 50
    return [
        JobRecord("a", "q", 0, 0, 100, 2, 5),
        JobRecord("b", "q", 10, 100, 160, 1, 3),
        JobRecord("c", "q", 50, 160, 200, 4, 7),
        JobRecord("d", "q", 100, 100, 130, 1, 1),
    ]
