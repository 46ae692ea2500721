import numpy as np
import pytest

CRITERIA = {
    1: "coherent exactness",
    2: "Mandel-Q artifact",
    3: "oracle equivalence",
    4: "cascade correctness",
    5: "crosstalk Q behaviour",
    6: "chi round trip",
    7: "fitter round trip",
    8: "inversion failure",
    9: "nonclassicality sign",
    10: "determinism",
}

_results = {}


class _Recorder:
    def __init__(self, number):
        self.number = number
        self.checks = []

    def check(self, ok, detail):
        self.checks.append((bool(ok), detail))
        return bool(ok)

    @property
    def passed(self):
        return bool(self.checks) and all(ok for ok, _ in self.checks)


@pytest.fixture
def criterion(request):
    """Record pass/fail details for one acceptance criterion."""
    marker = request.node.get_closest_marker("criterion")
    rec = _Recorder(marker.args[0])
    request.node._criterion = rec
    _results.setdefault(rec.number, []).append(rec)
    return rec


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    rec = getattr(item, "_criterion", None)
    if rec is not None and report.failed:
        msg = str(call.excinfo.value).splitlines()[0] if call.excinfo else "failed"
        rec.check(False, f"test failed: {msg[:120]}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, name in CRITERIA.items():
        recs = _results.get(n)
        if not recs:
            tr.write_line(f"criterion {n:2d} ({name}): NOT RUN")
            continue
        ok = all(r.passed for r in recs)
        failed = [d for r in recs for good, d in r.checks if not good]
        details = failed or [d for r in recs for _, d in r.checks]
        summary = "; ".join(details) if details else "no checks"
        tr.write_line(f"criterion {n:2d} ({name}): {'PASS' if ok else 'FAIL'} | {summary}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240531)
