import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from corgcn import kernels, numkit  # noqa: E402
from corgcn.synthetic import make_synthetic  # noqa: E402

ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(autouse=True)
def clean_tape():
    numkit.get_tape().clear()
    yield
    numkit.get_tape().clear()


@pytest.fixture(params=sorted(kernels.implementations()))
def kernel_impl(request):
    return kernels.implementations()[request.param]


@pytest.fixture
def tiny_data():
    return make_synthetic(n=6, f=4, k=3, seed=3, p_in=0.6, p_out=0.2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


@pytest.fixture
def criterion(request):
    """Collects a verdict line for an acceptance criterion.

    The test fills in ``number``, ``title`` and ``detail``; the outcome of the
    test decides PASS / FAIL / SKIP.
    """
    info = {"number": 0, "title": request.node.name, "detail": ""}
    yield info
    rep = getattr(request.node, "rep_call", None)
    if rep is None or rep.skipped:
        status = "SKIP"
        if rep is not None and not info["detail"]:
            info["detail"] = str(rep.longrepr[-1]) if isinstance(rep.longrepr, tuple) else ""
    else:
        status = "PASS" if rep.passed else "FAIL"
    key = f"{info['number']}{request.node.callspec.id if hasattr(request.node, 'callspec') else ''}"
    request.config.stash.setdefault(ACCEPTANCE, {})[key] = (info["number"], status, info["title"],
                                                             info["detail"])


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, detail in sorted(results.values(), key=lambda r: r[0]):
        line = f"{status:4}  {number}. {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
