"""Acceptance criteria 1 to 10, each checked at its stated tolerance.

The whole suite runs once per session (seed 0, one thread; the
reproducibility rerun uses four threads). One line per criterion is written
to the terminal as it completes.
"""

import pytest

from outage_cr.acceptance import CRITERIA, reproducibility, run_criterion, RUNTIME_LIMITS

SEED = 0
ALT_THREADS = 4


@pytest.fixture(scope="module")
def results(request):
    reporter = request.config.pluginmanager.getplugin("terminalreporter")

    def emit(res):
        if reporter is not None:
            reporter.write_line(res.line())
        else:
            print(res.line())

    first = {}
    for k in CRITERIA:
        res = run_criterion(k, SEED, threads=1)
        limit = RUNTIME_LIMITS.get(k)
        if limit is not None and res.runtime_s > limit:
            res.passed = False
            res.summary += f"; runtime {res.runtime_s:.1f}s over {limit:.0f}s"
        first[k] = res
        emit(res)
    rep = reproducibility(first, SEED, ALT_THREADS)
    emit(rep)
    return {**first, 10: rep}


@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(results, number):
    res = results[number]
    assert res.passed, res.line()
