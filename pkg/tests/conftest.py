import os
import re

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


# -- one pass/fail line per acceptance criterion --

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    m = re.match(r"test_(A\d+)_(\w+)", item.name)
    if m and (report.when == "call" or report.failed):
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        label = m.group(2).replace("_", " ")
        _CRITERIA[m.group(1)] = ("PASS" if report.passed else "FAIL", label, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k[1:])):
        status, label, detail = _CRITERIA[key]
        terminalreporter.write_line(f"{key} {status} {label}" + (f" ({detail})" if detail else ""))
