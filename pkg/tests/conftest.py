import numpy as np
import pytest

from tslr.ingest import EventLog

DAY = 1440


def hm(day, hours, minutes=0):
    """Absolute minute of clock time hours:minutes on 1-based ``day``."""
    return (day - 1) * DAY + hours * 60 + minutes


def block(first, last):
    """Sleep intervals of consecutive plausible days.

    Every day has a 13:00-14:00 nap; nights run 22:00-06:00; the first day
    opens with 01:00-06:00 so it has night sleep of its own.
    """
    iv = [(hm(first, 1), hm(first, 6))]
    for d in range(first, last + 1):
        iv.append((hm(d, 13), hm(d, 14)))
        if d < last:
            iv.append((hm(d, 22), hm(d + 1, 6)))
    return iv


def to_log(subject_id, intervals):
    events = []
    for a, b in sorted(intervals):
        events += [(a, "start"), (b, "end")]
    return EventLog(subject_id, events)


def rule_fixture():
    """Three subjects exercising every plausibility rule.

    Subject ``a`` spans days 1-60 with a 17h sleep on day 10, a 21h awake
    period on day 20, no night sleep on day 25 and an isolated day 36.
    Subject ``b`` has 8 of 100 days observed, subject ``c`` 12 of 100.
    """
    iv = set(block(1, 30))
    # day 10: night ends 00:30, then 01:00-18:00 asleep (17h)
    iv.discard((hm(9, 22), hm(10, 6)))
    iv.discard((hm(10, 13), hm(10, 14)))
    iv |= {(hm(9, 22), hm(10, 0, 30)), (hm(10, 1), hm(10, 18))}
    # day 20: awake 00:30-21:30 (21h)
    iv.discard((hm(19, 22), hm(20, 6)))
    iv.discard((hm(20, 13), hm(20, 14)))
    iv.discard((hm(20, 22), hm(21, 6)))
    iv |= {(hm(19, 22), hm(20, 0, 30)), (hm(20, 21, 30), hm(21, 6))}
    # day 25: asleep only 08:00-14:00; surrounding nights stop at 23:30 and resume at 00:00
    iv.discard((hm(24, 22), hm(25, 6)))
    iv.discard((hm(25, 13), hm(25, 14)))
    iv.discard((hm(25, 22), hm(26, 6)))
    iv |= {(hm(24, 22), hm(24, 23, 30)), (hm(25, 8), hm(25, 14)), (hm(26, 0), hm(26, 6))}
    iv |= set(block(36, 36)) | set(block(42, 60))
    a = to_log("a", iv)
    b = to_log("b", block(1, 4) + block(97, 100))
    c = to_log("c", block(1, 6) + block(95, 100))
    expected_a = sorted(set(range(1, 31)) - {10, 20, 25} | set(range(42, 61)))
    return [a, b, c], {"a": expected_a, "c": list(range(1, 7)) + list(range(95, 101))}


@pytest.fixture
def plausibility_logs():
    return rule_fixture()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---- acceptance reporting -----------------------------------------------

_CRITERIA: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or number not in _CRITERIA:
        _CRITERIA[number] = (title, "PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
