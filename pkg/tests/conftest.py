from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import settings

# first calls compile numba kernels, which would trip per-example deadlines
settings.register_profile("shardstock", deadline=None)
settings.load_profile("shardstock")

sys.path.insert(0, str(Path(__file__).parent))

from shardstock.core import Record  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"

# sample rows of the book inventory table (ISBN13, price, quantity)
SAMPLE_ROWS = [
    ("9780000004381", 116, 91),
    ("9780000010457", 242, 424),
    ("9780000012128", 171, 445),
    ("9780000015225", 105, 134),
    ("9780000018556", 31, 408),
    ("9780000031562", 501, 237),
    ("9780000033317", 242, 496),
    ("9780000034711", 111, 193),
    ("9780000036146", 763, 400),
    ("9780000036886", 767, 69),
    ("9780000044323", 486, 120),
    ("9780000055263", 674, 339),
    ("9780000058436", 105, 348),
    ("9780000063175", 352, 399),
    ("9780000082215", 258, 166),
]

SAMPLE_CSV = (
    b"bo_ISBN13,bo_price,bo_quantity\n"
    b"9780000004381,1.16,91\n"
    b"9780000010457,2.42,424\n"
    b"9780000012128,1.71,445\n"
    b"9780000015225,1.05,134\n"
    b"9780000018556,0.31,408\n"
    b"9780000031562,5.01,237\n"
    b"9780000033317,2.42,496\n"
    b"9780000034711,1.11,193\n"
    b"9780000036146,7.63,400\n"
    b"9780000036886,7.67,69\n"
    b"9780000044323,4.86,120\n"
    b"9780000055263,6.74,339\n"
    b"9780000058436,1.05,348\n"
    b"9780000063175,3.52,399\n"
    b"9780000082215,2.58,166\n"
)


@pytest.fixture
def sample_records() -> list[Record]:
    return [Record(k, p, q) for k, p, q in SAMPLE_ROWS]


_acceptance: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance criterion's verdict for the terminal summary."""
    entry = {"name": request.node.name, "detail": ""}

    def note(detail: str) -> None:
        entry["detail"] = detail

    yield note
    rep = getattr(request.node, "rep_call", None)
    if rep is None:
        status = "SKIP"
    elif rep.skipped:
        status = "SKIP"
    else:
        status = "PASS" if rep.passed else "FAIL"
    _acceptance.append((status, entry["name"], entry["detail"]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in _acceptance:
        terminalreporter.write_line(f"{status:4}  {name}  {detail}".rstrip())
