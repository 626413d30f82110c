import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from talkseg.synthetic import build_clips, make_clip_specs  # noqa: E402


@pytest.fixture(scope="session")
def small_clips():
    """Three 40-frame identities at 64x64, rendered in memory."""
    return build_clips(make_clip_specs(3, 40, seed=5))


@pytest.fixture(scope="session")
def tiny_clips():
    """Two 32x32 clips for fast training loops."""
    return build_clips(make_clip_specs(2, 30, seed=7, resolution=32))


_CRITERIA = {}


@pytest.fixture
def record_criterion(capsys):
    def record(number, ok, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _CRITERIA[number] = line
        with capsys.disabled():
            print("\n" + line, flush=True)
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
