import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lodloc.camera import Intrinsics  # noqa: E402
from lodloc.synth import SceneSpec, generate_scene  # noqa: E402


@pytest.fixture(scope="session")
def std_scene():
    spec = SceneSpec()
    return spec, generate_scene(spec)


@pytest.fixture(scope="session")
def std_intr():
    return Intrinsics.from_fov(640, 360, 45.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def verdict():
    """Record one acceptance line; the lines are repeated in the terminal summary."""

    def record(tag: str, ok: bool, detail: str) -> bool:
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        _VERDICTS.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
