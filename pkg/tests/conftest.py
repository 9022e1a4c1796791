import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture]
)
settings.load_profile("default")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def toy():
    """Cached toy scenes and cameras; tests must copy before mutating."""
    from splatprune import make_toy_scene, toy_cameras

    cache = {}

    def get(name, seed=7):
        key = (name, seed)
        if key not in cache:
            cache[key] = (make_toy_scene(name, seed=seed), toy_cameras(name))
        scene, cams = cache[key]
        return scene.copy(), cams

    return get
