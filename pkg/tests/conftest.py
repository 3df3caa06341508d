import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from advrec.env import generate_world  # noqa: E402


@pytest.fixture(scope="session")
def small_world():
    return generate_world(n_users=30, n_items=60, dim=8, latent_clusters=4, relevant_per_user=3, seed=0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(results):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
