import math
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tlta.config import load_scenario, parse_scenario  # noqa: E402
from tlta.sim.world import World  # noqa: E402

C0_WEST = (-2 * 100 * math.sqrt(3), 0.0)  # centre of cell (-2, 0) beside the journey zone


def variant(name: str, **changes):
    """A shipped scenario with top-level keys (or ``engine`` entries) replaced."""
    doc = load_scenario(name).model_dump(mode="json")
    engine = changes.pop("engine", None)
    doc.update(changes)
    if engine:
        doc["engine"] = {**doc["engine"], **engine}
    return parse_scenario(doc, f"{name}-variant")


def parked_world(seed: int = 1, pos=C0_WEST, duration: float = 200.0, **changes) -> World:
    """Journey world with one MT standing still at ``pos``, started and settled."""
    mts = [{"id": "mt-1", "trace": [[0, *pos], [duration, *pos]]}]
    cfg = variant("journey", mts=mts, **changes)
    w = World(cfg, seed)
    w.header()
    w.tltac.start()
    for mt in w.mts.values():
        mt.start()
    w.engine.run(until=1.0)
    return w


# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {msg}")


@pytest.fixture
def acceptance():
    return ACCEPTANCE
