import numpy as np
import pytest

from raypos.demo import demo_scene
from raypos.geometry import Scene, box_triangles, quad_triangles


@pytest.fixture(scope="session")
def room():
    """Closed 10 x 10 x 3 m room with nothing inside."""
    return Scene(box_triangles((0, 0, 0), (10, 10, 3)), name="room")


@pytest.fixture(scope="session")
def open_box():
    """Bounds only, no geometry: every ray escapes."""
    return Scene(np.zeros((0, 3, 3)), bounds=((0, 0, 0), (10, 10, 3)), name="open")


@pytest.fixture(scope="session")
def mirror_scene():
    """A single wall in the plane y = 4, open everywhere else."""
    wall = quad_triangles((-2, 4, -1), (8, 4, -1), (8, 4, 3), (-2, 4, 3))
    return Scene(wall, bounds=((-3, -4, -1), (9, 5, 3)), name="mirror")


@pytest.fixture(scope="session")
def hall():
    return demo_scene()


@pytest.fixture(scope="session")
def nlos_mirror():
    """Mirror wall y = 4 plus a blocker at x = 2.5 hiding (6, 0, 1) from a BS
    at (0, 0, 1); only the wall bounce connects them. The odd lower bounds keep
    (6, 0) off cell edges on a 10 cm grid."""
    wall = quad_triangles((-2, 4, -1), (8, 4, -1), (8, 4, 3), (-2, 4, 3))
    blocker = quad_triangles((2.5, -3, -1), (2.5, 2, -1), (2.5, 2, 3), (2.5, -3, 3))
    return Scene(np.concatenate([wall, blocker]), bounds=((-3.03, -4.03, -1), (9.5, 5, 3)),
                 name="nlos_mirror")


ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def report():
    """Record one pass/fail line per acceptance criterion."""
    def record(key: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES[key] = f"{key} {'PASS' if passed else 'FAIL'}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[2:])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
