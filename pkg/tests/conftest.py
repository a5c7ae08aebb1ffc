import numpy as np
import pytest
import torch

from vaffnet.data import BIFURCATION, CROSSING, Junction
from vaffnet.phantom import PhantomConfig, generate_phantom


def well_separated_layout(rng, height, width, n, min_dist=8.0, cell_size=8, tries=2000):
    """Random junctions pairwise farther than ``min_dist`` and in distinct cells."""
    out, cells = [], set()
    for _ in range(tries):
        if len(out) == n:
            break
        x, y = int(rng.integers(0, width)), int(rng.integers(0, height))
        cell = (y // cell_size, x // cell_size)
        if cell in cells:
            continue
        if any((x - j.x) ** 2 + (y - j.y) ** 2 <= min_dist**2 for j in out):
            continue
        kind = BIFURCATION if rng.random() < 0.5 else CROSSING
        out.append(Junction(x, y, kind))
        cells.add(cell)
    return out


@pytest.fixture(scope="session")
def small_phantoms():
    cfgs = [PhantomConfig(image_size=(64, 64), faz_radius=8, rng_seed=s) for s in range(2)]
    return [generate_phantom(c, sample_id=f"p{i}") for i, c in enumerate(cfgs)]


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(max(1, torch.get_num_threads()))
    yield


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
