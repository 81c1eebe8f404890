"""Shared fixtures: canonical small inputs used across the test modules."""

import numpy as np
import pytest

from gmpflow.finitegap import GapSet
from gmpflow.gmp import GmpBlock, GmpWindow


def make_estar_gapset() -> GapSet:
    """[-2, 2] with the single gap (-1, 1)."""
    return GapSet(-2.0, 2.0, ((-1.0, 1.0),))


def make_p1_block() -> GmpBlock:
    """One-gap block with p = (sqrt(2), 1/2) and q = (0, 0)."""
    return GmpBlock(
        p=np.array([np.sqrt(2.0), 0.5]),
        q=np.array([0.0, 0.0]),
    )


def make_p1_window(n_blocks: int = 5, j_min: int = -2) -> GmpWindow:
    """Constant-block window built from copies of the canonical block."""
    return GmpWindow(
        blocks=tuple(make_p1_block() for _ in range(n_blocks)),
        c=np.array([0.0]),
        j_min=j_min,
    )


def random_gapset(rng: np.random.Generator, g_max: int = 4) -> GapSet:
    """Random gap set with well-separated endpoints inside [-3, 3]."""
    g = int(rng.integers(0, g_max + 1))
    while True:
        pts = np.sort(rng.uniform(-3.0, 3.0, size=2 * g + 2))
        if np.min(np.diff(pts)) > 0.15:
            break
    gaps = tuple((pts[2 * k + 1], pts[2 * k + 2]) for k in range(g))
    return GapSet(pts[0], pts[-1], gaps)


@pytest.fixture
def estar_gapset() -> GapSet:
    return make_estar_gapset()


@pytest.fixture
def p1_block() -> GmpBlock:
    return make_p1_block()


@pytest.fixture
def p1_window() -> GmpWindow:
    return make_p1_window()
