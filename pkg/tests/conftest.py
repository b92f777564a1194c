import numpy as np
import pytest

from stamp.inference import fit
from stamp.lgm.config import FULL_CORE
from stamp.synth import GroundTruth, realize


def small_truth(**kw) -> GroundTruth:
    """A 4-team, 2-season league scaled down so fits take a second or two."""
    base = dict(n_teams=4, n_seasons=2)
    base.update(kw)
    return GroundTruth(**base)


@pytest.fixture(scope="session")
def small_league():
    return realize(small_truth(), seed=11)


@pytest.fixture(scope="session")
def small_fit(small_league):
    return fit(FULL_CORE, small_league.regular, J=400, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_truth(I, S, scale=0.02, **kw) -> GroundTruth:
    """A league shrunk to ``scale`` of the default exposure, for oracle-sized models."""
    return GroundTruth(n_teams=I, n_seasons=S, target_fga_mean=4032 * scale, exposure_mean=4800 * scale,
                       exposure_sd=240 * scale, **kw)


def tiny_model(I, S, config, seed, scale=0.02):
    from stamp.inference import LatentModel
    from stamp.lgm.layout import assemble_layout

    r = realize(tiny_truth(I, S, scale), seed)
    lay, cons = assemble_layout(config, r.regular.index)
    return LatentModel(lay, cons, r.regular)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
