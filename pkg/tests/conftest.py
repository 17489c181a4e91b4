import numpy as np
import pytest

from factorized_fields import FieldGrid, ModelConfig, init_field


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_field(variant="full", coeff=2.0, basis=0.5, alphas=(1.0,), psi=("sin",)):
    """One level, one basis channel, 1x1 grids, weight 1 and bias 0."""
    cfg = ModelConfig(
        variant=variant,
        levels=1,
        basis_channels=1,
        alphas=alphas,
        psi_set=psi,
        tiles_per_level=(1,),
        basis_resolutions=((1, 1),),
        coeff_resolution=(1, 1),
    )
    field = init_field(cfg)
    if field.coeff is not None:
        field.coeff = FieldGrid(np.full(field.coeff.shape, coeff))
    field.bases = [FieldGrid(np.full(field.bases[0].shape, basis))]
    field.weight = np.ones_like(field.weight)
    field.bias = np.zeros(3)
    return field


def small_config(variant="full", levels=2, tiles=None, channels=2, size=8, **kw):
    tiles = tiles or tuple(2**i for i in range(levels))
    return ModelConfig(
        variant=variant,
        levels=levels,
        basis_channels=channels,
        alphas=kw.pop("alphas", (1.0, 4.0)),
        tiles_per_level=tiles,
        basis_resolutions=tuple((max(2, size >> i), max(2, size >> i)) for i in range(levels)),
        coeff_resolution=(4, 4),
        **kw,
    )


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
