import numpy as np
import pytest

from visprobe.dataset import build_dataset
from visprobe.numerics import ParamBlock
from visprobe.probe import init_probe


def random_probe(seed, d_L=8, hidden=16, d_V=12, dtype=np.float64, scale=None):
    """Seeded probe blocks; ``scale`` widens weights and randomizes biases."""
    params = init_probe(d_L, hidden, d_V, seed, dtype=dtype)
    if scale is not None:
        rng = np.random.default_rng(seed + 1000)
        for b in params.blocks.values():
            b.value[...] = rng.normal(0, scale, b.value.shape)
    return params


def zero_params(d_L, hidden, d_V):
    shapes = {"W_x": (d_L, 4 * hidden), "W_h": (hidden, 4 * hidden), "b": (4 * hidden,),
              "W_out": (hidden, d_V), "b_out": (d_V,)}
    return {n: ParamBlock(n, np.zeros(s)) for n, s in shapes.items()}


def make_dataset(n_cat=4, per_cat=3, d_L=5, d_V=6, seed=0, token_counts=None, **kw):
    """Small valid dataset; record ids dense, each record in its own image."""
    rng = np.random.default_rng(seed)
    n = n_cat * per_cat
    tc = token_counts if token_counts is not None else rng.integers(1, 4, size=n)
    meta = [
        {"record_id": j, "category_id": j // per_cat, "image_id": j, "caption_id": j,
         "token_count": int(tc[j]), "adjective_count": int(j % 2)}
        for j in range(n)
    ]
    lang = rng.normal(size=(int(np.sum(tc)), d_L))
    vis = rng.normal(size=(n, d_V))
    return build_dataset(meta, lang, vis, **kw)


@pytest.fixture
def small_dataset():
    return make_dataset()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
