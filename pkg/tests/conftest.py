from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from hitlab.chain import dirac, random_chain, read_chain, restrict, uniform
from hitlab.rim import RimParams, build_rim
from hitlab.spectral import principal_triple

FIXTURES = Path(__file__).parent / "fixtures"

# (seed, |A|, |G|, leak range); the small-leak ones are metastable
RANDOM_SPECS = [
    (101, 3, 1, (0.0, 0.3)),
    (102, 5, 2, (0.0, 0.3)),
    (103, 8, 1, (0.0, 0.3)),
    (104, 12, 3, (0.0, 0.3)),
    (105, 20, 2, (0.0, 0.3)),
    (106, 6, 2, (0.0, 0.02)),
    (107, 10, 1, (0.0, 0.02)),
    (108, 15, 3, (0.0, 0.02)),
    (109, 20, 1, (0.05, 0.5)),
    (110, 4, 2, (0.1, 0.9)),
]
RIM_SPECS = [(n, lam) for n in (1, 2) for lam in (0.3, 0.5, 0.9)]


def fixture_path(name: str) -> Path:
    return FIXTURES / name


@lru_cache(maxsize=None)
def fixture_set():
    """Every chain the invariant checks run on, as (name, chain, triple)."""
    out = []
    two, _ = read_chain(fixture_path("two_state.json"))
    out.append(("two_state", two))
    for n, lam in RIM_SPECS:
        out.append((f"rim_n{n}_lam{lam}", build_rim(RimParams(n, lam))))
    for seed, k, g, leak in RANDOM_SPECS:
        chain = random_chain(np.random.default_rng(seed), k, n_goal=g, leak=leak)
        out.append((f"random_{seed}_A{k}_G{g}", chain))
    return tuple((name, c, principal_triple(restrict(c))) for name, c in out)


def fixture_alphas(chain, triple):
    """Each Dirac start in A, uniform on A, and mu_star."""
    alphas = [(f"dirac:{lab}", dirac(chain, lab)) for lab in chain.transient_labels]
    alphas.append(("uniform", uniform(chain)))
    alphas.append(("mu_star", triple.embed(triple.mu_star)))
    return alphas


def fixture_ids():
    return [name for name, _, _ in fixture_set()]


@pytest.fixture(params=range(len(RIM_SPECS) + len(RANDOM_SPECS) + 1), ids=fixture_ids())
def fixture_chain(request):
    return fixture_set()[request.param]


@pytest.fixture(scope="session")
def random4():
    chain, _ = read_chain(fixture_path("random4.json"))
    return chain, principal_triple(restrict(chain))


@pytest.fixture(scope="session")
def two_state():
    chain, _ = read_chain(fixture_path("two_state.json"))
    return chain, principal_triple(restrict(chain))


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    if request.param == "numba":
        pytest.importorskip("numba")
    monkeypatch.setenv("HITLAB_BACKEND", request.param)
    return request.param
