import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hitlab.chain import (
    MarkovChain,
    absorption_profile,
    load_chain,
    parse_alpha,
    propagate,
    read_chain,
    restrict,
    survival,
    uniform,
)
from hitlab.errors import ChainSpecError, NonPrimitiveError
from hitlab.rim import RimParams, build_rim
from hitlab.spectral import principal_triple

from conftest import fixture_path


TWO_DOC = {"states": ["s0", "s1"], "absorbing": ["s1"], "P": [[0.5, 0.5], [0, 1]]}


def test_two_state_loads():
    chain = load_chain(TWO_DOC)
    assert chain.transient_labels == ("s0",)
    assert chain.absorbing == ("s1",)


def test_rim_n1_has_five_states():
    chain = build_rim(RimParams(1, 0.5))
    assert chain.n == 5
    assert len(chain.transient) == 4


def test_goal_rows_become_self_loops():
    doc = {"states": ["a", "b"], "absorbing": ["b"], "P": [[0.5, 0.5], [0.3, 0.7]]}
    chain = load_chain(doc)
    assert chain.P[1].tolist() == [0.0, 1.0]


@pytest.mark.parametrize(
    "doc, message",
    [
        ({"states": ["a", "b"], "absorbing": ["b"], "P": [[0.5, 0.4], [0, 1]]}, "non-stochastic row"),
        ({"states": ["a", "a"], "absorbing": ["a"], "P": [[1, 0], [0, 1]]}, "duplicate"),
        ({"states": ["a", "b"], "absorbing": [], "P": [[1, 0], [0, 1]]}, None),
        ({"states": ["a", "b"], "absorbing": ["a", "b"], "P": [[1, 0], [0, 1]]}, "A is empty"),
        ({"states": ["a", "b"], "absorbing": ["c"], "P": [[1, 0], [0, 1]]}, "not in states"),
        ({"states": ["a", "b"], "absorbing": ["b"], "P": [[1.5, -0.5], [0, 1]]}, "outside"),
        ({"states": ["a", "b"], "absorbing": ["b"], "P": [[0.5, 0.5]]}, None),
        ({"states": ["a"], "P": [[1]]}, "schema"),
    ],
)
def test_load_rejects(doc, message):
    with pytest.raises(ChainSpecError, match=message):
        load_chain(doc)


def test_tiny_row_defect_is_renormalized():
    doc = {"states": ["a", "b"], "absorbing": ["b"], "P": [[0.5, 0.5 - 5e-13], [0, 1]]}
    chain = load_chain(doc)
    assert chain.P[0].sum() == pytest.approx(1.0, abs=1e-15)


def test_restrict_two_state():
    sub = restrict(load_chain(TWO_DOC))
    assert sub.matrix.tolist() == [[0.5]]
    assert sub.primitivity_exponent == 1


def test_restrict_rim_primitive():
    sub = restrict(build_rim(RimParams(1, 0.5)))
    assert sub.matrix.shape == (4, 4)
    assert sub.primitivity_exponent <= (4 - 1) ** 2 + 1


def test_restrict_reducible():
    P = [[0.5, 0, 0.5], [0, 0.5, 0.5], [0, 0, 1]]
    with pytest.raises(NonPrimitiveError, match="reducible"):
        restrict(MarkovChain.from_matrix(["a", "b", "g"], ["g"], P))


def test_restrict_periodic():
    P = [[0, 0.9, 0.1], [0.9, 0, 0.1], [0, 0, 1]]
    with pytest.raises(NonPrimitiveError, match="periodic"):
        restrict(MarkovChain.from_matrix(["a", "b", "g"], ["g"], P))


def test_propagate_two_state():
    chain = load_chain(TWO_DOC)
    mu = propagate(chain, [1.0, 0.0], 3)
    assert mu == pytest.approx([0.125, 0.875], abs=1e-15)


def test_propagate_rim_uniform_on_odd_states():
    chain = build_rim(RimParams(1, 0.5))
    mu = propagate(chain, uniform(chain, ["1", "3"]), 1)
    assert mu[:4] == pytest.approx([0.7083333, 0.125, 0.0416667, 0.125], abs=5e-8)
    assert mu[4] == pytest.approx(0.0, abs=1e-15)


def test_propagate_identity(random4):
    chain, _ = random4
    alpha = uniform(chain)
    assert np.array_equal(propagate(chain, alpha, 0), alpha)


def test_survival_two_state():
    chain = load_chain(TWO_DOC)
    assert survival(chain, [1.0, 0.0], 20) == pytest.approx(0.5 ** np.arange(21), rel=1e-14)


def test_survival_rim_odd_start():
    chain = build_rim(RimParams(1, 0.5))
    assert survival(chain, uniform(chain, ["1", "3"]), 3)[3] == pytest.approx(0.25, abs=1e-14)


def _mp_survival(chain, alpha, horizon, prec=128):
    with mpmath.workprec(prec):
        P = [[mpmath.mpf(float(x)) for x in row] for row in chain.P]
        mu = [mpmath.mpf(float(x)) for x in alpha]
        A = list(chain.transient)
        out = []
        for _ in range(horizon + 1):
            out.append(float(mpmath.fsum(mu[i] for i in A)))
            mu = [mpmath.fsum(mu[i] * P[i][j] for i in range(chain.n)) for j in range(chain.n)]
        return np.array(out)


def test_survival_matches_high_precision(random4):
    chain, _ = random4
    for alpha in (uniform(chain), parse_alpha(chain, "dirac:x2")):
        exact = _mp_survival(chain, alpha, 60)
        assert np.abs(survival(chain, alpha, 60) - exact).max() <= 1e-12


def test_absorption_single_goal():
    chain = build_rim(RimParams(1, 0.3))
    assert absorption_profile(chain, uniform(chain)) == pytest.approx([1.0], abs=1e-12)


def test_absorption_symmetric():
    P = [[0.5, 0.25, 0.25], [0, 1, 0], [0, 0, 1]]
    chain = MarkovChain.from_matrix(["a", "l", "r"], ["l", "r"], P)
    assert absorption_profile(chain, [1, 0, 0]) == pytest.approx([0.5, 0.5], abs=1e-15)


def test_absorption_is_limit_of_propagation(random4):
    chain, triple = random4
    alpha = uniform(chain)
    limit = absorption_profile(chain, alpha)
    for t in (10, 50, 100, 200):
        diff = np.abs(propagate(chain, alpha, t)[chain.goal] - limit).max()
        assert diff <= triple.lam**t * len(chain.transient) + 1e-14


@settings(max_examples=40, deadline=None)
@given(t=st.integers(0, 40), u=st.integers(0, 40), start=st.integers(0, 3))
def test_propagation_semigroup(t, u, start):
    chain, _ = read_chain(fixture_path("random4.json"))
    alpha = np.zeros(chain.n)
    alpha[start] = 1.0
    lhs = propagate(chain, propagate(chain, alpha, t), u)
    assert np.abs(lhs - propagate(chain, alpha, t + u)).max() <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_survival_nonincreasing_in_unit_interval(seed):
    from hitlab.chain import random_chain

    chain = random_chain(np.random.default_rng(seed), 6, n_goal=2)
    s = survival(chain, uniform(chain), 50)
    assert s.min() >= 0 and s.max() <= 1
    assert np.all(np.diff(s) <= 1e-15)


def test_parse_alpha_grammar(random4, tmp_path):
    chain, _ = random4
    assert parse_alpha(chain, "dirac:x1")[chain.index["x1"]] == 1.0
    assert parse_alpha(chain, "uniform").sum() == pytest.approx(1.0)
    a = parse_alpha(chain, "uniform-set:x0,x3")
    assert a[chain.index["x0"]] == a[chain.index["x3"]] == 0.5
    wfile = tmp_path / "w.json"
    wfile.write_text(json.dumps({"x0": 1, "x2": 3}))
    assert parse_alpha(chain, f"weights:{wfile}")[chain.index["x2"]] == 0.75
    for bad in ("dirac:nope", "banana", "uniform-set:", f"weights:{tmp_path / 'missing'}"):
        with pytest.raises(ChainSpecError):
            parse_alpha(chain, bad)


def test_document_alpha_roundtrip(tmp_path):
    doc = dict(TWO_DOC, alpha={"kind": "dirac", "value": "s0"})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    chain, alpha = read_chain(path)
    assert alpha.tolist() == [1.0, 0.0]
    principal_triple(restrict(chain))
