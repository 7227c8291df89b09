import math

import numpy as np
import pytest

from hitlab.chain import dirac, propagate, restrict, survival, uniform
from hitlab.rim import RimParams, build_rim
from hitlab.spectral import (
    hitting_measure,
    local_chain,
    principal_triple,
    rough_bounds,
    separation_table,
    tilt,
    time_shift,
)


def _inverse_iteration(M, shift, left, iters=60):
    k = M.shape[0]
    B = (M.T if left else M) - shift * np.eye(k)
    v = np.ones(k)
    for _ in range(iters):
        v = np.linalg.solve(B, v)
        v /= np.abs(v).sum()
    return np.abs(v)


def test_two_state(two_state):
    _, tr = two_state
    assert tr.lam == pytest.approx(0.5, abs=1e-15)
    assert tr.mu_star.tolist() == [1.0]
    assert tr.gamma == pytest.approx([1.0], abs=1e-15)


def test_rim_n1():
    tr = principal_triple(restrict(build_rim(RimParams(1, 0.5))))
    assert tr.lam == pytest.approx(0.5, abs=1e-12)
    assert tr.mu_star == pytest.approx([0.7083333, 0.125, 0.0416667, 0.125], abs=5e-8)
    assert tr.gamma == pytest.approx([0.3529412, 2, 6, 2], abs=5e-8)


def test_random4_matches_inverse_iteration(random4):
    chain, tr = random4
    M = restrict(chain).matrix
    shift = tr.lam + 1e-3
    mu = _inverse_iteration(M, shift, left=True)
    gamma = _inverse_iteration(M, shift, left=False)
    mu /= mu.sum()
    gamma /= mu @ gamma
    lam = float(mu @ M @ gamma)
    assert abs(lam - tr.lam) <= 1e-10
    assert np.abs(mu - tr.mu_star).max() <= 1e-10
    assert np.abs(gamma - tr.gamma).max() <= 1e-10


def test_triple_invariants(fixture_chain):
    _, chain, tr = fixture_chain
    M = restrict(chain).matrix
    assert 0 < tr.lam < 1
    assert tr.mu_star.min() > 0 and tr.gamma.min() > 0
    assert np.abs(tr.mu_star @ M - tr.lam * tr.mu_star).max() <= 1e-10
    assert np.abs(M @ tr.gamma - tr.lam * tr.gamma).max() <= 1e-10
    assert tr.mu_star.sum() == pytest.approx(1.0, abs=1e-12)
    assert tr.mu_star @ tr.gamma == pytest.approx(1.0, abs=1e-12)


def test_local_chain_two_state(two_state):
    chain, tr = two_state
    lc = local_chain(restrict(chain), tr)
    assert lc.P_tilde.tolist() == [[1.0]]
    assert lc.nu.tolist() == [1.0]


@pytest.mark.parametrize("n, lam", [(1, 0.3), (1, 0.5), (2, 0.9)])
def test_rim_local_chain_is_lazy_walk(n, lam):
    chain = build_rim(RimParams(n, lam))
    sub = restrict(chain)
    lc = local_chain(sub, principal_triple(sub))
    m = 4**n
    x = np.arange(m)
    assert np.allclose(np.diag(lc.P_tilde), 0.5, atol=1e-12)
    assert np.allclose(lc.P_tilde[x, (x + 1) % m], 0.25, atol=1e-12)
    assert np.allclose(lc.P_tilde[x, (x - 1) % m], 0.25, atol=1e-12)


def test_local_chain_invariants(fixture_chain):
    _, chain, tr = fixture_chain
    sub = restrict(chain)
    lc = local_chain(sub, tr)
    g = tr.gamma
    direct = g[None, :] * sub.matrix / (g[:, None] * tr.lam)
    assert np.abs(lc.P_tilde - direct).max() <= 1e-12
    assert np.abs(lc.P_tilde.sum(axis=1) - 1).max() <= 1e-12
    assert np.abs(lc.nu - tr.mu_star * g).max() <= 1e-10
    assert np.abs(lc.nu @ lc.P_tilde - lc.nu).max() <= 1e-10
    for t in (1, 2, 5):
        Pt = np.linalg.matrix_power(lc.P_tilde, t)
        Mt = np.linalg.matrix_power(sub.matrix, t)
        assert np.abs(Pt - g[None, :] * Mt / (g[:, None] * tr.lam**t)).max() <= 1e-12


def test_hitting_measure(random4, two_state):
    chain, tr = random4
    omega = hitting_measure(chain, tr)
    assert omega.sum() == pytest.approx(1.0, abs=1e-12)
    c2, t2 = two_state
    assert hitting_measure(c2, t2) == pytest.approx([1.0], abs=1e-15)
    rim = build_rim(RimParams(2, 0.5))
    assert hitting_measure(rim, principal_triple(restrict(rim))) == pytest.approx([1.0], abs=1e-12)


def test_time_shift_examples(random4):
    chain, tr = random4
    c, d = time_shift(tr.mu_star, tr)
    assert c == pytest.approx(1.0, abs=1e-12) and d == pytest.approx(0.0, abs=1e-10)
    c, _ = time_shift(uniform(chain), tr)
    assert c == pytest.approx(tr.gamma.mean(), rel=1e-14)
    rim = build_rim(RimParams(1, 0.5))
    rtr = principal_triple(restrict(rim))
    c, d = time_shift(dirac(rim, "1"), rtr)
    assert c == pytest.approx(2.0, abs=1e-10)
    assert d == pytest.approx(-1.0, abs=1e-10)
    assert rtr.lam**d == pytest.approx(c, rel=1e-12)
    with pytest.raises(ValueError):
        time_shift(dirac(rim, "G"), rtr)


def test_tilt(random4, two_state):
    chain, tr = random4
    lc = local_chain(restrict(chain), tr)
    assert np.abs(tilt(tr.mu_star, tr) - lc.nu).max() <= 1e-14
    c2, t2 = two_state
    assert tilt(dirac(c2, "s0"), t2).tolist() == [1.0]
    rim = build_rim(RimParams(1, 0.5))
    rtr = principal_triple(restrict(rim))
    assert tilt(dirac(rim, "1"), rtr).tolist() == [0.0, 1.0, 0.0, 0.0]


def test_separation_from_mu_star(random4):
    chain, tr = random4
    table = separation_table(chain, tr, tr.mu_star, 50)
    assert table.sep.max() <= 1e-12
    assert table.sep_at(-1) == 1.0


@pytest.mark.parametrize("lam", [0.3, 0.5, 0.9])
def test_separation_rim_odd_start(lam):
    rim = build_rim(RimParams(1, lam))
    tr = principal_triple(restrict(rim))
    table = separation_table(rim, tr, uniform(rim, ["1", "3"]), 20)
    assert table.sep[0] == 1.0
    assert table.sep[1:].max() <= 1e-12


def test_separation_matches_direct_ratio(fixture_chain):
    _, chain, tr = fixture_chain
    for alpha in (uniform(chain), dirac(chain, chain.transient_labels[0])):
        table = separation_table(chain, tr, alpha, 30)
        for t in range(31):
            w = propagate(chain, alpha, t)[tr.index] / tr.lam**t
            direct = 1 - w / (table.shift_factor * tr.mu_star)
            assert np.abs(table.sep_pointwise[t] - direct).max() <= 1e-10
            assert (w / tr.mu_star).min() == pytest.approx(
                table.shift_factor * (1 - table.sep[t]), abs=1e-10
            )


def test_separation_range_and_monotone(fixture_chain):
    _, chain, tr = fixture_chain
    for alpha in (uniform(chain), dirac(chain, chain.transient_labels[-1])):
        table = separation_table(chain, tr, alpha, 200)
        assert table.sep.min() >= 0 and table.sep.max() <= 1
        assert np.all(np.diff(table.sep) <= 1e-12)


def test_separation_submultiplicative_random4(random4):
    chain, tr = random4
    H = 40
    smax = np.max(
        [separation_table(chain, tr, dirac(chain, x), H).sep for x in chain.transient_labels], axis=0
    )
    for x in chain.transient_labels:
        s = separation_table(chain, tr, dirac(chain, x), H).sep
        for t in range(1, H + 1):
            for u in range(t):
                assert s[t] <= s[u] * smax[t - u] + 1e-12


def test_long_horizon_is_finite():
    rim = build_rim(RimParams(1, 0.3))
    tr = principal_triple(restrict(rim))
    table = separation_table(rim, tr, dirac(rim, "0"), 5000)
    assert np.all(np.isfinite(table.w))
    assert table.sep[-1] <= 1e-12


def test_rough_bounds(random4):
    chain, tr = random4
    lo, hi = rough_bounds(separation_table(chain, tr, tr.mu_star, 5), tr, 5)
    assert lo == pytest.approx(tr.lam**5, rel=1e-12) and hi == pytest.approx(tr.lam**5, rel=1e-12)
    for x in chain.transient_labels:
        table = separation_table(chain, tr, dirac(chain, x), 30)
        surv = survival(chain, dirac(chain, x), 30)
        for t in range(31):
            lo, hi = rough_bounds(table, tr, t)
            assert lo - 1e-12 <= surv[t] <= hi + 1e-12


def test_rough_bounds_rim_tight():
    rim = build_rim(RimParams(1, 0.5))
    tr = principal_triple(restrict(rim))
    alpha = uniform(rim, ["1", "3"])
    lo, _ = rough_bounds(separation_table(rim, tr, alpha, 3), tr, 1)
    assert lo == pytest.approx(1.0, abs=1e-12)
    assert survival(rim, alpha, 1)[1] == pytest.approx(1.0, abs=1e-15)


def test_time_shift_exponent_consistency(fixture_chain):
    _, chain, tr = fixture_chain
    c, d = time_shift(uniform(chain), tr)
    assert math.exp(d * math.log(tr.lam)) == pytest.approx(c, rel=1e-12)
