import json
from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from dynperc.environment import ConditionedAt, Explicit, Stationary
from dynperc.errors import ConfigError, UnsupportedInstance
from dynperc.oracle import (
    ExactChain, exact_cover, exact_hitting, exact_tv_curve, hitting_vector, transient_laws,
    walker_marginal,
)

# Pinned by a sparse direct solve and cross-checked against 10^6 eager
# replications (4.85141 +- 0.00499 and 7.28879 +- 0.00563).
H_STAR = Fraction(10401, 2144)
COVER_STAR = Fraction(23431, 3216)


def test_pinned_constants():
    assert exact_hitting(3, 0.5, 1.0, 0, 1) == pytest.approx(float(H_STAR), abs=1e-9)
    assert exact_cover(3, 0.5, 1.0, 0) == pytest.approx(float(COVER_STAR), abs=1e-9)


@pytest.mark.parametrize("n", [3, 4, 5])
@pytest.mark.parametrize("p,mu", [(0.3, 0.5), (0.5, 1.0), (0.9, 0.2)])
def test_generator_rows_and_stationarity(n, p, mu):
    chain = ExactChain(n, p, mu)
    assert np.abs(np.asarray(chain.Q.sum(axis=1))).max() < 1e-12
    assert np.abs(chain.stationary() @ chain.Q).max() < 1e-10
    cover = ExactChain(n, p, mu, cover=True)
    assert np.abs(np.asarray(cover.Q.sum(axis=1))).max() < 1e-12


def test_rates_follow_the_model():
    chain = ExactChain(4, 0.3, 0.5)
    for a, b, r in chain.rates():
        xa, ea, _ = chain.unpack(a)
        xb, eb, _ = chain.unpack(b)
        if xa == xb:
            flipped = ea ^ eb
            assert bin(flipped).count("1") == 1
            turned_on = eb & flipped
            assert r == pytest.approx(0.5 * (0.3 if turned_on else 0.7))
        else:
            assert ea == eb and r == 0.5
            edge = xa if xb == (xa + 1) % 4 else xb
            assert ea >> edge & 1


def test_hit_start_is_zero():
    assert exact_hitting(4, 0.3, 1.0, 2, 2) == 0.0


def test_degenerate_p1_is_simple_random_walk():
    res = exact_hitting(3, 1.0, 1.0, 0, 1, full=True)
    assert res.value == pytest.approx(2.0, abs=1e-12)
    assert abs(exact_hitting(3, 0.999, 1.0, 0, 1) - 2.0) < 1e-2
    # unit-rate walk on the n-cycle: k(n-k)
    for n in (4, 5):
        for k in range(1, n):
            assert exact_hitting(n, 1.0, 0.7, 0, k) == pytest.approx(k * (n - k), abs=1e-9)


@pytest.mark.parametrize("init", [Stationary(), ConditionedAt(0)])
def test_hitting_solution_satisfies_linear_relation(init):
    chain = ExactChain(5, 0.3, 0.5)
    h, res = hitting_vector(chain, 2)
    assert res < 1e-10
    x_of = np.arange(chain.n_states) // chain.n_env
    lhs = chain.Q @ h
    assert np.abs(lhs[x_of != 2] + 1.0).max() < 1e-9
    assert np.all(h[x_of == 2] == 0)
    r = exact_hitting(5, 0.3, 0.5, 0, 2, init, full=True)
    assert r.residual < 1e-10
    assert r.value == pytest.approx(chain.initial(0, init) @ h)


def test_explicit_law_points_to_one_state():
    closed = Explicit(np.zeros(4, dtype=np.uint8))
    cond = exact_hitting(4, 0.3, 1.0, 0, 2, ConditionedAt(0))
    point = exact_hitting(4, 0.3, 1.0, 0, 2, closed)
    assert point > cond  # all edges closed is a worse start than only the local ones


def test_cover_dominates_hitting():
    for init in (Stationary(), ConditionedAt(0)):
        cov = exact_cover(3, 0.5, 1.0, 0, init)
        assert cov >= max(exact_hitting(3, 0.5, 1.0, 0, y, init) for y in (1, 2))
        cov5 = exact_cover(5, 0.3, 0.5, 0, init)
        assert cov5 >= max(exact_hitting(5, 0.3, 0.5, 0, y, init) for y in range(5))


def test_cover_chain_marginalizes():
    # summing out V reproduces the (x, eta) rates
    n = 4
    base = ExactChain(n, 0.3, 0.5)
    cover = ExactChain(n, 0.3, 0.5, cover=True)
    for x in range(n):
        V = 1 << x
        for eta in range(base.n_env):
            s = cover.index(x, eta, V)
            row = cover.Q.getrow(s)
            agg = np.zeros(base.n_states)
            for j, r in zip(row.indices, row.data):
                xb, eb, _ = cover.unpack(j)
                agg[base.index(xb, eb)] += r
            assert np.allclose(agg, base.Q.getrow(base.index(x, eta)).toarray().ravel())


def test_mu_scaling_at_n3_recorded():
    # the 1/mu law is asymptotic; at n=3 halving mu less than doubles the cover time
    a = exact_cover(3, 0.5, 0.5, 0)
    b = exact_cover(3, 0.5, 1.0, 0)
    assert a < 2 * b
    assert a > b


def test_tv_curve_endpoints_and_monotonicity():
    n, p = 5, 0.3
    times = [0, 0.5, 1, 2, 5, 10, 20, 50, 100, 300]
    tv = exact_tv_curve(n, p, 0.5, 0, Explicit(np.zeros(5, dtype=np.uint8)), times)
    pi0 = (1 / n) * (1 - p) ** n
    assert tv[0] == pytest.approx(1 - pi0, abs=1e-12)
    assert all(b <= a + 1e-12 for a, b in zip(tv, tv[1:]))
    assert tv[-1] < 1e-6


def test_uniformization_matches_expm():
    chain = ExactChain(4, 0.3, 0.5)
    pi0 = chain.initial(0, ConditionedAt(0))
    times = [0.3, 2.0, 7.5]
    ours = transient_laws(chain, pi0, times)
    for t, law in zip(times, ours):
        ref = expm_multiply(sp.csr_matrix(chain.Q.T) * t, pi0)
        assert np.abs(law - ref).max() < 1e-10
        assert walker_marginal(law, chain).sum() == pytest.approx(1.0)


def test_unsupported_instances():
    with pytest.raises(UnsupportedInstance):
        exact_hitting(6, 0.3, 1.0, 0, 1)
    with pytest.raises(UnsupportedInstance):
        exact_cover(3, 0.3, 1.0, 0, d=2)
    with pytest.raises(ConfigError):
        exact_hitting(4, 0.3, 1.5, 0, 1)
    with pytest.raises(ConfigError):
        exact_tv_curve(4, 0.3, 1.0, 0, Stationary(), [-1.0])


def test_result_json_schema():
    r = exact_cover(3, 0.5, 1.0, 0, full=True)
    doc = json.loads(r.to_json())
    assert set(doc) == {"instance", "method", "value", "residual", "states"}
    assert doc["residual"] < 1e-10
