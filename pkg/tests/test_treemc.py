"""Tree sampling, the path-count sampler, and the exact joint table."""

import io
import math
import os
import subprocess
import sys
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from drlab import (
    LatticeDist,
    PreconditionError,
    ValidationError,
    dr_step,
    evolve,
    joint_law,
    joint_law_exact,
    mc_functional,
    mc_path_functional,
    path_indicator,
    pgf,
    product_formula_check,
    product_weight,
    sample_paths,
    sample_tree,
)
from drlab.treemc import leaf_cdf
from oracles import brute_tree_joint, random_law

F = Fraction

CRITICAL = LatticeDist.from_masses({0: F(4, 5), 2: F(1, 5)})
COIN = LatticeDist.from_masses({0: F(1, 2), 1: F(1, 2)})


# -- samplers ---------------------------------------------------------------


def test_leaf_cdf():
    cdf = leaf_cdf(CRITICAL)
    assert cdf.tolist() == [0.8, 0.8, 1.0]
    assert leaf_cdf(LatticeDist.delta(0)).tolist() == [1.0]


def test_sample_tree_point_mass_depth_one():
    # two leaves worth 1 each: root is always (1 + 1) - 1 = 1
    y = sample_tree(LatticeDist.delta(1), 2, 1, 200, seed=1)
    assert np.all(y == 1)


def test_sample_paths_point_mass_depth_one():
    ps = sample_paths(LatticeDist.delta(1), 2, 1, 200, seed=1)
    assert np.all(ps.y == 1)
    assert np.all(ps.n_zero == 0)
    assert np.all(ps.n_total == 2)


def test_sample_paths_depth_zero():
    ps = sample_paths(CRITICAL, 2, 0, 4000, seed=3)
    assert np.all(ps.n_total == 1)
    assert np.array_equal(ps.n_zero == 1, ps.y == 0)
    assert set(np.unique(ps.y)) <= {0, 2}


def test_sample_paths_coin_outcomes():
    ps = sample_paths(COIN, 2, 1, 40000, seed=7)
    seen = Counter(zip(ps.y.tolist(), ps.n_zero.tolist(), ps.n_total.tolist()))
    assert set(seen) == {(0, 0, 0), (0, 1, 2), (1, 0, 2)}
    # frequencies against 1/4, 1/2, 1/4 at four sigma
    n = 40000
    for key, prob in [((0, 0, 0), 0.25), ((0, 1, 2), 0.5), ((1, 0, 2), 0.25)]:
        sigma = math.sqrt(prob * (1 - prob) / n)
        assert abs(seen[key] / n - prob) < 4 * sigma


def test_path_sampler_y_marginal_is_the_plain_sampler():
    for depth in (0, 1, 3):
        y = sample_tree(CRITICAL, 2, depth, 3000, seed=17)
        ps = sample_paths(CRITICAL, 2, depth, 3000, seed=17)
        assert np.array_equal(y, ps.y)


def test_path_count_bounds():
    ps = sample_paths(CRITICAL, 2, 5, 5000, seed=23)
    assert np.all(ps.n_zero >= 0)
    assert np.all(ps.n_zero <= ps.n_total)
    assert np.all(ps.n_total <= 2**5)
    assert np.all(ps.n_total[ps.y >= 1] >= 1)


def test_samplers_are_deterministic_and_prefix_stable():
    a = sample_paths(CRITICAL, 2, 4, 1000, seed=5)
    b = sample_paths(CRITICAL, 2, 4, 1000, seed=5)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.n_zero, b.n_zero)
    c = sample_paths(CRITICAL, 2, 4, 2500, seed=5)
    assert np.array_equal(a.y, c.y[:1000])
    assert np.array_equal(a.n_total, c.n_total[:1000])
    assert not np.array_equal(a.y, sample_paths(CRITICAL, 2, 4, 1000, seed=6).y)


def test_numba_and_numpy_paths_agree():
    code = (
        "import numpy as np\n"
        "from fractions import Fraction as F\n"
        "from drlab import LatticeDist, sample_paths\n"
        "d = LatticeDist.from_masses({0: F(4, 5), 2: F(1, 5)})\n"
        "ps = sample_paths(d, 2, 4, 2000, seed=11)\n"
        "print(ps.y.sum(), ps.n_zero.sum(), ps.n_total.sum())\n"
    )
    env = dict(os.environ, DR_NO_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True, env=env, check=True
    )
    ps = sample_paths(CRITICAL, 2, 4, 2000, seed=11)
    assert out.stdout.split() == [
        str(ps.y.sum()), str(ps.n_zero.sum()), str(ps.n_total.sum())
    ]


def test_sampler_validation():
    with pytest.raises(ValidationError):
        sample_tree(CRITICAL, 1, 2, 10, seed=0)
    with pytest.raises(ValidationError):
        sample_tree(CRITICAL, 2, -1, 10, seed=0)
    with pytest.raises(ValidationError):
        sample_tree(CRITICAL, 2, 2, 0, seed=0)
    with pytest.raises(ValidationError):
        sample_tree(CRITICAL, 2, 2, 10, seed=-4)


# -- monte carlo functionals ------------------------------------------------


def test_mc_functional_tracks_exact_mean():
    exact = evolve(CRITICAL, 2, 6).expectations[6]
    res = mc_functional(CRITICAL, 2, 6, 40000, 2, lambda y: y.astype(np.float64))
    assert res.size == 40000
    assert abs(res.mean - float(exact)) < 4 * res.stderr
    assert res.margin(3.0) == pytest.approx(3.0 * res.stderr)


def test_mc_path_functional_product_weight():
    exact = joint_law(CRITICAL, 2, 4).open_path_weighted_mean()
    res = mc_path_functional(CRITICAL, 2, 4, 30000, 13, product_weight(2))
    assert abs(res.mean - exact) < 4 * res.stderr


def test_mc_path_functional_indicator():
    exact = joint_law(CRITICAL, 2, 3).bridge_expectation(2, 0)
    res = mc_path_functional(CRITICAL, 2, 3, 30000, 29, path_indicator(2, 0))
    assert abs(res.mean - exact) < 4 * res.stderr


def test_functional_builders_validate():
    with pytest.raises(ValidationError):
        product_weight(1)
    with pytest.raises(ValidationError):
        path_indicator(-1, 0)
    with pytest.raises(ValidationError):
        path_indicator(2, -1)


# -- joint law --------------------------------------------------------------


def joint_to_dict(jl):
    out = {}
    for y in range(jl.table.shape[0]):
        for j in range(jl.table.shape[1]):
            if jl.table[y, j]:
                out[(y, j)] = jl.table[y, j]
    return out


def test_joint_law_one_step_pinned():
    got = joint_to_dict(joint_law(CRITICAL, 2, 1))
    assert set(got) == {(0, 0), (1, 1), (3, 0)}
    assert got[(0, 0)] == pytest.approx(16 / 25)
    assert got[(1, 1)] == pytest.approx(8 / 25)
    assert got[(3, 0)] == pytest.approx(1 / 25)


def test_joint_law_exact_one_step_pinned():
    got = joint_law_exact(CRITICAL, 2, 1)
    assert got == {(0, 0): F(16, 25), (1, 1): F(8, 25), (3, 0): F(1, 25)}


def test_joint_routes_agree_with_enumeration():
    import random

    rng = random.Random(31)
    cases = [(2, 1), (2, 2), (3, 1), (3, 2)]
    for _ in range(4):
        masses = random_law(rng, max_top=2)
        d = LatticeDist.from_masses(masses)
        for m, depth in cases:
            brute = brute_tree_joint(masses, m, depth)
            marg = {}
            for (y, nz, nt), w in brute.items():
                marg[(y, nz)] = marg.get((y, nz), F(0)) + w
            assert joint_law_exact(d, m, depth) == marg
            got = joint_to_dict(joint_law(d, m, depth))
            assert set(got) == set(marg)
            for key, w in marg.items():
                assert got[key] == pytest.approx(float(w), abs=1e-14)


def test_path_sampler_matches_enumeration_frequencies():
    masses = {0: F(1, 2), 1: F(1, 4), 2: F(1, 4)}
    brute = brute_tree_joint(masses, 2, 2)
    n = 60000
    ps = sample_paths(LatticeDist.from_masses(masses), 2, 2, n, seed=37)
    seen = Counter(zip(ps.y.tolist(), ps.n_zero.tolist(), ps.n_total.tolist()))
    assert set(seen) <= set(brute)
    for key, prob in brute.items():
        p = float(prob)
        sigma = math.sqrt(p * (1 - p) / n)
        assert abs(seen.get(key, 0) / n - p) < 4.5 * sigma + 1e-9


def test_joint_root_marginal_matches_evolution():
    exact = evolve(CRITICAL, 2, 5).laws[5]
    marg = joint_law(CRITICAL, 2, 5).root_marginal()
    for k in range(exact.support_max + 1):
        assert marg.mass(k) == pytest.approx(float(exact.mass(k)), abs=1e-13)


def test_joint_law_caps():
    with pytest.raises(ValidationError):
        joint_law(CRITICAL, 2, 13)  # 2**13 past the table cap
    with pytest.raises(ValidationError):
        joint_law_exact(CRITICAL, 2, 9)  # 2**9 past the exact cap
    with pytest.raises(ValidationError):
        joint_law_exact(CRITICAL.to_f64(), 2, 2)


def test_joint_law_to_csv():
    buf = io.StringIO()
    joint_law(CRITICAL, 2, 1).to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "k,j,mass"
    cells = [ln.split(",") for ln in lines[1:]]
    assert [(c[0], c[1]) for c in cells] == [("0", "0"), ("1", "1"), ("3", "0")]
    assert float(cells[1][2]) == pytest.approx(8 / 25)


def test_bridge_expectation_pinned():
    jl = joint_law(CRITICAL, 2, 1)
    assert jl.bridge_expectation(1, 1) == pytest.approx(8 / 25)
    assert jl.bridge_expectation(2, 1) == 0.0
    assert jl.bridge_expectation(0, 9) == 0.0
    with pytest.raises(ValidationError):
        jl.bridge_expectation(-1, 0)


# -- the product identity ---------------------------------------------------


def test_open_path_weighted_mean_pinned():
    assert joint_law(CRITICAL, 2, 1).open_path_weighted_mean() == pytest.approx(32 / 25)


def test_product_formula_exact():
    for n in range(1, 5):
        rep = product_formula_check(CRITICAL, 2, n)
        assert rep.backend == "rational"
        assert rep.rel_err == 0.0
        assert rep.delta_residual == 0.0
    one = product_formula_check(CRITICAL, 2, 1)
    assert one.lhs == pytest.approx(32 / 25)
    assert one.rhs == pytest.approx(32 / 25)


def test_product_formula_float():
    rep = product_formula_check(CRITICAL.to_f64(), 2, 6, tol_delta=1e-12)
    assert rep.backend == "f64"
    assert rep.rel_err < 1e-10


def test_product_formula_refuses_off_critical_laws():
    with pytest.raises(PreconditionError):
        product_formula_check(COIN, 2, 2)


def test_product_identity_needs_criticality():
    # on the coin law (not critical) the two sides genuinely differ
    joint = joint_law_exact(COIN, 2, 1)
    lhs = sum(w * 2**y * (1 + y) * j for (y, j), w in joint.items())
    rhs = F(1, 2) * pgf(COIN, 2)
    assert lhs == F(1, 2)
    assert rhs == F(3, 4)
