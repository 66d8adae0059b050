"""Lattice-law arithmetic: construction, convolution, one map step, moments."""

import math
import random
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from drlab import (
    CapacityError,
    LatticeDist,
    MomentOverflowError,
    SystemSpec,
    ValidationError,
    convolve,
    convolve_power,
    dist_from_json,
    dist_to_json,
    dr_step,
    dr_step_with_loss,
    expectation,
    mix,
    moment_panel,
    pgf,
    pgf_derivatives,
    stochastically_leq,
    truncate_down,
    validate_star,
    weighted_moment,
)
from oracles import brute_dr_step, random_law

F = Fraction

COIN = LatticeDist.from_masses({0: F(1, 2), 1: F(1, 2)})
MIXED = LatticeDist.from_masses({0: F(4, 5), 2: F(1, 5)})


def as_dict(d):
    return {k: d.mass(k) for k in range(d.support_max + 1) if d.mass(k)}


# -- construction -----------------------------------------------------------


def test_from_masses_mapping_equals_sequence():
    a = LatticeDist.from_masses({0: F(4, 5), 2: F(1, 5)})
    b = LatticeDist.from_masses([F(4, 5), 0, F(1, 5)])
    assert a == b
    assert a.is_rational
    assert a.support_max == 2
    assert len(a) == 3
    assert a.mass(1) == 0
    assert a.mass(99) == 0
    assert a.total_mass() == 1


def test_backend_inference():
    assert LatticeDist.from_masses([1]).is_rational
    assert not LatticeDist.from_masses([0.5, 0.5]).is_rational
    forced = LatticeDist.from_masses([F(1, 2), F(1, 2)], backend="f64")
    assert not forced.is_rational
    assert forced.mass(1) == 0.5


def test_delta_law():
    d = LatticeDist.delta(3, "rational")
    assert as_dict(d) == {3: 1}
    assert expectation(d) == 3
    assert LatticeDist.delta(0).support_max == 0


def test_trailing_zeros_trimmed():
    d = LatticeDist.from_masses([F(1, 2), F(1, 2), 0, 0])
    assert len(d) == 2


def test_construction_rejections():
    with pytest.raises(ValidationError):
        LatticeDist.from_masses({})
    with pytest.raises(ValidationError):
        LatticeDist.from_masses([])
    with pytest.raises(ValidationError):
        LatticeDist.from_masses({-1: F(1)})
    with pytest.raises(ValidationError):
        LatticeDist.from_masses({0: F(-1, 2), 1: F(3, 2)})
    with pytest.raises(ValidationError):
        LatticeDist.from_masses({0: F(1, 2)})  # mass 1/2 total
    with pytest.raises(ValidationError):
        LatticeDist.from_masses([0.4, 0.7])  # off by more than MASS_TOL
    with pytest.raises(ValidationError):
        LatticeDist.from_masses([0.5, F(1, 2)], backend="rational")
    with pytest.raises(ValidationError):
        LatticeDist.from_masses([1], backend="decimal")
    with pytest.raises(ValidationError):
        LatticeDist.delta(-1)


def test_to_f64_round_down():
    f = MIXED.to_f64()
    assert not f.is_rational
    assert f.mass(2) == pytest.approx(0.2)
    assert f.as_float_array().tolist() == [0.8, 0.0, 0.2]


# -- convolution and the map step ------------------------------------------


def test_convolve_power_coin():
    sq = convolve_power(COIN, 2)
    assert as_dict(sq) == {0: F(1, 4), 1: F(1, 2), 2: F(1, 4)}


def test_convolve_pairwise_matches_power():
    d = LatticeDist.from_masses({0: F(1, 3), 1: F(1, 3), 3: F(1, 3)})
    assert convolve(convolve(d, d), d) == convolve_power(d, 3)


def test_convolve_backend_mismatch():
    with pytest.raises(ValidationError):
        convolve(COIN, COIN.to_f64())


def test_convolve_hard_cap():
    wide = LatticeDist.delta(600, "rational")
    with pytest.raises(CapacityError):
        convolve(wide, wide, hard_cap=1000)


def test_dr_step_coin():
    assert as_dict(dr_step(COIN, 2)) == {0: F(3, 4), 1: F(1, 4)}


def test_dr_step_mixed():
    nxt = dr_step(MIXED, 2)
    assert as_dict(nxt) == {0: F(16, 25), 1: F(8, 25), 3: F(1, 25)}


def test_dr_step_loss_free_below_cap():
    nxt, lost = dr_step_with_loss(MIXED, 2)
    assert lost == 0
    assert nxt == dr_step(MIXED, 2)


@given(
    st.lists(st.integers(min_value=0, max_value=9), min_size=1, max_size=6).filter(any),
    st.integers(min_value=2, max_value=3),
)
def test_dr_step_matches_brute_force(weights, m):
    tot = sum(weights)
    masses = {k: F(w, tot) for k, w in enumerate(weights) if w}
    got = dr_step(LatticeDist.from_masses(masses), m)
    assert as_dict(got) == brute_dr_step(masses, m)


@given(
    st.lists(st.integers(min_value=0, max_value=9), min_size=1, max_size=6).filter(any),
    st.integers(min_value=2, max_value=4),
)
def test_dr_step_conserves_mass(weights, m):
    tot = sum(weights)
    d = LatticeDist.from_masses({k: F(w, tot) for k, w in enumerate(weights) if w})
    assert dr_step(d, m).total_mass() == 1


def test_dr_step_preserves_dominance():
    rng = random.Random(11)
    for _ in range(25):
        lower = LatticeDist.from_masses(random_law(rng))
        shift = {k + 1: v for k, v in as_dict(lower).items()}
        upper = LatticeDist.from_masses(shift)
        assert stochastically_leq(lower, upper)
        assert stochastically_leq(dr_step(lower, 2), dr_step(upper, 2))


# -- generating function and moments ---------------------------------------


def test_pgf_pinned_values():
    assert pgf(MIXED, 2) == F(8, 5)
    assert pgf(MIXED, 1) == 1
    assert pgf(MIXED, 0) == F(4, 5)


def test_pgf_derivatives_pinned():
    h, h1, h2, h3 = pgf_derivatives(MIXED, 2)
    assert (h, h1, h2, h3) == (F(8, 5), F(4, 5), F(2, 5), 0)
    assert pgf_derivatives(MIXED, 2, order=1) == (F(8, 5), F(4, 5))
    with pytest.raises(ValidationError):
        pgf_derivatives(MIXED, 2, order=4)


def test_pgf_of_convolution_is_product():
    a = LatticeDist.from_masses({0: F(1, 3), 2: F(2, 3)})
    b = LatticeDist.from_masses({1: F(1, 4), 3: F(3, 4)})
    for s in (F(1, 2), F(3), F(7, 5)):
        assert pgf(convolve(a, b), s) == pgf(a, s) * pgf(b, s)


def test_dr_step_pgf_identity():
    # G(s) = H(s)^m / s + (1 - 1/s) H(0)^m   for the stepped law
    for m in (2, 3):
        for s in (F(1, 2), F(2), F(5, 3)):
            g = pgf(dr_step(MIXED, m), s)
            h = pgf(MIXED, s)
            assert g == h**m / s + (1 - 1 / s) * pgf(MIXED, 0) ** m


def test_weighted_moment_pinned():
    assert weighted_moment(MIXED, 0, 2) == F(8, 5)
    assert weighted_moment(MIXED, 1, 2) == F(8, 5)
    assert weighted_moment(MIXED, 3, 2) == F(32, 5)
    assert weighted_moment(MIXED, 1, 1) == expectation(MIXED) == F(2, 5)
    with pytest.raises(ValidationError):
        weighted_moment(MIXED, 4, 2)


def test_weighted_moment_overflow_names_the_fix():
    spike = LatticeDist.from_masses({5000: 1.0})
    with pytest.raises(MomentOverflowError, match="rational"):
        weighted_moment(spike, 1, 2.0)
    with pytest.raises(MomentOverflowError, match="rational"):
        pgf(spike, 2.0)


def test_moment_panel_pinned():
    panel = moment_panel(LatticeDist.from_masses({0: F(3, 4), 2: F(1, 4)}), 2)
    assert panel.h == F(7, 4)
    assert panel.h1 == 2
    assert panel.delta == F(1, 4)
    trivial = moment_panel(LatticeDist.delta(0, "rational"), 2)
    assert trivial.h == 1
    assert trivial.delta == -1


def test_moment_panel_matches_weighted_moments():
    rng = random.Random(5)
    for _ in range(10):
        d = LatticeDist.from_masses(random_law(rng))
        for m in (2, 3):
            panel = moment_panel(d, m)
            assert panel.h == weighted_moment(d, 0, m)
            assert panel.h1 == weighted_moment(d, 1, m)
            assert panel.h2 == weighted_moment(d, 2, m)
            assert panel.h3 == weighted_moment(d, 3, m)
            assert panel.delta == (m - 1) * panel.h1 - panel.h


def test_float_moments_track_exact():
    rng = random.Random(7)
    for _ in range(10):
        d = LatticeDist.from_masses(random_law(rng))
        f = d.to_f64()
        for j in range(4):
            exact = float(weighted_moment(d, j, 2))
            assert weighted_moment(f, j, 2.0) == pytest.approx(exact, rel=1e-12)


# -- truncation -------------------------------------------------------------


def test_truncate_down_pinned():
    cut, lost = truncate_down(MIXED, 1)
    assert as_dict(cut) == {0: 1}
    assert lost == F(2, 5)


def test_truncate_down_noop_above_support():
    cut, lost = truncate_down(MIXED, 2)
    assert cut == MIXED
    assert lost == 0


def test_truncate_down_is_minorant():
    rng = random.Random(3)
    for _ in range(20):
        d = LatticeDist.from_masses(random_law(rng))
        cap = rng.randint(0, d.support_max)
        cut, lost = truncate_down(d, cap)
        assert stochastically_leq(cut, d)
        assert expectation(d) - expectation(cut) == lost
        assert cut.total_mass() == 1
    with pytest.raises(ValidationError):
        truncate_down(d, -1)


# -- mixtures and dominance -------------------------------------------------


def test_mix_pinned():
    spec = SystemSpec(m=2, p=F(1, 5), star=LatticeDist.delta(2, "rational"))
    assert mix(spec) == MIXED


def test_mix_float():
    spec = SystemSpec(m=2, p=0.25, star=LatticeDist.delta(2))
    d = mix(spec)
    assert d.as_float_array().tolist() == [0.75, 0.0, 0.25]


def test_system_spec_rejects_mixed_backends():
    with pytest.raises(ValidationError):
        SystemSpec(m=2, p=0.2, star=LatticeDist.delta(2, "rational"))
    with pytest.raises(ValidationError):
        SystemSpec(m=1, p=F(1, 5), star=LatticeDist.delta(2, "rational"))
    with pytest.raises(ValidationError):
        SystemSpec(m=2, p=F(6, 5), star=LatticeDist.delta(2, "rational"))


def test_validate_star():
    validate_star(LatticeDist.delta(2, "rational"))
    with pytest.raises(ValidationError):
        validate_star(MIXED)  # mass at 0
    with pytest.raises(ValidationError):
        validate_star(LatticeDist.delta(1, "rational"))  # nothing at 2+


def test_stochastic_order_basics():
    low = LatticeDist.delta(0, "rational")
    assert stochastically_leq(low, COIN)
    assert not stochastically_leq(COIN, low)
    assert stochastically_leq(COIN, COIN)
    # float route tolerates representation dust but not real gaps
    assert stochastically_leq(COIN.to_f64(), LatticeDist.delta(1))
    assert not stochastically_leq(LatticeDist.delta(1), COIN.to_f64())


# -- serialization ----------------------------------------------------------


def test_json_round_trip_rational():
    doc = dist_to_json(MIXED)
    assert doc == {"probs": ["4/5", "0/1", "1/5"], "backend": "rational"}
    assert dist_from_json(doc) == MIXED


def test_json_round_trip_float():
    d = LatticeDist.from_masses([0.3, 0.45, 0.25])
    assert dist_from_json(dist_to_json(d)) == d


def test_json_rejections():
    with pytest.raises(ValidationError):
        dist_from_json({"probs": ["1/1"], "backend": "rational", "extra": 1})
    with pytest.raises(ValidationError):
        dist_from_json({"probs": ["1/1"]})
    with pytest.raises(ValidationError):
        dist_from_json({"probs": [], "backend": "f64"})
    with pytest.raises(ValidationError):
        dist_from_json({"probs": ["1/1"], "backend": "exact"})
    with pytest.raises(ValidationError):
        dist_from_json(["4/5", "0/1", "1/5"])
