"""Critical mixing weights, the capped power-tail family, and truncation scans."""

import io
import math
import random
from fractions import Fraction

import pytest

from drlab import (
    LatticeDist,
    PowerTailLaw,
    ValidationError,
    critical_p,
    delta_at,
    moment_panel,
    pm_asymptotics_scan,
    truncated_family,
)
from oracles import random_star

F = Fraction

DELTA2 = LatticeDist.delta(2, "rational")


# -- critical weight of rational mixtures -----------------------------------


def test_critical_p_pinned():
    assert critical_p(DELTA2, 2) == F(1, 5)
    assert critical_p(DELTA2, 3) == F(1, 28)
    assert critical_p(LatticeDist.delta(3, "rational"), 2) == F(1, 17)


def test_critical_p_validation():
    with pytest.raises(ValidationError):
        critical_p(DELTA2, 1)
    with pytest.raises(ValidationError):
        critical_p(LatticeDist.delta(1, "rational"), 2)  # trivial family
    with pytest.raises(ValidationError):
        critical_p(LatticeDist.from_masses({0: F(1, 2), 2: F(1, 2)}), 2)


def test_delta_at_pinned():
    assert delta_at(DELTA2, 2, F(1, 5)) == 0
    assert delta_at(DELTA2, 2, 0) == -1
    assert delta_at(DELTA2, 2, F(1, 4)) == F(1, 4)


def test_delta_at_float_backend():
    star = LatticeDist.delta(2)
    assert delta_at(star, 2, 0.25) == pytest.approx(0.25)
    assert abs(delta_at(star, 2, 0.2)) < 1e-15


def test_delta_at_is_affine_in_p():
    rng = random.Random(17)
    for _ in range(10):
        star = LatticeDist.from_masses(random_star(rng))
        m = rng.choice([2, 3])
        d0 = delta_at(star, m, F(0))
        d1 = delta_at(star, m, F(1))
        assert d0 == -1
        assert delta_at(star, m, F(1, 3)) == d0 + (d1 - d0) * F(1, 3)


def test_critical_p_is_the_exact_zero_crossing():
    rng = random.Random(29)
    for _ in range(20):
        star = LatticeDist.from_masses(random_star(rng))
        m = rng.choice([2, 3])
        pc = critical_p(star, m)
        assert 0 < pc < 1
        assert delta_at(star, m, pc) == 0
        assert delta_at(star, m, pc / 2) < 0
        assert delta_at(star, m, (1 + pc) / 2) > 0


# -- capped power-tail family -----------------------------------------------


def test_power_tail_law_is_a_probability_law():
    law = PowerTailLaw(m=2, alpha=3.0, K_max=500)
    total = math.fsum(law.mass(k) for k in range(501))
    assert total == pytest.approx(1.0, abs=1e-14)
    assert law.mass(0) == 0.0
    assert law.mass(501) == 0.0
    assert law.ell0 == 1


def test_power_tail_masses_decay_as_advertised():
    law = PowerTailLaw(m=2, alpha=3.0, K_max=100)
    # mass(k) proportional to 2^-k k^-3
    ratio = law.mass(4) / law.mass(2)
    assert ratio == pytest.approx((2**-4 * 4**-3) / (2**-2 * 2**-3), rel=1e-12)


def test_power_tail_critical_p_matches_generic_route():
    law = PowerTailLaw(m=2, alpha=3.0, K_max=200)
    generic = critical_p(
        LatticeDist.from_masses({k: law.mass(k) for k in range(1, 201)}), 2
    )
    assert law.critical_p() == pytest.approx(float(generic), rel=1e-12)
    assert 0 < law.critical_p() < 1


def test_power_tail_tail_mass_and_growth_sum():
    law = PowerTailLaw(m=2, alpha=2.5, K_max=300)
    head = math.fsum(law.mass(k) for k in range(1, 51))
    assert head + law.tail_mass(50) == pytest.approx(1.0, abs=1e-14)
    assert law.tail_mass(300) == 0.0
    total = law.growth_sum(1, 300)
    assert law.growth_sum(1, 100) + law.growth_sum(101, 300) == pytest.approx(
        total, rel=1e-14
    )
    assert law.log_tail_bound < -200.0


def test_power_tail_to_dist_matches_masses():
    law = PowerTailLaw(m=3, alpha=3.0, K_max=80)
    d = law.to_dist()
    assert not d.is_rational
    for k in (1, 2, 10, 40):
        assert d.mass(k) == law.mass(k)


def test_power_tail_validation():
    with pytest.raises(ValidationError):
        PowerTailLaw(m=1, alpha=3.0)
    with pytest.raises(ValidationError):
        PowerTailLaw(m=2, alpha=0.0)
    with pytest.raises(ValidationError):
        PowerTailLaw(m=2, alpha=3.0, K_max=1)


# -- truncated members ------------------------------------------------------


def test_truncated_family_masses():
    star = PowerTailLaw(m=2, alpha=3.0, K_max=400)
    fam = truncated_family(star, 32)
    assert fam.M == 32 and fam.rho_mode == "keep"
    for k in range(1, 33):
        assert fam.law_M.mass(k) == pytest.approx(star.mass(k), rel=1e-14)
    assert fam.law_M.support_max <= 32
    # the cut tail lands on the zero atom, nothing is renormalized
    assert fam.law_M.mass(0) == pytest.approx(star.tail_mass(32), rel=1e-12)


def test_truncated_family_atom_modes():
    star = PowerTailLaw(m=2, alpha=3.0, K_max=400)
    keep = truncated_family(star, 64, "keep")
    zero = truncated_family(star, 64, "zero")
    rand = truncated_family(star, 64, "randomized")
    assert zero.law_M.mass(1) == 0.0
    assert keep.law_M.mass(1) == pytest.approx(star.mass(1), rel=1e-14)
    drop = 64.0 ** -(3.0 - 2.0)
    assert rand.law_M.mass(1) == pytest.approx((1 - drop) * star.mass(1), rel=1e-12)
    # removing growth from the law pushes its critical weight up
    assert zero.p_M > rand.p_M > keep.p_M > star.critical_p()


def test_truncated_family_critical_weight_decreases_to_parent():
    star = PowerTailLaw(m=2, alpha=3.0)
    pms = [truncated_family(star, M).p_M for M in (16, 64, 256, 1024)]
    assert all(a > b for a, b in zip(pms, pms[1:]))
    assert pms[-1] == pytest.approx(star.critical_p(), rel=1e-3)


def test_truncated_family_weight_is_critical_for_the_truncated_law():
    star = PowerTailLaw(m=2, alpha=3.0, K_max=2000)
    for M in (8, 64, 512):
        fam = truncated_family(star, M)
        probs = [fam.p_M * v for v in fam.law_M.as_float_array()]
        probs[0] += 1.0 - fam.p_M
        mixture = LatticeDist.from_masses(probs)
        assert abs(moment_panel(mixture, 2).delta) < 1e-9


def test_truncated_family_validation():
    star = PowerTailLaw(m=2, alpha=3.0, K_max=100)
    with pytest.raises(ValidationError):
        truncated_family(star, 1)  # not above the bottom support point
    with pytest.raises(ValidationError):
        truncated_family(star, 101)
    with pytest.raises(ValidationError):
        truncated_family(star, 10, "discard")


# -- asymptotics scan -------------------------------------------------------


def test_pm_scan_rows_and_csv():
    star = PowerTailLaw(m=2, alpha=3.0, K_max=2000)
    scan = pm_asymptotics_scan(star, [16, 64, 256])
    assert [r.M for r in scan.rows] == [16, 64, 256]
    for r in scan.rows:
        assert r.gap > 0
        assert r.scaled_gap == pytest.approx(r.gap * r.M ** (3.0 - 2.0), rel=1e-12)
        assert not r.pre_asymptotic
    gaps = [r.gap for r in scan.rows]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    buf = io.StringIO()
    scan.to_csv(buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "M,p_M,gap,scaled_gap"
    assert len(lines) == 4
    doc = scan.to_json_dict()
    assert doc["rows"][0]["pre_asymptotic"] is False
    assert doc["p_c"] == pytest.approx(star.critical_p())


def test_pm_scan_validation():
    star = PowerTailLaw(m=2, alpha=3.0, K_max=100)
    with pytest.raises(ValidationError):
        pm_asymptotics_scan(star, [])
    with pytest.raises(ValidationError):
        pm_asymptotics_scan(star, [64, 16])
    with pytest.raises(ValidationError):
        pm_asymptotics_scan(star, [16, 101])
    with pytest.raises(ValidationError):
        pm_asymptotics_scan(star, [16, 64], rho_mode="discard")
