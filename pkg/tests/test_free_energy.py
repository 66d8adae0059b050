"""Certified enclosures for the limit of E(X_n)/m^n and the exponent fit."""

import io
import math
from fractions import Fraction

import pytest

from drlab import (
    EpsilonPoint,
    FreeEnergyBounds,
    LatticeDist,
    LogReal,
    PreconditionError,
    SystemSpec,
    ValidationError,
    epsilon_scan,
    evolve,
    fit_exponent,
    free_energy,
    mix,
    parse_bound,
)

F = Fraction

STAR = LatticeDist.delta(2)  # float backend


def spec_at(p):
    return SystemSpec(m=2, p=p, star=STAR)


# -- single enclosures ------------------------------------------------------


def test_subcritical_limit_is_zero():
    b = free_energy(spec_at(0.0))
    assert b.status == "pinched"
    assert b.lower == 0.0 and b.upper == 0.0
    assert b.log_upper == float("-inf")
    assert b.gap_rel() == 0.0


def test_deterministic_doubling_pins_one():
    # at p = 1 the iterates are point masses 2^n + 1 and F is exactly 1
    b = free_energy(spec_at(1.0), tol_rel=1e-3, hard_cap=1 << 12)
    assert b.status == "pinched"
    assert b.lower <= 1.0 <= b.upper
    assert b.gap_rel() <= 1e-3
    assert b.ledger_cost == 0.0


def test_supercritical_enclosure_contains_exact_sandwich():
    b = free_energy(spec_at(0.3), tol_rel=1e-4)
    assert b.status == "pinched"
    assert b.gap_rel() <= 1e-4
    exact = evolve(
        mix(SystemSpec(m=2, p=F(3, 10), star=LatticeDist.delta(2, "rational"))), 2, 10
    )
    top = float(exact.expectations[10]) / 2**10
    # the limit sits in [top - 2^-10, top], so the enclosure must reach it
    assert b.lower <= top
    assert b.upper >= top - 2.0**-10


def test_enclosure_monotone_under_tolerance():
    loose = free_energy(spec_at(0.3), tol_rel=1e-2)
    tight = free_energy(spec_at(0.3), tol_rel=1e-5)
    assert loose.lower <= tight.lower <= tight.upper <= loose.upper
    assert tight.n_used >= loose.n_used


def test_status_iteration_limited():
    b = free_energy(spec_at(0.3), tol_rel=1e-9, n_max=3)
    assert b.status == "iteration-limited"
    assert b.n_used == 3
    assert b.gap_rel() > 1e-9


def test_status_budget_limited():
    # a hard cap the supercritical run must outgrow, with nothing to spend
    b = free_energy(spec_at(0.3), tol_rel=1e-6, hard_cap=64)
    assert b.status == "budget-limited"
    assert b.lower <= b.upper


def test_budget_buys_the_gap_closed():
    # 16384 sits just below the run's natural support, so the one cut it
    # needs is astronomically small; a zero budget still refuses it.  The
    # allowance schedule spreads the budget over n_max steps, so n_max has
    # to reflect the actual run length for any of it to arrive by step 21.
    capped = free_energy(spec_at(0.3), tol_rel=1e-4, hard_cap=16384)
    funded = free_energy(
        spec_at(0.3), tol_rel=1e-4, hard_cap=16384, budget=1e-12, n_max=24
    )
    assert capped.status == "budget-limited"
    assert funded.status == "pinched"
    assert 0.0 < funded.ledger_cost <= 1e-12
    free_run = free_energy(spec_at(0.3), tol_rel=1e-4)
    assert funded.lower == pytest.approx(free_run.lower, rel=1e-9)
    assert funded.upper == pytest.approx(free_run.upper, rel=1e-9)


def test_free_energy_validation():
    with pytest.raises(ValidationError):
        free_energy(spec_at(0.3), tol_rel=0.0)
    with pytest.raises(ValidationError):
        free_energy(spec_at(0.3), n_max=-1)


def test_gap_rel_edge_cases():
    z = float("-inf")
    both_zero = FreeEnergyBounds(0.0, 0.0, z, z, 0, 0.0, z, "pinched")
    assert both_zero.gap_rel() == 0.0
    no_lower = FreeEnergyBounds(0.0, 0.5, z, math.log(0.5), 4, 0.0, z, "pinched")
    assert no_lower.gap_rel() == 1.0


# -- scans ------------------------------------------------------------------


def test_epsilon_scan_shapes_and_csv():
    scan = epsilon_scan(STAR, 2, [0.02, 0.05, 0.1], tol_rel=0.02)
    assert scan.p_c == pytest.approx(0.2, abs=1e-12)
    assert [p.epsilon for p in scan.points] == [0.02, 0.05, 0.1]
    for pt in scan.points:
        assert pt.bounds.status == "pinched"
        assert 0.0 < pt.bounds.lower <= pt.bounds.upper
    # F shrinks toward the critical point
    uppers = [p.bounds.upper for p in scan.points]
    assert uppers[0] < uppers[1] < uppers[2]
    buf = io.StringIO()
    scan.to_csv(buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "epsilon,F_lower,F_upper,n_used,status"
    assert len(lines) == 4
    assert lines[1].endswith("pinched")


def test_epsilon_scan_worker_count_is_invisible():
    grid = [0.05, 0.1]
    serial = epsilon_scan(STAR, 2, grid, tol_rel=0.05, workers=1)
    fanned = epsilon_scan(STAR, 2, grid, tol_rel=0.05, workers=2)
    for a, b in zip(serial.points, fanned.points):
        assert a.epsilon == b.epsilon
        assert a.bounds == b.bounds


def test_epsilon_scan_validation():
    with pytest.raises(ValidationError):
        epsilon_scan(STAR, 2, [])
    with pytest.raises(ValidationError):
        epsilon_scan(STAR, 2, [0.0])
    with pytest.raises(ValidationError):
        epsilon_scan(STAR, 2, [0.9])  # p_c + 0.9 > 1


# -- bound serialization ----------------------------------------------------


def test_parse_bound_round_trips():
    v, lg = parse_bound(repr(0.125))
    assert v == 0.125 and lg == pytest.approx(math.log(0.125))
    assert parse_bound("0.0") == (0.0, float("-inf"))
    deep = LogReal(-5000.0).decimal_string()
    v, lg = parse_bound(deep)
    assert v == 0.0
    assert lg == pytest.approx(-5000.0, rel=1e-12)


def test_logreal_basics():
    assert LogReal.zero().to_float() == 0.0
    five = LogReal(math.log(2.0)) + LogReal(math.log(3.0))
    assert five.to_float() == pytest.approx(5.0, rel=1e-15)
    assert LogReal.zero() + LogReal(0.0) == LogReal(0.0)


# -- exponent fit -----------------------------------------------------------


def synthetic_point(eps, log_f, wobble=0.0):
    lo = log_f - wobble
    hi = log_f + wobble
    return EpsilonPoint(
        epsilon=eps,
        bounds=FreeEnergyBounds(
            lower=math.exp(lo),
            upper=math.exp(hi),
            log_lower=lo,
            log_upper=hi,
            n_used=1,
            ledger_cost=0.0,
            log_ledger=float("-inf"),
            status="pinched",
        ),
    )


def eps_grid(n=8):
    return [10.0 ** (-3 + 2 * i / (n - 1)) for i in range(n)]


def test_fit_exponent_recovers_half():
    pts = [synthetic_point(e, -(e**-0.5)) for e in eps_grid()]
    fit = fit_exponent(pts)
    assert fit.nu_hat == pytest.approx(0.5, abs=1e-12)
    assert fit.ci[0] <= fit.nu_hat <= fit.ci[1]
    assert fit.window == (pts[0].epsilon, pts[-1].epsilon)


def test_fit_exponent_recovers_one():
    pts = [synthetic_point(e, -(e**-1.0)) for e in eps_grid()]
    fit = fit_exponent(pts)
    assert fit.nu_hat == pytest.approx(1.0, abs=1e-12)


def test_fit_ci_widens_with_enclosure():
    tight = fit_exponent([synthetic_point(e, -(e**-0.5), 1e-9) for e in eps_grid()])
    loose = fit_exponent([synthetic_point(e, -(e**-0.5), 1e-2) for e in eps_grid()])
    assert tight.ci[1] - tight.ci[0] < loose.ci[1] - loose.ci[0]
    assert loose.ci[0] <= 0.5 <= loose.ci[1]


def test_fit_exponent_filters():
    good = [synthetic_point(e, -(e**-0.5)) for e in eps_grid(4)]
    lazy = synthetic_point(0.5, -0.9)  # F above 1/e, must be ignored
    fit = fit_exponent(good + [lazy])
    assert len(fit.points) == 4
    with pytest.raises(PreconditionError):
        fit_exponent(good[:3])
    unpinched = [
        EpsilonPoint(p.epsilon, FreeEnergyBounds(
            p.bounds.lower, p.bounds.upper, p.bounds.log_lower, p.bounds.log_upper,
            1, 0.0, float("-inf"), "iteration-limited"))
        for p in good
    ]
    with pytest.raises(PreconditionError):
        fit_exponent(unpinched)


def test_fit_exponent_window():
    pts = [synthetic_point(e, -(e**-0.5)) for e in eps_grid(10)]
    fit = fit_exponent(pts, window=(3e-3, 3e-2))
    assert fit.window[0] >= 3e-3 and fit.window[1] <= 3e-2
    assert len(fit.points) < 10
    assert fit.nu_hat == pytest.approx(0.5, abs=1e-12)
    doc = fit.to_json_dict()
    assert set(doc) == {"nu_hat", "ci", "window", "n_points"}
