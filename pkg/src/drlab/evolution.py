"""Iterating the recursion and the exact identities that police it.

``evolve`` pushes an initial law through n steps under a truncation policy
and records, per step, the expectation, the mass at zero, the tilted-moment
sign quantity delta, the tilted mean E(m^X), and the expectation lost to
truncation or flushing.  Everything else in this module is a functional on a
law or a trace:

* ``delta_check``: the one-step identity delta' = E(m^X)^(m-1) * delta holds
  exactly for the map; the residual measures arithmetic drift.
* ``theta``: the defect functional that is identically 0 at s = m and whose
  rate of vanishing controls how slowly near-critical systems separate.
* ``phi``: the monotone companion (m-1) s H'(s) - H(s).
* ``script_d``: the third-order coefficient whose product recursion mirrors
  delta's, on critical systems.
* ``detect_horizon``: first step at which delta exceeds a threshold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Optional, Sequence, Tuple, Union

from .dist import (
    DEFAULT_HARD_CAP,
    LatticeDist,
    MassValue,
    _as_fraction,
    _scaled_weighted_sum,
    dr_step_with_loss,
    expectation,
    moment_panel,
    pgf_derivatives,
    truncate_down,
    weighted_moment,
)
from .errors import (
    CapacityError,
    MomentOverflowError,
    PreconditionError,
    ValidationError,
)
from .logspace import LogReal

MODE_NONE = "none"
MODE_FIXED_CAP = "fixed-cap"
MODE_BUDGETED = "budgeted"


@dataclass(frozen=True)
class TruncationPolicy:
    """How (and whether) a run may shed far-tail mass.

    none
        Exact evolution; a step whose support would pass ``hard_cap`` raises
        ``CapacityError``.
    fixed-cap
        Every law is cut back to support ``cap`` (mass above moves to 0), no
        questions asked; all losses are ledgered.
    budgeted
        Laws are only cut when their support passes ``hard_cap``, and the cut
        at step i may cost at most an allowance
        b_i = total_budget * (m-1) * m^i / (m^(n+1)-1) in limit units, i.e.
        b_i * m^i in raw expectation.  The allowances form a geometric series
        summing to just under ``total_budget``, so however the run spends
        them, sum_i (loss_i / m^i) stays within budget.  A step that cannot
        reach ``hard_cap`` within its allowance raises ``CapacityError``.
    """

    mode: str
    cap: Optional[int] = None
    total_budget: Optional[float] = None
    hard_cap: int = DEFAULT_HARD_CAP

    def __post_init__(self):
        if self.mode not in (MODE_NONE, MODE_FIXED_CAP, MODE_BUDGETED):
            raise ValidationError(f"unknown truncation mode {self.mode!r}")
        if not isinstance(self.hard_cap, int) or self.hard_cap < 1:
            raise ValidationError(f"hard_cap must be an int >= 1, got {self.hard_cap!r}")
        if self.mode == MODE_FIXED_CAP:
            if not isinstance(self.cap, int) or self.cap < 1:
                raise ValidationError(f"fixed-cap policy needs an int cap >= 1, got {self.cap!r}")
        elif self.cap is not None:
            raise ValidationError(f"cap is only meaningful for fixed-cap mode")
        if self.mode == MODE_BUDGETED:
            if self.total_budget is None or self.total_budget < 0:
                raise ValidationError("budgeted policy needs total_budget >= 0")
        elif self.total_budget is not None:
            raise ValidationError("total_budget is only meaningful for budgeted mode")

    @classmethod
    def none(cls, hard_cap: int = DEFAULT_HARD_CAP) -> "TruncationPolicy":
        return cls(mode=MODE_NONE, hard_cap=hard_cap)

    @classmethod
    def fixed_cap(cls, cap: int, hard_cap: int = DEFAULT_HARD_CAP) -> "TruncationPolicy":
        hc = max(hard_cap, cap)
        return cls(mode=MODE_FIXED_CAP, cap=cap, hard_cap=hc)

    @classmethod
    def budgeted(
        cls, total_budget: float, hard_cap: int = 1 << 15
    ) -> "TruncationPolicy":
        return cls(mode=MODE_BUDGETED, total_budget=float(total_budget), hard_cap=hard_cap)


@dataclass(frozen=True)
class EvolutionTrace:
    """Everything a run of ``evolve`` produced.

    ``ledger[i]`` is the raw expectation removed while producing ``laws[i]``
    (flushed float dust plus any elective truncation); index 0 covers the
    canonicalization of the initial law and is normally zero.
    """

    m: int
    policy: TruncationPolicy
    backend: str
    laws: Tuple[LatticeDist, ...]
    expectations: Tuple[MassValue, ...]
    p0s: Tuple[MassValue, ...]
    deltas: Tuple[MassValue, ...]
    h_ms: Tuple[MassValue, ...]
    ledger: Tuple[MassValue, ...]
    trivial: bool

    @property
    def n_steps(self) -> int:
        return len(self.laws) - 1

    def ledger_priced_total(self, upto: Optional[int] = None) -> LogReal:
        """sum_i ledger[i] / m^i as a log-space scalar (the cost in limit units)."""
        total = LogReal.zero()
        stop = len(self.ledger) if upto is None else min(upto + 1, len(self.ledger))
        lm = math.log(self.m)
        for i in range(stop):
            li = _loss_log(self.ledger[i])
            if li != float("-inf"):
                total = total + LogReal(li - i * lm)
        return total

    def to_csv(self, dest: Union[str, IO[str]]) -> None:
        """Write one row per step: n,E,P0,delta,H_m,ledger."""
        own = isinstance(dest, str)
        fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
        try:
            w = csv.writer(fh)
            w.writerow(["n", "E", "P0", "delta", "H_m", "ledger"])
            for i in range(len(self.laws)):
                w.writerow(
                    [
                        i,
                        _num_str(self.expectations[i]),
                        _num_str(self.p0s[i]),
                        _num_str(self.deltas[i]),
                        _num_str(self.h_ms[i]),
                        _num_str(self.ledger[i]),
                    ]
                )
        finally:
            if own:
                fh.close()


def _num_str(x) -> str:
    """num/den for exact values, shortest round-trip decimal otherwise."""
    if isinstance(x, Fraction):
        if x.denominator == 1:
            return str(x.numerator)
        return f"{x.numerator}/{x.denominator}"
    return repr(float(x))


def _loss_log(x) -> float:
    if isinstance(x, Fraction):
        if x == 0:
            return float("-inf")
        return math.log(x.numerator) - math.log(x.denominator)
    return math.log(x) if x > 0.0 else float("-inf")


def _panel_or_inf(law: LatticeDist, m: int, prev_delta) -> tuple:
    """(h_m, delta) with overflow degraded to inf instead of an exception.

    Supercritical float runs overflow E(m^X) after a handful of steps; the
    trace stays useful for expectations, so record the tilted stats as inf
    (delta keeps the sign it can no longer change) rather than dying.
    """
    try:
        panel = moment_panel(law, m)
        return panel.h, panel.delta
    except MomentOverflowError:
        if prev_delta is not None and _is_pos(prev_delta):
            return math.inf, math.inf
        return math.inf, math.nan


def _is_pos(x) -> bool:
    try:
        return x > 0
    except TypeError:
        return False


def evolve(
    d0: LatticeDist,
    m: int,
    n_steps: int,
    policy: TruncationPolicy | None = None,
) -> EvolutionTrace:
    """Push ``d0`` through ``n_steps`` applications of the recursion map.

    Parameters
    ----------
    d0 : LatticeDist
        Initial law, either backend.
    m : int
        Branching number, >= 2.
    n_steps : int
        Number of steps; the trace holds n_steps + 1 laws.
    policy : TruncationPolicy
        Defaults to ``TruncationPolicy.none()``.

    Notes
    -----
    Laws with no mass on {2, 3, ...} never grow; such inputs are accepted and
    the trace is flagged ``trivial``.

    Every law in the trace is a stochastic minorant of the exact law at the
    same step (truncation and flushing only ever move mass down to zero), and
    the exact expectation is overshot by at most
    m^n * sum_i ledger[i]/m^i. That one-sided pricing is what free-energy
    enclosures are built on.
    """
    if not isinstance(n_steps, int) or n_steps < 0:
        raise ValidationError(f"step count must be an int >= 0, got {n_steps!r}")
    if policy is None:
        policy = TruncationPolicy.none()
    if policy.mode == MODE_FIXED_CAP and policy.cap is not None and d0.support_max > policy.cap:
        d0, pre_loss = truncate_down(d0, policy.cap)
    else:
        zero: MassValue = Fraction(0) if d0.is_rational else 0.0
        pre_loss = zero

    lm = math.log(m)
    log_budget_scale = None
    if policy.mode == MODE_BUDGETED:
        b = policy.total_budget or 0.0
        if b > 0.0:
            # log of (m-1)/(m^(n+1)-1), stable for any depth
            expo = (n_steps + 1) * lm
            log_denom = expo if expo > 700 else math.log(m ** (n_steps + 1) - 1)
            log_budget_scale = math.log(b) + math.log(m - 1) - log_denom

    laws = [d0]
    ledger: list = [pre_loss]
    trivial = d0.support_max < 2 or all(v == 0 for v in d0.probs[2:])

    current = d0
    prev_delta = None
    exps = []
    p0s = []
    deltas = []
    h_ms = []

    def record(law: LatticeDist):
        nonlocal prev_delta
        exps.append(expectation(law))
        p0s.append(law.probs[0])
        h, delta = _panel_or_inf(law, m, prev_delta)
        h_ms.append(h)
        deltas.append(delta)
        prev_delta = delta

    record(d0)

    for i in range(1, n_steps + 1):
        if policy.mode == MODE_NONE:
            nxt, loss = dr_step_with_loss(current, m, hard_cap=policy.hard_cap)
        else:
            nxt, loss = dr_step_with_loss(current, m, hard_cap=m * policy.hard_cap + m)
            if policy.mode == MODE_FIXED_CAP:
                assert policy.cap is not None
                nxt, cut = truncate_down(nxt, policy.cap)
                loss = loss + cut
            else:  # budgeted
                if nxt.support_max > policy.hard_cap:
                    trial, cut = truncate_down(nxt, policy.hard_cap)
                    cut_log = _loss_log(cut)
                    if log_budget_scale is None:
                        allowed = cut_log == float("-inf")
                    else:
                        allowed = cut_log <= log_budget_scale + 2 * i * lm
                    if not allowed:
                        raise CapacityError(
                            f"step {i}: support {nxt.support_max} exceeds hard cap "
                            f"{policy.hard_cap} and the needed cut is over this "
                            "step's error allowance"
                        )
                    nxt = trial
                    loss = loss + cut
        laws.append(nxt)
        ledger.append(loss)
        record(nxt)
        current = nxt

    return EvolutionTrace(
        m=m,
        policy=policy,
        backend=d0.backend,
        laws=tuple(laws),
        expectations=tuple(exps),
        p0s=tuple(p0s),
        deltas=tuple(deltas),
        h_ms=tuple(h_ms),
        ledger=tuple(ledger),
        trivial=trivial,
    )


def delta_check(trace: EvolutionTrace, m: int) -> Union[float, Fraction]:
    """Largest relative residual of delta' = H(m)^(m-1) * delta along a trace.

    Exact (rational) traces return a Fraction, zero when the identity holds
    to the last bit.  Only meaningful on untruncated runs, so any other
    policy is rejected.
    """
    if trace.policy.mode != MODE_NONE:
        raise PreconditionError("delta_check needs a trace evolved with mode=none")
    if m != trace.m:
        raise ValidationError(f"trace was evolved with m={trace.m}, not {m}")
    worst: Union[float, Fraction] = Fraction(0) if trace.backend == "rational" else 0.0
    floor_fr = Fraction(1, 10**300)
    for i in range(trace.n_steps):
        d0, d1, h = trace.deltas[i], trace.deltas[i + 1], trace.h_ms[i]
        if trace.backend == "rational":
            num = abs(d1 - h ** (m - 1) * d0)
            den = max(abs(d1), floor_fr)
            worst = max(worst, num / den)
        else:
            if not (math.isfinite(d0) and math.isfinite(d1) and math.isfinite(h)):
                raise PreconditionError(
                    "trace contains overflowed tilted moments; rerun with the "
                    "rational backend or fewer steps"
                )
            num = abs(d1 - h ** (m - 1) * d0)
            worst = max(worst, num / max(abs(d1), 1e-300))
    return worst


# ---------------------------------------------------------------------------
# pointwise functionals


def theta(d: LatticeDist, m: int, s, delta=None) -> MassValue:
    """Defect functional at s in [0, m).

    Computed in its expectation form: with t = s/m,

        E{ m^X [(m-1)X - 1] [1 - (1+X) t^X + X t^(X+1)] } + (delta - delta_d)

    where delta_d is the law's own sign quantity.  Passing ``delta``
    evaluates the functional as if the law had that sign quantity (the two
    appear only through an additive offset); by default the intrinsic value
    is used and the offset vanishes.  ``theta_derivative_form`` computes the
    same quantity from generating-function derivatives and exists for
    cross-checking.
    """
    _check_theta_domain(m, s)
    if d.is_rational:
        sv = _as_fraction(s, "evaluation point")
        t = sv / m
        total = Fraction(0)
        for k, pk in enumerate(d.probs):
            if k == 0 or pk == 0:
                continue
            bracket = 1 - (1 + k) * t**k + k * t ** (k + 1)
            total += pk * Fraction(m) ** k * ((m - 1) * k - 1) * bracket
        if delta is not None:
            panel = moment_panel(d, m)
            total += _as_fraction(delta, "delta") - panel.delta
        return total
    sv = float(s)
    t = sv / m

    def weight(k: int) -> float:
        if k == 0:
            return 0.0
        tk = t**k
        return ((m - 1) * k - 1) * (1.0 - (1 + k) * tk + k * tk * t)

    total_f = _scaled_weighted_sum(d.probs, float(m), weight)
    if delta is not None:
        panel = moment_panel(d, m)
        total_f += float(delta) - panel.delta
    return total_f


def theta_derivative_form(d: LatticeDist, m: int, s, delta=None) -> MassValue:
    """Same functional via H, H' and H'' (the defining formula).

        [H(s) - s(s-1)H'(s)] - (m-1)(m-s)/m * [2sH'(s) + s^2 H''(s)] + delta
    """
    _check_theta_domain(m, s)
    if delta is None:
        delta = moment_panel(d, m).delta
    h, h1, h2 = pgf_derivatives(d, s, order=2)
    if d.is_rational:
        sv = _as_fraction(s, "evaluation point")
        dv = _as_fraction(delta, "delta")
        return (
            h
            - sv * (sv - 1) * h1
            - Fraction((m - 1), m) * (m - sv) * (2 * sv * h1 + sv**2 * h2)
            + dv
        )
    sv = float(s)
    return (
        h
        - sv * (sv - 1.0) * h1
        - (m - 1) * (m - sv) / m * (2.0 * sv * h1 + sv * sv * h2)
        + float(delta)
    )


def _check_theta_domain(m: int, s) -> None:
    if not isinstance(m, int) or m < 2:
        raise ValidationError(f"branching number must be an int >= 2, got {m!r}")
    if not 0 <= s < m:
        raise ValidationError(f"theta is defined on 0 <= s < m, got s={s!r}")


def phi(d: LatticeDist, m: int, s) -> MassValue:
    """(m-1) s H'(s) - H(s); non-decreasing in s, equals delta at s = m."""
    if not isinstance(m, int) or m < 2:
        raise ValidationError(f"branching number must be an int >= 2, got {m!r}")
    if not s > 0:
        raise ValidationError(f"phi needs s > 0, got {s!r}")
    h, h1 = pgf_derivatives(d, s, order=1)
    if d.is_rational:
        sv = _as_fraction(s, "evaluation point")
        return (m - 1) * sv * h1 - h
    return (m - 1) * float(s) * h1 - h


def script_d(d: LatticeDist, m: int) -> MassValue:
    """Third-order coefficient m(m-1)G'''(m) + (4m-5)G''(m) + c_m G(m).

    c_m = 2(m-2)/(m^2 (m-1)).  On critical systems this quantity obeys the
    same product recursion as delta's modulus: value' = value * G(m)^(m-1).
    """
    if not isinstance(m, int) or m < 2:
        raise ValidationError(f"branching number must be an int >= 2, got {m!r}")
    h, _, h2, h3 = pgf_derivatives(d, m, order=3)
    if d.is_rational:
        cm = Fraction(2 * (m - 2), m * m * (m - 1))
        return m * (m - 1) * h3 + (4 * m - 5) * h2 + cm * h
    cm = 2.0 * (m - 2) / (m * m * (m - 1))
    return m * (m - 1) * h3 + (4 * m - 5) * h2 + cm * h


def detect_horizon(trace: EvolutionTrace, threshold: Optional[float] = None) -> Optional[int]:
    """First step at which delta exceeds ``threshold``.

    The default threshold log 3 - log(m)/(m-1) is the largest value theta
    for which E(m^X) <= m^(1/(m-1)) e^theta stays below 3; past it the tilted
    mean can no longer be bounded by a constant and the run has visibly left
    the near-critical regime.  Returns None if delta never gets there.
    """
    if threshold is None:
        threshold = math.log(3.0) - math.log(trace.m) / (trace.m - 1)
    for i, dv in enumerate(trace.deltas):
        if isinstance(dv, float) and math.isnan(dv):
            continue
        if dv > threshold:
            return i
    return None
