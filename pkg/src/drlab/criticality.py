"""Critical mixing weights, exactly and for the capped power-tail family.

For an explicit spread law the critical weight has a closed form,
p_c = 1 / (1 + E{[(m-1)X - 1] m^X}), and ``critical_p`` evaluates it on
either backend with no root finding.

``PowerTailLaw`` instantiates the heavy-tail family
P(X = k) = c0 * m^(-k) k^(-alpha) on 1..K_max, normalized exactly over the
cap, so c0 = 1/Z with Z the finite normalizer and every displayed constant
refers to this concrete law rather than an idealized infinite one.

A word on arithmetic: the m^X-weighted sums of this family telescope to pure
k^(-alpha) sums (m^k * m^(-k) k^(-alpha) = k^(-alpha)), and this module always
uses that reduced form.  Going through stored f64 masses instead would
silently drop every k beyond ~1060 (the mass underflows, its weighted
contribution does not), which is enough to corrupt p_c in the third digit at
alpha = 3.  For the same reason the truncation gap p_M - p_c is produced from
the reciprocal identity

    1/p_c - 1/p_M = P(X > M) + a_M + E{[(m-1)X - 1] m^X ; X > M}

whose right side is a short positive tail sum, instead of subtracting two
nearly equal floats.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Sequence, Tuple, Union

from .dist import (
    LatticeDist,
    MassValue,
    SystemSpec,
    mix,
    moment_panel,
    validate_star,
    weighted_moment,
)
from .errors import ValidationError

RHO_KEEP = "keep"
RHO_ZERO = "zero"
RHO_RANDOMIZED = "randomized"
_RHO_MODES = (RHO_KEEP, RHO_ZERO, RHO_RANDOMIZED)

DEFAULT_TAIL_CAP = 50_000


def critical_p(star: LatticeDist, m: int) -> MassValue:
    """Critical mixing weight of the family (1-p) delta_0 + p * star.

    Exact on the rational backend.  The spread law must be a valid mixture
    component (no mass at 0, some mass at 2 or beyond); in particular a point
    mass at 1 is rejected, since that family is trivial and has no critical
    point in (0, 1).
    """
    if not isinstance(m, int) or m < 2:
        raise ValidationError(f"branching number must be an int >= 2, got {m!r}")
    validate_star(star)
    base = Fraction(m) if star.is_rational else float(m)
    h = weighted_moment(star, 0, base)
    h1 = weighted_moment(star, 1, base)
    growth = (m - 1) * h1 - h  # E{[(m-1)X-1] m^X} over the spread law
    return 1 / (1 + growth)


def delta_at(star: LatticeDist, m: int, p) -> MassValue:
    """Sign quantity delta of the mixed initial law at weight p.

    Affine in p with slope 1 + E{[(m-1)X-1] m^X}, crossing zero exactly at
    ``critical_p``; computed here through the generic moment panel so the
    closed form above stays independently checkable.
    """
    spec = SystemSpec(m=m, p=p, star=star)
    return moment_panel(mix(spec), m).delta


# ---------------------------------------------------------------------------
# capped power-tail family


@dataclass(frozen=True)
class PowerTailLaw:
    """P(X = k) = m^(-k) k^(-alpha) / Z on 1 <= k <= K_max.

    Z is the exact finite normalizer, so ``c0`` = 1/Z and the law is a
    probability law by construction.  The mass the cap excludes relative to
    the infinite family is below m^(-K_max), recorded as ``log_tail_bound``
    (natural log); with the default cap that is e^-34000ish, comfortably
    under any tolerance this package ever uses.
    """

    m: int
    alpha: float
    K_max: int = DEFAULT_TAIL_CAP

    def __post_init__(self):
        if not isinstance(self.m, int) or self.m < 2:
            raise ValidationError(f"branching number must be an int >= 2, got {self.m!r}")
        if not self.alpha > 0:
            raise ValidationError(f"tail exponent must be > 0, got {self.alpha!r}")
        if not isinstance(self.K_max, int) or self.K_max < 2:
            raise ValidationError(f"K_max must be an int >= 2, got {self.K_max!r}")

    # -- normalization ------------------------------------------------------

    def _weight(self, k: int) -> float:
        return math.exp(-k * math.log(self.m) - self.alpha * math.log(k))

    @property
    def Z(self) -> float:
        return math.fsum(self._weight(k) for k in range(1, self.K_max + 1))

    @property
    def c0(self) -> float:
        return 1.0 / self.Z

    @property
    def log_tail_bound(self) -> float:
        """log of a bound on the mass the cap drops (geometric majorant)."""
        k = self.K_max + 1
        return (
            -k * math.log(self.m)
            - self.alpha * math.log(k)
            - math.log(1.0 - 1.0 / self.m)
        )

    @property
    def ell0(self) -> int:
        return 1

    def mass(self, k: int) -> float:
        if 1 <= k <= self.K_max:
            return self._weight(k) / self.Z
        return 0.0

    def to_dist(self) -> LatticeDist:
        """Materialize as a float-backend law.

        Entries whose mass underflows the flush threshold are left out; the
        resulting law is the f64-representable member of the family, which is
        the thing evolution actually iterates.
        """
        z = self.Z
        probs = [0.0]
        for k in range(1, self.K_max + 1):
            v = self._weight(k) / z
            if v < 1e-320 and k > 1:
                break
            probs.append(v)
        return LatticeDist.from_masses(probs, "f64")

    # -- reduced (cancellation-free) weighted sums --------------------------

    def _growth_term(self, k: int) -> float:
        # ((m-1)k - 1) * m^k * mass(k) * Z == ((m-1)k - 1) * k^(-alpha)
        return ((self.m - 1) * k - 1) * math.exp(-self.alpha * math.log(k))

    def growth_sum(self, lo: int, hi: int) -> float:
        """E{[(m-1)X-1] m^X ; lo <= X <= hi}, summed small-to-large."""
        lo = max(lo, 1)
        hi = min(hi, self.K_max)
        return math.fsum(self._growth_term(k) for k in range(hi, lo - 1, -1)) / self.Z

    def tail_mass(self, M: int) -> float:
        """P(X > M)."""
        if M >= self.K_max:
            return 0.0
        z = self.Z
        return math.fsum(self._weight(k) for k in range(self.K_max, M, -1)) / z

    def critical_p(self) -> float:
        """Critical weight of this capped law, via the reduced sums."""
        return 1.0 / (1.0 + self.growth_sum(1, self.K_max))


@dataclass(frozen=True)
class TruncatedFamily:
    """The law X restricted to its bottom M support points, atom adjusted.

    Everything above M collapses to 0 (no renormalization; the missing mass
    simply joins the 0 atom), and the bottom atom at ell0 is kept, zeroed, or
    dropped with probability M^-(alpha-2), per ``rho_mode``.  ``p_M`` is the
    critical weight of the truncated family, always above the parent's.
    """

    M: int
    ell0: int
    rho_mode: str
    law_M: LatticeDist
    p_M: float


def _atom_keep_fraction(star: PowerTailLaw, M: int, rho_mode: str) -> float:
    if rho_mode == RHO_KEEP:
        return 1.0
    if rho_mode == RHO_ZERO:
        return 0.0
    # randomized: the atom is dropped with probability M^-(alpha-2) and kept
    # otherwise, so the kept fraction tends to 1 and p_M back to p_c as M
    # grows; at alpha = 2 this degenerates to the "zero" mode
    return 1.0 - M ** -(star.alpha - 2.0)


def _a_M(star: PowerTailLaw, M: int, rho_mode: str) -> float:
    """Expected growth-sum removal from adjusting the bottom atom."""
    q = _atom_keep_fraction(star, M, rho_mode)
    l0 = star.ell0
    unit = ((star.m - 1) * l0 - 1) * star.m**l0 + 1
    return (1.0 - q) * star.mass(l0) * unit


def _inv_gap(star: PowerTailLaw, M: int, rho_mode: str) -> float:
    """1/p_c - 1/p_M as a positive tail sum (never a difference)."""
    return star.growth_sum(M + 1, star.K_max) + star.tail_mass(M) + _a_M(star, M, rho_mode)


def truncated_family(
    star: PowerTailLaw, M: int, rho_mode: str = RHO_KEEP
) -> TruncatedFamily:
    """Build the M-truncated member of a power-tail family.

    Parameters
    ----------
    star : PowerTailLaw
    M : int
        Truncation height, strictly above the bottom support point and at
        most the family cap.
    rho_mode : str
        "keep", "zero" or "randomized" handling of the bottom atom.
    """
    if rho_mode not in _RHO_MODES:
        raise ValidationError(f"unknown rho mode {rho_mode!r}, expected one of {_RHO_MODES}")
    if not isinstance(M, int) or M <= star.ell0:
        raise ValidationError(f"M must be an int > {star.ell0}, got {M!r}")
    if M > star.K_max:
        raise ValidationError(f"M={M} exceeds the family cap K_max={star.K_max}")

    q = _atom_keep_fraction(star, M, rho_mode)
    z = star.Z
    probs = [0.0] * (M + 1)
    for k in range(1, M + 1):
        v = star._weight(k) / z
        if v < 1e-320:
            break
        probs[k] = v
    probs[star.ell0] *= q
    assigned = math.fsum(probs)
    probs[0] = 1.0 - assigned  # tail above M plus the atom mass removed
    law = LatticeDist.from_masses(probs, "f64")

    inv_pm = 1.0 / star.critical_p() - _inv_gap(star, M, rho_mode)
    return TruncatedFamily(
        M=M, ell0=star.ell0, rho_mode=rho_mode, law_M=law, p_M=1.0 / inv_pm
    )


# ---------------------------------------------------------------------------
# asymptotics scan


@dataclass(frozen=True)
class PmScanRow:
    M: int
    p_M: float
    gap: float
    scaled_gap: float
    pre_asymptotic: bool


@dataclass(frozen=True)
class PmScanResult:
    m: int
    alpha: float
    c0: float
    rho_mode: str
    p_c: float
    rows: Tuple[PmScanRow, ...]

    def to_csv(self, dest: Union[str, IO[str]]) -> None:
        own = isinstance(dest, str)
        fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
        try:
            w = csv.writer(fh)
            w.writerow(["M", "p_M", "gap", "scaled_gap"])
            for r in self.rows:
                w.writerow([r.M, repr(r.p_M), repr(r.gap), repr(r.scaled_gap)])
        finally:
            if own:
                fh.close()

    def to_json_dict(self) -> dict:
        return {
            "m": self.m,
            "alpha": self.alpha,
            "c0": self.c0,
            "rho_mode": self.rho_mode,
            "p_c": self.p_c,
            "rows": [
                {
                    "M": r.M,
                    "p_M": r.p_M,
                    "gap": r.gap,
                    "scaled_gap": r.scaled_gap,
                    "pre_asymptotic": r.pre_asymptotic,
                }
                for r in self.rows
            ],
        }


def pm_asymptotics_scan(
    star: PowerTailLaw, Ms: Sequence[int], rho_mode: str = RHO_KEEP
) -> PmScanResult:
    """Tabulate p_M, the gap to p_c and the rescaled gap over heights Ms.

    For alpha > 2 the scaled gap is (p_M - p_c) * M^(alpha-2), whose limit is
    p_c^2 c0 / (alpha - 2) under "keep"; at alpha = 2 the family's p_c is 0
    by convention (the uncapped law has no subcritical phase), the gap column
    is p_M itself and the scaled column is p_M (m-1) c0 log M, which tends
    to 1.  The gap is evaluated through the reciprocal tail identity, so
    entries remain meaningful even when gap/p_c is below float resolution.
    """
    if star.alpha < 2:
        raise ValidationError(
            f"asymptotics scan covers tail exponents in [2, 4], got {star.alpha!r}"
        )
    if rho_mode not in _RHO_MODES:
        raise ValidationError(f"unknown rho mode {rho_mode!r}, expected one of {_RHO_MODES}")
    if not Ms:
        raise ValidationError("need at least one truncation height")
    prev = star.ell0
    for M in Ms:
        if not isinstance(M, int) or M <= prev:
            raise ValidationError(
                f"truncation heights must be strictly increasing ints > {star.ell0}, got {list(Ms)!r}"
            )
        prev = M
    if Ms[-1] > star.K_max:
        raise ValidationError(f"largest height {Ms[-1]} exceeds the family cap {star.K_max}")

    at_boundary = star.alpha == 2
    pc = 0.0 if at_boundary else star.critical_p()
    c0 = star.c0
    rows = []
    for M in Ms:
        inv_gap = _inv_gap(star, M, rho_mode)
        if at_boundary:
            pm = 1.0 / (1.0 + star.growth_sum(1, star.K_max) - inv_gap)
            gap = pm
            scaled = pm * (star.m - 1) * c0 * math.log(M)
        else:
            pm = 1.0 / (1.0 / pc - inv_gap)
            gap = pc * pm * inv_gap
            scaled = gap * M ** (star.alpha - 2.0)
        rows.append(
            PmScanRow(
                M=M,
                p_M=pm,
                gap=gap,
                scaled_gap=scaled,
                pre_asymptotic=M < 2 * star.ell0,
            )
        )
    return PmScanResult(
        m=star.m, alpha=star.alpha, c0=c0, rho_mode=rho_mode, p_c=pc, rows=tuple(rows)
    )
