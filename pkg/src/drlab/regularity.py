"""Regularity coefficients: how much tilted second moment a law retains.

For a lattice law with finite tilted mean, write

    Xi_j = E[(X min j)^2 ((m-1)X - 1) m^X],    Lambda = E(X^3 m^X).

The law is beta-regular with coefficient chi when Xi_j >= chi * min(Lambda,
j^beta) holds for every j >= 1; ``regularity_report`` returns the largest
such chi.  Since Xi_j is non-decreasing in j and saturates at the full
support, the infimum over all j reduces to the support range plus one
closing ratio Xi_inf / Lambda (for beta > 0), which is how it is computed.

``truncated_regularity_scan`` tracks the coefficient along truncations of a
power-tail family, where every weighted sum is taken in the reduced form
(masses times m^k collapse to k^(-alpha) analytically); see the arithmetic
note in the criticality module for why the stored f64 masses must not be
used here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import IO, Optional, Sequence, Tuple, Union

from .criticality import (
    RHO_RANDOMIZED,
    RHO_ZERO,
    PowerTailLaw,
    _atom_keep_fraction,
    truncated_family,
)
from .dist import LatticeDist, MassValue, weighted_moment
from .errors import MomentOverflowError, ValidationError


@dataclass(frozen=True)
class RegularityReport:
    """Largest coefficient chi at the given beta, with its witnesses.

    ``xi`` lists Xi_1 .. Xi_K over the support range (the sequence is flat
    from there on, at ``xi_limit``).  ``argmin_j`` is the lattice point
    where the defining ratio is smallest, or None when the binding ratio is
    the saturated one (Xi_inf / Lambda).
    """

    beta: float
    chi: MassValue
    lam: MassValue
    xi: Tuple[MassValue, ...]
    xi_limit: MassValue
    argmin_j: Optional[int]
    note: Optional[str] = None

    def lambda_n(self, n: int) -> MassValue:
        """The growth cap min(Lambda, n**beta) the ratios are tested against."""
        if not isinstance(n, int) or n < 1:
            raise ValidationError(f"n must be an int >= 1, got {n!r}")
        if isinstance(self.lam, Fraction) and float(self.beta).is_integer():
            return min(self.lam, Fraction(n) ** int(self.beta))
        return min(float(self.lam), float(n) ** self.beta)


def _weight_terms_f64(probs, m: int) -> list:
    """((m-1)k - 1) m^k p_k for k >= 1, overflow-checked, order preserved."""
    lb = math.frexp(float(m))
    mant, ex = lb
    terms = [0.0]
    for k, pk in enumerate(probs):
        if k == 0:
            continue
        if k > 1:
            mant *= lb[0]
            mant, e2 = math.frexp(mant)
            ex += lb[1] + e2
        if pk == 0.0:
            terms.append(0.0)
            continue
        pm, pe = math.frexp(pk)
        w = float((m - 1) * k - 1)
        term = math.ldexp(pm * w * mant, ex + pe)
        if math.isinf(term):
            raise MomentOverflowError(
                f"tilted weight at k={k} overflowed f64; "
                "the rational backend computes this exactly"
            )
        terms.append(term)
    return terms


def _chi_from_weights(weights, lam, beta: float, exact: bool):
    """Smallest Xi_j / min(Lambda, j^beta) over j, via suffix sums.

    ``weights[k]`` is the k-th tilted term (index 0 unused); works for both
    Fraction and float entries.  Returns (chi, xi_seq, argmin_j) with
    ``xi_seq[j-1]`` equal to Xi_j for j = 1..K.  Callers guarantee K >= 1
    and lam > 0, so at least one ratio is always formed.
    """
    K = len(weights) - 1
    zero = Fraction(0) if exact else 0.0
    tails = [zero] * (K + 2)
    for k in range(K, 0, -1):
        tails[k] = tails[k + 1] + weights[k]
    xi = zero
    xi_seq = []
    best = None
    best_j = None
    for j in range(1, K + 1):
        xi = xi + (2 * j - 1) * tails[j]
        xi_seq.append(xi)
        cap = min(lam, Fraction(j) ** beta if exact else float(j) ** beta)
        ratio = xi / cap
        if best is None or ratio < best:
            best, best_j = ratio, j
    if beta > 0:
        # past the support Xi stays flat while the cap may still grow to
        # Lambda, so one closing ratio finishes the scan over all j
        closing = xi / lam
        if closing < best:
            best, best_j = closing, None
    chi = min(best, Fraction(1) if exact else 1.0)
    return chi, xi_seq, best_j


def xi_k(d: LatticeDist, m: int, k: int) -> MassValue:
    """The capped tilted second moment E[(X min k)^2 ((m-1)X - 1) m^X].

    Exact for rational laws, f64 with an overflow check otherwise.  Every
    term with X >= 1 is nonnegative (the X = 0 term vanishes through the
    squared cap), so the sequence is non-decreasing in k and saturates once
    k covers the support.
    """
    if not isinstance(m, int) or m < 2:
        raise ValidationError(f"m must be an int >= 2, got {m!r}")
    if not isinstance(k, int) or k < 1:
        raise ValidationError(f"k must be an int >= 1, got {k!r}")
    if d.is_rational:
        return sum(
            (min(j, k)) ** 2 * pj * ((m - 1) * j - 1) * Fraction(m) ** j
            for j, pj in enumerate(d.probs)
            if j >= 1
        )
    terms = _weight_terms_f64(d.probs, m)
    return math.fsum(min(j, k) ** 2 * w for j, w in enumerate(terms))


def regularity_report(d: LatticeDist, m: int, beta: float) -> RegularityReport:
    """Measure the best regularity coefficient of a law.

    Rational laws with an integer beta come back as exact Fractions.  A law
    with all mass at zero satisfies the defining inequality vacuously (both
    sides are zero for every j) and reports coefficient 1; a law whose
    tilted terms all vanish, such as support {0, 1} at m = 2, reports 0.
    """
    if not isinstance(m, int) or m < 2:
        raise ValidationError(f"m must be an int >= 2, got {m!r}")
    if not 0 <= beta <= 2:
        raise ValidationError(f"beta must lie in [0, 2], got {beta!r}")
    note = (
        "2-regularity presupposes a finite tilted third moment, which finite "
        "support guarantees here"
        if float(beta) == 2.0
        else None
    )
    lam = weighted_moment(d, 3, Fraction(m) if d.is_rational else float(m))
    exact = d.is_rational and float(beta).is_integer()
    if not lam:
        one: MassValue = Fraction(1) if exact else 1.0
        zero: MassValue = Fraction(0) if exact else 0.0
        return RegularityReport(
            beta=float(beta),
            chi=one,
            lam=zero,
            xi=(),
            xi_limit=zero,
            argmin_j=None,
            note=note,
        )
    if exact:
        # fractional beta would need irrational powers of j, so only integer
        # exponents stay on the exact path
        weights = [Fraction(0)]
        for k, pk in enumerate(d.probs):
            if k >= 1:
                weights.append(pk * ((m - 1) * k - 1) * Fraction(m) ** k)
        chi, xi_seq, arg = _chi_from_weights(
            weights, lam, Fraction(int(beta)), exact=True
        )
        return RegularityReport(
            beta=float(beta),
            chi=chi,
            lam=lam,
            xi=tuple(xi_seq),
            xi_limit=xi_seq[-1],
            argmin_j=arg,
            note=note,
        )
    if d.is_rational:
        weights = [0.0]
        for k, pk in enumerate(d.probs):
            if k >= 1:
                weights.append(float(pk * ((m - 1) * k - 1) * Fraction(m) ** k))
    else:
        weights = _weight_terms_f64(d.probs, m)
    chi, xi_seq, arg = _chi_from_weights(weights, float(lam), float(beta), exact=False)
    return RegularityReport(
        beta=float(beta),
        chi=chi,
        lam=float(lam),
        xi=tuple(xi_seq),
        xi_limit=xi_seq[-1],
        argmin_j=arg,
        note=note,
    )


# ---------------------------------------------------------------------------
# scan along power-tail truncations


@dataclass(frozen=True)
class TruncatedRegularityRow:
    M: int
    p_M: float
    chi: float
    lam: float
    pre_asymptotic: bool = False


@dataclass(frozen=True)
class TruncatedRegularityScan:
    m: int
    alpha: float
    beta: float
    rho_mode: str
    rows: Tuple[TruncatedRegularityRow, ...]

    def min_chi(self) -> float:
        return min(r.chi for r in self.rows)

    def to_csv(self, dest: Union[str, IO[str]]) -> None:
        own = isinstance(dest, str)
        fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
        try:
            w = csv.writer(fh)
            w.writerow(["M", "p_M", "chi", "Lambda"])
            for r in self.rows:
                w.writerow([r.M, repr(r.p_M), repr(r.chi), repr(r.lam)])
        finally:
            if own:
                fh.close()

    def to_json_dict(self) -> dict:
        return {
            "m": self.m,
            "alpha": self.alpha,
            "beta": self.beta,
            "rho_mode": self.rho_mode,
            "rows": [
                {
                    "M": r.M,
                    "p_M": r.p_M,
                    "chi": r.chi,
                    "Lambda": r.lam,
                    "pre_asymptotic": r.pre_asymptotic,
                }
                for r in self.rows
            ],
        }


def truncated_regularity_scan(
    star: PowerTailLaw, Ms: Sequence[int], rho_mode: Optional[str] = None
) -> TruncatedRegularityScan:
    """Coefficient of the critical truncated system at each height M.

    The system under scrutiny is the critical mixture built on the
    M-truncated, atom-adjusted family member, and the natural exponent for
    this family is beta = 4 - alpha.  The atom handling defaults to the
    lower-bound construction: drop it entirely at alpha = 2, drop it with
    probability M^-(alpha-2) otherwise.

    All tilted sums here are reduced analytically, so heights far beyond
    the f64 mass horizon (k around 1060) remain exact to roundoff.
    """
    if not 2 <= star.alpha <= 4:
        raise ValidationError(
            f"the truncation scan covers tail exponents in [2, 4], got {star.alpha!r}"
        )
    if not Ms:
        raise ValidationError("need at least one truncation height")
    prev = star.ell0
    for M in Ms:
        if not isinstance(M, int) or M <= prev:
            raise ValidationError(
                "truncation heights must be strictly increasing ints "
                f"> {star.ell0}, got {list(Ms)!r}"
            )
        prev = M
    if rho_mode is None:
        rho_mode = RHO_ZERO if star.alpha == 2 else RHO_RANDOMIZED
    beta = 4.0 - star.alpha
    m = star.m
    l0 = star.ell0
    c0 = star.c0
    rows = []
    for M in Ms:
        fam = truncated_family(star, M, rho_mode)
        p_M = fam.p_M
        q = _atom_keep_fraction(star, M, rho_mode)
        # tilted weights of the mixed law, in reduced form; index 0 unused
        weights = [0.0] * (M + 1)
        weights[l0] = q * star.mass(l0) * ((m - 1) * l0 - 1) * float(m) ** l0
        for k in range(l0 + 1, M + 1):
            weights[k] = c0 * ((m - 1) * k - 1) * float(k) ** -star.alpha
        weights = [p_M * w for w in weights]
        lam = p_M * (
            q * star.mass(l0) * l0**3 * float(m) ** l0
            + c0
            * math.fsum(
                float(k) ** (3.0 - star.alpha) for k in range(M, l0, -1)
            )
        )
        chi, _, _ = _chi_from_weights(weights, lam, beta, exact=False)
        rows.append(
            TruncatedRegularityRow(
                M=M, p_M=p_M, chi=chi, lam=lam, pre_asymptotic=M < 2 * l0
            )
        )
    return TruncatedRegularityScan(
        m=m, alpha=star.alpha, beta=beta, rho_mode=rho_mode, rows=tuple(rows)
    )
