"""Finite-support lattice laws and the one-step recursion map.

The objects here are probability laws on {0, 1, 2, ...} with finitely many
atoms, stored densely as a mass vector.  Two backends share one interface:

* ``"f64"``: numpy double precision, compensated sums via ``math.fsum``;
* ``"rational"``: exact ``fractions.Fraction`` masses.

The central operation is ``dr_step``: draw ``m`` independent copies, add
them, subtract one unit and clip at zero.  On mass vectors that is an m-fold
convolution followed by an index shift that folds indices 0 and 1 together.

Convolutions are schoolbook (no FFT anywhere, so mass vectors never go
negative from rounding).  The float backend uses ``np.convolve``; the
rational backend packs the common-denominator integer vector into a single
big integer (fixed-width limbs) and lets ``gmpy2`` do one big multiply, which
is the same schoolbook product evaluated far faster than per-entry Fraction
arithmetic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Tuple, Union

import gmpy2
import numpy as np

from .errors import CapacityError, MomentOverflowError, ValidationError

BACKEND_F64 = "f64"
BACKEND_RATIONAL = "rational"
_BACKENDS = (BACKEND_F64, BACKEND_RATIONAL)

#: Float masses strictly below this are flushed to zero during
#: canonicalization; the flushed mass is moved to index 0 so the total is
#: conserved, and the expectation lost is reported by the ``*_with_loss``
#: operations so evolution ledgers can record it.
FLUSH_THRESHOLD = 1e-320

#: Default ceiling on the largest support point a convolution may produce.
DEFAULT_HARD_CAP = 1 << 20

#: Construction-time tolerance on the total mass of a float law.
MASS_TOL = 1e-12

MassValue = Union[float, Fraction]


@dataclass(frozen=True)
class LatticeDist:
    """Immutable finite-support law on the nonnegative integers.

    ``probs[k]`` is the mass at k.  Canonical form: at least one entry, no
    trailing zero unless the law is the point mass at 0, every entry
    nonnegative, total mass 1 (exact for rational, within ``MASS_TOL`` for
    float at construction; outputs of long op chains may drift further and
    are not re-validated, see ``_make``).
    """

    probs: Tuple[MassValue, ...]
    backend: str

    def __post_init__(self):
        if self.backend not in _BACKENDS:
            raise ValidationError(
                f"unknown backend {self.backend!r}, expected one of {_BACKENDS}"
            )
        if not self.probs:
            raise ValidationError("a law needs at least one mass entry")

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_masses(
        cls,
        masses: Union[Sequence[MassValue], Mapping[int, MassValue]],
        backend: str | None = None,
    ) -> "LatticeDist":
        """Build and validate a law from a dense sequence or a {k: mass} map.

        Parameters
        ----------
        masses : sequence or mapping
            Dense mass vector, or a sparse mapping from support point to
            mass.  Negative masses and (for float) totals off 1 by more than
            ``MASS_TOL`` are rejected.
        backend : str, optional
            ``"f64"`` or ``"rational"``.  When omitted it is inferred:
            rational if every mass is an int or Fraction, float otherwise.

        Float masses below ``FLUSH_THRESHOLD`` are flushed to index 0 as part
        of canonicalization.
        """
        if isinstance(masses, Mapping):
            if not masses:
                raise ValidationError("empty mass mapping")
            for k in masses:
                if not isinstance(k, int) or k < 0:
                    raise ValidationError(f"support points must be ints >= 0, got {k!r}")
            top = max(masses)
            dense: list = [0] * (top + 1)
            for k, v in masses.items():
                dense[k] = v
        else:
            dense = list(masses)
            if not dense:
                raise ValidationError("empty mass sequence")

        if backend is None:
            backend = (
                BACKEND_RATIONAL
                if all(isinstance(v, (int, Fraction)) for v in dense)
                else BACKEND_F64
            )
        elif backend not in _BACKENDS:
            raise ValidationError(
                f"unknown backend {backend!r}, expected one of {_BACKENDS}"
            )

        if backend == BACKEND_RATIONAL:
            vals = []
            for v in dense:
                if isinstance(v, float):
                    raise ValidationError(
                        "float mass in a rational-backend law; pass Fractions"
                    )
                vals.append(Fraction(v))
            if any(v < 0 for v in vals):
                raise ValidationError("negative mass")
            total = sum(vals)
            if total != 1:
                raise ValidationError(f"rational masses must sum to exactly 1, got {total}")
            return cls._make(_trim(vals), BACKEND_RATIONAL)

        arr = [float(v) for v in dense]
        if any(v < 0 for v in arr):
            raise ValidationError("negative mass")
        total = math.fsum(arr)
        if abs(total - 1.0) > MASS_TOL:
            raise ValidationError(
                f"float masses must sum to 1 within {MASS_TOL}, got {total!r}"
            )
        arr, _ = _flush_small(arr)
        return cls._make(_trim(arr), BACKEND_F64)

    @classmethod
    def delta(cls, k: int, backend: str = BACKEND_F64) -> "LatticeDist":
        """Point mass at k."""
        if not isinstance(k, int) or k < 0:
            raise ValidationError(f"delta needs an int k >= 0, got {k!r}")
        one: MassValue = Fraction(1) if backend == BACKEND_RATIONAL else 1.0
        zero: MassValue = Fraction(0) if backend == BACKEND_RATIONAL else 0.0
        return cls._make([zero] * k + [one], backend)

    @classmethod
    def _make(cls, vals: list, backend: str) -> "LatticeDist":
        # Internal: trusts vals to be canonical (trimmed, nonneg).  Outputs of
        # validated ops re-enter here without a fresh sum check, because float
        # mass drifts multiplicatively over long op chains and re-checking at
        # MASS_TOL would reject perfectly healthy deep laws.
        return cls(tuple(vals), backend)

    # -- simple accessors ---------------------------------------------------

    @property
    def support_max(self) -> int:
        return len(self.probs) - 1

    def mass(self, k: int) -> MassValue:
        if 0 <= k < len(self.probs):
            return self.probs[k]
        return Fraction(0) if self.backend == BACKEND_RATIONAL else 0.0

    @property
    def is_rational(self) -> bool:
        return self.backend == BACKEND_RATIONAL

    def total_mass(self) -> MassValue:
        if self.is_rational:
            return sum(self.probs)
        return math.fsum(self.probs)

    def as_float_array(self) -> np.ndarray:
        return np.array([float(v) for v in self.probs], dtype=np.float64)

    def to_f64(self) -> "LatticeDist":
        """Float-backend copy (identity on float laws).

        Rational masses that round below ``FLUSH_THRESHOLD`` are flushed; the
        conversion therefore loses the far tail of very spread-out laws.
        """
        if not self.is_rational:
            return self
        arr, _ = _flush_small([float(v) for v in self.probs])
        return LatticeDist._make(_trim(arr), BACKEND_F64)

    def __len__(self) -> int:
        return len(self.probs)


# ---------------------------------------------------------------------------
# canonicalization helpers


def _trim(vals: list) -> list:
    n = len(vals)
    while n > 1 and vals[n - 1] == 0:
        n -= 1
    return vals[:n]


def _flush_small(arr: list) -> tuple[list, float]:
    """Zero out sub-threshold float masses, moving their total to index 0.

    Returns the cleaned vector and the expectation lost (mass moves down to
    0, so the result is stochastically below the input).
    """
    lost_exp = 0.0
    moved = []
    out = list(arr)
    for k, v in enumerate(out):
        if k > 0 and 0.0 < v < FLUSH_THRESHOLD:
            moved.append(v)
            lost_exp += k * v
            out[k] = 0.0
    if moved:
        out[0] = math.fsum([out[0]] + moved)
    return out, lost_exp


# ---------------------------------------------------------------------------
# integer-vector convolution (rational backend workhorse)


def _pack_pow(nums: list[int], m: int) -> list[int]:
    """Coefficients of (sum nums[i] x^i)**m via packed big-integer power.

    Each coefficient of the result is bounded by (max num)**m times the
    number of m-term compositions, so a limb of
    m*maxbits + (m-1)*len.bit_length() + 2 bits can never carry.
    """
    n_out = (len(nums) - 1) * m + 1
    max_bits = max(v.bit_length() for v in nums)
    limb = m * max_bits + (m - 1) * max(len(nums).bit_length(), 1) + 2
    limb = ((limb + 7) // 8) * 8
    width = limb // 8
    buf = bytearray(len(nums) * width)
    for i, v in enumerate(nums):
        if v:
            b = v.to_bytes((v.bit_length() + 7) // 8, "little")
            off = i * width
            buf[off : off + len(b)] = b
    packed = int.from_bytes(bytes(buf), "little")
    powed = int(gmpy2.mpz(packed) ** m)
    raw = powed.to_bytes(n_out * width + width, "little")
    return [
        int.from_bytes(raw[j * width : (j + 1) * width], "little") for j in range(n_out)
    ]


def _pack_mul(a: list[int], b: list[int]) -> list[int]:
    """Plain convolution of two integer vectors, same packing trick."""
    n_out = len(a) + len(b) - 1
    bits_a = max(v.bit_length() for v in a)
    bits_b = max(v.bit_length() for v in b)
    limb = bits_a + bits_b + max(min(len(a), len(b)).bit_length(), 1) + 2
    limb = ((limb + 7) // 8) * 8
    width = limb // 8

    def pack(vec: list[int]) -> int:
        buf = bytearray(len(vec) * width)
        for i, v in enumerate(vec):
            if v:
                bb = v.to_bytes((v.bit_length() + 7) // 8, "little")
                off = i * width
                buf[off : off + len(bb)] = bb
        return int.from_bytes(bytes(buf), "little")

    prod = int(gmpy2.mpz(pack(a)) * gmpy2.mpz(pack(b)))
    raw = prod.to_bytes(n_out * width + width, "little")
    return [
        int.from_bytes(raw[j * width : (j + 1) * width], "little") for j in range(n_out)
    ]


def _common_numerators(probs: Sequence[Fraction]) -> tuple[list[int], int]:
    den = 1
    for v in probs:
        den = den * v.denominator // math.gcd(den, v.denominator)
    nums = [int(v.numerator * (den // v.denominator)) for v in probs]
    return nums, den


# ---------------------------------------------------------------------------
# public ops


def convolve(a: LatticeDist, b: LatticeDist, hard_cap: int = DEFAULT_HARD_CAP) -> LatticeDist:
    """Law of X + Y for independent X ~ a, Y ~ b (same backend)."""
    if a.backend != b.backend:
        raise ValidationError("cannot convolve laws with different backends")
    if a.support_max + b.support_max > hard_cap:
        raise CapacityError(
            f"convolution support {a.support_max + b.support_max} exceeds hard cap {hard_cap}"
        )
    if a.is_rational:
        na, da = _common_numerators(a.probs)
        nb, db = _common_numerators(b.probs)
        prod = _pack_mul(na, nb)
        den = da * db
        vals = [Fraction(v, den) for v in prod]
        return LatticeDist._make(_trim(vals), BACKEND_RATIONAL)
    out = np.convolve(a.as_float_array(), b.as_float_array())
    arr, _ = _flush_small(out.tolist())
    return LatticeDist._make(_trim(arr), BACKEND_F64)


def convolve_power(
    d: LatticeDist, m: int, hard_cap: int = DEFAULT_HARD_CAP
) -> LatticeDist:
    """Law of the sum of m independent copies of d.

    Parameters
    ----------
    d : LatticeDist
    m : int
        Number of copies, m >= 1.
    hard_cap : int
        Maximum allowed support point of the result; exceeding it raises
        ``CapacityError`` before any work is done.

    Notes
    -----
    Schoolbook products only.  Float uses ``np.convolve`` under binary
    exponentiation; rational goes through one packed big-integer power, which
    performs the identical arithmetic exactly.
    """
    law, _ = convolve_power_with_loss(d, m, hard_cap)
    return law


def convolve_power_with_loss(
    d: LatticeDist, m: int, hard_cap: int = DEFAULT_HARD_CAP
) -> tuple[LatticeDist, MassValue]:
    """Like ``convolve_power`` but also returns the flushed expectation."""
    if not isinstance(m, int) or m < 1:
        raise ValidationError(f"copy count must be an int >= 1, got {m!r}")
    out_top = d.support_max * m
    if out_top > hard_cap:
        raise CapacityError(
            f"convolution support {out_top} exceeds hard cap {hard_cap}"
        )
    nonzero = [k for k, v in enumerate(d.probs) if v != 0]
    if len(nonzero) == 1:
        # point mass: the sum of m copies is a point mass at m*k, and the
        # schoolbook product would waste O(support^2) work discovering that
        k = nonzero[0]
        if d.is_rational:
            vals: list = [Fraction(0)] * (m * k) + [d.probs[k] ** m]
            return LatticeDist._make(vals, BACKEND_RATIONAL), Fraction(0)
        varr = [0.0] * (m * k) + [float(d.probs[k]) ** m]
        return LatticeDist._make(varr, BACKEND_F64), 0.0
    if d.is_rational:
        if m == 1:
            return d, Fraction(0)
        nums, den = _common_numerators(d.probs)
        prod = _pack_pow(nums, m)
        big_den = den**m
        vals = [Fraction(v, big_den) for v in prod]
        return LatticeDist._make(_trim(vals), BACKEND_RATIONAL), Fraction(0)
    if m == 1:
        return d, 0.0
    # binary exponentiation over np.convolve
    base = d.as_float_array()
    acc: np.ndarray | None = None
    e = m
    while e:
        if e & 1:
            acc = base.copy() if acc is None else np.convolve(acc, base)
        e >>= 1
        if e:
            base = np.convolve(base, base)
    assert acc is not None
    arr, lost = _flush_small(acc.tolist())
    return LatticeDist._make(_trim(arr), BACKEND_F64), lost


def dr_step(d: LatticeDist, m: int, hard_cap: int = DEFAULT_HARD_CAP) -> LatticeDist:
    """One step of the recursion: sum m copies, subtract 1, clip at 0.

    Sub-threshold float flushing inside this op moves mass to index 0; use
    ``dr_step_with_loss`` when the caller keeps an error ledger.
    """
    law, _ = dr_step_with_loss(d, m, hard_cap)
    return law


def dr_step_with_loss(
    d: LatticeDist, m: int, hard_cap: int = DEFAULT_HARD_CAP
) -> tuple[LatticeDist, MassValue]:
    """One recursion step plus the expectation lost to float flushing."""
    if not isinstance(m, int) or m < 2:
        raise ValidationError(f"branching number must be an int >= 2, got {m!r}")
    conv, lost = convolve_power_with_loss(d, m, hard_cap=hard_cap)
    p = list(conv.probs)
    if len(p) == 1:
        return LatticeDist._make(p, d.backend), lost
    head = p[0] + p[1]
    if not d.is_rational and (p[0] or p[1]):
        head = math.fsum((p[0], p[1]))
    shifted = [head] + p[2:]
    return LatticeDist._make(_trim(shifted), d.backend), lost


def truncate_down(d: LatticeDist, cap: int) -> tuple[LatticeDist, MassValue]:
    """Move all mass above support point ``cap`` to 0.

    Returns the truncated law and the expectation removed.  The result is a
    stochastic minorant of the input, which is what makes truncation errors
    one-sided and priceable.
    """
    if not isinstance(cap, int) or cap < 0:
        raise ValidationError(f"cap must be an int >= 0, got {cap!r}")
    if cap >= d.support_max:
        zero: MassValue = Fraction(0) if d.is_rational else 0.0
        return d, zero
    head = list(d.probs[: cap + 1])
    tail = d.probs[cap + 1 :]
    if d.is_rational:
        moved = sum(tail)
        lost = sum(k * v for k, v in enumerate(tail, start=cap + 1))
        head[0] += moved
    else:
        moved = math.fsum(tail)
        lost = math.fsum(k * v for k, v in enumerate(tail, start=cap + 1))
        head[0] = math.fsum((head[0], moved))
    return LatticeDist._make(_trim(head), d.backend), lost


# ---------------------------------------------------------------------------
# generating function and moments


def pgf(d: LatticeDist, s) -> MassValue:
    """Probability generating function E(s**X), evaluated by Horner's rule."""
    if d.is_rational:
        sv = _as_fraction(s, "pgf point")
        acc = Fraction(0)
        for pk in reversed(d.probs):
            acc = acc * sv + pk
        return acc
    sv = float(s)
    acc_f = 0.0
    for pk in reversed(d.probs):
        acc_f = acc_f * sv + pk
    if math.isinf(acc_f):
        raise MomentOverflowError(
            "generating function overflowed f64; the rational backend computes it exactly"
        )
    return acc_f


def pgf_derivatives(d: LatticeDist, s, order: int = 3) -> tuple:
    """Value and first ``order`` derivatives of the generating function at s.

    Derivative r is the falling-factorial sum over the mass vector,
    sum_k p_k k(k-1)...(k-r+1) s^(k-r); the float path runs each sum through
    the same scaled accumulation as ``weighted_moment`` so s near the
    branching number with large supports cannot blow up intermediates.
    """
    if not isinstance(order, int) or not 0 <= order <= 3:
        raise ValidationError(f"derivative order must be in 0..3, got {order!r}")
    out = []
    for r in range(order + 1):
        if d.is_rational:
            sv = _as_fraction(s, "evaluation point")
            total = Fraction(0)
            for k, pk in enumerate(d.probs):
                if pk == 0 or k < r:
                    continue
                ff = 1
                for i in range(r):
                    ff *= k - i
                total += pk * ff * sv ** (k - r)
            out.append(total)
        else:
            sv = float(s)

            def weight(k: int, _r=r) -> float:
                if k < _r:
                    return 0.0
                w = 1.0
                for i in range(_r):
                    w *= k - i
                return w

            out.append(_scaled_weighted_sum(d.probs, sv, weight, shift=-r))
    return tuple(out)


def _scaled_weighted_sum(probs, base: float, weight, shift: int = 0) -> float:
    """sum_k p_k * weight(k) * base**(k+shift) without intermediate overflow.

    base**k is carried as (mantissa, exponent) via frexp, each term is
    reassembled with ldexp, and the terms go through fsum.  A term that
    genuinely leaves f64 range raises ``MomentOverflowError``.
    """
    if base < 0:
        raise ValidationError(f"base must be >= 0, got {base!r}")
    terms = []
    if base == 0.0:
        # only k = -shift contributes (0**0 == 1)
        k = -shift
        if 0 <= k < len(probs):
            w = weight(k)
            if w:
                terms.append(probs[k] * w)
        return math.fsum(terms)
    mant, ex = math.frexp(1.0)
    lb = math.frexp(base)
    for k, pk in enumerate(probs):
        if k:
            mant *= lb[0]
            mant, e2 = math.frexp(mant)
            ex += lb[1] + e2
        if pk == 0.0:
            continue
        w = weight(k)
        if w == 0.0:
            continue
        # renormalize the mass too, so subnormal entries lose no further bits
        pm, pe = math.frexp(pk)
        try:
            term = math.ldexp(pm * w * mant, ex + pe)
            if shift:
                term *= base**shift
        except OverflowError:
            raise MomentOverflowError(
                f"weighted sum term at k={k} overflowed f64; "
                "the rational backend computes this exactly"
            ) from None
        if math.isinf(term):
            raise MomentOverflowError(
                f"weighted sum term at k={k} overflowed f64; "
                "the rational backend computes this exactly"
            )
        terms.append(term)
    total = math.fsum(terms)
    if math.isinf(total):
        raise MomentOverflowError(
            "weighted sum overflowed f64; the rational backend computes this exactly"
        )
    return total


def weighted_moment(d: LatticeDist, j: int, base) -> MassValue:
    """E(X**j * base**X) for j in 0..3.

    Parameters
    ----------
    d : LatticeDist
    j : int
        Power on X, between 0 and 3.
    base : positive number
        Exponential tilt.  ``base=1`` gives plain moments.

    Raises
    ------
    MomentOverflowError
        Float backend only, when the sum leaves f64 range.  The error message
        points at the rational backend, which has no range limit.
    """
    if not isinstance(j, int) or not 0 <= j <= 3:
        raise ValidationError(f"moment order must be an int in 0..3, got {j!r}")
    if d.is_rational:
        bv = _as_fraction(base, "tilt base")
        if bv <= 0:
            raise ValidationError(f"tilt base must be > 0, got {base!r}")
        nums, den = _common_numerators(d.probs)
        if bv.denominator == 1 and j <= 3:
            b = bv.numerator
            dot = sum(n * (k**j if j else 1) * b**k for k, n in enumerate(nums) if n)
            return Fraction(dot, den)
        total = Fraction(0)
        for k, pk in enumerate(d.probs):
            if pk:
                total += pk * (k**j if j else 1) * bv**k
        return total
    bv = float(base)
    if bv <= 0:
        raise ValidationError(f"tilt base must be > 0, got {base!r}")
    return _scaled_weighted_sum(d.probs, bv, lambda k: float(k**j) if j else 1.0)


def expectation(d: LatticeDist) -> MassValue:
    """Mean of the law."""
    one = Fraction(1) if d.is_rational else 1.0
    return weighted_moment(d, 1, one)


@dataclass(frozen=True)
class MomentPanel:
    """The m-tilted moments steering the recursion, plus their combination.

    delta = (m-1)*h1 - h changes sign exactly at criticality: negative means
    the mean collapses to the pinned regime, positive means it escapes.
    """

    h: MassValue
    h1: MassValue
    h2: MassValue
    h3: MassValue
    delta: MassValue


def moment_panel(d: LatticeDist, m: int) -> MomentPanel:
    """Compute E(X^j m^X) for j = 0..3 and the sign quantity delta."""
    if not isinstance(m, int) or m < 2:
        raise ValidationError(f"branching number must be an int >= 2, got {m!r}")
    base = Fraction(m) if d.is_rational else float(m)
    h = weighted_moment(d, 0, base)
    h1 = weighted_moment(d, 1, base)
    h2 = weighted_moment(d, 2, base)
    h3 = weighted_moment(d, 3, base)
    return MomentPanel(h=h, h1=h1, h2=h2, h3=h3, delta=(m - 1) * h1 - h)


def _as_fraction(x, what: str) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        # floats convert exactly (binary rationals); callers who care about
        # decimal-looking inputs should pass Fractions themselves
        return Fraction(x)
    raise ValidationError(f"{what} must be int, float or Fraction, got {type(x).__name__}")


# ---------------------------------------------------------------------------
# model systems


@dataclass(frozen=True)
class SystemSpec:
    """A family member: branching number m, mixing weight p, spread law.

    The initial condition is ``(1-p) delta_0 + p * star``.  The spread law
    must avoid 0 (its mass there would just fold into the 1-p atom) and must
    put positive mass on {2, 3, ...}; without that the recursion never grows
    and every p behaves the same.
    """

    m: int
    p: MassValue
    star: LatticeDist

    def __post_init__(self):
        if not isinstance(self.m, int) or self.m < 2:
            raise ValidationError(f"branching number must be an int >= 2, got {self.m!r}")
        if isinstance(self.p, float) and self.star.is_rational:
            raise ValidationError(
                "rational-backend system needs a Fraction (or int) mixing weight"
            )
        p = self.p
        if not 0 <= p <= 1:
            raise ValidationError(f"mixing weight must lie in [0, 1], got {p!r}")
        validate_star(self.star)


def validate_star(star: LatticeDist) -> None:
    """Reject laws unusable as the spread component of a mixture."""
    if star.mass(0) != 0:
        raise ValidationError("spread law must put no mass at 0")
    if star.support_max < 2 or all(v == 0 for v in star.probs[2:]):
        raise ValidationError("spread law must put positive mass on {2, 3, ...}")


def mix(spec: SystemSpec) -> LatticeDist:
    """Initial law (1-p) delta_0 + p * star of a system."""
    star = spec.star
    p = spec.p
    if star.is_rational:
        pf = _as_fraction(p, "mixing weight")
        vals = [pf * v for v in star.probs]
        vals[0] = vals[0] + (1 - pf)
        return LatticeDist._make(_trim(vals), BACKEND_RATIONAL)
    pf = float(p)
    vals = [pf * float(v) for v in star.probs]
    vals[0] = vals[0] + (1.0 - pf)
    arr, _ = _flush_small(vals)
    return LatticeDist._make(_trim(arr), BACKEND_F64)


# ---------------------------------------------------------------------------
# comparisons


def stochastically_leq(a: LatticeDist, b: LatticeDist) -> bool:
    """True when a is everywhere below b in the usual stochastic order.

    Checked via tail masses: P(A >= k) <= P(B >= k) for every k.  Exact when
    both laws are rational; float comparisons allow no tolerance, so use this
    on float laws only where the dominance is structural.
    """
    if a.is_rational and b.is_rational:
        ta = Fraction(1)
        tb = Fraction(1)
        for k in range(1, max(len(a), len(b)) + 1):
            ta -= a.mass(k - 1)
            tb -= b.mass(k - 1)
            if ta > tb:
                return False
        return True
    fa = a.as_float_array()
    fb = b.as_float_array()
    # tail sums from the top, so no cancellation
    ta_arr = np.cumsum(fa[::-1])[::-1]
    tb_arr = np.cumsum(fb[::-1])[::-1]
    n = max(len(fa), len(fb))
    for k in range(1, n):
        ta = float(ta_arr[k]) if k < len(fa) else 0.0
        tb = float(tb_arr[k]) if k < len(fb) else 0.0
        if ta > tb + 1e-15:
            return False
    return True


# ---------------------------------------------------------------------------
# serialization


def dist_to_json(d: LatticeDist) -> dict:
    """JSON-ready dict; rational masses become exact "num/den" strings."""
    if d.is_rational:
        probs = [f"{v.numerator}/{v.denominator}" for v in d.probs]
    else:
        probs = [float(v) for v in d.probs]
    return {"probs": probs, "backend": d.backend}


def dist_from_json(doc: dict) -> LatticeDist:
    """Inverse of ``dist_to_json``; round-trips are bit-exact."""
    if not isinstance(doc, dict):
        raise ValidationError("distribution document must be a JSON object")
    extra = set(doc) - {"probs", "backend"}
    if extra:
        raise ValidationError(f"unknown keys in distribution document: {sorted(extra)}")
    if "probs" not in doc or "backend" not in doc:
        raise ValidationError('distribution document needs "probs" and "backend"')
    backend = doc["backend"]
    if backend not in _BACKENDS:
        raise ValidationError(f"unknown backend {backend!r}")
    raw = doc["probs"]
    if not isinstance(raw, list) or not raw:
        raise ValidationError('"probs" must be a non-empty list')
    if backend == BACKEND_RATIONAL:
        vals = []
        for item in raw:
            if isinstance(item, str):
                try:
                    vals.append(Fraction(item))
                except (ValueError, ZeroDivisionError) as exc:
                    raise ValidationError(f"bad rational mass {item!r}: {exc}") from None
            elif isinstance(item, int):
                vals.append(Fraction(item))
            else:
                raise ValidationError(
                    f"rational masses must be \"num/den\" strings or ints, got {item!r}"
                )
        return LatticeDist.from_masses(vals, BACKEND_RATIONAL)
    vals_f = []
    for item in raw:
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise ValidationError(f"float masses must be numbers, got {item!r}")
        vals_f.append(float(item))
    return LatticeDist.from_masses(vals_f, BACKEND_F64)


def read_dist(path) -> LatticeDist:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON: {exc}") from None
    return dist_from_json(doc)


def write_dist(d: LatticeDist, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dist_to_json(d), fh, indent=2, sort_keys=True)
        fh.write("\n")
