"""Two-sided limit enclosures and the small-epsilon exponent fit.

The scaled mean E(X_n)/m^n decreases to the limit object F, while
(E(X_n) - 1/(m-1))/m^n increases to it.  Running the recursion therefore
yields a certified enclosure at every step; truncation shifts only the upper
side, by the priced ledger sum_i loss_i/m^i.  Near the critical point F
collapses like exp(-c / epsilon^nu), far below what an f64 can hold, so the
enclosure is carried in log space throughout (``LogReal``) and the float
fields simply underflow to 0 when the real numbers do.

The evolution loop here works on raw numpy arrays rather than LatticeDist
values: a deep scan touches thousands of steps and the array path keeps each
step allocation-light.  ``evolve`` remains the reference implementation and
the two are cross-checked in tests.

Certification caveat: elective truncation is priced exactly in the ledger,
but the step map itself runs in f64, so the bounds hold up to accumulated
rounding of order n * support * eps_machine (the total mass is renormalized
every step precisely so that rounding stays linear in n).
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import IO, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from .dist import FLUSH_THRESHOLD, LatticeDist, SystemSpec, mix
from .errors import CapacityError, PreconditionError, ValidationError
from .logspace import LogReal

STATUS_PINCHED = "pinched"
STATUS_BUDGET = "budget-limited"
STATUS_ITER = "iteration-limited"


@dataclass(frozen=True)
class FreeEnergyBounds:
    """Certified enclosure [lower, upper] for the limit of E(X_n)/m^n.

    ``lower``/``upper`` are f64 conveniences and underflow to 0.0 on deep
    runs; ``log_lower``/``log_upper`` are the authoritative natural logs
    (-inf encodes an exact zero).  ``ledger_cost`` is the total truncation
    price included in the upper bound.  ``status`` is "pinched" when the
    relative gap closed under the requested tolerance, "budget-limited" when
    truncation losses are what keeps the gap open, "iteration-limited"
    otherwise.
    """

    lower: float
    upper: float
    log_lower: float
    log_upper: float
    n_used: int
    ledger_cost: float
    log_ledger: float
    status: str

    def gap_rel(self) -> float:
        """1 - lower/upper, computed in log space; 1.0 when lower is 0."""
        if self.log_upper == float("-inf"):
            return 0.0
        if self.log_lower == float("-inf"):
            return 1.0
        return -math.expm1(self.log_lower - self.log_upper)


def _flush_arr(arr: np.ndarray) -> tuple[np.ndarray, float]:
    small = (arr > 0.0) & (arr < FLUSH_THRESHOLD)
    small[0] = False
    lost = 0.0
    if small.any():
        idx = np.nonzero(small)[0]
        lost = float(np.dot(idx.astype(np.float64), arr[idx]))
        arr[0] += float(arr[idx].sum())
        arr[idx] = 0.0
    nz = np.nonzero(arr)[0]
    top = int(nz[-1]) if len(nz) else 0
    return arr[: top + 1], lost


def _conv_pow(arr: np.ndarray, m: int) -> np.ndarray:
    nz = np.nonzero(arr)[0]
    if len(nz) == 1:
        k = int(nz[0])
        out = np.zeros(m * k + 1)
        out[m * k] = float(arr[k]) ** m
        return out
    acc: np.ndarray | None = None
    base = arr
    e = m
    while e:
        if e & 1:
            acc = base.copy() if acc is None else np.convolve(acc, base)
        e >>= 1
        if e:
            base = np.convolve(base, base)
    assert acc is not None
    return acc


def _stream(d0: np.ndarray, m: int, budget: float, hard_cap: int, n_max: int):
    """Yield (n, E, P0, priced_ledger_so_far) for n = 0..n_max.

    Raises CapacityError mid-iteration when a needed cut exceeds the step's
    budget allowance (geometric schedule, as in the budgeted policy).
    """
    lm = math.log(m)
    log_scale = None
    if budget > 0.0:
        expo = (n_max + 1) * lm
        log_denom = expo if expo > 700 else math.log(m ** (n_max + 1) - 1)
        log_scale = math.log(budget) + math.log(m - 1) - log_denom

    arr, lost0 = _flush_arr(np.array(d0, dtype=np.float64))
    ledger = LogReal.from_float(lost0)
    ks = np.arange(len(arr), dtype=np.float64)
    yield 0, float(np.dot(arr, ks)), float(arr[0]), ledger

    for n in range(1, n_max + 1):
        conv = _conv_pow(arr, m)
        if len(conv) > 1:
            conv[1] += conv[0]
            conv = conv[1:]
        # the exact map preserves total mass, but the m-fold product amplifies
        # any f64 mass error by m per step, which compounds to garbage near
        # n ~ 50; renormalizing pins the total and keeps roundoff linear in n
        total = float(conv.sum())
        if total != 1.0 and total > 0.0:
            conv /= total
        arr, lost = _flush_arr(conv)
        loss_log = math.log(lost) if lost > 0.0 else float("-inf")
        if len(arr) - 1 > hard_cap:
            idx = np.arange(hard_cap + 1, len(arr), dtype=np.float64)
            cut = float(np.dot(idx, arr[hard_cap + 1 :]))
            cut_log = math.log(cut) if cut > 0.0 else float("-inf")
            allowed = (
                cut_log == float("-inf")
                if log_scale is None
                else cut_log <= log_scale + 2 * n * lm
            )
            if not allowed:
                raise CapacityError(
                    f"step {n}: support {len(arr) - 1} exceeds hard cap {hard_cap} "
                    "and the needed cut is over this step's error allowance"
                )
            arr[0] += float(arr[hard_cap + 1 :].sum())
            arr = arr[: hard_cap + 1]
            loss_log = LogReal(loss_log) + LogReal(cut_log)
            loss_log = loss_log.log
        if loss_log != float("-inf"):
            ledger = ledger + LogReal(loss_log - n * lm)
        ks = np.arange(len(arr), dtype=np.float64)
        yield n, float(np.dot(arr, ks)), float(arr[0]), ledger


def free_energy(
    spec: SystemSpec,
    tol_rel: float = 1e-3,
    n_max: int = 100_000,
    budget: float = 0.0,
    hard_cap: int = 1 << 15,
    tol_abs: Optional[float] = None,
) -> FreeEnergyBounds:
    """Enclose the limit of E(X_n)/m^n for the given system.

    Parameters
    ----------
    spec : SystemSpec
        The system; rational backends are converted to float (this routine
        is float-only; exact references come from ``evolve`` directly).
    tol_rel : float
        Target relative gap of the enclosure.
    n_max : int
        Iteration ceiling.
    budget : float
        Total elective truncation allowance in limit units (the budgeted
        policy's schedule).  0 means flush-only.
    hard_cap : int
        Support ceiling that triggers elective truncation.
    tol_abs : float, optional
        Absolute pinch threshold for the upper bound; defaults to
        ``tol_rel``.  Sub- and critical systems stop here, with lower = 0.

    Notes
    -----
    Iteration also stops once E(X_n) >= 2/(tol_rel (m-1)): from there the
    sandwich gap is below tol_rel/2 on its own, so if the enclosure still is
    not pinched, the truncation ledger is what is in the way and more steps
    cannot help (the ledger term only looms larger as the bounds shrink).
    """
    if not tol_rel > 0:
        raise ValidationError(f"tol_rel must be > 0, got {tol_rel!r}")
    if tol_abs is None:
        tol_abs = tol_rel
    if not isinstance(n_max, int) or n_max < 0:
        raise ValidationError(f"n_max must be an int >= 0, got {n_max!r}")

    m = spec.m
    d0 = mix(spec)
    arr = d0.as_float_array()
    lm = math.log(m)
    e_stop = 2.0 / (tol_rel * (m - 1))

    lower_best = LogReal.zero()
    upper_best: Optional[LogReal] = None
    ledger_final = LogReal.zero()
    n_used = 0
    status = STATUS_ITER

    def result(st: str) -> FreeEnergyBounds:
        up = upper_best if upper_best is not None else LogReal.zero()
        return FreeEnergyBounds(
            lower=lower_best.to_float(),
            upper=up.to_float(),
            log_lower=lower_best.log,
            log_upper=up.log,
            n_used=n_used,
            ledger_cost=ledger_final.to_float(),
            log_ledger=ledger_final.log,
            status=st,
        )

    try:
        for n, e_n, _p0, ledger in _stream(arr, m, budget, hard_cap, n_max):
            n_used = n
            ledger_final = ledger
            scale = LogReal(-n * lm)
            raw_lower = e_n - 1.0 / (m - 1)
            if raw_lower > 0.0:
                cand = LogReal(math.log(raw_lower) - n * lm)
                if cand > lower_best:
                    lower_best = cand
            cand_up = (LogReal.from_float(e_n) * scale) + ledger
            if upper_best is None or cand_up < upper_best:
                upper_best = cand_up
            # pinch checks
            if upper_best.log <= (math.log(tol_abs) if tol_abs > 0 else float("-inf")):
                return result(STATUS_PINCHED)
            if not lower_best.is_zero() and upper_best is not None:
                rel = -math.expm1(lower_best.log - upper_best.log)
                if rel <= tol_rel:
                    return result(STATUS_PINCHED)
            if e_n >= e_stop:
                return result(STATUS_BUDGET if not ledger.is_zero() else STATUS_ITER)
    except CapacityError:
        return result(STATUS_BUDGET)
    return result(STATUS_ITER)


# ---------------------------------------------------------------------------
# epsilon scan


@dataclass(frozen=True)
class EpsilonPoint:
    epsilon: float
    bounds: FreeEnergyBounds


@dataclass(frozen=True)
class EpsilonScanResult:
    m: int
    p_c: float
    points: Tuple[EpsilonPoint, ...]

    def to_csv(self, dest: Union[str, IO[str]]) -> None:
        own = isinstance(dest, str)
        fh = open(dest, "w", newline="", encoding="utf-8") if own else dest
        try:
            w = csv.writer(fh)
            w.writerow(["epsilon", "F_lower", "F_upper", "n_used", "status"])
            for pt in self.points:
                b = pt.bounds
                w.writerow(
                    [
                        repr(pt.epsilon),
                        _bound_str(b.lower, b.log_lower),
                        _bound_str(b.upper, b.log_upper),
                        b.n_used,
                        b.status,
                    ]
                )
        finally:
            if own:
                fh.close()


def _bound_str(value: float, log_value: float) -> str:
    # repr when f64 can hold the number; otherwise a decimal mantissa/exponent
    # string reconstructed from the log (these occur on deep near-critical runs)
    if value > 0.0 or log_value == float("-inf"):
        return repr(value)
    return LogReal(log_value).decimal_string()


def parse_bound(s: str) -> Tuple[float, float]:
    """Inverse of the CSV bound format: returns (float value, natural log)."""
    x = float(s)
    if x > 0.0:
        return x, math.log(x)
    if "e" in s.lower() and x == 0.0:
        mant_s, exp_s = s.lower().split("e", 1)
        mant = float(mant_s)
        if mant > 0.0:
            log10 = math.log(mant) / math.log(10.0) + float(int(exp_s))
            return 0.0, log10 * math.log(10.0)
    return 0.0, float("-inf")


def _scan_point(args) -> FreeEnergyBounds:
    star_doc, m, p, tol_rel, n_max, budget, hard_cap = args
    from .dist import dist_from_json

    star = dist_from_json(star_doc)
    # tol_abs=0: every scan point sits strictly above critical, so the
    # meaningful stop is the two-sided relative pinch, however small F gets
    return free_energy(
        SystemSpec(m=m, p=p, star=star),
        tol_rel=tol_rel,
        n_max=n_max,
        budget=budget,
        hard_cap=hard_cap,
        tol_abs=0.0,
    )


def epsilon_scan(
    star: LatticeDist,
    m: int,
    epsilons: Sequence[float],
    tol_rel: float = 1e-3,
    n_max: int = 100_000,
    budget: float = 0.0,
    hard_cap: int = 1 << 15,
    p_c: Optional[float] = None,
    workers: Optional[int] = None,
) -> EpsilonScanResult:
    """Run free-energy enclosures at p = p_c + epsilon over a grid.

    ``p_c`` defaults to the critical weight of the star law actually being
    evolved (computed from its stored masses), which keeps every epsilon
    self-consistent with the system under iteration.  Workers > 1 fan the
    grid out over processes; results are merged in grid order, so the output
    never depends on the worker count.
    """
    from .criticality import critical_p
    from .dist import dist_to_json

    if not epsilons:
        raise ValidationError("need at least one epsilon")
    star_f = star.to_f64()
    if p_c is None:
        p_c = float(critical_p(star_f, m))
    for eps in epsilons:
        if not eps > 0:
            raise ValidationError(f"epsilons must be > 0, got {eps!r}")
        if p_c + eps > 1.0:
            raise ValidationError(
                f"epsilon {eps!r} pushes p past 1 (p_c = {p_c!r})"
            )

    star_doc = dist_to_json(star_f)
    jobs = [
        (star_doc, m, p_c + eps, tol_rel, n_max, budget, hard_cap) for eps in epsilons
    ]
    if workers is None:
        workers = int(os.environ.get("DR_WORKERS", "1") or "1")
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            bounds = list(pool.map(_scan_point, jobs))
    else:
        bounds = [_scan_point(j) for j in jobs]
    points = tuple(
        EpsilonPoint(epsilon=float(eps), bounds=b) for eps, b in zip(epsilons, bounds)
    )
    return EpsilonScanResult(m=m, p_c=p_c, points=points)


# ---------------------------------------------------------------------------
# exponent fit


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares slope of log(-log F) against log epsilon, negated.

    ``ci`` is not a statistical confidence interval: it is the interval of
    slopes attainable while every point stays inside its own certified
    enclosure (worst-case assignment of F within [F_lower, F_upper]).
    """

    points: Tuple[Tuple[float, float, float], ...]  # (epsilon, log_F_lower, log_F_upper)
    nu_hat: float
    ci: Tuple[float, float]
    window: Tuple[float, float]

    def to_json_dict(self) -> dict:
        return {
            "nu_hat": self.nu_hat,
            "ci": list(self.ci),
            "window": list(self.window),
            "n_points": len(self.points),
        }


def fit_exponent(
    scan: Union[EpsilonScanResult, Sequence[EpsilonPoint]],
    window: Optional[Tuple[float, float]] = None,
) -> ExponentFit:
    """Fit the collapse exponent from pinched scan points.

    Only points that are pinched, have a strictly positive lower bound and
    an upper bound below 1/e qualify (the last condition keeps -log F
    positive so its log exists); at least 4 are required.  Each point enters
    at the geometric midpoint of its enclosure.
    """
    pts = scan.points if isinstance(scan, EpsilonScanResult) else tuple(scan)
    if window is not None:
        lo, hi = window
        pts = tuple(p for p in pts if lo <= p.epsilon <= hi)
    usable = [
        p
        for p in pts
        if p.bounds.status == STATUS_PINCHED
        and p.bounds.log_lower != float("-inf")
        and p.bounds.log_upper < -1.0
    ]
    if len(usable) < 4:
        raise PreconditionError(
            f"exponent fit needs at least 4 pinched points with positive lower "
            f"bounds and upper bounds below 1/e; got {len(usable)}"
        )
    usable.sort(key=lambda p: p.epsilon)

    xs = [math.log(p.epsilon) for p in usable]
    y_mid = [
        math.log(-0.5 * (p.bounds.log_lower + p.bounds.log_upper)) for p in usable
    ]
    # per-point extremes: F at its upper bound gives the smaller -log F
    y_lo = [math.log(-p.bounds.log_upper) for p in usable]
    y_hi = [math.log(-p.bounds.log_lower) for p in usable]

    nu_hat = -_slope(xs, y_mid)
    xbar = sum(xs) / len(xs)
    y_steep = [(y_hi[i] if x <= xbar else y_lo[i]) for i, x in enumerate(xs)]
    y_shallow = [(y_lo[i] if x <= xbar else y_hi[i]) for i, x in enumerate(xs)]
    nu_a = -_slope(xs, y_steep)
    nu_b = -_slope(xs, y_shallow)
    ci = (min(nu_a, nu_b), max(nu_a, nu_b))

    triples = tuple(
        (p.epsilon, p.bounds.log_lower, p.bounds.log_upper) for p in usable
    )
    return ExponentFit(
        points=triples,
        nu_hat=nu_hat,
        ci=ci,
        window=(usable[0].epsilon, usable[-1].epsilon),
    )


def _slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    n = len(xs)
    xbar = sum(xs) / n
    ybar = sum(ys) / n
    num = sum((x - xbar) * (y - ybar) for x, y in zip(xs, ys))
    den = sum((x - xbar) ** 2 for x in xs)
    if den == 0.0:
        raise ValidationError("exponent fit needs at least two distinct epsilons")
    return num / den
