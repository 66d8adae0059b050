"""Dominance coupling of two systems and the bridge inequality.

Given leaf laws x0 and y0 with P(x0 = k) >= P(y0 = k) for every k >= 1,
the two systems can be run on one tree so that the x-value dominates the
y-value at every node: each leaf draws Y from y0, keeps X = Y when Y > 0,
and otherwise redraws X from the residual law

    P(Z = k) = (P(x0 = k) - P(y0 = k)) / P(y0 = 0)   for k >= 1,
    P(Z = 0) = P(x0 = 0) / P(y0 = 0).

With the y-system critical, counting its open paths from zero-valued
leaves gives a lower bound on the x-system's mean: for eta with
E(x0 - y0) >= eta P(y0 = 0), any r >= 0 and any integer ell in [0, r eta/2],

    E(X_{n+k+ell}) >= m**(k+ell) * eta / 2 * E[N 1{N >= r} 1{Y_n = k}].

``bridge_check`` evaluates both sides, exactly through the joint table or
by coupled sampling when the depth is out of the table's reach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import treemc
from .dist import LatticeDist, dr_step, expectation
from .errors import PreconditionError, ValidationError
from .evolution import TruncationPolicy, evolve

_DOM_SLACK = 1e-15


@dataclass(frozen=True)
class Coupling:
    """A dominance pair: leaf laws, the residual law, and the largest
    usable eta (that is, E(x0 - y0) / P(y0 = 0))."""

    x0: LatticeDist
    y0: LatticeDist
    residual: LatticeDist
    eta_max: object

    def eta_value(self) -> float:
        return float(self.eta_max)


def make_coupling(x0: LatticeDist, y0: LatticeDist) -> Coupling:
    """Build the residual law and validate the dominance hypotheses.

    Both laws rational gives an exact residual; otherwise everything runs
    in f64, where deficits within one ulp are forgiven (clamped to zero)
    but anything larger raises with the offending lattice points listed.
    """
    exact = x0.is_rational and y0.is_rational
    if not exact:
        x0, y0 = x0.to_f64(), y0.to_f64()
    y_zero = y0.probs[0]
    if y_zero <= 0:
        raise PreconditionError("y0 must put positive mass at 0")
    top = max(x0.support_max, y0.support_max)
    bad = []
    diffs = []
    for k in range(1, top + 1):
        diff = x0.mass(k) - y0.mass(k)
        if exact:
            if diff < 0:
                bad.append(k)
        elif diff < -_DOM_SLACK:
            bad.append(k)
        elif diff < 0:
            diff = 0.0
        diffs.append(diff)
    if bad:
        shown = ", ".join(str(k) for k in bad[:8])
        more = "" if len(bad) <= 8 else f" (and {len(bad) - 8} more)"
        raise PreconditionError(
            f"x0 does not dominate y0: mass deficit at k = {shown}{more}"
        )
    res = {0: x0.mass(0) / y_zero}
    for k, diff in enumerate(diffs, start=1):
        if diff:
            res[k] = diff / y_zero
    residual = LatticeDist.from_masses(res)
    eta_max = (expectation(x0) - expectation(y0)) / y_zero
    return Coupling(x0=x0, y0=y0, residual=residual, eta_max=eta_max)


@dataclass(frozen=True)
class CoupledSample:
    """Root triples from one coupled tree run.

    ``violations`` counts merged nodes where the x-value fell below the
    y-value; the construction makes that impossible, so anything nonzero
    indicates a sampler bug and is worth a hard test failure.
    """

    x: np.ndarray
    y: np.ndarray
    open_paths: np.ndarray
    violations: int


def sample_coupled_tree(
    coupling: Coupling, m: int, depth: int, size: int, seed: int
) -> CoupledSample:
    """Draw coupled root samples; see the module docstring for the scheme.

    Uniform consumption is two per leaf (the residual draw is consumed
    even when unused) so the jitted and numpy paths stay aligned.
    """
    leaves = treemc._validate_tree_args(m, depth, size, seed)
    y_cdf = treemc.leaf_cdf(coupling.y0)
    z_cdf = treemc.leaf_cdf(coupling.residual)
    ker = treemc._active_kernels()
    out_x = np.empty(size, dtype=np.int64)
    out_y = np.empty(size, dtype=np.int64)
    out_n = np.empty(size, dtype=np.int64)
    violations = 0
    rows_cap = max(1, treemc._CHUNK_CELLS // (2 * leaves))
    for lo in range(0, size, treemc.BATCH_SIZE):
        hi = min(size, lo + treemc.BATCH_SIZE)
        gen = np.random.Generator(
            np.random.Philox(key=seed).jumped(lo // treemc.BATCH_SIZE)
        )
        r = lo
        while r < hi:
            rc = min(hi - r, rows_cap)
            u = gen.random((rc, 2, leaves))
            uy = np.ascontiguousarray(u[:, 0, :])
            uz = np.ascontiguousarray(u[:, 1, :])
            sl = slice(r, r + rc)
            if ker is not None:
                violations += ker.reduce_coupled(
                    uy, uz, y_cdf, z_cdf, m, depth, out_x[sl], out_y[sl], out_n[sl]
                )
            else:
                xv, yv, nv, bad = _reduce_coupled_numpy(uy, uz, y_cdf, z_cdf, m, depth)
                out_x[sl], out_y[sl], out_n[sl] = xv, yv, nv
                violations += bad
            r += rc
    return CoupledSample(x=out_x, y=out_y, open_paths=out_n, violations=violations)


def _inverse(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    v = np.searchsorted(cdf, u, side="right").astype(np.int64)
    np.minimum(v, len(cdf) - 1, out=v)
    return v


def _reduce_coupled_numpy(uy, uz, y_cdf, z_cdf, m, depth):
    yv = _inverse(y_cdf, uy)
    zv = _inverse(z_cdf, uz)
    at_zero = yv == 0
    xv = np.where(at_zero, zv, yv)
    nv = at_zero.astype(np.int64)
    violations = 0
    for _ in range(depth):
        sx = xv.reshape(xv.shape[0], -1, m).sum(axis=2)
        sy = yv.reshape(yv.shape[0], -1, m).sum(axis=2)
        sn = nv.reshape(nv.shape[0], -1, m).sum(axis=2)
        alive = sy >= 1
        xv = np.maximum(sx - 1, 0)
        yv = np.where(alive, sy - 1, 0)
        nv = np.where(alive, sn, 0)
        violations += int((xv < yv).sum())
    return xv[:, 0], yv[:, 0], nv[:, 0], violations


@dataclass(frozen=True)
class BridgeReport:
    """One evaluation of the bridge inequality.

    ``lhs_lower`` is a certified lower value for E(X_{n+k+ell}) (the
    evolved trace is a stochastic minorant); ``rhs`` is the open-path side
    including its prefactor.  In sampling mode ``rhs_stderr`` carries the
    standard error of the open-path expectation, already scaled by the
    prefactor, and the pass verdict discounts three of them.
    """

    n: int
    k: int
    ell: int
    r: int
    eta: float
    lhs_lower: float
    rhs: float
    rhs_stderr: float
    mode: str
    passed: bool

    def slack(self) -> float:
        return self.lhs_lower - (self.rhs - 3.0 * self.rhs_stderr)


def bridge_check(
    coupling: Coupling,
    m: int,
    n: int,
    r: int,
    k: int,
    ell: int,
    eta: Optional[float] = None,
    mode: str = "exact",
    mc_size: int = 200_000,
    seed: int = 0,
) -> BridgeReport:
    """Evaluate both sides of the bridge inequality for one parameter set.

    Parameters follow the inequality: open paths are counted at depth
    ``n``, conditioned on the y-root equal to ``k`` and at least ``r``
    open paths, and the x-system mean is taken ``k + ell`` levels deeper.
    ``eta`` defaults to its maximal admissible value; ``ell`` must be an
    integer in [0, r*eta/2].

    mode "exact" computes the open-path side from the joint table (depth
    capped as in ``treemc.joint_law``); mode "mc" estimates it from
    ``mc_size`` coupled trees with seed ``seed``.
    """
    if not isinstance(n, int) or n < 0:
        raise ValidationError(f"n must be an int >= 0, got {n!r}")
    if not isinstance(k, int) or k < 0:
        raise ValidationError(f"k must be an int >= 0, got {k!r}")
    if not isinstance(r, int) or r < 0:
        raise ValidationError(f"r must be an int >= 0, got {r!r}")
    if not isinstance(ell, int) or ell < 0:
        raise ValidationError(f"ell must be an int >= 0, got {ell!r}")
    eta_cap = coupling.eta_value()
    if eta is None:
        eta_v = eta_cap
    else:
        eta_v = float(eta)
        if eta_v > eta_cap + 1e-12:
            raise PreconditionError(
                f"eta = {eta_v!r} exceeds E(x0 - y0)/P(y0 = 0) = {eta_cap!r}"
            )
    if eta_v <= 0:
        raise PreconditionError("the coupling has eta_max <= 0; the bridge is vacuous")
    if ell > r * eta_v / 2:
        raise PreconditionError(
            f"ell = {ell} is past the admissible range [0, r*eta/2] = "
            f"[0, {r * eta_v / 2:.6g}]"
        )

    if mode == "exact":
        jl = treemc.joint_law(coupling.y0, m, n)
        open_side = jl.bridge_expectation(r, k)
        stderr = 0.0
    elif mode == "mc":
        cs = sample_coupled_tree(coupling, m, n, mc_size, seed)
        if cs.violations:
            raise PreconditionError(
                f"coupled sampler reported {cs.violations} dominance violations"
            )
        mask = cs.y == k
        if r > 0:
            mask &= cs.open_paths >= r
        vals = np.where(mask, cs.open_paths, 0).astype(np.float64)
        open_side = float(vals.mean())
        stderr = float(vals.std(ddof=1) / math.sqrt(len(vals)))
    else:
        raise ValidationError(f"mode must be 'exact' or 'mc', got {mode!r}")

    pref = float(m ** (k + ell)) * eta_v / 2.0
    rhs = pref * open_side
    rhs_stderr = pref * stderr

    depth_x = n + k + ell
    trace = evolve(coupling.x0, m, depth_x, TruncationPolicy.none())
    lhs_lower = float(trace.expectations[-1])
    passed = lhs_lower >= rhs - 3.0 * rhs_stderr - 1e-12
    return BridgeReport(
        n=n,
        k=k,
        ell=ell,
        r=r,
        eta=eta_v,
        lhs_lower=lhs_lower,
        rhs=rhs,
        rhs_stderr=rhs_stderr,
        mode=mode,
        passed=passed,
    )
