"""Hierarchical sampling and open-path accounting.

A depth-n sample of the recursion is a reversed m-ary tree: m**n i.i.d.
leaves, merged m at a time through y = (sum - 1)^+ down to a single root,
whose value then has the law of the n-times evolved system.  This module
draws such samples reproducibly, estimates functionals of the root with
batched streams, and computes the exact joint law of the root value
together with its number of open paths (paths along which the clip at zero
was never needed).

Determinism contract: a (law, m, depth, size, seed) tuple always yields the
same samples.  Batch b of 1024 roots draws from Philox(seed) jumped b
times, so results do not depend on how batches are chunked internally, and
extending ``size`` never changes the samples already drawn.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Iterator, Tuple

import numpy as np

from .dist import (
    FLUSH_THRESHOLD,
    LatticeDist,
    _scaled_weighted_sum,
    dr_step,
    moment_panel,
    pgf,
)
from .errors import CapacityError, PreconditionError, ValidationError

BATCH_SIZE = 1024
MAX_LEAVES = 1 << 30
_CHUNK_CELLS = 1 << 23

_K = None
_K_FAILED = False


def _active_kernels():
    """The jitted kernel module, or None to use the numpy path."""
    global _K, _K_FAILED
    if os.environ.get("DR_NO_NUMBA"):
        return None
    if _K is None and not _K_FAILED:
        try:
            from . import _kernels

            _K = _kernels
        except Exception:
            _K_FAILED = True
    return _K


def leaf_cdf(d: LatticeDist) -> np.ndarray:
    """Cumulative masses with the top pinned to 1, for inverse sampling."""
    arr = d.to_f64().as_float_array()
    cdf = np.cumsum(arr)
    cdf[-1] = 1.0
    return cdf


def _validate_tree_args(m, depth, size, seed) -> int:
    if not isinstance(m, int) or m < 2:
        raise ValidationError(f"m must be an int >= 2, got {m!r}")
    if not isinstance(depth, int) or depth < 0:
        raise ValidationError(f"depth must be an int >= 0, got {depth!r}")
    if not isinstance(size, int) or size < 1:
        raise ValidationError(f"size must be an int >= 1, got {size!r}")
    if not isinstance(seed, int) or not 0 <= seed < 1 << 64:
        raise ValidationError(f"seed must be an int in [0, 2**64), got {seed!r}")
    leaves = m**depth
    if leaves > MAX_LEAVES:
        raise CapacityError(
            f"one sample touches m**depth = {leaves} leaves, over the "
            f"{MAX_LEAVES} limit; lower the depth"
        )
    return leaves


def _reduce_rows(vals: np.ndarray, m: int, depth: int) -> np.ndarray:
    x = vals
    for _ in range(depth):
        x = x.reshape(x.shape[0], -1, m).sum(axis=2)
        np.subtract(x, 1, out=x)
        np.maximum(x, 0, out=x)
    return x[:, 0]


def _reduce_path_rows(vals: np.ndarray, m: int, depth: int):
    y = vals
    nz = (vals == 0).astype(np.int64)
    nt = np.ones_like(vals)
    for _ in range(depth):
        ys = y.reshape(y.shape[0], -1, m).sum(axis=2)
        nzs = nz.reshape(nz.shape[0], -1, m).sum(axis=2)
        nts = nt.reshape(nt.shape[0], -1, m).sum(axis=2)
        closed = ys < 1
        y = np.maximum(ys - 1, 0)
        nz = np.where(closed, 0, nzs)
        nt = np.where(closed, 0, nts)
    return y[:, 0], nz[:, 0], nt[:, 0]


def _sample_chunks(
    d: LatticeDist, m: int, depth: int, size: int, seed: int
) -> Iterator[np.ndarray]:
    leaves = _validate_tree_args(m, depth, size, seed)
    cdf = leaf_cdf(d)
    ker = _active_kernels()
    rows_cap = max(1, _CHUNK_CELLS // leaves)
    for lo in range(0, size, BATCH_SIZE):
        hi = min(size, lo + BATCH_SIZE)
        gen = np.random.Generator(np.random.Philox(key=seed).jumped(lo // BATCH_SIZE))
        r = lo
        while r < hi:
            rc = min(hi - r, rows_cap)
            u = gen.random((rc, leaves))
            if ker is not None:
                out = np.empty(rc, dtype=np.int64)
                ker.reduce_plain(u, cdf, m, depth, out)
            else:
                v = np.searchsorted(cdf, u, side="right").astype(np.int64)
                np.minimum(v, len(cdf) - 1, out=v)
                out = _reduce_rows(v, m, depth)
            yield out
            r += rc


def sample_tree(d: LatticeDist, m: int, depth: int, size: int, seed: int) -> np.ndarray:
    """Draw ``size`` root samples of the depth-times evolved law.

    The input law is the leaf (generation zero) law; rational backends are
    converted to f64 for sampling.  Returns an int64 array.
    """
    return np.concatenate(list(_sample_chunks(d, m, depth, size, seed)))


def _sample_path_chunks(
    d: LatticeDist, m: int, depth: int, size: int, seed: int
) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    leaves = _validate_tree_args(m, depth, size, seed)
    cdf = leaf_cdf(d)
    ker = _active_kernels()
    rows_cap = max(1, _CHUNK_CELLS // leaves)
    for lo in range(0, size, BATCH_SIZE):
        hi = min(size, lo + BATCH_SIZE)
        gen = np.random.Generator(np.random.Philox(key=seed).jumped(lo // BATCH_SIZE))
        r = lo
        while r < hi:
            rc = min(hi - r, rows_cap)
            u = gen.random((rc, leaves))
            if ker is not None:
                y = np.empty(rc, dtype=np.int64)
                nz = np.empty(rc, dtype=np.int64)
                nt = np.empty(rc, dtype=np.int64)
                ker.reduce_paths(u, cdf, m, depth, y, nz, nt)
            else:
                v = np.searchsorted(cdf, u, side="right").astype(np.int64)
                np.minimum(v, len(cdf) - 1, out=v)
                y, nz, nt = _reduce_path_rows(v, m, depth)
            yield y, nz, nt
            r += rc


@dataclass(frozen=True)
class PathSample:
    """Root values with their open-path counts, one entry per sampled tree.

    ``n_zero`` counts open paths rooted in zero-valued leaves, ``n_total``
    open paths from any leaf; an open path is one along which no merge ever
    needed the clip at zero.
    """

    y: np.ndarray
    n_zero: np.ndarray
    n_total: np.ndarray


def sample_paths(d: LatticeDist, m: int, depth: int, size: int, seed: int) -> PathSample:
    """Like sample_tree, but keeps the per-tree open-path counts.

    Consumes the same uniforms in the same order as sample_tree, so the
    ``y`` component is identical to the plain sampler's output for equal
    arguments.
    """
    ys, nzs, nts = [], [], []
    for y, nz, nt in _sample_path_chunks(d, m, depth, size, seed):
        ys.append(y)
        nzs.append(nz)
        nts.append(nt)
    return PathSample(
        y=np.concatenate(ys), n_zero=np.concatenate(nzs), n_total=np.concatenate(nts)
    )


@dataclass(frozen=True)
class MCResult:
    """Streamed mean/variance of a root functional, merged batch by batch."""

    mean: float
    variance: float
    stderr: float
    size: int

    def margin(self, z: float = 3.0) -> float:
        return z * self.stderr


def mc_functional(
    d: LatticeDist,
    m: int,
    depth: int,
    size: int,
    seed: int,
    fn: Callable[[np.ndarray], np.ndarray],
) -> MCResult:
    """Estimate E[fn(root)] by tree sampling.

    ``fn`` must map an int64 array of root values to a same-length float
    array, vectorized.  Pairwise (Chan) merging keeps the result identical
    to a single-pass computation over the full sample while never holding
    more than one chunk in memory.
    """
    n_tot = 0
    mean = 0.0
    m2 = 0.0
    for chunk in _sample_chunks(d, m, depth, size, seed):
        vals = np.asarray(fn(chunk), dtype=np.float64)
        if vals.shape != chunk.shape:
            raise ValidationError(
                f"functional returned shape {vals.shape} for input {chunk.shape}"
            )
        nb = len(vals)
        mb = float(vals.mean())
        m2b = float(((vals - mb) ** 2).sum())
        delta = mb - mean
        total = n_tot + nb
        mean += delta * nb / total
        m2 += m2b + delta * delta * n_tot * nb / total
        n_tot = total
    variance = m2 / (n_tot - 1) if n_tot > 1 else 0.0
    return MCResult(
        mean=mean,
        variance=variance,
        stderr=math.sqrt(variance / n_tot) if n_tot else 0.0,
        size=n_tot,
    )


def mc_path_functional(
    d: LatticeDist,
    m: int,
    depth: int,
    size: int,
    seed: int,
    fn: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
) -> MCResult:
    """Estimate E[fn(root, zero-path count, total-path count)].

    Same streaming and merge discipline as mc_functional; ``fn`` gets the
    three int64 chunk arrays and must return a float array of equal length.
    """
    n_tot = 0
    mean = 0.0
    m2 = 0.0
    for y, nz, nt in _sample_path_chunks(d, m, depth, size, seed):
        vals = np.asarray(fn(y, nz, nt), dtype=np.float64)
        if vals.shape != y.shape:
            raise ValidationError(
                f"functional returned shape {vals.shape} for input {y.shape}"
            )
        nb = len(vals)
        mb = float(vals.mean())
        m2b = float(((vals - mb) ** 2).sum())
        delta = mb - mean
        total = n_tot + nb
        mean += delta * nb / total
        m2 += m2b + delta * delta * n_tot * nb / total
        n_tot = total
    variance = m2 / (n_tot - 1) if n_tot > 1 else 0.0
    return MCResult(
        mean=mean,
        variance=variance,
        stderr=math.sqrt(variance / n_tot) if n_tot else 0.0,
        size=n_tot,
    )


def product_weight(m: int) -> Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]:
    """The functional m**Y (1 + Y) N behind the product identity."""
    if not isinstance(m, int) or m < 2:
        raise ValidationError(f"m must be an int >= 2, got {m!r}")

    def fn(y, nz, nt):
        return float(m) ** y * (1.0 + y) * nz

    return fn


def path_indicator(r: int, k: int) -> Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]:
    """The functional N 1{N >= r} 1{Y = k} used by the bridge bound."""
    if not isinstance(r, int) or r < 0:
        raise ValidationError(f"r must be an int >= 0, got {r!r}")
    if not isinstance(k, int) or k < 0:
        raise ValidationError(f"k must be an int >= 0, got {k!r}")

    def fn(y, nz, nt):
        return np.where((nz >= r) & (y == k), nz, 0).astype(np.float64)

    return fn


# ---------------------------------------------------------------------------
# exact joint law of (root value, number of open paths from zero leaves)


JOINT_CAP = 4096


@dataclass(frozen=True, eq=False)
class JointLaw:
    """Joint table P(root = y, open paths from zero leaves = j).

    ``table[y, j]`` holds the mass; entries below the flush threshold were
    swept into (0, 0), which carries zero weight in every open-path
    functional, so the sweep can only under-count those.
    """

    m: int
    n_steps: int
    table: np.ndarray

    def root_marginal(self) -> LatticeDist:
        return LatticeDist.from_masses(self.table.sum(axis=1))

    def open_path_weighted_mean(self) -> float:
        """E[m**Y (1 + Y) N] over the table."""
        rowdots = self.table @ np.arange(self.table.shape[1], dtype=np.float64)
        return _scaled_weighted_sum(rowdots, float(self.m), lambda y: 1.0 + y)

    def to_csv(self, buf) -> None:
        """Write the populated cells as (k, j, mass) triples, row-major."""
        buf.write("k,j,mass\r\n")
        for k in range(self.table.shape[0]):
            for j in range(self.table.shape[1]):
                w = float(self.table[k, j])
                if w:
                    buf.write(f"{k},{j},{w!r}\r\n")

    def bridge_expectation(self, r: int, k: int) -> float:
        """E[N 1{N >= r} 1{Y = k}]."""
        if not isinstance(r, int) or r < 0:
            raise ValidationError(f"r must be an int >= 0, got {r!r}")
        if not isinstance(k, int) or k < 0:
            raise ValidationError(f"k must be an int >= 0, got {k!r}")
        if k >= self.table.shape[0]:
            return 0.0
        cols = self.table.shape[1]
        if r >= cols:
            return 0.0
        js = np.arange(r, cols, dtype=np.float64)
        return float(np.dot(js, self.table[k, r:]))


def _conv_pow_arr(arr: np.ndarray, m: int) -> np.ndarray:
    acc = None
    base = arr
    e = m
    while e:
        if e & 1:
            acc = base.copy() if acc is None else np.convolve(acc, base)
        e >>= 1
        if e:
            base = np.convolve(base, base)
    return acc


def _joint_step(table: np.ndarray, m: int) -> np.ndarray:
    R, C = table.shape
    # Kronecker flattening: one long polynomial with stride wide enough that
    # the open-path coordinate can never carry into the value coordinate
    W = m * (C - 1) + 1
    flat = np.zeros((R - 1) * W + C)
    for y in range(R):
        flat[y * W : y * W + C] = table[y]
    conv = _conv_pow_arr(flat, m)
    Rc = m * (R - 1) + 1
    c2 = conv.reshape(Rc, W)
    if Rc == 1:
        out = np.zeros((1, 1))
        out[0, 0] = c2.sum()
    else:
        out = c2[1:, :].copy()
        out[0, 0] += c2[0, :].sum()
    dust = (out > 0.0) & (out < FLUSH_THRESHOLD)
    dust[0, 0] = False
    if dust.any():
        out[0, 0] += out[dust].sum()
        out[dust] = 0.0
    rows = np.nonzero(out.any(axis=1))[0]
    cols = np.nonzero(out.any(axis=0))[0]
    return out[: rows[-1] + 1, : cols[-1] + 1]


def joint_law(d0: LatticeDist, m: int, n_steps: int) -> JointLaw:
    """Evolve the exact (root, open paths) table for ``n_steps`` levels.

    Cost scales with the square of the table's flattened footprint, so the
    path count is capped at m**n_steps <= 4096; in practice anything past
    ten or so levels at m = 2 takes minutes.
    """
    if not isinstance(m, int) or m < 2:
        raise ValidationError(f"m must be an int >= 2, got {m!r}")
    if not isinstance(n_steps, int) or n_steps < 0:
        raise ValidationError(f"n_steps must be an int >= 0, got {n_steps!r}")
    if m**n_steps > JOINT_CAP:
        raise ValidationError(
            f"m**n_steps = {m**n_steps} exceeds the joint-law cap {JOINT_CAP}"
        )
    arr = d0.to_f64().as_float_array()
    table = np.zeros((len(arr), 2))
    table[0, 1] = arr[0]
    table[1:, 0] = arr[1:]
    for _ in range(n_steps):
        table = _joint_step(table, m)
    return JointLaw(m=m, n_steps=n_steps, table=table)


def _dict_mul(a: Dict[Tuple[int, int], Fraction], b) -> Dict[Tuple[int, int], Fraction]:
    out: Dict[Tuple[int, int], Fraction] = {}
    for (y1, n1), w1 in a.items():
        for (y2, n2), w2 in b.items():
            key = (y1 + y2, n1 + n2)
            if key in out:
                out[key] += w1 * w2
            else:
                out[key] = w1 * w2
    return out


def joint_law_exact(
    d0: LatticeDist, m: int, n_steps: int
) -> Dict[Tuple[int, int], Fraction]:
    """Rational joint table as a sparse dict, for cross-checking joint_law.

    Requires a rational law and m**n_steps <= 256; the dict product is
    quadratic in the number of populated (value, paths) pairs.
    """
    if not d0.is_rational:
        raise ValidationError("joint_law_exact needs a rational-backend law")
    if not isinstance(n_steps, int) or n_steps < 0:
        raise ValidationError(f"n_steps must be an int >= 0, got {n_steps!r}")
    if m**n_steps > 256:
        raise ValidationError(
            f"m**n_steps = {m**n_steps} exceeds the exact joint-law cap 256"
        )
    cur: Dict[Tuple[int, int], Fraction] = {}
    for k, pk in enumerate(d0.probs):
        if pk:
            cur[(k, 1 if k == 0 else 0)] = Fraction(pk)
    for _ in range(n_steps):
        conv = None
        for _ in range(m):
            conv = dict(cur) if conv is None else _dict_mul(conv, cur)
        nxt: Dict[Tuple[int, int], Fraction] = {}
        for (sy, sn), w in conv.items():
            key = (sy - 1, sn) if sy >= 1 else (0, 0)
            if key in nxt:
                nxt[key] += w
            else:
                nxt[key] = w
        cur = nxt
    return cur


@dataclass(frozen=True)
class ProductFormulaReport:
    """Both sides of the open-path product identity, with their mismatch.

    On a critical system, E[m**Y_n (1 + Y_n) N_n] must equal
    P(Y_0 = 0) times the product over k < n of E(m**Y_k)**(m-1).
    """

    n_steps: int
    lhs: float
    rhs: float
    rel_err: float
    delta_residual: float
    backend: str


def product_formula_check(
    d0: LatticeDist, m: int, n_steps: int, tol_delta: float = 1e-9
) -> ProductFormulaReport:
    """Verify the open-path product identity on a critical law.

    The identity only holds when the law is critical, so the run refuses
    laws whose criticality functional is further than ``tol_delta``
    (relative to E(m**Y)) from zero.  Rational laws are checked exactly;
    float laws go through the table evolution.
    """
    panel = moment_panel(d0, m)
    h = panel.h
    resid = abs(panel.delta / h) if h else abs(panel.delta)
    resid = float(resid)
    if resid > tol_delta:
        raise PreconditionError(
            f"law is not critical: relative criticality residual {resid:.3e} "
            f"exceeds {tol_delta:.1e}"
        )
    if d0.is_rational:
        joint = joint_law_exact(d0, m, n_steps)
        lhs_q = Fraction(0)
        for (y, j), w in joint.items():
            if j:
                lhs_q += w * (m**y) * (1 + y) * j
        rhs_q = Fraction(d0.probs[0])
        cur = d0
        for _ in range(n_steps):
            rhs_q *= pgf(cur, m) ** (m - 1)
            cur = dr_step(cur, m)
        lhs, rhs = float(lhs_q), float(rhs_q)
        rel = float(abs(lhs_q - rhs_q) / rhs_q) if rhs_q else float(abs(lhs_q))
        backend = "rational"
    else:
        jl = joint_law(d0, m, n_steps)
        lhs = jl.open_path_weighted_mean()
        rhs = float(d0.probs[0])
        cur = d0
        for _ in range(n_steps):
            rhs *= float(pgf(cur, m)) ** (m - 1)
            cur = dr_step(cur, m)
        rel = abs(lhs - rhs) / rhs if rhs else abs(lhs)
        backend = "f64"
    return ProductFormulaReport(
        n_steps=n_steps,
        lhs=lhs,
        rhs=rhs,
        rel_err=rel,
        delta_residual=resid,
        backend=backend,
    )
