"""Jitted reduction kernels for hierarchical tree sampling.

Kept in a separate module so importing the package never pays the numba
compile cost up front, and so treemc can fall back to its vectorized numpy
path when numba is missing or DR_NO_NUMBA is set.  Both paths consume the
same uniforms in the same order; tests assert they produce identical output.

Tree orientation follows the hierarchical picture: leaves sit at level
``depth`` and are merged m at a time down to the single root at level 0.
Uniforms arrive as one row per root sample, leaves in depth-first order.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def reduce_plain(u, cdf, m, depth, out):
    """Root values for each row of uniforms; leaves drawn by inverse cdf."""
    rows, leaves = u.shape
    acc = np.zeros(depth + 1, dtype=np.int64)
    cnt = np.zeros(depth + 1, dtype=np.int64)
    top = len(cdf) - 1
    for r in range(rows):
        for lev in range(depth + 1):
            acc[lev] = 0
            cnt[lev] = 0
        for i in range(leaves):
            v = np.searchsorted(cdf, u[r, i], side="right")
            if v > top:
                v = top
            lev = depth
            acc[lev] += v
            cnt[lev] += 1
            while lev > 0 and cnt[lev] == m:
                s = acc[lev]
                acc[lev] = 0
                cnt[lev] = 0
                lev -= 1
                acc[lev] += s - 1 if s >= 1 else 0
                cnt[lev] += 1
        out[r] = acc[0]


@njit(cache=True, nogil=True)
def reduce_paths(u, cdf, m, depth, out_y, out_nz, out_nt):
    """Root value plus open-path counts for each row of uniforms.

    A leaf contributes (v, 1 if v == 0 else 0, 1).  A merge first sums the
    children coordinatewise; if the value sum is >= 1 the node is open and
    keeps (sum - 1, zero-count, total-count), otherwise all three reset to
    zero.  out_nz counts open paths rooted in zero-valued leaves, out_nt
    open paths from any leaf.
    """
    rows, leaves = u.shape
    ay = np.zeros(depth + 1, dtype=np.int64)
    az = np.zeros(depth + 1, dtype=np.int64)
    at = np.zeros(depth + 1, dtype=np.int64)
    cnt = np.zeros(depth + 1, dtype=np.int64)
    top = len(cdf) - 1
    for r in range(rows):
        for lev in range(depth + 1):
            ay[lev] = 0
            az[lev] = 0
            at[lev] = 0
            cnt[lev] = 0
        for i in range(leaves):
            v = np.searchsorted(cdf, u[r, i], side="right")
            if v > top:
                v = top
            lev = depth
            ay[lev] += v
            az[lev] += 1 if v == 0 else 0
            at[lev] += 1
            cnt[lev] += 1
            while lev > 0 and cnt[lev] == m:
                s = ay[lev]
                sz = az[lev]
                st = at[lev]
                ay[lev] = 0
                az[lev] = 0
                at[lev] = 0
                cnt[lev] = 0
                lev -= 1
                if s >= 1:
                    ay[lev] += s - 1
                    az[lev] += sz
                    at[lev] += st
                cnt[lev] += 1
        out_y[r] = ay[0]
        out_nz[r] = az[0]
        out_nt[r] = at[0]


@njit(cache=True, nogil=True)
def reduce_coupled(uy, uz, y_cdf, z_cdf, m, depth, out_x, out_y, out_n):
    """Coupled roots (X, Y, open-path count N) per row; returns violations.

    Leaf pair: Y from y_cdf; X = Y when Y > 0, else the independent Z from
    z_cdf.  N starts as 1 on zero-valued Y leaves.  A merge keeps N only
    when the Y-children sum is >= 1 (the clip was not needed).  The return
    value counts merged nodes with X < Y, which the coupling construction
    forbids; a nonzero count means the sampler itself is broken.
    """
    rows, leaves = uy.shape
    ax = np.zeros(depth + 1, dtype=np.int64)
    ay = np.zeros(depth + 1, dtype=np.int64)
    an = np.zeros(depth + 1, dtype=np.int64)
    cnt = np.zeros(depth + 1, dtype=np.int64)
    y_top = len(y_cdf) - 1
    z_top = len(z_cdf) - 1
    violations = 0
    for r in range(rows):
        for lev in range(depth + 1):
            ax[lev] = 0
            ay[lev] = 0
            an[lev] = 0
            cnt[lev] = 0
        for i in range(leaves):
            yv = np.searchsorted(y_cdf, uy[r, i], side="right")
            if yv > y_top:
                yv = y_top
            if yv == 0:
                zv = np.searchsorted(z_cdf, uz[r, i], side="right")
                if zv > z_top:
                    zv = z_top
                xv = zv
                nv = 1
            else:
                xv = yv
                nv = 0
            lev = depth
            ax[lev] += xv
            ay[lev] += yv
            an[lev] += nv
            cnt[lev] += 1
            while lev > 0 and cnt[lev] == m:
                sx = ax[lev]
                sy = ay[lev]
                sn = an[lev]
                ax[lev] = 0
                ay[lev] = 0
                an[lev] = 0
                cnt[lev] = 0
                x1 = sx - 1 if sx >= 1 else 0
                y1 = sy - 1 if sy >= 1 else 0
                n1 = sn if sy >= 1 else 0
                if x1 < y1:
                    violations += 1
                lev -= 1
                ax[lev] += x1
                ay[lev] += y1
                an[lev] += n1
                cnt[lev] += 1
        out_x[r] = ax[0]
        out_y[r] = ay[0]
        out_n[r] = an[0]
    return violations
