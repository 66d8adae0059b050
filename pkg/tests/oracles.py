"""Brute-force reference implementations used as independent cross-checks.

Everything here is written the dumb way on purpose: full enumeration over
tuples, Fraction arithmetic, no shortcuts shared with the package code.  Keep
it that way; the value of these oracles is that they cannot agree with drlab
by construction.
"""

import itertools
import random
from fractions import Fraction


def brute_dr_step(masses, m):
    """One map step by enumerating all m-tuples of the support.

    ``masses`` is a {value: Fraction} dict; returns the same shape.  Cost is
    |support|^m so keep the inputs tiny.
    """
    items = sorted(masses.items())
    out = {}
    for combo in itertools.product(items, repeat=m):
        w = Fraction(1)
        total = 0
        for k, p in combo:
            total += k
            w *= p
        v = total - 1 if total >= 1 else 0
        out[v] = out.get(v, Fraction(0)) + w
    return {k: v for k, v in sorted(out.items()) if v}


def brute_iterate(masses, m, n):
    for _ in range(n):
        masses = brute_dr_step(masses, m)
    return masses


def _reduce_counts(vals, m):
    # vals holds (value, zero-origin open paths, open paths) per node
    while len(vals) > 1:
        nxt = []
        for i in range(0, len(vals), m):
            grp = vals[i : i + m]
            s = sum(y for y, _, _ in grp)
            if s >= 1:
                nxt.append(
                    (s - 1, sum(z for _, z, _ in grp), sum(t for _, _, t in grp))
                )
            else:
                nxt.append((0, 0, 0))
        vals = nxt
    return vals[0]


def brute_tree_joint(masses, m, depth):
    """Joint law of (root value, open paths from zero leaves, open paths).

    Enumerates every assignment of leaf values to the m^depth leaves of the
    complete tree, so it is only usable for depth <= 2 or so.  Returns a
    {(y, nz, nt): Fraction} dict.
    """
    items = sorted(masses.items())
    out = {}
    for combo in itertools.product(items, repeat=m**depth):
        w = Fraction(1)
        for _, p in combo:
            w *= p
        leaves = [(v, 1 if v == 0 else 0, 1) for v, _ in combo]
        key = _reduce_counts(leaves, m)
        out[key] = out.get(key, Fraction(0)) + w
    return {k: v for k, v in out.items() if v}


def random_law(rng: random.Random, max_top=6, max_weight=9):
    """Random rational law with support inside {0..max_top}."""
    top = rng.randint(1, max_top)
    weights = [rng.randint(0, max_weight) for _ in range(top + 1)]
    if not any(weights):
        weights[0] = 1
    tot = sum(weights)
    return {k: Fraction(w, tot) for k, w in enumerate(weights) if w}


def random_star(rng: random.Random, max_top=5, max_weight=9):
    """Random rational spread law: no mass at 0, some mass at 2 or beyond."""
    while True:
        top = rng.randint(2, max_top)
        weights = [0] + [rng.randint(0, max_weight) for _ in range(top)]
        if any(weights[2:]):
            tot = sum(weights)
            return {k: Fraction(w, tot) for k, w in enumerate(weights) if w}
