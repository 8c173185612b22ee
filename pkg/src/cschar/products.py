"""Batched kernels for invariant-polynomial products of low-degree forms.

The generic FormField product in `forms.polynomial_product` is the reference
implementation; the kernels here compute the same components directly from
coefficient arrays, batching quadrature nodes (and transgression t-nodes)
through einsum.  Factors are forms of degree 0, 1 or 2, which covers every
product the toolkit needs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .forms import _merge_indices
from .liealg import InvariantPolynomial


@dataclass
class Factor:
    """One argument of a polynomial product.

    `get(idx)` returns the coefficient array for a sorted multi-index, shaped
    (..., n, n) with arbitrary leading batch axes.  `tag` marks identical
    factors so symmetric block assignments are enumerated once.
    """

    degree: int
    get: Callable
    tag: str


def sym_trace_product(normalization, mats) -> np.ndarray:
    """N_r * fully symmetrized trace; cyclic invariance reduces to (r-1)! terms."""
    r = len(mats)
    if r == 1:
        return normalization * np.trace(mats[0], axis1=-2, axis2=-1)
    if r == 2:
        return normalization * np.einsum("...ij,...ji->...", mats[0], mats[1])
    if r == 3:
        t1 = np.einsum("...ij,...jk,...ki->...", mats[0], mats[1], mats[2])
        t2 = np.einsum("...ij,...jk,...ki->...", mats[0], mats[2], mats[1])
        return normalization * 0.5 * (t1 + t2)
    acc = 0.0
    for perm in itertools.permutations(range(1, r)):
        prod = mats[0]
        for k in perm:
            prod = prod @ mats[k]
        acc = acc + np.trace(prod, axis1=-2, axis2=-1)
    return normalization * acc / math.factorial(r - 1)


def _group_factors(factors):
    """Consecutive runs of identical tags: [(degree, [factor indices])]."""
    groups = []
    for i, f in enumerate(factors):
        if groups and factors[groups[-1][1][0]].tag == f.tag and groups[-1][0] == f.degree:
            groups[-1][1].append(i)
        else:
            groups.append((f.degree, [i]))
    return groups


def _block_assignments(key, groups):
    """Yield (blocks_per_factor, sign, multiplicity) for one result index."""

    def rec(remaining, gi):
        if gi == len(groups):
            yield []
            return
        degree, members = groups[gi]
        g = len(members)
        if degree == 0:
            for rest in rec(remaining, gi + 1):
                yield [()] * g + rest
            return
        pool = tuple(remaining)
        if g == 1 or degree % 2 == 1:
            # odd identical factors must keep signed orderings (they may cancel)
            for blocks in _ordered_blocks(pool, degree, g):
                rest_pool = tuple(x for x in pool if all(x not in b for b in blocks))
                for rest in rec(rest_pool, gi + 1):
                    yield list(blocks) + rest
        else:
            for blocks in _unordered_blocks(pool, degree, g):
                rest_pool = tuple(x for x in pool if all(x not in b for b in blocks))
                for rest in rec(rest_pool, gi + 1):
                    yield list(blocks) + rest

    for blocks in rec(tuple(key), 0):
        flat = tuple(itertools.chain.from_iterable(blocks))
        tgt, sign = _merge_indices(*[(x,) for x in flat])
        if tgt != tuple(key) or sign == 0:
            continue
        mult = 1
        pos = 0
        for degree, members in groups:
            g = len(members)
            if degree % 2 == 0 and degree > 0 and g > 1:
                mult_here = math.factorial(g)
                pos += g
                mult *= mult_here
            else:
                pos += g
        yield blocks, sign, mult


def _ordered_blocks(pool, degree, count):
    if count == 0:
        yield ()
        return
    for first in itertools.combinations(pool, degree):
        rest_pool = tuple(x for x in pool if x not in first)
        for rest in _ordered_blocks(rest_pool, degree, count - 1):
            yield (first,) + rest


def _unordered_blocks(pool, degree, count):
    if count == 0:
        yield ()
        return
    if not pool:
        return
    anchor = pool[0]
    for others in itertools.combinations(pool[1:], degree - 1):
        first = tuple(sorted((anchor,) + others))
        rest_pool = tuple(x for x in pool if x not in first)
        for rest in _unordered_blocks(rest_pool, degree, count - 1):
            yield (first,) + rest


def graded_pairing_components(
    p: InvariantPolynomial,
    factors,
    dim: int,
    keys=None,
) -> dict:
    """Components of p(w_1, ..., w_r) from factor coefficient arrays.

    Returns {sorted multi-index: batched complex array}.  Matches
    forms.polynomial_product on FormField inputs (tested against it).
    """
    total_degree = sum(f.degree for f in factors)
    if keys is None:
        keys = list(itertools.combinations(range(dim), total_degree))
    groups = _group_factors(factors)
    out = {}
    for key in keys:
        acc = None
        for blocks, sign, mult in _block_assignments(key, groups):
            mats = [f.get(b) for f, b in zip(factors, blocks)]
            v = sym_trace_product(p.normalization, mats)
            term = (sign * mult) * v
            acc = term if acc is None else acc + term
        if acc is not None:
            out[key] = acc
    return out


def trace_wedge_cube(values: np.ndarray, dim: int) -> dict:
    """Components of tr(a ^ a ^ a) for an algebra-valued 1-form.

    `values` has shape (N, dim, n, n).  Component (i<j<k) equals
    3 (tr(a_i a_j a_k) - tr(a_i a_k a_j)).
    """
    out = {}
    for i, j, k in itertools.combinations(range(dim), 3):
        t1 = np.einsum("nab,nbc,nca->n", values[:, i], values[:, j], values[:, k])
        t2 = np.einsum("nab,nbc,nca->n", values[:, i], values[:, k], values[:, j])
        out[(i, j, k)] = 3.0 * (t1 - t2)
    return out


# ---------------------------------------------------------------------------
# coefficient-array helpers for connections
# ---------------------------------------------------------------------------


def derivative_array(conn, X: np.ndarray, h: float) -> np.ndarray:
    """D[i, j] = d_i A_j as (N, dim, dim, n, n)."""
    dim = conn.chart.dim
    first = conn.coefficient_array(X)
    N, _, n, _ = first.shape
    D = np.empty((N, dim, dim, n, n), dtype=complex)
    for i in range(dim):
        Xp = X.copy()
        Xp[:, i] += h
        Xm = X.copy()
        Xm[:, i] -= h
        D[:, i] = (conn.coefficient_array(Xp) - conn.coefficient_array(Xm)) / (2.0 * h)
    return D


def curl_array(D: np.ndarray) -> np.ndarray:
    """(dA)_{ij} = D[i, j] - D[j, i]."""
    return D - np.swapaxes(D, 1, 2)


def bracket_array(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """[A_i, B_j] as (N, dim, dim, n, n)."""
    prod = np.einsum("niab,njbc->nijac", A, B)
    prod2 = np.einsum("njab,nibc->nijac", B, A)
    return prod - prod2


def curvature_array(conn, X: np.ndarray, h: float) -> np.ndarray:
    """F_{ij} = (dA)_{ij} + [A_i, A_j], antisymmetric (N, dim, dim, n, n)."""
    A = conn.coefficient_array(X)
    D = derivative_array(conn, X, h)
    return curl_array(D) + bracket_array(A, A)


def array_factor(degree: int, arr: np.ndarray, tag: str) -> Factor:
    """Factor backed by a dense array with index axes after the batch axes."""

    if degree == 0:
        return Factor(0, lambda idx, arr=arr: arr, tag)
    if degree == 1:
        return Factor(1, lambda idx, arr=arr: arr[..., idx[0], :, :], tag)
    if degree == 2:
        return Factor(2, lambda idx, arr=arr: arr[..., idx[0], idx[1], :, :], tag)
    raise ValueError("factors of degree > 2 are not supported")
