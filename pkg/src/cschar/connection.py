"""Connections on trivialized principal bundles over model charts.

A connection is an algebra-valued 1-form; curvature is F = dA + (1/2)[A, A]
with d by finite differences.  Holonomy is the ordered product of step
exponentials along a closed loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ChartMismatch, GroupMismatch, OpenLoop
from .forms import (
    Cell,
    Chain,
    DEFAULT_QUADRATURE,
    FormField,
    ModelChart,
    QuadratureSpec,
    _BatchMemo,
    exterior_derivative,
    wedge,
)
from .liealg import StructureConstants, exp_batched, group_dim


@dataclass
class Connection:
    """Algebra-valued 1-form on a trivializable bundle.

    `coefficients` returns all components at once: (N, dim) -> (N, dim, n, n).
    """

    chart: ModelChart
    group: str
    coefficients: Callable
    name: str = ""

    def __post_init__(self):
        memo = _BatchMemo(lambda X: np.asarray(self.coefficients(X)), maxsize=8)
        self._memo = memo

    def coefficient_array(self, X: np.ndarray) -> np.ndarray:
        return self._memo(np.ascontiguousarray(X))

    @property
    def form(self) -> FormField:
        comps = {
            (j,): (lambda X, j=j: self.coefficient_array(X)[:, j])
            for j in range(self.chart.dim)
        }
        return FormField(self.chart, 1, comps, self.group)

    def __sub__(self, other: "Connection") -> FormField:
        if self.chart != other.chart:
            raise ChartMismatch(f"{self.chart.name} vs {other.chart.name}")
        if self.group != other.group:
            raise GroupMismatch(f"{self.group} vs {other.group}")
        return self.form - other.form


def zero_connection(chart: ModelChart, group: str) -> Connection:
    n = group_dim(group)

    def coeffs(X):
        return np.zeros((len(X), chart.dim, n, n), dtype=complex)

    return Connection(chart, group, coeffs, name="zero")


def connection_from_form(a: FormField, name: str = "") -> Connection:
    if a.degree != 1 or a.group is None:
        raise GroupMismatch("connection needs an algebra-valued 1-form")
    n = group_dim(a.group)

    def coeffs(X):
        out = np.zeros((len(X), a.chart.dim, n, n), dtype=complex)
        for (j,), f in a.components.items():
            out[:, j] = np.asarray(f(X))
        return out

    return Connection(a.chart, a.group, coeffs, name)


@dataclass
class GaugeTransformation:
    """Smooth map from the chart into the structure group."""

    chart: ModelChart
    group: str
    g: Callable  # (N, dim) -> (N, n, n) unitary
    name: str = ""

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.g(X))

    def compose(self, other: "GaugeTransformation") -> "GaugeTransformation":
        """Pointwise product (self * other)(x) = self(x) other(x)."""
        if self.chart != other.chart or self.group != other.group:
            raise ChartMismatch("gauge transformations not composable")
        return GaugeTransformation(
            self.chart,
            self.group,
            lambda X: self(X) @ other(X),
            name=f"{self.name}*{other.name}",
        )


def curvature(a: Connection, q: QuadratureSpec = DEFAULT_QUADRATURE) -> FormField:
    """F = dA + (1/2)[A, A]."""
    da = exterior_derivative(a.form, q)
    bracket = wedge(a.form, a.form, mode="lie-bracket")
    return da + 0.5 * bracket


def gauge_transform(a: Connection, phi: GaugeTransformation,
                    q: QuadratureSpec = DEFAULT_QUADRATURE) -> Connection:
    """A^phi = Ad_{g^{-1}} A + g^{-1} dg, with dg by central differences."""
    if a.chart != phi.chart:
        raise ChartMismatch(f"{a.chart.name} vs {phi.chart.name}")
    if a.group != phi.group:
        raise GroupMismatch(f"{a.group} vs {phi.group}")
    h = q.fd_step
    dim = a.chart.dim

    def coeffs(X):
        g = phi(X)
        ginv = np.conj(np.swapaxes(g, -1, -2))
        A = a.coefficient_array(X)
        out = np.empty_like(A)
        for j in range(dim):
            Xp = X.copy()
            Xp[:, j] += h
            Xm = X.copy()
            Xm[:, j] -= h
            dg = (phi(Xp) - phi(Xm)) / (2.0 * h)
            out[:, j] = ginv @ A[:, j] @ g + ginv @ dg
        return out

    return Connection(a.chart, a.group, coeffs, name=f"{a.name}^{phi.name}")


def holonomy(a: Connection, loop: Chain, steps: int = 2000, tol: float = 1e-9):
    """Ordered product of exp(-A(gamma'(t)) dt) along a closed loop.

    Path-ordering solves the transport equation T' = -A(gamma') T, so later
    factors multiply on the left; under a gauge transformation the holonomy
    conjugates by g at the basepoint.
    """
    from .liealg import GroupElement

    if a.chart != loop.chart:
        raise ChartMismatch(f"{a.chart.name} vs {loop.chart.name}")
    cells = list(loop.cells)
    if not cells:
        raise OpenLoop("empty loop")
    for c in cells:
        if c.dim != 1:
            raise OpenLoop("holonomy needs a chain of 1-cells")
    # endpoint consistency under identifications
    pts = []
    for c in cells:
        ends = c.mapping(np.array([[0.0], [1.0]]))
        pts.append((ends[0], ends[1]) if c.sign >= 0 else (ends[1], ends[0]))
    for i, (_, end) in enumerate(pts):
        nxt = pts[(i + 1) % len(pts)][0]
        if not a.chart.same_point(end, nxt, tol):
            raise OpenLoop(f"cell {i} endpoint does not meet the next cell")

    n = group_dim(a.group)
    total = np.eye(n, dtype=complex)
    per_cell = max(1, steps // len(cells))
    for c, (start, _) in zip(cells, pts):
        t = (np.arange(per_cell) + 0.5) / per_cell
        if c.sign < 0:
            t = 1.0 - t
        U = t[:, None]
        X = c.mapping(U)
        hstep = 1e-6
        vel = (c.mapping(np.clip(U + hstep, 0, 1)) - c.mapping(np.clip(U - hstep, 0, 1)))
        dt_scale = (np.clip(U + hstep, 0, 1) - np.clip(U - hstep, 0, 1))[:, 0]
        vel = vel / dt_scale[:, None]
        if c.sign < 0:
            vel = -vel
        A = a.coefficient_array(X)
        pulled = np.einsum("nd,ndij->nij", vel, A) / per_cell
        stepmats = exp_batched(a.group, -pulled)
        for m in stepmats:
            total = m @ total
    return GroupElement(a.group, _unitarize(total))


def _unitarize(m: np.ndarray) -> np.ndarray:
    """Project an almost-unitary matrix back onto the group (polar factor)."""
    u, _, vh = np.linalg.svd(m)
    out = u @ vh
    return out


@dataclass(frozen=True)
class ConnectionCoordinates:
    """Point values A^a_j and first derivatives A^a_{j,i} in a fixed basis."""

    basis: StructureConstants
    values: np.ndarray  # (m, dim)   A^a_j
    derivs: np.ndarray  # (m, dim, dim)  A^a_{j,i} = d_i A^a_j

    def __post_init__(self):
        m = len(self.basis.basis)
        if self.values.shape[0] != m or self.derivs.shape[0] != m:
            raise GroupMismatch("coordinate arrays inconsistent with basis size")


# weight of the structure-constant term; fixed once by cross-checking against
# curvature() on sampled connections (the printed antisymmetrized sum double
# counts the bracket relative to F = dA + (1/2)[A, A])
STRUCTURE_TERM_WEIGHT = 0.5


def curvature_components(coords: ConnectionCoordinates) -> np.ndarray:
    """F^a_{ij} = A^a_{j,i} - A^a_{i,j} + kappa c^a_{bc}(A^b_i A^c_j - A^b_j A^c_i)."""
    c = coords.basis.c
    A = coords.values
    dA = coords.derivs
    m, dim = A.shape
    F = np.zeros((m, dim, dim))
    for a in range(m):
        for i in range(dim):
            for j in range(dim):
                quad = 0.0
                for b in range(m):
                    for g in range(m):
                        quad += c[a, b, g] * (A[b, i] * A[g, j] - A[b, j] * A[g, i])
                F[a, i, j] = dA[a, j, i] - dA[a, i, j] + STRUCTURE_TERM_WEIGHT * quad
    return F
