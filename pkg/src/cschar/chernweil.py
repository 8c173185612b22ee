"""Chern-Weil forms, transgression, and Chern-Simons actions mod Z.

The transgression form is the one-parameter integral
    Tp(A', A) = r * int_0^1 p(A' - A, F_t, ..., F_t) dt,  A_t = (1-t)A' + tA,
which satisfies d Tp(A', A) = p(F_{A'}) - p(F_A); the differential identity is
what pins the overall sign and is enforced by the test suite.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .connection import Connection, GaugeTransformation, gauge_transform, zero_connection
from .errors import (
    ChartMismatch,
    DimensionMismatch,
    GroupMismatch,
    NonIntegerDefect,
    NotFlat,
)
from .forms import (
    Chain,
    DEFAULT_QUADRATURE,
    FormField,
    QuadratureSpec,
    _gl_nodes,
    assembled_form,
    integrate,
    sample_points,
)
from .liealg import InvariantPolynomial
from .products import (
    Factor,
    curl_array,
    curvature_array,
    derivative_array,
    graded_pairing_components,
    trace_wedge_cube,
)

# ---------------------------------------------------------------------------
# values mod Z
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModZValue:
    """A real number mod 1 with tolerance-aware circle equality."""

    representative: float
    tolerance: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "representative", float(np.mod(self.representative, 1.0)))

    @staticmethod
    def from_real(x: float, tolerance: float = 1e-6) -> "ModZValue":
        return ModZValue(x, tolerance)

    def distance(self, other) -> float:
        o = other.representative if isinstance(other, ModZValue) else float(other)
        d = abs(self.representative - np.mod(o, 1.0))
        return float(min(d, 1.0 - d))

    def __add__(self, other) -> "ModZValue":
        o = other.representative if isinstance(other, ModZValue) else float(other)
        return ModZValue(self.representative + o, self.tolerance)

    def __eq__(self, other) -> bool:
        tol = self.tolerance
        if isinstance(other, ModZValue):
            tol = max(tol, other.tolerance)
        return self.distance(other) <= tol

    def integer_defect(self, lift: float) -> int:
        """Nearest integer by which a real lift differs from this class."""
        return int(np.round(lift - self.representative))


# ---------------------------------------------------------------------------
# Chern-Weil and transgression forms
# ---------------------------------------------------------------------------


def chern_weil_form(p: InvariantPolynomial, a: Connection,
                    q: QuadratureSpec = DEFAULT_QUADRATURE) -> FormField:
    """p(F, ..., F) with F the curvature of `a`; closed up to the FD floor."""
    if a.group != p.group:
        raise GroupMismatch(f"{a.group} vs polynomial group {p.group}")
    dim = a.chart.dim
    degree = 2 * p.degree
    if degree > dim:
        from .forms import zero_form

        return zero_form(a.chart, dim)
    keys = list(itertools.combinations(range(dim), degree))

    def assemble(X):
        F = curvature_array(a, X, q.fd_step)
        fac = Factor(2, lambda idx: F[:, idx[0], idx[1]], "F")
        return graded_pairing_components(p, [fac] * p.degree, dim, keys)

    return assembled_form(a.chart, degree, keys, assemble)


def transgression(p: InvariantPolynomial, a_new: Connection, a_back: Connection,
                  t_nodes: int = 12, q: QuadratureSpec = DEFAULT_QUADRATURE) -> FormField:
    """Tp(a_new, a_back) of degree 2r-1, Gauss-Legendre in the segment parameter."""
    if a_new.chart != a_back.chart:
        raise ChartMismatch(f"{a_new.chart.name} vs {a_back.chart.name}")
    if a_new.group != a_back.group or a_new.group != p.group:
        raise GroupMismatch("transgression needs one common group")
    chart = a_new.chart
    dim = chart.dim
    r = p.degree
    degree = 2 * r - 1
    if degree > dim:
        from .forms import zero_form

        return zero_form(chart, dim)
    keys = list(itertools.combinations(range(dim), degree))
    t, wt = _gl_nodes(t_nodes)

    def assemble(X):
        A1 = a_new.coefficient_array(X)
        A0 = a_back.coefficient_array(X)
        eta = A1 - A0
        eta_fac = Factor(1, lambda idx: eta[None, :, idx[0]], "eta")
        if r == 1:
            comps = graded_pairing_components(p, [Factor(1, lambda idx: eta[:, idx[0]], "eta")], dim, keys)
            return comps
        D1 = curl_array(derivative_array(a_new, X, q.fd_step))
        D0 = curl_array(derivative_array(a_back, X, q.fd_step))
        alpha = (1.0 - t)[:, None, None, None]
        beta = t[:, None, None, None]
        cache = {}

        def F_get(idx):
            # F_t = (1-t) dA1 + t dA0 + [A_t, A_t]_{ij}, brackets expanded
            # bilinearly so no (t, node, dim, n, n) array is materialized
            v = cache.get(idx)
            if v is None:
                i, j = idx
                dpart = alpha * D1[None, :, i, j] + beta * D0[None, :, i, j]
                b11 = A1[:, i] @ A1[:, j] - A1[:, j] @ A1[:, i]
                b00 = A0[:, i] @ A0[:, j] - A0[:, j] @ A0[:, i]
                bx = (A1[:, i] @ A0[:, j] - A0[:, j] @ A1[:, i]
                      + A0[:, i] @ A1[:, j] - A1[:, j] @ A0[:, i])
                v = dpart + alpha ** 2 * b11[None] + (alpha * beta) * bx[None] + beta ** 2 * b00[None]
                cache[idx] = v
            return v

        f_fac = Factor(2, F_get, "Ft")
        comps = graded_pairing_components(p, [eta_fac] + [f_fac] * (r - 1), dim, keys)
        out = {}
        for key, vals in comps.items():
            out[key] = r * np.tensordot(wt, vals, axes=(0, 0))
        return out

    return assembled_form(chart, degree, keys, assemble)


# ---------------------------------------------------------------------------
# Chern-Simons action mod Z
# ---------------------------------------------------------------------------


@dataclass
class CSActionSpec:
    """Data fixing a Chern-Simons action: polynomial, background, cycle, offset.

    The universal-class degree of freedom enters only through the offset value
    assigned to the background connection (default 0).
    """

    polynomial: InvariantPolynomial
    background: Connection
    cycle: Chain
    offset: ModZValue = field(default_factory=lambda: ModZValue(0.0))
    t_nodes: int = 12

    def __post_init__(self):
        d = 2 * self.polynomial.degree - 1
        for cell in self.cycle.cells:
            if cell.dim != d:
                raise DimensionMismatch(
                    f"cycle cells of dim {cell.dim}, polynomial needs {d}"
                )
        if d > self.background.chart.dim:
            raise DimensionMismatch("cycle dimension exceeds chart dimension")


def cs_real_lift(spec: CSActionSpec, a: Connection,
                 q: QuadratureSpec = DEFAULT_QUADRATURE, imag_tol: float = 1e-7) -> float:
    """Real-valued lift: offset + integral of Tp(a, background) over the cycle."""
    tp = transgression(spec.polynomial, a, spec.background, spec.t_nodes, q)
    val = integrate(tp, spec.cycle, q)
    if abs(np.imag(val)) > imag_tol:
        raise GroupMismatch(f"CS integrand has imaginary part {np.imag(val):.2e}")
    return float(np.real(val)) + spec.offset.representative


def cs_action(spec: CSActionSpec, a: Connection,
              q: QuadratureSpec = DEFAULT_QUADRATURE,
              tolerance: float = 1e-6) -> ModZValue:
    """lambda_c(a) = offset + int_c Tp(a, background) mod 1."""
    return ModZValue(cs_real_lift(spec, a, q), tolerance)


def cs_gauge_defect(spec: CSActionSpec, a: Connection, phi: GaugeTransformation,
                    q: QuadratureSpec = DEFAULT_QUADRATURE,
                    residual_tol: float = 0.05) -> int:
    """Integer shift of the real lift under a gauge transformation."""
    lift_a = cs_real_lift(spec, a, q)
    lift_b = cs_real_lift(spec, gauge_transform(a, phi, q), q)
    d = lift_b - lift_a
    k = int(np.round(d))
    if abs(d - k) >= residual_tol:
        raise NonIntegerDefect(f"defect {d:.6f} is {abs(d-k):.3f} from an integer")
    return k


def gauge_winding_degree(phi: GaugeTransformation, order: int = 24,
                         q: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Degree oracle (1/24 pi^2) int tr((g^{-1}dg)^3) over the unit cube.

    Independent of the transgression machinery: uses the alternating trace of
    the matrix wedge cube directly.
    """
    from .forms import Cell, ModelChart, cube_cell, tensor_grid

    a = gauge_transform(zero_connection(phi.chart, phi.group), phi, q)
    U, w = tensor_grid(3, order)
    X = np.ascontiguousarray(U)
    vals = a.coefficient_array(X)
    comp = trace_wedge_cube(vals, 3)[(0, 1, 2)]
    total = np.sum(comp * w)
    return float(np.real(total / (24.0 * np.pi ** 2)))


def locally_constant_check(spec: CSActionSpec, family, path_samples,
                           q: QuadratureSpec = DEFAULT_QUADRATURE,
                           flat_tol: float = 1e-8, n_flat_samples: int = 50,
                           seed: int = 11) -> float:
    """Max circle deviation of the action along a path in a flat family.

    `family` provides connection_at(s); flatness is verified by sampling the
    curvature sup along the path first (NotFlat otherwise).
    """
    path_samples = np.atleast_2d(np.asarray(path_samples, dtype=float))
    rng = np.random.default_rng(seed)
    chart = spec.background.chart
    X = sample_points(chart, n_flat_samples, rng)
    for s in path_samples:
        conn = family.connection_at(s)
        F = curvature_array(conn, X, q.fd_step)
        sup = float(np.max(np.abs(F)))
        if sup > flat_tol:
            raise NotFlat(f"curvature sup {sup:.2e} at parameter {s}")
    values = [cs_action(spec, family.connection_at(s), q) for s in path_samples]
    return max(values[0].distance(v) for v in values)
