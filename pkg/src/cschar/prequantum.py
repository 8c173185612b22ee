"""Prequantum line-bundle holonomy from differential characters.

The lifted action is alpha_phi(x) = int_gamma lambda - chi(pi o gamma) along
the straight segment from x to phi x; the holonomy of the lifted connection
over a loop is the lambda line integral minus alpha of the closing deck
element.  Loops and connecting paths are polylines.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .chernweil import ModZValue, transgression
from .equivariant import ConnectionFamily, sigma_density
from .errors import (
    CornerTooClose,
    DimensionMismatch,
    HypothesisViolated,
    NonLiftable,
    NotFlat,
)
from .forms import (
    Chain,
    DEFAULT_QUADRATURE,
    FormField,
    ModelChart,
    QuadratureSpec,
    _gl_nodes,
    exterior_derivative,
    sample_points,
    tensor_grid,
)
from .liealg import InvariantPolynomial
from .products import curvature_array

# ---------------------------------------------------------------------------
# polyline utilities
# ---------------------------------------------------------------------------


def polyline_integral(w: FormField, pts: np.ndarray, order: int = 12) -> float:
    """Integral of a scalar 1-form along a polyline, Gauss-Legendre per segment."""
    pts = np.asarray(pts, dtype=float)
    t, wt = _gl_nodes(order)
    total = 0.0 + 0.0j
    for a, b in zip(pts[:-1], pts[1:]):
        seg = b - a
        X = a[None, :] + t[:, None] * seg[None, :]
        for (j,), f in w.components.items():
            if seg[j] != 0.0:
                total += np.sum(np.asarray(f(X)) * wt) * seg[j]
    return complex(total).real


def shoelace_area(pts: np.ndarray) -> float:
    """Signed area of a closed polygon (equivalently the loop integral of x dy)."""
    pts = np.asarray(pts, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return float(0.5 * np.sum(x * yn - xn * y))


def square_loop(lo: float, hi: float) -> np.ndarray:
    """Counterclockwise boundary of the axis square [lo, hi]^2."""
    return np.array([[lo, lo], [hi, lo], [hi, hi], [lo, hi], [lo, lo]])


# ---------------------------------------------------------------------------
# lattice quotients and reference characters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeAction:
    """Z^2 acting on the plane by unit translations."""

    def apply(self, element, x: np.ndarray) -> np.ndarray:
        m, n = element
        return np.asarray(x, dtype=float) + np.array([float(m), float(n)])

    def compose(self, e1, e2):
        return (e1[0] + e2[0], e1[1] + e2[1])

    def displacement(self, x: np.ndarray, y: np.ndarray):
        """The deck element sending x to y, or None."""
        d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
        r = np.round(d)
        if np.max(np.abs(d - r)) > 1e-9:
            return None
        return (int(r[0]), int(r[1]))


@dataclass
class AreaCharacter:
    """Reference character on the unit-torus quotient with curvature dx^dy.

    Value on a loop: signed area of the lift closed by coordinate return
    segments, plus assigned holonomies on the two fundamental cycles.
    """

    holonomy_x: float = 0.0
    holonomy_y: float = 0.0

    def curvature(self, chart: ModelChart) -> FormField:
        return FormField(chart, 2, {(0, 1): lambda X: np.ones(len(X), dtype=complex)}, None)

    def evaluate(self, path_pts: np.ndarray, element) -> float:
        m, n = element
        end = path_pts[-1]
        closure = [end - np.array([float(m), 0.0]), end - np.array([float(m), float(n)])]
        poly = np.vstack([path_pts, closure])
        return float(np.mod(shoelace_area(poly) + m * self.holonomy_x + n * self.holonomy_y, 1.0))


@dataclass
class PrequantumData:
    """Simply connected total chart, acting group, potential and character."""

    chart: ModelChart
    action: LatticeAction
    potential: FormField  # scalar 1-form lambda
    character: AreaCharacter

    def hypothesis_defect(self, n_samples: int = 40, seed: int = 9,
                          q: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
        """Sampled |d lambda - pulled-back character curvature|."""
        rng = np.random.default_rng(seed)
        X = sample_points(self.chart, n_samples, rng)
        dl = exterior_derivative(self.potential, q)
        curv = self.character.curvature(self.chart)
        worst = 0.0
        for idx in set(dl.components) | set(curv.components):
            d = dl.component_values(idx, X) - curv.component_values(idx, X)
            worst = max(worst, float(np.max(np.abs(d))))
        return worst


@dataclass
class LiftedAction:
    """alpha_phi(x) values of the unique U(1) lift of the deck action."""

    data: PrequantumData
    segment_order: int = 16

    def alpha(self, element, x, waypoints=None) -> float:
        """alpha along the straight segment x -> phi x (or given waypoints)."""
        x = np.asarray(x, dtype=float)
        target = self.data.action.apply(element, x)
        if waypoints is None:
            path = np.vstack([x, target])
        else:
            path = np.vstack([x, np.asarray(waypoints, dtype=float), target])
        lam = polyline_integral(self.data.potential, path, self.segment_order)
        chi = self.data.character.evaluate(path, element)
        return float(np.mod(lam - chi, 1.0))


def build_lift(data: PrequantumData, hypothesis_tol: float = 1e-8) -> LiftedAction:
    defect = data.hypothesis_defect()
    if defect > hypothesis_tol:
        raise HypothesisViolated(f"|d lambda - curvature| = {defect:.2e}")
    return LiftedAction(data)


def cocycle_check(lift: LiftedAction, pairs, points) -> float:
    """Max circle deviation of alpha_{phi psi}(x) - alpha_phi(psi x) - alpha_psi(x)."""
    worst = 0.0
    act = lift.data.action
    for phi, psi in pairs:
        for x in np.atleast_2d(points):
            lhs = lift.alpha(act.compose(phi, psi), x)
            rhs = lift.alpha(phi, act.apply(psi, x)) + lift.alpha(psi, x)
            d = abs(np.mod(lhs - rhs, 1.0))
            worst = max(worst, min(d, 1.0 - d))
    return worst


def prequantum_holonomy(data: PrequantumData, lift: LiftedAction,
                        path_pts: np.ndarray) -> ModZValue:
    """Holonomy of the lifted connection over a loop given by its lifted path.

    The loop in the quotient closes through the deck element sending the path
    start to its end; holonomy = int lambda - alpha_deck(start) mod 1.
    """
    path_pts = np.asarray(path_pts, dtype=float)
    deck = data.action.displacement(path_pts[0], path_pts[-1])
    if deck is None:
        raise NonLiftable("path endpoints differ by a non-deck displacement")
    lam = polyline_integral(data.potential, path_pts, lift.segment_order)
    return ModZValue(lam - lift.alpha(deck, path_pts[0]))


def heisenberg_data(holonomy_x: float = 0.0, holonomy_y: float = 0.0) -> PrequantumData:
    """The plane with lambda = x dy over the unit torus (area character)."""
    chart = ModelChart.plane()
    lam = FormField(chart, 1, {(1,): lambda X: X[:, 0].astype(complex)}, None)
    return PrequantumData(chart, LatticeAction(), lam, AreaCharacter(holonomy_x, holonomy_y))


# ---------------------------------------------------------------------------
# the transgression potential on a family parameter space
# ---------------------------------------------------------------------------


def transgression_potential(p: InvariantPolynomial, fam: ConnectionFamily,
                            base_cycle: Chain, t_nodes: int = 10,
                            q: QuadratureSpec = DEFAULT_QUADRATURE) -> Callable:
    """rho_c(s, sdot): fiber integral over the base cycle of the transgression
    form of the family's total connection against the zero background,
    contracted with one parameter direction."""
    from .connection import zero_connection

    conn = fam.total_connection()
    back = zero_connection(fam.product_chart, fam.group)
    tp = transgression(p, conn, back, t_nodes, q)
    mb = fam.base_dim
    keys = [idx for idx in tp.components if sum(1 for i in idx if i >= mb) == 1]

    def value(s, sdot) -> float:
        s = np.asarray(s, dtype=float)
        sdot = np.asarray(sdot, dtype=float)
        total = 0.0 + 0.0j
        for cell in base_cycle.cells:
            order = cell.order or q.order
            U, w = tensor_grid(cell.dim, order)
            Xb = cell.mapping(U)
            X = np.ascontiguousarray(
                np.concatenate([Xb, np.broadcast_to(s, (len(Xb), fam.param_dim))], axis=1)
            )
            from .forms import _cell_jacobian, _minor_dets

            J = _cell_jacobian(cell, U, mb, q.fd_step)
            for idx in keys:
                a = next(i for i in idx if i >= mb) - mb
                if sdot[a] == 0.0:
                    continue
                base_idx = tuple(i for i in idx if i < mb)
                if len(base_idx) != cell.dim:
                    continue
                vals = tp.component_values(idx, X)
                minors = _minor_dets(J, base_idx)
                total += cell.sign * sdot[a] * np.sum(vals * w * minors)
        return complex(total).real

    return value


def potential_loop_integral(rho: Callable, loop_pts: np.ndarray, order: int = 10) -> float:
    """Line integral of a parameter-space 1-form given as rho(s, sdot)."""
    loop_pts = np.asarray(loop_pts, dtype=float)
    t, wt = _gl_nodes(order)
    total = 0.0
    for a, b in zip(loop_pts[:-1], loop_pts[1:]):
        seg = b - a
        if not np.any(seg):
            continue
        for tk, wk in zip(t, wt):
            total += wk * rho(a + tk * seg, seg)
    return total


# ---------------------------------------------------------------------------
# pillowcase experiment
# ---------------------------------------------------------------------------

PILLOWCASE_CORNER_SPACING = np.pi


def _corner_distance(pts: np.ndarray) -> float:
    pts = np.asarray(pts, dtype=float)
    nearest = np.round(pts / PILLOWCASE_CORNER_SPACING) * PILLOWCASE_CORNER_SPACING
    return float(np.min(np.linalg.norm(pts - nearest, axis=1)))


def pillowcase_experiment(p: InvariantPolynomial, fam: ConnectionFamily,
                          loop_pts: np.ndarray, base_cycle: Chain,
                          spanning_rectangles=None,
                          corner_margin: float = 0.05,
                          t_nodes: int = 10, seg_order: int = 10,
                          area_order: int = 10,
                          q: QuadratureSpec = DEFAULT_QUADRATURE):
    """Holonomy of the prequantum connection over a parameter loop, and the
    curvature area over a spanning chain.  Contract: they agree mod 1.

    On the flat family the moment-map part of the potential vanishes, so the
    potential is the transgression term alone; corners of the pillowcase
    (reducible loci, spacing pi in each holonomy angle) must be avoided.
    """
    loop_pts = np.asarray(loop_pts, dtype=float)
    dense = _densify(loop_pts, 12)
    dist = _corner_distance(dense)
    if dist < corner_margin:
        raise CornerTooClose(f"loop comes within {dist:.3f} of a reducible corner")
    if not np.allclose(loop_pts[0], loop_pts[-1]):
        raise NonLiftable("pillowcase loop must close in the parameter box")
    rho = transgression_potential(p, fam, base_cycle, t_nodes, q)
    hol = ModZValue(potential_loop_integral(rho, loop_pts, seg_order), 1e-4)
    if spanning_rectangles is None:
        lo = loop_pts.min(axis=0)
        hi = loop_pts.max(axis=0)
        spanning_rectangles = [(lo, hi, 1)]
    area = sigma_chain_area(p, fam, base_cycle, spanning_rectangles, area_order, q)
    return hol, area


def sigma_chain_area(p: InvariantPolynomial, fam: ConnectionFamily, base_cycle: Chain,
                     rectangles, order: int = 10,
                     q: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Integral of the family curvature 2-form over oriented parameter rectangles."""
    dens = sigma_density(p, fam, base_cycle, [1.0, 0.0], [0.0, 1.0], q)
    total = 0.0
    U, w = tensor_grid(2, order)
    for lo, hi, sign in rectangles:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        scale = np.prod(hi - lo)
        for uk, wk in zip(U, w):
            s = lo + uk * (hi - lo)
            total += sign * wk * scale * dens(s).real
    return total


def _densify(pts: np.ndarray, per_segment: int) -> np.ndarray:
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        ts = np.linspace(0, 1, per_segment, endpoint=False)
        out.append(a[None, :] + ts[:, None] * (b - a)[None, :])
    out.append(pts[-1:])
    return np.vstack(out)


# ---------------------------------------------------------------------------
# high-degree flatness
# ---------------------------------------------------------------------------


def flatness_for_high_degree(p: InvariantPolynomial, fam: ConnectionFamily,
                             base_cycle: Chain, loops: dict,
                             flat_tol: float = 1e-8,
                             t_nodes: int = 8, seg_order: int = 8,
                             q: QuadratureSpec = DEFAULT_QUADRATURE) -> dict:
    """Holonomies of the degree-r prequantum potential over parameter loops.

    For polynomial degree three and above the curvature of the restricted
    prequantum connection vanishes on the flat locus, so holonomy over a
    bounding loop is ~0 and homotopic loops agree.  `loops` maps names to
    polylines in the parameter chart; wrap-around loops may close through the
    periodic identification.  Returns {name: real holonomy lift}.
    """
    defect = fam.flat_defect(n_samples=60, q=q)
    if defect > flat_tol:
        raise NotFlat(f"family curvature sup {defect:.2e}")
    rho = transgression_potential(p, fam, base_cycle, t_nodes, q)
    results = {}
    for name, loop_pts in loops.items():
        loop_pts = np.asarray(loop_pts, dtype=float)
        if not fam.param_chart.same_point(loop_pts[0], loop_pts[-1], 1e-9):
            raise NonLiftable(f"loop {name!r} does not close in the parameter chart")
        results[name] = potential_loop_integral(rho, loop_pts, seg_order)
    return results
