"""Differential forms with evaluable coefficients on model charts.

Coefficient functions are vectorized: they take an (N, dim) array of chart
points and return (N,) complex values (scalar forms) or (N, n, n) matrices
(algebra-valued forms).  Exterior derivatives are central finite differences,
integrals tensor-product Gauss-Legendre quadrature over parametrized cells.
"""

from __future__ import annotations

import itertools
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np

from .errors import (
    ChartMismatch,
    DegreeMismatch,
    DegreeOverflow,
    KindMismatch,
    ToolkitError,
)
from .liealg import InvariantPolynomial, group_dim

# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureSpec:
    """Gauss-Legendre order per axis and finite-difference step."""

    order: int = 16
    fd_step: float = 1e-5
    rule: str = "gauss-legendre"

    def __post_init__(self):
        if self.order < 2:
            raise ToolkitError("quadrature order must be >= 2")
        if not (1e-9 <= self.fd_step <= 1e-3):
            raise ToolkitError("fd_step must lie in [1e-9, 1e-3]")
        if self.rule != "gauss-legendre":
            raise ToolkitError(f"unsupported quadrature rule {self.rule!r}")


DEFAULT_QUADRATURE = QuadratureSpec()


@lru_cache(maxsize=64)
def _gl_nodes(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def tensor_grid(k: int, order: int):
    """Nodes (N, k) and weights (N,) for [0,1]^k."""
    if k == 0:
        return np.zeros((1, 0)), np.ones(1)
    x, w = _gl_nodes(order)
    grids = np.meshgrid(*([x] * k), indexing="ij")
    wgrids = np.meshgrid(*([w] * k), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
    weights = np.ones(len(nodes))
    for g in wgrids:
        weights = weights * g.reshape(-1)
    return nodes, weights


# ---------------------------------------------------------------------------
# model charts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelChart:
    """A global coordinate box with identification rules.

    kinds: torus | box | plane | strip | cube_s3 | polygon | product.
    `periodic` marks axes wrapped mod 1.
    """

    name: str
    kind: str
    dim: int
    periodic: tuple
    genus: int = 0
    factors: tuple = ()

    # -- constructors ------------------------------------------------------

    @staticmethod
    def torus(n: int) -> "ModelChart":
        if n not in (1, 2, 3):
            raise ToolkitError("torus dimension must be 1, 2 or 3")
        return ModelChart(f"torus{n}", "torus", n, (True,) * n)

    @staticmethod
    def box(n: int, name: str = "") -> "ModelChart":
        return ModelChart(name or f"box{n}", "box", n, (False,) * n)

    @staticmethod
    def plane() -> "ModelChart":
        return ModelChart("plane", "plane", 2, (False, False))

    @staticmethod
    def strip() -> "ModelChart":
        return ModelChart("strip", "strip", 2, (False, False))

    @staticmethod
    def cube_s3() -> "ModelChart":
        return ModelChart("cubes3", "cube_s3", 3, (False, False, False))

    @staticmethod
    def polygon_surface(genus: int) -> "ModelChart":
        if not (1 <= genus <= 3):
            raise ToolkitError("polygon genus must be 1..3")
        return ModelChart(f"polygon{genus}", "polygon", 2, (False, False), genus=genus)

    @staticmethod
    def product(*charts: "ModelChart") -> "ModelChart":
        dim = sum(c.dim for c in charts)
        periodic = tuple(p for c in charts for p in c.periodic)
        name = "x".join(c.name for c in charts)
        return ModelChart(name, "product", dim, periodic, factors=tuple(charts))

    # -- geometry ----------------------------------------------------------

    def sampling_bounds(self) -> np.ndarray:
        """(dim, 2) box used for random sampling of test points."""
        if self.kind == "plane":
            return np.array([[-1.0, 1.0], [-1.0, 1.0]])
        if self.kind == "product":
            return np.concatenate([f.sampling_bounds() for f in self.factors], axis=0)
        return np.array([[0.0, 1.0]] * self.dim)

    def canonicalize(self, p: np.ndarray) -> np.ndarray:
        q = np.array(p, dtype=float)
        for a, per in enumerate(self.periodic):
            if per:
                q[..., a] = np.mod(q[..., a], 1.0)
        return q

    def same_point(self, p, q, tol: float = 1e-9) -> bool:
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        d = p - q
        for a, per in enumerate(self.periodic):
            if per:
                d[a] -= np.round(d[a])
        if np.max(np.abs(d)) <= tol:
            return True
        if self.kind == "cube_s3":
            return _on_cube_boundary(p, tol) and _on_cube_boundary(q, tol)
        if self.kind == "polygon":
            geo = polygon_geometry(self.genus)
            return geo.same_point(p, q, tol)
        return False


def _on_cube_boundary(p: np.ndarray, tol: float) -> bool:
    return bool(np.any(np.abs(p) <= tol) or np.any(np.abs(p - 1.0) <= tol))


class _PolygonGeometry:
    """Regular 4g-gon with edge word a1 b1 a1' b1' a2 b2 a2' b2' ..."""

    def __init__(self, genus: int):
        self.genus = genus
        n = 4 * genus
        ang = 2 * np.pi * (np.arange(n) + 0.5) / n
        self.vertices = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        self.n_edges = n
        # edge k runs from vertex k to vertex k+1; pairing per commutator word
        pair = {}
        for j in range(genus):
            pair[4 * j] = 4 * j + 2
            pair[4 * j + 2] = 4 * j
            pair[4 * j + 1] = 4 * j + 3
            pair[4 * j + 3] = 4 * j + 1
        self.pairing = pair

    def edge_point(self, k: int, t):
        v0 = self.vertices[k]
        v1 = self.vertices[(k + 1) % self.n_edges]
        t = np.asarray(t, dtype=float)
        return v0 + t[..., None] * (v1 - v0)

    def edge_tangent(self, k: int) -> np.ndarray:
        v0 = self.vertices[k]
        v1 = self.vertices[(k + 1) % self.n_edges]
        return v1 - v0

    def locate_edge(self, p: np.ndarray, tol: float):
        for k in range(self.n_edges):
            v0 = self.vertices[k]
            tau = self.edge_tangent(k)
            rel = p - v0
            t = float(np.dot(rel, tau) / np.dot(tau, tau))
            if -tol <= t <= 1 + tol:
                perp = rel - t * tau
                if np.linalg.norm(perp) <= tol * 10:
                    return k, t
        return None

    def identify(self, k: int, t: float):
        """Point (edge k, parameter t) is glued to (paired edge, 1 - t)."""
        return self.pairing[k], 1.0 - t

    def same_point(self, p, q, tol: float) -> bool:
        near_vertex_p = np.min(np.linalg.norm(self.vertices - p, axis=1)) <= 10 * tol
        near_vertex_q = np.min(np.linalg.norm(self.vertices - q, axis=1)) <= 10 * tol
        if near_vertex_p and near_vertex_q:
            return True  # all polygon vertices project to one point
        ep = self.locate_edge(p, tol)
        eq = self.locate_edge(q, tol)
        if ep is None or eq is None:
            return False
        kp, tp = ep
        kq, tq = eq
        if kq == self.pairing[kp] and abs(tq - (1.0 - tp)) <= 100 * tol:
            return True
        return False

    def contains(self, p: np.ndarray) -> bool:
        # inside iff on the inner side of every edge line
        for k in range(self.n_edges):
            v0 = self.vertices[k]
            tau = self.edge_tangent(k)
            normal = np.array([-tau[1], tau[0]])  # points inward for ccw polygon
            if np.dot(p - v0, normal) < 0:
                return False
        return True


@lru_cache(maxsize=8)
def polygon_geometry(genus: int) -> _PolygonGeometry:
    return _PolygonGeometry(genus)


def sample_points(chart: ModelChart, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random points in the chart's sampling box."""
    if chart.kind == "polygon":
        geo = polygon_geometry(chart.genus)
        pts = []
        while len(pts) < n:
            p = rng.uniform(-1, 1, size=2)
            if geo.contains(p):
                pts.append(p)
        return np.array(pts)
    b = chart.sampling_bounds()
    return rng.uniform(b[:, 0], b[:, 1], size=(n, chart.dim))


# ---------------------------------------------------------------------------
# form fields
# ---------------------------------------------------------------------------


class _BatchMemo:
    """Memoize an assembly function on the exact node array."""

    def __init__(self, fn, maxsize: int = 6):
        self.fn = fn
        self.maxsize = maxsize
        self._store = OrderedDict()

    def __call__(self, X: np.ndarray):
        key = (X.shape, X.tobytes())
        hit = self._store.get(key)
        if hit is not None:
            self._store.move_to_end(key)
            return hit
        out = self.fn(X)
        self._store[key] = out
        if len(self._store) > self.maxsize:
            self._store.popitem(last=False)
        return out


@dataclass
class FormField:
    """Degree-k differential form; sparse increasing-multi-index components."""

    chart: ModelChart
    degree: int
    components: dict
    group: Optional[str] = None  # None => scalar-valued

    def __post_init__(self):
        if self.degree > self.chart.dim or self.degree < 0:
            raise DegreeOverflow(f"degree {self.degree} on dim-{self.chart.dim} chart")
        for idx in self.components:
            if len(idx) != self.degree or tuple(sorted(set(idx))) != idx:
                raise ToolkitError(f"bad multi-index {idx} for degree {self.degree}")

    # -- evaluation --------------------------------------------------------

    def _zero_values(self, n_points: int):
        if self.group is None:
            return np.zeros(n_points, dtype=complex)
        n = group_dim(self.group)
        return np.zeros((n_points, n, n), dtype=complex)

    def component_values(self, idx: tuple, X: np.ndarray):
        f = self.components.get(idx)
        if f is None:
            return self._zero_values(len(X))
        return np.asarray(f(X))

    def max_abs(self, X: np.ndarray) -> float:
        """Sup over sample points and components of coefficient magnitude."""
        worst = 0.0
        for idx in self.components:
            v = self.component_values(idx, X)
            worst = max(worst, float(np.max(np.abs(v))) if v.size else 0.0)
        return worst

    # -- algebra -----------------------------------------------------------

    def _check_compatible(self, other: "FormField"):
        if self.chart != other.chart:
            raise ChartMismatch(f"{self.chart.name} vs {other.chart.name}")
        if self.degree != other.degree:
            raise DegreeMismatch(f"degree {self.degree} vs {other.degree}")
        if self.group != other.group:
            raise KindMismatch(f"value kind {self.group} vs {other.group}")

    def __add__(self, other: "FormField") -> "FormField":
        self._check_compatible(other)
        comps = {}
        for idx in set(self.components) | set(other.components):
            fa = self.components.get(idx)
            fb = other.components.get(idx)
            if fa is None:
                comps[idx] = fb
            elif fb is None:
                comps[idx] = fa
            else:
                comps[idx] = (lambda X, fa=fa, fb=fb: np.asarray(fa(X)) + np.asarray(fb(X)))
        return FormField(self.chart, self.degree, comps, self.group)

    def __sub__(self, other: "FormField") -> "FormField":
        return self + (-1.0) * other

    def __rmul__(self, c) -> "FormField":
        comps = {
            idx: (lambda X, f=f, c=c: c * np.asarray(f(X)))
            for idx, f in self.components.items()
        }
        return FormField(self.chart, self.degree, comps, self.group)

    def __neg__(self) -> "FormField":
        return (-1.0) * self


def zero_form(chart: ModelChart, degree: int, group: Optional[str] = None) -> FormField:
    return FormField(chart, degree, {}, group)


def constant_form(chart: ModelChart, components: dict, group: Optional[str] = None) -> FormField:
    """Form with constant coefficients, given as scalars or (n, n) matrices."""
    degree = len(next(iter(components))) if components else 0
    comps = {}
    for idx, val in components.items():
        if group is None:
            comps[idx] = (lambda X, v=complex(val): np.full(len(X), v, dtype=complex))
        else:
            m = np.asarray(val, dtype=complex)
            comps[idx] = (lambda X, m=m: np.broadcast_to(m, (len(X),) + m.shape).copy())
    return FormField(chart, degree, comps, group)


def assembled_form(
    chart: ModelChart,
    degree: int,
    keys,
    assemble: Callable,
    group: Optional[str] = None,
    memo_size: int = 6,
) -> FormField:
    """Form whose components share one batched assembly pass per node array."""
    memo = _BatchMemo(assemble, memo_size)
    n = None if group is None else group_dim(group)

    def make(idx):
        def coeff(X):
            out = memo(np.ascontiguousarray(X))
            v = out.get(idx)
            if v is not None:
                return v
            if n is None:
                return np.zeros(len(X), dtype=complex)
            return np.zeros((len(X), n, n), dtype=complex)

        return coeff

    return FormField(chart, degree, {idx: make(idx) for idx in keys}, group)


# ---------------------------------------------------------------------------
# exterior calculus
# ---------------------------------------------------------------------------


def _insert_index(j: int, idx: tuple):
    """Sorted insertion of j into idx; returns (new_idx, sign) or (None, 0)."""
    if j in idx:
        return None, 0
    pos = sum(1 for i in idx if i < j)
    new = tuple(sorted(idx + (j,)))
    return new, (-1) ** pos


def _merge_indices(*idxs):
    merged = tuple(itertools.chain.from_iterable(idxs))
    if len(set(merged)) != len(merged):
        return None, 0
    inv = 0
    for a in range(len(merged)):
        for b in range(a + 1, len(merged)):
            if merged[a] > merged[b]:
                inv += 1
    return tuple(sorted(merged)), (-1) ** inv


def exterior_derivative(w: FormField, q: QuadratureSpec = DEFAULT_QUADRATURE) -> FormField:
    """d by central finite differences of step q.fd_step."""
    if w.degree >= w.chart.dim:
        raise DegreeOverflow(f"d of a top-degree form on {w.chart.name}")
    h = q.fd_step
    dim = w.chart.dim
    keys = set()
    plan = []  # (source idx, axis, target idx, sign)
    for idx in w.components:
        for j in range(dim):
            tgt, sign = _insert_index(j, idx)
            if tgt is None:
                continue
            keys.add(tgt)
            plan.append((idx, j, tgt, sign))

    def assemble(X):
        out = {}
        for idx, j, tgt, sign in plan:
            Xp = X.copy()
            Xp[:, j] += h
            Xm = X.copy()
            Xm[:, j] -= h
            f = w.components[idx]
            df = (np.asarray(f(Xp)) - np.asarray(f(Xm))) / (2.0 * h)
            out[tgt] = out.get(tgt, 0) + sign * df
        return out

    return assembled_form(w.chart, w.degree + 1, keys, assemble, w.group)


def wedge(
    w1: FormField,
    w2: FormField,
    mode: str = "plain",
    polynomial: Optional[InvariantPolynomial] = None,
) -> FormField:
    """Graded product.  Modes:

    - "plain": scalar*scalar or scalar*algebra pointwise products
    - "lie-bracket": algebra values paired with the matrix commutator
    - "polynomial-slot": two algebra values paired through a degree-2 polynomial
    """
    if w1.chart != w2.chart:
        raise ChartMismatch(f"{w1.chart.name} vs {w2.chart.name}")
    if mode == "plain":
        if w1.group is not None and w2.group is not None:
            raise KindMismatch("plain wedge of two algebra-valued forms")
        group = w1.group or w2.group
    elif mode == "lie-bracket":
        if w1.group is None or w1.group != w2.group:
            raise KindMismatch("lie-bracket wedge needs matching algebra values")
        group = w1.group
    elif mode == "polynomial-slot":
        if polynomial is None or polynomial.degree != 2:
            raise KindMismatch("polynomial-slot wedge needs a degree-2 polynomial")
        if w1.group is None or w1.group != w2.group:
            raise KindMismatch("polynomial-slot wedge needs matching algebra values")
        group = None
    else:
        raise KindMismatch(f"unknown wedge mode {mode!r}")

    degree = w1.degree + w2.degree
    if degree > w1.chart.dim:
        return zero_form(w1.chart, w1.chart.dim, group)

    plan = []
    keys = set()
    for i1, i2 in itertools.product(w1.components, w2.components):
        tgt, sign = _merge_indices(i1, i2)
        if tgt is None:
            continue
        keys.add(tgt)
        plan.append((i1, i2, tgt, sign))

    def assemble(X):
        v1 = {i: np.asarray(f(X)) for i, f in w1.components.items()}
        v2 = {i: np.asarray(f(X)) for i, f in w2.components.items()}
        out = {}
        for i1, i2, tgt, sign in plan:
            a, b = v1[i1], v2[i2]
            if mode == "plain":
                if w1.group is None and w2.group is None:
                    val = a * b
                elif w1.group is None:
                    val = a[:, None, None] * b
                else:
                    val = a * b[:, None, None]
            elif mode == "lie-bracket":
                val = a @ b - b @ a
            else:  # polynomial-slot
                val = polynomial.eval_batched([a, b])
            out[tgt] = out.get(tgt, 0) + sign * val
        return out

    return assembled_form(w1.chart, degree, keys, assemble, group)


def polynomial_product(p: InvariantPolynomial, factors) -> FormField:
    """Chern-Weil style product p(w_1, ..., w_r) of algebra-valued forms.

    Components pair through the fully symmetrized normalized trace; the form
    parts multiply by the graded wedge.  Result is scalar-valued.
    """
    factors = list(factors)
    if len(factors) != p.degree:
        raise KindMismatch(f"polynomial degree {p.degree} vs {len(factors)} factors")
    chart = factors[0].chart
    for f in factors:
        if f.chart != chart:
            raise ChartMismatch("all factors must share a chart")
        if f.group is None:
            raise KindMismatch("polynomial product needs algebra-valued factors")
    degree = sum(f.degree for f in factors)
    if degree > chart.dim:
        return zero_form(chart, chart.dim)

    plan = []
    keys = set()
    for picks in itertools.product(*[list(f.components) for f in factors]):
        tgt, sign = _merge_indices(*picks)
        if tgt is None:
            continue
        keys.add(tgt)
        plan.append((picks, tgt, sign))

    def assemble(X):
        vals = [{i: np.asarray(fn(X)) for i, fn in f.components.items()} for f in factors]
        out = {}
        for picks, tgt, sign in plan:
            mats = [vals[k][picks[k]] for k in range(len(factors))]
            v = p.eval_batched(mats)
            out[tgt] = out.get(tgt, 0) + sign * v
        return out

    return assembled_form(chart, degree, keys, assemble, None)


def interior_product(w: FormField, vfield: Callable) -> FormField:
    """i_V w for a vector field V given as (N, dim) -> (N, dim) components."""
    if w.degree == 0:
        return zero_form(w.chart, 0, w.group)
    plan = []
    keys = set()
    for idx in w.components:
        for pos, j in enumerate(idx):
            rest = idx[:pos] + idx[pos + 1 :]
            keys.add(rest)
            plan.append((idx, j, rest, (-1) ** pos))

    def assemble(X):
        V = np.asarray(vfield(X))
        vals = {i: np.asarray(f(X)) for i, f in w.components.items()}
        out = {}
        for idx, j, rest, sign in plan:
            v = vals[idx]
            comp = V[:, j]
            if v.ndim == 3:
                comp = comp[:, None, None]
            out[rest] = out.get(rest, 0) + sign * comp * v
        return out

    return assembled_form(w.chart, w.degree - 1, keys, assemble, w.group)


# ---------------------------------------------------------------------------
# chains and integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Cell:
    """Parametrized k-cell: a map [0,1]^k -> chart coordinates."""

    dim: int
    mapping: Callable  # (N, k) -> (N, chart_dim)
    sign: int = 1
    order: Optional[int] = None
    jacobian: Optional[Callable] = None  # (N, k) -> (N, chart_dim, k)
    name: str = ""


@dataclass
class Chain:
    chart: ModelChart
    cells: list

    def __neg__(self):
        return Chain(self.chart, [Cell(c.dim, c.mapping, -c.sign, c.order, c.jacobian, c.name) for c in self.cells])

    def __add__(self, other: "Chain") -> "Chain":
        if self.chart != other.chart:
            raise ChartMismatch("chains on different charts")
        return Chain(self.chart, list(self.cells) + list(other.cells))


def affine_cell(chart: ModelChart, origin, axes, sign: int = 1, order=None, name: str = "") -> Cell:
    """Cell u -> origin + sum_a u_a * axes[a]."""
    origin = np.asarray(origin, dtype=float)
    axes = np.asarray(axes, dtype=float)  # (k, chart_dim)
    k = axes.shape[0]

    def mapping(U):
        return origin[None, :] + U @ axes

    def jacobian(U):
        return np.broadcast_to(axes.T, (len(U), chart.dim, k)).copy()

    return Cell(k, mapping, sign, order, jacobian, name)


def cube_cell(chart: ModelChart, lo=None, hi=None, sign: int = 1, order=None, name: str = "") -> Cell:
    """Full-dimensional box cell [lo, hi] in chart coordinates."""
    lo = np.zeros(chart.dim) if lo is None else np.asarray(lo, dtype=float)
    hi = np.ones(chart.dim) if hi is None else np.asarray(hi, dtype=float)
    axes = np.diag(hi - lo)
    return affine_cell(chart, lo, axes, sign, order, name)


def _cell_jacobian(cell: Cell, U: np.ndarray, chart_dim: int, h: float) -> np.ndarray:
    if cell.jacobian is not None:
        return np.asarray(cell.jacobian(U))
    J = np.empty((len(U), chart_dim, cell.dim))
    for a in range(cell.dim):
        Up = U.copy()
        Up[:, a] += h
        Um = U.copy()
        Um[:, a] -= h
        J[:, :, a] = (cell.mapping(Up) - cell.mapping(Um)) / (2.0 * h)
    return J


def _minor_dets(J: np.ndarray, rows: tuple) -> np.ndarray:
    """det of the (k, k) minor J[rows, :] batched over the leading axis."""
    sub = J[:, rows, :]
    k = sub.shape[-1]
    if k == 0:
        return np.ones(len(J))
    if k == 1:
        return sub[:, 0, 0]
    if k == 2:
        return sub[:, 0, 0] * sub[:, 1, 1] - sub[:, 0, 1] * sub[:, 1, 0]
    return np.linalg.det(sub)


def integrate(w: FormField, chain: Chain, q: QuadratureSpec = DEFAULT_QUADRATURE):
    """Oriented pull-back quadrature of a k-form over a k-chain."""
    if w.chart != chain.chart:
        raise ChartMismatch(f"{w.chart.name} vs {chain.chart.name}")
    if w.group is None:
        total = 0.0 + 0.0j
    else:
        n = group_dim(w.group)
        total = np.zeros((n, n), dtype=complex)
    for cell in chain.cells:
        if cell.dim != w.degree:
            raise DegreeMismatch(f"cell dim {cell.dim} vs form degree {w.degree}")
        if cell.dim == 0:
            X = cell.mapping(np.zeros((1, 0)))
            for idx in w.components:
                total = total + cell.sign * w.component_values(idx, X)[0]
            continue
        order = cell.order or q.order
        U, weights = tensor_grid(cell.dim, order)
        X = np.ascontiguousarray(cell.mapping(U))
        J = _cell_jacobian(cell, U, w.chart.dim, q.fd_step)
        acc = None
        for idx in w.components:
            minors = _minor_dets(J, idx)
            vals = w.component_values(idx, X)
            if vals.ndim == 3:
                contrib = vals * (weights * minors)[:, None, None]
                contrib = contrib.sum(axis=0)
            else:
                contrib = np.sum(vals * weights * minors)
            acc = contrib if acc is None else acc + contrib
        if acc is not None:
            total = total + cell.sign * acc
    return total


def boundary(chain: Chain) -> Chain:
    """Oriented boundary; point cells have empty boundary."""
    out = []
    for cell in chain.cells:
        k = cell.dim
        if k == 0:
            continue
        for axis in range(k):
            for side in (0, 1):
                out.append(_face_cell(cell, axis, side))
    return Chain(chain.chart, out)


def _face_cell(cell: Cell, axis: int, side: int) -> Cell:
    k = cell.dim
    sign = cell.sign * (-1) ** ((axis + 1) + side)

    def face_map(V, axis=axis, side=side):
        U = np.empty((len(V), k))
        U[:, :axis] = V[:, :axis]
        U[:, axis] = float(side)
        U[:, axis + 1 :] = V[:, axis:]
        return cell.mapping(U)

    face_jac = None
    if cell.jacobian is not None:
        def face_jac(V, axis=axis, side=side):
            U = np.empty((len(V), k))
            U[:, :axis] = V[:, :axis]
            U[:, axis] = float(side)
            U[:, axis + 1 :] = V[:, axis:]
            J = np.asarray(cell.jacobian(U))
            return np.concatenate([J[:, :, :axis], J[:, :, axis + 1 :]], axis=2)

    return Cell(k - 1, face_map, sign, cell.order, face_jac, f"{cell.name}/face{axis}{side}")


def check_immersed(chain: Chain, q: QuadratureSpec = DEFAULT_QUADRATURE, order: int = 4) -> float:
    """Smallest singular value of the cell Jacobians at quadrature nodes."""
    worst = np.inf
    for cell in chain.cells:
        if cell.dim == 0:
            continue
        U, _ = tensor_grid(cell.dim, order)
        J = _cell_jacobian(cell, U, chain.chart.dim, q.fd_step)
        s = np.linalg.svd(J, compute_uv=False)
        worst = min(worst, float(np.min(s[:, -1])))
    return worst


def pullback(w: FormField, mapping: Callable, target: ModelChart,
             jacobian: Optional[Callable] = None,
             q: QuadratureSpec = DEFAULT_QUADRATURE) -> FormField:
    """Pull a form back along mapping: target chart -> w.chart."""
    k = w.degree
    if k > target.dim:
        raise DegreeOverflow("pullback degree exceeds target dimension")
    keys = list(itertools.combinations(range(target.dim), k))

    def assemble(U):
        X = np.ascontiguousarray(mapping(U))
        if jacobian is not None:
            J = np.asarray(jacobian(U))
        else:
            h = q.fd_step
            J = np.empty((len(U), w.chart.dim, target.dim))
            for a in range(target.dim):
                Up = U.copy()
                Up[:, a] += h
                Um = U.copy()
                Um[:, a] -= h
                J[:, :, a] = (mapping(Up) - mapping(Um)) / (2.0 * h)
        vals = {i: np.asarray(f(X)) for i, f in w.components.items()}
        out = {}
        for K in keys:
            JK = J[:, :, K] if k else J[:, :, :0]
            acc = None
            for idx, v in vals.items():
                minors = _minor_dets(JK, idx)
                term = v * minors[:, None, None] if v.ndim == 3 else v * minors
                acc = term if acc is None else acc + term
            if acc is not None:
                out[K] = acc
        return out

    return assembled_form(target, k, keys, assemble, w.group)


# ---------------------------------------------------------------------------
# identification compatibility
# ---------------------------------------------------------------------------


def compatibility_defect(w: FormField, n_samples: int = 40, seed: int = 7) -> float:
    """Sampled violation of the chart's identification rules by a form.

    torus/product: components must agree across periodic faces.
    cube_s3: 0-forms constant on the boundary, higher forms vanish there.
    polygon: tangential edge pullback condition for degrees 0 and 1.
    """
    rng = np.random.default_rng(seed)
    chart = w.chart
    worst = 0.0
    periodic_axes = [a for a, p in enumerate(chart.periodic) if p]
    if periodic_axes:
        for a in periodic_axes:
            P = sample_points(chart, n_samples, rng)
            P0 = P.copy()
            P0[:, a] = 0.0
            P1 = P.copy()
            P1[:, a] = 1.0
            for idx in w.components:
                d = w.component_values(idx, P0) - w.component_values(idx, P1)
                worst = max(worst, float(np.max(np.abs(d))))
    if chart.kind == "cube_s3":
        B = _cube_boundary_samples(n_samples, rng)
        for idx in w.components:
            v = w.component_values(idx, B)
            if w.degree == 0:
                worst = max(worst, float(np.max(np.abs(v - v[:1]))))
            else:
                worst = max(worst, float(np.max(np.abs(v))))
    if chart.kind == "polygon" and w.degree <= 1:
        geo = polygon_geometry(chart.genus)
        ts = rng.uniform(0.05, 0.95, size=n_samples)
        for k in range(geo.n_edges):
            kk = geo.pairing[k]
            P = geo.edge_point(k, ts)
            Q = geo.edge_point(kk, 1.0 - ts)
            if w.degree == 0:
                for idx in w.components:
                    d = w.component_values(idx, P) - w.component_values(idx, Q)
                    worst = max(worst, float(np.max(np.abs(d))))
            else:
                tau_k = geo.edge_tangent(k)
                tau_kk = geo.edge_tangent(kk)
                vp = sum(w.component_values((j,), P) * tau_k[j] for j in range(2))
                vq = sum(w.component_values((j,), Q) * tau_kk[j] for j in range(2))
                worst = max(worst, float(np.max(np.abs(vp + vq))))
    return worst


def _cube_boundary_samples(n: int, rng: np.random.Generator) -> np.ndarray:
    pts = rng.uniform(size=(n, 3))
    axes = rng.integers(0, 3, size=n)
    sides = rng.integers(0, 2, size=n).astype(float)
    pts[np.arange(n), axes] = sides
    return pts
