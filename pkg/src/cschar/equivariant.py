"""Cartan-model equivariant calculus and finite-dimensional connection families.

The infinite-dimensional product of base manifold and connection space is
replaced everywhere by a ConnectionFamily: a finite-dimensional parameter
chart S and a jointly evaluable map s -> A_s.  Bigraded objects live on the
product chart (base coordinates first, parameters after), so the ordinary
exterior calculus applies and the bigrading is a filter on multi-indices.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .connection import Connection
from .errors import (
    ChartMismatch,
    GroupMismatch,
    NotFlat,
    NotInvariant,
    UnsupportedBundle,
)
from .forms import (
    Cell,
    Chain,
    DEFAULT_QUADRATURE,
    FormField,
    ModelChart,
    QuadratureSpec,
    assembled_form,
    cube_cell,
    exterior_derivative,
    integrate,
    interior_product,
    pullback,
    sample_points,
    tensor_grid,
    zero_form,
)
from .liealg import InvariantPolynomial, group_dim
from .products import (
    Factor,
    curvature_array,
    graded_pairing_components,
)

# ---------------------------------------------------------------------------
# symmetry actions
# ---------------------------------------------------------------------------


@dataclass
class SymmetryAction:
    """A connected group acting on a chart through named generators.

    `fundamental_fields[a]` maps (N, dim) points to (N, dim) velocity vectors;
    `flow(coeffs, t, X)` is the exact flow of sum_a coeffs[a] X_a (built-ins
    provide closed-form flows).
    """

    chart: ModelChart
    group_name: str
    fundamental_fields: list
    flow: Callable
    name: str = ""

    @property
    def n_generators(self) -> int:
        return len(self.fundamental_fields)

    def field_of(self, coeffs) -> Callable:
        coeffs = np.asarray(coeffs, dtype=float)

        def vf(X):
            out = np.zeros_like(X)
            for c, f in zip(coeffs, self.fundamental_fields):
                if c != 0.0:
                    out = out + c * np.asarray(f(X))
            return out

        return vf

    def bracket_defect(self, a: int, b: int, X: np.ndarray, h: float = 1e-5) -> float:
        """| [X_a, X_b]_numeric + [X_a, X_b]_N |, the left-action sign check.

        For a left action the fundamental fields anti-represent the algebra:
        [X_N, Y_N] = -[X, Y]_N.  Built-in actions are abelian or linear, so
        the commutator field is compared against zero or the linear bracket.
        """
        Va, Vb = self.fundamental_fields[a], self.fundamental_fields[b]
        lie = _vector_field_bracket(Va, Vb, X, h)
        return float(np.max(np.abs(lie + self._algebra_bracket_field(a, b, X))))

    def _algebra_bracket_field(self, a: int, b: int, X: np.ndarray) -> np.ndarray:
        # abelian built-ins: zero; linear built-ins override via closure attribute
        getter = getattr(self, "algebra_bracket_field", None)
        if getter is None:
            return np.zeros_like(X)
        return getter(a, b, X)


def _vector_field_bracket(V, W, X, h):
    """[V, W]^j = V^i d_i W^j - W^i d_i V^j by central differences."""
    dim = X.shape[1]
    Vx, Wx = np.asarray(V(X)), np.asarray(W(X))
    out = np.zeros_like(X)
    for i in range(dim):
        Xp = X.copy()
        Xp[:, i] += h
        Xm = X.copy()
        Xm[:, i] -= h
        dW = (np.asarray(W(Xp)) - np.asarray(W(Xm))) / (2 * h)
        dV = (np.asarray(V(Xp)) - np.asarray(V(Xm))) / (2 * h)
        out += Vx[:, i:i + 1] * dW - Wx[:, i:i + 1] * dV
    return out


def translation_action(chart: ModelChart, velocities, name: str = "") -> SymmetryAction:
    """Torus translations: generator a moves points with constant velocity."""
    velocities = [np.asarray(v, dtype=float) for v in velocities]
    fields = [(lambda X, v=v: np.broadcast_to(v, X.shape).copy()) for v in velocities]

    def flow(coeffs, t, X):
        shift = sum(c * v for c, v in zip(coeffs, velocities))
        return X + t * shift

    gname = "U1" if len(velocities) == 1 else f"T{len(velocities)}"
    return SymmetryAction(chart, gname, fields, flow, name or "translation")


def rotation_action(chart: ModelChart, name: str = "rotation") -> SymmetryAction:
    """U(1) rotating the plane about the origin."""

    def fund(X):
        out = np.empty_like(X)
        out[:, 0] = -X[:, 1]
        out[:, 1] = X[:, 0]
        return out

    def flow(coeffs, t, X):
        ang = coeffs[0] * t
        c, s = np.cos(ang), np.sin(ang)
        out = np.empty_like(X)
        out[:, 0] = c * X[:, 0] - s * X[:, 1]
        out[:, 1] = s * X[:, 0] + c * X[:, 1]
        return out

    return SymmetryAction(chart, "U1", [fund], flow, name)


def su2_left_action(chart: ModelChart, name: str = "su2-left") -> SymmetryAction:
    """SU(2) acting on R^4 = C^2 by left multiplication (linear, exact flows)."""
    from .liealg import algebra_basis, exp_batched, structure_constants

    basis = algebra_basis("SU2")
    sc = structure_constants("SU2")

    def real_rep(m):
        # C^2 -> R^4 as (Re z1, Im z1, Re z2, Im z2)
        out = np.zeros((4, 4))
        for j in range(2):
            for k in range(2):
                a, b = np.real(m[j, k]), np.imag(m[j, k])
                out[2 * j, 2 * k] = a
                out[2 * j, 2 * k + 1] = -b
                out[2 * j + 1, 2 * k] = b
                out[2 * j + 1, 2 * k + 1] = a
        return out

    reps = [real_rep(b.matrix) for b in basis]
    fields = [(lambda X, R=R: X @ R.T) for R in reps]

    def flow(coeffs, t, X):
        m = sum(c * b.matrix for c, b in zip(coeffs, basis))
        g = exp_batched("SU2", np.asarray([t * m]))[0]
        return X @ real_rep(g).T

    act = SymmetryAction(chart, "SU2", fields, flow, name)

    def algebra_bracket_field(a, b, X):
        coefs = sc.bracket_coefficients(a, b)
        out = np.zeros_like(X)
        for c, R in zip(coefs, reps):
            if c != 0.0:
                out += c * (X @ R.T)
        return out

    act.algebra_bracket_field = algebra_bracket_field
    return act


# ---------------------------------------------------------------------------
# equivariant forms and the Cartan differential
# ---------------------------------------------------------------------------


@dataclass
class EquivariantForm:
    """Polynomial map from the acting algebra into forms.

    `coefficients` maps monomials (nondecreasing generator index tuples) to
    FormFields; the empty tuple is the polynomial-degree-zero part.
    """

    action: SymmetryAction
    coefficients: dict

    def monomial_degree(self) -> int:
        return max((len(m) for m in self.coefficients), default=0)

    def evaluate(self, gen_coeffs) -> FormField:
        """alpha(X) for X = sum_a gen_coeffs[a] * generator_a (fixed form degree)."""
        gen_coeffs = np.asarray(gen_coeffs, dtype=float)
        acc = None
        for mono, w in self.coefficients.items():
            scale = 1.0
            for a in mono:
                scale *= gen_coeffs[a]
            term = scale * w
            acc = term if acc is None else acc + term
        return acc

    def graded_degree(self) -> int:
        """2k + r grading of the Cartan model (requires homogeneous input)."""
        degs = {2 * len(m) + w.degree for m, w in self.coefficients.items()}
        if len(degs) != 1:
            raise ChartMismatch("inhomogeneous equivariant form")
        return degs.pop()


def cartan_differential(alpha: EquivariantForm,
                        q: QuadratureSpec = DEFAULT_QUADRATURE) -> EquivariantForm:
    """(d_c alpha)(X) = d(alpha(X)) - i_{X_N} alpha(X), monomial by monomial."""
    out = {}

    def add(mono, form):
        if mono in out:
            out[mono] = out[mono] + form
        else:
            out[mono] = form

    for mono, w in alpha.coefficients.items():
        if w.degree < w.chart.dim:
            add(mono, exterior_derivative(w, q))
        if w.degree > 0:
            for a in range(alpha.action.n_generators):
                contracted = interior_product(w, alpha.action.fundamental_fields[a])
                add(tuple(sorted(mono + (a,))), -1.0 * contracted)
    return EquivariantForm(alpha.action, out)


def invariance_defect(alpha: EquivariantForm, n_samples: int = 20,
                      flow_steps: int = 5, t_max: float = 0.5,
                      seed: int = 3) -> float:
    """Sampled pull-back of each coefficient along generator flows."""
    rng = np.random.default_rng(seed)
    chart = alpha.action.chart
    X = sample_points(chart, n_samples, rng)
    worst = 0.0
    for a in range(alpha.action.n_generators):
        coeffs = np.zeros(alpha.action.n_generators)
        coeffs[a] = 1.0
        for step in range(1, flow_steps + 1):
            t = t_max * step / flow_steps
            fmap = lambda P, t=t, coeffs=coeffs: alpha.action.flow(coeffs, t, P)
            for mono, w in alpha.coefficients.items():
                pb = pullback(w, fmap, chart)
                for idx in w.components:
                    d = pb.component_values(idx, X) - w.component_values(idx, X)
                    worst = max(worst, float(np.max(np.abs(d))))
    return worst


# ---------------------------------------------------------------------------
# toy principal bundles and the Chern-Weil map
# ---------------------------------------------------------------------------


@dataclass
class ToyBundle:
    """Built-in finite-dimensional principal U(1)-bundle with known geometry."""

    name: str
    total_chart: ModelChart
    base_chart: ModelChart
    action: SymmetryAction  # structure group action on the total space
    connection_form: FormField  # u(1)-valued 1-form on the total space
    section: Callable  # (N, base_dim) -> (N, total_dim)
    projection: Callable  # (N, total_dim) -> (N, base_dim)
    base_fundamental: Chain

    def connection_coefficient_rows(self) -> list:
        """Scalar coefficient 1-forms A^a with A = sum_a A^a (x) B_a, B_1 = i."""

        def row(X, j):
            v = self.connection_form.component_values((j,), X)
            return v[:, 0, 0] / 1j

        return [row]


def hopf_bundle() -> ToyBundle:
    """Hopf fibration in normalized Euler coordinates.

    Total chart coordinates (x0, x1, x2) = (theta/pi, phi/2pi, psi/4pi); the
    standard connection is (i/2)(d psi + cos theta d phi).  The structure
    U(1) shifts psi; sampled identities stay away from the polar loci.
    """
    total = ModelChart.box(3, "hopf_total")
    base = ModelChart.box(2, "hopf_base")

    comps = {
        (1,): lambda X: (1j * np.pi * np.cos(np.pi * X[:, 0]))[:, None, None] * np.ones((1, 1)),
        (2,): lambda X: np.full((len(X), 1, 1), 2j * np.pi),
    }
    a_form = FormField(total, 1, comps, "U1")
    action = translation_action(total, [np.array([0.0, 0.0, 1.0 / (2 * np.pi)])], "hopf-fiber")

    def section(Xb):
        out = np.zeros((len(Xb), 3))
        out[:, :2] = Xb
        out[:, 2] = 0.37
        return out

    def projection(Xt):
        return Xt[:, :2].copy()

    cyc = Chain(base, [cube_cell(base, name="hopf_base_cell")])
    return ToyBundle("hopf", total, base, action, a_form, section, projection, cyc)


def torus_u1_bundle() -> ToyBundle:
    """Trivial U(1)-bundle torus3 -> torus2 with an invariant test connection."""
    total = ModelChart.torus(3)
    base = ModelChart.torus(2)
    comps = {
        (0,): lambda X: (0.4j * np.sin(2 * np.pi * X[:, 1]))[:, None, None] * np.ones((1, 1)),
        (1,): lambda X: (0.7j * np.cos(2 * np.pi * X[:, 0]))[:, None, None] * np.ones((1, 1)),
        (2,): lambda X: np.full((len(X), 1, 1), 2j * np.pi),
    }
    a_form = FormField(total, 1, comps, "U1")
    action = translation_action(total, [np.array([0.0, 0.0, 1.0 / (2 * np.pi)])], "torus-fiber")

    def section(Xb):
        out = np.zeros((len(Xb), 3))
        out[:, :2] = Xb
        return out

    def projection(Xt):
        return Xt[:, :2].copy()

    cyc = Chain(base, [cube_cell(base, name="torus2_cell")])
    return ToyBundle("torus3_over_torus2", total, base, action, a_form, section, projection, cyc)


_BUILTIN_BUNDLES = {"hopf": hopf_bundle, "torus3_over_torus2": torus_u1_bundle}


def toy_bundle(name: str) -> ToyBundle:
    try:
        return _BUILTIN_BUNDLES[name]()
    except KeyError:
        raise UnsupportedBundle(f"no built-in bundle named {name!r}") from None


def horizontal_projector(bundle: ToyBundle) -> Callable:
    """P(x) v = v - A^a(v) (B_a)_N, as (N, dim, dim) matrices."""
    a_form = bundle.connection_form
    fields = bundle.action.fundamental_fields
    dim = bundle.total_chart.dim

    def proj(X):
        N = len(X)
        P = np.broadcast_to(np.eye(dim), (N, dim, dim)).copy()
        for a, vf in enumerate(fields):
            V = np.asarray(vf(X))  # (N, dim)
            rows = np.stack(
                [np.real(a_form.component_values((j,), X)[:, 0, 0] / 1j) for j in range(dim)],
                axis=1,
            )  # (N, dim): A^a_j
            P -= V[:, :, None] * rows[:, None, :]
        return P

    return proj


def horizontalize(w: FormField, proj: Callable) -> FormField:
    """omega_hor(v...) = omega(P v, ...), computed through minor determinants."""
    if w.degree == 0:
        return w
    dim = w.chart.dim
    keys = list(itertools.combinations(range(dim), w.degree))

    def assemble(X):
        P = np.asarray(proj(X))
        vals = {i: np.asarray(f(X)) for i, f in w.components.items()}
        out = {}
        for tgt in keys:
            acc = None
            for src, v in vals.items():
                sub = P[:, np.ix_(src, tgt)[0][:, None], np.asarray(tgt)[None, :]]
                k = len(src)
                if k == 1:
                    minor = sub[:, 0, 0]
                elif k == 2:
                    minor = sub[:, 0, 0] * sub[:, 1, 1] - sub[:, 0, 1] * sub[:, 1, 0]
                else:
                    minor = np.linalg.det(sub)
                term = v * minor[:, None, None] if v.ndim == 3 else v * minor
                acc = term if acc is None else acc + term
            if acc is not None:
                out[tgt] = acc
        return out

    return assembled_form(w.chart, w.degree, keys, assemble, w.group)


def chern_weil_map(alpha: EquivariantForm, bundle: ToyBundle,
                   q: QuadratureSpec = DEFAULT_QUADRATURE) -> FormField:
    """C_A(P otimes w) = P(curvature coordinate forms) wedge w_hor, on the base.

    Basic forms are identified with base forms through the bundle section.
    """
    if alpha.action.chart != bundle.total_chart:
        raise UnsupportedBundle("equivariant form does not live on the bundle total space")
    from .forms import wedge as form_wedge

    # u(1) curvature coordinate 2-form: F = F^1 * B_1, B_1 = i
    da = exterior_derivative(bundle.connection_form, q)
    f_row = FormField(
        da.chart,
        2,
        {idx: (lambda X, f=f: np.asarray(f(X))[:, 0, 0] / 1j) for idx, f in da.components.items()},
        None,
    )
    proj = horizontal_projector(bundle)
    acc = None
    for mono, w in alpha.coefficients.items():
        term = horizontalize(w, proj)
        for _a in mono:
            term = form_wedge(f_row, term, mode="plain")
        acc = term if acc is None else acc + term
    if acc is None:
        acc = zero_form(bundle.total_chart, 0)
    return pullback(acc, bundle.section, bundle.base_chart, q=q)


def invariant_connection_defect(bundle: ToyBundle, action: SymmetryAction,
                                n_samples: int = 20, seed: int = 5) -> float:
    """Sampled invariance of the bundle connection under an auxiliary action."""
    rng = np.random.default_rng(seed)
    X = sample_points(bundle.total_chart, n_samples, rng)
    worst = 0.0
    for a in range(action.n_generators):
        coeffs = np.zeros(action.n_generators)
        coeffs[a] = 1.0
        for t in (0.13, 0.29):
            fmap = lambda P, t=t: action.flow(coeffs, t, P)
            pb = pullback(bundle.connection_form, fmap, bundle.total_chart)
            for idx in bundle.connection_form.components:
                d = pb.component_values(idx, X) - bundle.connection_form.component_values(idx, X)
                worst = max(worst, float(np.max(np.abs(d))))
    return worst


def equivariant_char_form(p: InvariantPolynomial, bundle: ToyBundle,
                          action: SymmetryAction, gen_coeffs,
                          q: QuadratureSpec = DEFAULT_QUADRATURE,
                          invariance_tol: float = 1e-6):
    """Berline-Vergne form p(F - v(X), ..., F - v(X)) on the total space.

    Returns the list of binomial terms [(number of F slots, FormField)]; the
    sum over terms is the (inhomogeneous) equivariant characteristic form.
    """
    defect = invariant_connection_defect(bundle, action)
    if defect > invariance_tol:
        raise NotInvariant(f"connection invariance defect {defect:.2e}")
    a_form = bundle.connection_form
    chart = bundle.total_chart
    vf = action.field_of(gen_coeffs)

    def v_values(X):
        V = np.asarray(vf(X))
        out = np.zeros((len(X), 1, 1), dtype=complex)
        for j in range(chart.dim):
            out[:, 0, 0] += a_form.component_values((j,), X)[:, 0, 0] * V[:, j]
        return out

    da = exterior_derivative(a_form, q)
    r = p.degree
    terms = []
    for i in range(r + 1):
        coef = (-1) ** (r - i) * math.comb(r, i)
        degree = 2 * i
        if degree > chart.dim:
            continue
        keys = list(itertools.combinations(range(chart.dim), degree))

        def assemble(X, i=i, coef=coef, keys=keys):
            F = np.zeros((len(X), chart.dim, chart.dim, 1, 1), dtype=complex)
            for (a, b), f in da.components.items():
                v = np.asarray(f(X))
                F[:, a, b] = v
                F[:, b, a] = -v
            vv = v_values(X)
            facs = [Factor(2, lambda idx, F=F: F[:, idx[0], idx[1]], "F")] * i + [
                Factor(0, lambda idx, vv=vv: vv, "v")
            ] * (r - i)
            comps = graded_pairing_components(p, facs, chart.dim, keys)
            return {k: coef * v for k, v in comps.items()}

        terms.append((i, assembled_form(chart, degree, keys, assemble)))
    return terms


# ---------------------------------------------------------------------------
# connection families and the bigrading
# ---------------------------------------------------------------------------


@dataclass
class ConnectionFamily:
    """Finite-dimensional family s -> A_s of connections on a base chart.

    `coefficients` takes points on the product chart (base coordinates first)
    and returns the base components (N, base_dim, n, n).
    """

    base_chart: ModelChart
    param_chart: ModelChart
    group: str
    coefficients: Callable
    name: str = ""

    def __post_init__(self):
        self.product_chart = ModelChart.product(self.base_chart, self.param_chart)

    @property
    def base_dim(self) -> int:
        return self.base_chart.dim

    @property
    def param_dim(self) -> int:
        return self.param_chart.dim

    def total_connection(self) -> Connection:
        """Connection on the product chart with components only along the base."""
        n = group_dim(self.group)
        D = self.product_chart.dim
        mb = self.base_dim

        def coeffs(X):
            out = np.zeros((len(X), D, n, n), dtype=complex)
            out[:, :mb] = self.coefficients(X)
            return out

        return Connection(self.product_chart, self.group, coeffs, name=f"{self.name}-total")

    def connection_at(self, s) -> Connection:
        s = np.asarray(s, dtype=float)

        def coeffs(Xb):
            X = np.concatenate([Xb, np.broadcast_to(s, (len(Xb), self.param_dim))], axis=1)
            return self.coefficients(X)

        return Connection(self.base_chart, self.group, coeffs, name=f"{self.name}@{s}")

    def flat_defect(self, n_samples: int = 100, seed: int = 2,
                    q: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
        """Sup of base curvature magnitudes over sampled (x, s)."""
        rng = np.random.default_rng(seed)
        X = sample_points(self.product_chart, n_samples, rng)
        F = curvature_array(self.total_connection(), X, q.fd_step)
        mb = self.base_dim
        return float(np.max(np.abs(F[:, :mb, :mb])))


@dataclass
class BigradedForm:
    """Form on a product chart with (base-degree, parameter-degree) filtering."""

    form: FormField
    base_dim: int

    def bidegree_of(self, idx) -> tuple:
        j = sum(1 for i in idx if i >= self.base_dim)
        return (len(idx) - j, j)

    def component(self, i: int, j: int) -> FormField:
        comps = {
            idx: f
            for idx, f in self.form.components.items()
            if self.bidegree_of(idx) == (i, j)
        }
        return FormField(self.form.chart, self.form.degree, comps, self.form.group)

    def populated_bidegrees(self) -> set:
        return {self.bidegree_of(idx) for idx in self.form.components}

    def max_component(self, i: int, j: int, X: np.ndarray) -> float:
        return self.component(i, j).max_abs(X)


def family_curvature_bigrading(fam: ConnectionFamily,
                               q: QuadratureSpec = DEFAULT_QUADRATURE) -> BigradedForm:
    """Curvature of the total connection on the product chart.

    The (0,2) component is structurally absent: the total connection has no
    parameter components, so neither d nor the bracket can produce one.
    """
    conn = fam.total_connection()
    mb = fam.base_dim
    D = fam.product_chart.dim
    a_sparse = FormField(
        fam.product_chart,
        1,
        {
            (j,): (lambda X, j=j: conn.coefficient_array(X)[:, j])
            for j in range(mb)
        },
        fam.group,
    )
    from .forms import wedge as form_wedge

    da = exterior_derivative(a_sparse, q)
    f = da + 0.5 * form_wedge(a_sparse, a_sparse, mode="lie-bracket")
    return BigradedForm(f, mb)


def flat_vanishing_check(p: InvariantPolynomial, fam: ConnectionFamily,
                         x_matrix: np.ndarray, n_samples: int = 200,
                         flat_tol: float = 1e-8, seed: int = 4,
                         q: QuadratureSpec = DEFAULT_QUADRATURE) -> dict:
    """Max magnitudes of the equivariant characteristic form per bidegree.

    Buckets follow the extended grading in which the gauge-generator slot
    counts as parameter degree 2; on a flat family every bucket with
    parameter degree below the polynomial degree must vanish.
    Returns {(2r - j, j): max |coefficient| over samples}.
    """
    defect = fam.flat_defect(n_samples=min(n_samples, 100), seed=seed, q=q)
    if defect > flat_tol:
        raise NotFlat(f"family curvature sup {defect:.2e} exceeds {flat_tol:.0e}")
    rng = np.random.default_rng(seed + 1)
    X = sample_points(fam.product_chart, n_samples, rng)
    conn = fam.total_connection()
    D = fam.product_chart.dim
    mb = fam.base_dim
    r = p.degree
    n = group_dim(fam.group)
    F = curvature_array(conn, X, q.fd_step)
    xv = np.broadcast_to(np.asarray(x_matrix, dtype=complex), (len(X), n, n))
    out = {}
    for i in range(r + 1):
        coef = (-1) ** (r - i) * math.comb(r, i)
        degree = 2 * i
        if degree > D:
            continue
        facs = [Factor(2, lambda idx, F=F: F[:, idx[0], idx[1]], "F")] * i + [
            Factor(0, lambda idx: xv, "X")
        ] * (r - i)
        comps = graded_pairing_components(p, facs, D)
        for key, vals in comps.items():
            j_form = sum(1 for k in key if k >= mb)
            j_ext = j_form + 2 * (r - i)
            bucket = (2 * r - j_ext, j_ext)
            mag = float(np.max(np.abs(coef * vals)))
            out[bucket] = max(out.get(bucket, 0.0), mag)
    return out


def family_connection_with_vertical(fam: ConnectionFamily, eta: Callable,
                                    name: str = "") -> Connection:
    """Total connection shifted by a parameter-direction (0,1) piece.

    `eta(X)` returns (N, param_dim, n, n): the candidate gauge-space
    connection difference standing in for a reparametrization choice.
    """
    n = group_dim(fam.group)
    D = fam.product_chart.dim
    mb = fam.base_dim

    def coeffs(X):
        out = np.zeros((len(X), D, n, n), dtype=complex)
        out[:, :mb] = fam.coefficients(X)
        out[:, mb:] = eta(X)
        return out

    return Connection(fam.product_chart, fam.group, coeffs, name or f"{fam.name}+eta")


def connection_independence_check(p: InvariantPolynomial, fam: ConnectionFamily,
                                  eta1: Callable, eta2: Callable,
                                  n_samples: int = 100, flat_tol: float = 1e-8,
                                  t_nodes: int = 12, seed: int = 6,
                                  q: QuadratureSpec = DEFAULT_QUADRATURE) -> dict:
    """Sup of the transgression correction components with low parameter degree.

    For two reparametrizations differing by vertical pieces eta1, eta2, the
    correction Tp(A + eta1, A + eta2) must have vanishing components of
    parameter degree k < r on a flat family.  Returns {k: sup magnitude}.
    """
    defect = fam.flat_defect(n_samples=min(n_samples, 100), seed=seed, q=q)
    if defect > flat_tol:
        raise NotFlat(f"family curvature sup {defect:.2e} exceeds {flat_tol:.0e}")
    from .chernweil import transgression

    c1 = family_connection_with_vertical(fam, eta1, "repar1")
    c2 = family_connection_with_vertical(fam, eta2, "repar2")
    tp = transgression(p, c1, c2, t_nodes, q)
    rng = np.random.default_rng(seed + 1)
    X = sample_points(fam.product_chart, n_samples, rng)
    mb = fam.base_dim
    big = BigradedForm(tp, mb)
    out = {k: 0.0 for k in range(p.degree)}
    for idx in tp.components:
        _, j = big.bidegree_of(idx)
        if j < p.degree:
            v = tp.component_values(idx, X)
            out[j] = max(out[j], float(np.max(np.abs(v))))
    return out


# ---------------------------------------------------------------------------
# fiber integration over the base cycle
# ---------------------------------------------------------------------------


def sigma_density(p: InvariantPolynomial, fam: ConnectionFamily, base_cycle: Chain,
                  dir1, dir2, q: QuadratureSpec = DEFAULT_QUADRATURE) -> Callable:
    """sigma_c(dir1, dir2)(s): fiber integral of p(F, ..., F) contracted with
    two parameter directions (leading slots, in the given order)."""
    conn = fam.total_connection()
    mb = fam.base_dim
    D = fam.product_chart.dim
    r = p.degree
    d1 = np.asarray(dir1, dtype=float)
    d2 = np.asarray(dir2, dtype=float)

    def value(s):
        s = np.asarray(s, dtype=float)
        total = 0.0 + 0.0j
        for cell in base_cycle.cells:
            order = cell.order or q.order
            U, w = tensor_grid(cell.dim, order)
            Xb = cell.mapping(U)
            X = np.concatenate([Xb, np.broadcast_to(s, (len(Xb), fam.param_dim))], axis=1)
            X = np.ascontiguousarray(X)
            F = curvature_array(conn, X, q.fd_step)
            fac = Factor(2, lambda idx, F=F: F[:, idx[0], idx[1]], "F")
            keys = [
                k
                for k in itertools.combinations(range(D), 2 * r)
                if sum(1 for i in k if i >= mb) == 2
            ]
            comps = graded_pairing_components(p, [fac] * r, D, keys)
            J = _base_cell_jacobian(cell, U, mb, q.fd_step)
            for key, vals in comps.items():
                base_idx = tuple(i for i in key if i < mb)
                pa, pb = [i - mb for i in key if i >= mb]
                contract = d1[pa] * d2[pb] - d1[pb] * d2[pa]
                if contract == 0.0:
                    continue
                minors = _minors(J, base_idx)
                total_cell = np.sum(vals * w * minors) * contract
                total += cell.sign * total_cell
        return complex(total)

    return value


def _base_cell_jacobian(cell, U, mb, h):
    if cell.jacobian is not None:
        return np.asarray(cell.jacobian(U))
    J = np.empty((len(U), mb, cell.dim))
    for a in range(cell.dim):
        Up = U.copy()
        Up[:, a] += h
        Um = U.copy()
        Um[:, a] -= h
        J[:, :, a] = (cell.mapping(Up) - cell.mapping(Um)) / (2 * h)
    return J


def _minors(J, rows):
    sub = J[:, rows, :]
    k = sub.shape[-1]
    if k == 1:
        return sub[:, 0, 0]
    if k == 2:
        return sub[:, 0, 0] * sub[:, 1, 1] - sub[:, 0, 1] * sub[:, 1, 0]
    return np.linalg.det(sub)


def moduli_pairing(p: InvariantPolynomial, fam: ConnectionFamily, base_cycle: Chain,
                   dir1, dir2, s, q: QuadratureSpec = DEFAULT_QUADRATURE) -> float:
    """Symplectic pairing of two family directions at a parameter point.

    The parameter slots contract in the order matching the surface-moduli
    orientation (pinned by the Atiyah-Bott normalization on the torus family),
    which is the reverse of the raw product-form slot order.
    """
    val = sigma_density(p, fam, base_cycle, dir2, dir1, q)(s)
    if abs(val.imag) > 1e-8:
        raise GroupMismatch(f"pairing has imaginary part {val.imag:.2e}")
    return float(val.real)
