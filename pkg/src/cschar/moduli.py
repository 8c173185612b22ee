"""Flat-connection moduli through surface-group representation varieties.

Flat connections over a genus-g surface are represented by their holonomies:
2g unitary generators whose product of commutators is the identity.  The
search for flat points is Riemannian gradient descent on the squared relator
residual with Armijo backtracking; tangent spaces come from the linearized
relator modulo conjugation coboundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .connection import Connection
from .equivariant import ConnectionFamily
from .errors import (
    DimensionMismatch,
    GroupMismatch,
    NoConvergence,
    NotFlat,
    PointMismatch,
)
from .forms import Chain, DEFAULT_QUADRATURE, ModelChart, QuadratureSpec, cube_cell, tensor_grid
from .liealg import (
    GroupElement,
    InvariantPolynomial,
    algebra_basis,
    algebra_coordinates,
    algebra_from_coordinates,
    exp_batched,
    group_dim,
    project_algebra,
    random_algebra,
)
from .products import Factor, curvature_array, graded_pairing_components

# ---------------------------------------------------------------------------
# surface group representations
# ---------------------------------------------------------------------------


@dataclass
class SurfaceGroupRep:
    """2g generator matrices a_1, b_1, ..., a_g, b_g."""

    genus: int
    group: str
    generators: list  # 2g unitary (n, n) arrays

    def __post_init__(self):
        if len(self.generators) != 2 * self.genus:
            raise GroupMismatch(f"expected {2 * self.genus} generators")
        self.generators = [np.asarray(g, dtype=complex) for g in self.generators]

    def letters(self):
        """Relator word prod_i [a_i, b_i] as (generator index, exponent)."""
        out = []
        for i in range(self.genus):
            out += [(2 * i, 1), (2 * i + 1, 1), (2 * i, -1), (2 * i + 1, -1)]
        return out

    def word_matrices(self):
        mats = []
        for idx, e in self.letters():
            u = self.generators[idx]
            mats.append(u if e == 1 else u.conj().T)
        return mats

    def relator(self) -> np.ndarray:
        n = group_dim(self.group)
        w = np.eye(n, dtype=complex)
        for m in self.word_matrices():
            w = w @ m
        return w

    def trace_coordinates(self) -> list:
        """Gauge-invariant coordinates tr a_i, tr b_i, tr (a_i b_i)."""
        out = []
        for i in range(self.genus):
            a, b = self.generators[2 * i], self.generators[2 * i + 1]
            out += [complex(np.trace(a)), complex(np.trace(b)), complex(np.trace(a @ b))]
        return out

    def conjugate(self, g: GroupElement) -> "SurfaceGroupRep":
        m = g.matrix
        return SurfaceGroupRep(self.genus, self.group,
                               [m @ u @ m.conj().T for u in self.generators])


def relator_residual(rho: SurfaceGroupRep) -> float:
    n = group_dim(rho.group)
    return float(np.linalg.norm(rho.relator() - np.eye(n)))


def _prefixes_suffixes(mats, n):
    pre = [np.eye(n, dtype=complex)]
    for m in mats:
        pre.append(pre[-1] @ m)
    suf = [np.eye(n, dtype=complex)]
    for m in reversed(mats):
        suf.append(m @ suf[-1])
    suf.reverse()
    return pre, suf  # pre[k] = M_1..M_k, suf[k] = M_{k+1}..M_L


def relator_gradient(rho: SurfaceGroupRep):
    """Riemannian gradient of |W - I|_F^2 in right-translation coordinates."""
    n = group_dim(rho.group)
    mats = rho.word_matrices()
    letters = rho.letters()
    pre, suf = _prefixes_suffixes(mats, n)
    W = pre[-1]
    G = W - np.eye(n)
    Q = [np.zeros((n, n), dtype=complex) for _ in range(2 * rho.genus)]
    for k, (idx, e) in enumerate(letters, start=1):
        if e == 1:
            # term pre[k-1] (M_k xi) suf[k] = pre[k] xi suf[k]
            Q[idx] += suf[k] @ G.conj().T @ pre[k]
        else:
            # term pre[k-1] (-xi M_k) suf[k] = -pre[k-1] xi suf[k-1]
            Q[idx] -= suf[k - 1] @ G.conj().T @ pre[k - 1]
    return [project_algebra(rho.group, 2.0 * q.conj().T) for q in Q]


def finite_difference_gradient(rho: SurfaceGroupRep, h: float = 1e-6):
    """Central-difference gradient in the same coordinates (validation oracle)."""
    basis = algebra_basis(rho.group)
    m = len(basis)
    out = []
    for i in range(2 * rho.genus):
        coords = np.zeros(m)
        for a, b in enumerate(basis):
            for s, sgn in ((h, 1.0), (-h, -1.0)):
                gens = [g.copy() for g in rho.generators]
                gens[i] = gens[i] @ exp_batched(rho.group, np.asarray([s * b.matrix]))[0]
                pert = SurfaceGroupRep(rho.genus, rho.group, gens)
                coords[a] += sgn * relator_residual(pert) ** 2
            coords[a] /= 2 * h
        nrm = np.real(np.trace(basis[0].matrix.conj().T @ basis[0].matrix))
        out.append(algebra_from_coordinates(rho.group, coords / nrm))
    return out


@dataclass
class SearchOptions:
    tol: float = 1e-8
    max_iters: int = 5000
    initial_step: float = 0.25
    armijo: float = 1e-4
    backtrack: float = 0.5
    grow: float = 2.0
    max_step: float = 4.0


def find_flat(seed_rep: SurfaceGroupRep, options: SearchOptions = None) -> SurfaceGroupRep:
    """Monotone Armijo gradient descent to the flat locus.

    Returns a representation with relator residual below options.tol or raises
    NoConvergence carrying the best residual reached.
    """
    opt = options or SearchOptions()
    rho = SurfaceGroupRep(seed_rep.genus, seed_rep.group, [g.copy() for g in seed_rep.generators])
    f = relator_residual(rho) ** 2
    if f <= opt.tol ** 2:
        rho.iterations = 0
        return rho
    step = opt.initial_step
    for it in range(1, opt.max_iters + 1):
        grad = relator_gradient(rho)
        gnorm2 = sum(float(np.real(np.trace(g.conj().T @ g))) for g in grad)
        if gnorm2 == 0.0:
            break
        accepted = False
        while step > 1e-14:
            stepped = [
                u @ exp_batched(rho.group, np.asarray([-step * g]))[0]
                for u, g in zip(rho.generators, grad)
            ]
            cand = SurfaceGroupRep(rho.genus, rho.group, stepped)
            fc = relator_residual(cand) ** 2
            if fc <= f - opt.armijo * step * gnorm2:
                rho, f = cand, fc
                accepted = True
                break
            step *= opt.backtrack
        if not accepted:
            break
        step = min(step * opt.grow, opt.max_step)
        if f <= opt.tol ** 2:
            rho.iterations = it
            return rho
    raise NoConvergence(
        f"residual {math.sqrt(f):.3e} after {opt.max_iters} iterations",
        best_residual=math.sqrt(f),
    )


def random_rep(genus: int, group: str, rng: np.random.Generator, scale: float = 1.0) -> SurfaceGroupRep:
    gens = [
        exp_batched(group, np.asarray([random_algebra(group, rng, scale).matrix]))[0]
        for _ in range(2 * genus)
    ]
    return SurfaceGroupRep(genus, group, gens)


# ---------------------------------------------------------------------------
# tangent cocycles
# ---------------------------------------------------------------------------


@dataclass
class TangentCocycle:
    """Right-translation tangent components (xi_1, ..., xi_2g) at a flat rep."""

    rep: SurfaceGroupRep
    components: list  # 2g algebra matrices

    def coordinates(self) -> np.ndarray:
        return np.concatenate([algebra_coordinates(self.rep.group, c) for c in self.components])


@dataclass
class CocycleSpace:
    rep: SurfaceGroupRep
    basis: list  # TangentCocycle, orthonormal modulo coboundaries
    cocycle_dim: int
    coboundary_dim: int

    @property
    def quotient_dim(self) -> int:
        return len(self.basis)


def _adjoint_matrix(group: str, g: np.ndarray) -> np.ndarray:
    basis = algebra_basis(group)
    m = len(basis)
    out = np.empty((m, m))
    for b, B in enumerate(basis):
        out[:, b] = algebra_coordinates(group, g @ B.matrix @ g.conj().T)
    return out


def tangent_cocycles(rho: SurfaceGroupRep, flat_tol: float = 1e-8,
                     svd_threshold: float = 1e-6) -> CocycleSpace:
    """Kernel of the linearized relator modulo conjugation coboundaries."""
    res = relator_residual(rho)
    if res > flat_tol:
        raise NotFlat(f"relator residual {res:.2e}")
    group = rho.group
    n = group_dim(group)
    m = len(algebra_basis(group))
    mats = rho.word_matrices()
    letters = rho.letters()
    pre, _ = _prefixes_suffixes(mats, n)
    # D(xi) = sum_{+ letters} Ad_{P_k} xi_i - sum_{- letters} Ad_{P_{k-1}} xi_i
    D = np.zeros((m, 2 * rho.genus * m))
    for k, (idx, e) in enumerate(letters, start=1):
        ad = _adjoint_matrix(group, pre[k] if e == 1 else pre[k - 1])
        D[:, idx * m:(idx + 1) * m] += ad if e == 1 else -ad
    # cocycles: null space of D
    u, s, vh = np.linalg.svd(D)
    rank = int(np.sum(s > svd_threshold))
    Z = vh[rank:].T  # (2g m, z)
    # coboundaries: nu -> (Ad_{U_i^{-1}} nu - nu)_i
    B = np.zeros((2 * rho.genus * m, m))
    for i, ugen in enumerate(rho.generators):
        ad = _adjoint_matrix(group, ugen.conj().T)
        B[i * m:(i + 1) * m] = ad - np.eye(m)
    ub, sb, vbh = np.linalg.svd(B, full_matrices=False)
    rank_b = int(np.sum(sb > svd_threshold))
    Bimg = ub[:, :rank_b]
    # quotient: project the coboundary image out of the cocycle space
    Zproj = Z - Bimg @ (Bimg.T @ Z)
    uq, sq, vqh = np.linalg.svd(Zproj, full_matrices=False)
    rank_q = int(np.sum(sq > svd_threshold))
    basis_vecs = uq[:, :rank_q]
    basis = []
    for k in range(rank_q):
        vec = basis_vecs[:, k]
        comps = [
            algebra_from_coordinates(group, vec[i * m:(i + 1) * m])
            for i in range(2 * rho.genus)
        ]
        basis.append(TangentCocycle(rho, comps))
    return CocycleSpace(rho, basis, Z.shape[1], rank_b)


# ---------------------------------------------------------------------------
# the Atiyah-Bott form
# ---------------------------------------------------------------------------

AB_NORMALIZATION = 1.0 / (4.0 * np.pi ** 2)


def atiyah_bott_flat_family(u_coeffs: np.ndarray, v_coeffs: np.ndarray,
                            chart: Optional[ModelChart] = None,
                            order: int = 8) -> float:
    """(1/4 pi^2) int_{T^2} tr(a ^ b) for constant tangent 1-forms.

    `u_coeffs`, `v_coeffs` are (2, n, n): the dx and dy algebra coefficients.
    Evaluated by quadrature over the fundamental cell (the normalization and
    sign anchor for the combinatorial pairing).
    """
    chart = chart or ModelChart.torus(2)
    U, w = tensor_grid(2, order)
    dens = np.trace(
        u_coeffs[0] @ v_coeffs[1] - u_coeffs[1] @ v_coeffs[0]
    )
    val = AB_NORMALIZATION * dens * float(np.sum(w))
    if abs(np.imag(val)) > 1e-10:
        raise GroupMismatch(f"pairing has imaginary part {np.imag(val):.2e}")
    return float(np.real(val))


def _crossed_hom_value(group: str, gens, cocycle, word):
    """Extend generator values to a word: z(gh) = z(g) + Ad_{rho(g)} z(h)."""
    n = group_dim(group)
    val = np.zeros((n, n), dtype=complex)
    g = np.eye(n, dtype=complex)
    for idx, e in word:
        u = gens[idx]
        z = cocycle[idx]
        if e == 1:
            step_val, step_mat = z, u
        else:
            uinv = u.conj().T
            step_val, step_mat = -(uinv @ z @ u), uinv
        val = val + g @ step_val @ g.conj().T
        g = g @ step_mat
    return val


def atiyah_bott_form(u: TangentCocycle, v: TangentCocycle) -> float:
    """Cup-product pairing on group cochains of the 4g-gon.

    Cocycles enter in left-translation values z_i = Ad_{U_i} xi_i; the
    fundamental two-chain of the polygon is sum_k [w_{k-1} | x_k] corrected by
    the generator-inverse degeneracies.  Normalization and sign anchored by
    the torus quadrature path.
    """
    if u.rep is not v.rep:
        same = u.rep.genus == v.rep.genus and all(
            np.allclose(a, b) for a, b in zip(u.rep.generators, v.rep.generators)
        )
        if not same:
            raise PointMismatch("cocycles attached to different representations")
    rho = u.rep
    group = rho.group
    gens = rho.generators
    zu = [g @ x @ g.conj().T for g, x in zip(gens, u.components)]
    zv = [g @ x @ g.conj().T for g, x in zip(gens, v.components)]
    letters = rho.letters()
    total = 0.0 + 0.0j
    # sum_{k>=2} tr( zu(w_{k-1}) Ad_{w_{k-1}} zv(x_k) )
    n = group_dim(group)
    w_mat = np.eye(n, dtype=complex)
    zu_w = np.zeros((n, n), dtype=complex)
    mats = rho.word_matrices()
    for k, (idx, e) in enumerate(letters):
        if k > 0:
            if e == 1:
                zv_letter = zv[idx]
            else:
                uinv = gens[idx].conj().T
                zv_letter = -(uinv @ zv[idx] @ gens[idx])
            total += np.trace(zu_w @ w_mat @ zv_letter @ w_mat.conj().T)
        # extend zu along the word
        if e == 1:
            step_val = zu[idx]
        else:
            uinv = gens[idx].conj().T
            step_val = -(uinv @ zu[idx] @ gens[idx])
        zu_w = zu_w + w_mat @ step_val @ w_mat.conj().T
        w_mat = w_mat @ mats[k]
    # degeneracy correction: + sum_i tr(zu(g_i) zv(g_i))
    for i in range(2 * rho.genus):
        total += np.trace(zu[i] @ zv[i])
    val = AB_NORMALIZATION * total
    if abs(np.imag(val)) > 1e-9:
        raise GroupMismatch(f"pairing has imaginary part {np.imag(val):.2e}")
    return float(np.real(val))


# ---------------------------------------------------------------------------
# moment map
# ---------------------------------------------------------------------------


def moment_map(p: InvariantPolynomial, fam: ConnectionFamily, cycle: Chain,
               x_field, q: QuadratureSpec = DEFAULT_QUADRATURE) -> Callable:
    """mu_c(X)(s) = -r int_c p(X, F_{A_s}, ..., F_{A_s}).

    `x_field` is a constant algebra matrix or a callable (N, dim) -> (N, n, n).
    Returns a function of the family parameter.
    """
    r = p.degree
    for cell in cycle.cells:
        if cell.dim != 2 * r - 2:
            raise DimensionMismatch(f"cycle dim {cell.dim}, moment map needs {2 * r - 2}")
    n = group_dim(fam.group)

    def value(s) -> float:
        conn = fam.connection_at(s)
        total = 0.0 + 0.0j
        for cell in cycle.cells:
            order = cell.order or q.order
            U, w = tensor_grid(cell.dim, order)
            Xb = np.ascontiguousarray(cell.mapping(U))
            F = curvature_array(conn, Xb, q.fd_step)
            if callable(x_field):
                xv = np.asarray(x_field(Xb), dtype=complex)
            else:
                xv = np.broadcast_to(np.asarray(x_field, dtype=complex), (len(Xb), n, n))
            facs = [Factor(0, lambda idx, xv=xv: xv, "X")] + [
                Factor(2, lambda idx, F=F: F[:, idx[0], idx[1]], "F")
            ] * (r - 1)
            comps = graded_pairing_components(p, facs, fam.base_dim)
            from .forms import _cell_jacobian, _minor_dets

            J = _cell_jacobian(cell, U, fam.base_dim, q.fd_step)
            for key, vals in comps.items():
                minors = _minor_dets(J, key)
                total += cell.sign * np.sum(vals * w * minors)
        val = -r * total
        if abs(np.imag(val)) > 1e-9:
            raise GroupMismatch(f"moment map has imaginary part {np.imag(val):.2e}")
        return float(np.real(val))

    return value


# ---------------------------------------------------------------------------
# built-in flat families
# ---------------------------------------------------------------------------

SU2_H = np.diag([1j, -1j])


def flat_torus_family(base_dim: int = 2, group: str = "SU2",
                      direction: Optional[np.ndarray] = None,
                      twist: Optional[Callable] = None,
                      name: str = "") -> ConnectionFamily:
    """Commuting-holonomy family A_s = sum_i s_i dx^i H, optionally gauge-twisted.

    `twist(X) -> (N, n, n)` applies A -> Ad_{g^{-1}} A + g^{-1} dg pointwise,
    which preserves flatness while making every coefficient x-dependent.
    """
    H = SU2_H if direction is None else np.asarray(direction, dtype=complex)
    base = ModelChart.torus(base_dim)
    params = ModelChart.box(base_dim, f"params{base_dim}")
    n = group_dim(group)
    h = 1e-5

    def coeffs(X):
        N = len(X)
        out = np.zeros((N, base_dim, n, n), dtype=complex)
        for i in range(base_dim):
            out[:, i] = X[:, base_dim + i][:, None, None] * H
        if twist is not None:
            g = np.asarray(twist(X[:, :base_dim]))
            ginv = np.conj(np.swapaxes(g, -1, -2))
            for i in range(base_dim):
                Xp = X.copy()
                Xp[:, i] += h
                Xm = X.copy()
                Xm[:, i] -= h
                dg = (np.asarray(twist(Xp[:, :base_dim])) - np.asarray(twist(Xm[:, :base_dim]))) / (2 * h)
                out[:, i] = ginv @ out[:, i] @ g + ginv @ dg
        return out

    label = name or (f"flat-torus{base_dim}" + ("-twisted" if twist else ""))
    return ConnectionFamily(base, params, group, coeffs, label)


def periodic_group_twist(group: str = "SU2", amplitude: float = 0.35,
                         harmonics=((1, 0), (0, 1))) -> Callable:
    """Smooth periodic map torus -> G with no winding, for gauge twists."""
    from .liealg import algebra_basis

    basis = [b.matrix for b in algebra_basis(group)]

    def g(Xb):
        h1 = np.asarray(harmonics[0][: Xb.shape[1]], dtype=float)
        h2 = np.asarray(harmonics[1][: Xb.shape[1]], dtype=float)
        f1 = np.sin(2 * np.pi * (Xb[:, : len(h1)] * h1).sum(axis=1))
        f2 = np.cos(2 * np.pi * (Xb[:, : len(h2)] * h2).sum(axis=1)) - 1.0
        m = amplitude * (f1[:, None, None] * basis[0] + f2[:, None, None] * basis[1])
        return exp_batched(group, m)

    return g


# traceless commuting direction with a nonzero cubic trace (su(2) has none)
SU3_H = np.diag([1j, 1j, -2j])


def flat_4torus_family(group: str = "SU3",
                       direction: Optional[np.ndarray] = None,
                       twist: Optional[Callable] = None,
                       name: str = "") -> ConnectionFamily:
    """Commuting flat family over torus3 x torus1 with a cylinder parameter space.

    Parameters (w, v) with w periodic; the base holonomy angles depend
    smoothly on them, so wrap-around parameter loops exist while the family
    stays flat.  This is the smallest base carrying the 4-cycle a degree-3
    polynomial needs.
    """
    H = SU3_H if direction is None else np.asarray(direction, dtype=complex)
    base = ModelChart.product(ModelChart.torus(3), ModelChart.torus(1))
    params = ModelChart.product(ModelChart.torus(1), ModelChart.box(1, "v"))
    n = group_dim(group)
    h = 1e-5

    def angles(w, v):
        return np.stack(
            [
                0.45 * np.sin(2 * np.pi * w) + 0.1,
                0.35 * np.cos(2 * np.pi * w) + 0.25 * v,
                0.6 * v + 0.15,
                np.full_like(w, 0.3),
            ],
            axis=1,
        )

    def coeffs(X):
        N = len(X)
        th = angles(X[:, 4], X[:, 5])  # (N, 4)
        out = th[:, :, None, None] * H
        if twist is not None:
            g = np.asarray(twist(X[:, :4]))
            ginv = np.conj(np.swapaxes(g, -1, -2))
            for i in range(4):
                Xp = X.copy()
                Xp[:, i] += h
                Xm = X.copy()
                Xm[:, i] -= h
                dg = (np.asarray(twist(Xp[:, :4])) - np.asarray(twist(Xm[:, :4]))) / (2 * h)
                out[:, i] = ginv @ out[:, i] @ g + ginv @ dg
        return out

    label = name or ("flat-4torus" + ("-twisted" if twist else ""))
    return ConnectionFamily(base, params, group, coeffs, label)
