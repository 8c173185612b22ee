"""Matrix Lie groups and algebras at desk scale.

Supported groups: U(1) and SU(n) for n <= 4, all as small dense complex
matrices.  Algebra elements are anti-Hermitian (traceless for SU), group
elements unitary (unit determinant for SU).  Invariant polynomials are
symmetrized trace monomials with configurable normalization.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ArityMismatch, CutLocus, GroupMismatch

GROUP_DIMS = {"U1": 1, "SU2": 2, "SU3": 3, "SU4": 4}

_HERM_TOL = 1e-12
_UNITARY_TOL = 1e-10


def group_dim(group: str) -> int:
    try:
        return GROUP_DIMS[group]
    except KeyError:
        raise GroupMismatch(f"unknown group {group!r}") from None


def _check_same_group(a, b):
    if a.group != b.group:
        raise GroupMismatch(f"{a.group} vs {b.group}")


@dataclass(frozen=True)
class AlgebraElement:
    """Anti-Hermitian matrix (traceless for SU groups)."""

    group: str
    matrix: np.ndarray

    def __post_init__(self):
        n = group_dim(self.group)
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (n, n):
            raise GroupMismatch(f"expected {n}x{n} matrix for {self.group}")
        if np.max(np.abs(m + m.conj().T)) > _HERM_TOL * max(1.0, np.linalg.norm(m)):
            raise GroupMismatch("matrix is not anti-Hermitian")
        if self.group != "U1" and abs(np.trace(m)) > _HERM_TOL * max(1.0, np.linalg.norm(m)):
            raise GroupMismatch("su(n) matrix must be traceless")
        object.__setattr__(self, "matrix", m)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))

    def __add__(self, other: "AlgebraElement") -> "AlgebraElement":
        _check_same_group(self, other)
        return AlgebraElement(self.group, self.matrix + other.matrix)

    def __rmul__(self, c: float) -> "AlgebraElement":
        return AlgebraElement(self.group, float(c) * self.matrix)

    def bracket(self, other: "AlgebraElement") -> "AlgebraElement":
        _check_same_group(self, other)
        m = self.matrix @ other.matrix - other.matrix @ self.matrix
        return AlgebraElement(self.group, m)


@dataclass(frozen=True)
class GroupElement:
    """Unitary matrix (determinant one for SU groups)."""

    group: str
    matrix: np.ndarray

    def __post_init__(self):
        n = group_dim(self.group)
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (n, n):
            raise GroupMismatch(f"expected {n}x{n} matrix for {self.group}")
        if np.max(np.abs(m.conj().T @ m - np.eye(n))) > _UNITARY_TOL:
            raise GroupMismatch("matrix is not unitary")
        if self.group != "U1" and abs(np.linalg.det(m) - 1.0) > _UNITARY_TOL:
            raise GroupMismatch("SU matrix must have determinant one")
        object.__setattr__(self, "matrix", m)

    def inverse(self) -> "GroupElement":
        return GroupElement(self.group, self.matrix.conj().T)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        _check_same_group(self, other)
        return GroupElement(self.group, self.matrix @ other.matrix)


def project_algebra(group: str, m: np.ndarray) -> np.ndarray:
    """Project a raw matrix onto the algebra (anti-Hermitian, traceless for SU)."""
    a = 0.5 * (m - m.conj().T)
    if group != "U1":
        n = a.shape[-1]
        a = a - (np.trace(a, axis1=-2, axis2=-1)[..., None, None] / n) * np.eye(n)
    return a


# ---------------------------------------------------------------------------
# bases and structure constants
# ---------------------------------------------------------------------------

def _gell_mann(n: int) -> list[np.ndarray]:
    """Generalized Gell-Mann matrices (Hermitian, traceless, tr(AB)=2 delta)."""
    mats = []
    for j in range(n):
        for k in range(j + 1, n):
            m = np.zeros((n, n), dtype=complex)
            m[j, k] = m[k, j] = 1.0
            mats.append(m)
            m = np.zeros((n, n), dtype=complex)
            m[j, k] = -1j
            m[k, j] = 1j
            mats.append(m)
    for d in range(1, n):
        m = np.zeros((n, n), dtype=complex)
        for j in range(d):
            m[j, j] = 1.0
        m[d, d] = -d
        mats.append(np.sqrt(2.0 / (d * (d + 1))) * m)
    return mats


def algebra_basis(group: str) -> list[AlgebraElement]:
    """Real basis of the Lie algebra, trace-orthogonal."""
    if group == "U1":
        return [AlgebraElement("U1", np.array([[1j]]))]
    n = group_dim(group)
    return [AlgebraElement(group, -0.5j * lam) for lam in _gell_mann(n)]


@dataclass(frozen=True)
class StructureConstants:
    """Structure constants c^a_{bc} with [B_b, B_c] = sum_a c^a_{bc} B_a."""

    group: str
    basis: tuple
    c: np.ndarray  # (m, m, m) real, indices (a, b, c)

    def bracket_coefficients(self, b: int, c: int) -> np.ndarray:
        return self.c[:, b, c]


def structure_constants(group: str) -> StructureConstants:
    basis = algebra_basis(group)
    m = len(basis)
    # trace-orthogonal basis: coefficients via Re tr(B_a^H X) / ||B_a||^2
    norms = np.array([np.real(np.trace(b.matrix.conj().T @ b.matrix)) for b in basis])
    c = np.zeros((m, m, m))
    for b in range(m):
        for cc in range(m):
            br = basis[b].matrix @ basis[cc].matrix - basis[cc].matrix @ basis[b].matrix
            for a in range(m):
                coef = np.trace(basis[a].matrix.conj().T @ br) / norms[a]
                c[a, b, cc] = np.real(coef)
    return StructureConstants(group, tuple(basis), c)


def algebra_coordinates(group: str, x: np.ndarray) -> np.ndarray:
    """Real coordinates of an algebra matrix in the standard basis."""
    basis = algebra_basis(group)
    out = np.empty(len(basis))
    for a, b in enumerate(basis):
        nrm = np.real(np.trace(b.matrix.conj().T @ b.matrix))
        out[a] = np.real(np.trace(b.matrix.conj().T @ x)) / nrm
    return out


def algebra_from_coordinates(group: str, coords: np.ndarray) -> np.ndarray:
    basis = algebra_basis(group)
    return sum(c * b.matrix for c, b in zip(coords, basis))


# ---------------------------------------------------------------------------
# exponential and logarithm
# ---------------------------------------------------------------------------

def exp_map(x: AlgebraElement) -> GroupElement:
    """Matrix exponential (scaling-and-squaring core from scipy)."""
    return GroupElement(x.group, scipy.linalg.expm(x.matrix))


def exp_su2_rodrigues(m: np.ndarray) -> np.ndarray:
    """Closed-form exponential for su(2): exp(X) = cos(t) I + sinc(t) X.

    Independent of the scaling-and-squaring route; used as a test oracle and
    as the fast batched kernel in holonomy products.  Accepts (..., 2, 2).
    """
    m = np.asarray(m, dtype=complex)
    # X anti-Hermitian traceless => X^2 = -t^2 I with t^2 = det(X) = |X|_F^2/2
    t2 = np.real(m[..., 0, 1] * m[..., 1, 0] - m[..., 0, 0] * m[..., 1, 1])
    t2 = np.maximum(-t2, 0.0)
    t = np.sqrt(t2)
    cos = np.cos(t)
    sinc = np.where(t > 1e-30, np.sin(np.maximum(t, 1e-30)) / np.maximum(t, 1e-30), 1.0 - t2 / 6.0)
    eye = np.eye(2)
    return cos[..., None, None] * eye + sinc[..., None, None] * m


def exp_batched(group: str, mats: np.ndarray) -> np.ndarray:
    """Batched exponential of algebra matrices, shape (..., n, n)."""
    if group == "U1":
        return np.exp(mats)
    if group == "SU2":
        return exp_su2_rodrigues(mats)
    # anti-Hermitian matrices are normal: exponentiate by eigendecomposition
    w, v = np.linalg.eigh(-1j * mats)
    phase = np.exp(1j * w)
    return np.einsum("...ij,...j,...kj->...ik", v, phase, v.conj())


def _principal_phases(g: np.ndarray) -> np.ndarray:
    """Eigenvalue phases of a unitary matrix in (-pi, pi]."""
    w = np.linalg.eigvals(g)
    return np.angle(w)


def log_map(g: GroupElement, dexp_floor: float = 1e-8) -> AlgebraElement:
    """Principal logarithm (inverse scaling-and-squaring core from scipy).

    Raises CutLocus when the differential of exp at the candidate logarithm is
    singular below `dexp_floor` (phases colliding at +-pi), or when the
    principal branch leaves the algebra (phase sum a nonzero multiple of 2pi).
    """
    n = group_dim(g.group)
    phases = _principal_phases(g.matrix)
    # smallest singular value of dexp: min over phase pairs of |f(i(a-b))|,
    # f(z) = (e^z - 1)/z, which vanishes iff a-b = 2 pi k, k != 0
    smin = 1.0
    for a in range(n):
        for b in range(n):
            d = phases[a] - phases[b]
            if abs(d) < 1e-14:
                continue
            smin = min(smin, abs((np.exp(1j * d) - 1.0) / d))
    if smin < dexp_floor:
        raise CutLocus(f"dexp singular value {smin:.2e} below {dexp_floor:.0e}")
    if g.group != "U1" and abs(np.sum(phases)) > np.pi:
        raise CutLocus("principal logarithm leaves su(n) (branch defect)")
    x = scipy.linalg.logm(g.matrix)
    return AlgebraElement(g.group, project_algebra(g.group, x))


# ---------------------------------------------------------------------------
# invariant polynomials
# ---------------------------------------------------------------------------

def default_normalization(degree: int) -> complex:
    """First/second Chern conventions: r=1 -> i/2pi, r=2 -> +1/8pi^2.

    Higher degrees default to the Chern-character pattern (i/2pi)^r / r!,
    which keeps values real on anti-Hermitian input; the normalization is a
    constructor argument for callers who need a different integral class.
    """
    import math

    if degree == 2:
        return 1.0 / (8 * np.pi ** 2)
    return (1j / (2 * np.pi)) ** degree / math.factorial(degree)


@dataclass(frozen=True)
class InvariantPolynomial:
    """Symmetrized normalized trace monomial p(X_1..X_r) = N_r sym-tr(X_1...X_r)."""

    group: str
    degree: int
    normalization: complex = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.degree < 1:
            raise ArityMismatch("polynomial degree must be positive")
        if self.normalization is None:
            object.__setattr__(self, "normalization", default_normalization(self.degree))

    def eval(self, args) -> complex:
        """Fully symmetrized normalized trace of r algebra elements."""
        mats = []
        for a in args:
            if isinstance(a, AlgebraElement):
                if a.group != self.group:
                    raise GroupMismatch(f"{a.group} vs polynomial group {self.group}")
                mats.append(a.matrix)
            else:
                mats.append(np.asarray(a, dtype=complex))
        if len(mats) != self.degree:
            raise ArityMismatch(f"expected {self.degree} arguments, got {len(mats)}")
        return complex(self.normalization * _sym_trace(mats))

    def eval_batched(self, mats: list) -> np.ndarray:
        """Same as eval but over leading batch axes, args shape (..., n, n)."""
        if len(mats) != self.degree:
            raise ArityMismatch(f"expected {self.degree} arguments, got {len(mats)}")
        return self.normalization * _sym_trace(mats)


def _sym_trace(mats) -> np.ndarray:
    """(1/r!) sum over permutations of tr(prod), batched over leading axes."""
    r = len(mats)
    if r == 1:
        return np.trace(mats[0], axis1=-2, axis2=-1)
    acc = 0.0
    for perm in itertools.permutations(range(r)):
        prod = mats[perm[0]]
        for k in perm[1:]:
            prod = prod @ mats[k]
        acc = acc + np.trace(prod, axis1=-2, axis2=-1)
    import math

    return acc / math.factorial(r)


def eval_polynomial(p: InvariantPolynomial, args) -> complex:
    return p.eval(args)


def adjoint_action(g: GroupElement, x: AlgebraElement) -> AlgebraElement:
    """Ad_g X = g X g^{-1}."""
    _check_same_group(g, x)
    return AlgebraElement(x.group, g.matrix @ x.matrix @ g.matrix.conj().T)


# ---------------------------------------------------------------------------
# random elements (seeded, for tests and search harnesses)
# ---------------------------------------------------------------------------

def random_algebra(group: str, rng: np.random.Generator, scale: float = 1.0) -> AlgebraElement:
    basis = algebra_basis(group)
    coords = rng.normal(size=len(basis)) * scale
    return AlgebraElement(group, algebra_from_coordinates(group, coords))


def random_group(group: str, rng: np.random.Generator, scale: float = 1.0) -> GroupElement:
    return exp_map(random_algebra(group, rng, scale))
