"""
Lowest-order conforming finite elements on :class:`~afem.mesh.Mesh`.

Discrete functions are stored by their nodal values on *all* mesh vertices,
with the Dirichlet (boundary) values pinned to zero.  Matrices and residual
vectors are indexed by the free (interior) vertices ``mesh.free_dofs``.

Two problem kinds are supported:

* ``linear_diffusion``: ``-div(A grad u) = f`` with symmetric positive
  definite ``A(x)``; the energy scalar product is ``(A grad w, grad v)``.
* ``scalar_nonlinear``: ``-div(a(x, |grad u|^2) grad u) = f``; the energy
  scalar product is the plain ``(grad w, grad v)``.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, InputError, NumericalError

__all__ = [
    "ProblemSpec",
    "DiscreteFunction",
    "poisson_problem",
    "linear_diffusion_problem",
    "scalar_nonlinear_problem",
    "log_nonlinearity_problem",
    "quadrature_points",
    "assemble_linear",
    "assemble_load",
    "assemble_stiffness",
    "product_matrix",
    "stiffness_diagonal",
    "gradients",
    "apply_nonlinear",
    "energy",
    "energy_norm",
    "dual_norm",
    "prolongation_matrix",
    "prolongate",
    "solve_discrete",
    "export_matrix_market",
]

LINEAR = "linear_diffusion"
NONLINEAR = "scalar_nonlinear"

# Constants of a(t) = 1 + ln(1+t)/(1+t): inf and sup of a(t) + 2t a'(t).
LOG_ALPHA = 0.9582898017
LOG_L = 1.542343818


@dataclass(frozen=True)
class ProblemSpec:
    """Model problem with homogeneous Dirichlet data.

    ``A`` may be a scalar, a constant 2x2 array, or a callable ``x -> (n, 2, 2)``.
    ``f`` may be a scalar or a callable ``x -> (n,)``.  The nonlinear kind
    needs ``a(x, t)`` and ``da_dt(x, t)``; ``phi(x, t) = 1/2 int_0^t a(x, s) ds``
    is integrated numerically if not given.  ``divA`` and ``grad_x_a`` are
    only needed for spatially varying coefficients; they default to central
    differences.
    """

    kind: str
    f: object = 1.0
    A: object = None
    divA: Optional[Callable] = None
    a: Optional[Callable] = None
    da_dt: Optional[Callable] = None
    phi: Optional[Callable] = None
    grad_x_a: Optional[Callable] = None
    alpha: float = 1.0
    lipschitz_L: float = 1.0
    x_dependent: bool = False

    def __post_init__(self):
        if self.kind not in (LINEAR, NONLINEAR):
            raise InputError(f"unknown problem kind {self.kind!r}")
        if not 0 < self.alpha <= self.lipschitz_L:
            raise InputError("need 0 < alpha <= lipschitz_L")
        if self.kind == NONLINEAR and (self.a is None or self.da_dt is None):
            raise InputError("scalar_nonlinear problems need a and da_dt")

    @property
    def is_linear(self):
        return self.kind == LINEAR

    @property
    def constant_coefficients(self):
        if self.is_linear:
            return not callable(self.A)
        return not self.x_dependent


def poisson_problem(f=1.0):
    """``-Laplace u = f``."""
    return ProblemSpec(kind=LINEAR, f=f, A=None)


def linear_diffusion_problem(A, f=1.0, divA=None):
    return ProblemSpec(kind=LINEAR, f=f, A=A, divA=divA)


def scalar_nonlinear_problem(a, da_dt, alpha, lipschitz_L, f=1.0, phi=None,
                             grad_x_a=None, x_dependent=False):
    return ProblemSpec(kind=NONLINEAR, f=f, a=a, da_dt=da_dt, phi=phi,
                       grad_x_a=grad_x_a, alpha=alpha, lipschitz_L=lipschitz_L,
                       x_dependent=x_dependent)


def _log_a(x, t):
    return 1.0 + np.log1p(t) / (1.0 + t)


def _log_da(x, t):
    return (1.0 - np.log1p(t)) / (1.0 + t) ** 2


def _log_phi(x, t):
    return 0.5 * (t + 0.5 * np.log1p(t) ** 2)


def log_nonlinearity_problem(f=1.0):
    """``a(x, t) = 1 + ln(1+t)/(1+t)`` with its monotonicity constants."""
    return scalar_nonlinear_problem(_log_a, _log_da, LOG_ALPHA, LOG_L, f=f, phi=_log_phi)


@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    """P1 function given by its values at all mesh vertices."""

    mesh_generation: int
    coefficients: np.ndarray

    @classmethod
    def zero(cls, mesh):
        return cls(mesh.generation_id, np.zeros(mesh.num_vertices))

    @classmethod
    def from_free(cls, mesh, x):
        """Embed a free-dof vector, filling Dirichlet vertices with zero."""
        x = np.asarray(x, dtype=float)
        if x.shape != (mesh.num_free_dofs,):
            raise InputError(f"expected {mesh.num_free_dofs} free values, got {x.shape}")
        c = np.zeros(mesh.num_vertices)
        c[mesh.free_dofs] = x
        return cls(mesh.generation_id, c)

    @classmethod
    def interpolate(cls, mesh, func):
        c = np.asarray(func(mesh.vertices), dtype=float)
        c = c.copy()
        c[mesh.boundary_vertices] = 0.0
        return cls(mesh.generation_id, c)

    def free(self, mesh):
        check_function(mesh, self)
        return self.coefficients[mesh.free_dofs]

    def __add__(self, other):
        _same(self, other)
        return DiscreteFunction(self.mesh_generation, self.coefficients + other.coefficients)

    def __sub__(self, other):
        _same(self, other)
        return DiscreteFunction(self.mesh_generation, self.coefficients - other.coefficients)

    def __mul__(self, s):
        return DiscreteFunction(self.mesh_generation, float(s) * self.coefficients)

    __rmul__ = __mul__


def _same(u, v):
    if u.mesh_generation != v.mesh_generation:
        raise InputError("discrete functions live on different meshes")


def check_function(mesh, v):
    if v.mesh_generation != mesh.generation_id:
        raise InputError(f"function lives on mesh generation {v.mesh_generation}, "
                         f"not {mesh.generation_id}")
    if len(v.coefficients) != mesh.num_vertices:
        raise InputError("coefficient vector length does not match the mesh")


# ----------------------------------------------------------------------
# quadrature and coefficients


def quadrature_points(mesh):
    """Edge-midpoint rule (exact for quadratics): points (ne, 3, 2), equal weights |T|/3."""
    p = mesh.vertices[mesh.elements]
    return 0.5 * (p + p[:, [1, 2, 0]])


def _eval_f(spec, x):
    """f at points x of shape (..., 2)."""
    if callable(spec.f):
        shape = x.shape[:-1]
        return np.asarray(spec.f(x.reshape(-1, 2)), dtype=float).reshape(shape)
    return np.full(x.shape[:-1], float(spec.f))


def _eval_A(spec, x):
    """A at points x of shape (..., 2), returned with shape (..., 2, 2)."""
    A = spec.A
    shape = x.shape[:-1]
    if A is None:
        return np.broadcast_to(np.eye(2), shape + (2, 2))
    if callable(A):
        return np.asarray(A(x.reshape(-1, 2)), dtype=float).reshape(shape + (2, 2))
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        A = A * np.eye(2)
    return np.broadcast_to(A, shape + (2, 2))


def _mean_A(mesh, spec):
    """Element means of A, (ne, 2, 2)."""
    if not callable(spec.A):
        return _eval_A(spec, np.zeros((mesh.num_elements, 2)))
    return _eval_A(spec, quadrature_points(mesh)).mean(axis=1)


def _check_areas(mesh):
    if np.any(mesh.areas <= 0):
        raise AssemblyError("degenerate element with non-positive area")


def gradients(mesh, v):
    """Elementwise constant gradients (ne, 2) of a discrete function."""
    if isinstance(v, DiscreteFunction):
        check_function(mesh, v)
        v = v.coefficients
    return np.einsum("tij,ti->tj", mesh.grad_basis, v[mesh.elements])


def _scatter_matrix(mesh, local):
    """Assemble (ne, 3, 3) element matrices and restrict to free dofs."""
    el = mesh.elements
    rows = np.repeat(el, 3, axis=1).ravel()
    cols = np.tile(el, (1, 3)).ravel()
    n = mesh.num_vertices
    K = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    free = mesh.free_dofs
    return K[free][:, free].tocsr()


def _scatter_vector(mesh, local):
    b = np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.num_vertices)
    return b[mesh.free_dofs]


def assemble_stiffness(mesh, A=None):
    """Free-dof stiffness matrix of ``int A grad u . grad v``.

    ``A`` is ``None`` (identity), a constant, or an (ne, 2, 2) array of element means.
    """
    _check_areas(mesh)
    G = mesh.grad_basis
    if A is None:
        local = np.einsum("tik,tjk->tij", G, G)
    else:
        A = np.asarray(A, dtype=float)
        if A.ndim == 0:
            local = float(A) * np.einsum("tik,tjk->tij", G, G)
        else:
            sub = "kl" if A.ndim == 2 else "tkl"
            local = np.einsum(f"tik,{sub},tjl->tij", G, A, G)
    local *= mesh.areas[:, None, None]
    return _scatter_matrix(mesh, local)


def assemble_load(mesh, spec):
    """Free-dof load vector ``int f zeta_i``."""
    _check_areas(mesh)
    if callable(spec.f):
        fq = _eval_f(spec, quadrature_points(mesh))        # (ne, 3) at midpoints m01, m12, m20
        # hat i equals 1/2 at the two midpoints of edges touching vertex i
        local = 0.5 * (fq + fq[:, [2, 0, 1]]) * (mesh.areas / 3.0)[:, None]
    else:
        local = np.repeat((float(spec.f) * mesh.areas / 3.0)[:, None], 3, axis=1)
    return _scatter_vector(mesh, local)


def assemble_linear(mesh, spec):
    """Galerkin matrix and load vector of the linear problem on the free dofs."""
    if not spec.is_linear:
        raise InputError("assemble_linear needs a linear_diffusion problem")
    A = None if spec.A is None else _mean_A(mesh, spec)
    return assemble_stiffness(mesh, A), assemble_load(mesh, spec)


def stiffness_diagonal(mesh, spec):
    """Diagonal of the energy-product matrix on *all* vertices."""
    G = mesh.grad_basis
    if spec.is_linear and spec.A is not None:
        local = np.einsum("tik,tkl,til->ti", G, _mean_A(mesh, spec), G)
    else:
        local = np.einsum("tik,tik->ti", G, G)
    local = local * mesh.areas[:, None]
    return np.bincount(mesh.elements.ravel(), weights=local.ravel(), minlength=mesh.num_vertices)


def product_matrix(mesh, spec):
    """Matrix of the energy scalar product on the free dofs."""
    if spec.is_linear:
        return assemble_linear(mesh, spec)[0]
    return assemble_stiffness(mesh)


# ----------------------------------------------------------------------
# nonlinear operator and energy


def _mean_a(mesh, spec, t, func):
    """Element means of func(x, t_T) over the quadrature points."""
    if spec.x_dependent:
        xq = quadrature_points(mesh)
        vals = func(xq.reshape(-1, 2), np.repeat(t, 3))
        return np.asarray(vals, dtype=float).reshape(-1, 3).mean(axis=1)
    return np.asarray(func(None, t), dtype=float) * np.ones_like(t)


def flux(mesh, spec, grads):
    """Elementwise flux A(grad v) as (ne, 2) (element means for variable coefficients)."""
    if spec.is_linear:
        if spec.A is None:
            return grads
        return np.einsum("tij,tj->ti", _mean_A(mesh, spec), grads)
    t = np.einsum("ti,ti->t", grads, grads)
    return _mean_a(mesh, spec, t, spec.a)[:, None] * grads


def apply_nonlinear(mesh, spec, v):
    """Residual vector ``<A v - F, zeta_i>`` on the free dofs."""
    g = gradients(mesh, v)
    q = flux(mesh, spec, g)
    local = np.einsum("tij,tj->ti", mesh.grad_basis, q) * mesh.areas[:, None]
    return _scatter_vector(mesh, local) - assemble_load(mesh, spec)


def _phi_values(mesh, spec, t):
    if spec.phi is not None:
        return _mean_a(mesh, spec, t, spec.phi)
    # substitute s = exp(y) - 1 so that large t stay well resolved
    s, w = np.polynomial.legendre.leggauss(20)
    s = 0.5 * (s + 1.0)
    w = 0.5 * w
    ymax = np.log1p(t)
    total = np.zeros_like(t)
    for si, wi in zip(s, w):
        y = si * ymax
        total += wi * np.exp(y) * _mean_a(mesh, spec, np.expm1(y), spec.a)
    return 0.5 * ymax * total


def _f_dot(mesh, spec, v):
    return float(assemble_load(mesh, spec) @ v.coefficients[mesh.free_dofs])


def energy(mesh, spec, v):
    """Energy ``P(v) - F(v)``."""
    g = gradients(mesh, v)
    if spec.is_linear:
        q = flux(mesh, spec, g)
        p = 0.5 * np.sum(mesh.areas * np.einsum("ti,ti->t", q, g))
    else:
        t = np.einsum("ti,ti->t", g, g)
        p = np.sum(mesh.areas * _phi_values(mesh, spec, t))
    return float(p) - _f_dot(mesh, spec, v)


def energy_norm(mesh, spec, v):
    """Energy norm of ``v`` by direct elementwise integration."""
    g = gradients(mesh, v)
    if spec.is_linear:
        q = flux(mesh, spec, g)
    else:
        q = g
    return float(np.sqrt(max(np.sum(mesh.areas * np.einsum("ti,ti->t", q, g)), 0.0)))


def dual_norm(mesh, spec, g, matrix=None):
    """Dual norm of a free-dof functional via the discrete Riesz map."""
    K = product_matrix(mesh, spec) if matrix is None else matrix
    if K.shape[0] == 0:
        return 0.0
    z = spla.spsolve(K.tocsc(), g)
    return float(np.sqrt(max(g @ z, 0.0)))


# ----------------------------------------------------------------------
# nested spaces


def prolongation_matrix(relation):
    """Sparse (nv_fine, nv_coarse) interpolation matrix on all vertices."""
    nc = relation.num_coarse_vertices
    ne = relation.new_vertex_edges
    nn = len(ne)
    rows = np.concatenate([np.arange(nc), np.repeat(np.arange(nc, nc + nn), 2)])
    cols = np.concatenate([np.arange(nc), ne.ravel()])
    vals = np.concatenate([np.ones(nc), np.full(2 * nn, 0.5)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(nc + nn, nc))


def prolongate(relation, v):
    """Represent a coarse function on the fine mesh (exact for P1)."""
    if v.mesh_generation != relation.coarse_generation:
        raise InputError("function does not live on the coarse mesh of the relation")
    c = v.coefficients
    if len(c) != relation.num_coarse_vertices:
        raise InputError("coefficient vector length does not match the coarse mesh")
    ne = relation.new_vertex_edges
    fine = np.concatenate([c, 0.5 * (c[ne[:, 0]] + c[ne[:, 1]])])
    return DiscreteFunction(relation.fine_generation, fine)


# ----------------------------------------------------------------------
# reference solves


def _newton_matrix(mesh, spec, grads):
    t = np.einsum("ti,ti->t", grads, grads)
    a = _mean_a(mesh, spec, t, spec.a)
    da = _mean_a(mesh, spec, t, spec.da_dt)
    D = a[:, None, None] * np.eye(2) + 2.0 * da[:, None, None] * np.einsum("ti,tj->tij", grads, grads)
    return assemble_stiffness(mesh, D)


def solve_discrete(mesh, spec, tol=1e-12, maxiter=100, v0=None):
    """Accurate Galerkin solution ``u_H*``: sparse direct for linear problems,
    damped Newton for the nonlinear kind (relative dual residual below ``tol``)."""
    if mesh.num_free_dofs == 0:
        return DiscreteFunction.zero(mesh)
    if spec.is_linear:
        K, b = assemble_linear(mesh, spec)
        return DiscreteFunction.from_free(mesh, spla.spsolve(K.tocsc(), b))
    lap = assemble_stiffness(mesh).tocsc()
    lap_solve = spla.factorized(lap)
    b = assemble_load(mesh, spec)
    scale = max(np.sqrt(b @ lap_solve(b)), 1e-300)
    u = DiscreteFunction.zero(mesh) if v0 is None else v0
    free = mesh.free_dofs
    for _ in range(maxiter):
        r = apply_nonlinear(mesh, spec, u)
        res = np.sqrt(max(r @ lap_solve(r), 0.0))
        if res <= tol * scale:
            return u
        J = _newton_matrix(mesh, spec, gradients(mesh, u))
        d = spla.spsolve(J.tocsc(), -r)
        e0 = energy(mesh, spec, u)
        step = 1.0
        while True:
            c = u.coefficients.copy()
            c[free] += step * d
            trial = DiscreteFunction(mesh.generation_id, c)
            if energy(mesh, spec, trial) <= e0 + 1e-14 * abs(e0) or step < 1e-4:
                break
            step *= 0.5
        u = trial
    raise NumericalError("Newton iteration did not converge", residual=res, tol=tol)


def export_matrix_market(matrix, path):
    """Write a sparse matrix in MatrixMarket coordinate format."""
    from scipy.io import mmwrite
    mmwrite(str(path), sp.coo_matrix(matrix))
