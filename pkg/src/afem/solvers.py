"""
Contractive iterative solvers.

* PCG with a local multilevel diagonal scaling preconditioner (an additive
  Schwarz method over the sequence of NVB meshes) for the linear problem.
* The Zarantonello (damped Banach-Picard) iteration for the strongly
  monotone nonlinear problem; one step is one Poisson solve.

Both solvers expose the same small interface used by the adaptive loop:
``start_level(mesh, relation, u0)`` followed by repeated ``step()`` calls.
"""
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .errors import InputError, NumericalError
from .fem import (DiscreteFunction, apply_nonlinear, assemble_linear, assemble_stiffness,
                  check_function, energy, energy_norm,
                  stiffness_diagonal)

__all__ = [
    "MultilevelPreconditioner",
    "PCGState",
    "pcg_start",
    "pcg_step",
    "zarantonello_step",
    "zarantonello_q",
    "dl",
    "condition_number",
    "PCGSolver",
    "ZarantonelloSolver",
    "make_solver",
]

MODES = ("norm", "energy")


class MultilevelPreconditioner:
    """Local multilevel diagonal scaling over a nested NVB mesh sequence.

    ``P^{-1} r = sum_j I_j D_j^{-1} I_j^T r`` where on level ``j >= 1`` only the
    new vertices and their edge neighbours contribute, and ``D_j`` is the
    diagonal of the level-``j`` stiffness matrix.  Level 0 uses all free
    vertices of the initial mesh.

    Vertex numbers are stable under refinement (new vertices are appended),
    so every level is a prefix of the finest vertex array and inter-grid
    transfers act in place on the appended block only.
    """

    def __init__(self, mesh, diag):
        self._levels = []
        self._free = mesh.free_dofs
        self._nv = mesh.num_vertices
        self._add(mesh, 0, np.zeros((0, 2), dtype=np.int64),
                  np.flatnonzero(~mesh.boundary_vertices), diag)

    def _add(self, mesh, start, parents, active, diag):
        active = active[~mesh.boundary_vertices[active]]
        self._levels.append((start, mesh.num_vertices, parents[:, 0].copy(), parents[:, 1].copy(),
                             active, 1.0 / diag[active]))
        self._free = mesh.free_dofs
        self._nv = mesh.num_vertices

    @property
    def num_levels(self):
        return len(self._levels)

    @property
    def dim(self):
        return len(self._free)

    def add_level(self, mesh, relation, diag):
        """Append the refinement ``relation`` leading to ``mesh``."""
        if relation.num_coarse_vertices != self._nv:
            raise InputError("relation does not continue the hierarchy")
        nc = relation.num_coarse_vertices
        if mesh.num_vertices == nc:
            # nothing new; keep the current finest level
            return
        e = mesh.edges
        touches = (e[:, 0] >= nc) | (e[:, 1] >= nc)
        active = np.unique(np.concatenate([np.arange(nc, mesh.num_vertices), e[touches].ravel()]))
        self._add(mesh, nc, np.asarray(relation.new_vertex_edges), active, diag)

    def apply(self, r):
        levels = self._levels
        res = np.zeros(self._nv)
        res[self._free] = r
        scaled = [None] * len(levels)
        for j in range(len(levels) - 1, -1, -1):
            start, stop, pa, pb, active, inv_diag = levels[j]
            scaled[j] = res[active] * inv_diag
            if j:
                half = 0.5 * res[start:stop]
                np.add.at(res, pa, half)
                np.add.at(res, pb, half)
        x = np.zeros(self._nv)
        for j, (start, stop, pa, pb, active, _) in enumerate(levels):
            if j:
                x[start:stop] = 0.5 * (x[pa] + x[pb])
            x[active] += scaled[j]
        return x[self._free]

    __call__ = apply

    def as_linear_operator(self):
        n = self.dim
        return spla.LinearOperator((n, n), matvec=self.apply, dtype=float)


class IdentityPreconditioner:
    def __call__(self, r):
        return np.array(r, dtype=float, copy=True)


# ----------------------------------------------------------------------
# PCG


@dataclass(frozen=True)
class PCGState:
    """Iterate and recurrences of PCG.

    ``increment_norm`` is the M-norm of the last update, ``energy_change``
    the (non-positive) change of the quadratic energy in the last update.
    """

    x: np.ndarray
    r: np.ndarray
    z: np.ndarray
    p: np.ndarray
    rz: float
    k: int = 0
    increment_norm: float = 0.0
    energy_change: float = 0.0


def _apply(precond, r):
    return precond(r) if callable(precond) else precond @ r


def pcg_start(matrix, precond, rhs, x0=None):
    """Initial PCG state for the starting guess ``x0`` (default zero)."""
    n = matrix.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - matrix @ x
    z = _apply(precond, r)
    rz = float(r @ z)
    if rz < 0:
        raise NumericalError("preconditioner is not positive definite", rz=rz)
    return PCGState(x=x, r=r, z=z, p=z.copy(), rz=rz)


def pcg_step(matrix, precond, rhs, state):
    """One PCG step: one product with ``matrix``, one with ``precond``, O(N) vector work."""
    if state.rz == 0.0:
        # exact solution reached; the iteration is stationary
        return replace(state, k=state.k + 1, increment_norm=0.0, energy_change=0.0)
    p = state.p
    Mp = matrix @ p
    pMp = float(p @ Mp)
    if not pMp > 0:
        raise NumericalError("non-positive curvature in PCG", pMp=pMp, rz=state.rz, k=state.k)
    alpha = state.rz / pMp
    x = state.x + alpha * p
    r = state.r - alpha * Mp
    z = _apply(precond, r)
    rz = float(r @ z)
    if rz < 0:
        raise NumericalError("preconditioner is not positive definite", rz=rz, k=state.k)
    beta = rz / state.rz
    p_new = z + beta * p
    de = -alpha * float(p @ state.r) + 0.5 * alpha * alpha * pMp
    return PCGState(x=x, r=r, z=z, p=p_new, rz=rz, k=state.k + 1,
                    increment_norm=abs(alpha) * np.sqrt(pMp), energy_change=de)


def condition_number(matrix, precond, method="dense", maxiter=300, rng=0):
    """Extreme eigenvalues ``(lmin, lmax, lmax / lmin)`` of ``P^{-1} M``.

    ``dense`` forms ``P^{-1}`` column by column and solves a symmetric
    eigenproblem; ``lanczos`` uses the Ritz values of a PCG run.
    """
    n = matrix.shape[0]
    if n == 0:
        return 1.0, 1.0, 1.0
    if method == "dense":
        B = np.column_stack([_apply(precond, e) for e in np.eye(n)])
        B = 0.5 * (B + B.T)
        Lc = np.linalg.cholesky(B)
        M = matrix.toarray() if hasattr(matrix, "toarray") else np.asarray(matrix)
        ev = sla.eigvalsh(Lc.T @ M @ Lc)
    elif method == "lanczos":
        b = np.random.default_rng(rng).standard_normal(n)
        st = pcg_start(matrix, precond, b)
        alphas, betas = [], []
        for _ in range(min(maxiter, n)):
            if st.rz <= 1e-28 * abs(b @ b):
                break
            Mp = matrix @ st.p
            alpha = st.rz / float(st.p @ Mp)
            nxt = pcg_step(matrix, precond, b, st)
            alphas.append(alpha)
            betas.append(nxt.rz / st.rz)
            st = nxt
        m = len(alphas)
        diag = np.empty(m)
        off = np.empty(max(m - 1, 0))
        for i in range(m):
            diag[i] = 1.0 / alphas[i] + (betas[i - 1] / alphas[i - 1] if i else 0.0)
            if i < m - 1:
                off[i] = np.sqrt(betas[i]) / alphas[i]
        ev = sla.eigvalsh_tridiagonal(diag, off)
    else:
        raise InputError(f"unknown method {method!r}")
    return float(ev[0]), float(ev[-1]), float(ev[-1] / ev[0])


# ----------------------------------------------------------------------
# Zarantonello


def zarantonello_q(spec):
    """Norm contraction constant ``(1 - alpha^2 / L^2)^(1/2)``."""
    return float(np.sqrt(1.0 - (spec.alpha / spec.lipschitz_L) ** 2))


def zarantonello_step(mesh, spec, v, solve=None):
    """One Zarantonello step ``Phi(v) = v - (alpha / L^2) K^{-1} (A v - F)``.

    ``solve`` optionally supplies a factorized Laplace solve on the free dofs.
    """
    check_function(mesh, v)
    if mesh.num_free_dofs == 0:
        return DiscreteFunction.zero(mesh)
    if solve is None:
        solve = spla.factorized(assemble_stiffness(mesh).tocsc())
    r = apply_nonlinear(mesh, spec, v)
    d = solve(r)
    if not np.all(np.isfinite(d)):
        raise NumericalError("Laplace solve failed in Zarantonello step")
    c = v.coefficients.copy()
    c[mesh.free_dofs] -= spec.alpha / spec.lipschitz_L ** 2 * d
    return DiscreteFunction(mesh.generation_id, c)


def dl(spec, mesh, w, v, mode="norm"):
    """Solver distance: ``|E(v) - E(w)|^(1/2)`` (energy) or ``|||w - v|||`` (norm)."""
    check_function(mesh, w)
    check_function(mesh, v)
    if mode == "energy":
        return float(np.sqrt(abs(energy(mesh, spec, v) - energy(mesh, spec, w))))
    if mode == "norm":
        return energy_norm(mesh, spec, w - v)
    raise InputError(f"unknown dl mode {mode!r}")


# ----------------------------------------------------------------------
# level-wise solver drivers used by the adaptive loop


class PCGSolver:
    """PCG for the linear problem, continuing one preconditioner hierarchy
    across the adaptive meshes."""

    name = "pcg"

    def __init__(self, spec, mode="norm", preconditioner="multilevel"):
        if not spec.is_linear:
            raise InputError("PCG needs a linear problem")
        if mode not in MODES:
            raise InputError(f"unknown mode {mode!r}")
        self.spec = spec
        self.mode = mode
        self.preconditioner = preconditioner
        self.precond = None

    def start_level(self, mesh, relation, u0):
        spec = self.spec
        self.mesh = mesh
        self.matrix, self.rhs = assemble_linear(mesh, spec)
        if self.preconditioner == "identity":
            self.precond = IdentityPreconditioner()
        elif self.precond is None or relation is None:
            self.precond = MultilevelPreconditioner(mesh, stiffness_diagonal(mesh, spec))
        else:
            self.precond.add_level(mesh, relation, stiffness_diagonal(mesh, spec))
        self.state = pcg_start(self.matrix, self.precond, self.rhs, u0.free(mesh))

    @property
    def iterate(self):
        return DiscreteFunction.from_free(self.mesh, self.state.x)

    def step(self):
        """Advance one PCG step; return ``(iterate, dl(new, old))``."""
        self.state = pcg_step(self.matrix, self.precond, self.rhs, self.state)
        if self.mode == "norm":
            d = self.state.increment_norm
        else:
            d = np.sqrt(abs(self.state.energy_change))
        return self.iterate, float(d)


class ZarantonelloSolver:
    """Zarantonello iteration with a factorized Laplace matrix per mesh."""

    name = "zarantonello"

    def __init__(self, spec, mode="norm"):
        if mode not in MODES:
            raise InputError(f"unknown mode {mode!r}")
        self.spec = spec
        self.mode = mode

    def start_level(self, mesh, relation, u0):
        self.mesh = mesh
        self.laplace = assemble_stiffness(mesh)
        self._solve = spla.factorized(self.laplace.tocsc()) if mesh.num_free_dofs else None
        self.u = u0

    @property
    def iterate(self):
        return self.u

    def step(self):
        old = self.u
        new = zarantonello_step(self.mesh, self.spec, old, solve=self._solve)
        if self.mode == "norm":
            diff = (new.coefficients - old.coefficients)[self.mesh.free_dofs]
            d = np.sqrt(max(diff @ (self.laplace @ diff), 0.0)) if diff.size else 0.0
        else:
            d = np.sqrt(abs(energy(self.mesh, self.spec, new) - energy(self.mesh, self.spec, old)))
        self.u = new
        return new, float(d)


def make_solver(spec, name=None, mode="norm"):
    """Default solver for the problem kind: PCG if linear, Zarantonello otherwise."""
    if name is None:
        name = "pcg" if spec.is_linear else "zarantonello"
    if name == "pcg":
        return PCGSolver(spec, mode=mode)
    if name == "zarantonello":
        return ZarantonelloSolver(spec, mode=mode)
    raise InputError(f"unknown solver {name!r}")
