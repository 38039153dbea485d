"""
Weighted-residual error indicators.

For an element ``T`` and a discrete function ``v`` with flux ``q(v)``
(``A grad v`` or ``a(|grad v|^2) grad v``)::

    eta(T, v)^2 = |T| * ||f + div q(v)||^2_{L2(T)}
                + |T|^(1/2) * ||[q(v) . n]||^2_{L2(dT interior)}

Each interior edge contributes its jump to both adjacent elements.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .fem import (_eval_A, _eval_f, check_function, energy_norm, gradients,
                  prolongate, quadrature_points)

__all__ = [
    "IndicatorField",
    "indicators",
    "check_stability",
    "check_reduction",
    "two_phase_calibration",
    "Q_RED_CONSTANT",
]

#: Reduction factor of eta (not eta^2) under bisection for constant coefficients.
Q_RED_CONSTANT = 2.0 ** -0.25

_GAUSS_S, _GAUSS_W = np.polynomial.legendre.leggauss(3)
_GAUSS_S = 0.5 * (_GAUSS_S + 1.0)
_GAUSS_W = 0.5 * _GAUSS_W


@dataclass(frozen=True, eq=False)
class IndicatorField:
    """Squared refinement indicators ``eta(T, v)^2`` on one mesh."""

    mesh_generation: int
    eta_sq: np.ndarray

    def __len__(self):
        return len(self.eta_sq)

    @property
    def total_sq(self):
        return float(self.eta_sq.sum())

    @property
    def total(self):
        """``eta(v) = (sum_T eta(T, v)^2)^(1/2)``."""
        return float(np.sqrt(self.eta_sq.sum()))

    def subset(self, ids):
        """``eta(U, v)`` for the element ids ``U``."""
        ids = np.asarray(ids, dtype=np.int64)
        return float(np.sqrt(self.eta_sq[ids].sum())) if ids.size else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["element_id", "eta_sq"])
            for i, e in enumerate(self.eta_sq.tolist()):
                w.writerow([i, repr(e)])


def _central_diff(func, x, h):
    """Spatial gradient of ``func`` at points x (n, 2); step h (n,); result (n, 2, ...)."""
    out = []
    for d in range(2):
        e = np.zeros_like(x)
        e[:, d] = h
        diff = np.asarray(func(x + e)) - np.asarray(func(x - e))
        out.append(diff / (2.0 * h).reshape((-1,) + (1,) * (diff.ndim - 1)))
    return np.stack(out, axis=1)


def _div_flux(mesh, spec, grads, xq):
    """div q(v) at the quadrature points, (ne, 3)."""
    ne = mesh.num_elements
    if spec.constant_coefficients:
        return np.zeros((ne, 3))
    x = xq.reshape(-1, 2)
    g = np.repeat(grads, 3, axis=0)
    h = np.repeat(1e-6 * mesh.diameters, 3)
    if spec.is_linear:
        if spec.divA is not None:
            divA = np.asarray(spec.divA(x), dtype=float)
        else:
            dA = _central_diff(lambda y: _eval_A(spec, y), x, h)   # dA[n, d, i, j] = d_d A_ij
            divA = np.einsum("nddj->nj", dA)
        val = np.einsum("nj,nj->n", divA, g)
    else:
        t = np.einsum("ni,ni->n", g, g)
        if spec.grad_x_a is not None:
            ga = np.asarray(spec.grad_x_a(x, t), dtype=float)
        else:
            ga = _central_diff(lambda y: np.asarray(spec.a(y, t), dtype=float), x, h)
        val = np.einsum("nj,nj->n", ga, g)
    return val.reshape(ne, 3)


def _volume_term(mesh, spec, grads):
    if spec.constant_coefficients and not callable(spec.f):
        return mesh.areas ** 2 * float(spec.f) ** 2
    xq = quadrature_points(mesh)
    res = _eval_f(spec, xq) + _div_flux(mesh, spec, grads, xq)
    return mesh.areas * (mesh.areas / 3.0) * np.sum(res ** 2, axis=1)


def _edge_flux(mesh, spec, grads, elem, x):
    """Flux of element ``elem`` evaluated at edge points ``x`` (m, 2)."""
    g = grads[elem]
    if spec.is_linear:
        if spec.A is None:
            return g
        return np.einsum("nij,nj->ni", _eval_A(spec, x), g)
    t = np.einsum("ni,ni->n", g, g)
    if spec.x_dependent:
        a = spec.a(x, t)
    else:
        a = spec.a(None, t)
    return np.asarray(a, dtype=float)[:, None] * g


def _jump_term(mesh, spec, grads):
    ed2el = mesh.edge_elements
    inner = np.flatnonzero(ed2el[:, 1] >= 0)
    out = np.zeros(mesh.num_elements)
    if inner.size == 0:
        return out
    tp, tm = ed2el[inner, 0], ed2el[inner, 1]
    e = mesh.edges[inner]
    x0, x1 = mesh.vertices[e[:, 0]], mesh.vertices[e[:, 1]]
    d = x1 - x0
    length = np.hypot(d[:, 0], d[:, 1])
    n = np.column_stack([d[:, 1], -d[:, 0]]) / length[:, None]
    if spec.constant_coefficients:
        jump = np.einsum("ni,ni->n", _edge_flux(mesh, spec, grads, tp, x0)
                         - _edge_flux(mesh, spec, grads, tm, x0), n)
        jsq = jump ** 2 * length
    else:
        jsq = np.zeros(len(inner))
        for s, w in zip(_GAUSS_S, _GAUSS_W):
            x = x0 + s * d
            jump = np.einsum("ni,ni->n", _edge_flux(mesh, spec, grads, tp, x)
                             - _edge_flux(mesh, spec, grads, tm, x), n)
            jsq += w * jump ** 2
        jsq *= length
    sqrt_area = np.sqrt(mesh.areas)
    out += np.bincount(tp, weights=sqrt_area[tp] * jsq, minlength=mesh.num_elements)
    out += np.bincount(tm, weights=sqrt_area[tm] * jsq, minlength=mesh.num_elements)
    return out


def indicators(mesh, spec, v):
    """Squared weighted-residual indicators of ``v`` on every element of ``mesh``."""
    check_function(mesh, v)
    grads = gradients(mesh, v)
    eta_sq = _volume_term(mesh, spec, grads) + _jump_term(mesh, spec, grads)
    return IndicatorField(mesh.generation_id, eta_sq)


# ----------------------------------------------------------------------
# instrumentation for stability and reduction


def check_stability(spec, coarse, fine, relation, v_fine, w_coarse, subset, c_stab=1.0):
    """Both sides of the stability estimate on unchanged elements.

    Returns ``(|eta_h(U, v_h) - eta_H(U, w_H)|, c_stab * |||v_h - w_H|||)``
    where ``subset`` lists coarse ids of elements kept by the refinement.
    """
    if relation.coarse_generation != coarse.generation_id or \
            relation.fine_generation != fine.generation_id:
        raise InputError("relation does not connect the given meshes")
    subset = np.asarray(subset, dtype=np.int64).ravel()
    fine_ids = relation.coarse_to_fine_unchanged[subset] if subset.size else subset
    if np.any(fine_ids < 0):
        raise InputError("subset contains refined elements")
    eta_h = indicators(fine, spec, v_fine).subset(fine_ids)
    eta_H = indicators(coarse, spec, w_coarse).subset(subset)
    diff = v_fine - prolongate(relation, w_coarse)
    return abs(eta_h - eta_H), c_stab * energy_norm(fine, spec, diff)


def check_reduction(spec, coarse, fine, relation, v_coarse, q_red=Q_RED_CONSTANT):
    """Both sides of the reduction estimate on the refined zone.

    Returns ``(eta_h(T_h minus T_H, v_H), q_red * eta_H(T_H minus T_h, v_H))``.
    """
    eta_H = indicators(coarse, spec, v_coarse)
    eta_h = indicators(fine, spec, prolongate(relation, v_coarse))
    lhs = eta_h.subset(np.flatnonzero(~relation.unchanged))
    rhs = q_red * eta_H.subset(np.flatnonzero(relation.refined))
    return lhs, rhs


def two_phase_calibration(trial, n=200, slack=1.05, rng=None):
    """Calibrate a constant as the maximum ratio over ``n`` trials, then test it
    on ``n`` fresh trials.

    ``trial(rng)`` returns ``(lhs, base)``; ratios are ``lhs / base``.
    Returns ``(constant, fresh_max, passed)`` with ``passed`` meaning every
    fresh ratio stays below ``slack * constant``.
    """
    rng = np.random.default_rng(rng)

    def ratios():
        out = []
        for _ in range(n):
            lhs, base = trial(rng)
            if base > 0:
                out.append(lhs / base)
            elif lhs > 0:
                out.append(np.inf)
        return np.array(out) if out else np.zeros(1)

    constant = float(ratios().max())
    fresh = float(ratios().max())
    return constant, fresh, bool(fresh <= slack * constant)
