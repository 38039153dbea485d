"""
Doerfler marking and the adaptive solve-estimate-mark-refine loop.

The loop interleaves single solver steps with estimation: on each mesh
``T_l`` it performs solver steps ``u_l^k = Phi_l(u_l^{k-1})`` until

    dl(u_l^k, u_l^{k-1}) <= lambda_ctr * eta_l(u_l^k),

then marks by the Doerfler criterion, refines by NVB and continues on the
new mesh from the prolongated iterate (nested iteration).
"""
import csv
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import InputError, NumericalError
from .estimator import IndicatorField, indicators
from .fem import DiscreteFunction, prolongate
from .mesh import Mesh, make_initial_mesh, refine_nvb
from .solvers import MODES, make_solver

__all__ = [
    "AdaptiveConfig",
    "StepEntry",
    "LevelSummary",
    "LevelHistory",
    "LoopRecord",
    "doerfler_mark",
    "run_adaptive",
    "estimate_rate",
    "quasi_error_proxy",
    "fit_linear_convergence",
    "check_full_linear_convergence",
    "CSV_HEADER",
]

CSV_HEADER = ["ell", "k", "total_step", "num_elements", "num_free_dofs", "eta",
              "dl_increment", "cum_elements", "wall_time_ms"]


def doerfler_mark(eta_sq, theta):
    """Minimal set ``M`` with ``theta^2 * sum(eta^2) <= sum_M eta^2``.

    Elements are taken by decreasing indicator (ties by element id), which
    yields exactly minimal cardinality.  Returns a sorted id array.
    """
    if isinstance(eta_sq, IndicatorField):
        eta_sq = eta_sq.eta_sq
    eta_sq = np.asarray(eta_sq, dtype=float)
    if not 0 < theta <= 1:
        raise InputError("theta must lie in (0, 1]")
    total = eta_sq.sum()
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    if theta == 1:
        return np.flatnonzero(eta_sq > 0)
    order = np.lexsort((np.arange(len(eta_sq)), -eta_sq))
    cs = np.cumsum(eta_sq[order])
    n = int(np.searchsorted(cs, theta ** 2 * total, side="left"))
    return np.sort(order[: min(n, len(eta_sq) - 1) + 1])


@dataclass
class AdaptiveConfig:
    """Parameters of the adaptive loop.

    ``max_total_steps`` and ``max_dofs`` are termination guards; a refined
    mesh with more than ``max_dofs`` free dofs ends the run before it is
    solved on.
    """

    theta: float = 0.5
    lambda_ctr: float = 1e-2
    C_mark: float = 1.0
    mode: str = "norm"
    max_total_steps: int = 10000
    max_dofs: int = 10 ** 6
    max_levels: Optional[int] = None
    max_level_iterations: int = 500
    record_timing: bool = True
    keep_history: bool = False

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise InputError("theta must lie in (0, 1]")
        if not self.lambda_ctr > 0:
            raise InputError("lambda_ctr must be positive")
        if self.C_mark < 1:
            raise InputError("C_mark must be >= 1")
        if self.mode not in MODES:
            raise InputError(f"mode must be one of {MODES}")
        if self.max_total_steps < 1 or self.max_dofs < 1:
            raise InputError("budgets must be positive")


@dataclass
class StepEntry:
    ell: int
    k: int
    total_step: int
    num_elements: int
    num_free_dofs: int
    eta: float
    dl_increment: float
    cum_elements: int
    wall_time_ms: float

    def row(self):
        return [self.ell, self.k, self.total_step, self.num_elements, self.num_free_dofs,
                repr(float(self.eta)), repr(float(self.dl_increment)), self.cum_elements,
                repr(float(self.wall_time_ms))]


@dataclass
class LevelSummary:
    """Per-mesh data, filled in when the stopping criterion is met."""

    ell: int
    num_elements: int
    num_free_dofs: int
    k_final: int
    eta: float
    eta_sq_total: float = 0.0
    eta_sq_marked: float = 0.0
    num_marked: int = 0
    num_refined: int = 0
    num_children_mesh: int = 0
    splitting_ok: bool = True


@dataclass
class LevelHistory:
    mesh: Mesh
    relation_in: object
    iterates: List[DiscreteFunction]
    eta: Optional[IndicatorField] = None
    marked: Optional[np.ndarray] = None


@dataclass
class LoopRecord:
    """Trace of one adaptive run: one entry per solver step."""

    entries: List[StepEntry] = field(default_factory=list)
    levels: List[LevelSummary] = field(default_factory=list)
    status: str = "running"
    message: str = ""
    history: List[LevelHistory] = field(default_factory=list)
    initial_elements: int = 0

    def final_entries(self):
        """Entries ``(l, k_final(l))`` of all completed levels."""
        last = {lv.ell: lv.k_final for lv in self.levels}
        return [e for e in self.entries if last.get(e.ell) == e.k]

    def iterations_per_level(self):
        return [(lv.ell, lv.num_elements, lv.k_final) for lv in self.levels]

    @property
    def mesh_closure_ratios(self):
        """``(#T_l - #T_0) / sum_{j<l} #M_j`` for every refined level ``l >= 1``."""
        out = []
        marked = 0
        for prev, cur in zip(self.levels, self.levels[1:]):
            marked += prev.num_marked
            if marked:
                out.append((cur.num_elements - self.initial_elements) / marked)
        return out

    @property
    def C_mesh(self):
        r = self.mesh_closure_ratios
        return max(r) if r else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for e in self.entries:
                w.writerow(e.row())

    @classmethod
    def read_csv(cls, path):
        rec = cls()
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if rows[0] != CSV_HEADER:
            raise InputError("not a loop-record CSV")
        for r in rows[1:]:
            rec.entries.append(StepEntry(int(r[0]), int(r[1]), int(r[2]), int(r[3]), int(r[4]),
                                         float(r[5]), float(r[6]), int(r[7]), float(r[8])))
        # reconstruct final steps per level: the last entry of each level
        for i, e in enumerate(rec.entries):
            nxt = rec.entries[i + 1] if i + 1 < len(rec.entries) else None
            if nxt is None or nxt.ell != e.ell:
                rec.levels.append(LevelSummary(e.ell, e.num_elements, e.num_free_dofs, e.k, e.eta))
        return rec


def run_adaptive(spec, geometry, config=None, solver=None):
    """Run the adaptive algorithm and return its :class:`LoopRecord`.

    ``geometry`` is a geometry name or an initial :class:`Mesh`; ``solver``
    is ``"pcg"``, ``"zarantonello"``, a solver object, or ``None`` for the
    default of the problem kind.  Solver breakdowns end the run with
    ``status == "numerical_error"`` and a partial record.
    """
    config = config or AdaptiveConfig()
    mesh = make_initial_mesh(geometry) if isinstance(geometry, str) else geometry
    if solver is None or isinstance(solver, str):
        solver = make_solver(spec, solver, mode=config.mode)
    elif getattr(solver, "mode", config.mode) != config.mode:
        raise InputError("solver mode does not match config.mode")

    record = LoopRecord(initial_elements=mesh.num_elements)
    t0 = time.perf_counter()
    u = DiscreteFunction.zero(mesh)
    relation = None
    ell, k, total, cum = 0, 0, 0, 0
    hist = None
    try:
        solver.start_level(mesh, None, u)
        while True:
            if config.keep_history and hist is None:
                hist = LevelHistory(mesh, relation, [u])
                record.history.append(hist)
            k += 1
            total += 1
            u, d = solver.step()
            eta_field = indicators(mesh, spec, u)
            eta = eta_field.total
            cum += mesh.num_elements
            wall = (time.perf_counter() - t0) * 1e3 if config.record_timing else 0.0
            record.entries.append(StepEntry(ell, k, total, mesh.num_elements, mesh.num_free_dofs,
                                            eta, d, cum, wall))
            if hist is not None:
                hist.iterates.append(u)
            if not math.isfinite(eta) or not math.isfinite(d):
                raise NumericalError("non-finite estimator or solver increment")

            if d <= config.lambda_ctr * eta:
                summary = LevelSummary(ell, mesh.num_elements, mesh.num_free_dofs, k, eta,
                                       eta_sq_total=eta_field.total_sq)
                record.levels.append(summary)
                if hist is not None:
                    hist.eta = eta_field
                if eta == 0:
                    record.status = "exact"
                    record.message = "estimator vanished: discrete solution is exact"
                    break
                marked = doerfler_mark(eta_field, config.theta)
                summary.num_marked = len(marked)
                summary.eta_sq_marked = float(eta_field.eta_sq[marked].sum())
                if hist is not None:
                    hist.marked = marked
                if config.max_levels is not None and ell + 1 >= config.max_levels:
                    record.status = "max_levels"
                    break
                fine, relation = refine_nvb(mesh, marked)
                lo, n_fine, hi = relation.splitting_bounds(4)
                summary.num_refined = int(relation.refined.sum())
                summary.num_children_mesh = n_fine
                summary.splitting_ok = lo <= n_fine <= hi
                if fine.num_free_dofs > config.max_dofs:
                    record.status = "max_dofs"
                    break
                u = prolongate(relation, u)
                mesh = fine
                ell, k = ell + 1, 0
                hist = None
                solver.start_level(mesh, relation, u)
            elif k >= config.max_level_iterations:
                record.status = "iteration_cap"
                record.message = (f"stopping criterion not met after {k} steps on level {ell}")
                break
            if total >= config.max_total_steps:
                record.status = "max_total_steps"
                break
    except NumericalError as exc:
        record.status = "numerical_error"
        record.message = str(exc)
    return record


# ----------------------------------------------------------------------
# post-processing


def estimate_rate(record, x_axis="dofs", tail_fraction=0.5, min_levels=4):
    """Least-squares slope of ``log eta_l(u_l^final)`` against ``log x``
    over the last ``tail_fraction`` of the completed levels.

    ``x_axis`` is ``"dofs"`` (free dofs), ``"elements"`` or ``"cum_cost"``
    (cumulative element count over all solver steps).
    """
    entries = [e for e in record.final_entries() if e.num_free_dofs > 0 and e.eta > 0]
    n_tail = int(math.ceil(tail_fraction * len(entries)))
    if n_tail < min_levels:
        raise InputError(f"need at least {min_levels} levels in the tail window, got {n_tail}")
    tail = entries[-n_tail:]
    if x_axis == "dofs":
        x = [e.num_free_dofs for e in tail]
    elif x_axis == "elements":
        x = [e.num_elements for e in tail]
    elif x_axis == "cum_cost":
        x = [e.cum_elements for e in tail]
    else:
        raise InputError(f"unknown x_axis {x_axis!r}")
    slope, _ = np.polyfit(np.log(x), np.log([e.eta for e in tail]), 1)
    return float(slope)


def quasi_error_proxy(record):
    """``eta_l(u_l^k) + dl(u_l^k, u_l^{k-1})`` for every recorded solver step."""
    return np.array([e.eta + e.dl_increment for e in record.entries])


def fit_linear_convergence(values):
    """Fit ``values[n+m] <= C q^m values[n]``.

    ``q`` is the geometric decay rate from a least-squares fit of
    ``log values`` against the step index; ``C >= 1`` is then the smallest
    constant making the bound hold for all recorded pairs.
    """
    v = np.asarray(values, dtype=float)
    if len(v) < 10:
        raise InputError("need at least 10 steps")
    if np.any(v <= 0):
        raise InputError("values must be positive")
    n = np.arange(len(v))
    logv = np.log(v)
    slope = np.polyfit(n, logv, 1)[0]
    q = float(min(np.exp(slope), 1.0))
    # C = max_{n < n'} v[n'] / (q^(n'-n) v[n]) = max_{n'} (g[n'] - min_{n<=n'} g[n]) in logs
    g = logv - n * np.log(q)
    running_min = np.minimum.accumulate(g)
    C = float(max(1.0, np.exp(np.max(g - running_min))))
    return C, q


def check_full_linear_convergence(record):
    """``(C_lin_hat, q_lin_hat)`` of the per-step quasi-error proxy."""
    return fit_linear_convergence(quasi_error_proxy(record))
