"""Certificate checkers and desk-scale verification oracles.

Condition checks are sampled, never symbolic: monotone-path conditions are
verified on finitely many relaxed points, uniform regularity through the
bounded-segment proxy, and global statements through an exhaustive grid
oracle plus deterministic multistart local search on eliminated low-dimension
models.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse
import scipy.sparse.csgraph
import scipy.spatial
from scipy.stats import qmc

from relaxcert.compose import CertifiedProblem
from relaxcert.core import (
    FEAS_TOL,
    MONOTONE_SLACK,
    CertificateViolationError,
    PathTrace,
    PreconditionError,
    check_piecewise_linear_family,
    norm_m,
)
from relaxcert.distflow import (
    OperatingPoint,
    OpfCost,
    RadialNetwork,
    pack_point,
    tree_check,
)

EQUAL_COST_TOL = 1e-9     # plateau detection and global-cost ties
ORACLE_DIM_LIMIT = 4      # ambient real dimension guard for the grid scan
ORACLE_POINT_LIMIT = 2 * 10**7


class DimensionGuardError(ValueError):
    """The eliminated model has too many degrees of freedom to scan."""


class InfeasibleAtResolutionError(RuntimeError):
    """No grid point passed the feasibility filter."""


# --- condition checks --------------------------------------------------------

@dataclass(frozen=True)
class ConditionResult:
    """Pass/fail verdict with the worst margin and failure witnesses."""

    name: str
    passed: bool
    margin: float
    witnesses: tuple[str, ...] = ()
    note: str = ""

    def as_dict(self) -> dict[str, Any]:
        return {"passed": self.passed, "margin": self.margin,
                "witnesses": list(self.witnesses), "note": self.note}


@dataclass(frozen=True)
class PathConditionChecks:
    """Joint outcome of the monotone-path checks on sampled points."""

    c1: ConditionResult
    c3: ConditionResult
    traces: tuple[PathTrace, ...]


def check_c1_c3(
    problem: CertifiedProblem,
    sample_points: Sequence[np.ndarray],
    tol: float = FEAS_TOL,
) -> PathConditionChecks:
    """Verify the monotone-path conditions on each sampled relaxed point.

    Every point must lie in the relaxed set but outside the feasible one.
    For each, the factory path is checked for anchoring, relaxed membership
    of all samples, non-increasing cost and Lyapunov value, and a feasible
    endpoint; the strict variant additionally needs an end-to-end cost drop.
    Path factory exceptions propagate with the point as witness.
    """
    handle = problem.handle
    witnesses_c3: list[str] = []
    witnesses_c1: list[str] = []
    margin_c3 = np.inf
    margin_c1 = np.inf
    traces: list[PathTrace] = []

    for idx, x in enumerate(sample_points):
        x = np.asarray(x, dtype=complex)
        rr = handle.residual_relaxed(x)
        rf = handle.residual_feasible(x)
        if rr > tol or rf <= tol:
            raise PreconditionError(
                f"sample {idx} is not in the relaxed-minus-feasible region "
                f"(relaxed residual {rr:.3g}, feasible residual {rf:.3g})")
        try:
            trace = problem.path_factory(x)
        except Exception as exc:
            raise CertificateViolationError(
                f"path factory failed on sample {idx}: {exc}") from exc
        traces.append(trace)

        point_witnesses: list[str] = []
        anchor_gap = float(np.max(np.abs(trace.start - x), initial=0.0))
        scale_x = 1.0 + float(np.max(np.abs(x), initial=0.0))
        if anchor_gap > 1e-9 * scale_x:
            point_witnesses.append(
                f"sample {idx}: path starts {anchor_gap:.3g} away from the point")

        worst_rr = max(handle.residual_relaxed(p) for p in trace.points)
        margin_c3 = min(margin_c3, tol - worst_rr)
        if worst_rr > tol:
            point_witnesses.append(
                f"sample {idx}: a path sample leaves the relaxed set "
                f"(residual {worst_rr:.3g})")

        end_rf = handle.residual_feasible(trace.end)
        margin_c3 = min(margin_c3, tol - end_rf)
        if end_rf > tol:
            point_witnesses.append(
                f"sample {idx}: endpoint infeasible (residual {end_rf:.3g})")

        f_vals = np.array([handle.cost(p) for p in trace.points])
        v_vals = np.array([problem.lyapunov(p) for p in trace.points])
        f_slack = MONOTONE_SLACK * (1.0 + np.abs(f_vals[:-1]))
        v_slack = MONOTONE_SLACK * (1.0 + np.abs(v_vals[:-1]))
        f_rise = float(np.max(np.diff(f_vals) - f_slack, initial=-np.inf))
        v_rise = float(np.max(np.diff(v_vals) - v_slack, initial=-np.inf))
        margin_c3 = min(margin_c3, -f_rise, -v_rise)
        if f_rise > 0:
            point_witnesses.append(f"sample {idx}: cost increases along the path")
        if v_rise > 0:
            point_witnesses.append(
                f"sample {idx}: Lyapunov value increases along the path")

        witnesses_c3.extend(point_witnesses)
        witnesses_c1.extend(point_witnesses)

        strict_needed = MONOTONE_SLACK * (1.0 + abs(f_vals[0]))
        drop_margin = float((f_vals[0] - f_vals[-1]) - strict_needed)
        margin_c1 = min(margin_c1, drop_margin)
        if drop_margin < 0:
            witnesses_c1.append(
                f"sample {idx}: cost did not strictly decrease "
                f"(drop {f_vals[0] - f_vals[-1]:.3g})")

    if not sample_points:
        note = "no sample points: vacuously true"
        c3 = ConditionResult("c3", True, np.inf, note=note)
        c1 = ConditionResult("c1", True, np.inf, note=note)
        return PathConditionChecks(c1=c1, c3=c3, traces=())

    c3 = ConditionResult("c3", not witnesses_c3, float(margin_c3),
                         tuple(witnesses_c3))
    c1 = ConditionResult("c1", not witnesses_c1, float(min(margin_c1, margin_c3)),
                         tuple(witnesses_c1))
    return PathConditionChecks(c1=c1, c3=c3, traces=tuple(traces))


def check_c2_proxy(problem: CertifiedProblem,
                   traces: Sequence[PathTrace]) -> ConditionResult:
    """Uniform-regularity proxy: all paths piecewise linear with a common
    segment bound and a common bounding box."""
    report = check_piecewise_linear_family(traces, problem.segment_bound)
    return ConditionResult("c2_proxy", report.passed,
                           margin=-report.worst_deviation,
                           witnesses=() if report.passed else (report.note,),
                           note=report.note if report.passed else "")


def trace_cprime_margin(problem: CertifiedProblem, trace: PathTrace) -> float:
    """Sampled proportional-decrease margin of one trace (inf if constant)."""
    f_vals = np.array([problem.handle.cost(p) for p in trace.points])
    K = len(f_vals)
    margin = np.inf
    for i in range(K):
        for j in range(i + 1, K):
            dist = norm_m(trace.points[i] - trace.points[j])
            if dist > 0:
                margin = min(margin, (f_vals[i] - f_vals[j]) / dist)
    return float(margin)


@dataclass(frozen=True)
class ExactnessResult:
    """Trichotomy verdict with supporting evidence."""

    verdict: str  # "strong" | "weak" | "unknown"
    note: str = ""
    witness: str = ""


def check_exactness(
    problem: CertifiedProblem,
    relaxation_optimum: np.ndarray,
    optimality_residual: float,
    unique_certificate: bool = False,
    tol: float = FEAS_TOL,
) -> ExactnessResult:
    """Judge relaxation exactness from one relaxation optimum.

    A feasible optimum confirms weak exactness (strong only with a
    uniqueness certificate, since strong exactness quantifies over every
    optimum).  An infeasible optimum whose restoration path preserves cost
    also confirms weak exactness; a strictly decreasing restoration refutes
    the claimed optimality instead.
    """
    if optimality_residual > tol:
        raise PreconditionError(
            f"point is not relaxation-optimal (residual {optimality_residual:.3g})")
    x = np.asarray(relaxation_optimum, dtype=complex)
    handle = problem.handle
    if handle.residual_feasible(x) <= tol:
        if unique_certificate:
            return ExactnessResult(
                "strong", note="feasible optimum with uniqueness certificate")
        return ExactnessResult(
            "weak", note="optimum is feasible; strong exactness needs a "
                         "uniqueness certificate")

    trace = problem.path_factory(x)
    f0 = handle.cost(trace.start)
    f1 = handle.cost(trace.end)
    if abs(f1 - f0) <= 1e-8 * (1.0 + abs(f0)):
        return ExactnessResult(
            "weak", note="restoration reaches a feasible point at equal cost")
    if f1 < f0:
        return ExactnessResult(
            "unknown",
            note="restoration strictly decreased the cost; the supplied point "
                 "cannot be relaxation-optimal",
            witness=f"feasible point with cost {f1:.12g} < {f0:.12g}")
    return ExactnessResult("unknown",
                           note="restoration increased the cost (broken factory)")


@dataclass(frozen=True)
class CertificateReport:
    """Aggregated verdicts; construction enforces the logical implications
    between the conditions (strict implies non-strict)."""

    c1: ConditionResult | None
    c2_proxy: ConditionResult | None
    c3: ConditionResult | None
    cprime: ConditionResult | None
    exactness: str
    sample_count: int
    seed: int
    tolerances: dict[str, float] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.c1 is not None and self.c3 is not None:
            if self.c1.passed and not self.c3.passed:
                raise ValueError("inconsistent report: strict condition passed "
                                 "while the non-strict one failed")
        if self.cprime is not None and self.c1 is not None:
            if self.cprime.passed and not self.c1.passed:
                raise ValueError("inconsistent report: proportional decrease "
                                 "passed while the strict condition failed")
        if self.exactness not in ("strong", "weak", "unknown"):
            raise ValueError(f"unknown exactness verdict {self.exactness!r}")

    @property
    def all_passed(self) -> bool:
        checks = [c for c in (self.c1, self.c2_proxy, self.c3, self.cprime)
                  if c is not None]
        return all(c.passed for c in checks)

    def as_dict(self) -> dict[str, Any]:
        def cond(c):
            return None if c is None else c.as_dict()

        return {
            "conditions": {
                "c1": cond(self.c1),
                "c2_proxy": cond(self.c2_proxy),
                "c3": cond(self.c3),
                "cprime": cond(self.cprime),
            },
            "exactness": self.exactness,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "tolerances": dict(self.tolerances),
            "notes": list(self.notes),
        }


# --- landscape classification ------------------------------------------------

@dataclass(frozen=True)
class LandscapeGrid:
    """Finite sample of a feasible set with costs and radius adjacency."""

    points: np.ndarray
    costs: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        costs = np.asarray(self.costs, dtype=float)
        if pts.ndim != 2 or len(pts) != len(costs):
            raise ValueError("points must be (M, d) with matching costs")
        if len(pts) == 0:
            raise ValueError("grid is empty")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "costs", costs)

    def adjacency(self) -> scipy.sparse.csr_matrix:
        tree = scipy.spatial.cKDTree(self.points)
        pairs = tree.query_pairs(self.radius * (1 + 1e-9), output_type="ndarray")
        m = len(self.points)
        if len(pairs) == 0:
            return scipy.sparse.csr_matrix((m, m))
        rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
        data = np.ones(len(rows), dtype=bool)
        return scipy.sparse.csr_matrix((data, (rows, cols)), shape=(m, m))


def classify_local_optima(grid: LandscapeGrid) -> np.ndarray:
    """Label each grid point none / global / pseudo / genuine.

    A discrete local optimum has no strictly cheaper neighbor; a plateau
    (equal-cost connected component) that reaches a non-local-optimum point
    turns its local optima into pseudo ones; local optima that are neither
    global nor pseudo are genuine.
    """
    adj = grid.adjacency().tocoo()
    m = len(grid.points)
    costs = grid.costs

    neighbor_min = np.full(m, np.inf)
    np.minimum.at(neighbor_min, adj.row, costs[adj.col])
    local = costs <= neighbor_min + EQUAL_COST_TOL

    global_opt = costs <= costs.min() + EQUAL_COST_TOL

    flat = np.abs(costs[adj.row] - costs[adj.col]) <= EQUAL_COST_TOL
    flat_graph = scipy.sparse.csr_matrix(
        (np.ones(int(flat.sum()), dtype=bool),
         (adj.row[flat], adj.col[flat])), shape=(m, m))
    _, comp = scipy.sparse.csgraph.connected_components(flat_graph, directed=False)
    comp_has_nonlocal = np.zeros(comp.max() + 1, dtype=bool)
    np.logical_or.at(comp_has_nonlocal, comp[~local], True)

    pseudo = local & ~global_opt & comp_has_nonlocal[comp]
    genuine = local & ~global_opt & ~pseudo

    labels = np.full(m, "none", dtype=object)
    labels[global_opt & local] = "global"
    labels[pseudo] = "pseudo"
    labels[genuine] = "genuine"
    return labels


# --- eliminated low-dimension models ------------------------------------------

@dataclass(frozen=True)
class GridProblem:
    """A problem reduced to few real degrees of freedom for scanning.

    ``cost``, ``inequalities`` (feasible iff <= 0) and ``equalities``
    (feasible iff = 0 at scan tolerance) are vectorized over (M, dim)
    inputs.  ``anchor`` is a known feasible point used to repair infeasible
    multistart seeds; ``to_ambient`` lifts a reduced point back to the
    ambient space for reporting.
    """

    dim: int
    lower: np.ndarray
    upper: np.ndarray
    cost: Callable[[np.ndarray], np.ndarray]
    inequalities: Callable[[np.ndarray], np.ndarray]
    equalities: Callable[[np.ndarray], np.ndarray]
    eq_scale: float = 1.0
    anchor: np.ndarray | None = None
    to_ambient: Callable[[np.ndarray], Any] | None = None
    label: str = ""

    def feasibility_residual(self, U: np.ndarray, eq_tol_len: float) -> np.ndarray:
        """Worst violation per row, with equalities scaled to the grid."""
        U = np.atleast_2d(U)
        viol = np.zeros(len(U))
        ineq = self.inequalities(U)
        if ineq.shape[1]:
            viol = np.maximum(viol, ineq.max(axis=1))
        eq = self.equalities(U)
        if eq.shape[1]:
            viol = np.maximum(viol, np.abs(eq).max(axis=1) - eq_tol_len)
        box = np.maximum(self.lower[None, :] - U, U - self.upper[None, :])
        viol = np.maximum(viol, box.max(axis=1))
        return viol


@dataclass(frozen=True)
class OracleResult:
    """Exhaustive scan outcome over the feasible grid."""

    global_cost: float
    global_points: np.ndarray
    labels: np.ndarray
    label_counts: dict[str, int]
    points: np.ndarray
    costs: np.ndarray
    n_components: int
    max_slope: float
    resolution: float
    artifacts_refuted: int = 0

    def as_dict(self) -> dict[str, Any]:
        return {
            "global_cost": self.global_cost,
            "global_points": self.global_points.tolist(),
            "label_counts": dict(self.label_counts),
            "feasible_points": int(len(self.points)),
            "connected_components": self.n_components,
            "max_slope": self.max_slope,
            "resolution": self.resolution,
            "artifacts_refuted": self.artifacts_refuted,
        }


def _improving_segment(problem: GridProblem, u: np.ndarray, w: np.ndarray,
                       eq_band: float, samples: int = 33) -> bool:
    """Check that the segment from ``u`` to ``w`` stays feasible with
    non-increasing cost; this puts cheaper feasible points arbitrarily close
    to ``u`` and therefore refutes its local optimality at every scale."""
    ts = np.linspace(0.0, 1.0, samples)
    seg = u[None, :] + ts[:, None] * (w - u)[None, :]
    ineq = problem.inequalities(seg)
    if ineq.shape[1] and ineq.max() > 1e-9:
        return False
    eq = problem.equalities(seg)
    if eq.shape[1] and np.abs(eq).max() > eq_band:
        return False
    costs = problem.cost(seg)
    slack = MONOTONE_SLACK * (1.0 + np.abs(costs[:-1]))
    return not np.any(np.diff(costs) > slack)


def _refute_local_candidate(problem: GridProblem, u: np.ndarray,
                            cost_u: float, radius: float,
                            eq_band: float) -> bool:
    """Try to produce a feasible improving segment leaving a discrete
    local-optimum candidate.

    Grid filtering staircases curved constraint boundaries, which mints
    spurious discrete local optima.  A nearby cheaper point of the smooth
    model reached by a feasible monotone segment witnesses that the
    candidate is such an artifact and not a local optimum of the continuum.
    """
    scalar_cost = lambda w: float(problem.cost(w[None, :])[0])
    cons = []
    if problem.inequalities(u[None, :]).shape[1]:
        cons.append({"type": "ineq",
                     "fun": lambda w: -problem.inequalities(w[None, :])[0]})
    has_eq = problem.equalities(u[None, :]).shape[1] > 0
    if has_eq:
        cons.append({"type": "eq",
                     "fun": lambda w: problem.equalities(w[None, :])[0]})
    improve_tol = max(1e-12, 1e-10 * (1.0 + abs(cost_u)))

    for scale in (1.0, 2.0, 4.0, 8.0):
        r = scale * radius
        lo = np.maximum(problem.lower, u - r)
        hi = np.minimum(problem.upper, u + r)
        res = scipy.optimize.minimize(
            scalar_cost, u, method="SLSQP", bounds=list(zip(lo, hi)),
            constraints=cons, options={"ftol": 1e-14, "maxiter": 120})
        w = np.clip(res.x, lo, hi)
        band = max(eq_band, 1e-9)
        feas = problem.feasibility_residual(w[None, :], band)[0] <= 1e-9
        if (feas and scalar_cost(w) < cost_u - improve_tol
                and _improving_segment(problem, u, w, band)):
            return True
    return False


def brute_force_oracle(
    problem: GridProblem,
    resolution: float,
    ineq_tol: float = 1e-9,
    refine_candidates: bool = True,
) -> OracleResult:
    """Exhaustive grid scan of the feasible set at the given resolution.

    Equality constraints are filtered at ``eq_scale * resolution`` since a
    grid cannot hit a manifold exactly; inequality and box constraints are
    filtered at ``ineq_tol``.  Non-global local-optimum labels are then
    re-examined against the smooth model (see
    :func:`_refute_local_candidate`) unless ``refine_candidates`` is off.
    """
    if problem.dim > ORACLE_DIM_LIMIT:
        raise DimensionGuardError(
            f"{problem.dim} degrees of freedom exceed the scan guard "
            f"({ORACLE_DIM_LIMIT})")
    axes = [np.arange(problem.lower[i], problem.upper[i] + resolution / 2,
                      resolution) for i in range(problem.dim)]
    sizes = [len(a) for a in axes]
    total = int(np.prod(sizes))
    if total > ORACLE_POINT_LIMIT:
        raise DimensionGuardError(
            f"grid of {total} points exceeds the scan budget; "
            "coarsen the resolution")
    mesh = np.meshgrid(*axes, indexing="ij")
    U = np.stack([m.reshape(-1) for m in mesh], axis=1)

    ineq = problem.inequalities(U)
    mask = np.ones(total, dtype=bool)
    if ineq.shape[1]:
        mask &= ineq.max(axis=1) <= ineq_tol
    eq = problem.equalities(U)
    if eq.shape[1]:
        mask &= np.abs(eq).max(axis=1) <= problem.eq_scale * resolution
    if not mask.any():
        raise InfeasibleAtResolutionError(
            f"no feasible grid point at resolution {resolution}")

    pts = U[mask]
    costs = problem.cost(pts)
    grid = LandscapeGrid(points=pts, costs=costs, radius=1.5 * resolution)
    labels = classify_local_optima(grid)

    refuted = 0
    if refine_candidates:
        eq_band = problem.eq_scale * resolution
        for i in np.flatnonzero((labels == "genuine") | (labels == "pseudo")):
            if _refute_local_candidate(problem, pts[i], float(costs[i]),
                                       radius=1.5 * resolution,
                                       eq_band=eq_band):
                labels[i] = "none"
                refuted += 1

    adj = grid.adjacency().tocoo()
    n_comp, _ = scipy.sparse.csgraph.connected_components(
        grid.adjacency(), directed=False)
    if len(adj.row):
        dists = np.linalg.norm(pts[adj.row] - pts[adj.col], axis=1)
        slopes = np.abs(costs[adj.row] - costs[adj.col]) / dists
        max_slope = float(slopes.max())
    else:
        max_slope = 0.0

    gmin = float(costs.min())
    gmask = costs <= gmin + EQUAL_COST_TOL
    counts = {k: int(np.sum(labels == k))
              for k in ("none", "global", "pseudo", "genuine")}
    return OracleResult(
        global_cost=gmin, global_points=pts[gmask], labels=labels,
        label_counts=counts, points=pts, costs=costs, n_components=int(n_comp),
        max_slope=max_slope, resolution=resolution, artifacts_refuted=refuted)


# --- multistart local search ---------------------------------------------------

@dataclass(frozen=True)
class LocalSearchRun:
    point: np.ndarray
    cost: float
    first_order_residual: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class MultistartOutcome:
    runs: tuple[LocalSearchRun, ...]
    attempted: int
    note: str = ""

    @property
    def converged_costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.runs if r.converged])


def _fd_gradient(fn: Callable[[np.ndarray], float], u: np.ndarray,
                 h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(u)
    for i in range(len(u)):
        step = h * max(1.0, abs(u[i]))
        up, dn = u.copy(), u.copy()
        up[i] += step
        dn[i] -= step
        grad[i] = (fn(up) - fn(dn)) / (2 * step)
    return grad


def _kkt_residual(problem: GridProblem, u: np.ndarray,
                  active_tol: float = 1e-6) -> float:
    """Stationarity residual via nonnegative least squares over the active
    constraint gradients (equality multipliers are sign-split)."""
    scalar_cost = lambda w: float(problem.cost(w[None, :])[0])
    grad_f = _fd_gradient(scalar_cost, u)

    columns: list[np.ndarray] = []
    ineq = problem.inequalities(u[None, :])[0]
    for i, g in enumerate(ineq):
        if g > -active_tol:
            gi = lambda w, i=i: float(problem.inequalities(w[None, :])[0][i])
            columns.append(_fd_gradient(gi, u))
    eq = problem.equalities(u[None, :])[0]
    for i in range(len(eq)):
        hi = lambda w, i=i: float(problem.equalities(w[None, :])[0][i])
        geq = _fd_gradient(hi, u)
        columns.append(geq)
        columns.append(-geq)
    for i in range(problem.dim):
        if u[i] - problem.lower[i] < active_tol:
            e = np.zeros(problem.dim)
            e[i] = -1.0
            columns.append(e)
        if problem.upper[i] - u[i] < active_tol:
            e = np.zeros(problem.dim)
            e[i] = 1.0
            columns.append(e)

    if not columns:
        return float(np.max(np.abs(grad_f)))
    M = np.stack(columns, axis=1)
    lam, _ = scipy.optimize.nnls(M, -grad_f)
    return float(np.max(np.abs(grad_f + M @ lam)))


def _repair_start(problem: GridProblem, u: np.ndarray,
                  tol: float) -> np.ndarray | None:
    if problem.feasibility_residual(u[None, :], 0.0)[0] <= tol:
        return u
    if problem.anchor is None:
        return None
    lo, hi = 0.0, 1.0  # blend toward the anchor until feasible
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        cand = problem.anchor + mid * (u - problem.anchor)
        if problem.feasibility_residual(cand[None, :], 0.0)[0] <= tol:
            lo = mid
        else:
            hi = mid
    cand = problem.anchor + lo * (u - problem.anchor)
    if problem.feasibility_residual(cand[None, :], 0.0)[0] <= tol:
        return cand
    return None


def multistart_local_search(
    problem: GridProblem,
    starts: int,
    seed: int = 0,
    tol: float = 1e-6,
) -> MultistartOutcome:
    """Deterministic local searches from quasi-random feasible starts.

    Each run is a bounded smooth local solve; convergence is accepted only
    when the point is feasible and its KKT stationarity residual (verified
    independently by nonnegative least squares on the active gradients) is
    at most ``tol``.
    """
    if starts < 1:
        raise ValueError("starts must be >= 1")
    sampler = qmc.Sobol(d=problem.dim, scramble=True, seed=seed)
    raw = sampler.random_base2(int(np.ceil(np.log2(max(8 * starts, 16)))))
    candidates = problem.lower + raw * (problem.upper - problem.lower)

    seeds: list[np.ndarray] = []
    for u in candidates:
        repaired = _repair_start(problem, u, tol=1e-7)
        if repaired is not None:
            seeds.append(repaired)
        if len(seeds) == starts:
            break
    note = ""
    if len(seeds) < starts:
        note = (f"only {len(seeds)} of {starts} requested starts were "
                "feasible after repair")
    if not seeds:
        return MultistartOutcome(runs=(), attempted=0,
                                 note=note or "no feasible starts found")

    scalar_cost = lambda w: float(problem.cost(w[None, :])[0])
    cons = []
    ineq_dim = problem.inequalities(seeds[0][None, :]).shape[1]
    if ineq_dim:
        cons.append({"type": "ineq",
                     "fun": lambda w: -problem.inequalities(w[None, :])[0]})
    eq_dim = problem.equalities(seeds[0][None, :]).shape[1]
    if eq_dim:
        cons.append({"type": "eq",
                     "fun": lambda w: problem.equalities(w[None, :])[0]})
    bounds = list(zip(problem.lower, problem.upper))

    runs: list[LocalSearchRun] = []
    for u0 in seeds:
        with warnings.catch_warnings():
            # SLSQP emits a RuntimeWarning whenever it clips to the bounds
            warnings.simplefilter("ignore", RuntimeWarning)
            res = scipy.optimize.minimize(
                scalar_cost, u0, method="SLSQP", bounds=bounds,
                constraints=cons, options={"ftol": 1e-12, "maxiter": 400})
        u = np.clip(res.x, problem.lower, problem.upper)
        feas = float(problem.feasibility_residual(u[None, :], 0.0)[0])
        kkt = _kkt_residual(problem, u)
        converged = bool(feas <= 1e-6 and kkt <= tol)
        runs.append(LocalSearchRun(
            point=u, cost=scalar_cost(u), first_order_residual=kkt,
            converged=converged, iterations=int(res.nit)))

    if not any(r.converged for r in runs):
        note = (note + "; " if note else "") + "no run met the convergence test"
    return MultistartOutcome(runs=tuple(runs), attempted=len(seeds), note=note)


# --- eliminated OPF model ------------------------------------------------------

def eliminated_opf_grid(net: RadialNetwork, cost: OpfCost) -> GridProblem:
    """Reduce a radial instance to line-power degrees of freedom.

    The root voltage and every line's complex sending-end power determine
    the whole operating point through the power-flow recursion with the
    cone held at equality; boxes become smooth inequalities of the reduced
    variables.  The root voltage is a degree of freedom unless its box is
    degenerate.
    """
    ok, problem = tree_check(net)
    if not ok:
        raise PreconditionError(f"network is not radial: {problem}")
    n, e = net.n_bus, net.n_line
    root = net.bus_index[net.root]
    order = net.topological_lines()
    root_pinned = net.v_max[root] - net.v_min[root] <= 1e-12
    dim = 2 * e + (0 if root_pinned else 1)

    s_radius = np.sqrt(net.v_max[net.tail_idx] * net.l_max)
    lower = np.concatenate([-s_radius, -s_radius,
                            [] if root_pinned else [net.v_min[root]]])
    upper = np.concatenate([s_radius, s_radius,
                            [] if root_pinned else [net.v_max[root]]])

    def expand(U: np.ndarray):
        U = np.atleast_2d(np.asarray(U, dtype=float))
        M = len(U)
        SP, SQ = U[:, :e], U[:, e:2 * e]
        v = np.empty((M, n))
        v[:, root] = net.v_min[root] if root_pinned else U[:, -1]
        ell = np.empty((M, e))
        bad = np.zeros(M, dtype=bool)
        for k in order:
            t, h = int(net.tail_idx[k]), int(net.head_idx[k])
            z = net.z[k]
            vt = np.maximum(v[:, t], 1e-9)
            bad |= v[:, t] <= 1e-9
            ell[:, k] = (SP[:, k] ** 2 + SQ[:, k] ** 2) / vt
            v[:, h] = (v[:, t] - 2.0 * (z.real * SP[:, k] + z.imag * SQ[:, k])
                       + abs(z) ** 2 * ell[:, k])
        sp = np.zeros((M, n))
        sq = np.zeros((M, n))
        for k in range(e):
            t, h = int(net.tail_idx[k]), int(net.head_idx[k])
            z = net.z[k]
            sp[:, t] += SP[:, k]
            sq[:, t] += SQ[:, k]
            sp[:, h] += -(SP[:, k] - z.real * ell[:, k])
            sq[:, h] += -(SQ[:, k] - z.imag * ell[:, k])
        return sp, sq, v, ell, SP, SQ, bad

    def cost_fn(U: np.ndarray) -> np.ndarray:
        sp, sq, _, _, _, _, bad = expand(U)
        vals = (sp @ cost.cp + sq @ cost.cq
                + (sp ** 2) @ cost.qp + (sq ** 2) @ cost.qq)
        vals[bad] = 1e6
        return vals

    s_min, s_max = net.s_min, net.s_max
    # the root voltage is either a boxed variable or a constant; its box
    # rows would be identically zero and only degrade the local solves
    free_bus = np.array([j for j in range(n) if j != root or not root_pinned],
                        dtype=int)

    def ineq_fn(U: np.ndarray) -> np.ndarray:
        sp, sq, v, ell, _, _, bad = expand(U)
        vf = v[:, free_bus]
        cols = [
            net.v_min[None, free_bus] - vf, vf - net.v_max[None, free_bus],
            ell - net.l_max[None, :],
            s_min.real[None, :] - sp, sp - s_max.real[None, :],
            s_min.imag[None, :] - sq, sq - s_max.imag[None, :],
        ]
        out = np.concatenate(cols, axis=1)
        out[bad] = 1e6
        return out

    def eq_fn(U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(U)
        return np.zeros((len(U), 0))

    def to_ambient(u: np.ndarray) -> OperatingPoint:
        sp, sq, v, ell, SP, SQ, _ = expand(u[None, :])
        return OperatingPoint(s=sp[0] + 1j * sq[0], v=v[0], ell=ell[0],
                              S=SP[0] + 1j * SQ[0])

    anchor = np.zeros(dim)
    if not root_pinned:
        anchor[-1] = 0.5 * (net.v_min[root] + net.v_max[root])

    return GridProblem(
        dim=dim, lower=lower, upper=upper, cost=cost_fn,
        inequalities=ineq_fn, equalities=eq_fn, anchor=anchor,
        to_ambient=to_ambient, label="opf-eliminated")


def psd_slice_grid_problem(inst, bound: float | None = None) -> GridProblem:
    """Scan model for a real 2x2 rank-constrained SDP: free variables are
    the three distinct symmetric entries; feasible-set membership adds the
    determinant equality on top of PSD inequalities."""
    from relaxcert.lrsdp import LrsdpInstance

    if not isinstance(inst, LrsdpInstance):
        raise TypeError("expected an LrsdpInstance")
    if inst.n != 2 or not inst.is_real or inst.r != 1:
        raise DimensionGuardError(
            "the slice scan covers real 2x2 instances with target rank 1")
    B = bound if bound is not None else 1.2 * max(1.0, float(np.max(np.abs(inst.b))))
    C = inst.C.real

    def cost_fn(U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(U)
        return (C[0, 0] * U[:, 0] + 2 * C[0, 1] * U[:, 1] + C[1, 1] * U[:, 2])

    def ineq_fn(U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(U)
        return np.stack([-U[:, 0], -U[:, 2],
                         U[:, 1] ** 2 - U[:, 0] * U[:, 2]], axis=1)

    def eq_fn(U: np.ndarray) -> np.ndarray:
        U = np.atleast_2d(U)
        rows = [np.stack([Ai[0, 0].real * U[:, 0] + 2 * Ai[0, 1].real * U[:, 1]
                          + Ai[1, 1].real * U[:, 2] - bi
                          for Ai, bi in zip(inst.A, inst.b)], axis=1)]
        rows.append((U[:, 0] * U[:, 2] - U[:, 1] ** 2)[:, None])
        return np.concatenate(rows, axis=1)

    def to_ambient(u: np.ndarray) -> np.ndarray:
        return np.array([[u[0], u[1]], [u[1], u[2]]])

    anchor = None
    vals, vecs = np.linalg.eigh(inst.A[0].real)
    for idx in np.argsort(vals)[::-1]:
        if vals[idx] > 1e-9 and len(inst.A) == 1:
            w = vecs[:, idx]
            X = (inst.b[0] / vals[idx]) * np.outer(w, w)
            if np.min(np.diag(X)) >= 0:
                anchor = np.array([X[0, 0], X[0, 1], X[1, 1]])
                break

    return GridProblem(
        dim=3, lower=np.full(3, -B), upper=np.full(3, B), cost=cost_fn,
        inequalities=ineq_fn, equalities=eq_fn, eq_scale=4.0 * B,
        anchor=anchor, to_ambient=to_ambient, label="psd-slice")


# --- report export -------------------------------------------------------------

def write_report_json(path: str, report: CertificateReport,
                      extra: dict[str, Any] | None = None) -> None:
    data = report.as_dict()
    if extra:
        data.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
