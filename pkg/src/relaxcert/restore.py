"""Feasibility restoration for relaxed radial-OPF points.

The cone slack ``v_tail * ell - |S|^2``, summed over lines, measures how far
a relaxed point sits from the DistFlow manifold and serves as the Lyapunov
function.  Each slack line owns a quadratic whose unique positive root gives
the current reduction that closes that line's cone gap; moving every line
simultaneously along those roots is a single linear path that preserves the
affine DistFlow equations, strictly lowers both the cost and the Lyapunov
value, and lands on the feasible set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from relaxcert.compose import CertifiedProblem
from relaxcert.core import (
    FEAS_TOL,
    MONOTONE_SLACK,
    SEGMENT_SAMPLES,
    CertificateViolationError,
    PathTrace,
    PreconditionError,
    ProblemHandle,
    norm_m,
    write_trace_csv,
)
from relaxcert.distflow import (
    BIG_BOUND,
    OperatingPoint,
    OpfCost,
    RadialNetwork,
    coordinate_labels,
    coordinate_rows,
    pack_point,
    pf_residuals,
    residual_X,
    residual_Xhat,
    unpack_point,
    validate_assumptions,
)

# A line is counted as strictly slack when its cone gap exceeds this times
# max(1, v*ell); scale-aware so large-current lines are not misclassified.
SLACK_THRESHOLD = 1e-9


@dataclass(frozen=True)
class EdgeGap:
    """Per-line cone gap: the positive quadratic root ``delta`` (0 for tight
    lines) and whether the line is strictly slack."""

    line: int
    delta: float
    in_M: bool


def lyapunov_V(net: RadialNetwork, x: OperatingPoint, tol: float = FEAS_TOL) -> float:
    """Total cone slack sum(v_tail*ell - |S|^2) over lines; zero exactly on
    DistFlow-feasible points of the relaxed set."""
    slack = pf_residuals(net, x).cone_eq
    if np.any(slack < -tol):
        e = int(np.argmin(slack))
        ln = net.lines[e]
        raise PreconditionError(
            f"line {ln.tail}->{ln.head} violates the cone by {-slack[e]:.3g}; "
            "the point is not relaxed-feasible")
    return float(np.sum(np.maximum(slack, 0.0)))


def _phi_coefficients(net: RadialNetwork, x: OperatingPoint):
    """Quadratic coefficients (a2, a1, a0) of each line's gap polynomial."""
    z = net.z
    a2 = np.abs(z) ** 2 / 4.0
    a1 = x.v[net.tail_idx] - (z * np.conj(x.S)).real
    a0 = np.abs(x.S) ** 2 - x.v[net.tail_idx] * x.ell
    return a2, a1, a0


def edge_deltas(net: RadialNetwork, x: OperatingPoint) -> tuple[np.ndarray, np.ndarray]:
    """Positive root of every slack line's quadratic (0 for tight lines).

    Returns ``(delta, in_M)`` arrays.  Uses the root form
    ``2|a0| / (a1 + sqrt(a1^2 + 4 a2 |a0|))`` which is cancellation-free when
    the constant term is tiny.
    """
    a2, a1, a0 = _phi_coefficients(net, x)
    slack = -a0
    scale = np.maximum(1.0, x.v[net.tail_idx] * x.ell)
    in_M = slack > SLACK_THRESHOLD * scale

    if np.any(a1[in_M] < -1e-12 * np.maximum(1.0, x.v[net.tail_idx][in_M])):
        e = int(np.flatnonzero(in_M)[np.argmin(a1[in_M])])
        ln = net.lines[e]
        raise CertificateViolationError(
            f"line {ln.tail}->{ln.head}: v_tail - Re(z S^H) = {a1[e]:.3g} < 0; "
            "the current-limit assumption does not hold at this point")

    delta = np.zeros(net.n_line)
    m = in_M
    disc = np.sqrt(a1[m] ** 2 + 4.0 * a2[m] * slack[m])
    delta[m] = 2.0 * slack[m] / (a1[m] + disc)

    # the root must close the gap exactly
    phi = a2[m] * delta[m] ** 2 + a1[m] * delta[m] + a0[m]
    ref = np.maximum.reduce([
        np.ones_like(phi), a2[m] * delta[m] ** 2, np.abs(a1[m]) * delta[m],
        np.abs(a0[m])])
    bad = np.abs(phi) > 1e-10 * ref
    if np.any(bad):
        e = int(np.flatnonzero(m)[np.argmax(np.abs(phi / ref))])
        ln = net.lines[e]
        raise CertificateViolationError(
            f"line {ln.tail}->{ln.head}: quadratic root residual "
            f"{np.max(np.abs(phi[bad] / ref[bad])):.3g} exceeds 1e-10")
    return delta, in_M


def edge_delta(net: RadialNetwork, x: OperatingPoint, line: int) -> EdgeGap:
    """Gap data for a single line."""
    if not 0 <= line < net.n_line:
        raise ValueError(f"line index {line} out of range")
    delta, in_M = edge_deltas(net, x)
    return EdgeGap(line=line, delta=float(delta[line]), in_M=bool(in_M[line]))


def _path_points(net: RadialNetwork, x: OperatingPoint, delta: np.ndarray,
                 ts: np.ndarray) -> np.ndarray:
    """Flat sample matrix of the restoration path at parameters ``ts``."""
    zd = net.z * delta
    pull = np.zeros(net.n_bus, dtype=complex)
    np.add.at(pull, net.tail_idx, zd)
    np.add.at(pull, net.head_idx, zd)

    n, e = net.n_bus, net.n_line
    pts = np.empty((len(ts), 2 * n + 2 * e), dtype=complex)
    for i, t in enumerate(ts):
        pts[i, :n] = x.s - 0.5 * t * pull
        pts[i, n:2 * n] = x.v
        pts[i, 2 * n:2 * n + e] = x.ell - t * delta
        pts[i, 2 * n + e:] = x.S - 0.5 * t * zd
    return pts


def restoration_path(
    net: RadialNetwork,
    cost: OpfCost,
    x: OperatingPoint,
    samples: int = SEGMENT_SAMPLES,
    tol: float = FEAS_TOL,
) -> PathTrace:
    """Linear path from a relaxed infeasible point onto the feasible set.

    Per line, the current drops by the gap root and the sending-end power by
    half the impedance times the root; the affected bus injections absorb
    the difference so the affine DistFlow equations hold along the way.
    Voltages never move.  All guarantees (relaxed membership of every
    sample, feasible endpoint, strictly decreasing cost and Lyapunov value)
    are re-checked before returning; a failure raises
    :class:`CertificateViolationError` and indicates a bug.
    """
    report = validate_assumptions(net, cost)
    if not report.structural_ok:
        fails = ", ".join(c.name for c in report.failures())
        raise PreconditionError(f"instance fails structural assumptions: {fails}")
    r_hat = residual_Xhat(net, cost, x)
    if r_hat > tol:
        raise PreconditionError(
            f"point is not relaxed-feasible (residual {r_hat:.3g} > {tol:.1g})")
    if residual_X(net, cost, x) <= tol:
        raise PreconditionError("point is already feasible; nothing to restore")

    delta, in_M = edge_deltas(net, x)
    ts = np.linspace(0.0, 1.0, samples)
    pts = _path_points(net, x, delta, ts)
    trace = PathTrace(params=ts, points=pts, segments=1)

    f_vals = np.empty(samples)
    v_vals = np.empty(samples)
    for i in range(samples):
        xi = unpack_point(net, pts[i])
        ri = residual_Xhat(net, cost, xi)
        if ri > tol:
            raise CertificateViolationError(
                f"sample {i} (t={ts[i]:.4f}) left the relaxed set "
                f"(residual {ri:.3g})")
        f_vals[i] = cost.value(xi.s)
        v_vals[i] = lyapunov_V(net, xi, tol=tol)

    end = unpack_point(net, pts[-1])
    r_end = residual_X(net, cost, end)
    if r_end > tol:
        raise CertificateViolationError(
            f"endpoint residual {r_end:.3g} exceeds {tol:.1g}")
    if v_vals[-1] > tol:
        raise CertificateViolationError(
            f"endpoint Lyapunov value {v_vals[-1]:.3g} exceeds {tol:.1g}")

    f_slack = MONOTONE_SLACK * (1.0 + np.abs(f_vals[:-1]))
    if np.any(np.diff(f_vals) > f_slack):
        i = int(np.argmax(np.diff(f_vals) - f_slack))
        raise CertificateViolationError(
            f"cost increases at sample {i + 1} (t={ts[i + 1]:.4f})")
    v_slack = MONOTONE_SLACK * (1.0 + v_vals[:-1])
    if np.any(np.diff(v_vals) > v_slack):
        i = int(np.argmax(np.diff(v_vals) - v_slack))
        raise CertificateViolationError(
            f"Lyapunov value increases at sample {i + 1} (t={ts[i + 1]:.4f})")
    strict = MONOTONE_SLACK * (1.0 + abs(f_vals[0]))
    if not f_vals[-1] <= f_vals[0] - strict:
        raise CertificateViolationError("cost did not strictly decrease end to end")
    if not v_vals[-1] < v_vals[0]:
        raise CertificateViolationError(
            "Lyapunov value did not strictly decrease end to end")

    return trace


@dataclass(frozen=True)
class CprimeMargin:
    """Sampled proportional-decrease margin along a restoration trace.

    ``margin`` is the minimum over sampled parameter pairs of the cost drop
    divided by the m-norm displacement (``inf`` for constant paths);
    ``analytic`` is the instance constant the margin should dominate.
    """

    margin: float
    analytic: float
    note: str = ""


def cprime_reference(net: RadialNetwork, cost: OpfCost) -> float:
    """Instance constant c / (3/2 + 1/min ||z||_m) from the cost's strong
    increase and the smallest line impedance."""
    c = cost.strong_increase_constant(net)
    zmin = min(abs(z.real) + abs(z.imag) for z in net.z)
    return c / (1.5 + 1.0 / zmin)


def cprime_margin(net: RadialNetwork, cost: OpfCost, trace: PathTrace) -> CprimeMargin:
    """Minimum cost-drop-per-m-norm-displacement over all sampled pairs.

    A positive margin certifies the proportional-decrease condition on the
    sampled trace; pairs with zero displacement are skipped.
    """
    analytic = cprime_reference(net, cost)
    pts = trace.points
    K = len(pts)
    f_vals = np.array([cost.value(unpack_point(net, pts[i]).s) for i in range(K)])

    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sum(np.abs(diff.real), axis=2) + np.sum(np.abs(diff.imag), axis=2)
    drop = f_vals[:, None] - f_vals[None, :]

    iu, ju = np.triu_indices(K, k=1)
    d = dist[iu, ju]
    mask = d > 0
    if not np.any(mask):
        return CprimeMargin(margin=np.inf, analytic=analytic,
                            note="constant path: no line was slack")
    margin = float(np.min(drop[iu, ju][mask] / d[mask]))
    return CprimeMargin(margin=margin, analytic=analytic)


def opf_certified_problem(net: RadialNetwork, cost: OpfCost) -> CertifiedProblem:
    """Package an OPF instance as a certified problem over flat vectors."""
    def _cost(vec: np.ndarray) -> float:
        return cost.value(unpack_point(net, vec).s)

    def _res_feas(vec: np.ndarray) -> float:
        return residual_X(net, cost, unpack_point(net, vec))

    def _res_relax(vec: np.ndarray) -> float:
        return residual_Xhat(net, cost, unpack_point(net, vec))

    def _lyap(vec: np.ndarray) -> float:
        return lyapunov_V(net, unpack_point(net, vec))

    def _path(vec: np.ndarray) -> PathTrace:
        return restoration_path(net, cost, unpack_point(net, vec))

    n, e = net.n_bus, net.n_line
    v_pad = 0.5
    lo = np.concatenate([
        np.full(n, -BIG_BOUND) + 1j * np.full(n, -BIG_BOUND),
        (net.v_min - v_pad).astype(complex),
        np.zeros(e, dtype=complex),
        -np.sqrt(net.v_max[net.tail_idx] * net.l_max).astype(complex)
        * (1 + 1j),
    ])
    hi = np.concatenate([
        net.s_max.real + 1j * net.s_max.imag,
        (net.v_max + v_pad).astype(complex),
        net.l_max.astype(complex),
        np.sqrt(net.v_max[net.tail_idx] * net.l_max).astype(complex) * (1 + 1j),
    ])
    return CertifiedProblem(
        handle=ProblemHandle(cost=_cost, residual_feasible=_res_feas,
                             residual_relaxed=_res_relax, lyapunov=_lyap),
        path_factory=_path,
        segment_bound=1,
        box=(lo, hi),
        label="opf",
    )


def write_restoration_csv(path: str, net: RadialNetwork, cost: OpfCost,
                          trace: PathTrace) -> None:
    """Trace CSV: t, cost, Lyapunov value, then bus-major s and v, line-major
    ell and S with real parts before imaginary."""
    write_trace_csv(
        path,
        trace,
        coordinate_labels(net),
        lambda vec: coordinate_rows(net, vec),
        cost=lambda vec: cost.value(unpack_point(net, vec).s),
        lyapunov=lambda vec: lyapunov_V(net, unpack_point(net, vec)),
    )
