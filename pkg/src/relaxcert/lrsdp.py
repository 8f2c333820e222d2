"""Rank reduction for low-rank SDP: the tail-eigenvalue Lyapunov function,
cost-and-constraint-preserving directions from a null-space system, boundary
steps that drop an eigenvalue to zero, and the stagewise path that drives a
feasible matrix down to the target rank at constant cost.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
import numpy as np
import scipy.linalg

from relaxcert.core import (
    FEAS_TOL,
    MONOTONE_SLACK,
    SEGMENT_SAMPLES,
    CertificateViolationError,
    PathTrace,
    PreconditionError,
    ProblemHandle,
)

# An eigenvalue counts as nonzero above this times max(1, lambda_max).
RANK_TOL = 1e-8
# PSD acceptance for matrices entering the pipeline.
PSD_TOL = 1e-8


class ReductionStuckError(RuntimeError):
    """No nonzero direction at some stage (dimension condition violated)."""

    def __init__(self, stage: int, message: str):
        super().__init__(message)
        self.stage = stage


def _check_hermitian(M: np.ndarray, name: str, tol: float = 1e-9) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    gap = np.abs(M - M.conj().T)
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(gap) > tol * scale:
        i, j = np.unravel_index(int(np.argmax(gap)), gap.shape)
        raise ValueError(
            f"{name} is not Hermitian: entry ({i},{j}) differs from its "
            f"transpose conjugate by {gap[i, j]:.3g}")
    return M


@dataclass(frozen=True)
class LrsdpInstance:
    """Data ``(C, A_i, b_i, r)`` of a rank-constrained SDP.

    Instances violating the dimension condition that guarantees a reduction
    direction at every stage are accepted but flagged.
    """

    C: np.ndarray
    A: tuple[np.ndarray, ...]
    b: np.ndarray
    r: int

    def __init__(self, C, A, b, r):
        object.__setattr__(self, "C", _check_hermitian(C, "C"))
        object.__setattr__(self, "A", tuple(
            _check_hermitian(Ai, f"A[{i}]") for i, Ai in enumerate(A)))
        b = np.asarray(b, dtype=float)
        if b.ndim != 1 or len(b) != len(self.A):
            raise ValueError(f"b has {b.shape} entries for {len(self.A)} constraints")
        object.__setattr__(self, "b", b)
        n = self.C.shape[0]
        for i, Ai in enumerate(self.A):
            if Ai.shape[0] != n:
                raise ValueError(f"A[{i}] is {Ai.shape[0]}x{Ai.shape[0]}, C is {n}x{n}")
        if not 0 < int(r) <= n:
            raise ValueError(f"target rank {r} outside 1..{n}")
        object.__setattr__(self, "r", int(r))

    @property
    def n(self) -> int:
        return self.C.shape[0]

    @property
    def m(self) -> int:
        return len(self.A)

    @property
    def dimension_condition(self) -> bool:
        """True when (r+1)(r+2)/2 > m+1, the reduction guarantee."""
        return (self.r + 1) * (self.r + 2) // 2 > self.m + 1

    @cached_property
    def is_real(self) -> bool:
        return (np.max(np.abs(self.C.imag)) == 0.0
                and all(np.max(np.abs(Ai.imag)) == 0.0 for Ai in self.A))

    def constraint_residual(self, X: np.ndarray) -> float:
        return float(max(abs(np.trace(Ai @ X).real - bi)
                         for Ai, bi in zip(self.A, self.b)))

    def cost(self, X: np.ndarray) -> float:
        return float(np.trace(self.C @ X).real)


@dataclass(frozen=True)
class PsdPoint:
    """A PSD matrix with its eigendecomposition cached (descending order)."""

    X: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @classmethod
    def from_matrix(cls, X: np.ndarray, name: str = "X") -> "PsdPoint":
        X = _check_hermitian(X, name)
        vals, vecs = np.linalg.eigh(X)
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        if vals[-1] < -1e-9 * max(1.0, vals[0]):
            raise ValueError(
                f"{name} is not positive semidefinite (min eigenvalue {vals[-1]:.3g})")
        return cls(X=X, eigenvalues=vals, eigenvectors=vecs)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def rank(self, tol: float = RANK_TOL) -> int:
        cut = tol * max(1.0, float(self.eigenvalues[0]))
        return int(np.sum(self.eigenvalues >= cut))

    def factors(self, tol: float = RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
        """Orthonormal basis and positive spectrum of the numerical range."""
        k = self.rank(tol)
        return self.eigenvectors[:, :k], self.eigenvalues[:k]


def lyapunov_tail(inst: LrsdpInstance, X: PsdPoint | np.ndarray) -> float:
    """Sum of the eigenvalues below the target rank; zero iff rank(X) <= r."""
    point = X if isinstance(X, PsdPoint) else PsdPoint.from_matrix(np.asarray(X))
    vals = point.eigenvalues
    if vals[-1] < -PSD_TOL * max(1.0, vals[0]):
        raise PreconditionError(
            f"matrix is indefinite (min eigenvalue {vals[-1]:.3g})")
    return float(max(0.0, np.sum(vals[inst.r:])))


def _hermitian_basis_coefficients(G: np.ndarray, real_symmetric: bool) -> np.ndarray:
    """Row of the null-space system for one data matrix projected onto the
    current range: coefficients of tr(G Y) in the Hermitian basis of Y."""
    k = G.shape[0]
    iu, ju = np.triu_indices(k, k=1)
    if real_symmetric:
        return np.concatenate([np.diag(G).real, 2.0 * G[iu, ju].real])
    return np.concatenate([
        np.diag(G).real, 2.0 * G[iu, ju].real, 2.0 * G[iu, ju].imag])


def _vector_to_hermitian(y: np.ndarray, k: int, real_symmetric: bool) -> np.ndarray:
    iu, ju = np.triu_indices(k, k=1)
    Y = np.zeros((k, k), dtype=complex)
    Y[np.diag_indices(k)] = y[:k]
    off = len(iu)
    Y[iu, ju] = y[k:k + off]
    if not real_symmetric:
        Y[iu, ju] = Y[iu, ju] + 1j * y[k + off:k + 2 * off]
    Y[ju, iu] = np.conj(Y[iu, ju])
    return Y


def nullspace_direction(
    inst: LrsdpInstance, U: np.ndarray, Sigma: np.ndarray
) -> np.ndarray | None:
    """Nonzero Hermitian Y with tr(C U Y U^H) = tr(A_i U Y U^H) = 0, or None.

    Real instances are kept on the real-symmetric manifold (k(k+1)/2 real
    unknowns); complex ones use the full Hermitian parameterization.  None is
    returned only when the system is square-or-overdetermined and
    numerically full rank, which requires the dimension condition to fail.
    """
    U = np.asarray(U, dtype=complex)
    k = U.shape[1]
    ortho_gap = np.max(np.abs(U.conj().T @ U - np.eye(k)))
    if ortho_gap > 1e-10:
        raise PreconditionError(f"U is not orthonormal (gap {ortho_gap:.3g})")

    real_sym = inst.is_real and np.max(np.abs(U.imag)) == 0.0
    rows = [_hermitian_basis_coefficients(U.conj().T @ inst.C @ U, real_sym)]
    for Ai in inst.A:
        rows.append(_hermitian_basis_coefficients(U.conj().T @ Ai @ U, real_sym))
    M = np.vstack(rows)
    n_unknowns = M.shape[1]

    _, svals, Vt = scipy.linalg.svd(M, full_matrices=True)
    if n_unknowns > M.shape[0] or len(svals) < n_unknowns:
        y = Vt[-1]
    else:
        smax = svals[0] if len(svals) else 0.0
        if svals[-1] > 1e-10 * max(1.0, smax):
            return None
        y = Vt[-1]

    Y = _vector_to_hermitian(y, k, real_sym)
    Y /= np.linalg.norm(Y)
    worst = max(abs(np.trace(U.conj().T @ Ai @ U @ Y).real) for Ai in inst.A)
    worst = max(worst, abs(np.trace(U.conj().T @ inst.C @ U @ Y).real))
    if worst > 1e-9:
        raise CertificateViolationError(
            f"null-space direction leaves residual {worst:.3g}")
    return Y


@dataclass(frozen=True)
class BoundarySteps:
    """Signed steps at which ``Sigma + alpha Y`` first goes singular."""

    alpha_pos: float | None
    alpha_neg: float | None


def boundary_step(Sigma: np.ndarray, Y: np.ndarray) -> BoundarySteps:
    """Smallest positive and largest negative alpha making Sigma + alpha*Y
    singular; at least one exists for nonzero Hermitian Y."""
    sig = np.asarray(Sigma, dtype=float)
    if sig.ndim == 2:
        sig = np.diag(sig)
    if np.any(sig <= 0):
        raise PreconditionError("Sigma must be positive definite diagonal")
    Y = _check_hermitian(Y, "Y")
    if np.linalg.norm(Y) <= 1e-14:
        raise PreconditionError("Y is numerically zero")

    d = 1.0 / np.sqrt(sig)
    W = d[:, None] * Y * d[None, :]
    w = np.linalg.eigvalsh(W)
    wmax = float(w[-1])
    wmin = float(w[0])
    cut = 1e-10 * max(1.0, abs(wmax), abs(wmin))

    alpha_pos = (-1.0 / wmin) if wmin < -cut else None
    alpha_neg = (-1.0 / wmax) if wmax > cut else None
    if alpha_pos is None and alpha_neg is None:
        raise CertificateViolationError(
            "nonzero Y produced no boundary step in either direction")
    return BoundarySteps(alpha_pos=alpha_pos, alpha_neg=alpha_neg)


def _tail_of_spectrum(vals_desc: np.ndarray, n: int, r: int) -> float:
    """Tail sum for a rank-k compression padded with n-k zero eigenvalues."""
    full = np.concatenate([vals_desc, np.zeros(n - len(vals_desc))])
    full = np.sort(full)[::-1]
    return float(max(0.0, np.sum(full[r:])))


@dataclass(frozen=True)
class ReductionStage:
    """Bookkeeping for one stage of the reduction."""

    index: int
    constant: bool
    rank_before: int
    rank_after: int
    alpha: float = 0.0


@dataclass(frozen=True)
class ReductionResult:
    trace: PathTrace
    final: PsdPoint
    stages: tuple[ReductionStage, ...]
    dimension_condition: bool


def _stage_tail(inst: LrsdpInstance, Sigma: np.ndarray, Y: np.ndarray,
                alpha: float, n: int, t: float) -> float:
    D = np.diag(Sigma).astype(complex) + (t * alpha) * Y
    ev = np.sort(np.linalg.eigvalsh(D))[::-1]
    return _tail_of_spectrum(ev, n, inst.r)


def _monotone_side(inst: LrsdpInstance, Sigma: np.ndarray, Y: np.ndarray,
                   alpha: float, n: int, probes: int = 11) -> tuple[bool, float]:
    """Decide whether the tail sum is non-increasing from 0 to alpha.

    The tail sum is concave along the stage, so it is non-increasing exactly
    when its initial slope is nonpositive; a tiny forward probe tests the
    slope and a coarse sweep guards against numerical surprises.  Returns
    ``(qualified, end_to_end_drop)``.
    """
    v0 = _stage_tail(inst, Sigma, Y, alpha, n, 0.0)
    eps_rise = _stage_tail(inst, Sigma, Y, alpha, n, 1e-5) - v0
    if eps_rise > MONOTONE_SLACK * (1.0 + abs(v0)):
        return False, 0.0
    vals = np.array([_stage_tail(inst, Sigma, Y, alpha, n, t)
                     for t in np.linspace(0.0, 1.0, probes)])
    slack = MONOTONE_SLACK * (1.0 + np.abs(vals[:-1]))
    ok = not np.any(np.diff(vals) > slack)
    return ok, float(vals[0] - vals[-1])


def reduce_rank_path(
    inst: LrsdpInstance,
    X0: PsdPoint | np.ndarray,
    samples_per_stage: int = SEGMENT_SAMPLES,
    tol: float = FEAS_TOL,
) -> ReductionResult:
    """Drive a feasible matrix to rank <= r along constraint-preserving
    linear stages with constant cost and non-increasing tail sum.

    Each non-constant stage moves along a null-space direction until an
    eigenvalue hits zero, choosing the sign on which the tail sum is
    non-increasing (both boundary sides are probed; the in-range guarantee
    comes from concavity of the tail sum).  Raises
    :class:`ReductionStuckError` when no direction exists.
    """
    start = X0 if isinstance(X0, PsdPoint) else PsdPoint.from_matrix(np.asarray(X0))
    if inst.constraint_residual(start.X) > tol:
        raise PreconditionError(
            f"starting matrix violates constraints by "
            f"{inst.constraint_residual(start.X):.3g}")

    n = inst.n
    r0 = start.rank()
    f0 = inst.cost(start.X)

    if r0 <= inst.r:
        ts = np.linspace(0.0, 1.0, 2)
        pts = np.tile(start.X.reshape(-1), (2, 1))
        trace = PathTrace(params=ts, points=pts, segments=1)
        return ReductionResult(trace=trace, final=start, stages=(),
                               dimension_condition=inst.dimension_condition)

    n_stages = r0 - inst.r
    stage_infos: list[ReductionStage] = []
    all_params: list[np.ndarray] = []
    all_points: list[np.ndarray] = []
    current = start

    for i in range(1, n_stages + 1):
        k_before = current.rank()
        local_ts = np.linspace(0.0, 1.0, samples_per_stage)
        if k_before <= r0 - i:
            pts = np.tile(current.X.reshape(-1), (samples_per_stage, 1))
            stage_infos.append(ReductionStage(
                index=i, constant=True, rank_before=k_before, rank_after=k_before))
        else:
            U, sigma = current.factors()
            Y = nullspace_direction(inst, U, sigma)
            if Y is None:
                raise ReductionStuckError(
                    i, f"stage {i}: the direction system has only the zero "
                       f"solution (rank {k_before}, {inst.m} constraints)")
            steps = boundary_step(sigma, Y)
            candidates = []
            for alpha in (steps.alpha_pos, steps.alpha_neg):
                if alpha is None:
                    continue
                ok, drop = _monotone_side(inst, sigma, Y, alpha, n)
                if ok:
                    candidates.append((drop, alpha))
            if not candidates:
                raise CertificateViolationError(
                    f"stage {i}: tail sum increases toward both boundary steps")
            _, alpha = max(candidates)

            D = lambda t: np.diag(sigma).astype(complex) + (t * alpha) * Y
            pts = np.empty((samples_per_stage, n * n), dtype=complex)
            for si, t in enumerate(local_ts):
                Xt = U @ D(t) @ U.conj().T
                pts[si] = Xt.reshape(-1)
            end = PsdPoint.from_matrix(
                U @ D(1.0) @ U.conj().T, name=f"stage {i} endpoint")
            _check_stage(inst, pts, f0, i, tol, n)
            if end.rank() >= k_before:
                raise CertificateViolationError(
                    f"stage {i}: rank did not drop ({k_before} -> {end.rank()})")
            stage_infos.append(ReductionStage(
                index=i, constant=False, rank_before=k_before,
                rank_after=end.rank(), alpha=float(alpha)))
            current = end

        offset = (i - 1) / n_stages
        params = offset + local_ts / n_stages
        if all_params:
            params, pts = params[1:], pts[1:]
        all_params.append(params)
        all_points.append(pts)

    trace = PathTrace(params=np.concatenate(all_params),
                      points=np.concatenate(all_points, axis=0),
                      segments=n_stages)
    if current.rank() > inst.r:
        raise CertificateViolationError(
            f"reduction finished at rank {current.rank()} > target {inst.r}")
    return ReductionResult(trace=trace, final=current,
                           stages=tuple(stage_infos),
                           dimension_condition=inst.dimension_condition)


def _check_stage(inst: LrsdpInstance, pts: np.ndarray, f0: float,
                 stage: int, tol: float, n: int) -> None:
    """Conservation and monotonicity checks along one stage's samples."""
    tails = np.empty(len(pts))
    for si in range(len(pts)):
        X = pts[si].reshape(n, n)
        drift = inst.constraint_residual(X)
        if drift > tol:
            raise CertificateViolationError(
                f"stage {stage}, sample {si}: constraint drift {drift:.3g}")
        fdrift = abs(inst.cost(X) - f0)
        if fdrift > tol * (1.0 + abs(f0)):
            raise CertificateViolationError(
                f"stage {stage}, sample {si}: cost drift {fdrift:.3g}")
        vals = np.sort(np.linalg.eigvalsh((X + X.conj().T) / 2))[::-1]
        if vals[-1] < -tol:
            raise CertificateViolationError(
                f"stage {stage}, sample {si}: min eigenvalue {vals[-1]:.3g}")
        tails[si] = max(0.0, float(np.sum(vals[inst.r:])))
    rises = np.diff(tails) - MONOTONE_SLACK * (1.0 + np.abs(tails[:-1]))
    if np.any(rises > 0):
        si = int(np.argmax(rises))
        raise CertificateViolationError(
            f"stage {stage}, sample {si + 1}: tail sum increases by "
            f"{np.diff(tails)[si]:.3g}")


def lrsdp_certified_problem(inst: LrsdpInstance) -> "CertifiedProblem":
    """Package an instance as a certified problem over flattened matrices."""
    from relaxcert.compose import CertifiedProblem

    n = inst.n

    def _unflatten(vec: np.ndarray) -> np.ndarray:
        X = np.asarray(vec, dtype=complex).reshape(n, n)
        return (X + X.conj().T) / 2

    def _hermiticity(vec: np.ndarray) -> float:
        X = np.asarray(vec, dtype=complex).reshape(n, n)
        return float(np.max(np.abs(X - X.conj().T)) / 2)

    def _res_relax(vec: np.ndarray) -> float:
        X = _unflatten(vec)
        lam_min = float(np.min(np.linalg.eigvalsh(X)))
        return max(_hermiticity(vec), inst.constraint_residual(X), -lam_min, 0.0)

    def _res_feas(vec: np.ndarray) -> float:
        X = _unflatten(vec)
        vals = np.sort(np.linalg.eigvalsh(X))[::-1]
        tail = float(max(0.0, np.sum(vals[inst.r:])))
        return max(_res_relax(vec), tail)

    def _lyap(vec: np.ndarray) -> float:
        return lyapunov_tail(inst, _unflatten(vec))

    def _cost(vec: np.ndarray) -> float:
        return inst.cost(_unflatten(vec))

    def _path(vec: np.ndarray) -> PathTrace:
        return reduce_rank_path(inst, _unflatten(vec)).trace

    bound = 1.0 + float(np.max(np.abs(inst.b)))
    lo = np.full(n * n, -bound - 1j * bound)
    hi = np.full(n * n, bound + 1j * bound)
    return CertifiedProblem(
        handle=ProblemHandle(cost=_cost, residual_feasible=_res_feas,
                             residual_relaxed=_res_relax, lyapunov=_lyap),
        path_factory=_path,
        segment_bound=max(1, n - inst.r),
        box=(lo, hi),
        label="lrsdp",
    )


# --- instance file schema ----------------------------------------------------

def _matrix_from_pairs(raw, n: int, name: str) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != n:
        raise ValueError(f"{name}: expected {n} rows")
    M = np.zeros((n, n), dtype=complex)
    for i, row in enumerate(raw):
        if not isinstance(row, list) or len(row) != n:
            raise ValueError(f"{name} row {i}: expected {n} entries")
        for j, entry in enumerate(row):
            if (not isinstance(entry, (list, tuple)) or len(entry) != 2
                    or not all(isinstance(v, (int, float)) for v in entry)):
                raise ValueError(
                    f"{name} entry ({i},{j}): expected [re, im] pair, got {entry!r}")
            M[i, j] = complex(entry[0], entry[1])
    return M


def _matrix_to_pairs(M: np.ndarray) -> list:
    return [[[float(M[i, j].real), float(M[i, j].imag)] for j in range(M.shape[1])]
            for i in range(M.shape[0])]


def instance_from_dict(data: dict) -> LrsdpInstance:
    for key in ("n", "m", "r", "C", "A", "b"):
        if key not in data:
            raise ValueError(f"instance: missing field {key!r}")
    n, m = int(data["n"]), int(data["m"])
    C = _matrix_from_pairs(data["C"], n, "C")
    if not isinstance(data["A"], list) or len(data["A"]) != m:
        raise ValueError(f"A: expected {m} matrices")
    A = [_matrix_from_pairs(raw, n, f"A[{i}]") for i, raw in enumerate(data["A"])]
    b = np.asarray(data["b"], dtype=float)
    if len(b) != m:
        raise ValueError(f"b: expected {m} entries, got {len(b)}")
    return LrsdpInstance(C=C, A=A, b=b, r=int(data["r"]))


def instance_to_dict(inst: LrsdpInstance) -> dict:
    return {
        "n": inst.n,
        "m": inst.m,
        "r": inst.r,
        "C": _matrix_to_pairs(inst.C),
        "A": [_matrix_to_pairs(Ai) for Ai in inst.A],
        "b": [float(v) for v in inst.b],
    }


def load_instance(path: str) -> LrsdpInstance:
    with open(path, "r", encoding="utf-8") as fh:
        return instance_from_dict(json.load(fh))


def save_instance(path: str, inst: LrsdpInstance) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)
        fh.write("\n")


def write_reduction_csv(path: str, inst: LrsdpInstance, trace: PathTrace) -> None:
    """Trace CSV with flattened row-major matrix entries."""
    from relaxcert.core import write_trace_csv

    n = inst.n
    labels = []
    for i in range(n):
        for j in range(n):
            labels += [f"X{i}{j}_re", f"X{i}{j}_im"]

    def rows(vec: np.ndarray):
        out = []
        for entry in vec:
            out += [entry.real, entry.imag]
        return out

    write_trace_csv(
        path, trace, labels, rows,
        cost=lambda vec: inst.cost(vec.reshape(n, n)),
        lyapunov=lambda vec: lyapunov_tail(
            inst, (vec.reshape(n, n) + vec.reshape(n, n).conj().T) / 2),
    )
