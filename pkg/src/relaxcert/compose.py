"""Combinators that build certified problems from certified primitives:
cost composition, union of feasible sets (product Lyapunov function), and
intersection of feasible sets (sum Lyapunov function, concatenated paths).

Structural hypotheses (path coincidence for unions, block separability for
intersections) are verified on quasi-random samples, not symbolically; a
failed sample raises :class:`CompositionError` with the witness point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.stats import qmc

from relaxcert.core import FEAS_TOL, PathTrace, ProblemHandle

SAMPLE_COUNT = 200  # default quasi-random samples for contract checks
ZERO_TOL = 1e-9     # Lyapunov zero-set and coincidence tolerance


class CompositionError(ValueError):
    """A sampled structural hypothesis of a combinator failed."""


@dataclass(frozen=True)
class CertifiedProblem:
    """A problem handle bundled with its restoration-path factory.

    ``path_factory`` maps a point of the relaxed set that is infeasible for
    the original set to a trace ending in the original set along which cost
    and Lyapunov value do not increase.  ``segment_bound`` is the declared
    cap on linear pieces per path (the uniform-regularity proxy) and ``box``
    bounds every path sample.
    """

    handle: ProblemHandle
    path_factory: Callable[[np.ndarray], PathTrace]
    segment_bound: int
    box: tuple[np.ndarray, np.ndarray]
    label: str = ""

    @property
    def dim(self) -> int:
        return len(self.box[0])

    def lyapunov(self, x: np.ndarray) -> float:
        if self.handle.lyapunov is None:
            raise ValueError(f"problem {self.label!r} carries no Lyapunov function")
        return self.handle.lyapunov(x)


def sample_box(
    box: tuple[np.ndarray, np.ndarray], count: int, seed: int = 0
) -> np.ndarray:
    """Quasi-random complex points filling a box (independent real/imag)."""
    lo, hi = np.asarray(box[0], dtype=complex), np.asarray(box[1], dtype=complex)
    d = len(lo)
    sampler = qmc.Halton(d=2 * d, scramble=True, seed=seed)
    raw = sampler.random(count)
    re = lo.real + raw[:, :d] * (hi.real - lo.real)
    im = lo.imag + raw[:, d:] * (hi.imag - lo.imag)
    return re + 1j * im


def _points_between(p: CertifiedProblem, count: int, seed: int) -> list[np.ndarray]:
    """Sampled points of the relaxed set that are infeasible for the original."""
    pts = []
    for x in sample_box(p.box, count, seed):
        if (p.handle.residual_relaxed(x) <= FEAS_TOL
                and p.handle.residual_feasible(x) > FEAS_TOL):
            pts.append(x)
    return pts


def _trace_gap(t1: PathTrace, t2: PathTrace, grid: int = 33) -> float:
    ts = np.linspace(0.0, 1.0, grid)
    gap = 0.0
    for t in ts:
        d = np.abs(t1.evaluate(t) - t2.evaluate(t))
        gap = max(gap, float(max(d.max(initial=0.0), 0.0)))
    return gap


def _box_intersection(p1: CertifiedProblem, p2: CertifiedProblem):
    lo1, hi1 = p1.box
    lo2, hi2 = p2.box
    lo = np.maximum(lo1.real, lo2.real) + 1j * np.maximum(lo1.imag, lo2.imag)
    hi = np.minimum(hi1.real, hi2.real) + 1j * np.minimum(hi1.imag, hi2.imag)
    if np.any(lo.real > hi.real) or np.any(lo.imag > hi.imag):
        raise CompositionError("problem boxes do not intersect")
    return lo, hi


def compose_cost(
    p: CertifiedProblem,
    g: Callable[[float], float],
    samples: int = SAMPLE_COUNT,
    seed: int = 0,
) -> CertifiedProblem:
    """Replace the cost by ``g(cost)`` for non-decreasing convex ``g``.

    The Lyapunov function and paths carry over unchanged.  ``g`` is
    spot-checked for monotonicity and midpoint convexity over the range of
    costs seen on box samples.
    """
    xs = sample_box(p.box, samples, seed)
    costs = np.array([p.handle.cost(x) for x in xs])
    lo, hi = float(np.min(costs)), float(np.max(costs))
    if hi <= lo:
        hi = lo + 1.0
    ys = np.linspace(lo, hi, 65)
    gs = np.array([g(y) for y in ys])
    scale = max(1.0, float(np.max(np.abs(gs))))
    if np.any(np.diff(gs) < -ZERO_TOL * scale):
        i = int(np.argmin(np.diff(gs)))
        raise CompositionError(
            f"g is not non-decreasing near y={ys[i]:.6g}")
    second = gs[:-2] - 2 * gs[1:-1] + gs[2:]
    if np.any(second < -ZERO_TOL * scale):
        i = int(np.argmin(second))
        raise CompositionError(f"g is not convex near y={ys[i + 1]:.6g}")

    base_cost = p.handle.cost
    handle = replace(p.handle, cost=lambda x: g(base_cost(x)))
    return replace(p, handle=handle, label=f"compose({p.label})")


def union_feasible(
    p1: CertifiedProblem,
    p2: CertifiedProblem,
    mode: str = "sum",
    lam: float = 0.5,
    samples: int = SAMPLE_COUNT,
    seed: int = 0,
) -> CertifiedProblem:
    """Union of feasible sets inside the intersection of the relaxations.

    The new Lyapunov function is the product of the primitives' and the new
    paths are the first primitive's; this requires the two path factories to
    coincide on the relaxed-but-infeasible region, which is checked on
    sampled points.
    """
    if p1.dim != p2.dim:
        raise CompositionError("primitives live in different ambient spaces")
    if mode not in ("sum", "max"):
        raise CompositionError(f"unknown cost mode {mode!r}")
    if mode == "sum" and not 0.0 < lam < 1.0:
        raise CompositionError("sum mode needs lam strictly inside (0, 1)")

    box = _box_intersection(p1, p2)
    h1, h2 = p1.handle, p2.handle

    def residual_relaxed(x):
        return max(h1.residual_relaxed(x), h2.residual_relaxed(x))

    def residual_feasible(x):
        return max(min(h1.residual_feasible(x), h2.residual_feasible(x)),
                   residual_relaxed(x))

    def lyapunov(x):
        return h1.lyapunov(x) * h2.lyapunov(x)

    if mode == "sum":
        cost = lambda x: lam * h1.cost(x) + (1.0 - lam) * h2.cost(x)
    else:
        cost = lambda x: max(h1.cost(x), h2.cost(x))

    composite = CertifiedProblem(
        handle=ProblemHandle(cost=cost, residual_feasible=residual_feasible,
                             residual_relaxed=residual_relaxed, lyapunov=lyapunov),
        path_factory=p1.path_factory,
        segment_bound=p1.segment_bound,
        box=box,
        label=f"union({p1.label},{p2.label})",
    )

    for x in _points_between(composite, samples, seed):
        gap = _trace_gap(p1.path_factory(x), p2.path_factory(x))
        if gap > ZERO_TOL:
            raise CompositionError(
                f"path factories diverge by {gap:.3g} at sampled point {x}")
    return composite


def intersect_feasible(
    p1: CertifiedProblem,
    p2: CertifiedProblem,
    split: tuple[Sequence[int], Sequence[int]],
    mode: str = "sum",
    lam: float = 0.5,
    samples: int = SAMPLE_COUNT,
    seed: int = 0,
) -> CertifiedProblem:
    """Intersection of feasible sets over a shared relaxation.

    ``split`` gives the coordinate blocks the two primitives own.  Each
    primitive's cost and Lyapunov function may depend only on its own block
    and its paths must leave the other block untouched (checked on samples).
    The new Lyapunov function is the sum; paths fix one block at a time,
    concatenating when both blocks start infeasible.
    """
    if p1.dim != p2.dim:
        raise CompositionError("primitives live in different ambient spaces")
    if mode not in ("sum", "max"):
        raise CompositionError(f"unknown cost mode {mode!r}")
    blk1 = np.asarray(split[0], dtype=int)
    blk2 = np.asarray(split[1], dtype=int)
    if sorted([*blk1, *blk2]) != list(range(p1.dim)):
        raise CompositionError("split blocks must partition the coordinates")

    box = _box_intersection(p1, p2)
    h1, h2 = p1.handle, p2.handle
    xs = sample_box(box, samples, seed)

    # separability: each primitive must ignore the other block
    rng = np.random.default_rng(seed)
    for p, own, other in ((p1, blk1, blk2), (p2, blk2, blk1)):
        for x in xs[: min(len(xs), 50)]:
            y = x.copy()
            shuffle_src = xs[rng.integers(0, len(xs))]
            y[other] = shuffle_src[other]
            scale = 1.0 + abs(p.handle.cost(x))
            if abs(p.handle.cost(y) - p.handle.cost(x)) > ZERO_TOL * scale:
                raise CompositionError(
                    f"{p.label or 'primitive'}: cost depends on the foreign block "
                    f"(witness {x})")
            vx, vy = p.lyapunov(x), p.lyapunov(y)
            if abs(vx - vy) > ZERO_TOL * (1.0 + abs(vx)):
                raise CompositionError(
                    f"{p.label or 'primitive'}: Lyapunov value depends on the "
                    f"foreign block (witness {x})")

    # paths must leave the foreign block constant
    for p, other in ((p1, blk2), (p2, blk1)):
        for x in _points_between(p, samples, seed)[:20]:
            tr = p.path_factory(x)
            drift = np.max(np.abs(tr.points[:, other] - tr.points[0, other]),
                           initial=0.0)
            if drift > ZERO_TOL:
                raise CompositionError(
                    f"{p.label or 'primitive'}: path moves the foreign block by "
                    f"{drift:.3g} (witness {x})")

    def residual_relaxed(x):
        return max(h1.residual_relaxed(x), h2.residual_relaxed(x))

    def residual_feasible(x):
        return max(h1.residual_feasible(x), h2.residual_feasible(x))

    def lyapunov(x):
        return h1.lyapunov(x) + h2.lyapunov(x)

    if mode == "sum":
        cost = lambda x: lam * h1.cost(x) + (1.0 - lam) * h2.cost(x)
    else:
        cost = lambda x: max(h1.cost(x), h2.cost(x))

    def path_factory(x: np.ndarray) -> PathTrace:
        v1, v2 = h1.lyapunov(x), h2.lyapunov(x)
        if v1 <= ZERO_TOL:
            return p2.path_factory(x)
        if v2 <= ZERO_TOL:
            return p1.path_factory(x)
        first = p1.path_factory(x)
        second = p2.path_factory(first.end)
        joint_gap = float(np.max(np.abs(second.start - first.end), initial=0.0))
        if joint_gap > ZERO_TOL:
            raise CompositionError(
                f"second-stage path does not start at the first stage's end "
                f"(gap {joint_gap:.3g})")
        params = np.concatenate([0.5 * first.params, 0.5 + 0.5 * second.params[1:]])
        points = np.concatenate([first.points, second.points[1:]], axis=0)
        return PathTrace(params=params, points=points,
                         segments=first.segments + second.segments)

    return CertifiedProblem(
        handle=ProblemHandle(cost=cost, residual_feasible=residual_feasible,
                             residual_relaxed=residual_relaxed, lyapunov=lyapunov),
        path_factory=path_factory,
        segment_bound=p1.segment_bound + p2.segment_bound,
        box=box,
        label=f"intersect({p1.label},{p2.label})",
    )
