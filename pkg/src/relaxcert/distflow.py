"""Radial-network OPF model: case schema, DistFlow residuals, feasible and
relaxed set membership, and validation of the structural assumptions.

Units are per-unit throughout: ``v`` is voltage magnitude squared, ``ell``
is current magnitude squared, ``s``/``S`` are complex powers, ``z`` is a
complex impedance.  Lines are directed from the root toward the leaves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from relaxcert.core import FEAS_TOL, PreconditionError

# Finite stand-in for an unbounded injection box.  Reports must confirm the
# substituted bound is inactive at any solution that relies on it.
BIG_BOUND = 1e4


@dataclass(frozen=True)
class Bus:
    """Bus data: voltage-squared box and complex injection box.

    ``s_min is None`` encodes an unbounded-below injection (both parts).
    """

    id: str
    v_min: float
    v_max: float
    s_min: complex | None
    s_max: complex

    def effective_s_min(self) -> complex:
        if self.s_min is None:
            return complex(-BIG_BOUND, -BIG_BOUND)
        return self.s_min


@dataclass(frozen=True)
class Line:
    """Directed line ``tail -> head`` with series impedance and current limit."""

    tail: str
    head: str
    z: complex
    l_max: float


@dataclass(frozen=True)
class RadialNetwork:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    root: str

    def __post_init__(self) -> None:
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise ValueError("bus ids must be unique")
        if self.root not in ids:
            raise ValueError(f"root {self.root!r} is not a bus id")
        known = set(ids)
        for ln in self.lines:
            if ln.tail not in known or ln.head not in known:
                raise ValueError(f"line {ln.tail}->{ln.head} references unknown bus")
        for b in self.buses:
            if not np.isfinite([b.v_min, b.v_max]).all():
                raise ValueError(f"bus {b.id}: voltage bounds must be finite")

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @cached_property
    def bus_index(self) -> dict[str, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def tail_idx(self) -> np.ndarray:
        return np.array([self.bus_index[ln.tail] for ln in self.lines], dtype=int)

    @cached_property
    def head_idx(self) -> np.ndarray:
        return np.array([self.bus_index[ln.head] for ln in self.lines], dtype=int)

    @cached_property
    def z(self) -> np.ndarray:
        return np.array([ln.z for ln in self.lines], dtype=complex)

    @cached_property
    def l_max(self) -> np.ndarray:
        return np.array([ln.l_max for ln in self.lines], dtype=float)

    @cached_property
    def v_min(self) -> np.ndarray:
        return np.array([b.v_min for b in self.buses], dtype=float)

    @cached_property
    def v_max(self) -> np.ndarray:
        return np.array([b.v_max for b in self.buses], dtype=float)

    @cached_property
    def s_min(self) -> np.ndarray:
        return np.array([b.effective_s_min() for b in self.buses], dtype=complex)

    @cached_property
    def s_min_is_sentinel(self) -> np.ndarray:
        return np.array([b.s_min is None for b in self.buses], dtype=bool)

    @cached_property
    def s_max(self) -> np.ndarray:
        return np.array([b.s_max for b in self.buses], dtype=complex)

    def topological_lines(self) -> list[int]:
        """Line indices ordered so each line's tail was already reached.

        Requires the directed edges to form a tree rooted at ``root``.
        """
        ok, problem = tree_check(self)
        if not ok:
            raise PreconditionError(f"network is not a tree rooted at root: {problem}")
        out_lines: dict[int, list[int]] = {i: [] for i in range(self.n_bus)}
        for e, t in enumerate(self.tail_idx):
            out_lines[int(t)].append(e)
        order: list[int] = []
        stack = [self.bus_index[self.root]]
        while stack:
            node = stack.pop()
            for e in out_lines[node]:
                order.append(e)
                stack.append(int(self.head_idx[e]))
        return order


def tree_check(net: RadialNetwork) -> tuple[bool, str]:
    """Check the directed lines form a tree rooted at ``net.root``."""
    n = net.n_bus
    root = net.bus_index[net.root]
    indeg = np.zeros(n, dtype=int)
    for h in net.head_idx:
        indeg[h] += 1
    if indeg[root] != 0:
        return False, f"root bus {net.root!r} has an incoming line"
    for i, b in enumerate(net.buses):
        if i != root and indeg[i] != 1:
            return False, f"bus {b.id!r} has in-degree {indeg[i]} (expected 1)"
    if net.n_line != n - 1:
        return False, f"{net.n_line} lines for {n} buses (expected {n - 1})"
    # in-degrees are right, so any unreachable bus implies a directed cycle
    out_lines: dict[int, list[int]] = {i: [] for i in range(n)}
    for e, t in enumerate(net.tail_idx):
        out_lines[int(t)].append(e)
    seen = {root}
    stack = [root]
    while stack:
        node = stack.pop()
        for e in out_lines[node]:
            h = int(net.head_idx[e])
            if h not in seen:
                seen.add(h)
                stack.append(h)
    if len(seen) != n:
        cyc = [b.id for i, b in enumerate(net.buses) if i not in seen]
        return False, f"buses {cyc} unreachable from root (cycle present)"
    return True, ""


@dataclass(frozen=True)
class OperatingPoint:
    """Decision tuple ``(s, v, ell, S)``: bus injections, squared voltages,
    squared currents and sending-end line powers."""

    s: np.ndarray
    v: np.ndarray
    ell: np.ndarray
    S: np.ndarray

    def __post_init__(self) -> None:
        s = np.asarray(self.s, dtype=complex)
        v = np.asarray(self.v, dtype=float)
        ell = np.asarray(self.ell, dtype=float)
        S = np.asarray(self.S, dtype=complex)
        if s.ndim != 1 or v.ndim != 1 or ell.ndim != 1 or S.ndim != 1:
            raise ValueError("operating point components must be 1-D")
        if len(s) != len(v) or len(ell) != len(S):
            raise ValueError("bus-indexed and line-indexed components disagree in length")
        for name, arr in (("s", s), ("v", v), ("ell", ell), ("S", S)):
            if not np.all(np.isfinite(arr.view(float) if arr.dtype == complex else arr)):
                raise ValueError(f"{name} must be finite")
        if np.any(v < -1e-9) or np.any(ell < -1e-9):
            raise ValueError("v and ell must be nonnegative")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "ell", ell)
        object.__setattr__(self, "S", S)

    def _check_net(self, net: RadialNetwork) -> None:
        if len(self.s) != net.n_bus or len(self.S) != net.n_line:
            raise ValueError(
                f"point has {len(self.s)} buses / {len(self.S)} lines, "
                f"network has {net.n_bus} / {net.n_line}")


@dataclass(frozen=True)
class OpfCost:
    """Separable convex cost: per-bus linear plus quadratic terms on
    Re(s_j) and Im(s_j)."""

    cp: np.ndarray
    cq: np.ndarray
    qp: np.ndarray
    qq: np.ndarray

    def __post_init__(self) -> None:
        for name in ("cp", "cq", "qp", "qq"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1 or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be a finite 1-D array")
            object.__setattr__(self, name, arr)
        n = len(self.cp)
        if any(len(getattr(self, name)) != n for name in ("cq", "qp", "qq")):
            raise ValueError("cost coefficient arrays must share length")

    def value(self, s: np.ndarray) -> float:
        p, q = s.real, s.imag
        return float(self.cp @ p + self.cq @ q + self.qp @ p**2 + self.qq @ q**2)

    def gradient(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Partials with respect to (Re s, Im s)."""
        return self.cp + 2 * self.qp * s.real, self.cq + 2 * self.qq * s.imag

    def strong_increase_constant(self, net: RadialNetwork) -> float:
        """Infimum over the injection box of d f / d Re(s_j), minimized over j.

        A positive value certifies the cost is strongly increasing in every
        real injection over the instance box.  Quadratic terms are monotone
        in Re(s), so the infimum sits at the lower bound; with the big-box
        sentinel for unbounded injections this usually kills qp > 0.
        """
        lo = net.s_min.real
        return float(np.min(self.cp + 2.0 * self.qp * lo))

    def imag_nondecrease_constant(self, net: RadialNetwork) -> float:
        lo = net.s_min.imag
        return float(np.min(self.cq + 2.0 * self.qq * lo))


@dataclass(frozen=True)
class PfResiduals:
    """Signed DistFlow residuals per line and per bus.

    ``ohm`` is the voltage-drop equation residual, ``cone_eq`` the product
    form ``v_tail * ell - |S|^2`` (positive means cone slack), ``balance``
    the complex injection balance residual.
    """

    ohm: np.ndarray
    cone_eq: np.ndarray
    balance: np.ndarray


def pf_residuals(net: RadialNetwork, x: OperatingPoint) -> PfResiduals:
    x._check_net(net)
    z, t, h = net.z, net.tail_idx, net.head_idx
    ohm = x.v[t] - x.v[h] - 2.0 * (z * np.conj(x.S)).real + np.abs(z) ** 2 * x.ell
    cone_eq = x.v[t] * x.ell - np.abs(x.S) ** 2
    balance = x.s.astype(complex).copy()
    np.add.at(balance, t, -x.S)
    np.add.at(balance, h, x.S - z * x.ell)
    return PfResiduals(ohm=ohm, cone_eq=cone_eq, balance=balance)


def _box_violations(net: RadialNetwork, x: OperatingPoint) -> float:
    worst = 0.0
    worst = max(worst, float(np.max(net.v_min - x.v, initial=0.0)))
    worst = max(worst, float(np.max(x.v - net.v_max, initial=0.0)))
    worst = max(worst, float(np.max(x.ell - net.l_max, initial=0.0)))
    worst = max(worst, float(np.max(net.s_min.real - x.s.real, initial=0.0)))
    worst = max(worst, float(np.max(net.s_min.imag - x.s.imag, initial=0.0)))
    worst = max(worst, float(np.max(x.s.real - net.s_max.real, initial=0.0)))
    worst = max(worst, float(np.max(x.s.imag - net.s_max.imag, initial=0.0)))
    return worst


def residual_Xhat(net: RadialNetwork, cost: OpfCost | None, x: OperatingPoint) -> float:
    """Worst violation of the relaxed set: DistFlow affine equations, boxes,
    and the one-sided cone inequality |S|^2 <= v * ell.

    The cost argument does not enter the set; it is accepted so solve,
    restore and certify call sites can share one calling convention.
    """
    res = pf_residuals(net, x)
    worst = float(np.max(np.abs(res.ohm), initial=0.0))
    worst = max(worst, float(np.max(np.abs(res.balance), initial=0.0)))
    worst = max(worst, _box_violations(net, x))
    worst = max(worst, float(np.max(-res.cone_eq, initial=0.0)))
    return worst


def residual_X(net: RadialNetwork, cost: OpfCost | None, x: OperatingPoint) -> float:
    """Worst violation of the original feasible set (cone held at equality)."""
    res = pf_residuals(net, x)
    worst = residual_Xhat(net, cost, x)
    return max(worst, float(np.max(np.abs(res.cone_eq), initial=0.0)))


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool | None  # None means deferred to another module
    witness: str = ""


@dataclass(frozen=True)
class AssumptionReport:
    checks: tuple[AssumptionCheck, ...]

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def structural_ok(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def failures(self) -> list[AssumptionCheck]:
        return [c for c in self.checks if c.passed is False]

    def as_dict(self) -> dict[str, Any]:
        return {
            c.name: {"passed": c.passed, "witness": c.witness} for c in self.checks
        }


def validate_assumptions(net: RadialNetwork, cost: OpfCost) -> AssumptionReport:
    """Check the structural assumptions; feasibility is deferred to the solver."""
    checks: list[AssumptionCheck] = []

    ok, problem = tree_check(net)
    checks.append(AssumptionCheck("tree", ok, problem))

    bad = [ln for ln in net.lines if not (ln.z.real > 0 and ln.z.imag > 0)]
    checks.append(AssumptionCheck(
        "impedance_positive", not bad,
        "" if not bad else f"line {bad[0].tail}->{bad[0].head} has z={bad[0].z}"))

    box_bad = ""
    for b in net.buses:
        smin = b.effective_s_min()
        if b.v_min <= 0:
            box_bad = f"bus {b.id}: v_min={b.v_min} must be positive"
        elif b.v_min > b.v_max:
            box_bad = f"bus {b.id}: v_min > v_max"
        elif smin.real > b.s_max.real or smin.imag > b.s_max.imag:
            box_bad = f"bus {b.id}: s_min > s_max"
        if box_bad:
            break
    checks.append(AssumptionCheck("boxes_ordered", not box_bad, box_bad))

    if len(cost.cp) != net.n_bus:
        checks.append(AssumptionCheck(
            "cost_monotone", False,
            f"cost has {len(cost.cp)} buses, network has {net.n_bus}"))
    else:
        witness = ""
        if np.any(cost.qp < 0) or np.any(cost.qq < 0):
            j = int(np.argmin(np.minimum(cost.qp, cost.qq)))
            witness = f"bus {net.buses[j].id}: negative quadratic coefficient"
        else:
            c = cost.strong_increase_constant(net)
            cphi = cost.imag_nondecrease_constant(net)
            if c <= 0:
                j = int(np.argmin(cost.cp + 2 * cost.qp * net.s_min.real))
                witness = (f"bus {net.buses[j].id}: cost not strongly increasing in "
                           f"Re(s) over the injection box (constant {c:.3g})")
            elif cphi < 0:
                j = int(np.argmin(cost.cq + 2 * cost.qq * net.s_min.imag))
                witness = (f"bus {net.buses[j].id}: cost decreasing in Im(s) "
                           f"over the injection box")
        checks.append(AssumptionCheck("cost_monotone", not witness, witness))

    checks.append(AssumptionCheck(
        "feasible", None, "deferred: checked by the relaxation solver"))

    witness = ""
    if not bad:  # meaningless if impedances are degenerate
        y2 = 1.0 / np.abs(net.z) ** 2
        limit = net.v_min[net.tail_idx] * y2
        viol = net.l_max - limit
        if np.any(viol > 0):
            e = int(np.argmax(viol))
            ln = net.lines[e]
            witness = (f"line {ln.tail}->{ln.head}: l_max={ln.l_max:.6g} exceeds "
                       f"v_min*|y|^2={limit[e]:.6g}")
    checks.append(AssumptionCheck("current_limit", not witness, witness))

    return AssumptionReport(checks=tuple(checks))


def forward_point(
    net: RadialNetwork,
    root_v: float,
    line_S: Sequence[complex] | np.ndarray,
    extra_ell: Sequence[float] | np.ndarray | None = None,
) -> OperatingPoint:
    """Build a point satisfying the affine DistFlow equations exactly.

    Fixes the root voltage, takes the given sending-end powers, sets each
    line's current to ``|S|^2 / v_tail`` plus the optional ``extra_ell``
    slack, then derives downstream voltages and bus injections by forward
    substitution.  With ``extra_ell`` zero the point satisfies the full
    DistFlow system; positive slack yields a cone-interior relaxed point.
    """
    S = np.asarray(line_S, dtype=complex)
    if len(S) != net.n_line:
        raise ValueError(f"need {net.n_line} line powers, got {len(S)}")
    extra = np.zeros(net.n_line) if extra_ell is None else np.asarray(extra_ell, dtype=float)
    if len(extra) != net.n_line:
        raise ValueError("extra_ell length mismatch")
    if np.any(extra < 0):
        raise ValueError("extra_ell must be nonnegative")

    v = np.zeros(net.n_bus)
    ell = np.zeros(net.n_line)
    v[net.bus_index[net.root]] = root_v
    for e in net.topological_lines():
        t, h = int(net.tail_idx[e]), int(net.head_idx[e])
        if v[t] <= 0:
            raise ValueError(f"nonpositive voltage at bus {net.buses[t].id} "
                             "during forward substitution")
        z = net.z[e]
        ell[e] = abs(S[e]) ** 2 / v[t] + extra[e]
        v[h] = v[t] - 2.0 * (z * np.conj(S[e])).real + abs(z) ** 2 * ell[e]

    s = np.zeros(net.n_bus, dtype=complex)
    np.add.at(s, net.tail_idx, S)
    np.add.at(s, net.head_idx, -(S - net.z * ell))
    return OperatingPoint(s=s, v=v, ell=ell, S=S)


def sample_relaxed_points(
    net: RadialNetwork,
    cost: OpfCost,
    count: int,
    rng: np.random.Generator,
    slack_range: tuple[float, float] = (0.05, 0.5),
    tol: float = FEAS_TOL,
) -> list[OperatingPoint]:
    """Draw points of the relaxed set with strict cone slack on every line.

    Uses forward substitution with inflated currents, shrinking the draw
    scale until the point clears every box of the instance.
    """
    root_i = net.bus_index[net.root]
    root_v = 0.5 * (net.v_min[root_i] + net.v_max[root_i])
    points: list[OperatingPoint] = []
    for _ in range(count):
        scale = 1.0
        for attempt in range(60):
            S = scale * (rng.normal(0, 0.3, net.n_line)
                         + 1j * rng.normal(0, 0.3, net.n_line))
            slack = rng.uniform(*slack_range, net.n_line) * scale
            try:
                x = forward_point(net, root_v, S, extra_ell=slack)
            except ValueError:
                scale *= 0.6
                continue
            if residual_Xhat(net, cost, x) <= tol and np.min(slack) > 10 * tol:
                points.append(x)
                break
            if attempt % 5 == 4:
                scale *= 0.6
        else:
            raise PreconditionError(
                "could not sample a relaxed point inside the instance boxes")
    return points


# --- flat-vector view -------------------------------------------------------
#
# Certify and compose work on plain complex vectors; the layout is bus-major
# for s and v, then line-major for ell and S.

def pack_point(x: OperatingPoint) -> np.ndarray:
    return np.concatenate([
        x.s,
        x.v.astype(complex),
        x.ell.astype(complex),
        x.S,
    ])


def unpack_point(net: RadialNetwork, vec: np.ndarray) -> OperatingPoint:
    n, e = net.n_bus, net.n_line
    if len(vec) != 2 * n + 2 * e:
        raise ValueError(f"flat vector has length {len(vec)}, expected {2 * n + 2 * e}")
    return OperatingPoint(
        s=vec[:n],
        v=vec[n:2 * n].real,
        ell=vec[2 * n:2 * n + e].real,
        S=vec[2 * n + e:],
    )


def coordinate_labels(net: RadialNetwork) -> list[str]:
    """Column labels for trace CSV export (bus-major s then v, line-major
    ell then S; real parts before imaginary)."""
    labels: list[str] = []
    for b in net.buses:
        labels += [f"s{b.id}_re", f"s{b.id}_im"]
    labels += [f"v{b.id}" for b in net.buses]
    labels += [f"ell_{ln.tail}_{ln.head}" for ln in net.lines]
    for ln in net.lines:
        labels += [f"S_{ln.tail}_{ln.head}_re", f"S_{ln.tail}_{ln.head}_im"]
    return labels


def coordinate_rows(net: RadialNetwork, vec: np.ndarray) -> list[float]:
    x = unpack_point(net, vec)
    row: list[float] = []
    for j in range(net.n_bus):
        row += [x.s[j].real, x.s[j].imag]
    row += list(x.v)
    row += list(x.ell)
    for e in range(net.n_line):
        row += [x.S[e].real, x.S[e].imag]
    return row


def sentinel_bound_active(net: RadialNetwork, x: OperatingPoint,
                          margin: float = 1.0) -> list[str]:
    """Buses whose big-box stand-in for an unbounded injection is within
    ``margin`` of binding; nonempty means the substitution distorted the
    problem and results should not be trusted."""
    active = []
    for j, b in enumerate(net.buses):
        if net.s_min_is_sentinel[j]:
            smin = net.s_min[j]
            if (x.s[j].real - smin.real < margin) or (x.s[j].imag - smin.imag < margin):
                active.append(b.id)
    return active


# --- case file schema -------------------------------------------------------

def _require(obj: dict, key: str, context: str) -> Any:
    if key not in obj:
        raise ValueError(f"{context}: missing field {key!r}")
    return obj[key]


def _complex_pair(value: Any, context: str) -> complex:
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) for v in value)):
        raise ValueError(f"{context}: expected [re, im] pair, got {value!r}")
    return complex(value[0], value[1])


def case_from_dict(data: dict) -> tuple[RadialNetwork, OpfCost]:
    buses = []
    for i, raw in enumerate(_require(data, "buses", "case")):
        ctx = f"buses[{i}]"
        s_min_raw = _require(raw, "s_min", ctx)
        buses.append(Bus(
            id=str(_require(raw, "id", ctx)),
            v_min=float(_require(raw, "v_min", ctx)),
            v_max=float(_require(raw, "v_max", ctx)),
            s_min=None if s_min_raw is None else _complex_pair(s_min_raw, f"{ctx}.s_min"),
            s_max=_complex_pair(_require(raw, "s_max", ctx), f"{ctx}.s_max"),
        ))
    lines = []
    for i, raw in enumerate(_require(data, "lines", "case")):
        ctx = f"lines[{i}]"
        lines.append(Line(
            tail=str(_require(raw, "from", ctx)),
            head=str(_require(raw, "to", ctx)),
            z=_complex_pair(_require(raw, "z", ctx), f"{ctx}.z"),
            l_max=float(_require(raw, "l_max", ctx)),
        ))
    net = RadialNetwork(buses=tuple(buses), lines=tuple(lines),
                        root=str(_require(data, "root", "case")))
    raw_cost = _require(data, "cost", "case")
    cost = OpfCost(
        cp=np.asarray(_require(raw_cost, "cp", "cost"), dtype=float),
        cq=np.asarray(_require(raw_cost, "cq", "cost"), dtype=float),
        qp=np.asarray(_require(raw_cost, "qp", "cost"), dtype=float),
        qq=np.asarray(_require(raw_cost, "qq", "cost"), dtype=float),
    )
    if len(cost.cp) != net.n_bus:
        raise ValueError(
            f"cost.cp: {len(cost.cp)} entries for {net.n_bus} buses")
    return net, cost


def case_to_dict(net: RadialNetwork, cost: OpfCost) -> dict:
    return {
        "buses": [
            {
                "id": b.id,
                "v_min": b.v_min,
                "v_max": b.v_max,
                "s_min": None if b.s_min is None else [b.s_min.real, b.s_min.imag],
                "s_max": [b.s_max.real, b.s_max.imag],
            }
            for b in net.buses
        ],
        "lines": [
            {"from": ln.tail, "to": ln.head, "z": [ln.z.real, ln.z.imag],
             "l_max": ln.l_max}
            for ln in net.lines
        ],
        "root": net.root,
        "cost": {
            "cp": list(cost.cp), "cq": list(cost.cq),
            "qp": list(cost.qp), "qq": list(cost.qq),
        },
    }


def load_case(path: str) -> tuple[RadialNetwork, OpfCost]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return case_from_dict(data)


def save_case(path: str, net: RadialNetwork, cost: OpfCost) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(case_to_dict(net, cost), fh, indent=2)
        fh.write("\n")
