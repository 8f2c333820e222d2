"""Tests for the restoration machinery: Lyapunov value, gap roots, path."""

import numpy as np
import pytest

from gen import random_radial_network
from relaxcert.core import PreconditionError
from relaxcert.distflow import (
    Bus,
    Line,
    OperatingPoint,
    OpfCost,
    RadialNetwork,
    forward_point,
    pf_residuals,
    residual_X,
    unpack_point,
)
from relaxcert.restore import (
    cprime_margin,
    cprime_reference,
    edge_delta,
    edge_deltas,
    lyapunov_V,
    restoration_path,
    write_restoration_csv,
)


def line_net(z=0.02 + 0.02j, l_max=5.0):
    buses = (
        Bus(id="0", v_min=0.9, v_max=1.1, s_min=None, s_max=complex(10, 10)),
        Bus(id="1", v_min=0.9, v_max=1.1, s_min=None, s_max=complex(10, 10)),
    )
    return RadialNetwork(buses=buses,
                         lines=(Line(tail="0", head="1", z=z, l_max=l_max),),
                         root="0")


def linear_cost(n, cp=1.0, cq=1.0):
    return OpfCost(cp=np.full(n, cp), cq=np.full(n, cq),
                   qp=np.zeros(n), qq=np.zeros(n))


class TestLyapunov:
    def test_zero_on_cone_tight_points(self):
        net = line_net()
        x = forward_point(net, 1.0, [0.4 + 0.2j])
        assert lyapunov_V(net, x) <= 1e-14

    def test_single_line_value(self):
        net = line_net()
        x = OperatingPoint(s=np.zeros(2, complex), v=np.array([1.0, 1.0]),
                           ell=np.array([4.0]), S=np.zeros(1, complex))
        assert lyapunov_V(net, x) == pytest.approx(4.0)

    def test_additive_over_lines(self):
        buses = tuple(Bus(id=str(i), v_min=0.9, v_max=1.1, s_min=None,
                          s_max=complex(10, 10)) for i in range(3))
        lines = (Line(tail="0", head="1", z=0.01 + 0.01j, l_max=9.0),
                 Line(tail="1", head="2", z=0.01 + 0.01j, l_max=9.0))
        net = RadialNetwork(buses=buses, lines=lines, root="0")
        x = OperatingPoint(s=np.zeros(3, complex), v=np.ones(3),
                           ell=np.array([0.25, 0.5]), S=np.zeros(2, complex))
        assert lyapunov_V(net, x) == pytest.approx(0.75)

    def test_negative_slack_rejected(self):
        net = line_net()
        x = OperatingPoint(s=np.zeros(2, complex), v=np.array([1.0, 1.0]),
                           ell=np.array([0.0]), S=np.array([1.0 + 0j]))
        with pytest.raises(PreconditionError):
            lyapunov_V(net, x)


class TestEdgeDelta:
    def test_tight_line_gives_zero(self):
        net = line_net()
        x = forward_point(net, 1.0, [0.4 + 0.2j])
        gap = edge_delta(net, x, 0)
        assert gap.delta == 0.0 and not gap.in_M

    def test_golden_ratio_root(self):
        # coefficients a2=1, a1=1, a0=-1 -> delta = (sqrt(5)-1)/2
        # realized with z: |z|^2/4 = 1, v=1, S=0, ell=1
        z = complex(np.sqrt(2), np.sqrt(2))  # |z|^2 = 4
        buses = (Bus(id="0", v_min=0.5, v_max=2.0, s_min=None, s_max=complex(10, 10)),
                 Bus(id="1", v_min=0.5, v_max=2.0, s_min=None, s_max=complex(10, 10)))
        net = RadialNetwork(buses=buses,
                            lines=(Line(tail="0", head="1", z=z, l_max=1.0),),
                            root="0")
        x = OperatingPoint(s=np.zeros(2, complex), v=np.array([1.0, 1.0]),
                           ell=np.array([1.0]), S=np.zeros(1, complex))
        gap = edge_delta(net, x, 0)
        assert gap.in_M
        assert gap.delta == pytest.approx((np.sqrt(5) - 1) / 2, abs=1e-12)

    def test_pure_quadratic_root(self):
        # a2=1, a1=0, a0=-4 -> delta = 2; force a1 = 0 via S with
        # Re(z S^H) = v.  z = sqrt(2)(1+i): Re(z S^H) = sqrt(2)(Re S + Im S).
        z = complex(np.sqrt(2), np.sqrt(2))
        buses = (Bus(id="0", v_min=0.5, v_max=2.0, s_min=None, s_max=complex(10, 10)),
                 Bus(id="1", v_min=0.5, v_max=2.0, s_min=None, s_max=complex(10, 10)))
        net = RadialNetwork(buses=buses,
                            lines=(Line(tail="0", head="1", z=z, l_max=9.0),),
                            root="0")
        s_re = 1.0 / (2 * np.sqrt(2))
        S = complex(s_re, s_re)  # Re(z S^H) = 1 = v
        ell = (abs(S) ** 2 + 4.0) / 1.0  # slack 4
        x = OperatingPoint(s=np.zeros(2, complex), v=np.array([1.0, 1.0]),
                           ell=np.array([ell]), S=np.array([S]))
        gap = edge_delta(net, x, 0)
        assert gap.delta == pytest.approx(2.0, abs=1e-12)

    def test_root_closes_cone_gap_identity(self):
        # |S - (d/2) z|^2 - v (ell - d) == phi(d) == 0 at the root
        rng = np.random.default_rng(3)
        net, _ = random_radial_network(rng, n_bus=6)
        S = rng.normal(0, 0.3, net.n_line) + 1j * rng.normal(0, 0.3, net.n_line)
        x = forward_point(net, 1.0, S, extra_ell=rng.uniform(0.05, 0.4, net.n_line))
        delta, in_M = edge_deltas(net, x)
        assert np.all(in_M)
        for e in range(net.n_line):
            d = delta[e]
            lhs = abs(x.S[e] - 0.5 * d * net.z[e]) ** 2
            rhs = x.v[net.tail_idx[e]] * (x.ell[e] - d)
            assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


class TestRestorationPath:
    def test_already_feasible_is_rejected(self):
        net = line_net()
        cost = linear_cost(2)
        x = forward_point(net, 1.0, [0.4 + 0.2j])
        with pytest.raises(PreconditionError):
            restoration_path(net, cost, x)

    def test_two_bus_endpoint_and_decrease(self):
        net = line_net(z=0.02 + 0.02j)
        cost = linear_cost(2)
        x = forward_point(net, 1.0, [0.5 + 0.2j], extra_ell=[0.3])
        trace = restoration_path(net, cost, x)
        assert trace.segments == 1

        end = unpack_point(net, trace.end)
        cone = pf_residuals(net, end).cone_eq
        assert abs(cone[0]) <= 1e-10
        assert residual_X(net, cost, end) <= 1e-8

        f0 = cost.value(unpack_point(net, trace.start).s)
        f1 = cost.value(end.s)
        assert f1 < f0
        assert lyapunov_V(net, end) <= 1e-10

    def test_sampled_values_strictly_decrease(self):
        net = line_net(z=0.02 + 0.02j)
        cost = linear_cost(2)
        x = forward_point(net, 1.0, [0.5 + 0.2j], extra_ell=[0.3])
        trace = restoration_path(net, cost, x, samples=101)
        f = [cost.value(unpack_point(net, p).s) for p in trace.points]
        V = [lyapunov_V(net, unpack_point(net, p)) for p in trace.points]
        assert np.all(np.diff(f) < 0)
        assert np.all(np.diff(V) < 0)

    def test_voltage_fixed_and_balance_preserved(self):
        rng = np.random.default_rng(8)
        net, cost = random_radial_network(rng, n_bus=6)
        S = rng.normal(0, 0.3, net.n_line) + 1j * rng.normal(0, 0.3, net.n_line)
        x = forward_point(net, 1.0, S, extra_ell=rng.uniform(0.05, 0.3, net.n_line))
        trace = restoration_path(net, cost, x)
        for p in trace.points:
            xi = unpack_point(net, p)
            np.testing.assert_allclose(xi.v, x.v, atol=1e-14)
            res = pf_residuals(net, xi)
            assert np.max(np.abs(res.ohm)) <= 1e-10
            assert np.max(np.abs(res.balance)) <= 1e-10

    def test_injection_components_nonincreasing(self):
        rng = np.random.default_rng(9)
        net, cost = random_radial_network(rng, n_bus=5)
        S = rng.normal(0, 0.3, net.n_line) + 1j * rng.normal(0, 0.3, net.n_line)
        x = forward_point(net, 1.0, S, extra_ell=rng.uniform(0.05, 0.3, net.n_line))
        trace = restoration_path(net, cost, x)
        s_samples = np.array([unpack_point(net, p).s for p in trace.points])
        assert np.all(np.diff(s_samples.real, axis=0) <= 1e-14)
        assert np.all(np.diff(s_samples.imag, axis=0) <= 1e-14)
        # every bus touches a slack line here, so decrease is strict
        assert np.all(s_samples.real[-1] < s_samples.real[0])
        assert np.all(s_samples.imag[-1] < s_samples.imag[0])

    def test_big_box_untouched(self):
        rng = np.random.default_rng(10)
        net, cost = random_radial_network(rng, n_bus=4)
        S = rng.normal(0, 0.3, net.n_line) + 1j * rng.normal(0, 0.3, net.n_line)
        x = forward_point(net, 1.0, S, extra_ell=rng.uniform(0.05, 0.3, net.n_line))
        trace = restoration_path(net, cost, x)
        end = unpack_point(net, trace.end)
        from relaxcert.distflow import sentinel_bound_active
        assert sentinel_bound_active(net, end) == []


class TestCprimeMargin:
    def test_reference_constant(self):
        net = line_net(z=0.02 + 0.02j)  # ||z||_m = 0.04
        cost = linear_cost(2)
        assert cprime_reference(net, cost) == pytest.approx(1 / 26.5, abs=1e-12)

    def test_margin_dominates_reference(self):
        net = line_net(z=0.02 + 0.02j)
        cost = linear_cost(2)
        x = forward_point(net, 1.0, [0.5 + 0.2j], extra_ell=[0.3])
        trace = restoration_path(net, cost, x)
        res = cprime_margin(net, cost, trace)
        assert res.margin > 0
        assert res.margin >= res.analytic - 1e-9

    def test_constant_trace_is_infinite_with_note(self):
        net = line_net()
        cost = linear_cost(2)
        x = forward_point(net, 1.0, [0.4 + 0.2j])
        pts = np.tile(np.concatenate([x.s, x.v.astype(complex),
                                      x.ell.astype(complex), x.S]), (3, 1))
        from relaxcert.core import PathTrace
        tr = PathTrace(params=np.array([0.0, 0.5, 1.0]), points=pts, segments=1)
        res = cprime_margin(net, cost, tr)
        assert res.margin == np.inf
        assert "constant" in res.note

    def test_margin_on_random_instances(self):
        rng = np.random.default_rng(12)
        for _ in range(5):
            net, cost = random_radial_network(rng, n_bus=int(rng.integers(3, 7)))
            S = rng.normal(0, 0.3, net.n_line) + 1j * rng.normal(0, 0.3, net.n_line)
            x = forward_point(net, 1.0, S,
                              extra_ell=rng.uniform(0.05, 0.4, net.n_line))
            trace = restoration_path(net, cost, x)
            res = cprime_margin(net, cost, trace)
            assert res.margin >= 0.5 * res.analytic


def test_trace_csv_export(tmp_path):
    net = line_net(z=0.02 + 0.02j)
    cost = linear_cost(2)
    x = forward_point(net, 1.0, [0.5 + 0.2j], extra_ell=[0.3])
    trace = restoration_path(net, cost, x, samples=11)
    out = tmp_path / "trace.csv"
    write_restoration_csv(str(out), net, cost, trace)
    lines = out.read_text().strip().splitlines()
    assert lines[0].startswith("t,f,V,s0_re,s0_im,s1_re,s1_im,v0,v1,ell_0_1,")
    assert len(lines) == 12
    first = [float(v) for v in lines[1].split(",")]
    last = [float(v) for v in lines[-1].split(",")]
    assert first[2] > last[2]  # V decreases
    assert first[1] > last[1]  # f decreases
