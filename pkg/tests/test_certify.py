"""Tests for condition checkers, landscape classification, the grid oracle
and multistart search."""

import numpy as np
import pytest

from gen import (
    random_feasible_psd,
    random_radial_network,
    random_spectraplex_instance,
    two_bus_case,
)
from relaxcert.certify import (
    CertificateReport,
    ConditionResult,
    DimensionGuardError,
    GridProblem,
    InfeasibleAtResolutionError,
    LandscapeGrid,
    brute_force_oracle,
    check_c1_c3,
    check_c2_proxy,
    check_exactness,
    classify_local_optima,
    eliminated_opf_grid,
    multistart_local_search,
    psd_slice_grid_problem,
)
from relaxcert.compose import CertifiedProblem
from relaxcert.core import PathTrace, PreconditionError
from relaxcert.distflow import pack_point, residual_X, sample_relaxed_points
from relaxcert.lrsdp import lrsdp_certified_problem, reduce_rank_path
from relaxcert.restore import opf_certified_problem
from relaxcert.solver import solve_lrsdp_relaxation, solve_opf_relaxation


def taxonomy_fixture():
    """1-D landscape holding one optimum of every class.

    Unit spacing; plateau of width two at value 2 whose right edge leads
    downhill, two strict non-global minima, one global minimum.
    """
    costs = np.array([5, 4, 3, 4, 2, 0, 2, 3, 2, 2, 1.5, 1, 3, 5], dtype=float)
    points = np.arange(len(costs), dtype=float)[:, None]
    return LandscapeGrid(points=points, costs=costs, radius=1.5)


class TestClassifyLocalOptima:
    def test_taxonomy_fixture(self):
        labels = classify_local_optima(taxonomy_fixture())
        assert list(labels).count("global") == 1
        assert list(labels).count("pseudo") == 1
        assert list(labels).count("genuine") == 2
        assert labels[5] == "global"
        assert labels[8] == "pseudo"
        assert labels[2] == "genuine" and labels[11] == "genuine"

    def test_convex_quadratic_grid(self):
        xs = np.arange(-1.0, 1.0001, 0.05)
        X, Y = np.meshgrid(xs, xs, indexing="ij")
        pts = np.stack([X.reshape(-1), Y.reshape(-1)], axis=1)
        costs = (pts[:, 0] - 0.3) ** 2 + (pts[:, 1] + 0.2) ** 2
        labels = classify_local_optima(
            LandscapeGrid(points=pts, costs=costs, radius=0.075))
        assert list(labels).count("global") == 1
        assert list(labels).count("pseudo") == 0
        assert list(labels).count("genuine") == 0

    def test_double_well(self):
        xs = np.arange(-1.6, 1.6001, 0.01)
        costs = (xs**2 - 1) ** 2 + 0.2 * xs
        labels = classify_local_optima(
            LandscapeGrid(points=xs[:, None], costs=costs, radius=0.015))
        assert list(labels).count("global") == 1
        assert list(labels).count("genuine") == 1
        g = np.flatnonzero(labels == "global")[0]
        h = np.flatnonzero(labels == "genuine")[0]
        assert xs[g] < 0 < xs[h]  # higher well is the genuine one

    def test_labels_invariant_under_monotone_relabeling(self):
        grid = taxonomy_fixture()
        labels = classify_local_optima(grid)
        relabeled = LandscapeGrid(points=grid.points,
                                  costs=np.exp(grid.costs / 3.0),
                                  radius=grid.radius)
        assert list(classify_local_optima(relabeled)) == list(labels)


class TestCheckC1C3:
    def test_opf_paths_pass_strict(self):
        rng = np.random.default_rng(0)
        net, cost = random_radial_network(rng, n_bus=3)
        problem = opf_certified_problem(net, cost)
        pts = [pack_point(x) for x in sample_relaxed_points(net, cost, 50, rng)]
        checks = check_c1_c3(problem, pts)
        assert checks.c3.passed and checks.c1.passed
        assert len(checks.traces) == 50
        proxy = check_c2_proxy(problem, checks.traces)
        assert proxy.passed

    def test_broken_factory_fails_both(self):
        rng = np.random.default_rng(1)
        net, cost = random_radial_network(rng, n_bus=3)
        good = opf_certified_problem(net, cost)

        def constant_path(x):
            pts = np.tile(x, (5, 1))
            return PathTrace(params=np.linspace(0, 1, 5), points=pts, segments=1)

        broken = CertifiedProblem(handle=good.handle, path_factory=constant_path,
                                  segment_bound=1, box=good.box, label="broken")
        pts = [pack_point(x) for x in sample_relaxed_points(net, cost, 5, rng)]
        checks = check_c1_c3(broken, pts)
        assert not checks.c3.passed and not checks.c1.passed
        assert any("endpoint infeasible" in w for w in checks.c3.witnesses)

    def test_lrsdp_paths_pass_weak_only(self):
        rng = np.random.default_rng(2)
        inst = random_spectraplex_instance(rng, n=3)
        problem = lrsdp_certified_problem(inst)
        pts = [random_feasible_psd(rng, 3).reshape(-1).astype(complex)
               for _ in range(5)]
        checks = check_c1_c3(problem, pts)
        assert checks.c3.passed
        assert not checks.c1.passed  # rank reduction conserves the cost

    def test_points_outside_region_rejected(self):
        rng = np.random.default_rng(3)
        net, cost = random_radial_network(rng, n_bus=3)
        problem = opf_certified_problem(net, cost)
        from relaxcert.distflow import forward_point
        feasible = forward_point(net, 1.0, np.full(net.n_line, 0.1 + 0.05j))
        with pytest.raises(PreconditionError):
            check_c1_c3(problem, [pack_point(feasible)])


class TestCheckExactness:
    def test_opf_feasible_optimum_weak_without_uniqueness(self):
        rng = np.random.default_rng(4)
        net, cost = two_bus_case(rng)
        res = solve_opf_relaxation(net, cost)
        assert res.status == "optimal"
        problem = opf_certified_problem(net, cost)
        verdict = check_exactness(problem, pack_point(res.point),
                                  res.optimality_residual)
        assert verdict.verdict == "weak"

    def test_uniqueness_certificate_upgrades_to_strong(self):
        rng = np.random.default_rng(5)
        net, cost = two_bus_case(rng)
        res = solve_opf_relaxation(net, cost)
        problem = opf_certified_problem(net, cost)
        verdict = check_exactness(problem, pack_point(res.point),
                                  res.optimality_residual,
                                  unique_certificate=True)
        assert verdict.verdict == "strong"

    def test_lrsdp_rank_deficient_optimum_weak_via_path(self):
        rng = np.random.default_rng(6)
        inst = random_spectraplex_instance(rng, n=4, degenerate=True)  # C = I
        X = random_feasible_psd(rng, 4)  # full-rank optimum of the relaxation
        problem = lrsdp_certified_problem(inst)
        verdict = check_exactness(problem, X.reshape(-1).astype(complex),
                                  optimality_residual=0.0)
        assert verdict.verdict == "weak"
        assert "equal cost" in verdict.note

    def test_non_optimal_point_rejected(self):
        rng = np.random.default_rng(7)
        net, cost = two_bus_case(rng)
        res = solve_opf_relaxation(net, cost)
        problem = opf_certified_problem(net, cost)
        with pytest.raises(PreconditionError):
            check_exactness(problem, pack_point(res.point),
                            optimality_residual=1e-3)


class TestReportInvariants:
    def test_inconsistent_implications_rejected(self):
        ok = ConditionResult("c", True, 1.0)
        bad = ConditionResult("c", False, -1.0)
        with pytest.raises(ValueError):
            CertificateReport(c1=ok, c2_proxy=None, c3=bad, cprime=None,
                              exactness="unknown", sample_count=0, seed=0)
        with pytest.raises(ValueError):
            CertificateReport(c1=bad, c2_proxy=None, c3=bad, cprime=ok,
                              exactness="unknown", sample_count=0, seed=0)

    def test_valid_report_serializes(self):
        ok = ConditionResult("c", True, 1.0)
        rep = CertificateReport(c1=ok, c2_proxy=ok, c3=ok, cprime=ok,
                                exactness="weak", sample_count=10, seed=0,
                                tolerances={"membership": 1e-8})
        data = rep.as_dict()
        assert data["exactness"] == "weak"
        assert data["conditions"]["c1"]["passed"] is True
        assert rep.all_passed


class TestBruteForceOracle:
    def test_two_bus_matches_relaxation_and_restoration(self):
        rng = np.random.default_rng(8)
        net, cost = two_bus_case(rng)
        gp = eliminated_opf_grid(net, cost)
        oracle = brute_force_oracle(gp, resolution=0.005)
        res = solve_opf_relaxation(net, cost)
        problem = opf_certified_problem(net, cost)
        if residual_X(net, cost, res.point) <= 1e-8:
            restored_cost = res.objective
        else:
            trace = problem.path_factory(pack_point(res.point))
            restored_cost = problem.handle.cost(trace.end)
        bound = max(1e-6, 2 * oracle.resolution * oracle.max_slope)
        assert abs(oracle.global_cost - restored_cost) <= bound
        assert oracle.label_counts["genuine"] == 0
        assert oracle.n_components == 1

    def test_empty_feasible_grid(self):
        rng = np.random.default_rng(9)
        net, cost = two_bus_case(rng)
        import dataclasses
        buses = (net.buses[0],
                 dataclasses.replace(net.buses[1], v_min=1.3, v_max=1.2))
        from relaxcert.distflow import RadialNetwork
        bad_net = RadialNetwork(buses=buses, lines=net.lines, root=net.root)
        gp = eliminated_opf_grid(bad_net, cost)
        with pytest.raises(InfeasibleAtResolutionError):
            brute_force_oracle(gp, resolution=0.05)

    def test_dimension_guard(self):
        rng = np.random.default_rng(10)
        net, cost = random_radial_network(rng, n_bus=4)  # 3 lines -> 6 dof
        gp = eliminated_opf_grid(net, cost)
        with pytest.raises(DimensionGuardError):
            brute_force_oracle(gp, resolution=0.1)

    def test_lrsdp_slice_matches_reduction(self):
        rng = np.random.default_rng(11)
        inst = random_spectraplex_instance(rng, n=2)
        res = solve_lrsdp_relaxation(inst)
        reduction = reduce_rank_path(inst, res.point)
        reduced_cost = inst.cost(reduction.final.X)
        gp = psd_slice_grid_problem(inst)
        oracle = brute_force_oracle(gp, resolution=0.02)
        bound = 5 * oracle.resolution * (1.0 + oracle.max_slope)
        assert abs(oracle.global_cost - reduced_cost) <= bound


class TestMultistart:
    def test_double_well_finds_both_minima(self):
        def cost(U):
            x = U[:, 0]
            return (x**2 - 1) ** 2 + 0.2 * x

        empty = lambda U: np.zeros((len(np.atleast_2d(U)), 0))
        gp = GridProblem(dim=1, lower=np.array([-1.6]), upper=np.array([1.6]),
                         cost=cost, inequalities=empty, equalities=empty,
                         label="double-well")
        out = multistart_local_search(gp, starts=8, seed=0)
        conv = [r for r in out.runs if r.converged]
        assert conv
        xs = sorted(r.point[0] for r in conv)
        assert xs[0] < -0.9 and xs[-1] > 0.9  # both wells reached
        costs = sorted(set(np.round([r.cost for r in conv], 6)))
        assert len(costs) == 2

    def test_three_bus_against_relaxation_and_oracle(self):
        rng = np.random.default_rng(12)
        net, cost = random_radial_network(rng, n_bus=3, pin_root_voltage=True)
        res = solve_opf_relaxation(net, cost)
        assert res.status == "optimal"
        gp = eliminated_opf_grid(net, cost)
        out = multistart_local_search(gp, starts=20, seed=0)
        costs = out.converged_costs
        assert len(costs) >= 15
        # exactness regime: the relaxation optimum is the global optimum
        assert np.all(np.abs(costs - res.objective) <= 1e-6 * (1 + abs(res.objective)))
        oracle = brute_force_oracle(gp, resolution=0.1)
        bound = max(1e-6, 2 * oracle.resolution * oracle.max_slope)
        assert np.all(np.abs(costs - oracle.global_cost) <= bound)

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(13)
        net, cost = two_bus_case(rng)
        gp = eliminated_opf_grid(net, cost)
        a = multistart_local_search(gp, starts=5, seed=3)
        b = multistart_local_search(gp, starts=5, seed=3)
        assert len(a.runs) == len(b.runs)
        for ra, rb in zip(a.runs, b.runs):
            assert np.array_equal(ra.point, rb.point)
            assert ra.cost == rb.cost
