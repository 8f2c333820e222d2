"""Batch front-end: ingest case or instance files, run the
solve / restore / certify pipelines, and write traces and reports.

Exit codes: 0 when every check passes, 2 when a certificate fails (a
mathematical counterexample or violated assumption), 1 on operational
errors (bad input, solver non-convergence, guards).  All outputs are
UTF-8 JSON or CSV, written atomically; reports are byte-stable across
reruns except for the single ``generated_at`` key.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from typing import Any

import numpy as np

from relaxcert.certify import (
    CertificateReport,
    ConditionResult,
    DimensionGuardError,
    InfeasibleAtResolutionError,
    LandscapeGrid,
    brute_force_oracle,
    check_c1_c3,
    check_c2_proxy,
    check_exactness,
    classify_local_optima,
    eliminated_opf_grid,
    psd_slice_grid_problem,
)
from relaxcert.core import FEAS_TOL, CertificateViolationError, PreconditionError
from relaxcert.distflow import (
    case_from_dict,
    coordinate_rows,
    pack_point,
    residual_X,
    sample_relaxed_points,
    sentinel_bound_active,
    validate_assumptions,
)
from relaxcert.lrsdp import (
    ReductionStuckError,
    instance_from_dict,
    lrsdp_certified_problem,
    lyapunov_tail,
    reduce_rank_path,
    write_reduction_csv,
)
from relaxcert.restore import (
    cprime_margin,
    cprime_reference,
    opf_certified_problem,
    write_restoration_csv,
)
from relaxcert.solver import solve_lrsdp_relaxation, solve_opf_relaxation

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CERT_FAIL = 2


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: str, data: dict) -> None:
    _atomic_write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def _stamp(data: dict) -> dict:
    data["generated_at"] = datetime.now(timezone.utc).isoformat()
    return data


def _load_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _solve_summary(res) -> dict[str, Any]:
    return {
        "status": res.status,
        "iterations": res.iterations,
        "objective": None if np.isnan(res.objective) else res.objective,
        "primal_obj": None if np.isnan(res.primal_obj) else res.primal_obj,
        "dual_obj": None if np.isnan(res.dual_obj) else res.dual_obj,
        "primal_residual": res.primal_residual,
        "dual_residual": res.dual_residual,
        "gap": None if np.isnan(res.gap) else res.gap,
        "options": {k: res.options[k] for k in sorted(res.options)},
        "note": res.note,
    }


def _operating_point_dict(point) -> dict[str, Any]:
    return {
        "s": [[v.real, v.imag] for v in point.s],
        "v": list(point.v),
        "ell": list(point.ell),
        "S": [[v.real, v.imag] for v in point.S],
    }


def cmd_opf(args: argparse.Namespace) -> int:
    data = _load_json(args.input)
    net, cost = case_from_dict(data)
    out = args.out

    assumptions = validate_assumptions(net, cost)
    if not assumptions.structural_ok:
        _write_json(os.path.join(out, "report.json"), _stamp({
            "assumptions": assumptions.as_dict(),
            "verdict": "assumption-failure",
        }))
        for check in assumptions.failures():
            print(f"assumption {check.name} failed: {check.witness}",
                  file=sys.stderr)
        return EXIT_CERT_FAIL

    res = solve_opf_relaxation(net, cost, options={
        "tol": args.tol / 10, "max_iter": args.max_iter,
        "relaxation_parameter": args.relaxation_parameter})
    solve_data: dict[str, Any] = _solve_summary(res)
    if res.status == "infeasible":
        solve_data["note"] = (solve_data["note"] or
                              "relaxation infeasible: the feasibility "
                              "assumption does not hold")
        _write_json(os.path.join(out, "solve.json"), _stamp(solve_data))
        _write_json(os.path.join(out, "report.json"), _stamp({
            "assumptions": assumptions.as_dict(),
            "verdict": "infeasible",
        }))
        return EXIT_CERT_FAIL
    if res.status != "optimal":
        _write_json(os.path.join(out, "solve.json"), _stamp(solve_data))
        print(f"solver did not converge (status {res.status})", file=sys.stderr)
        return EXIT_ERROR

    solve_data["point"] = _operating_point_dict(res.point)
    sentinel = sentinel_bound_active(net, res.point)
    solve_data["sentinel_bound_active"] = sentinel
    _write_json(os.path.join(out, "solve.json"), _stamp(solve_data))

    problem = opf_certified_problem(net, cost)
    verdict = check_exactness(problem, pack_point(res.point),
                              res.optimality_residual, tol=args.tol)

    rng = np.random.default_rng(args.seed)
    samples = [pack_point(x) for x in
               sample_relaxed_points(net, cost, args.samples, rng)]
    checks = check_c1_c3(problem, samples, tol=args.tol)

    from relaxcert.restore import restoration_path

    if residual_X(net, cost, res.point) > args.tol:
        trace = restoration_path(net, cost, res.point, tol=args.tol)
        trace_note = "restoration trace drives the relaxation optimum feasible"
    else:
        trace = checks.traces[0] if checks.traces else None
        trace_note = ("relaxation optimum already feasible; the trace restores "
                      "the first sampled relaxed point instead")
    if trace is not None:
        write_restoration_csv(os.path.join(out, "restoration.csv"),
                              net, cost, trace)
    proxy = check_c2_proxy(problem, checks.traces)
    margins = [cprime_margin(net, cost, tr) for tr in checks.traces]
    margin = min((m.margin for m in margins), default=np.inf)
    reference = cprime_reference(net, cost)
    cprime = ConditionResult(
        "cprime",
        passed=bool(margin > 0 and checks.c1.passed),
        margin=float(margin),
        note=f"analytic reference {reference:.6g}")

    report = CertificateReport(
        c1=checks.c1, c2_proxy=proxy, c3=checks.c3, cprime=cprime,
        exactness=verdict.verdict, sample_count=args.samples, seed=args.seed,
        tolerances={"membership": args.tol},
        notes=tuple(filter(None, [
            verdict.note,
            trace_note,
            ("big-box stand-in ACTIVE at solution for buses "
             f"{sentinel}" if sentinel else
             "big-box stand-in inactive at the solution"),
        ])))
    _write_json(os.path.join(out, "report.json"), _stamp({
        "assumptions": assumptions.as_dict(), **report.as_dict()}))

    if not report.all_passed or sentinel:
        return EXIT_CERT_FAIL
    return EXIT_OK


def cmd_lrsdp(args: argparse.Namespace) -> int:
    inst = instance_from_dict(_load_json(args.input))
    out = args.out

    res = solve_lrsdp_relaxation(inst, options={
        "tol": args.tol / 10, "max_iter": args.max_iter,
        "relaxation_parameter": args.relaxation_parameter})
    solve_data = _solve_summary(res)
    if res.status == "infeasible":
        _write_json(os.path.join(out, "solve.json"), _stamp(solve_data))
        _write_json(os.path.join(out, "report.json"), _stamp({
            "verdict": "infeasible",
            "dimension_condition": inst.dimension_condition,
        }))
        return EXIT_CERT_FAIL
    if res.status != "optimal":
        _write_json(os.path.join(out, "solve.json"), _stamp(solve_data))
        print(f"solver did not converge (status {res.status})", file=sys.stderr)
        return EXIT_ERROR

    solve_data["rank"] = res.point.rank()
    solve_data["eigenvalues"] = list(res.point.eigenvalues)
    _write_json(os.path.join(out, "solve.json"), _stamp(solve_data))

    try:
        reduction = reduce_rank_path(inst, res.point, tol=args.tol)
    except ReductionStuckError as exc:
        _write_json(os.path.join(out, "report.json"), _stamp({
            "verdict": "reduction-stuck",
            "stage": exc.stage,
            "dimension_condition": inst.dimension_condition,
            "detail": str(exc),
        }))
        print(f"rank reduction stuck: {exc}", file=sys.stderr)
        return EXIT_CERT_FAIL

    write_reduction_csv(os.path.join(out, "reduction.csv"), inst,
                        reduction.trace)

    problem = lrsdp_certified_problem(inst)
    verdict = check_exactness(problem, res.point.X.reshape(-1),
                              res.optimality_residual, tol=args.tol)
    proxy = check_c2_proxy(problem, [reduction.trace])
    final_cost = inst.cost(reduction.final.X)
    cost_drift = abs(final_cost - res.objective)
    c3 = ConditionResult(
        "c3",
        passed=bool(reduction.final.rank() <= inst.r
                    and cost_drift <= args.tol * (1 + abs(res.objective))),
        margin=-float(cost_drift),
        note=f"final rank {reduction.final.rank()} after "
             f"{len(reduction.stages)} stages")

    report = CertificateReport(
        c1=None, c2_proxy=proxy, c3=c3, cprime=None,
        exactness=verdict.verdict, sample_count=1, seed=args.seed,
        tolerances={"membership": args.tol},
        notes=(verdict.note,
               f"dimension condition holds: {inst.dimension_condition}"))
    _write_json(os.path.join(out, "report.json"), _stamp({
        **report.as_dict(),
        "final_rank": reduction.final.rank(),
        "stages": len(reduction.stages),
        "final_cost": final_cost,
        "tail_value_final": lyapunov_tail(inst, reduction.final),
    }))

    return EXIT_OK if report.all_passed else EXIT_CERT_FAIL


def cmd_certify(args: argparse.Namespace) -> int:
    data = _load_json(args.input)
    if "buses" in data:
        return cmd_opf(args)
    if "C" in data:
        return cmd_lrsdp(args)
    raise ValueError("certify: input is neither a case file (buses) nor an "
                     "instance file (C)")


def cmd_oracle(args: argparse.Namespace) -> int:
    data = _load_json(args.input)
    if "buses" in data:
        net, cost = case_from_dict(data)
        grid_problem = eliminated_opf_grid(net, cost)
    elif "C" in data:
        grid_problem = psd_slice_grid_problem(instance_from_dict(data))
    else:
        raise ValueError("oracle: input is neither a case nor an instance file")

    oracle = brute_force_oracle(grid_problem, resolution=args.resolution)
    _write_json(os.path.join(args.out, "oracle.json"),
                _stamp(oracle.as_dict()))
    return EXIT_OK


def cmd_classify(args: argparse.Namespace) -> int:
    data = _load_json(args.input)
    for key in ("points", "costs", "radius"):
        if key not in data:
            raise ValueError(f"classify: missing field {key!r}")
    grid = LandscapeGrid(points=np.asarray(data["points"], dtype=float),
                         costs=np.asarray(data["costs"], dtype=float),
                         radius=float(data["radius"]))
    labels = classify_local_optima(grid)
    counts = {k: int(np.sum(labels == k))
              for k in ("none", "global", "pseudo", "genuine")}
    _write_json(os.path.join(args.out, "labels.json"), _stamp({
        "labels": list(labels),
        "counts": counts,
    }))
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relaxcert",
        description="Restore feasibility from convex-relaxed solutions and "
                    "check exactness certificates.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
            ("opf", cmd_opf),
            ("lrsdp", cmd_lrsdp),
            ("certify", cmd_certify),
            ("oracle", cmd_oracle),
            ("classify", cmd_classify)):
        p = sub.add_parser(name)
        p.add_argument("input", help="input JSON file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--tol", type=float, default=FEAS_TOL,
                       help="membership tolerance")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--samples", type=int, default=25,
                       help="sampled relaxed points for condition checks")
        p.add_argument("--resolution", type=float, default=0.01,
                       help="grid resolution for the oracle scan")
        p.add_argument("--max-iter", type=int, default=200_000)
        p.add_argument("--relaxation-parameter", type=float, default=1.6,
                       help="over-relaxation factor of the conic solver")
        p.add_argument("--config", default=None,
                       help="JSON file with defaults; explicit flags win")
        p.set_defaults(fn=fn)
    return parser


def _apply_config(args: argparse.Namespace, argv: list[str]) -> None:
    if not args.config:
        return
    config = _load_json(args.config)
    supplied = {a.split("=")[0].lstrip("-").replace("-", "_")
                for a in argv if a.startswith("--")}
    for key, value in config.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ValueError(f"config: unknown option {key!r}")
        if attr not in supplied:
            setattr(args, attr, value)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config(args, argv)
        for name in ("tol", "resolution"):
            if getattr(args, name) <= 0:
                raise ValueError(f"--{name} must be positive")
        return args.fn(args)
    except (OSError, json.JSONDecodeError, ValueError, KeyError,
            DimensionGuardError, InfeasibleAtResolutionError,
            PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except CertificateViolationError as exc:
        print(f"certificate violation: {exc}", file=sys.stderr)
        return EXIT_CERT_FAIL


if __name__ == "__main__":
    raise SystemExit(main())
