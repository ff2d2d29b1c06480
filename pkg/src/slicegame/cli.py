"""Command-line entry point: ``slicegame {solve,abrd,verify,sweep,montecarlo}``.

Exit codes: 0 on success, 2 on invalid input or a failed check, 3 when an
ABRD run does not converge (results are still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from slicegame import __version__
from slicegame.abrd import BR_METHODS, AbrdConfig, abrd
from slicegame.equilibrium import (
    EquilibriumResult,
    homogeneity_check,
    proposed_solution,
    verify_proposed_state,
)
from slicegame.experiments import SWEEP_KINDS, ScenarioFamily, deviation_study, sweep
from slicegame.model import (
    Scenario,
    check_weights,
    market_state,
    penetration_root_residual,
    revenue_gradient,
    revenue_hessian_diag,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_UNCONVERGED = 3

log = logging.getLogger("slicegame")


class InputError(Exception):
    pass


def _load_json(path: str, what: str):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{what}: cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{what}: {path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def load_scenario(path: str) -> Scenario:
    data = _load_json(path, "scenario")
    if not isinstance(data, dict):
        raise InputError(f"scenario: {path}: expected a JSON object")
    try:
        return Scenario.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def load_weights(path: str, scenario: Scenario) -> np.ndarray:
    data = _load_json(path, "weights")
    try:
        return check_weights(scenario, data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"weights: {path}: {exc}") from exc


def _metadata(args, extra: dict | None = None) -> dict:
    meta = {"artifact": "slicegame", "version": __version__, "command": args.command}
    if getattr(args, "seed", None) is not None:
        meta["seed"] = args.seed
    if not args.deterministic:
        meta["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    if extra:
        meta.update(extra)
    return meta


def _write_rows_csv(rows: list[dict], stream) -> None:
    if not rows:
        return
    fields = list(rows[0])
    for r in rows[1:]:
        for k in r:
            if k not in fields:
                fields.append(k)
    writer = csv.DictWriter(stream, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def emit(args, payload: dict, rows: list[dict], meta: dict) -> None:
    """Write ``payload`` as JSON or ``rows`` as CSV plus a ``.meta.json`` sidecar."""
    if args.format == "json":
        text = json.dumps({"metadata": meta, **payload}, indent=2) + "\n"
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return
    buf = io.StringIO()
    _write_rows_csv(rows, buf)
    if args.out:
        Path(args.out).write_text(buf.getvalue())
        Path(str(args.out) + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    else:
        sys.stdout.write(buf.getvalue())


def equilibrium_rows(result: EquilibriumResult) -> list[dict]:
    rows = []
    st = result.state
    for i in range(result.weights.shape[0]):
        for j in range(result.weights.shape[1]):
            rows.append({
                "tenant": i,
                "cell": j,
                "weight": float(result.weights[i, j]),
                "sigma": float(st.sigma[j]),
                "rho": float(st.rho[j, i]),
                "subscribers": float(st.subscribers[j, i]),
                "per_user_resources": float(st.per_user_resources[j, i]),
                "revenue": float(st.revenues[i]),
            })
    return rows


def _abrd_config(args, base: AbrdConfig | None = None) -> AbrdConfig:
    cfg = base or AbrdConfig()
    changes = {}
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if args.tolerance is not None:
        changes["tolerance"] = args.tolerance
    if args.max_rounds is not None:
        changes["max_rounds"] = args.max_rounds
    if args.br_method is not None:
        changes["br_method"] = args.br_method
    if args.br_iters is not None:
        changes["br_iters"] = args.br_iters
    try:
        return replace(cfg, **changes)
    except ValueError as exc:
        raise InputError(f"abrd config: {exc}") from exc


def cmd_solve(args) -> int:
    scenario = load_scenario(args.scenario)
    result = proposed_solution(scenario)
    meta = _metadata(args, {"scenario": scenario.to_dict()})
    emit(args, {"result": result.to_dict()}, equilibrium_rows(result), meta)
    return EXIT_OK


def cmd_abrd(args) -> int:
    scenario = load_scenario(args.scenario)
    config = _abrd_config(args)
    if args.trajectory:
        with open(args.trajectory, "w") as traj:
            result = abrd(scenario, config, trajectory=traj)
    else:
        result = abrd(scenario, config)
    meta = _metadata(args, {"scenario": scenario.to_dict(), "config": config.to_dict()})
    emit(args, {"result": result.to_dict()}, equilibrium_rows(result), meta)
    if not result.converged:
        log.error("ABRD did not converge after %d rounds", result.diagnostics["rounds"])
        return EXIT_UNCONVERGED
    return EXIT_OK


def _random_interior_weights(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    b = scenario.num_cells
    return rng.dirichlet(np.ones(b) * 2.0, size=scenario.num_tenants) \
        * scenario.share_array[:, None] * 0.9


def _fd_checks(scenario: Scenario, w: np.ndarray) -> tuple[float, float]:
    """Worst relative error of the closed-form first and second derivatives."""
    g_err = h_err = 0.0
    for i in range(scenario.num_tenants):
        g = revenue_gradient(scenario, w, i)
        hd = revenue_hessian_diag(scenario, w, i)
        for j in range(scenario.num_cells):
            def rev(d):
                wd = w.copy()
                wd[i, j] += d
                return market_state(scenario, wd).revenues[i]
            step = 1e-6
            fd = (rev(step) - rev(-step)) / (2 * step)
            g_err = max(g_err, abs(fd - g[j]) / abs(g[j]))
            h = 5e-3 * w[i, j]
            fd2 = (-rev(2 * h) + 16 * rev(h) - 30 * rev(0) + 16 * rev(-h) - rev(-2 * h)) / (12 * h * h)
            h_err = max(h_err, abs(fd2 - hd[j]) / abs(hd[j]))
    return g_err, h_err


def cmd_verify(args) -> int:
    scenario = load_scenario(args.scenario)
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    w = load_weights(args.weights, scenario) if args.weights else \
        _random_interior_weights(scenario, rng)
    if np.any(w.sum(axis=1) > scenario.share_array - 1e-5):
        # finite differences need room inside the budget
        w = w * 0.9
    prop = proposed_solution(scenario)
    state = market_state(scenario, w)
    g_err, h_err = _fd_checks(scenario, w)

    checks = []
    checks.append(("gradient matches finite differences (rel 1e-5)", g_err, g_err < 1e-5))
    checks.append(("second derivative matches finite differences (rel 1e-4)", h_err, h_err < 1e-4))
    root = float(np.max(np.abs(penetration_root_residual(scenario, w, state.sigma))))
    checks.append(("penetration root residual < 1e-10", root, root < 1e-10))
    cap = float(np.max(np.abs(state.allocations.sum(axis=1) - scenario.capacity) / scenario.capacity))
    checks.append(("capacity conservation (rel 1e-12)", cap, cap < 1e-12))
    consistency = verify_proposed_state(scenario, prop)
    checks.append(("closed-form state reproduces the model (rel 1e-9)", consistency, consistency < 1e-9))
    checks.append(("closed-form budget binds (1e-12)", prop.budget_residual, prop.budget_residual < 1e-12))
    if homogeneity_check(scenario):
        checks.append(("KKT residual at closed form < 1e-8 (homogeneous cells)",
                       prop.kkt_residual, prop.kkt_residual < 1e-8))
    else:
        log.info("cells are heterogeneous; KKT residual at closed form is %.3g (no exactness claim)",
                 prop.kkt_residual)

    failed = 0
    for name, value, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {value:.3g}")
        failed += not ok
    if args.out:
        meta = _metadata(args, {"scenario": scenario.to_dict()})
        payload = {"checks": [{"name": n, "value": v, "passed": bool(ok)} for n, v, ok in checks]}
        Path(args.out).write_text(json.dumps({"metadata": meta, **payload}, indent=2) + "\n")
    return EXIT_OK if failed == 0 else EXIT_INVALID


def cmd_sweep(args) -> int:
    params = {}
    if args.params:
        params = _load_json(args.params, "sweep params")
    if args.kind == "het_profile" and args.seed is not None:
        params.setdefault("abrd", {})["rng_seed"] = args.seed
    rows = sweep(args.kind, params)
    meta = _metadata(args, {"kind": args.kind, "params": params})
    emit(args, {"rows": rows}, rows, meta)
    if args.kind == "het_profile" and not all(r["converged"] for r in rows):
        return EXIT_UNCONVERGED
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    data = _load_json(args.family, "family")
    try:
        family = ScenarioFamily.from_dict(data)
        if args.seed is not None:
            family = replace(family, rng_seed=args.seed)
    except (TypeError, ValueError) as exc:
        raise InputError(f"family: {args.family}: {exc}") from exc
    if args.replications is not None and args.replications < 1:
        raise InputError("--replications must be positive")
    config = _abrd_config(args)
    report = deviation_study(family, config, replications=args.replications, workers=args.workers)
    meta = _metadata(args, {"family": family.to_dict(), "config": config.to_dict(),
                            "replications": args.replications or family.replications})
    emit(args, {"report": report.summary()}, report.records(), meta)
    if args.histogram_out:
        rows = [{"metric": m, "bin_left": a, "bin_right": b, "count": c}
                for m, bins in report.histograms.items() for a, b, c in bins]
        buf = io.StringIO()
        _write_rows_csv(rows, buf)
        Path(args.histogram_out).write_text(buf.getvalue())
    pct = report.percentiles
    print(f"rho   P90 {pct['rho']['P90']:.3f}%  P95 {pct['rho']['P95']:.3f}%", file=sys.stderr)
    print(f"sigma P90 {pct['sigma']['P90']:.4f}%  P95 {pct['sigma']['P95']:.4f}%", file=sys.stderr)
    if report.failed:
        log.error("%d replications did not converge: %s", len(report.failed), report.failed)
        return EXIT_UNCONVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicegame", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        if out:
            p.add_argument("--out", help="output path (default: stdout)")
            p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--deterministic", action="store_true",
                       help="omit the timestamp from output metadata")
        p.add_argument("-v", "--verbose", action="store_true")

    def solver_flags(p):
        p.add_argument("--tolerance", type=float, default=None)
        p.add_argument("--max-rounds", type=int, default=None)
        p.add_argument("--br-method", choices=BR_METHODS, default=None)
        p.add_argument("--br-iters", type=int, default=None)

    p = sub.add_parser("solve", help="closed-form candidate equilibrium")
    p.add_argument("--scenario", required=True)
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("abrd", help="asynchronous best-response dynamics")
    p.add_argument("--scenario", required=True)
    p.add_argument("--trajectory", help="write per-round weights as JSON lines")
    common(p)
    solver_flags(p)
    p.set_defaults(func=cmd_abrd)

    p = sub.add_parser("verify", help="run numerical self-checks on a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--weights", help="weight profile to check (default: random)")
    p.add_argument("--out", help="write check results as JSON")
    common(p, out=False)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="plot-ready data series")
    p.add_argument("--kind", choices=SWEEP_KINDS, required=True)
    p.add_argument("--params", help="JSON file with sweep parameters")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("montecarlo", help="deviation study over a scenario family")
    p.add_argument("--family", required=True)
    p.add_argument("--replications", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--histogram-out", help="CSV of (bin_left, bin_right, count)")
    common(p)
    solver_flags(p)
    p.set_defaults(func=cmd_montecarlo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
