"""Command-line front end: ``fit``, ``sweep`` and ``verify``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import metrics
from .data import DataError, Dataset, SyntheticSpec, generate_synthetic, load_csv, preprocess
from .fca import FcaConfig, FitError, fit_fca, fit_fca_multigroup
from .fcac import fit_fcac
from .transport import SolverError, SolverOptions

SWEEP_HEADER = ["epsilon", "cost", "balance", "fairness_gap",
                "prop42_bound_lhs", "prop42_bound_rhs", "runtime_ms"]
DEFAULT_GRID = [round(0.1 + 0.05 * i, 2) for i in range(17)]


class UsageError(Exception):
    """Bad flag values detected after argparse (exit code 2)."""


def _parse_kv(text: str) -> dict:
    out = {}
    for part in filter(None, text.split(",")):
        key, sep, value = part.partition("=")
        if not sep:
            raise UsageError(f"expected key=value in {text!r}")
        out[key.strip()] = value.strip()
    return out


def synthetic_spec(text: str, seed: int) -> SyntheticSpec:
    """``n=2000,d=2,J=4[,alpha=1,groups=2,equal=1]`` to a generator spec."""
    kv = _parse_kv(text)
    try:
        spec = SyntheticSpec(
            n=int(kv.pop("n")),
            d=int(kv.pop("d", 2)),
            J=int(kv.pop("J", 4)),
            dirichlet_alpha=float(kv.pop("alpha", 1.0)),
            seed=int(kv.pop("seed", seed)),
            n_groups=int(kv.pop("groups", 2)),
            equal_groups=kv.pop("equal", "0") in ("1", "true", "yes"),
        )
    except KeyError:
        raise UsageError("--synthetic needs at least n=<count>") from None
    except ValueError as exc:
        raise UsageError(f"bad --synthetic value: {exc}") from None
    if kv:
        raise UsageError(f"unknown --synthetic keys: {sorted(kv)}")
    return spec


def load_dataset(args) -> Dataset:
    if args.synthetic:
        spec = synthetic_spec(args.synthetic, args.seed)
        ds = generate_synthetic(spec)
        return preprocess(ds, args.l2_normalize) if args.l2_normalize else ds
    if not args.group:
        raise UsageError("--group is required with --input")
    group_map = None
    if args.group_map:
        group_map = {k: int(v) for k, v in _parse_kv(args.group_map).items()}
    features = args.features.split(",") if args.features else None
    ds = load_csv(args.input, args.group, features, group_map)
    return preprocess(ds, args.l2_normalize)


def make_config(args) -> FcaConfig:
    try:
        solver = SolverOptions.parse(args.solver, threads=args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    try:
        return FcaConfig(K=args.k, max_outer_iter=args.max_iter, solver=solver,
                         partition_m=args.partition_m, mode=args.mode, seed=args.seed,
                         restarts=args.restarts, transport_weight=args.transport_weight)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _fit(ds, cfg, epsilon, weighted=False):
    if epsilon is None:
        return fit_fca_multigroup(ds, cfg) if ds.n_groups > 2 else fit_fca(ds, cfg)
    if ds.n_groups != 2:
        raise UsageError("--epsilon needs exactly two groups")
    return fit_fcac(ds, cfg, epsilon, weighted_quantile=weighted)


def result_payload(ds, cfg, res, epsilon, with_probs) -> dict:
    out = {
        "config": {"K": cfg.K, "mode": cfg.mode, "seed": cfg.seed,
                   "epsilon": epsilon, "solver": cfg.solver.method,
                   "reg": cfg.solver.reg, "partition_m": cfg.partition_m,
                   "max_outer_iter": cfg.max_outer_iter, "restarts": cfg.restarts,
                   "transport_weight": cfg.transport_weight},
        "n": ds.n,
        "group_sizes": [int(v) for v in ds.group_sizes],
        "metrics": res.report.to_dict(),
        "best_iter": res.best_iter,
        "restart": res.restart,
        "centers": res.centers.tolist(),
        "labels": [int(v) for v in res.labels],
        "groups": [int(v) for v in ds.groups],
        "history": res.history,
    }
    if with_probs:
        out["probs"] = res.probs.tolist()
    return out


def recompute_metrics(payload: dict, points) -> dict:
    """Metrics recomputed from stored labels and centers (round-trip check)."""
    labels = np.asarray(payload["labels"])
    groups = np.asarray(payload["groups"])
    centers = np.asarray(payload["centers"])
    out = {
        "cost": metrics.cost(points, centers, labels),
        "cost_l1": metrics.cost(points, centers, labels, "l1"),
        "balance": metrics.balance(labels, groups, centers.shape[0]),
        "balance_star": metrics.balance_star(groups),
        "R": metrics.norm_bound(points),
    }
    if "probs" in payload:
        out["fairness_gap"] = metrics.fairness_gap(np.asarray(payload["probs"]), groups)
    return out


def cmd_fit(args) -> int:
    ds = load_dataset(args)
    cfg = make_config(args)
    res = _fit(ds, cfg, args.epsilon, args.weighted_quantile)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payload = result_payload(ds, cfg, res, args.epsilon, args.save_probs)
    (out / "result.json").write_text(json.dumps(payload, indent=1))
    if args.export_coupling:
        if res.coupling is None:
            raise UsageError("no pairwise coupling to export for this fit")
        res.coupling.to_csv(out / "coupling.csv", ds.group_index[0], ds.group_index[1])
    r = res.report
    print(f"cost={r.cost:.3f} balance={r.balance:.3f} balance_star={r.balance_star:.3f} "
          f"fairness_gap={r.fairness_gap:.3f} best_iter={res.best_iter}")
    return 0


def _parse_grid(text):
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --grid {text!r}") from None
    if not grid or any(not 0.0 <= e <= 1.0 for e in grid):
        raise UsageError("--grid values must lie in [0, 1]")
    return grid


def cmd_sweep(args) -> int:
    ds = load_dataset(args)
    if ds.n_groups != 2:
        raise UsageError("sweep needs exactly two groups")
    cfg = make_config(args)
    grid = _parse_grid(args.grid) if args.grid else DEFAULT_GRID
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        for eps in grid:
            t0 = time.perf_counter()
            res = fit_fcac(ds, cfg, eps, weighted_quantile=args.weighted_quantile)
            ms = (time.perf_counter() - t0) * 1000.0
            lhs, c = metrics.balance_bound_terms(res.probs, ds.groups)
            r = res.report
            w.writerow([repr(eps), repr(r.cost), repr(r.balance), repr(r.fairness_gap),
                        repr(lhs), repr(c * eps), f"{ms:.0f}"])
            print(f"epsilon={eps:.2f} cost={r.cost:.3f} balance={r.balance:.3f} "
                  f"fairness_gap={r.fairness_gap:.3f}")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_battery

    rows = run_battery(seed=args.seed, instances=args.instances, fault=args.break_)
    width = max(len(name) for name, _, _ in rows)
    failed = [name for name, ok, _ in rows if not ok]
    for name, ok, detail in rows:
        print(f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}")
    if failed:
        print("failed: " + ", ".join(failed))
        return 1
    return 0


def _add_common(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="CSV file with a header row")
    src.add_argument("--synthetic", help="generator spec, e.g. n=2000,d=2,J=4")
    p.add_argument("--group", help="protected-group column")
    p.add_argument("--group-map", help="explicit encoding, e.g. F=0,M=1")
    p.add_argument("--features", help="comma-separated feature columns")
    p.add_argument("--k", type=int, required=True, help="number of clusters")
    p.add_argument("--solver", default="lp", help="lp or sinkhorn:<reg>")
    p.add_argument("--mode", choices=["kmeans", "kmedian"], default="kmeans")
    p.add_argument("--partition-m", type=int, default=None)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l2-normalize", action="store_true")
    p.add_argument("--out", default=".")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--transport-weight", type=float, default=1.0)
    p.add_argument("--weighted-quantile", action="store_true",
                   help="take the exception-set quantile by coupling mass")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairalign", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="fit one fair clustering")
    _add_common(fit)
    fit.add_argument("--epsilon", type=float, default=None,
                     help="fairness budget in [0, 1]; omit for perfect fairness")
    fit.add_argument("--export-coupling", action="store_true")
    fit.add_argument("--save-probs", action="store_true",
                     help="store per-point cluster probabilities in result.json")
    fit.set_defaults(func=cmd_fit)

    sweep = sub.add_parser("sweep", help="fairness-budget trade-off curve")
    _add_common(sweep)
    sweep.add_argument("--grid", help="comma-separated budgets (default 0.1..0.9 by 0.05)")
    sweep.set_defaults(func=cmd_sweep)

    verify = sub.add_parser("verify", help="run the invariant battery")
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--instances", type=int, default=10)
    verify.add_argument("--break", dest="break_", choices=["marginals"], default=None,
                        help=argparse.SUPPRESS)
    verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "epsilon", None) is not None and not 0.0 <= args.epsilon <= 1.0:
        parser.error("--epsilon must lie in [0, 1]")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (DataError, FitError, SolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
