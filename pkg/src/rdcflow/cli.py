"""Command-line driver: ``rdcflow {simulate,certify,probe,report,selftest}``.

Exit codes: 0 certified / ok, 2 not certified, 3 inconclusive, 1 error.
The number of worker threads for per-pair work is read from ``RDC_WORKERS``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import RDCError
from .pipeline import EXIT_CODES, RunConfig, cmd_certify, cmd_probe, cmd_report, cmd_simulate

log = logging.getLogger("rdcflow")


def _config_from_args(args) -> RunConfig:
    base = RunConfig.load(args.config).to_dict() if args.config else RunConfig().to_dict()
    if args.system:
        base["system"] = {"registry": args.system, "params": json.loads(args.params or "{}")}
    for key in ("n_modes", "seed", "output"):
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    integ = dict(base.get("integrator", {}))
    for key in ("dt", "t_transient", "t_sample", "n_snapshots", "scheme", "n_trajectories"):
        val = getattr(args, key, None)
        if val is not None:
            integ[key] = val
    base["integrator"] = integ
    cert = dict(base.get("certify", {}))
    for key in ("K", "max_pairs"):
        val = getattr(args, key, None)
        if val is not None:
            cert[key] = val
    base["certify"] = cert
    if getattr(args, "no_dissipativity", False):
        base["dissipativity_radii"] = []
    return RunConfig.from_dict(base)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override its fields")
    p.add_argument("--system", help="registry system name")
    p.add_argument("--params", help="JSON object of registry parameters")
    p.add_argument("--n-modes", type=int, dest="n_modes")
    p.add_argument("--seed", type=int)
    p.add_argument("--output", "-o", help="store directory")
    p.add_argument("--dt", type=float)
    p.add_argument("--t-transient", type=float, dest="t_transient")
    p.add_argument("--t-sample", type=float, dest="t_sample")
    p.add_argument("--n-snapshots", type=int, dest="n_snapshots")
    p.add_argument("--n-trajectories", type=int, dest="n_trajectories")
    p.add_argument("--scheme", choices=("ETDRK4", "IMEX-CNAB2"))
    p.add_argument("--K", type=int, help="lattice mode cutoff")
    p.add_argument("--max-pairs", type=int, dest="max_pairs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdcflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rdcflow {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("simulate", help="probe dissipativity and sample the attractor into a store")
    _add_config_args(p)
    p.add_argument("--no-dissipativity", action="store_true", help="skip the absorbing-ball probe")

    for verb, text in (("certify", "run the structural, monodromy and spectral checks on a store"),
                       ("probe", "run the Lipschitz-flow, low-mode graph and decomposition probes")):
        p = sub.add_parser(verb, help=text)
        p.add_argument("store", help="store directory written by 'simulate'")
        p.add_argument("--K", type=int)
        p.add_argument("--max-pairs", type=int, dest="max_pairs")

    p = sub.add_parser("report", help="write summary.txt and plot-data files for a store")
    p.add_argument("store")

    sub.add_parser("selftest", help="quick numerical self-checks")
    return parser


def _store_config(args):
    from .pipeline import RunConfig

    cfg = RunConfig.load(Path(args.store) / "config.json")
    over = {k: getattr(args, k) for k in ("K", "max_pairs") if getattr(args, k, None) is not None}
    if over:
        cfg = RunConfig.from_dict(dict(cfg.to_dict(), certify=dict(cfg.certify, **over)))
    return cfg


def selftest() -> int:
    """A handful of closed-form checks; prints one line per check."""
    from .grid import DiffusionMatrix, Grid
    from .linearization import MatrixCurve
    from .monodromy import matrix_log_series, solve_U, solve_V
    from .certifier import check_remark52
    from scipy.linalg import expm

    rng = np.random.default_rng(0)
    grid = Grid(32)
    D = DiffusionMatrix(np.array([0.5, 1.0]))
    vals = np.einsum("x,ij->xij", np.cos(2 * np.pi * grid.x), rng.standard_normal((2, 2))) + rng.standard_normal((2, 2))
    B = MatrixCurve(vals, grid)
    U, V = solve_U(B, D), solve_V(B, D)
    pairing = float(np.max(np.abs(np.einsum("xij,xjk->xik", U.values, V.values) - np.eye(2))))
    liou = abs(np.linalg.det(U.end) / np.exp(-0.5 * np.mean(np.trace(vals / D.d[None, :, None], axis1=1, axis2=2))) - 1)
    A = rng.standard_normal((3, 3))
    P = A @ A.T + np.eye(3)
    logerr = float(np.max(np.abs(expm(matrix_log_series(P)) - P)))
    checks = [
        ("monodromy inverse pairing", pairing <= 1e-9, pairing),
        ("determinant law", liou <= 1e-8, liou),
        ("matrix log round trip", logerr <= 1e-8, logerr),
        ("discriminant sign", check_remark52([[1, 2], [0, 3]]).passed and not check_remark52([[0, 1], [-1, 0]]).passed, 0.0),
    ]
    for name, ok, val in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name:28s} {val:.3e}")
    return 0 if all(ok for _, ok, _ in checks) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "simulate":
            cfg = _config_from_args(args)
            res = cmd_simulate(cfg)
            print(f"store {res['store']}: {res['n_snapshots']} snapshots, degenerate={res['degenerate']}, "
                  f"entered_ball={res['entered_ball']}, config_hash={cfg.hash()}")
            return EXIT_CODES[res["status"]]
        if args.verb == "certify":
            res = cmd_certify(_store_config(args), args.store)
            print(f"{res['status']}: route={res['route']} failing_stage={res['failing_stage']}")
            return EXIT_CODES[res["status"]]
        if args.verb == "probe":
            res = cmd_probe(_store_config(args), args.store)
            print(f"Fl {res['Fl'].verdict}  GrF {res['GrF'].verdict}  decomposition {res['decomposition'].verdict}")
            return EXIT_CODES[res["status"]]
        if args.verb == "report":
            res = cmd_report(args.store)
            sys.stdout.write(res["summary"])
            return 0
        if args.verb == "selftest":
            return selftest()
    except RDCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CODES["error"]
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CODES["error"]
    return EXIT_CODES["error"]


if __name__ == "__main__":
    sys.exit(main())
