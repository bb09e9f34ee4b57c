"""Command-line front end.

    spgadmm gen   --seed 7 --family lasso --ydims 50,150 --zdims 50,100 --xdim 100 --out p.json
    spgadmm solve p.json --rho 1.6 --strategy majorized --trace run.csv --certify
    spgadmm rate  run.csv

Exit codes: 0 converged / success, 1 iteration limit reached, 2 invalid
input or I/O failure, 3 certificate violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .certificates import (
    CERT_COLUMNS,
    RateConstants,
    build_certificate_operators,
    certify,
    check_global_convergence,
    rate_constants,
    rate_from_series,
)
from .errors import InsufficientDataError, ParseError, SpgadmmError
from .problem import FAMILIES, InstanceDims, dumps_instance, generate_with_known_kkt, load_instance
from .solver import SolverConfig, solve

__all__ = ["main", "cmd_gen", "cmd_solve", "cmd_rate", "write_trace_csv", "read_trace_csv", "BASE_COLUMNS"]

log = logging.getLogger("spgadmm")

EXIT_OK, EXIT_MAXITER, EXIT_INPUT, EXIT_CERT = 0, 1, 2, 3
BASE_COLUMNS = ("k", "kkt_residual", "primal_residual")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("SPGADMM_LOG", "error").strip().lower(), logging.ERROR)
    root = logging.getLogger("spgadmm")
    root.setLevel(level)
    if not any(getattr(h, "_spgadmm", False) for h in root.handlers):
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        h._spgadmm = True
        root.addHandler(h)


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return EXIT_INPUT


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else format(v, ".17g")


def manifest_path(out) -> Path:
    return Path(f"{out}.manifest.json")


def _write_manifest(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- CSV ----------------------------------------------------------------------------


def write_trace_csv(path, trace, table=None) -> None:
    """One row per recorded iterate ``k = 0..K``; empty cells are undefined values."""
    cols = list(BASE_COLUMNS) + (list(CERT_COLUMNS) if table is not None else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for k in range(len(trace.kkt)):
        row = [_fmt(k), _fmt(trace.kkt[k]), _fmt(trace.primal[k])]
        if table is not None:
            row += [_fmt(table.columns[c][k]) for c in CERT_COLUMNS]
        w.writerow(row)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def read_trace_csv(path) -> dict:
    """Columns of a trace CSV as float arrays (empty cells become NaN)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8 ({exc})") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not rows[0]:
        raise ParseError(f"{path}: empty file")
    header = rows[0]
    missing = [c for c in BASE_COLUMNS if c not in header]
    if missing:
        raise ParseError(f"{path}: line 1: missing columns {missing}")
    data = {c: [] for c in header}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        for c, cell in zip(header, row):
            try:
                data[c].append(float(cell) if cell != "" else math.nan)
            except ValueError:
                raise ParseError(f"{path}: line {lineno}, column {c!r}: not a number: {cell!r}") from None
    return {c: np.asarray(v, dtype=np.float64) for c, v in data.items()}


# -- commands -----------------------------------------------------------------------


def _parse_dims(text: str, flag: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise ValueError(f"{flag}: expected comma-separated integers, got {text!r}") from None
    if not dims or any(d <= 0 for d in dims):
        raise ValueError(f"{flag}: every dimension must be positive, got {text!r}")
    return dims


def cmd_gen(seed: int, ydims: str, zdims: str, xdim: int, family: str, out) -> int:
    try:
        yd = _parse_dims(ydims, "--ydims")
        zd = _parse_dims(zdims, "--zdims")
        if xdim <= 0:
            raise ValueError(f"--xdim: dimension must be positive, got {xdim}")
        inst, sol = generate_with_known_kkt(seed, InstanceDims(yd, zd, xdim), family)
    except ValueError as exc:
        return _fail(str(exc))
    t0 = time.perf_counter()
    try:
        Path(out).write_text(dumps_instance(inst, sol), encoding="utf-8")
        _write_manifest(
            manifest_path(out),
            {
                "command": "gen",
                "seed": seed,
                "family": family,
                "dims": {"y": list(yd), "z": list(zd), "x": xdim},
                "outputs": [str(out)],
                "wall_seconds": time.perf_counter() - t0,
                "exit_status": EXIT_OK,
            },
        )
    except OSError as exc:
        return _fail(f"cannot write {out}: {exc}")
    log.info("wrote %s", out)
    return EXIT_OK


def _constants_dict(c: RateConstants) -> dict:
    return {k: getattr(c, k) for k in ("rho", "sigma", "m_rho", "n_rho", "o_rho", "k1", "k2", "k3", "k4")}


def cmd_solve(
    instance,
    sigma: float = 1.0,
    rho: float = 1.6,
    tol: float = 1e-8,
    max_iters: int = 10000,
    strategy: str = "majorized",
    trace_out=None,
    certify_flag: bool = False,
) -> int:
    t0 = time.perf_counter()
    try:
        config = SolverConfig(sigma, rho, tol, max_iters, strategy)
    except SpgadmmError as exc:
        return _fail(str(exc))
    try:
        inst, sol = load_instance(instance)
    except OSError as exc:
        return _fail(f"cannot read {instance}: {exc}")
    except SpgadmmError as exc:
        return _fail(f"{instance}: {exc}")
    if certify_flag and sol is None:
        return _fail(f"{instance}: --certify needs a known_solution in the instance file")
    try:
        trace = solve(inst, config)
    except SpgadmmError as exc:
        return _fail(str(exc))
    t_solve = time.perf_counter() - t0

    table = ops = None
    code = EXIT_OK if trace.converged else EXIT_MAXITER
    if trace.status == "error":
        log.error("solve aborted: %s", trace.message)
        code = EXIT_INPUT
    report = {}
    if certify_flag:
        ops = build_certificate_operators(inst, config, trace.terms)
        table = certify(trace, sol, ops)
        bad = table.violations()
        for name, ks in bad.items():
            log.error("certificate %s violated at k = %s", name, ", ".join(str(int(k) + 1) for k in ks[:10]))
        if bad:
            code = EXIT_CERT
        conv = check_global_convergence(trace, sol, ops)
        report["vanishing"] = conv.quantities
        if trace.converged and conv.above:
            log.info("vanishing quantities above %.0e: %s", conv.threshold, conv.above)

    out = trace_out if trace_out is not None else f"{instance}.trace.csv"
    try:
        write_trace_csv(out, trace, table)
        manifest = {
            "command": "solve",
            "instance": str(instance),
            "config": config.to_dict(),
            "certify": bool(certify_flag),
            "outputs": [str(out)],
            "status": trace.status,
            "iterations": trace.iterations,
            "final_kkt_residual": float(trace.kkt[-1]),
            "wall_seconds": {"solve": t_solve, "total": time.perf_counter() - t0},
            "exit_status": code,
        }
        if ops is not None:
            manifest["constants"] = _constants_dict(ops.constants)
            manifest["lambda_max_M_bar"] = ops.lambda_mbar
            manifest["violations"] = {k: [int(i) + 1 for i in v] for k, v in table.violations().items()}
            manifest.update(report)
        _write_manifest(manifest_path(out), manifest)
    except OSError as exc:
        return _fail(f"cannot write {out}: {exc}")
    print(f"status: {trace.status}")
    print(f"iterations: {trace.iterations}")
    print(f"kkt_residual: {trace.kkt[-1]:.17g}")
    if certify_flag:
        print(f"certificates: {'ok' if code != EXIT_CERT else 'VIOLATED'}")
    return code


def cmd_rate(trace_path) -> int:
    try:
        cols = read_trace_csv(trace_path)
    except OSError as exc:
        return _fail(f"cannot read {trace_path}: {exc}")
    except ParseError as exc:
        return _fail(f"parse error: {exc}")
    for need in ("distM_singleton", "dist_singleton"):
        if need not in cols:
            return _fail(f"parse error: {trace_path}: column {need!r} missing; run solve with --certify")
    constants = lam = None
    mpath = manifest_path(trace_path)
    if mpath.exists():
        try:
            man = json.loads(mpath.read_text(encoding="utf-8"))
            c = man["constants"]
            constants = rate_constants(c["rho"], c["sigma"])
            constants = RateConstants(**{**constants.__dict__, "k4": c["k4"]})
            lam = float(man["lambda_max_M_bar"])
        except (ValueError, KeyError, TypeError) as exc:
            log.info("manifest %s unusable (%s); implied rate not reported", mpath, exc)
            constants = lam = None
    try:
        rep = rate_from_series(cols["distM_singleton"], cols["dist_singleton"], cols["kkt_residual"], constants, lam)
    except InsufficientDataError as exc:
        return _fail(str(exc))
    print(rep.summary())
    return EXIT_OK


# -- entry point ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spgadmm", description="Semi-proximal generalized ADMM solver with certificates")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate an instance with a known KKT point")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--family", choices=FAMILIES, default="lasso")
    g.add_argument("--ydims", default="50,150")
    g.add_argument("--zdims", default="50,100")
    g.add_argument("--xdim", type=int, default=100)
    g.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="run the solver and write a trace CSV")
    s.add_argument("instance")
    s.add_argument("--sigma", type=float, default=1.0)
    s.add_argument("--rho", type=float, default=1.6)
    s.add_argument("--tol", type=float, default=1e-8)
    s.add_argument("--max-iters", type=int, default=10000)
    s.add_argument("--strategy", choices=("zero", "majorized", "sgs"), default="majorized")
    s.add_argument("--trace", dest="trace_out", default=None)
    s.add_argument("--certify", action="store_true")

    r = sub.add_parser("rate", help="fit the linear rate from a certified trace")
    r.add_argument("trace")
    return p


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.command == "gen":
        return cmd_gen(args.seed, args.ydims, args.zdims, args.xdim, args.family, args.out)
    if args.command == "solve":
        return cmd_solve(
            args.instance, args.sigma, args.rho, args.tol, args.max_iters,
            args.strategy, args.trace_out, args.certify,
        )
    return cmd_rate(args.trace)


if __name__ == "__main__":
    sys.exit(main())
