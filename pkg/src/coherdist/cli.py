"""Command-line front end.

    coherdist compute  --state main_example --class MIO --m 2 --eps 0.1
    coherdist sweep    --state fig2_example --class DIO --m 3 --eps 0.25..0.45:0.01,1/3
    coherdist catalysis --family v --q 0.5 --delta 0,0.005,0.01
    coherdist verify   --quick --seed 7

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import numpy as np

from .analytic import (dio_threshold_for, mio_pure_lower_bound, normalize_amplitudes,
                       p_qubit_target, p_sio_pure, qubit_threshold)
from .catalysis import Family, catalysis_sweep, sweep_csv
from .distill import OpClass, p_choi, p_compact, p_dual
from .errors import CoherDistError, DomainError, ResourceError, SolverError
from .linalg import hermitian, is_density, projector, pure_state
from .states import DistillationInstance, max_coherent, paper_state

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3
SWEEP_COLUMNS = ("fidelity", "eps", "class", "m", "probability", "gap", "status")
ROUTES = {"compact": p_compact, "dual": p_dual, "choi": p_choi}


class UsageError(DomainError):
    pass


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def parse_number(text: str) -> Fraction:
    """Exact rational from ``0.3``, ``1/3`` or ``3e-1``."""
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"not a number: {text!r}") from None


def parse_grid(text: str) -> list[Fraction]:
    """Comma list of numbers and ``start..end:step`` ranges (end inclusive), sorted, deduplicated."""
    out = set()
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            start, rest = part.split("..", 1)
            end, _, step = rest.partition(":")
            lo, hi = parse_number(start), parse_number(end)
            st = parse_number(step) if step else Fraction(1, 100)
            if st <= 0 or hi < lo:
                raise UsageError(f"bad range {part!r}")
            x = lo
            while x <= hi:
                out.add(x)
                x += st
        else:
            out.add(parse_number(part))
    if not out:
        raise UsageError("empty grid")
    return sorted(out)


def parse_amps(text: str) -> np.ndarray:
    try:
        vals = [complex(t.strip().replace("i", "j")) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad amplitude list {text!r}") from None
    v = np.array(vals)
    if not np.any(v.imag):
        v = v.real
    norm = np.linalg.norm(v)
    if v.size == 0 or norm == 0:
        raise UsageError("amplitudes must not all vanish")
    return v / norm


def load_density(path: str) -> np.ndarray:
    """JSON ``{"dim": d, "entries": [[re, im], ...]}``, row-major, flat or nested by row."""
    try:
        with open(path) as fh:
            data = json.load(fh)
        dim = int(data["dim"])
        entries = np.asarray(data["entries"], dtype=float)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read density file {path!r}: {exc}") from None
    if entries.shape[-1] != 2 or entries.size != 2 * dim * dim:
        raise UsageError(f"expected {dim * dim} [re, im] pairs")
    entries = entries.reshape(dim * dim, 2)
    rho = (entries[:, 0] + 1j * entries[:, 1]).reshape(dim, dim)
    if not np.any(rho.imag):
        rho = rho.real
    rho = hermitian(rho)
    if not is_density(rho):
        raise UsageError("density matrix must be positive semidefinite with unit trace")
    return rho


def resolve_state(args) -> tuple[np.ndarray, np.ndarray | None]:
    """``(rho, psi)``; ``psi`` is None for a mixed input."""
    if args.state is not None:
        if args.state.startswith("psi:"):
            try:
                k = int(args.state[4:])
            except ValueError:
                raise UsageError(f"bad state {args.state!r}") from None
            psi = max_coherent(k)
        else:
            psi = paper_state(args.state)
        return projector(psi), psi
    if args.amps is not None:
        psi = pure_state(parse_amps(args.amps))
        return projector(psi), psi
    rho = load_density(args.density)
    w, u = np.linalg.eigh(rho)
    if w[-1] > 1 - 1e-10:
        return rho, u[:, -1]
    return rho, None


def thread_count(requested: int | None = None) -> int:
    env = os.environ.get("COHERDIST_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"COHERDIST_THREADS must be an integer, got {env!r}") from None
    if requested:
        return max(1, requested)
    return os.cpu_count() or 1


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def analytic_values(psi: np.ndarray, m: int, eps) -> dict:
    a = normalize_amplitudes(psi)
    regime, n = dio_threshold_for(psi, m, eps)
    out = {"n_nonzero": n, "p_sio_pure": p_sio_pure(a, m), "dio_regime": regime.value,
           "dio_threshold_eps": float(max(Fraction(0), 1 - Fraction(n, m)))}
    if m == 2:
        out["qubit_threshold_eps"] = qubit_threshold(a)
        out["p_qubit_formula"] = p_qubit_target(a, float(eps))
    if n >= 2:
        tight, weak = mio_pure_lower_bound(a, m)
        out["mio_bound_tight"] = tight
        out["mio_bound_weak"] = weak
    return out


def cmd_compute(args) -> int:
    rho, psi = resolve_state(args)
    inst = DistillationInstance(rho, args.m, args.eps)
    res = ROUTES[args.route](inst, args.op_class, gap_tol=args.gap_tol, feas_tol=args.feas_tol)
    out = res.as_dict()
    out["raw"] = res.raw
    if psi is not None:
        out["analytic"] = analytic_values(psi, args.m, args.eps)
    _emit(json.dumps(out, indent=2) + "\n", args.output)
    return EXIT_OK


def run_sweep(rho: np.ndarray, cls: OpClass | str, m: int, eps_grid, workers: int | None = None,
              **solver_opts) -> list[dict]:
    """Solve the compact program at every ``eps``; rows come back ordered by ``eps``.

    A row that fails to solve keeps its status and NaN probability.
    """
    cls = OpClass(cls)
    grid = sorted(eps_grid)

    def run(eps):
        row = {"fidelity": 1 - eps, "eps": eps, "class": cls.value, "m": m, "result": None}
        try:
            res = p_compact(DistillationInstance(rho, m, eps), cls, **solver_opts)
            row.update(probability=res.probability, gap=res.gap, status=res.status, result=res)
        except SolverError as exc:
            row.update(probability=math.nan, gap=math.nan,
                       status=exc.solution.status.value if exc.solution is not None else "Error")
        return row

    n = min(thread_count(workers), len(grid))
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            return list(pool.map(run, grid))
    return [run(e) for e in grid]


def _num(x) -> str:
    return "nan" if math.isnan(x) else f"{float(x):.10f}"


def sweep_table(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        gap = "nan" if math.isnan(r["gap"]) else f"{r['gap']:.3e}"
        w.writerow([_num(r["fidelity"]), _num(r["eps"]), r["class"], r["m"], _num(r["probability"]),
                    gap, r["status"]])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    rho, _ = resolve_state(args)
    grid = parse_grid(args.eps)
    if grid[0] < 0 or grid[-1] >= 1:
        raise UsageError("eps grid must lie in [0, 1)")
    rows = run_sweep(rho, args.op_class, args.m, grid, args.workers,
                     gap_tol=args.gap_tol, feas_tol=args.feas_tol)
    _emit(sweep_table(rows), args.output)
    return EXIT_SOLVER if all(math.isnan(r["probability"]) for r in rows) else EXIT_OK


def cmd_catalysis(args) -> int:
    q_grid = [float(q) for q in parse_grid(args.q)]
    delta_grid = [float(d) for d in parse_grid(args.delta)]
    if any(not 0 <= q <= 1 for q in q_grid):
        raise UsageError("q must lie in [0, 1]")
    rows = catalysis_sweep(args.family, q_grid, delta_grid, m=args.m, eps=float(args.eps),
                           catalyst_dim=args.catalyst_dim, workers=thread_count(args.workers))
    _emit(sweep_csv(rows), args.output)
    return EXIT_SOLVER if all(math.isnan(r["p_assisted"]) for r in rows) else EXIT_OK


def cmd_verify(args) -> int:
    from .acceptance import run_all

    checks = run_all(seed=args.seed, full=args.full, report=print)
    passed = sum(c.passed for c in checks)
    print(f"{passed}/{len(checks)} checks passed")
    return EXIT_OK if passed == len(checks) else EXIT_VERIFY


def _emit(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# argument parser
# --------------------------------------------------------------------------

def _add_state(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--state", help="named state (main_example, fig2_example, v1, v2, u1, u2) or psi:k")
    g.add_argument("--amps", help="comma separated amplitudes, complex allowed (1+2j)")
    g.add_argument("--density", help="JSON file with dim and row-major [re, im] entries")


def _add_solver(p):
    p.add_argument("--class", dest="op_class", type=str.upper, choices=[c.value for c in OpClass],
                   default="MIO")
    p.add_argument("--m", type=int, default=2, help="target dimension")
    p.add_argument("--gap-tol", type=float, default=1e-8)
    p.add_argument("--feas-tol", type=float, default=1e-8)
    p.add_argument("-o", "--output", help="write to this file instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coherdist", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compute", help="one instance, printed as JSON")
    _add_state(p)
    _add_solver(p)
    p.add_argument("--eps", type=parse_number, default=Fraction(0))
    p.add_argument("--route", choices=sorted(ROUTES), default="compact")
    p.set_defaults(func=cmd_compute)

    p = sub.add_parser("sweep", help="probability against fidelity, as CSV")
    _add_state(p)
    _add_solver(p)
    p.add_argument("--eps", required=True, help="grid, e.g. 0.25..0.45:0.01,1/3")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("catalysis", help="assisted vs unassisted DIO probability, as CSV")
    p.add_argument("--family", choices=[f.value for f in Family], required=True)
    p.add_argument("--q", required=True, help="mixing weight grid")
    p.add_argument("--delta", default="0", help="catalyst error grid")
    p.add_argument("--eps", type=parse_number, default=Fraction(1, 100))
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--catalyst-dim", type=int, default=2)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_catalysis)

    p = sub.add_parser("verify", help="run the acceptance suite")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--quick", dest="full", action="store_false", help="catalysis headline only (default)")
    mode.add_argument("--full", dest="full", action="store_true", help="include the catalysis sweeps")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify, full=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DomainError, ResourceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CoherDistError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
