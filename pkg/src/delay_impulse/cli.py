"""Command-line front end.

    delay-impulse [--threads N] solve PROBLEM [--out DIR]
    delay-impulse simulate PROBLEM [--store FILE] [--paths N] [--seed S] [--strategy S] [--out DIR]
    delay-impulse decide [--store FILE] [--problem PROBLEM] --t T --x X [--pending P]
    delay-impulse validate PROBLEM [--store FILE]
    delay-impulse oracle-check PROBLEM [--tol TOL]
    delay-impulse export [--store FILE] --k K --t T [--pending P] [--out FILE]

PROBLEM is a JSON file or the name of a bundled problem. Errors are reported
on stderr as one JSON object; exit codes are 0 (success), 2 (an invariant or
check failed), 3 (bad input) and 4 (numerical failure).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .catalog import BUNDLED, bundled
from .invariants import run_all
from .kernel import NumericalError, interpolate
from .lattice import EMPTY, InvalidGrid, MisalignedGrid, PendingConfig, build_grids
from .model import ProblemError, ProblemSpec, SchemaViolation, ValidatedProblem, validate_problem
from .oracle import InstanceTooLarge, brute_force_oracle
from .policy import (
    AlwaysImpulse,
    NeverImpulse,
    OrderBook,
    StorePolicy,
    ThresholdImpulse,
    extract_decision,
    monte_carlo_value,
    simulate_path,
)
from .solver import DependencyIncomplete, solve
from .storage import StoreError, build_manifest, check_grid, load_store, persist_store, write_manifest

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4
THREADS_ENV = "DELAY_IMPULSE_THREADS"
DEFAULT_OUT = "run"


class ParseError(ProblemError):
    """Problem file is not valid JSON."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        super().__init__(message)
        self.line = line
        self.column = column


class InputError(Exception):
    pass


def read_problem_bytes(source: str) -> bytes:
    path = Path(source)
    if path.is_file():
        return path.read_bytes()
    if source in BUNDLED:
        return json.dumps(bundled(source), indent=2).encode("utf-8")
    raise InputError(f"no problem file or bundled problem named {source!r}")


def parse_problem(raw: bytes, source: str = "<problem>") -> ProblemSpec:
    try:
        doc = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ParseError(f"{source}: not UTF-8 text ({exc})") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}", exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise SchemaViolation(f"{source}: top level must be an object")
    try:
        return ProblemSpec.from_dict(doc)
    except SchemaViolation:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaViolation(f"{source}: {exc}") from None


def load_problem(path: str | Path) -> ProblemSpec:
    """Read a problem file (or bundled problem name) into a ProblemSpec."""
    return parse_problem(read_problem_bytes(str(path)), str(path))


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        n = flag
    elif os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError:
            raise InputError(f"{THREADS_ENV} must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise InputError("thread count must be at least 1")
    return n


def fmt(v: float) -> str:
    return f"{v:.17g}"


def _state(text: str, dim: int) -> np.ndarray:
    try:
        x = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise InputError(f"cannot parse state {text!r}") from None
    if x.shape != (dim,):
        raise InputError(f"state needs {dim} components, got {len(x)}")
    return x


def _pending(text: str | None, store) -> OrderBook:
    """``t1:e1,t2:e2`` with times on the grid and impulse indices."""
    if not text:
        return OrderBook()
    pairs = []
    for item in text.split(","):
        try:
            t, e = item.split(":")
            pairs.append((store.tgrid.index_of(t), int(e)))
        except ValueError as exc:
            raise InputError(f"cannot parse pending order {item!r}: {exc}") from None
    book = OrderBook(tuple(pairs))
    if not book.config.is_admissible(store.tgrid) or any(not 0 <= e < store.problem.n_impulses for _, e in pairs):
        raise InputError(f"pending orders {text!r} are not an admissible configuration")
    return book


def _open_problem(source: str) -> tuple[ValidatedProblem, bytes]:
    raw = read_problem_bytes(source)
    return validate_problem(parse_problem(raw, source)), raw


def _grids(problem: ValidatedProblem):
    if problem.spec.grid is None:
        raise InputError("problem has no grid section")
    return build_grids(problem.delay, problem.spec.grid)


def _store_for(args, problem: ValidatedProblem | None = None):
    if getattr(args, "store", None):
        store = load_store(args.store)
        if problem is not None:
            check_grid(store, *_grids(problem))
        return store
    if problem is None:
        return load_store(Path(DEFAULT_OUT) / "store.bin")
    return solve(problem, threads=args.threads)


def cmd_solve(args) -> int:
    problem, raw = _open_problem(args.problem)
    store = solve(problem, threads=args.threads)
    out = Path(args.out)
    persist_store(store, out / "store.bin")
    write_manifest(build_manifest(store, raw, __version__), out / "manifest.json")
    x0 = float(interpolate(store.v0[0], problem.x0[None], store.sgrid)[0])
    print(json.dumps({"v0_at_x0": x0, "stages": store.tgrid.n_stages,
                      "configs_by_k": store.counts_by_k(), "store": str(out / "store.bin")}))
    return EXIT_OK


def _strategy(text: str, store_fn):
    if text == "optimal":
        return StorePolicy(store_fn())
    if text == "never":
        return NeverImpulse()
    kind, _, rest = text.partition(":")
    try:
        if kind == "always":
            return AlwaysImpulse(int(rest or 0))
        if kind == "threshold":
            level, impulse = rest.split("@") if "@" in rest else (rest, "0")
            return ThresholdImpulse(float(level), int(impulse))
    except ValueError:
        pass
    raise InputError(f"unknown strategy {text!r}; use optimal, never, always:E or threshold:LEVEL@E")


def cmd_simulate(args) -> int:
    problem, _ = _open_problem(args.problem)
    tgrid, _ = _grids(problem)
    strategy = _strategy(args.strategy, lambda: _store_for(args, problem))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.trajectories):
        simulate_path(problem, tgrid, strategy, args.seed, index=i).to_csv(out / f"trajectory_{i}.csv")
    summary: dict[str, Any] = {"paths": args.paths, "seed": args.seed, "strategy": args.strategy}
    if args.paths >= 2:
        mean, stderr = monte_carlo_value(problem, tgrid, strategy, args.paths, args.seed, args.threads)
        summary.update(mean=mean, stderr=stderr)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    print(json.dumps(summary))
    return EXIT_OK


def cmd_decide(args) -> int:
    problem = _open_problem(args.problem)[0] if args.problem else None
    store = _store_for(argparse.Namespace(store=args.store or str(Path(DEFAULT_OUT) / "store.bin")), problem)
    j = store.tgrid.index_of(args.t)
    action = extract_decision(store, j, _state(args.x, store.problem.dim), _pending(args.pending, store))
    print(json.dumps({"t": args.t, "action": action.kind, "impulse": action.impulse,
                      "label": str(action)}))
    return EXIT_OK


def cmd_validate(args) -> int:
    problem, _ = _open_problem(args.problem)
    store = _store_for(args, problem)
    results = run_all(store)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_oracle_check(args) -> int:
    problem, _ = _open_problem(args.problem)
    store = solve(problem, threads=args.threads)
    diff = float(np.max(np.abs(store.v0[0].ravel() - brute_force_oracle(problem))))
    ok = diff <= args.tol
    print(f"{'PASS' if ok else 'FAIL'}  oracle agreement: max |diff| = {diff:.3g} (tol {args.tol:g})")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_export(args) -> int:
    store = load_store(args.store)
    j = store.tgrid.index_of(args.t)
    book = _pending(args.pending, store)
    if book.k != args.k:
        raise InputError(f"--k {args.k} does not match {book.k} pending orders")
    p = book.config if book.k else EMPTY
    try:
        values = store.value(p, j)
    except (KeyError, IndexError, DependencyIncomplete) as exc:
        raise InputError(f"v_{args.k} is not defined at t = {args.t} for this configuration: {exc}") from None
    pts = store.sgrid.points.reshape(-1, store.sgrid.dim)
    sink = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(sink)
        w.writerow([f"x{i}" for i in range(store.sgrid.dim)] + ["value"])
        for x, v in zip(pts, values.ravel()):
            w.writerow([fmt(c) for c in x] + [fmt(v)])
    finally:
        if sink is not sys.stdout:
            sink.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delay-impulse", description=__doc__.split("\n")[0])
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or all cores)")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a problem and persist the value store")
    p.add_argument("problem")
    p.add_argument("--out", default=DEFAULT_OUT)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="simulate controlled paths and estimate the expected profit")
    p.add_argument("problem")
    p.add_argument("--store")
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", default="optimal")
    p.add_argument("--trajectories", type=int, default=1, help="number of paths written as CSV")
    p.add_argument("--out", default=os.path.join(DEFAULT_OUT, "simulation"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decide", help="optimal action at one (t, x, pending orders)")
    p.add_argument("--store")
    p.add_argument("--problem", help="check the store against this problem's grids")
    p.add_argument("--t", required=True)
    p.add_argument("--x", required=True, help="comma-separated state")
    p.add_argument("--pending", help="comma-separated time:impulse_index pairs")
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("validate", help="run the invariant suite")
    p.add_argument("problem")
    p.add_argument("--store")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("oracle-check", help="compare the solver with brute-force induction")
    p.add_argument("problem")
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("export", help="CSV slice of v_k(t, ., p)")
    p.add_argument("--store", default=os.path.join(DEFAULT_OUT, "store.bin"))
    p.add_argument("--k", type=int, default=0)
    p.add_argument("--t", required=True)
    p.add_argument("--pending")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return parser


def _report(code: int, exc: BaseException) -> int:
    doc: dict[str, Any] = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ParseError) and exc.line is not None:
        doc.update(line=exc.line, column=exc.column)
    violations = getattr(exc, "violations", None)
    if violations:
        doc["violations"] = [{"code": v.code, "field": v.field, "message": v.message} for v in violations]
    print(json.dumps(doc), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.threads = resolve_threads(args.threads)
        return args.func(args)
    except NumericalError as exc:
        return _report(EXIT_NUMERIC, exc)
    except (ProblemError, StoreError, InputError, InstanceTooLarge, MisalignedGrid, InvalidGrid,
            DependencyIncomplete, OSError) as exc:
        return _report(EXIT_INPUT, exc)


if __name__ == "__main__":
    sys.exit(main())
