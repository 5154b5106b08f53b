"""``scanstat`` command line: gen, scan, cover, mc, bench.

Machine-readable output (JSON, CSV) goes to stdout or files; human notes go
to stderr.  Exit codes: 0 success, 1 usage error, 2 data or format error.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .epsscan import CoveringParams, covering_verify, enumerate_covering, epsilon_adaptive_scan
from .field import FieldError, GridField, Rect, SignalSpec, inject_signal, load_field, save_field, white_noise
from .harness import (
    ANCHOR_STREAM,
    ExperimentConfig,
    bench_epsilon,
    replicate_seed,
    run_experiment,
    run_metadata,
    run_null,
    run_power,
    summary,
    write_bench_csv,
    write_power_csv,
    write_qq_csv,
    write_roc_csv,
    write_size_csv,
)
from .scanners import (
    ShapeRange,
    adaptive_scan,
    modified_adaptive_stat,
    modified_outcome,
    multiscale_scan,
    oracle_scan,
)
from .thresholds import max_scale

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_vec(text: str, d: Optional[int] = None, name: str = "shape") -> tuple[int, ...]:
    """``"34x38"`` -> ``(34, 38)``."""
    try:
        vec = tuple(int(x) for x in text.lower().split("x"))
    except ValueError:
        raise UsageError(f"--{name}: expected integers separated by 'x', got {text!r}") from None
    if d is not None and len(vec) != d:
        raise UsageError(f"--{name}: expected {d} components, got {text!r}")
    return vec


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def _threads(args) -> int:
    env = os.environ.get("SCANSTAT_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"SCANSTAT_THREADS must be an integer, got {env!r}") from None
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.threads
    return os.cpu_count() or 1


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- gen -----------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.n < 1 or args.d < 1:
        raise UsageError("--n and --d must be >= 1")
    if args.mu < 0:
        raise UsageError("--mu must be nonnegative")
    dims = (args.n,) * args.d
    out = Path(args.out)
    if out.suffix.lower() == ".csv" and args.d != 2:
        raise UsageError("CSV output needs --d 2")
    field = GridField(np.zeros(dims)) if args.no_noise else white_noise(dims, args.seed)
    rect = None
    if args.shape is not None:
        shape = parse_vec(args.shape, args.d)
        if any(not 1 <= h <= args.n for h in shape):
            raise UsageError(f"--shape {args.shape} does not fit a grid of side {args.n}")
        if args.anchor == "random":
            rng = np.random.default_rng(replicate_seed(args.seed, 0, ANCHOR_STREAM))
            anchor = tuple(int(rng.integers(0, args.n - h + 1)) for h in shape)
        else:
            anchor = parse_vec(args.anchor, args.d, "anchor")
        rect = Rect(anchor, shape)
        if not rect.fits(dims):
            raise UsageError(f"rectangle {args.anchor}+{args.shape} does not fit the grid")
        field = inject_signal(field, SignalSpec(rect, args.mu))
    elif args.mu > 0:
        raise UsageError("--mu needs --shape")
    try:
        save_field(field, out)
    except OSError as exc:
        raise DataError(f"cannot write {out}: {exc}") from exc
    _emit(
        {
            "path": str(out),
            "format": "csv" if out.suffix.lower() == ".csv" else "GF01",
            "dims": list(dims),
            "seed": args.seed,
            "noise": not args.no_noise,
            "mu": args.mu if rect is not None else 0.0,
            "rect": rect.to_dict() if rect is not None else None,
        }
    )
    return EXIT_OK


# -- scan ----------------------------------------------------------------------


_METHODS = {"oracle": "oracle", "multi": "multiscale", "multiscale": "multiscale",
            "adaptive": "adaptive", "modified": "modified", "eps": "epsilon", "epsilon": "epsilon"}


def _check_scan_flags(args, method: str) -> None:
    def forbid(flag, value):
        if value is not None and value is not False:
            raise UsageError(f"{flag} is not used by --method {args.method}")

    if method == "oracle":
        if args.hstar is None:
            raise UsageError("--method oracle needs --hstar")
        forbid("--hlo", args.hlo)
        forbid("--hhi", args.hhi)
    else:
        forbid("--hstar", args.hstar)
        if args.hlo is None:
            raise UsageError(f"--method {args.method} needs --hlo")
    if method == "epsilon":
        if args.eps is None:
            raise UsageError("--method eps needs --eps")
    else:
        forbid("--eps", args.eps)
        forbid("--in-range-only", args.in_range_only)
    if method != "modified":
        forbid("--mc-reps", args.mc_reps)
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")


def _modified_mc_pvalue(field: GridField, shapes: ShapeRange, stat: float, reps: int, seed: int) -> float:
    hits = 0
    for r in range(reps):
        null = white_noise(field.dims, replicate_seed(seed, r, 0))
        hits += modified_adaptive_stat(null, shapes)[0] >= stat
    return (1 + hits) / (1 + reps)


def cmd_scan(args) -> int:
    method = _METHODS.get(args.method)
    if method is None:
        raise UsageError(f"unknown --method {args.method!r}")
    _check_scan_flags(args, method)
    try:
        field = load_field(args.input)
    except (OSError, FieldError) as exc:
        raise DataError(f"cannot read {args.input}: {exc}") from exc
    if len(set(field.dims)) != 1:
        raise DataError(f"expected a square grid [n]^d, got dims {field.dims}")
    n, d = field.dims[0], field.d
    if method == "epsilon" and n & (n - 1):
        raise DataError(f"n must be a power of two for --method eps (got n = {n})")

    try:
        if method == "oracle":
            out = oracle_scan(field, parse_vec(args.hstar, d, "hstar"), args.alpha)
        else:
            shapes = ShapeRange(args.hlo, args.hhi if args.hhi is not None else max_scale(n))
            if method == "multiscale":
                out = multiscale_scan(field, shapes, args.alpha, args.per_shape)
            elif method == "adaptive":
                out = adaptive_scan(field, shapes, args.alpha, args.per_shape)
            elif method == "epsilon":
                out = epsilon_adaptive_scan(
                    field, shapes, args.eps, args.alpha, bool(args.in_range_only), args.per_shape
                )
            else:
                out = modified_outcome(field, shapes)
                out.alpha = args.alpha
                if args.mc_reps:
                    out.pvalue = _modified_mc_pvalue(field, shapes, out.stat, args.mc_reps, args.seed)
                else:
                    _note("modified statistic has no closed-form P-value; pass --mc-reps to simulate one")
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _emit(out.to_dict())
    if out.pvalue is not None:
        verdict = "reject" if out.reject else "accept"
        _note(f"{out.kind}: stat={out.stat:.4f} pvalue={out.pvalue:.4g} -> {verdict} at alpha={args.alpha}")
    return EXIT_OK


# -- cover ---------------------------------------------------------------------


def cmd_cover(args) -> int:
    if args.n < 1 or args.d < 1:
        raise UsageError("--n and --d must be >= 1")
    if args.n & (args.n - 1):
        raise DataError(f"n must be a power of two (got n = {args.n})")
    try:
        shapes = ShapeRange(args.hlo, args.hhi)
        if shapes.h_hi > args.n:
            raise ValueError(f"--hhi {args.hhi} exceeds n = {args.n}")
        params = CoveringParams.build(args.eps, args.d, shapes, args.n)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    if args.verify:
        if args.trials < 1:
            raise UsageError("--trials must be >= 1")
        worst = covering_verify(args.n, shapes, params, args.trials, args.seed, args.method)
        status = "PASS" if worst <= args.eps else "FAIL"
        report = {
            "status": status,
            "max_min_delta": worst,
            "eps": args.eps,
            "n": args.n,
            "d": args.d,
            "h_lo": args.hlo,
            "h_hi": args.hhi,
            "trials": args.trials,
            "seed": args.seed,
            "method": args.method,
            "a_lo": params.a_lo,
            "a_hi": params.a_hi,
            "f_max": params.f_max,
        }
        _emit(report)
        _note(f"{status}: max_min_delta = {worst:.6f} (eps = {args.eps})")
        return EXIT_OK

    d = args.d
    header = [f"a_{j + 1}" for j in range(d)] + [f"f_{j + 1}" for j in range(d)] + [f"t_{j + 1}" for j in range(d)]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(header)
        count = 0
        for el in enumerate_covering(args.n, shapes, params):
            writer.writerow(el.a + el.f + el.t)
            count += 1
    finally:
        if args.out:
            fh.close()
    _note(f"{count} covering rectangles (a in [{params.a_lo}, {params.a_hi}], f_max = {params.f_max})")
    return EXIT_OK


# -- mc ------------------------------------------------------------------------


def _config(args, scanners) -> ExperimentConfig:
    shape = parse_vec(args.shape, args.d) if args.shape else None
    try:
        return ExperimentConfig(
            n=args.n,
            d=args.d,
            h_lo=args.hlo,
            h_hi=args.hhi,
            mu=args.mu,
            signal_shape=shape,
            reps=args.reps,
            seed=args.seed,
            scanners=tuple(scanners),
            alpha_grid=_floats(args.alphas),
            threads=_threads(args),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_mc(args) -> int:
    if args.n < 1 or args.reps < 1:
        raise UsageError("--n and --reps must be >= 1")
    scanners = [s.strip() for s in args.scanners.split(",") if s.strip()]
    want_null = args.null or not args.power
    want_power = args.power or not args.null
    config = _config(args, scanners)
    if want_power and config.signal_shape is None:
        raise UsageError("power runs need --shape")
    out_dir = Path(args.out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if want_null and want_power:
            result = run_experiment(config)
        elif want_null:
            result = run_null(config)
        else:
            result = run_power(config)

    written = []
    if want_null:
        write_size_csv(result, out_dir / "size.csv")
        write_qq_csv(result, out_dir / "qq.csv")
        written += ["size.csv", "qq.csv"]
    if want_power:
        write_power_csv(result, out_dir / "power.csv")
        written.append("power.csv")
    if want_null and want_power:
        write_roc_csv(result, out_dir / "roc.csv")
        written.append("roc.csv")
    report = summary(result)
    report["files"] = written
    report["run"] = run_metadata()
    (out_dir / "summary.json").write_text(json.dumps(report, indent=2) + "\n")
    _emit(report)
    return EXIT_OK


# -- bench ---------------------------------------------------------------------


def cmd_bench(args) -> int:
    eps_list = _floats(args.eps_list)
    if not eps_list:
        raise UsageError("--eps-list is empty")
    if args.n & (args.n - 1):
        raise DataError(f"n must be a power of two (got n = {args.n})")
    try:
        config = ExperimentConfig(
            n=args.n, d=args.d, h_lo=args.hlo, h_hi=args.hhi, reps=args.reps, seed=args.seed,
            scanners=(f"epsilon:{eps_list[0]}",),
        )
        records = bench_epsilon(config, eps_list)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_bench_csv(records, Path(args.out))
    for r in records:
        _note(f"eps={r.eps:g}: median {r.median_s:.4f}s, op_count {r.op_count}")
    _emit({"path": args.out, "rows": [r.__dict__ for r in records]})
    return EXIT_OK


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scanstat", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen", help="simulate a field, optionally with a rectangle signal")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mu", type=float, default=0.0)
    g.add_argument("--shape", help="signal shape, e.g. 34x38")
    g.add_argument("--anchor", default="random", help="signal anchor, e.g. 10x20, or 'random'")
    g.add_argument("--no-noise", action="store_true", help="signal only, zero noise")
    g.add_argument("--out", required=True, help="output path (.csv for CSV, otherwise GF01)")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("scan", help="run one scan test on a field file")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--method", required=True, choices=sorted(_METHODS))
    s.add_argument("--hstar")
    s.add_argument("--hlo", type=int)
    s.add_argument("--hhi", type=int)
    s.add_argument("--eps", type=float)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--per-shape", action="store_true")
    s.add_argument("--in-range-only", action="store_true", default=None)
    s.add_argument("--mc-reps", type=int, help="simulate a P-value for --method modified")
    s.add_argument("--seed", type=int, default=0, help="seed for --mc-reps null fields")
    s.set_defaults(func=cmd_scan)

    c = sub.add_parser("cover", help="list or verify the dyadic epsilon-covering")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--d", type=int, default=2)
    c.add_argument("--hlo", type=int, required=True)
    c.add_argument("--hhi", type=int, required=True)
    c.add_argument("--eps", type=float, required=True)
    c.add_argument("--verify", action="store_true")
    c.add_argument("--trials", type=int, default=10000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--method", choices=("exact", "construction"), default="exact")
    c.add_argument("--out", help="covering CSV path (default stdout)")
    c.set_defaults(func=cmd_cover)

    m = sub.add_parser("mc", help="Monte Carlo size / power / ROC experiment")
    m.add_argument("--null", action="store_true")
    m.add_argument("--power", action="store_true")
    m.add_argument("--n", type=int, default=128)
    m.add_argument("--d", type=int, default=2)
    m.add_argument("--hlo", type=int, default=4)
    m.add_argument("--hhi", type=int)
    m.add_argument("--mu", type=float, default=6.0)
    m.add_argument("--shape")
    m.add_argument("--reps", type=int, default=400)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--scanners", default="multiscale,adaptive")
    m.add_argument("--alphas", default="0.05")
    m.add_argument("--out-dir", default=".")
    m.add_argument("--threads", type=int)
    m.set_defaults(func=cmd_mc)

    b = sub.add_parser("bench", help="time the epsilon scan over a list of eps")
    b.add_argument("--eps-list", required=True)
    b.add_argument("--n", type=int, default=256)
    b.add_argument("--d", type=int, default=2)
    b.add_argument("--hlo", type=int, default=32)
    b.add_argument("--hhi", type=int)
    b.add_argument("--reps", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="bench.csv")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: gen, scan, cover, mc, bench")
        return args.func(args)
    except UsageError as exc:
        _note(f"error: {exc}")
        return EXIT_USAGE
    except DataError as exc:
        _note(f"error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
