"""Command-line front end writing deterministic CSV files.

    quantum-lorenz trajectory --p0 1,1,1 --t-end 50 --dt-out 0.01 --out traj.csv
    quantum-lorenz expect --center 1,1,1 --widths 1e-3,1e-3,1e-3 --t-end 1 --dt-out 0.1 --out m.csv
    quantum-lorenz lyapunov --p0 1,1,1 --out lyap.csv
    quantum-lorenz ehrenfest --center 1,1,1 --width 1e-4 --out te.csv
    quantum-lorenz scan --center 1,1,1 --widths 1e-2,1e-3,1e-4,1e-5,1e-6 --out scan.csv

Exit status: 0 success, 2 usage, 3 numerical non-convergence, 4 insufficient
data, 5 I/O.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .chaos import ehrenfest_scan, ehrenfest_time, lyapunov_spectrum
from .ensemble import Dirac, GaussHermite, Gaussian, MonteCarlo, expectation, read_samples_csv
from .errors import (
    InputFileError,
    InsufficientDataError,
    InvalidParameterError,
    LorenzError,
    NonConvergenceError,
    StepLimitError,
)
from .integrate import METHODS, IntegratorConfig, integrate
from .lorenz import LorenzParams

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_INSUFFICIENT = 4
EXIT_IO = 5

SUBCOMMANDS = ("trajectory", "expect", "lyapunov", "ehrenfest", "scan")
THREADS_ENV = "EHRENFEST_THREADS"


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Fully resolved invocation. Fields a subcommand does not use stay ``None``."""

    subcommand: str
    params: LorenzParams
    integrator: IntegratorConfig
    scheme: GaussHermite | MonteCarlo
    seed: int
    out: str
    p0: tuple[float, ...] | None = None
    t_end: float | None = None
    dt_out: float | None = None
    packet: str | None = None
    center: tuple[float, ...] | None = None
    widths: tuple[float, ...] | None = None
    samples: str | None = None
    width: float | None = None
    delta: float | None = None
    horizon: float | None = None
    transient: float | None = None
    total_time: float | None = None
    renorm_interval: float | None = None
    lambda_max: float | None = None
    fit_out: str | None = None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed number list: {text!r}") from None
    if not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError(f"non-finite value in {text!r}")
    return vals


def _triple(text: str) -> tuple[float, float, float]:
    vals = _floats(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return vals


def _real(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed number: {text!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"non-finite number: {text!r}")
    return v


def _count(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed integer: {text!r}") from None
    return v


def _quadrature(text: str) -> tuple[str, int]:
    kind, _, num = text.partition(":")
    if kind not in ("gh", "mc") or not num:
        raise argparse.ArgumentTypeError(f"expected gh:<order> or mc:<samples>, got {text!r}")
    return kind, _count(num)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("model and numerics")
    g.add_argument("--sigma", type=_real, default=10.0)
    g.add_argument("--tau", type=_real, default=28.0)
    g.add_argument("--beta", type=_real, default=8.0 / 3.0)
    g.add_argument("--method", choices=METHODS, default="dopri5")
    g.add_argument("--rtol", type=_real, default=1e-9)
    g.add_argument("--atol", type=_real, default=1e-12)
    g.add_argument("--step", type=_real, default=1e-3, help="rk4 step size")
    g.add_argument("--max-steps", type=_count, default=10_000_000)
    g.add_argument("--min-step", type=_real, default=None, help="default 1e-12 * end time")
    g.add_argument("--quadrature", type=_quadrature, default=("gh", 9), help="gh:<odd order> or mc:<samples>")
    g.add_argument("--seed", type=_count, default=0)
    g.add_argument("--out", required=True)

    parser = _Parser(prog="quantum-lorenz", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("trajectory", parents=[common], help="flow f(t, p0) on a time grid")
    p.add_argument("--p0", type=_triple, required=True)
    p.add_argument("--t-end", type=_real, required=True)
    p.add_argument("--dt-out", type=_real, required=True)

    p = sub.add_parser("expect", parents=[common], help="moments of P(t) for a wavepacket")
    p.add_argument("--center", type=_triple, default=None)
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--widths", type=_triple)
    kind.add_argument("--dirac", action="store_true")
    kind.add_argument("--samples")
    p.add_argument("--t-end", type=_real, required=True)
    p.add_argument("--dt-out", type=_real, required=True)

    def lyap_flags(p):
        p.add_argument("--transient", type=_real, default=100.0)
        p.add_argument("--total-time", type=_real, default=2000.0)
        p.add_argument("--renorm-interval", type=_real, default=1.0)

    p = sub.add_parser("lyapunov", parents=[common], help="Lyapunov spectrum and entropy estimate")
    p.add_argument("--p0", type=_triple, default=(1.0, 1.0, 1.0))
    lyap_flags(p)

    def ehrenfest_flags(p):
        p.add_argument("--center", type=_triple, default=(1.0, 1.0, 1.0))
        p.add_argument("--delta", type=_real, default=1.0)
        p.add_argument("--horizon", type=_real, default=50.0)

    p = sub.add_parser("ehrenfest", parents=[common], help="Ehrenfest time of one packet width")
    ehrenfest_flags(p)
    p.add_argument("--width", type=_real, required=True)

    p = sub.add_parser("scan", parents=[common], help="Ehrenfest times over decreasing widths")
    ehrenfest_flags(p)
    p.add_argument("--widths", type=_floats, default=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6))
    p.add_argument("--lambda-max", type=_real, default=None, help="skip the Lyapunov run")
    p.add_argument("--fit-out", default=None, help="default: <out stem>_fit.csv")
    lyap_flags(p)
    return parser


def _validated(flag, build, *args):
    try:
        return build(*args)
    except InvalidParameterError as exc:
        raise UsageError(f"argument {flag}: {exc}") from None


def parse_args(argv) -> RunConfig:
    """Parse ``argv`` (without the program name) into a resolved ``RunConfig``.

    Raises ``UsageError`` naming the offending flag.
    """
    ns = _build_parser().parse_args(list(argv))

    for flag, name in (("--sigma", "sigma"), ("--beta", "beta")):
        if getattr(ns, name) <= 0:
            raise UsageError(f"argument {flag}: must be positive, got {getattr(ns, name)!r}")
    params = LorenzParams(ns.sigma, ns.tau, ns.beta)
    for flag, name, ok in (
        ("--rtol", "rtol", ns.rtol >= 1e-14),
        ("--atol", "atol", ns.atol >= 1e-300),
        ("--step", "step", ns.step > 0),
        ("--max-steps", "max_steps", ns.max_steps >= 1),
        ("--min-step", "min_step", ns.min_step is None or ns.min_step > 0),
    ):
        if not ok:
            raise UsageError(f"argument {flag}: invalid value {getattr(ns, name)!r}")
    integrator = IntegratorConfig(ns.method, ns.step, ns.rtol, ns.atol, ns.max_steps, ns.min_step)

    if not 0 <= ns.seed < 2**64:
        raise UsageError(f"argument --seed: must be a 64-bit unsigned integer, got {ns.seed}")
    kind, num = ns.quadrature
    if kind == "gh":
        scheme = _validated("--quadrature", GaussHermite, num)
    else:
        scheme = _validated("--quadrature", MonteCarlo, num, ns.seed)

    extra = {}
    sc = ns.subcommand
    if sc in ("trajectory", "expect"):
        if ns.t_end <= 0:
            raise UsageError(f"argument --t-end: must be positive, got {ns.t_end!r}")
        if ns.dt_out <= 0:
            raise UsageError(f"argument --dt-out: must be positive, got {ns.dt_out!r}")
        extra.update(t_end=ns.t_end, dt_out=ns.dt_out)
    if sc == "trajectory":
        extra["p0"] = ns.p0
    elif sc == "expect":
        if ns.samples is not None:
            extra.update(packet="samples", samples=ns.samples)
        else:
            if ns.center is None:
                raise UsageError("argument --center: required with --widths or --dirac")
            if ns.dirac:
                extra.update(packet="dirac", center=ns.center)
            else:
                if not all(w > 0 for w in ns.widths):
                    raise UsageError(f"argument --widths: widths must be positive, got {ns.widths}")
                extra.update(packet="gaussian", center=ns.center, widths=ns.widths)
    if sc == "lyapunov":
        extra["p0"] = ns.p0
    if sc in ("lyapunov", "scan"):
        if ns.renorm_interval <= 0:
            raise UsageError(f"argument --renorm-interval: must be positive, got {ns.renorm_interval!r}")
        if not 0 < ns.transient < ns.total_time:
            raise UsageError("argument --transient: need 0 < transient < total-time")
        extra.update(transient=ns.transient, total_time=ns.total_time, renorm_interval=ns.renorm_interval)
    if sc in ("ehrenfest", "scan"):
        if ns.delta <= 0:
            raise UsageError(f"argument --delta: must be positive, got {ns.delta!r}")
        if ns.horizon <= 0:
            raise UsageError(f"argument --horizon: must be positive, got {ns.horizon!r}")
        extra.update(center=ns.center, delta=ns.delta, horizon=ns.horizon)
    if sc == "ehrenfest":
        if ns.width <= 0:
            raise UsageError(f"argument --width: must be positive, got {ns.width!r}")
        extra["width"] = ns.width
    if sc == "scan":
        w = ns.widths
        if not all(x > 0 for x in w) or any(b >= a for a, b in zip(w, w[1:])):
            raise UsageError(f"argument --widths: must be positive and strictly decreasing, got {w}")
        out = Path(ns.out)
        fit_out = ns.fit_out or str(out.with_name(f"{out.stem}_fit{out.suffix or '.csv'}"))
        extra.update(widths=w, lambda_max=ns.lambda_max, fit_out=fit_out)

    return RunConfig(sc, params, integrator, scheme, ns.seed, ns.out, **extra)


def _num(x: float) -> str:
    return repr(float(x))


def _nums(xs) -> str:
    return ",".join(_num(x) for x in xs)


def serialize(config: RunConfig) -> list[str]:
    """Flag list that ``parse_args`` maps back to an equal ``config``.

    Values are attached as ``--flag=value`` so negative numbers survive.
    """
    c = config
    argv = [c.subcommand]
    p, ic = c.params, c.integrator
    argv += ["--sigma", _num(p.sigma), "--tau", _num(p.tau), "--beta", _num(p.beta)]
    argv += ["--method", ic.method, "--rtol", _num(ic.rel_tol), "--atol", _num(ic.abs_tol),
             "--step", _num(ic.step), "--max-steps", str(ic.max_steps)]
    if ic.min_step is not None:
        argv += ["--min-step", _num(ic.min_step)]
    if isinstance(c.scheme, GaussHermite):
        argv += ["--quadrature", f"gh:{c.scheme.order}"]
    else:
        argv += ["--quadrature", f"mc:{c.scheme.n}"]
    argv += ["--seed", str(c.seed), "--out", c.out]

    if c.p0 is not None:
        argv += ["--p0", _nums(c.p0)]
    if c.t_end is not None:
        argv += ["--t-end", _num(c.t_end), "--dt-out", _num(c.dt_out)]
    if c.subcommand == "expect":
        if c.packet == "samples":
            argv += ["--samples", c.samples]
        else:
            argv += ["--center", _nums(c.center)]
            argv += ["--dirac"] if c.packet == "dirac" else ["--widths", _nums(c.widths)]
    if c.transient is not None:
        argv += ["--transient", _num(c.transient), "--total-time", _num(c.total_time),
                 "--renorm-interval", _num(c.renorm_interval)]
    if c.delta is not None:
        argv += ["--center", _nums(c.center), "--delta", _num(c.delta), "--horizon", _num(c.horizon)]
    if c.width is not None:
        argv += ["--width", _num(c.width)]
    if c.subcommand == "scan":
        argv += ["--widths", _nums(c.widths), "--fit-out", c.fit_out]
        if c.lambda_max is not None:
            argv += ["--lambda-max", _num(c.lambda_max)]
    joined = [argv[0]]
    it = iter(argv[1:])
    for tok in it:
        if tok == "--dirac":
            joined.append(tok)
        else:
            joined.append(f"{tok}={next(it)}")
    return joined


def output_grid(t_end: float, dt: float) -> np.ndarray:
    """``0, dt, 2 dt, ...`` up to ``t_end``, with ``t_end`` itself always last."""
    n = int(math.floor(t_end / dt * (1 + 1e-12)))
    grid = dt * np.arange(n + 1)
    grid = grid[grid < t_end * (1 - 1e-12)]
    return np.append(grid, t_end)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_atomic(path, text: str):
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    if not directory.is_dir():
        raise FileNotFoundError(f"cannot write {path}: directory {directory} does not exist")
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="ascii") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def thread_cap() -> int | None:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def run(config: RunConfig) -> tuple[int, str]:
    """Execute ``config``; returns (exit status, summary line).

    Library exceptions propagate; ``main`` maps them to exit codes.
    """
    c = config
    threads = thread_cap()
    if c.subcommand == "trajectory":
        traj = integrate(c.p0, c.params, c.t_end, c.integrator)
        grid = output_grid(c.t_end, c.dt_out)
        rows = [[_num(t), *map(_num, traj(t))] for t in grid]
        write_atomic(c.out, _csv_text(["t", "p1", "p2", "p3"], rows))
        return EXIT_OK, f"trajectory: {len(rows)} rows -> {c.out}"

    if c.subcommand == "expect":
        if c.packet == "samples":
            packet = read_samples_csv(c.samples)
        elif c.packet == "dirac":
            packet = Dirac(c.center)
        else:
            packet = Gaussian(c.center, c.widths)
        grid = output_grid(c.t_end, c.dt_out)
        stats = expectation(packet, c.scheme, c.params, grid, c.integrator)
        rows = [[_num(s.time), *map(_num, s.mean), *map(_num, s.variance), *map(_num, s.standard_error)]
                for s in stats]
        header = ["t", "mean1", "mean2", "mean3", "var1", "var2", "var3", "se1", "se2", "se3"]
        write_atomic(c.out, _csv_text(header, rows))
        return EXIT_OK, f"expect: {len(rows)} rows -> {c.out}"

    if c.subcommand == "lyapunov":
        res = lyapunov_spectrum(c.p0, c.params, c.transient, c.total_time, c.renorm_interval, c.integrator)
        header = ["lambda1", "lambda2", "lambda3", "exponent_sum", "ks_entropy",
                  "transient", "total_time", "renorm_interval"]
        row = [*map(_num, res.exponents), _num(res.exponent_sum), _num(res.ks_entropy_estimate),
               _num(res.transient_discarded), _num(res.total_time), _num(res.renorm_interval)]
        write_atomic(c.out, _csv_text(header, [row]))
        return EXIT_OK, f"lyapunov: lambda_max={res.max_exponent:.6f} -> {c.out}"

    scan_header = ["width", "ln_inv_width", "t_ehrenfest", "bounded"]

    def scan_row(r):
        t = "" if r.crossing_time is None else _num(r.crossing_time)
        return [_num(r.width), _num(math.log(1.0 / r.width)), t, "true" if r.bounded else "false"]

    if c.subcommand == "ehrenfest":
        res = ehrenfest_time(c.center, c.width, c.delta, c.params, c.scheme, c.horizon, c.integrator)
        write_atomic(c.out, _csv_text(scan_header, [scan_row(res)]))
        shown = "unbounded" if res.crossing_time is None else f"{res.crossing_time:.6f}"
        return EXIT_OK, f"ehrenfest: t_E={shown} -> {c.out}"

    if c.subcommand == "scan":
        lam = c.lambda_max
        if lam is None:
            lam = lyapunov_spectrum(c.center, c.params, c.transient, c.total_time,
                                    c.renorm_interval, c.integrator).max_exponent
        res = ehrenfest_scan(c.center, c.widths, c.delta, c.params, c.scheme, c.horizon,
                             c.integrator, lambda_reference=lam, max_workers=threads)
        write_atomic(c.out, _csv_text(scan_header, [scan_row(r) for r in res.rows]))
        fit = [_num(res.fitted_slope), _num(res.lambda_reference), _num(res.slope_times_lambda)]
        write_atomic(c.fit_out, _csv_text(["fitted_slope", "lambda_max", "slope_times_lambda"], [fit]))
        return EXIT_OK, (f"scan: slope={res.fitted_slope:.6f} lambda_max={res.lambda_reference:.6f} "
                         f"-> {c.out}, {c.fit_out}")
    raise UsageError(f"unknown subcommand {c.subcommand!r}")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        config = parse_args(argv)
        status, summary = run(config)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (NonConvergenceError, StepLimitError) as exc:
        print(f"quantum-lorenz: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InsufficientDataError as exc:
        print(f"quantum-lorenz: insufficient data: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except (OSError, InputFileError) as exc:
        print(f"quantum-lorenz: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvalidParameterError, LorenzError) as exc:
        print(f"quantum-lorenz: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(summary, file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
