"""Lyapunov spectrum, entropy estimate and Ehrenfest times of momentum averages."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ensemble import (
    Dirac,
    GaussHermite,
    Gaussian,
    QuadratureScheme,
    WavepacketSpec,
    pairwise_sum,
    quadrature_nodes,
)
from .errors import InsufficientDataError, InvalidParameterError, NonConvergenceError
from .integrate import DEFAULT_CONFIG, IntegratorConfig, Propagator, eval_step, integrate_with_tangent
from .lorenz import LorenzParams, as_point

__all__ = [
    "LyapunovResult",
    "EhrenfestResult",
    "EhrenfestScan",
    "lyapunov_spectrum",
    "ehrenfest_time",
    "packet_ehrenfest_time",
    "ehrenfest_scan",
]

# crossing times are refined to this absolute resolution
TIME_RESOLUTION = 1e-6


@dataclass(frozen=True)
class LyapunovResult:
    exponents: np.ndarray
    ks_entropy_estimate: float
    transient_discarded: float
    total_time: float
    renorm_interval: float

    @property
    def max_exponent(self) -> float:
        return float(self.exponents[0])

    @property
    def exponent_sum(self) -> float:
        return float(math.fsum(self.exponents))


def lyapunov_spectrum(
    p0,
    params: LorenzParams,
    transient: float = 100.0,
    total_time: float = 2000.0,
    renorm_interval: float = 1.0,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
) -> LyapunovResult:
    """All three exponents by tangent propagation with QR re-orthonormalization.

    The tangent basis starts as the identity at ``p0`` and is renormalized
    every ``renorm_interval``. Growth factors from intervals starting before
    ``transient`` are discarded. The entropy estimate is the sum of the
    positive exponents.
    """
    if not (renorm_interval > 0):
        raise InvalidParameterError(f"renorm_interval must be positive, got {renorm_interval}")
    if not (0 < transient < total_time):
        raise InvalidParameterError(
            f"need 0 < transient < total_time, got transient={transient}, total_time={total_time}"
        )
    run = integrate_with_tangent(
        p0, np.eye(3), params, total_time, cfg,
        checkpoint=renorm_interval, renormalize=True, keep_trajectory=False,
    )
    starts = run.times[:-1]
    keep = starts >= transient * (1 - 1e-12)
    if not np.any(keep):
        raise InsufficientDataError("no renormalization interval lies after the transient")
    t_first = float(starts[keep][0])
    span = total_time - t_first
    logs = run.log_growth[keep]
    exps = np.array([math.fsum(logs[:, j]) for j in range(3)]) / span
    exps = np.sort(exps)[::-1]
    ks = math.fsum(max(e, 0.0) for e in exps)
    return LyapunovResult(exps, ks, t_first, float(total_time), float(renorm_interval))


@dataclass(frozen=True)
class EhrenfestResult:
    """``crossing_time is None`` marks an unbounded Ehrenfest time.

    That only happens when no crossing occurs before ``horizon``.
    """

    width: float
    crossing_time: float | None
    threshold: float
    center: tuple[float, float, float]
    horizon: float

    @property
    def bounded(self) -> bool:
        return self.crossing_time is not None


@dataclass(frozen=True)
class EhrenfestScan:
    rows: list[EhrenfestResult]
    fitted_slope: float
    lambda_reference: float
    intercept: float = field(default=math.nan)

    @property
    def slope_times_lambda(self) -> float:
        return self.fitted_slope * self.lambda_reference


def _separation(states, weights):
    # last row is the packet center, integrated in the same batch
    mean = pairwise_sum(weights[:, None] * states[:-1])
    d = mean - states[-1]
    return math.sqrt(float(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]))


def packet_ehrenfest_time(
    packet: WavepacketSpec,
    threshold: float = 1.0,
    params: LorenzParams = LorenzParams(),
    scheme: QuadratureScheme = GaussHermite(9),
    horizon: float = 50.0,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
) -> float | None:
    """First time the averaged momentum leaves the center trajectory by ``threshold``.

    The center trajectory is integrated as an extra row of the node batch so
    both curves share one step sequence. Returns ``None`` if no crossing
    happens before ``horizon``.
    """
    if not (threshold > 0):
        raise InvalidParameterError(f"threshold must be positive, got {threshold}")
    if not (horizon > 0 and math.isfinite(horizon)):
        raise InvalidParameterError(f"horizon must be positive, got {horizon}")
    center = np.array(packet.center if not hasattr(packet, "points") else packet.points.mean(axis=0))
    nodes, weights = quadrature_nodes(packet, scheme)
    batch = np.vstack([nodes, center[None, :]])
    if _separation(batch, weights) > threshold:
        raise InvalidParameterError("threshold is already exceeded at t = 0")

    prop = Propagator(batch, params, cfg, horizon)
    method = prop.method
    try:
        for t0s, t1s, coefs in prop.chunks(horizon):
            for t0, t1, c in zip(t0s, t1s, coefs):
                t_hi = min(t1, horizon)
                if _separation(eval_step(method, t0, t1, c, t_hi), weights) <= threshold:
                    continue
                lo, hi = t0, t_hi
                while hi - lo > TIME_RESOLUTION:
                    mid = 0.5 * (lo + hi)
                    if _separation(eval_step(method, t0, t1, c, mid), weights) > threshold:
                        hi = mid
                    else:
                        lo = mid
                return float(hi)
    except NonConvergenceError as exc:
        node = exc.node
        if node is not None and node < len(nodes):
            raise NonConvergenceError(f"{exc} (node {node}: p={nodes[node].tolist()})", exc.time, node) from exc
        raise
    return None


def ehrenfest_time(
    center,
    width: float,
    threshold: float = 1.0,
    params: LorenzParams = LorenzParams(),
    scheme: QuadratureScheme = GaussHermite(9),
    horizon: float = 50.0,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
) -> EhrenfestResult:
    """Ehrenfest time of an isotropic Gaussian packet; ``width == 0`` is the Dirac packet."""
    center = tuple(as_point(center))
    if not (width >= 0 and math.isfinite(width)):
        raise InvalidParameterError(f"width must be positive, got {width}")
    packet = Dirac(center) if width == 0 else Gaussian.isotropic(center, width)
    t = packet_ehrenfest_time(packet, threshold, params, scheme, horizon, cfg)
    return EhrenfestResult(float(width), t, float(threshold), center, float(horizon))


def _slope(x, y):
    xm = math.fsum(x) / len(x)
    ym = math.fsum(y) / len(y)
    sxx = math.fsum((a - xm) ** 2 for a in x)
    sxy = math.fsum((a - xm) * (b - ym) for a, b in zip(x, y))
    slope = sxy / sxx
    return slope, ym - slope * xm


def ehrenfest_scan(
    center,
    widths,
    threshold: float = 1.0,
    params: LorenzParams = LorenzParams(),
    scheme: QuadratureScheme = GaussHermite(9),
    horizon: float = 50.0,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    lambda_reference: float | None = None,
    max_workers: int | None = None,
) -> EhrenfestScan:
    """Ehrenfest times over decreasing widths, fitted against ``ln(1/width)``.

    Rows without a crossing are reported but left out of the fit. When
    ``lambda_reference`` is not given it comes from ``lyapunov_spectrum`` at
    ``center`` with default settings.
    """
    widths = [float(w) for w in widths]
    if not widths or any(not (w > 0) for w in widths):
        raise InvalidParameterError("widths must be positive")
    if any(b >= a for a, b in zip(widths, widths[1:])):
        raise InvalidParameterError("widths must be strictly decreasing")

    def row(w):
        return ehrenfest_time(center, w, threshold, params, scheme, horizon, cfg)

    if max_workers is not None and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            rows = list(pool.map(row, widths))
    else:
        rows = [row(w) for w in widths]

    finite = [r for r in rows if r.bounded]
    if len(finite) < 3:
        raise InsufficientDataError(
            f"need at least 3 finite crossing times for the fit, got {len(finite)}"
        )
    slope, intercept = _slope([math.log(1.0 / r.width) for r in finite], [r.crossing_time for r in finite])
    if lambda_reference is None:
        lambda_reference = lyapunov_spectrum(center, params, cfg=cfg).max_exponent
    return EhrenfestScan(rows, slope, float(lambda_reference), intercept)
