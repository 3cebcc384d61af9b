"""Momentum-space densities and averages of the evolved momentum operators.

The Heisenberg-picture momentum ``P_k(t)`` acts on momentum wave functions
as multiplication by the classical flow ``f_k(t, p)``, so its expectation is
the integral of ``f_k(t, p)`` against ``|psi(p)|^2``. Only the density
matters; phases are never represented.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .errors import InputFileError, InvalidParameterError, NonConvergenceError
from .integrate import DEFAULT_CONFIG, IntegratorConfig, Propagator, iter_grid
from .lorenz import LorenzParams, as_point

__all__ = [
    "Gaussian",
    "Dirac",
    "Samples",
    "GaussHermite",
    "MonteCarlo",
    "MomentStats",
    "quadrature_nodes",
    "sample_density",
    "expectation",
    "pairwise_sum",
    "read_samples_csv",
]


@dataclass(frozen=True)
class Gaussian:
    """Product Gaussian density with per-axis standard deviations ``widths``."""

    center: tuple[float, float, float]
    widths: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(as_point(self.center)))
        w = np.array(self.widths, dtype=float)
        if w.shape != (3,) or not np.all(np.isfinite(w)) or not np.all(w > 0):
            raise InvalidParameterError(f"gaussian widths must be three positive reals, got {self.widths}")
        object.__setattr__(self, "widths", tuple(float(x) for x in w))

    @classmethod
    def isotropic(cls, center, width: float) -> "Gaussian":
        return cls(center, (width, width, width))


@dataclass(frozen=True)
class Dirac:
    """Zero-width packet: a momentum eigenstate."""

    center: tuple[float, float, float]

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(as_point(self.center)))


@dataclass(frozen=True, eq=False)
class Samples:
    """Equal-weight point cloud standing in for an arbitrary density."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) == 0:
            raise InvalidParameterError("samples must be a non-empty (N, 3) array")
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("samples contain non-finite values")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __eq__(self, other):
        return isinstance(other, Samples) and np.array_equal(self.points, other.points)


WavepacketSpec = Gaussian | Dirac | Samples


@dataclass(frozen=True)
class GaussHermite:
    order: int = 9

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1 or self.order % 2 == 0:
            raise InvalidParameterError(f"gauss-hermite order must be an odd integer >= 1, got {self.order}")


@dataclass(frozen=True)
class MonteCarlo:
    n: int
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InvalidParameterError(f"monte-carlo sample count must be >= 1, got {self.n}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2**64:
            raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


QuadratureScheme = GaussHermite | MonteCarlo


@dataclass(frozen=True)
class MomentStats:
    time: float
    mean: np.ndarray
    variance: np.ndarray
    standard_error: np.ndarray


def pairwise_sum(x: np.ndarray) -> np.ndarray:
    """Sum over axis 0 with a fixed balanced tree.

    The combination order depends only on ``len(x)``, never on threading or
    on numpy's internal blocking.
    """
    x = np.asarray(x, dtype=float)
    while len(x) > 1:
        if len(x) % 2:
            head = x[:-1]
            x = np.concatenate([head[0::2] + head[1::2], x[-1:]])
        else:
            x = x[0::2] + x[1::2]
    return x[0].copy()


def _hermite_axis(order: int):
    u, w = hermgauss(order)
    return u, w / math.sqrt(math.pi)


def quadrature_nodes(spec: WavepacketSpec, scheme: QuadratureScheme) -> tuple[np.ndarray, np.ndarray]:
    """Nodes of shape (N, 3) and weights summing to one."""
    if isinstance(spec, Dirac):
        return np.array([spec.center]), np.ones(1)
    if isinstance(spec, Samples):
        n = len(spec.points)
        return spec.points.copy(), np.full(n, 1.0 / n)
    if isinstance(scheme, MonteCarlo):
        pts = sample_density(spec, scheme.n, scheme.seed)
        return pts, np.full(scheme.n, 1.0 / scheme.n)

    u, w = _hermite_axis(scheme.order)
    center = np.array(spec.center)
    scale = math.sqrt(2.0) * np.array(spec.widths)
    idx = np.array(list(product(range(scheme.order), repeat=3)))
    nodes = center + scale * u[idx]
    weights = w[idx[:, 0]] * w[idx[:, 1]] * w[idx[:, 2]]
    weights = weights / pairwise_sum(weights)
    return nodes, weights


def sample_density(spec: WavepacketSpec, n: int, seed: int = 0) -> np.ndarray:
    if n < 1:
        raise InvalidParameterError(f"sample count must be >= 1, got {n}")
    if isinstance(spec, Dirac):
        return np.tile(np.array(spec.center), (n, 1))
    rng = np.random.default_rng(seed)
    if isinstance(spec, Samples):
        return spec.points[rng.integers(0, len(spec.points), size=n)]
    z = rng.standard_normal((n, 3))
    return np.array(spec.center) + np.array(spec.widths) * z


def _moments(states, weights, t, is_mc):
    mean = pairwise_sum(weights[:, None] * states)
    dev = states - mean
    var = pairwise_sum(weights[:, None] * dev * dev)
    if is_mc and len(states) > 1:
        n = len(states)
        se = np.sqrt(var * (n / (n - 1)) / n)
    else:
        se = np.zeros(3)
    return MomentStats(float(t), mean, var, se)


def expectation(
    spec: WavepacketSpec,
    scheme: QuadratureScheme,
    params: LorenzParams,
    times,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
) -> list[MomentStats]:
    """Moments of ``P(t)`` on an increasing time grid starting at 0.

    All nodes share one integration over the whole grid. For a Dirac packet
    the mean is the flow map itself, bit for bit.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0 or times[0] != 0.0:
        raise InvalidParameterError("time grid must be a non-empty sequence starting at 0")
    if np.any(np.diff(times) <= 0) or not np.all(np.isfinite(times)):
        raise InvalidParameterError("time grid must be strictly increasing")
    nodes, weights = quadrature_nodes(spec, scheme)
    is_mc = isinstance(spec, Samples) or (isinstance(spec, Gaussian) and isinstance(scheme, MonteCarlo))
    prop = Propagator(nodes, params, cfg, float(times[-1]) if times[-1] > 0 else 1.0)
    out = []
    try:
        for k, states in iter_grid(prop, times):
            out.append(_moments(states, weights, times[k], is_mc))
    except NonConvergenceError as exc:
        node = exc.node
        where = f" (node {node}: p={nodes[node].tolist()})" if node is not None else ""
        raise NonConvergenceError(f"{exc}{where}", exc.time, node) from exc
    return out


def read_samples_csv(path) -> Samples:
    """Load a ``p1,p2,p3`` CSV (header required, one point per row)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["p1", "p2", "p3"]:
            raise InputFileError(f"{path}: expected header 'p1,p2,p3', got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise InputFileError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise InputFileError(f"{path}:{lineno}: {exc}") from None
    return Samples(np.array(rows).reshape(-1, 3))
