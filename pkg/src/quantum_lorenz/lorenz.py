"""Lorenz vector field acting on momentum eigenvalues.

The momentum operators of the cubic Hamiltonian evolve by multiplication
with the classical flow of this field, so everything downstream only needs
these few pure functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, InvalidStateError

__all__ = [
    "LorenzParams",
    "as_point",
    "lorenz_rhs",
    "lorenz_jacobian",
    "fixed_points",
    "kus_invariant",
    "reflect",
]


@dataclass(frozen=True)
class LorenzParams:
    """Force constants ``sigma``, ``tau``, ``beta`` (dimensionless)."""

    sigma: float = 10.0
    tau: float = 28.0
    beta: float = 8.0 / 3.0

    def __post_init__(self):
        for name in ("sigma", "tau", "beta"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise InvalidParameterError(f"{name} must be a finite real, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.sigma <= 0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")
        if self.beta <= 0:
            raise InvalidParameterError(f"beta must be positive, got {self.beta}")

    def as_array(self):
        return np.array([self.sigma, self.tau, self.beta])


def as_point(p) -> np.ndarray:
    """Coerce ``p`` to a float array of shape (3,), rejecting non-finite values."""
    arr = np.array(p, dtype=float)
    if arr.shape != (3,):
        raise InvalidStateError(f"phase point must have 3 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidStateError(f"phase point is not finite: {arr}")
    return arr


def reflect(p) -> np.ndarray:
    """The symmetry (p1, p2, p3) -> (-p1, -p2, p3); works on (..., 3) arrays."""
    out = np.array(p, dtype=float)
    out[..., 0] = -out[..., 0]
    out[..., 1] = -out[..., 1]
    return out


def lorenz_rhs(p, params: LorenzParams) -> np.ndarray:
    p1, p2, p3 = as_point(p)
    s, r, b = params.sigma, params.tau, params.beta
    return np.array([s * (p2 - p1), p1 * (r - p3) - p2, p1 * p2 - b * p3])


def lorenz_jacobian(p, params: LorenzParams) -> np.ndarray:
    """Row ``i`` holds the gradient of component ``i`` of the field."""
    p1, p2, p3 = as_point(p)
    s, r, b = params.sigma, params.tau, params.beta
    return np.array(
        [
            [-s, s, 0.0],
            [r - p3, -1.0, -p1],
            [p2, p1, -b],
        ]
    )


def fixed_points(params: LorenzParams) -> list[np.ndarray]:
    origin = np.zeros(3)
    if params.tau <= 1.0:
        return [origin]
    z = params.tau - 1.0
    xy = math.sqrt(params.beta * z)
    return [origin, np.array([xy, xy, z]), np.array([-xy, -xy, z])]


def kus_invariant(p, params: LorenzParams) -> float:
    """``p1**2 - 2*sigma*p3``; decays as ``exp(-2*sigma*t)`` along the flow when beta == 2*sigma."""
    p = np.asarray(p, dtype=float)
    return float(p[0] * p[0] - 2.0 * params.sigma * p[2])
