"""Propagation of the classical momentum flow and its tangent dynamics.

Two steppers are available: an adaptive Dormand-Prince 5(4) pair and
classical fixed-step RK4. Both step on their own natural grid, independent
of the requested end time, and land on arbitrary times through their dense
output. A prefix of an integration is therefore bit-identical to a longer
integration from the same start, which is what lets ensemble averages on a
time grid coincide exactly with single flow-map evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import _kernels as K
from .errors import (
    DomainError,
    InvalidParameterError,
    NonConvergenceError,
    StepLimitError,
)
from .lorenz import LorenzParams, as_point

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "TangentRun",
    "integrate",
    "flow_map",
    "flow_batch",
    "integrate_with_tangent",
    "dense_eval",
]

METHODS = ("dopri5", "rk4")

# bytes of dense-output records buffered per kernel call
_RECORD_BUDGET = 32 * 2**20


@dataclass(frozen=True)
class IntegratorConfig:
    """Stepper selection and its knobs.

    ``step`` is only used by ``rk4``; ``rel_tol``, ``abs_tol`` and
    ``min_step`` only by ``dopri5``. ``min_step=None`` means
    ``1e-12 * t_end`` for whatever end time the call integrates to.
    """

    method: str = "dopri5"
    step: float = 1e-3
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_steps: int = 10_000_000
    min_step: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidParameterError(f"method must be one of {METHODS}, got {self.method!r}")
        if not (self.step > 0 and math.isfinite(self.step)):
            raise InvalidParameterError(f"step must be positive, got {self.step}")
        if not (self.rel_tol >= 1e-14 and math.isfinite(self.rel_tol)):
            raise InvalidParameterError(f"rel_tol must be >= 1e-14, got {self.rel_tol}")
        if not (self.abs_tol >= 1e-300 and math.isfinite(self.abs_tol)):
            raise InvalidParameterError(f"abs_tol must be >= 1e-300, got {self.abs_tol}")
        if int(self.max_steps) != self.max_steps or self.max_steps < 1:
            raise InvalidParameterError(f"max_steps must be a positive integer, got {self.max_steps}")
        if self.min_step is not None and not (self.min_step > 0):
            raise InvalidParameterError(f"min_step must be positive, got {self.min_step}")

    def min_step_for(self, t_end: float) -> float:
        return self.min_step if self.min_step is not None else 1e-12 * t_end


DEFAULT_CONFIG = IntegratorConfig()


def eval_step(method: str, t0: float, t1: float, coef: np.ndarray, t: float) -> np.ndarray:
    """Dense output of one step record at ``t0 <= t <= t1``.

    The endpoints return the stored states exactly.
    """
    if t == t1:
        return coef[1].copy()
    if t == t0:
        return coef[0].copy()
    theta = (t - t0) / (t1 - t0)
    y0 = coef[0]
    y1 = coef[1]
    if method == "dopri5":
        th1 = 1.0 - theta
        return y0 + theta * ((y1 - y0) + th1 * (coef[2] + theta * (coef[3] + th1 * coef[4])))
    # cubic Hermite; coef[2], coef[3] are h*f(y0), h*f(y1)
    t2 = theta * theta
    t3 = t2 * theta
    return ((2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + theta) * coef[2]
            + (3.0 * t2 - 2.0 * t3) * y1 + (t3 - t2) * coef[3])


class Propagator:
    """Shared-step propagation of a batch of states of shape (N, d).

    Low-level engine behind every public routine in this package; one
    instance holds mutable stepping state and must not be shared across
    threads.
    """

    def __init__(self, y0, params: LorenzParams, cfg: IntegratorConfig, t_end: float, kind: int = 0):
        self.y = np.array(y0, dtype=float, order="C")
        if self.y.ndim != 2:
            raise ValueError("batch states must be two-dimensional")
        if not np.all(np.isfinite(self.y)):
            raise NonConvergenceError("non-finite initial state", 0.0)
        self.kind = kind
        self.cfg = cfg
        self.prm = params.as_array()
        self.min_step = cfg.min_step_for(t_end)
        self.t = 0.0
        self.steps_used = 0
        self.k = np.empty_like(self.y)
        K.rhs(kind, self.prm, self.y, self.k)
        if cfg.method == "dopri5":
            self.h = K.initial_step(kind, self.prm, self.y, self.k, cfg.rel_tol, cfg.abs_tol)
            self.facold = 1e-4
        else:
            self.h = cfg.step
            self.t_base = 0.0
            self.i_step = 0
        n, d = self.y.shape
        cap = max(1, min(4096, _RECORD_BUDGET // (5 * n * d * 8)))
        self._t0 = np.empty(cap)
        self._t1 = np.empty(cap)
        self._c = np.empty((cap, 5, n, d))
        self.last = None

    @property
    def method(self) -> str:
        return self.cfg.method

    def restart(self, y, t: float):
        """Replace the current state at time ``t`` keeping the step size."""
        self.y[...] = y
        self.t = t
        K.rhs(self.kind, self.prm, self.y, self.k)
        if self.cfg.method == "rk4":
            self.t_base = t
            self.i_step = 0

    def _call(self, t_stop: float, ring: bool):
        remaining = self.cfg.max_steps - self.steps_used
        if self.cfg.method == "dopri5":
            n, t, h, facold, steps, status, worst = K.dopri_advance(
                self.kind, self.prm, self.y, self.k, self.t, self.h, self.facold, t_stop,
                self.cfg.rel_tol, self.cfg.abs_tol, self.min_step, remaining, ring,
                self._t0, self._t1, self._c,
            )
            self.t, self.h, self.facold = t, h, facold
        else:
            n, i_step, steps, status = K.rk4_advance(
                self.kind, self.prm, self.y, self.k, self.t_base, self.i_step, self.h, t_stop,
                remaining, ring, self._t0, self._t1, self._c,
            )
            self.i_step = i_step
            self.t = self.t_base + i_step * self.h
            worst = -1
        self.steps_used += steps
        if ring:
            n = min(n, 1)
        if n:
            self.last = (float(self._t0[n - 1]), float(self._t1[n - 1]), self._c[n - 1].copy())
        if status == K.STATUS_UNDERFLOW:
            raise NonConvergenceError(
                f"step size fell below min_step={self.min_step:g} at t={self.t!r}",
                self.t, None if worst < 0 else int(worst),
            )
        if status == K.STATUS_NONFINITE:
            raise NonConvergenceError(f"state became non-finite near t={self.t!r}", self.t)
        if status == K.STATUS_MAX_STEPS:
            raise StepLimitError(
                f"max_steps={self.cfg.max_steps} exhausted at t={self.t!r}", self.t
            )
        return n, status

    def chunks(self, t_stop: float) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Yield (t0, t1, coef) record blocks until ``t >= t_stop``.

        The arrays are views into a reused buffer; consume them before
        advancing the iterator.
        """
        while self.t < t_stop:
            n, _ = self._call(t_stop, ring=False)
            if n:
                yield self._t0[:n], self._t1[:n], self._c[:n]

    def advance(self, t_stop: float):
        """Step until ``t >= t_stop`` without keeping records; return the last one."""
        while self.t < t_stop:
            self._call(t_stop, ring=True)
        return self.last


class Trajectory:
    """Flow values on the stepper's nodes plus the dense output between them.

    ``times[0] == 0`` and ``states[0]`` is the initial point. The last node
    sits exactly at ``t_end``. Arrays are read-only.
    """

    def __init__(self, params, initial, method, times, states, span_t0, span_t1, coef):
        self.params = params
        self.initial = initial
        self.method = method
        self.times = times
        self.states = states
        self._span_t0 = span_t0
        self._span_t1 = span_t1
        self._coef = coef
        for arr in (initial, times, states, span_t0, span_t1, coef):
            arr.flags.writeable = False

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def __len__(self):
        return len(self.times)

    def __call__(self, t: float) -> np.ndarray:
        return dense_eval(self, t)

    def sample(self, times) -> np.ndarray:
        return np.array([dense_eval(self, t) for t in times])


def dense_eval(traj: Trajectory, t: float) -> np.ndarray:
    t = float(t)
    if not (0.0 <= t <= traj.t_end):
        raise DomainError(f"t={t!r} outside trajectory span [0, {traj.t_end!r}]")
    idx = int(np.searchsorted(traj.times, t, side="left"))
    if traj.times[idx] == t:
        return traj.states[idx].copy()
    i = idx - 1
    return eval_step(traj.method, traj._span_t0[i], traj._span_t1[i], traj._coef[i], t)


def _collect(prop: Propagator, t_stop: float, cols=slice(None)):
    """Run ``prop`` to ``t_stop`` and cut its records into trajectory pieces.

    Returns node times/states after the start (ending exactly at
    ``t_stop``), plus per-interval step spans and coefficients, for row 0.
    """
    t0s, t1s, cs = [], [], []
    for a, b, c in prop.chunks(t_stop):
        t0s.append(a.copy())
        t1s.append(b.copy())
        cs.append(c[:, :, 0, cols].copy())
    if not t0s:
        # already past t_stop: the previous step covers it
        a, b, c = prop.last
        t0s, t1s, cs = [np.array([a])], [np.array([b])], [c[None, :, 0, cols]]
    t0 = np.concatenate(t0s)
    t1 = np.concatenate(t1s)
    coef = np.concatenate(cs)
    final = eval_step(prop.method, t0[-1], t1[-1], coef[-1], t_stop)
    times = np.append(t1[:-1], t_stop)
    states = np.concatenate([coef[:-1, 1], final[None, :]])
    return times, states, t0, t1, coef


def integrate(p0, params: LorenzParams, t_end: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> Trajectory:
    """Integrate the flow from ``p0`` over ``[0, t_end]``."""
    p0 = as_point(p0)
    if not (t_end > 0 and math.isfinite(t_end)):
        raise InvalidParameterError(f"t_end must be positive, got {t_end}")
    prop = Propagator(p0[None, :], params, cfg, t_end)
    times, states, t0, t1, coef = _collect(prop, t_end)
    return Trajectory(
        params, p0, cfg.method,
        np.concatenate([[0.0], times]),
        np.concatenate([p0[None, :], states]),
        t0, t1, coef,
    )


def flow_batch(points, params: LorenzParams, t: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """``f(t, p)`` for every row of ``points`` using one shared step sequence."""
    pts = np.array(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
    if t == 0:
        return pts
    if not (t > 0 and math.isfinite(t)):
        raise InvalidParameterError(f"t must be non-negative, got {t}")
    prop = Propagator(pts, params, cfg, t)
    t0, t1, coef = prop.advance(t)
    return eval_step(prop.method, t0, t1, coef, t)


def flow_map(p0, params: LorenzParams, t: float, cfg: IntegratorConfig = DEFAULT_CONFIG) -> np.ndarray:
    """The flow ``f(t, p0)``; ``t == 0`` returns ``p0`` itself."""
    p0 = as_point(p0)
    return flow_batch(p0[None, :], params, t, cfg)[0]


@dataclass
class TangentRun:
    """Result of joint state + tangent-matrix integration.

    ``matrices[k]`` is the tangent matrix at ``times[k]`` (index 0 is the
    initial basis). With renormalization it is the orthonormal factor after
    the QR step and ``log_growth[k-1]`` holds ``log|diag R|`` of that step.
    """

    trajectory: Trajectory | None
    times: np.ndarray
    matrices: np.ndarray
    log_growth: np.ndarray


def _checkpoints(t_end: float, interval: float | None) -> np.ndarray:
    if interval is None or interval >= t_end:
        return np.array([t_end])
    n = int(math.floor(t_end / interval * (1 + 1e-12)))
    pts = interval * np.arange(1, n + 1)
    if t_end - pts[-1] > 1e-12 * t_end:
        pts = np.append(pts, t_end)
    else:
        pts[-1] = t_end
    return pts


def integrate_with_tangent(
    p0,
    basis,
    params: LorenzParams,
    t_end: float,
    cfg: IntegratorConfig = DEFAULT_CONFIG,
    checkpoint: float | None = None,
    renormalize: bool = False,
    keep_trajectory: bool = True,
) -> TangentRun:
    """Integrate ``dV/dt = J(f(t, p0)) V`` together with the flow.

    The tangent matrix is reported at multiples of ``checkpoint`` and at
    ``t_end``. With ``renormalize`` it is replaced by the Q factor of its QR
    decomposition at every checkpoint (diagonal of R made positive) and the
    integration restarts from there with the current step size.
    """
    p0 = as_point(p0)
    basis = np.array(basis, dtype=float)
    if basis.shape != (3, 3) or not np.all(np.isfinite(basis)):
        raise InvalidParameterError("basis must be a finite 3x3 matrix")
    if abs(np.linalg.det(basis)) == 0.0:
        raise InvalidParameterError("basis must be nonsingular")
    if t_end == 0:
        traj = None
        if keep_trajectory:
            e = np.empty(0)
            traj = Trajectory(params, p0, cfg.method, np.zeros(1), p0[None, :].copy(),
                              e, e.copy(), np.empty((0, 5, 3)))
        return TangentRun(traj, np.zeros(1), basis[None].copy(), np.empty((0, 3)))
    if not (t_end > 0 and math.isfinite(t_end)):
        raise InvalidParameterError(f"t_end must be non-negative, got {t_end}")
    if checkpoint is not None and not checkpoint > 0:
        raise InvalidParameterError(f"checkpoint must be positive, got {checkpoint}")

    y0 = np.concatenate([p0, basis.ravel()])[None, :]
    prop = Propagator(y0, params, cfg, t_end, kind=1)
    marks = _checkpoints(t_end, checkpoint)
    mats = [basis.copy()]
    logs = []
    traj = None

    if not renormalize:
        # one uninterrupted integration; checkpoints are dense evaluations
        if keep_trajectory:
            times, states, t0, t1, coef = _collect(prop, t_end)
            for tc in marks:
                i = int(np.searchsorted(t1, tc, side="left"))
                mats.append(eval_step(prop.method, t0[i], t1[i], coef[i], tc)[3:].reshape(3, 3))
            traj = Trajectory(
                params, p0, cfg.method,
                np.concatenate([[0.0], times]),
                np.concatenate([p0[None, :], states[:, :3]]),
                t0, t1, coef[:, :, :3].copy(),
            )
        else:
            for _, z in iter_grid(prop, marks):
                mats.append(z[0, 3:].reshape(3, 3))
        return TangentRun(traj, np.concatenate([[0.0], marks]), np.array(mats), np.empty((0, 3)))

    pieces = []
    for tc in marks:
        if keep_trajectory:
            pieces.append(_collect(prop, tc, cols=slice(0, 3)))
        else:
            prop.advance(tc)
        a, b, c = prop.last
        z = eval_step(prop.method, a, b, c[:, 0, :], tc)
        q, r = np.linalg.qr(z[3:].reshape(3, 3))
        signs = np.where(np.diag(r) < 0, -1.0, 1.0)
        q = q * signs
        logs.append(np.log(np.abs(np.diag(r))))
        prop.restart(np.concatenate([z[:3], q.ravel()])[None, :], tc)
        mats.append(q)
    if keep_trajectory:
        traj = Trajectory(
            params, p0, cfg.method,
            np.concatenate([[0.0]] + [p[0] for p in pieces]),
            np.concatenate([p0[None, :]] + [p[1] for p in pieces]),
            np.concatenate([p[2] for p in pieces]),
            np.concatenate([p[3] for p in pieces]),
            np.concatenate([p[4] for p in pieces]),
        )
    return TangentRun(traj, np.concatenate([[0.0], marks]), np.array(mats), np.array(logs))


def iter_grid(prop: Propagator, times) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(k, states)`` for each grid time in increasing order.

    A grid time equal to 0 yields the initial batch itself; a grid time on
    a step boundary yields the stored state of the step ending there.
    """
    times = np.asarray(times, dtype=float)
    k = 0
    while k < len(times) and times[k] == prop.t:
        yield k, prop.y.copy()
        k += 1
    if k == len(times):
        return
    for t0, t1, coef in prop.chunks(times[-1]):
        end = t1[-1]
        while k < len(times) and times[k] <= end:
            i = int(np.searchsorted(t1, times[k], side="left"))
            yield k, eval_step(prop.method, t0[i], t1[i], coef[i], times[k])
            k += 1
