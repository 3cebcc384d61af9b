"""Compiled stepping kernels.

Both kernels advance a batch of states ``y`` of shape (N, d) with one shared
step sequence and write per-step dense-output records into caller-provided
buffers. ``kind`` selects the vector field: 0 is the bare Lorenz field
(d = 3), 1 appends the variational equation for a 3x3 tangent matrix stored
row-major in columns 3..11 (d = 12).

Record layout, ``rec_c[k, j]`` for step ``k``:
  dopri5: y0, y1, bspl, ydiff - h*k7 - bspl, h*sum(d_i k_i)
  rk4:    y0, y1, h*f(y0), h*f(y1), 0

Elementwise arithmetic only, so a row's result never depends on the other
rows except through the shared step size.
"""

import math

import numpy as np
from numba import njit

STATUS_DONE = 0
STATUS_FULL = 1
STATUS_UNDERFLOW = 2
STATUS_MAX_STEPS = 3
STATUS_NONFINITE = 4

# Dormand-Prince 5(4)
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0,
)
A71, A73, A74, A75, A76 = (
    35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0,
)
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0,
)
D1 = -12715105075.0 / 11282082432.0
D3 = 87487479700.0 / 32700410799.0
D4 = -10690763975.0 / 1880347072.0
D5 = 701980252875.0 / 199316789632.0
D6 = -1453857185.0 / 822651844.0
D7 = 69997945.0 / 29380423.0

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 5.0
PI_BETA = 0.04
PI_EXPO = 0.2 - 0.75 * PI_BETA


@njit(cache=True, nogil=True)
def rhs(kind, prm, y, out):
    s = prm[0]
    r = prm[1]
    b = prm[2]
    for i in range(y.shape[0]):
        x0 = y[i, 0]
        x1 = y[i, 1]
        x2 = y[i, 2]
        out[i, 0] = s * (x1 - x0)
        out[i, 1] = x0 * (r - x2) - x1
        out[i, 2] = x0 * x1 - b * x2
        if kind == 1:
            for c in range(3):
                v0 = y[i, 3 + c]
                v1 = y[i, 6 + c]
                v2 = y[i, 9 + c]
                out[i, 3 + c] = -s * v0 + s * v1
                out[i, 6 + c] = (r - x2) * v0 - v1 - x0 * v2
                out[i, 9 + c] = x1 * v0 + x0 * v1 - b * v2


@njit(cache=True, nogil=True)
def _scaled_rms(v, ref, rtol, atol):
    """Max over rows of the RMS of v / (atol + rtol*|ref|)."""
    n, d = v.shape
    worst = 0.0
    for i in range(n):
        acc = 0.0
        for j in range(d):
            q = v[i, j] / (atol + rtol * abs(ref[i, j]))
            acc += q * q
        val = math.sqrt(acc / d)
        if val > worst:
            worst = val
    return worst


@njit(cache=True, nogil=True)
def initial_step(kind, prm, y, f0, rtol, atol):
    """Starting step from the usual two-evaluation heuristic (order 5)."""
    d0 = _scaled_rms(y, y, rtol, atol)
    d1 = _scaled_rms(f0, y, rtol, atol)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    y1 = y + h0 * f0
    f1 = np.empty_like(y)
    rhs(kind, prm, y1, f1)
    d2 = _scaled_rms(f1 - f0, y, rtol, atol) / h0
    dm = max(d1, d2)
    if dm <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / dm) ** 0.2
    return min(100.0 * h0, h1)


@njit(cache=True, nogil=True)
def dopri_advance(kind, prm, y, k1, t, h, facold, t_stop, rtol, atol, min_step,
                  max_steps, ring, rec_t0, rec_t1, rec_c):
    """Advance until ``t >= t_stop``, the record buffer fills, or a failure.

    ``y`` and ``k1`` (= f(y)) are updated in place. Returns
    (n_records, t, h, facold, attempted_steps, status, worst_row).
    """
    n, d = y.shape
    k2 = np.empty((n, d))
    k3 = np.empty((n, d))
    k4 = np.empty((n, d))
    k5 = np.empty((n, d))
    k6 = np.empty((n, d))
    k7 = np.empty((n, d))
    ys = np.empty((n, d))
    y1 = np.empty((n, d))
    cap = rec_t0.shape[0]
    n_rec = 0
    steps = 0
    rejected = False
    while t < t_stop:
        if not ring and n_rec == cap:
            return n_rec, t, h, facold, steps, STATUS_FULL, -1
        if steps >= max_steps:
            return n_rec, t, h, facold, steps, STATUS_MAX_STEPS, -1
        if not (h >= min_step):
            return n_rec, t, h, facold, steps, STATUS_UNDERFLOW, _worst_row(y, k1, h, rtol, atol)
        for i in range(n):
            for j in range(d):
                ys[i, j] = y[i, j] + h * A21 * k1[i, j]
        rhs(kind, prm, ys, k2)
        for i in range(n):
            for j in range(d):
                ys[i, j] = y[i, j] + h * (A31 * k1[i, j] + A32 * k2[i, j])
        rhs(kind, prm, ys, k3)
        for i in range(n):
            for j in range(d):
                ys[i, j] = y[i, j] + h * (A41 * k1[i, j] + A42 * k2[i, j] + A43 * k3[i, j])
        rhs(kind, prm, ys, k4)
        for i in range(n):
            for j in range(d):
                ys[i, j] = y[i, j] + h * (A51 * k1[i, j] + A52 * k2[i, j] + A53 * k3[i, j]
                                          + A54 * k4[i, j])
        rhs(kind, prm, ys, k5)
        for i in range(n):
            for j in range(d):
                ys[i, j] = y[i, j] + h * (A61 * k1[i, j] + A62 * k2[i, j] + A63 * k3[i, j]
                                          + A64 * k4[i, j] + A65 * k5[i, j])
        rhs(kind, prm, ys, k6)
        for i in range(n):
            for j in range(d):
                y1[i, j] = y[i, j] + h * (A71 * k1[i, j] + A73 * k3[i, j] + A74 * k4[i, j]
                                          + A75 * k5[i, j] + A76 * k6[i, j])
        rhs(kind, prm, y1, k7)
        steps += 1

        err = 0.0
        for i in range(n):
            acc = 0.0
            for j in range(d):
                e = h * (E1 * k1[i, j] + E3 * k3[i, j] + E4 * k4[i, j] + E5 * k5[i, j]
                         + E6 * k6[i, j] + E7 * k7[i, j])
                sk = atol + rtol * max(abs(y[i, j]), abs(y1[i, j]))
                q = e / sk
                acc += q * q
            val = math.sqrt(acc / d)
            if not math.isfinite(val):
                val = math.inf
            if val > err:
                err = val

        fac11 = err ** PI_EXPO if err > 0.0 else 0.0
        if err <= 1.0:
            if fac11 > 0.0:
                factor = SAFETY * facold ** PI_BETA / fac11
            else:
                factor = FAC_MAX
            factor = min(FAC_MAX, max(FAC_MIN, factor))
            if rejected:
                factor = min(factor, 1.0)
            facold = max(err, 1e-4)
            slot = 0 if ring else n_rec
            t_new = t + h
            rec_t0[slot] = t
            rec_t1[slot] = t_new
            for i in range(n):
                for j in range(d):
                    ydiff = y1[i, j] - y[i, j]
                    bspl = h * k1[i, j] - ydiff
                    rec_c[slot, 0, i, j] = y[i, j]
                    rec_c[slot, 1, i, j] = y1[i, j]
                    rec_c[slot, 2, i, j] = bspl
                    rec_c[slot, 3, i, j] = ydiff - h * k7[i, j] - bspl
                    rec_c[slot, 4, i, j] = h * (D1 * k1[i, j] + D3 * k3[i, j] + D4 * k4[i, j]
                                                + D5 * k5[i, j] + D6 * k6[i, j] + D7 * k7[i, j])
                    y[i, j] = y1[i, j]
                    k1[i, j] = k7[i, j]
            n_rec += 1
            t = t_new
            h = h * factor
            rejected = False
        else:
            if fac11 == math.inf:
                factor = FAC_MIN
            else:
                factor = max(FAC_MIN, SAFETY / fac11)
            h = h * factor
            rejected = True
    return n_rec, t, h, facold, steps, STATUS_DONE, -1


@njit(cache=True, nogil=True)
def _worst_row(y, k1, h, rtol, atol):
    # row whose derivative is largest relative to its scale: best available blame
    n, d = y.shape
    best = 0
    worst = -1.0
    for i in range(n):
        acc = 0.0
        for j in range(d):
            q = k1[i, j] / (atol + rtol * abs(y[i, j]))
            acc += q * q
        if not (acc <= worst):
            worst = acc
            best = i
    return best


@njit(cache=True, nogil=True)
def rk4_advance(kind, prm, y, f0, t_base, i_step, h, t_stop, max_steps, ring, rec_t0, rec_t1, rec_c):
    """Fixed-step RK4 with nodes at exactly ``t_base + i*h``.

    Returns (n_records, i_step, attempted_steps, status).
    """
    n, d = y.shape
    k2 = np.empty((n, d))
    k3 = np.empty((n, d))
    k4 = np.empty((n, d))
    ys = np.empty((n, d))
    y1 = np.empty((n, d))
    f1 = np.empty((n, d))
    cap = rec_t0.shape[0]
    n_rec = 0
    steps = 0
    half = 0.5 * h
    sixth = h / 6.0
    while t_base + i_step * h < t_stop:
        if not ring and n_rec == cap:
            return n_rec, i_step, steps, STATUS_FULL
        if steps >= max_steps:
            return n_rec, i_step, steps, STATUS_MAX_STEPS
        for i in range(n):
            for j in range(d):
                ys[i, j] = y[i, j] + half * f0[i, j]
        rhs(kind, prm, ys, k2)
        for i in range(n):
            for j in range(d):
                ys[i, j] = y[i, j] + half * k2[i, j]
        rhs(kind, prm, ys, k3)
        for i in range(n):
            for j in range(d):
                ys[i, j] = y[i, j] + h * k3[i, j]
        rhs(kind, prm, ys, k4)
        finite = True
        for i in range(n):
            for j in range(d):
                y1[i, j] = y[i, j] + sixth * (f0[i, j] + 2.0 * k2[i, j] + 2.0 * k3[i, j] + k4[i, j])
                if not math.isfinite(y1[i, j]):
                    finite = False
        steps += 1
        if not finite:
            return n_rec, i_step, steps, STATUS_NONFINITE
        rhs(kind, prm, y1, f1)
        slot = 0 if ring else n_rec
        rec_t0[slot] = t_base + i_step * h
        rec_t1[slot] = t_base + (i_step + 1) * h
        for i in range(n):
            for j in range(d):
                rec_c[slot, 0, i, j] = y[i, j]
                rec_c[slot, 1, i, j] = y1[i, j]
                rec_c[slot, 2, i, j] = h * f0[i, j]
                rec_c[slot, 3, i, j] = h * f1[i, j]
                rec_c[slot, 4, i, j] = 0.0
                y[i, j] = y1[i, j]
                f0[i, j] = f1[i, j]
        n_rec += 1
        i_step += 1
    return n_rec, i_step, steps, STATUS_DONE
