"""Adaptive explicit Runge-Kutta integration.

A Dormand-Prince 5(4) pair with a PI step-size controller and the pair's
fourth-order continuous extension for dense output. States may be arrays of any shape; a batch of trajectories
stacked along a leading axis shares one step sequence, which keeps finite
differences across the batch free of step-selection noise.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, StiffnessError

# Dormand & Prince (1980), FSAL, 5th order propagation
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B = _A[6]
# 5th minus embedded 4th order weights
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

# continuous extension, y(t + s h) = y + h * sum_j (K^T P)_j s**(j+1)
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933,
     87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408,
     701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_ORDER = 5
_SAFETY = 0.9
_BETA1 = 0.7 / _ORDER
_BETA2 = 0.4 / _ORDER
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0


@dataclass
class DenseSolution:
    """Accepted step endpoints with derivatives and interpolation coefficients.

    ``q[i]`` holds the continuous-extension coefficients of step ``i``. Without
    them (endpoint-only runs) interpolation falls back to cubic Hermite.
    """

    t: np.ndarray
    y: np.ndarray
    f: np.ndarray
    n_rejected: int = 0
    n_accepted: int = 0
    q: np.ndarray = None

    @property
    def n_steps(self):
        return self.t.shape[0] - 1

    @property
    def y_final(self):
        return self.y[-1]

    def __call__(self, t):
        if self.q is not None and np.ndim(t) == 0:
            return self._at(float(t))
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        tt, yy, ff = self.t, self.y, self.f
        if self.q is not None:
            # steps are stored in integration order; locate t along that direction
            sign = 1.0 if tt[-1] >= tt[0] else -1.0
            i = np.clip(np.searchsorted(sign * tt, sign * t, side="right") - 1,
                        0, self.n_steps - 1)
            h = tt[i + 1] - tt[i]
            s = (t - tt[i]) / h
            expand = (slice(None),) + (None,) * (yy.ndim - 1)
            powers = s[:, None] ** np.arange(1, 5)
            coef = np.einsum("nj,nj...->n...", powers, self.q[i])
            out = yy[i] + h[expand] * coef
            return out[0] if scalar else out
        if tt[-1] < tt[0]:
            tt, yy, ff = tt[::-1], yy[::-1], ff[::-1]
        i = np.clip(np.searchsorted(tt, t, side="right") - 1, 0, self.n_steps - 1)
        t0, t1 = tt[i], tt[i + 1]
        h = t1 - t0
        s = (t - t0) / h
        expand = (slice(None),) + (None,) * (yy.ndim - 1)
        s, h = s[expand], h[expand]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out = h00 * yy[i] + h10 * h * ff[i] + h01 * yy[i + 1] + h11 * h * ff[i + 1]
        return out[0] if scalar else out


    def _at(self, t):
        tt = self.t
        if tt[-1] >= tt[0]:
            i = int(np.searchsorted(tt, t, side="right")) - 1
        else:
            i = int(np.searchsorted(-tt, -t, side="right")) - 1
        i = min(max(i, 0), self.n_steps - 1)
        h = tt[i + 1] - tt[i]
        s = (t - tt[i]) / h
        return self.y[i] + h * np.tensordot(s ** np.arange(1, 5), self.q[i], axes=1)


def _error_norm(err, y_old, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(fun, t0, y0, f0, direction, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + direction * h0 * f0
    d2 = np.sqrt(np.mean(((fun(t0 + direction * h0, y1) - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / _ORDER)
    return min(100 * h0, h1)


def integrate_rk(fun, t_span, y0, rtol=1e-10, atol=None, max_steps=200_000,
                 first_step=None, dense=True):
    """Integrate ``y' = fun(t, y)`` over ``t_span`` with step-size control.

    Parameters
    ----------
    fun : callable
        Right-hand side ``fun(t, y) -> array`` with the shape of ``y``.
    t_span : tuple of float
        ``(t0, t1)``; ``t1 < t0`` integrates backward.
    y0 : array_like
        Initial state of any shape.
    rtol, atol : float
        Local error tolerances; ``atol`` defaults to ``rtol``.
    max_steps : int
        Step budget including rejected steps.
    dense : bool
        Keep every accepted step for interpolation. With ``False`` only the
        endpoints are stored, which matters for large batched states.

    Returns
    -------
    DenseSolution

    Raises
    ------
    StiffnessError
        If the step size underflows or the budget is exhausted.
    DivergenceError
        If the state stops being finite.
    """
    atol = rtol if atol is None else atol
    t0, t1 = map(float, t_span)
    direction = 1.0 if t1 >= t0 else -1.0
    y = np.array(y0, dtype=float)
    f = np.asarray(fun(t0, y), dtype=float)
    ts, ys, fs, qs = [t0], [y.copy()], [f.copy()], []
    if t1 == t0:
        return DenseSolution(np.array(ts), np.array(ys), np.array(fs))

    h = abs(first_step) if first_step else _initial_step(fun, t0, y, f, direction, rtol, atol)
    t = t0
    err_prev = 1e-4
    rejected = 0
    n_accepted = 0
    k = [None] * 7
    for _ in range(max_steps):
        h_min = 16 * np.spacing(max(abs(t), 1.0))
        if h < h_min:
            raise StiffnessError(f"step size underflow at t={t:.6g} (h={h:.3g})")
        last = direction * (t + direction * h - t1) >= 0
        if last:
            h = abs(t1 - t)
        hs = direction * h
        k[0] = f
        for i in range(1, 7):
            dy = sum(a * k[j] for j, a in enumerate(_A[i]) if a)
            k[i] = fun(t + _C[i] * hs, y + hs * dy)
        y_new = y + hs * sum(b * k[j] for j, b in enumerate(_B) if b)
        err_vec = hs * sum(e * k[j] for j, e in enumerate(_E) if e)
        if not np.all(np.isfinite(y_new)):
            if h > 1e-3 * abs(t1 - t0):
                h *= _MIN_FACTOR
                rejected += 1
                continue
            raise DivergenceError(f"non-finite state at t={t:.6g}")
        err = _error_norm(err_vec, y, y_new, rtol, atol)
        if err <= 1.0:
            t = t1 if last else t + hs
            y, f = y_new, k[6]
            if dense:
                qs.append(np.tensordot(_P.T, np.stack(k), axes=1))
            if dense or last:
                ts.append(t)
                ys.append(y.copy())
                fs.append(f.copy())
            n_accepted += 1
            if last:
                return DenseSolution(np.array(ts), np.array(ys), np.array(fs),
                                     rejected, n_accepted, np.array(qs) if dense else None)
            err = max(err, 1e-10)
            factor = _SAFETY * err ** -_BETA1 * err_prev ** _BETA2
            h *= min(_MAX_FACTOR, max(_MIN_FACTOR, factor))
            err_prev = err
        else:
            rejected += 1
            h *= max(_MIN_FACTOR, _SAFETY * err ** (-1 / _ORDER))
    raise StiffnessError(f"step budget of {max_steps} exhausted at t={t:.6g}")
