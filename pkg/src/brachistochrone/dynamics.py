"""Coupled control and wavefunction dynamics.

The controls obey the scalar brachistochrone system

    sqrt(2) dJ_m/dt = J_{m+1} lam_{m,m+2} - J_{m-1} lam_{m-1,m+1}
    dlam_{k,b}/dt   = J_b lam_{k,b+1} - J_{k-1} lam_{k-1,b}
                      - J_{b-1} lam_{k,b-1} + J_k lam_{k+1,b}

with ``J_m = 0`` outside ``1..N-1`` and ``lam_{a,b} = 0`` outside the even
family (spacing 2..N-1, both labels in range). The excitation follows
``i dpsi/dt = H psi``. Since ``H`` is real and tridiagonal the substitution
``psi_n = i**(n-1) phi_n`` keeps ``phi`` real, which is the default
propagation mode.

Integrated states are flat real vectors ``[J, lam, phi]`` (real gauge) or
``[J, lam, Re psi, Im psi]`` (complex mode). Leading batch axes are allowed.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .chain import (
    SQRT2, ChainSpec, ControlState, WaveState, coupling_norm, ipow, multiplier_pairs,
)
from .errors import GaugeError, ShapeError
from .integrators import DenseSolution, integrate_rk

TOL_RANGE = (1e-14, 1e-6)


class Layout:
    """Index bookkeeping for the flat state vector of an ``N``-site chain."""

    def __init__(self, n_sites, complex_wave=False):
        N = n_sites
        self.n_sites = N
        self.a, self.b = multiplier_pairs(N)
        self.nJ = N - 1
        self.nL = self.a.shape[0]
        self.complex_wave = complex_wave
        self.J = slice(0, self.nJ)
        self.L = slice(self.nJ, self.nJ + self.nL)
        self.P = slice(self.nJ + self.nL, self.nJ + self.nL + N)
        self.Q = slice(self.P.stop, self.P.stop + N) if complex_wave else None
        self.size = self.P.stop + (N if complex_wave else 0)
        self.m = np.arange(1, N)
        self.n = np.arange(1, N + 1)
        # packed position of each neighbouring multiplier; nL marks a zero slot
        pos = np.full((N + 2, N + 2), self.nL, dtype=np.intp)
        pos[self.a, self.b] = np.arange(self.nL)
        a, b, m = self.a, self.b, self.m
        self.gather_J = (pos[m, m + 2], pos[m - 1, m + 1])
        self.gather_L = (pos[a, b + 1], pos[a - 1, b], pos[a, b - 1], pos[a + 1, b])

    def padded(self, J, lam):
        """Zero-padded ``J[0..N+1]`` and ``lam`` with a trailing zero slot."""
        N = self.n_sites
        batch = J.shape[:-1]
        Jp = np.zeros(batch + (N + 2,))
        Jp[..., 1:N] = J
        Lx = np.zeros(batch + (self.nL + 1,))
        Lx[..., :self.nL] = lam
        return Jp, Lx


@lru_cache(maxsize=None)
def layout(n_sites, complex_wave=False):
    return Layout(n_sites, complex_wave)


def _control_rhs(Jp, Lx, lay):
    a, b, m = lay.a, lay.b, lay.m
    j1, j2 = lay.gather_J
    l1, l2, l3, l4 = lay.gather_L
    dJ = (Jp[..., m + 1] * Lx[..., j1] - Jp[..., m - 1] * Lx[..., j2]) / SQRT2
    dL = (Jp[..., b] * Lx[..., l1]
          - Jp[..., a - 1] * Lx[..., l2]
          - Jp[..., b - 1] * Lx[..., l3]
          + Jp[..., a] * Lx[..., l4])
    return dJ, dL


def _hop(Jp, xp, N):
    """``(H x)_n = J_{n-1} x_{n-1} + J_n x_{n+1}`` on padded arrays."""
    return Jp[..., 0:N] * xp[..., 0:N] + Jp[..., 1:N + 1] * xp[..., 2:N + 2]


def _pad_sites(x, N):
    xp = np.zeros(x.shape[:-1] + (N + 2,))
    xp[..., 1:N + 1] = x
    return xp


def qbe_rhs(control, spec=None):
    """Time derivative ``(dJ, dlam)`` of a control state."""
    spec = control.spec if spec is None else spec
    if control.spec.n_sites != spec.n_sites:
        raise ShapeError("control state belongs to a different chain length")
    lay = layout(spec.n_sites)
    Jp, Lx = lay.padded(control.couplings, control.multipliers)
    return _control_rhs(Jp, Lx, lay)


def schrodinger_rhs(psi, J, spec, gauge=False):
    """Time derivative of the amplitudes under ``H(J)``.

    With ``gauge=True`` ``psi`` is the real-gauge vector ``phi`` and the
    result is ``dphi_n = -J_{n-1} phi_{n-1} + J_n phi_{n+1}``.
    """
    N = spec.n_sites
    x = psi.gauge_amplitudes if (gauge and isinstance(psi, WaveState)) else psi
    if isinstance(x, WaveState):
        x = x.amplitudes
    x = np.asarray(x)
    J = np.asarray(J, dtype=float)
    if x.shape[-1] != N or J.shape[-1] != N - 1:
        raise ShapeError(f"expected {N} amplitudes and {N - 1} couplings")
    Jp = np.zeros(J.shape[:-1] + (N + 2,))
    Jp[..., 1:N] = J
    if gauge:
        xp = _pad_sites(np.asarray(x, dtype=float), N)
        return -Jp[..., 0:N] * xp[..., 0:N] + Jp[..., 1:N + 1] * xp[..., 2:N + 2]
    xp = np.zeros(x.shape[:-1] + (N + 2,), dtype=complex)
    xp[..., 1:N + 1] = x
    return -1j * _hop(Jp, xp, N)


def state_rhs(n_sites, complex_wave=False):
    """Right-hand side ``f(t, y)`` of the full flat system."""
    lay = layout(n_sites, complex_wave)
    N = n_sites

    def rhs(t, y):
        Jp, Lx = lay.padded(y[..., lay.J], y[..., lay.L])
        dJ, dL = _control_rhs(Jp, Lx, lay)
        out = np.empty_like(y)
        out[..., lay.J] = dJ
        out[..., lay.L] = dL
        if complex_wave:
            up = _pad_sites(y[..., lay.P], N)
            vp = _pad_sites(y[..., lay.Q], N)
            out[..., lay.P] = _hop(Jp, vp, N)
            out[..., lay.Q] = -_hop(Jp, up, N)
        else:
            pp = _pad_sites(y[..., lay.P], N)
            out[..., lay.P] = -Jp[..., 0:N] * pp[..., 0:N] + Jp[..., 1:N + 1] * pp[..., 2:N + 2]
        return out

    return rhs


def state_vjp(y, cot, n_sites):
    """Cotangent pullback ``cot @ df/dy`` for the real-gauge system (unbatched)."""
    lay = layout(n_sites)
    N, a, b, m, n = n_sites, lay.a, lay.b, lay.m, lay.n
    Jp, Lx = lay.padded(y[lay.J], y[lay.L])
    Pp = _pad_sites(y[lay.P], N)
    cJ, cL, cP = cot[lay.J], cot[lay.L], cot[lay.P]
    j1, j2 = lay.gather_J
    l1, l2, l3, l4 = lay.gather_L

    gL = np.bincount(
        np.concatenate([j1, j2, l1, l2, l3, l4]),
        weights=np.concatenate([
            cJ * Jp[m + 1] / SQRT2,
            -cJ * Jp[m - 1] / SQRT2,
            cL * Jp[b],
            -cL * Jp[a - 1],
            -cL * Jp[b - 1],
            cL * Jp[a],
        ]),
        minlength=lay.nL + 1,
    )

    idx = np.concatenate([m + 1, m - 1, b, a - 1, b - 1, a, n - 1, n])
    w = np.concatenate([
        cJ * Lx[j1] / SQRT2,
        -cJ * Lx[j2] / SQRT2,
        cL * Lx[l1],
        -cL * Lx[l2],
        -cL * Lx[l3],
        cL * Lx[l4],
        -cP * Pp[n - 1],
        cP * Pp[n + 1],
    ])
    gJp = np.bincount(idx, weights=w, minlength=N + 2)

    gPp = np.zeros(N + 2)
    gPp[n - 1] -= cP * Jp[n - 1]
    gPp[n + 1] += cP * Jp[n]

    out = np.empty_like(y)
    out[lay.J] = gJp[1:N]
    out[lay.L] = gL[:lay.nL]
    out[lay.P] = gPp[1:N + 1]
    return out


def to_real_gauge(psi, atol=1e-10):
    """Map ``psi_n`` to the real ``phi_n = i**-(n-1) psi_n``.

    Raises
    ------
    GaugeError
        If any ``phi_n`` has an imaginary part above ``atol``.
    """
    psi = np.asarray(psi.amplitudes if isinstance(psi, WaveState) else psi, dtype=complex)
    phi = psi * ipow(-np.arange(psi.shape[-1]))
    bad = np.abs(phi.imag) > atol * np.maximum(1.0, np.abs(phi))
    if np.any(bad):
        raise GaugeError(f"amplitudes at sites {np.flatnonzero(bad) + 1} are not gauge-real")
    return phi.real.copy()


def from_real_gauge(phi):
    phi = np.asarray(phi, dtype=float)
    return phi * ipow(np.arange(phi.shape[-1]))


@dataclass
class Trajectory:
    """Sampled solution of the coupled system.

    Arrays are stacked along the first axis, one row per entry of ``times``.
    ``dense`` keeps the integrator's accepted steps for interpolation.
    """

    times: np.ndarray
    couplings: np.ndarray
    multipliers: np.ndarray
    amplitudes: np.ndarray
    spec: ChainSpec
    gauge_amplitudes: np.ndarray = None
    dense: DenseSolution = field(default=None, repr=False)
    complex_wave: bool = False

    def __post_init__(self):
        t = np.asarray(self.times)
        if t.ndim != 1 or t.size == 0 or t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing and start at 0")

    def __len__(self):
        return self.times.shape[0]

    def control(self, i):
        return ControlState(self.couplings[i], self.multipliers[i], self.spec)

    def wave(self, i):
        g = None if self.gauge_amplitudes is None else self.gauge_amplitudes[i]
        return WaveState(self.amplitudes[i], g)

    @property
    def probabilities(self):
        return np.abs(self.amplitudes) ** 2

    @property
    def positions(self):
        p = self.probabilities
        return p @ np.arange(1, self.spec.n_sites + 1) / p.sum(axis=1)

    @property
    def n_steps(self):
        return None if self.dense is None else self.dense.n_accepted


def _split(y, lay):
    J, lam = y[..., lay.J], y[..., lay.L]
    if lay.complex_wave:
        psi = y[..., lay.P] + 1j * y[..., lay.Q]
        phi = None
    else:
        phi = y[..., lay.P]
        psi = from_real_gauge(phi)
    return J, lam, psi, phi


def integrate(c0, psi0, t_end, tol=1e-10, spec=None, samples=201, gauge="auto",
              max_steps=500_000):
    """Integrate controls and amplitudes from ``t=0`` to ``t_end``.

    Parameters
    ----------
    c0 : ControlState
    psi0 : WaveState or array_like
    t_end : float
    tol : float
        Local error tolerance in ``[1e-14, 1e-6]``.
    samples : int
        Number of uniformly spaced output times, endpoints included.
    gauge : {"auto", "real", "complex"}
        ``auto`` uses the real gauge when ``psi0`` permits it.

    Returns
    -------
    Trajectory
    """
    spec = c0.spec if spec is None else spec
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if not TOL_RANGE[0] <= tol <= TOL_RANGE[1]:
        raise ValueError(f"tol must lie in {TOL_RANGE}, got {tol}")
    if samples < 2:
        raise ValueError("need at least two samples")
    N = spec.n_sites
    psi = np.asarray(psi0.amplitudes if isinstance(psi0, WaveState) else psi0, dtype=complex)
    if psi.shape != (N,):
        raise ShapeError(f"expected {N} amplitudes, got shape {psi.shape}")

    phi = None
    if gauge in ("auto", "real"):
        try:
            phi = to_real_gauge(psi)
        except GaugeError:
            if gauge == "real":
                raise
    elif gauge != "complex":
        raise ValueError(f"unknown gauge mode {gauge!r}")
    complex_wave = phi is None
    lay = layout(N, complex_wave)
    y0 = np.concatenate([c0.couplings, c0.multipliers] +
                        ([psi.real, psi.imag] if complex_wave else [phi]))
    sol = integrate_rk(state_rhs(N, complex_wave), (0.0, t_end), y0, rtol=tol,
                       max_steps=max_steps)
    times = np.linspace(0.0, t_end, samples)
    ys = sol(times)
    ys[-1] = sol.y_final
    J, lam, amps, phis = _split(ys, lay)
    return Trajectory(times, J, lam, amps, spec, phis, sol, complex_wave)


@dataclass(frozen=True)
class ConservationReport:
    coupling_norm_drift: float
    multiplier_norm_drift: float
    wave_norm_drift: float
    spectrum_drift: float

    def max_drift(self):
        return max(self.coupling_norm_drift, self.multiplier_norm_drift,
                   self.wave_norm_drift, self.spectrum_drift)


def generators(J, lam, n_sites):
    """Stacked dense ``H + D`` for arrays of couplings and multipliers."""
    J = np.atleast_2d(J)
    lam = np.atleast_2d(lam)
    N = n_sites
    a, b = multiplier_pairs(N)
    G = np.zeros((J.shape[0], N, N), dtype=complex)
    idx = np.arange(N - 1)
    G[:, idx, idx + 1] = J
    G[:, idx + 1, idx] = J
    if a.size:
        lower = lam * (ipow(b - a - 1) / SQRT2)
        G[:, b - 1, a - 1] = lower
        G[:, a - 1, b - 1] = np.conj(lower)
    return G


def _relative_drift(values):
    ref = values[0]
    dev = np.max(np.abs(values - ref))
    return float(dev / ref) if ref > 0 else float(dev)


def conservation_report(traj):
    """Drift of the constants of motion along a trajectory.

    Evaluated on the integrator's accepted steps when available, otherwise on
    the stored samples.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    N = traj.spec.n_sites
    if traj.dense is not None and traj.dense.n_steps > 0:
        lay = layout(N, traj.complex_wave)
        J, lam, amps, _ = _split(traj.dense.y, lay)
    else:
        J, lam, amps = traj.couplings, traj.multipliers, traj.amplitudes
    jn = np.sum(J ** 2, axis=1)
    ln = np.sum(lam ** 2, axis=1)
    wn = np.sum(np.abs(amps) ** 2, axis=1)
    spectra = np.linalg.eigvalsh(generators(J, lam, N))
    return ConservationReport(
        coupling_norm_drift=_relative_drift(jn),
        multiplier_norm_drift=_relative_drift(ln),
        wave_norm_drift=float(np.max(np.abs(wn - 1.0))),
        spectrum_drift=float(np.max(np.abs(spectra - spectra[0]))),
    )


__all__ = [
    "ConservationReport", "Layout", "Trajectory", "conservation_report", "coupling_norm",
    "from_real_gauge", "generators", "integrate", "qbe_rhs", "schrodinger_rhs",
    "state_rhs", "state_vjp", "to_real_gauge",
]
