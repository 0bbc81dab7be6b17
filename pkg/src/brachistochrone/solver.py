"""Time-optimal transfer: shooting, adjoint-gradient search and continuation.

All solves run in scaled time. The terminal time is fixed to 1 and the
initial coupling ``J_1(0)`` is left free; because ``sum J_m**2`` is conserved
and equals ``J_1(0)**2``, the physical transfer time is ``J_1(0) / J0``. The
unknowns are ``J_1(0)`` and ``lambda_{1,3}(0) .. lambda_{1,N}(0)`` (``N - 1``
numbers) and the residual is ``phi_1(1) .. phi_{N-1}(1)``, a square system.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .chain import ChainSpec, ControlState, WaveState
from .dynamics import Trajectory, integrate, layout, state_rhs, state_vjp
from .errors import (
    AdjointError, BrachistochroneError, ConvergenceError, PreconditionError, RankError,
    ShapeError,
)
from .integrators import integrate_rk
from .optimize import levenberg_marquardt

log = logging.getLogger(__name__)

SHOOTING_MAX_SITES = 16
SCALING_SLOPE = 1.13045
SCALING_INTERCEPT = -0.6677
# |lambda_{1,N}(0)| for the longest tabulated chain, used to seed new multipliers
LAMBDA_PLATEAU = 0.7235
# initial multipliers of the N = 10 solution, read from both ends
_HEAD_PROFILE = (0.881752, 0.813258, 0.79845, 0.795135)
_TAIL_PROFILE = (0.723523, 0.781153, 0.79177, 0.794023)


@dataclass(frozen=True)
class ShootingParams:
    """Scaled-time unknowns ``J_1(0)`` and ``lambda_{1,3}(0) .. lambda_{1,N}(0)``."""

    j1_initial: float
    lambda_initial: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        lam = np.array(self.lambda_initial, dtype=float).reshape(-1)
        if not (np.isfinite(self.j1_initial) and np.all(np.isfinite(lam))):
            raise ValueError("shooting parameters must be finite")
        lam.flags.writeable = False
        object.__setattr__(self, "j1_initial", float(self.j1_initial))
        object.__setattr__(self, "lambda_initial", lam)

    @property
    def n_sites(self):
        return self.lambda_initial.shape[0] + 2

    def to_vector(self):
        return np.concatenate([[self.j1_initial], self.lambda_initial])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[0], x[1:])

    @classmethod
    def from_normalized(cls, tau_j0, multipliers):
        """Build from ``tau * J0`` and multipliers in units of the coupling budget."""
        return cls(tau_j0, np.asarray(multipliers, dtype=float) * tau_j0)

    @property
    def multipliers(self):
        """Initial multipliers in units of ``J_1(0)``."""
        return self.lambda_initial / self.j1_initial

    def canonical(self):
        """Representative with ``j1 > 0`` and ``lambda_{1,3} <= 0``.

        Two discrete symmetries map solutions to solutions: flipping every
        entry (gauge sign on sites 2..N), and flipping ``lambda_{1,1+p}`` for
        even ``p`` (that gauge composed with ``G -> -conj(G)``).
        """
        x = self.to_vector()
        if x[0] < 0:
            x = -x
        if x.size > 1 and x[1] > 0:
            x[1::2] *= -1
        return ShootingParams.from_vector(x)


def _check_params(p, spec):
    if p.n_sites != spec.n_sites:
        raise ShapeError(f"shooting parameters are for N={p.n_sites}, chain has N={spec.n_sites}")


@dataclass
class ScaledSolve:
    """Outcome of a scaled-time solve before conversion to physical units."""

    params: ShootingParams
    residual_norm: float
    converged: bool
    method: str
    iterations: int
    tolerances: dict
    extra: dict = field(default_factory=dict)


@dataclass
class Solution:
    """A solved (or best-effort) transfer for one chain.

    ``params`` are the canonical scaled-time unknowns; ``multipliers`` gives
    the initial multipliers normalised by the coupling budget.
    """

    spec: ChainSpec
    params: ShootingParams
    tau: float
    fidelity: float
    residual_norm: float
    trajectory: Trajectory = field(default=None, repr=False)
    metadata: dict = field(default_factory=dict)

    @property
    def converged(self):
        return bool(self.metadata.get("converged", True))

    @property
    def multipliers(self):
        return self.params.multipliers

    @property
    def method(self):
        return self.metadata.get("method", "unknown")

    def mirror_diagnostics(self):
        """Terminal control pattern, which the residual does not enforce.

        Returns the largest ``|J_m(tau)|`` for ``m <= N-2`` and the largest
        multiplier outside the ``lambda_{n,N}`` column, both in units of J0.
        """
        if self.trajectory is None:
            raise PreconditionError("solution carries no trajectory")
        N = self.spec.n_sites
        J = self.trajectory.couplings[-1]
        lam = self.trajectory.multipliers[-1]
        b = layout(N).b
        off_column = lam[b != N]
        return {
            "max_inner_coupling": float(np.max(np.abs(J[:-1]), initial=0.0)) / self.spec.j0,
            "max_off_column_multiplier": float(np.max(np.abs(off_column), initial=0.0))
            / self.spec.j0,
        }


def initial_control(p, spec):
    """Control state at ``t=0``: only ``J_1`` and the first multiplier row are nonzero."""
    _check_params(p, spec)
    J = np.zeros(spec.n_couplings)
    J[0] = p.j1_initial
    lam = np.zeros(spec.n_multipliers)
    # row k=1 occupies the first N-2 packed slots
    lam[: spec.n_sites - 2] = p.lambda_initial
    return ControlState(J, lam, spec)


def _initial_states(X, n_sites):
    """Flat real-gauge initial states for a batch of parameter vectors."""
    lay = layout(n_sites)
    X = np.atleast_2d(X)
    Y = np.zeros((X.shape[0], lay.size))
    Y[:, 0] = X[:, 0]
    Y[:, lay.L.start:lay.L.start + n_sites - 2] = X[:, 1:]
    Y[:, lay.P.start] = 1.0
    return Y


def _terminal_amplitudes(X, n_sites, tol):
    """Real-gauge amplitudes at scaled time 1 for each row of ``X``."""
    lay = layout(n_sites)
    sol = integrate_rk(state_rhs(n_sites), (0.0, 1.0), _initial_states(X, n_sites),
                       rtol=tol, dense=False)
    return sol.y_final[:, lay.P]


def shooting_residual(p, spec, tol=1e-12):
    """``(phi_1(1), .., phi_{N-1}(1))`` for the scaled-time problem."""
    _check_params(p, spec)
    return _terminal_amplitudes(p.to_vector(), spec.n_sites, tol)[0, :-1]


def _fd_steps(x):
    return 1e-7 * np.maximum(1.0, np.abs(x))


def shooting_jacobian(x, n_sites, tol=1e-12):
    """Residual and forward-difference Jacobian from one batched integration."""
    h = _fd_steps(x)
    X = np.vstack([x, x + np.diag(h)])
    phi = _terminal_amplitudes(X, n_sites, tol)[:, :-1]
    r = phi[0]
    return r, ((phi[1:] - r) / h[:, None]).T


def infidelity(p, spec, tol=1e-11):
    """``1 - |psi_N(1)|**2`` evaluated as ``sum_{k<N} phi_k(1)**2``."""
    r = shooting_residual(p, spec, tol)
    return float(r @ r)


def infidelity_and_gradient(x, n_sites, tol=1e-11):
    """Infidelity and its gradient by the continuous adjoint method.

    The state is integrated forward with dense output; the costate
    ``a' = -(df/dy)^T a`` runs backward from ``a(1) = dC/dy(1)``, reading the
    forward state from the Hermite interpolant. ``a(0)`` restricted to the
    shooting unknowns is the gradient.
    """
    lay = layout(n_sites)
    y0 = _initial_states(x, n_sites)[0]
    fwd = integrate_rk(state_rhs(n_sites), (0.0, 1.0), y0, rtol=tol)
    phi = fwd.y_final[lay.P]
    cost = float(phi[:-1] @ phi[:-1])
    a1 = np.zeros(lay.size)
    a1[lay.P.start:lay.P.stop - 1] = 2 * phi[:-1]
    scale = float(np.max(np.abs(a1)))
    if scale == 0:
        return cost, np.zeros_like(x), fwd

    def costate_rhs(t, a):
        return -state_vjp(fwd(t), a, n_sites)

    bwd = integrate_rk(costate_rhs, (1.0, 0.0), a1, rtol=tol, atol=tol * scale)
    a0 = bwd.y_final
    grad = np.concatenate([[a0[0]], a0[lay.L.start:lay.L.start + n_sites - 2]])
    return cost, grad, fwd


def central_difference_gradient(x, n_sites, tol=1e-12, rel_step=1e-6):
    """Central differences of the infidelity from one batched integration."""
    h = rel_step * np.maximum(1.0, np.abs(x))
    X = np.vstack([x + np.diag(h), x - np.diag(h)])
    phi = _terminal_amplitudes(X, n_sites, tol)[:, :-1]
    c = np.sum(phi ** 2, axis=1)
    n = x.shape[0]
    return (c[:n] - c[n:]) / (2 * h)


def gradient_check(x, n_sites, tol=1e-12, rel_step=1e-6):
    """Normwise relative difference between adjoint and finite-difference gradients."""
    _, g_adj, _ = infidelity_and_gradient(x, n_sites, tol)
    g_fd = central_difference_gradient(x, n_sites, tol, rel_step)
    denom = max(np.linalg.norm(g_fd), np.finfo(float).tiny)
    return float(np.linalg.norm(g_adj - g_fd) / denom), g_adj, g_fd


def rescale_solution(raw, spec, int_tol=1e-12, samples=401):
    """Convert a scaled-time solve to physical time for budget ``spec.j0``.

    A verification integration in physical units supplies the trajectory and
    the fidelity ``|psi_N(tau)|**2``.
    """
    params = raw.params.canonical()
    _check_params(params, spec)
    tau = params.j1_initial / spec.j0
    phys = ShootingParams.from_vector(params.to_vector() * (spec.j0 / params.j1_initial))
    traj = integrate(initial_control(phys, spec), WaveState.site(spec), tau,
                     tol=int_tol, samples=samples)
    fidelity = float(traj.probabilities[-1, -1])
    meta = {
        "method": raw.method,
        "iterations": raw.iterations,
        "converged": raw.converged,
        "tolerances": dict(raw.tolerances),
        **raw.extra,
    }
    return Solution(spec, params, tau, fidelity, raw.residual_norm, traj, meta)


def default_guess(spec):
    """Cold-start guess from the linear time law and the tabulated multiplier profile."""
    N = spec.n_sites
    if N == 2:
        return ShootingParams(np.pi / 2)
    tau_j0 = SCALING_SLOPE * N + SCALING_INTERCEPT
    L = N - 2
    mags = np.empty(L)
    for j in range(L):
        from_end = L - 1 - j
        if j <= from_end:
            mags[j] = _HEAD_PROFILE[min(j, len(_HEAD_PROFILE) - 1)]
        else:
            mags[j] = _TAIL_PROFILE[min(from_end, len(_TAIL_PROFILE) - 1)]
    signs = -((-1.0) ** np.arange(L))
    return ShootingParams.from_normalized(tau_j0, mags * signs)


def continuation_guess(sol, strategy="insert"):
    """Guess for ``N+1`` sites from a converged ``N``-site solution.

    ``J_1(0)`` grows by the asymptotic time increment per site. For the
    multipliers, ``"insert"`` duplicates the middle entry so the profile keeps
    its head and tail; ``"append"`` copies all entries and appends the plateau
    value with alternating sign.
    """
    if not sol.converged:
        raise PreconditionError("continuation needs a converged solution")
    lam = sol.multipliers
    if lam.size == 0 or strategy == "append":
        sign = -np.sign(lam[-1]) if lam.size else -1.0
        new = np.append(lam, sign * LAMBDA_PLATEAU)
    elif strategy == "insert":
        mags = np.abs(lam)
        k = (mags.size + 1) // 2
        mags = np.concatenate([mags[:k], [mags[k - 1]], mags[k:]])
        new = mags * -((-1.0) ** np.arange(mags.size))
    else:
        raise ValueError(f"unknown continuation strategy {strategy!r}")
    j1 = sol.params.j1_initial + SCALING_SLOPE
    return ShootingParams.from_normalized(j1, new)


def _check_extremal(raw, expected_tau_j0, window):
    if expected_tau_j0 is None or not raw.converged:
        return raw
    got = raw.params.canonical().j1_initial
    if abs(got - expected_tau_j0) > window * expected_tau_j0:
        raw.converged = False
        raw.extra["rejected"] = (
            f"converged to tau*J0={got:.6g}, outside {window:.0%} of {expected_tau_j0:.6g}")
    return raw


def _finish(raw, spec, int_tol, expected_tau_j0, window):
    raw = _check_extremal(raw, expected_tau_j0, window)
    sol = rescale_solution(raw, spec, int_tol=int_tol)
    if not sol.converged:
        why = raw.extra.get("rejected", f"residual {raw.residual_norm:.3e}")
        raise ConvergenceError(f"{raw.method} solve for N={spec.n_sites} failed: {why}", best=sol)
    return sol


def solve_shooting(spec, guess=None, tol=1e-10, int_tol=1e-12, max_iter=100,
                   max_sites=SHOOTING_MAX_SITES, expected_tau=None, window=0.05):
    """Levenberg-Marquardt shooting on the terminal amplitudes.

    Parameters
    ----------
    spec : ChainSpec
    guess : ShootingParams, optional
        Scaled-time starting point; :func:`default_guess` when omitted.
    tol : float
        Target norm of the residual vector.
    int_tol : float
        Integrator tolerance for residual and Jacobian evaluations.
    expected_tau : float, optional
        Predicted physical time; a converged answer further than ``window``
        (relative) from it is treated as a spurious extremal.

    Raises
    ------
    ConvergenceError
        Carries the best iterate as a :class:`Solution` in ``best``.
    RankError
        If the initial Jacobian is singular.
    """
    N = spec.n_sites
    if N > max_sites:
        raise PreconditionError(f"shooting is limited to N <= {max_sites}, got N={N}")
    guess = default_guess(spec) if guess is None else guess
    _check_params(guess, spec)
    t0 = time.perf_counter()
    res = levenberg_marquardt(
        lambda x: _terminal_amplitudes(x, N, int_tol)[0, :-1],
        lambda x: shooting_jacobian(x, N, int_tol),
        guess.to_vector(), tol=tol, max_iter=max_iter)
    log.info("shooting N=%d: |r|=%.3e after %d iterations (%s)", N, res.norm, res.iterations,
             res.message)
    raw = ScaledSolve(ShootingParams.from_vector(res.x), res.norm, res.converged, "shooting",
                      res.iterations, {"residual": tol, "integration": int_tol},
                      {"elapsed_s": time.perf_counter() - t0})
    expected = None if expected_tau is None else expected_tau * spec.j0
    return _finish(raw, spec, int_tol, expected, window)


class _StopEarly(Exception):
    pass


def solve_gradient(spec, guess=None, tol=1e-9, int_tol=1e-11, max_iter=300,
                   check_gradient=True, check_rtol=1e-5, expected_tau=None, window=0.05):
    """Minimise the infidelity with BFGS driven by adjoint gradients.

    Converges when the infidelity drops to ``tol``. With ``check_gradient``
    the adjoint gradient at the starting point is compared with central
    differences and an :class:`AdjointError` raised on a normwise relative
    mismatch above ``check_rtol``.
    """
    N = spec.n_sites
    guess = default_guess(spec) if guess is None else guess
    _check_params(guess, spec)
    x0 = guess.to_vector()
    t0 = time.perf_counter()
    extra = {}
    if check_gradient:
        err, _, g_fd = gradient_check(x0, N)
        extra["gradient_check_rel_error"] = err
        if err > check_rtol:
            raise AdjointError(
                f"adjoint gradient differs from central differences by {err:.2e} (relative)")

    best = {"x": x0.copy(), "f": np.inf, "nit": 0}

    def fun(x):
        f, g, _ = infidelity_and_gradient(x, N, int_tol)
        if f < best["f"]:
            best["x"], best["f"] = x.copy(), f
        return f, g

    def callback(xk):
        best["nit"] += 1
        if best["f"] <= tol:
            raise _StopEarly

    try:
        minimize(fun, x0, jac=True, method="BFGS", callback=callback,
                 options={"gtol": 0.0, "maxiter": max_iter, "xrtol": 1e-16})
    except _StopEarly:
        pass
    except BrachistochroneError as exc:
        log.warning("gradient search for N=%d stopped: %s", N, exc)
    f = best["f"]
    log.info("gradient N=%d: infidelity=%.3e after %d iterations", N, f, best["nit"])
    extra["elapsed_s"] = time.perf_counter() - t0
    extra["infidelity"] = f
    raw = ScaledSolve(ShootingParams.from_vector(best["x"]), float(np.sqrt(max(f, 0.0))),
                      f <= tol, "gradient", best["nit"],
                      {"infidelity": tol, "integration": int_tol}, extra)
    expected = None if expected_tau is None else expected_tau * spec.j0
    return _finish(raw, spec, int_tol, expected, window)


def solve(spec, method="auto", guess=None, tol=None, **kwargs):
    """Dispatch to shooting (``N <= 16``) or gradient search."""
    if method == "auto":
        method = "shooting" if spec.n_sites <= SHOOTING_MAX_SITES else "gradient"
    if method == "shooting":
        return solve_shooting(spec, guess, tol=1e-10 if tol is None else tol, **kwargs)
    if method == "gradient":
        return solve_gradient(spec, guess, tol=1e-9 if tol is None else tol, **kwargs)
    raise ValueError(f"unknown method {method!r}")


def sweep(n_values, j0=1.0, method="auto", seeds=None, tol=None, strategy="insert",
          on_result=None, **kwargs):
    """Solve a range of chain lengths in ascending order with continuation.

    ``seeds`` maps ``N`` to :class:`ShootingParams` used as starting points;
    otherwise the previous converged solution seeds the next ``N``. Failures
    are returned as unconverged solutions and the sweep carries on.
    """
    seeds = seeds or {}
    out = []
    prev = None
    for N in sorted(set(int(n) for n in n_values)):
        spec = ChainSpec(N, j0)
        expected = None
        if N in seeds:
            guess = seeds[N]
            expected = guess.canonical().j1_initial / j0
        elif prev is not None and prev.converged and prev.spec.n_sites == N - 1:
            guess = continuation_guess(prev, strategy)
            expected = guess.j1_initial / j0
        else:
            guess = default_guess(spec)
        try:
            sol = solve(spec, method, guess, tol, expected_tau=expected, **kwargs)
        except ConvergenceError as exc:
            log.warning("N=%d did not converge: %s", N, exc)
            sol = exc.best
        except (RankError, AdjointError) as exc:
            log.warning("N=%d failed: %s", N, exc)
            sol = Solution(spec, guess.canonical(), guess.j1_initial / j0, float("nan"),
                           float("nan"), None, {"converged": False, "method": method, "iterations": 0,
                                                "error": str(exc)})
        out.append(sol)
        if on_result is not None:
            on_result(sol)
        prev = sol
    return out


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares line ``tau * J0 = slope * N + intercept``."""

    slope: float
    intercept: float
    residual_sum_squares: float
    max_abs_residual: float
    n_range: tuple

    def predict(self, n_sites, j0=1.0):
        return (self.slope * np.asarray(n_sites, dtype=float) + self.intercept) / j0


def fit_scaling(points):
    """Ordinary least squares of ``tau * J0`` against ``N``.

    Parameters
    ----------
    points : iterable of (N, tau * J0)

    Raises
    ------
    RankError
        If all ``N`` coincide.
    """
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least three (N, tau*J0) points")
    n, t = pts[:, 0], pts[:, 1]
    if np.ptp(n) == 0:
        raise RankError("all points share the same N")
    if np.unique(n).size != n.size:
        raise ValueError("chain lengths must be distinct")
    A = np.column_stack([n, np.ones_like(n)])
    coef, *_ = np.linalg.lstsq(A, t, rcond=None)
    resid = t - A @ coef
    return ScalingFit(float(coef[0]), float(coef[1]), float(resid @ resid),
                      float(np.max(np.abs(resid))), (int(n.min()), int(n.max())))


__all__ = [
    "ScalingFit", "ScaledSolve", "ShootingParams", "Solution", "continuation_guess",
    "default_guess", "fit_scaling", "gradient_check", "infidelity", "initial_control",
    "rescale_solution", "shooting_residual", "solve", "solve_gradient", "solve_shooting",
    "sweep",
]
