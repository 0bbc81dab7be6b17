"""Independent brute-force checks.

Nothing here shares a code path with the structured right-hand side or the
adaptive integrator: the control derivative comes from a dense commutator
projected on an explicit matrix basis, propagation goes through Hermitian
eigendecompositions, and minimal times come from a model-free search over
piecewise-constant schedules.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize

from .baselines import Schedule, perfect_transfer_time, stepwise_time
from .chain import SQRT2, ChainSpec, ControlState, WaveState, build_generator
from .errors import BasisClosureError, NumericalError, PreconditionError

log = logging.getLogger(__name__)

CLOSURE_TOL = 1e-12


def _x(m, n, z, N):
    """``(z E_{nm} + conj(z) E_{mn}) / sqrt(2)`` with 1-based labels."""
    X = np.zeros((N, N), dtype=complex)
    X[n - 1, m - 1] += z
    X[m - 1, n - 1] += np.conj(z)
    return X / SQRT2


@lru_cache(maxsize=None)
def basis(n_sites):
    """Orthonormal traceless Hermitian basis split into its four families.

    Returns a dict with keys ``"A"`` (nearest-neighbour), ``"Be"`` (even
    phase, one per multiplier), ``"Bo"`` (odd phase) and ``"diag"``; each value
    is a list of ``(label, matrix)``.
    """
    N = n_sites
    fam = {"A": [], "Be": [], "Bo": [], "diag": []}
    for m in range(1, N):
        fam["A"].append(((m, m + 1), _x(m, m + 1, 1.0, N)))
    for m in range(1, N):
        for q in range(2, N - m + 1):
            fam["Be"].append(((m, m + q), _x(m, m + q, 1j ** (q - 1), N)))
    for m in range(1, N):
        for q in range(1, N - m + 1):
            fam["Bo"].append(((m, m + q), _x(m, m + q, 1j ** q, N)))
    for m in range(1, N):
        d = np.zeros(N)
        d[:m] = 1.0
        d[m] = -m
        fam["diag"].append(((m, m), np.diag(d / np.sqrt(m * m + m)).astype(complex)))
    return fam


def commutator_rhs_oracle(control, spec=None, closure_tol=CLOSURE_TOL):
    """Control derivative from ``d(H + D)/dt = -i [H, D]`` by explicit traces.

    Raises
    ------
    BasisClosureError
        If the commutator has weight above ``closure_tol`` on the odd-phase or
        diagonal families, which the even multipliers cannot absorb.
    """
    dJ, dL, worst = _project(control, spec)
    if worst > closure_tol:
        raise BasisClosureError(f"out-of-family projection {worst:.3e} exceeds {closure_tol}")
    return dJ, dL


def _project(control, spec=None):
    """Family projections of ``-i [H, D]`` and the largest out-of-family weight."""
    spec = control.spec if spec is None else spec
    N = spec.n_sites
    zeros_J = np.zeros(spec.n_couplings)
    zeros_L = np.zeros(spec.n_multipliers)
    H = build_generator(ControlState(control.couplings, zeros_L, spec))
    D = build_generator(ControlState(zeros_J, control.multipliers, spec))
    M = -1j * (H @ D - D @ H)
    fam = basis(N)
    dJ = np.array([np.trace(A @ M).real for _, A in fam["A"]]) / SQRT2
    dL = np.array([np.trace(B @ M).real for _, B in fam["Be"]])
    leak = [abs(np.trace(B @ M)) for _, B in fam["Bo"] + fam["diag"]]
    leak.append(float(np.max(np.abs([np.trace(B @ M).imag for _, B in fam["Be"]]),
                              initial=0.0)))
    return dJ, dL, float(max(leak, default=0.0))


@dataclass
class OracleReport:
    """Worst deviation seen by an oracle comparison."""

    name: str
    max_abs_deviation: float
    cases_run: int
    threshold: float
    worst_case_input: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.max_abs_deviation <= self.threshold


def rhs_equivalence(rhs, n_values=range(3, 9), draws=100, seed=0, threshold=CLOSURE_TOL):
    """Compare ``rhs(control) -> (dJ, dlam)`` with the commutator oracle on random controls."""
    rng = np.random.default_rng(seed)
    worst, worst_input, cases = -1.0, {}, 0
    for N in n_values:
        spec = ChainSpec(N)
        for _ in range(draws):
            c = ControlState(rng.normal(size=spec.n_couplings),
                             rng.normal(size=spec.n_multipliers), spec)
            dJ_o, dL_o = commutator_rhs_oracle(c)
            dJ, dL = rhs(c)
            dev = float(max(np.max(np.abs(dJ - dJ_o)),
                            np.max(np.abs(dL - dL_o), initial=0.0)))
            cases += 1
            if dev > worst:
                worst = dev
                worst_input = {"n_sites": N, "couplings": c.couplings.tolist(),
                               "multipliers": c.multipliers.tolist()}
    return OracleReport("rhs_equivalence", worst, cases, threshold, worst_input)


def closure_report(n_values=range(3, 9), draws=100, seed=0, threshold=CLOSURE_TOL):
    """Largest commutator weight outside the coupling and even-multiplier families."""
    rng = np.random.default_rng(seed)
    worst, worst_input, cases = -1.0, {}, 0
    for N in n_values:
        spec = ChainSpec(N)
        for _ in range(draws):
            c = ControlState(rng.normal(size=spec.n_couplings),
                             rng.normal(size=spec.n_multipliers), spec)
            leak = _project(c)[2]
            cases += 1
            if leak > worst:
                worst = leak
                worst_input = {"n_sites": N, "couplings": c.couplings.tolist(),
                               "multipliers": c.multipliers.tolist()}
    return OracleReport("basis_closure", max(worst, 0.0), cases, threshold, worst_input)


def hermitian_propagator(H, dt, unitarity_tol=1e-13):
    """``exp(-i H dt)`` through an eigendecomposition of Hermitian ``H``."""
    try:
        w, V = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    dev = np.max(np.abs(V.conj().T @ V - np.eye(H.shape[0])))
    if dev > unitarity_tol:
        raise NumericalError(f"eigenvectors lost orthonormality ({dev:.2e})")
    return (V * np.exp(-1j * w * dt)) @ V.conj().T


def expm_propagate(schedule, psi0=None):
    """Exact propagation through a piecewise-constant schedule."""
    spec = schedule.spec
    psi = (WaveState.site(spec) if psi0 is None else psi0).amplitudes.copy()
    idx = np.arange(spec.n_couplings)
    for dt, J in schedule.segments:
        H = np.zeros((spec.n_sites, spec.n_sites))
        H[idx, idx + 1] = J
        H[idx + 1, idx] = J
        psi = hermitian_propagator(H, dt) @ psi
    return WaveState(psi)


def schedule_from_trajectory(traj, n_segments):
    """Midpoint piecewise-constant approximation of an integrated trajectory.

    Each segment's couplings are read from the dense interpolant at its
    midpoint and projected onto the budget sphere, which the interpolant only
    meets to integration accuracy.
    """
    if traj.dense is None:
        raise PreconditionError("trajectory has no dense output")
    spec = traj.spec
    edges = np.linspace(0.0, traj.times[-1], n_segments + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    J = traj.dense(mids)[:, :spec.n_couplings]
    J *= spec.j0 / np.linalg.norm(J, axis=1, keepdims=True)
    return Schedule(tuple(zip(np.diff(edges), J)), spec, "custom")


# -- brute-force minimal time --------------------------------------------------

def _segment_hamiltonians(Js, N):
    H = np.zeros((Js.shape[0], N, N))
    idx = np.arange(N - 1)
    H[:, idx, idx + 1] = Js
    H[:, idx + 1, idx] = Js
    return H


def _fidelity_and_grad(Js, dt, N):
    """Terminal fidelity and its gradient with respect to every segment coupling."""
    M = Js.shape[0]
    w, V = np.linalg.eigh(_segment_hamiltonians(Js, N))
    ph = np.exp(-1j * w * dt)
    fwd = np.empty((M + 1, N), dtype=complex)
    fwd[0] = 0
    fwd[0, 0] = 1
    for k in range(M):
        fwd[k + 1] = V[k] @ (ph[k] * (V[k].T @ fwd[k]))
    bwd = np.empty((M + 1, N), dtype=complex)
    bwd[M] = 0
    bwd[M, N - 1] = 1
    for k in range(M - 1, -1, -1):
        bwd[k] = V[k] @ (np.conj(ph[k]) * (V[k].T @ bwd[k + 1]))
    amp = fwd[M, N - 1]
    # Daleckii-Krein divided differences of exp(-i w dt)
    dw = w[:, :, None] - w[:, None, :]
    dph = ph[:, :, None] - ph[:, None, :]
    same = np.abs(dw) < 1e-9
    phi = np.where(same, -1j * dt * ph[:, :, None], dph / np.where(same, 1.0, dw))
    x = np.einsum("kji,kj->ki", V, fwd[:-1])
    z = np.einsum("kji,kj->ki", V, bwd[1:])
    K = np.conj(z)[:, :, None] * phi * x[:, None, :]
    P = V @ K @ np.transpose(V, (0, 2, 1))
    idx = np.arange(N - 1)
    dA = P[:, idx, idx + 1] + P[:, idx + 1, idx]
    F = float(abs(amp) ** 2)
    dF = 2 * np.real(np.conj(amp) * dA)
    return F, dF


def _on_sphere(C, j0):
    norms = np.linalg.norm(C, axis=1, keepdims=True)
    return j0 * C / norms, norms


def _optimise_restart(args):
    N, j0, M, T, c0, maxiter = args
    dt = T / M

    def f(v):
        C = v.reshape(M, N - 1)
        Js, norms = _on_sphere(C, j0)
        F, dF = _fidelity_and_grad(Js, dt, N)
        u = C / norms
        # pull back through J = j0 * c / |c|
        g = j0 * (dF - np.sum(dF * u, axis=1, keepdims=True) * u) / norms
        return 1.0 - F, -g.ravel()

    res = minimize(f, c0.ravel(), jac=True, method="L-BFGS-B",
                   options={"maxiter": maxiter, "ftol": 1e-16, "gtol": 1e-12})
    return 1.0 - float(res.fun), res.x.reshape(M, N - 1), int(res.nfev)


def max_fidelity(spec, total_time, n_segments=20, restarts=50, seed=0, target=None,
                 starts=(), jobs=1, maxiter=2000):
    """Best terminal fidelity over equal-length segments on the budget sphere.

    Stops early once ``target`` is reached. Returns ``(fidelity, couplings,
    evaluations)`` with ``couplings`` of shape ``(n_segments, N - 1)``.
    """
    N, M = spec.n_sites, n_segments
    rng = np.random.default_rng(seed)
    inits = [np.asarray(s, dtype=float) for s in starts]
    # one constant schedule first: with a single coupling the budget sphere is
    # two points, and only uniform signs are reachable without crossing zero
    inits += [np.tile(rng.normal(size=N - 1), (M, 1))]
    inits += [rng.normal(size=(M, N - 1)) for _ in range(restarts - 1)]
    jobs_args = [(N, spec.j0, M, float(total_time), c, maxiter) for c in inits]
    best_F, best_C, evals = -1.0, None, 0
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = pool.map(_optimise_restart, jobs_args)
            for F, C, n in results:
                evals += n
                if F > best_F:
                    best_F, best_C = F, C
    else:
        for a in jobs_args:
            F, C, n = _optimise_restart(a)
            evals += n
            if F > best_F:
                best_F, best_C = F, C
            if target is not None and best_F >= target:
                break
    Js, _ = _on_sphere(best_C, spec.j0)
    return best_F, Js, evals


@dataclass
class BruteForceResult:
    schedule: Schedule
    tau: float
    fidelity: float
    converged: bool
    evaluations: int
    history: list = field(default_factory=list)


def brute_force_min_time(spec, n_segments=20, restarts=50, seed=0, target=1 - 1e-6,
                         xtol=1e-3, max_evaluations=5_000_000, jobs=1):
    """Smallest total time at which some equal-segment schedule reaches ``target``.

    Bisection on the total time; at each trial time the fidelity is maximised
    from ``restarts`` random starts plus the best couplings found so far.

    Raises
    ------
    PreconditionError
        For chains longer than 5 sites.
    """
    N = spec.n_sites
    if N > 5:
        raise PreconditionError("brute-force search is limited to N <= 5")
    if n_segments < 1:
        raise ValueError("need at least one segment")
    evals = 0
    history = []
    hi = max(stepwise_time(spec), perfect_transfer_time(spec))
    F, C, n = max_fidelity(spec, hi, n_segments, restarts, seed, target)
    evals += n
    history.append((hi, F))
    grow = 0
    while F < target and grow < 5:
        hi *= 1.25
        F, C, n = max_fidelity(spec, hi, n_segments, restarts, seed, target)
        evals += n
        history.append((hi, F))
        grow += 1
    if F < target:
        sched = Schedule(tuple((hi / n_segments, J) for J in C), spec, "custom")
        return BruteForceResult(sched, hi, F, False, evals, history)
    best_F, best_C = F, C
    lo = 0.0
    converged = True
    while hi - lo > xtol:
        if evals > max_evaluations:
            converged = False
            break
        mid = 0.5 * (lo + hi)
        F, C, n = max_fidelity(spec, mid, n_segments, restarts, seed, target, starts=[best_C])
        evals += n
        history.append((mid, F))
        log.debug("brute force T=%.6f F=%.10f", mid, F)
        if F >= target:
            hi, best_F, best_C = mid, F, C
        else:
            lo = mid
    sched = Schedule(tuple((hi / n_segments, J) for J in best_C), spec, "custom")
    return BruteForceResult(sched, hi, best_F, converged, evals, history)
