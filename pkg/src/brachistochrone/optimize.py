"""Levenberg-Marquardt for small square or overdetermined residual systems."""

import logging
from dataclasses import dataclass

import numpy as np

from .errors import BrachistochroneError, RankError

log = logging.getLogger(__name__)


@dataclass
class LMResult:
    x: np.ndarray
    residual: np.ndarray
    norm: float
    iterations: int
    n_jacobians: int
    converged: bool
    message: str


def _check_rank(J, rcond):
    s = np.linalg.svd(J, compute_uv=False)
    if s.size and (s[0] == 0 or s[-1] < rcond * s[0]):
        raise RankError(f"Jacobian is rank deficient (singular values {s[0]:.3g} .. {s[-1]:.3g})")


def levenberg_marquardt(residual, residual_and_jacobian, x0, tol=1e-10, max_iter=100,
                        mu0=1e-3, rcond=1e-13):
    """Minimise ``||r(x)||`` until it drops to ``tol``.

    ``residual_and_jacobian(x)`` returns ``(r, J)``; ``residual(x)`` returns
    ``r`` alone and is used to test trial steps. A trial step whose residual
    evaluation raises a package error counts as a rejected step.

    Damping follows Nielsen's update with Marquardt's diagonal scaling.
    """
    x = np.array(x0, dtype=float)
    r, J = residual_and_jacobian(x)
    _check_rank(J, rcond)
    n_jac = 1
    A = J.T @ J
    g = J.T @ r
    mu = mu0 * max(np.max(np.diag(A)), 1e-300)
    nu = 2.0
    norm = float(np.linalg.norm(r))
    for it in range(max_iter + 1):
        if norm <= tol:
            return LMResult(x, r, norm, it, n_jac, True, "residual tolerance reached")
        if it == max_iter:
            break
        D = np.diag(np.maximum(np.diag(A), 1e-12 * np.max(np.diag(A))))
        try:
            dx = np.linalg.solve(A + mu * D, -g)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2
            continue
        if np.linalg.norm(dx) <= 1e-15 * (np.linalg.norm(x) + 1e-15):
            return LMResult(x, r, norm, it, n_jac, False, "step below machine precision")
        x_new = x + dx
        try:
            r_new = residual(x_new)
            norm_new = float(np.linalg.norm(r_new))
        except BrachistochroneError as exc:
            log.debug("trial step rejected: %s", exc)
            norm_new = np.inf
        predicted = float(dx @ (mu * D @ dx - g))
        rho = (norm ** 2 - norm_new ** 2) / predicted if predicted > 0 else -1.0
        log.debug("lm it=%d |r|=%.3e trial=%.3e mu=%.3e rho=%.3f", it, norm, norm_new, mu, rho)
        if rho > 0:
            x = x_new
            r, J = residual_and_jacobian(x)
            n_jac += 1
            norm = float(np.linalg.norm(r))
            A = J.T @ J
            g = J.T @ r
            mu *= max(1 / 3, 1 - (2 * rho - 1) ** 3)
            nu = 2.0
        else:
            mu *= nu
            nu *= 2
    return LMResult(x, r, norm, max_iter, n_jac, False, "iteration limit reached")
