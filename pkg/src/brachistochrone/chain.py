"""Problem instances, control variables and generator matrices.

Everything lives in the single-excitation sector, so every operator is an
``N x N`` matrix over the site basis ``|1>, ..., |N>``. Sites and multiplier
pairs use 1-based labels in the public API; arrays are 0-based as usual.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import IndexDomainError, ShapeError

SQRT2 = np.sqrt(2.0)
_I_POWERS = np.array([1, 1j, -1, -1j])


def ipow(k):
    """Exact ``i**k`` for integer (array) ``k``."""
    return _I_POWERS[np.mod(k, 4)]


@dataclass(frozen=True)
class ChainSpec:
    """Chain length and coupling budget.

    Parameters
    ----------
    n_sites : int
        Number of qubits ``N >= 2``.
    j0 : float
        Coupling budget; the couplings obey ``sum_m J_m**2 = j0**2``.
    """

    n_sites: int
    j0: float = 1.0

    def __post_init__(self):
        if int(self.n_sites) != self.n_sites or self.n_sites < 2:
            raise ValueError(f"n_sites must be an integer >= 2, got {self.n_sites!r}")
        if not np.isfinite(self.j0) or self.j0 <= 0:
            raise ValueError(f"j0 must be positive and finite, got {self.j0!r}")
        object.__setattr__(self, "n_sites", int(self.n_sites))
        object.__setattr__(self, "j0", float(self.j0))

    @property
    def n_couplings(self) -> int:
        return self.n_sites - 1

    @property
    def n_multipliers(self) -> int:
        return (self.n_sites - 1) * (self.n_sites - 2) // 2


def _frozen(values, dtype, length, what):
    arr = np.array(values, dtype=dtype).reshape(-1)
    if arr.shape[0] != length:
        raise ShapeError(f"{what} must have length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ControlState:
    """Couplings ``J_m`` and the even-family multipliers ``lambda_{k,k+n}``.

    Multipliers are packed row-major: ``k`` ascending, then spacing ``n``
    ascending (see :func:`multiplier_index`).
    """

    couplings: np.ndarray
    multipliers: np.ndarray
    spec: ChainSpec = field(repr=False)

    def __post_init__(self):
        object.__setattr__(
            self, "couplings",
            _frozen(self.couplings, float, self.spec.n_couplings, "couplings"))
        object.__setattr__(
            self, "multipliers",
            _frozen(self.multipliers, float, self.spec.n_multipliers, "multipliers"))

    @classmethod
    def zeros(cls, spec):
        return cls(np.zeros(spec.n_couplings), np.zeros(spec.n_multipliers), spec)

    def multiplier(self, k, n):
        """Return ``lambda_{k,k+n}``."""
        return float(self.multipliers[multiplier_index(k, n, self.spec)])


@dataclass(frozen=True)
class WaveState:
    """Single-excitation amplitudes ``psi_n``.

    ``gauge_amplitudes`` holds the real ``phi_n`` with ``psi_n = i**(n-1) phi_n``
    when the state was propagated in the real gauge.
    """

    amplitudes: np.ndarray
    gauge_amplitudes: np.ndarray = None

    def __post_init__(self):
        amp = np.array(self.amplitudes, dtype=complex).reshape(-1)
        amp.flags.writeable = False
        object.__setattr__(self, "amplitudes", amp)
        if self.gauge_amplitudes is not None:
            object.__setattr__(
                self, "gauge_amplitudes",
                _frozen(self.gauge_amplitudes, float, amp.shape[0], "gauge_amplitudes"))

    @classmethod
    def site(cls, spec, n=1):
        """Excitation localised on site ``n`` (1-based)."""
        phi = np.zeros(spec.n_sites)
        phi[n - 1] = 1.0
        return cls(phi * ipow(n - 1), phi)

    @property
    def probabilities(self):
        return np.abs(self.amplitudes) ** 2

    @property
    def norm2(self):
        return float(np.sum(self.probabilities))

    def position(self):
        """Expectation of the 1-based site label."""
        p = self.probabilities
        return float(np.dot(np.arange(1, p.shape[0] + 1), p) / p.sum())


@lru_cache(maxsize=None)
def multiplier_pairs(n_sites):
    """1-based ``(k, k+n)`` label arrays of the packed multipliers, in order."""
    ks, bs = [], []
    for k in range(1, n_sites):
        for n in range(2, n_sites - k + 1):
            ks.append(k)
            bs.append(k + n)
    a = np.array(ks, dtype=np.intp)
    b = np.array(bs, dtype=np.intp)
    a.flags.writeable = False
    b.flags.writeable = False
    return a, b


def multiplier_index(k, n, spec):
    """Packed ordinal of ``lambda_{k,k+n}``.

    Raises
    ------
    IndexDomainError
        Unless ``1 <= k <= N-1`` and ``2 <= n <= N-k``.
    """
    N = spec.n_sites
    if not (1 <= k <= N - 1 and 2 <= n <= N - k):
        raise IndexDomainError(f"(k={k}, n={n}) outside the multiplier family for N={N}")
    # rows k' < k hold N - k' - 1 entries each
    return (k - 1) * (N - 1) - (k - 1) * k // 2 + (n - 2)


def multiplier_pair(ordinal, spec):
    """Inverse of :func:`multiplier_index`, returning ``(k, n)``."""
    if not 0 <= ordinal < spec.n_multipliers:
        raise IndexDomainError(f"ordinal {ordinal} outside 0..{spec.n_multipliers - 1}")
    a, b = multiplier_pairs(spec.n_sites)
    return int(a[ordinal]), int(b[ordinal] - a[ordinal])


def coupling_norm(J):
    """Sum of squared couplings."""
    J = np.asarray(J, dtype=float)
    return float(np.dot(J, J))


def build_hamiltonian(J, spec):
    """Real symmetric tridiagonal hopping matrix with ``H[m, m+1] = J_m``."""
    J = np.asarray(J, dtype=float).reshape(-1)
    if J.shape[0] != spec.n_couplings:
        raise ShapeError(f"expected {spec.n_couplings} couplings, got {J.shape[0]}")
    return np.diag(J, 1) + np.diag(J, -1)


def build_generator(control, spec=None):
    """Dense Hermitian matrix ``H + D`` for a control state.

    The multiplier ``lambda_{k,k+n}`` multiplies the basis element with
    ``i**(n-1)/sqrt(2)`` at row ``k+n``, column ``k`` and the conjugate at the
    transposed position. The diagonal is zero, so the result is traceless.
    """
    spec = control.spec if spec is None else spec
    if control.spec.n_sites != spec.n_sites:
        raise ShapeError("control state belongs to a different chain length")
    G = build_hamiltonian(control.couplings, spec).astype(complex)
    a, b = multiplier_pairs(spec.n_sites)
    if a.size:
        phase = ipow(b - a - 1) / SQRT2
        lower = control.multipliers * phase
        G[b - 1, a - 1] = lower
        G[a - 1, b - 1] = np.conj(lower)
    return G
