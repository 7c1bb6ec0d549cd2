"""Closed-form success probabilities, bounds and threshold predicates for pure inputs.

Every formula here depends only on the moduli of the amplitudes, so inputs are
first reduced to a :class:`SortedAmplitudes` (moduli, zeros dropped, sorted
nonincreasing).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError

ZERO_TOL = 1e-12
THRESHOLD_TOL = 1e-12


@dataclass(frozen=True)
class SortedAmplitudes:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise DomainError("amplitudes must be a non-empty vector")
        if np.any(v <= 0) or np.any(np.diff(v) > 0):
            raise DomainError("amplitudes must be strictly positive and nonincreasing")
        if abs(float(v @ v) - 1.0) > 1e-12:
            raise DomainError("squared amplitudes must sum to 1")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return int(self.values.size)


def normalize_amplitudes(psi, zero_tol: float = ZERO_TOL) -> SortedAmplitudes:
    """Moduli of ``psi`` with ``|psi_i|^2 < zero_tol`` dropped, sorted and renormalised."""
    a = np.abs(np.asarray(psi))
    if a.ndim != 1:
        raise DomainError("expected an amplitude vector")
    a = a[a * a >= zero_tol]
    if a.size == 0:
        raise DomainError("every amplitude is below the zero tolerance")
    a = np.sort(a)[::-1]
    return SortedAmplitudes(a / np.linalg.norm(a))


def _amps(a) -> SortedAmplitudes:
    return a if isinstance(a, SortedAmplitudes) else normalize_amplitudes(a)


def _check_m(m):
    if int(m) != m or m < 2:
        raise DomainError(f"target dimension must be an integer >= 2, got {m}")
    return int(m)


def p_sio_pure(a, m: int) -> float:
    """Optimal SIO/IO probability for ``phi -> Psi_m`` at zero error.

    ``min_k (m/k) sum_{i=m-k+1}^{n} a_i^2`` over ``k = 1..m`` (1-based indices
    into the sorted amplitudes), or 0 when ``n < m``.
    """
    a, m = _amps(a), _check_m(m)
    if a.n < m:
        return 0.0
    sq = a.values ** 2
    # tail[j] = sum of sq[j:]
    tail = np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])
    best = min(m / k * tail[m - k] for k in range(1, m + 1))
    return float(min(1.0, max(0.0, best)))


def qubit_threshold(a) -> float:
    """Smallest error at which a qubit target is reached deterministically."""
    phi1 = float(_amps(a).values[0])
    if phi1 <= 1 / math.sqrt(2):
        return 0.0
    return 0.5 - phi1 * math.sqrt(max(0.0, 1 - phi1 * phi1))


def p_qubit_target(a, eps: float) -> float:
    """Optimal MIO (equivalently DIO) probability for ``phi -> Psi_2`` at error ``eps``.

    Returns 1 for ``eps >= 1/2``, where fidelity 1/2 is reached by a free state.
    """
    a = _amps(a)
    eps = float(eps)
    if not 0 <= eps <= 1:
        raise DomainError(f"eps must lie in [0, 1], got {eps}")
    if eps >= 0.5 or eps >= qubit_threshold(a):
        return 1.0
    phi1 = float(a.values[0])
    p = 2 * (1 - phi1 ** 2) * ((math.sqrt(1 - eps) + math.sqrt(eps)) / (1 - 2 * eps)) ** 2
    return float(min(1.0, p))


def mio_pure_lower_bound(a, m: int) -> tuple[float, float]:
    """Two lower bounds ``(tight, weak)`` on the zero-error MIO probability.

    Both come from an explicit feasible point built on the state with
    amplitudes proportional to ``1 / phi_i``.
    """
    a, m = _amps(a), _check_m(m)
    n = a.n
    if n < 2:
        raise DomainError("input is incoherent; no coherence can be distilled")
    inv = 1.0 / a.values
    s = float(np.sum(inv ** 2))
    t = inv / math.sqrt(s)
    tproj = np.outer(t, t)
    op = (n - m) / (n - 1) * tproj + n * (m - 1) / (n - 1) * np.diag(t * t)
    c = 1.0 / float(np.max(np.abs(np.linalg.eigvalsh(op))))
    tight = n * n * c / s
    weak = n * n / (m * s)
    return float(tight), float(weak)


class Regime(str, enum.Enum):
    POSITIVE = "Positive"
    ZERO = "Zero"
    ONE = "One"


def dio_threshold(n: int, m: int, eps, maximally_coherent: bool = False,
                  tol: float = THRESHOLD_TOL) -> Regime:
    """Classify the DIO probability of distilling ``Psi_m`` from a pure input.

    ``n`` is the number of nonzero amplitudes. The probability is zero iff
    ``n < m`` and ``eps < 1 - n/m``; a maximally coherent input reaches it with
    certainty iff ``eps >= 1 - n/m``. Floats within ``tol`` of the threshold
    count as on it, so ``1/3`` and ``Fraction(1, 3)`` agree.
    """
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n}")
    m = _check_m(m)
    threshold = 1 - Fraction(int(n), m)
    e = Fraction(eps) if isinstance(eps, (int, Fraction)) else Fraction(float(eps))
    below = e < threshold and float(threshold - e) > tol
    if below:
        return Regime.ZERO if n < m else Regime.POSITIVE
    return Regime.ONE if maximally_coherent else Regime.POSITIVE


def dio_threshold_for(psi, m: int, eps, zero_tol: float = ZERO_TOL) -> tuple[Regime, int]:
    """:func:`dio_threshold` for a state vector; also returns the ``n`` used."""
    a = normalize_amplitudes(psi, zero_tol)
    uniform = bool(np.allclose(a.values, a.values[0], atol=1e-12))
    return dio_threshold(a.n, m, eps, maximally_coherent=uniform), a.n
