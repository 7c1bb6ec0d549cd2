"""Canonical and example states, plus the distillation instance type."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import DomainError
from .linalg import hermitian, is_density, normalized, projector, pure_state


@dataclass(frozen=True)
class DistillationInstance:
    """Input density ``rho``, target dimension ``m`` and infidelity ``eps``.

    ``eps`` may be a :class:`fractions.Fraction` so that threshold points such as
    ``1 - 2/3`` are represented exactly.
    """

    rho: np.ndarray
    m: int
    eps: float | Fraction = 0.0

    def __post_init__(self):
        rho = hermitian(self.rho)
        if not is_density(rho):
            raise DomainError("rho must be positive semidefinite with unit trace")
        if int(self.m) != self.m or self.m < 2:
            raise DomainError(f"target dimension must be an integer >= 2, got {self.m}")
        if not 0 <= self.eps < 1:
            raise DomainError(f"eps must lie in [0, 1), got {self.eps}")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "m", int(self.m))

    @property
    def d(self) -> int:
        return self.rho.shape[0]

    @property
    def trivial(self) -> bool:
        """The maximally mixed output already reaches fidelity ``1 - eps``."""
        return Fraction(self.eps) >= 1 - Fraction(1, self.m)

    @classmethod
    def from_state(cls, psi, m: int, eps=0.0) -> "DistillationInstance":
        return cls(projector(pure_state(psi)), m, eps)


def max_coherent(m: int) -> np.ndarray:
    """Uniform superposition of ``m`` basis states."""
    if int(m) != m or m < 1:
        raise DomainError(f"dimension must be a positive integer, got {m}")
    return np.full(int(m), 1.0 / math.sqrt(m))


def max_coherent_dm(m: int) -> np.ndarray:
    return projector(max_coherent(m))


def smoothed_target(m: int, eps) -> np.ndarray:
    """``(1 - eps) Psi_m + eps (1 - Psi_m) / (m - 1)``."""
    if int(m) != m or m < 2:
        raise DomainError(f"smoothed target needs m >= 2, got {m}")
    if not 0 <= eps <= 1:
        raise DomainError(f"eps must lie in [0, 1], got {eps}")
    eps = float(eps)
    psi = max_coherent_dm(m)
    return (1 - eps) * psi + eps * (np.eye(m) - psi) / (m - 1)


_SQ2 = math.sqrt(2.0)
_PAPER_STATES = {
    "v1": np.array([1.0, -1.0, -1.0, 1.0]) / 2,
    "v2": np.array([2.0, 6.0, -3.0, 1.0]) / (5 * _SQ2),
    "u1": np.array([1.0, 1.0, 1.0, 1.0]) / 2,
    "u2": np.array([3.0, -2.0, 1.0, 2.0]) / (3 * _SQ2),
    "main_example": np.array([3.0, 1.0]) / math.sqrt(10),
    "fig2_example": np.array([1.0, 3.0]) / math.sqrt(10),
}
PAPER_STATE_NAMES = tuple(_PAPER_STATES)


def paper_state(name: str) -> np.ndarray:
    """Named example states.

    ``v1, v2, u1, u2`` are two-qubit vectors in the ``|00>, |01>, |10>, |11>``
    ordering; ``main_example = (3|0> + |1>)/sqrt(10)`` and
    ``fig2_example = (|0> + 3|1>)/sqrt(10)``.
    """
    try:
        return pure_state(_PAPER_STATES[name].copy())
    except KeyError:
        raise DomainError(f"unknown state {name!r}; choose from {', '.join(PAPER_STATE_NAMES)}") from None


def mixture(q: float, a, b) -> np.ndarray:
    """``q |a><a| + (1 - q) |b><b|``."""
    if not 0 <= q <= 1:
        raise DomainError(f"mixing weight must lie in [0, 1], got {q}")
    return q * projector(a) + (1 - q) * projector(b)


def random_density(dim: int, rank: int, seed: int) -> np.ndarray:
    """Seeded random density matrix of exactly the requested rank.

    Ginibre construction ``G G^dagger / tr`` with ``G`` of shape ``dim x rank``;
    nonzero eigenvalues are then floored at 1e-3 (and the trace restored) so the
    rank is numerically unambiguous.
    """
    if not 1 <= rank <= dim:
        raise DomainError(f"rank must satisfy 1 <= rank <= dim, got rank={rank}, dim={dim}")
    rng = np.random.default_rng(seed)
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    q, _ = np.linalg.qr(g)
    w = np.abs(rng.normal(size=rank)) + 1e-12
    w = w / w.sum()
    floor = 1e-3
    if rank * floor <= 1:
        w = floor + (1 - rank * floor) * w
    rho = (q * w) @ q.conj().T
    return hermitian(0.5 * (rho + rho.conj().T))


def random_pure_state(dim: int, seed: int, real: bool = False) -> np.ndarray:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim)
    if not real:
        v = v + 1j * rng.normal(size=dim)
    return normalized(v)
