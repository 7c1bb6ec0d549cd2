"""Dense Hermitian-matrix kernel.

Operators are plain ``numpy`` arrays. :func:`hermitian` and :func:`pure_state`
validate and normalise inputs once at the boundary; everything else assumes
validated data and never mutates its arguments.

Basis indices are 0-based. A state written ``|1>, ..., |m>`` in the usual
notation corresponds to indices ``0, ..., m-1`` here. Composite indices follow
the row-major (Kronecker) convention ``(i_A, i_B) -> i_A * d_B + i_B``.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

from .errors import DomainError

HERMITIAN_TOL = 1e-12
NORM_TOL = 1e-12
PSD_CLIP = 1e-10


def hermitian(matrix, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Return ``matrix`` as a validated Hermitian operator.

    Defects up to ``tol`` (relative to the largest entry, floor 1) are removed by
    averaging with the conjugate transpose; larger defects raise.
    """
    a = np.asarray(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise DomainError(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError("matrix has non-finite entries")
    defect = np.max(np.abs(a - a.conj().T)) if a.size else 0.0
    scale = max(1.0, float(np.max(np.abs(a))))
    if defect > tol * scale:
        raise DomainError(f"matrix is not Hermitian (defect {defect:.3e})")
    a = 0.5 * (a + a.conj().T)
    if np.iscomplexobj(a) and not np.any(a.imag):
        a = a.real
    return a.astype(np.complex128 if np.iscomplexobj(a) else np.float64)


def pure_state(amplitudes, tol: float = NORM_TOL) -> np.ndarray:
    """Validate a unit-norm amplitude vector."""
    v = np.asarray(amplitudes)
    if v.ndim != 1 or v.size < 1:
        raise DomainError("amplitudes must be a non-empty vector")
    norm2 = float(np.vdot(v, v).real)
    if abs(norm2 - 1.0) > tol:
        raise DomainError(f"state is not normalised (|psi|^2 = {norm2!r})")
    if np.iscomplexobj(v) and not np.any(v.imag):
        v = v.real
    return v.astype(np.complex128 if np.iscomplexobj(v) else np.float64)


def normalized(amplitudes) -> np.ndarray:
    """Scale an amplitude vector to unit norm."""
    v = np.asarray(amplitudes, dtype=np.result_type(np.asarray(amplitudes), np.float64))
    norm = np.linalg.norm(v)
    if norm == 0:
        raise DomainError("cannot normalise the zero vector")
    return pure_state(v / norm)


def projector(psi) -> np.ndarray:
    """|psi><psi| for a state vector."""
    psi = np.asarray(psi)
    return np.outer(psi, psi.conj())


def is_real(*arrays) -> bool:
    return not any(np.iscomplexobj(a) and np.any(np.asarray(a).imag) for a in arrays)


def dephase(h: np.ndarray) -> np.ndarray:
    """Completely dephasing map: keep the diagonal in the reference basis."""
    return np.diag(np.diag(h))


def twirl(h: np.ndarray) -> np.ndarray:
    """Average of ``P h P^T`` over every permutation matrix ``P``.

    Closed form: the mean of the diagonal goes on the diagonal and the mean of
    the off-diagonal entries everywhere else. O(d^2).
    """
    h = np.asarray(h)
    d = h.shape[0]
    off_mean = (h.sum() - np.trace(h)) / (d * (d - 1)) if d > 1 else 0.0
    out = np.full(h.shape, off_mean, dtype=h.dtype)
    np.fill_diagonal(out, np.trace(h) / d)
    return out


def twirl_bruteforce(h: np.ndarray) -> np.ndarray:
    """Explicit permutation average; O(d! d^2), test oracle only."""
    h = np.asarray(h)
    d = h.shape[0]
    acc = np.zeros_like(h)
    count = 0
    for perm in itertools.permutations(range(d)):
        p = np.eye(d)[list(perm)]
        acc = acc + p @ h @ p.T
        count += 1
    return acc / count


def eigh(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in ascending order and the unitary of eigenvectors."""
    return np.linalg.eigh(h)


def psd_sqrt(h: np.ndarray, clip: float = PSD_CLIP) -> np.ndarray:
    w, u = eigh(h)
    if w[0] < -clip * max(1.0, abs(w[-1])):
        raise DomainError(f"operator is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.conj().T


def trace_norm(a: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(a, compute_uv=False)))


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    """Fidelity ``||sqrt(a) sqrt(b)||_1^2`` between two density operators."""
    for name, x in (("first", a), ("second", b)):
        tr = np.trace(x).real
        if abs(tr - 1.0) > 1e-9:
            raise DomainError(f"{name} argument does not have unit trace ({tr!r})")
    f = trace_norm(psd_sqrt(a) @ psd_sqrt(b)) ** 2
    return float(min(max(f, 0.0), 1.0))


def tensor(*ops: np.ndarray) -> np.ndarray:
    out = np.asarray(ops[0])
    for op in ops[1:]:
        out = np.kron(out, op)
    return out


def partial_trace(h: np.ndarray, dims: Sequence[int], keep: int) -> np.ndarray:
    """Reduced operator on subsystem ``keep`` of a bipartite operator."""
    d1, d2 = dims
    if h.shape != (d1 * d2, d1 * d2):
        raise DomainError(f"dims {tuple(dims)} do not match operator of shape {h.shape}")
    t = np.asarray(h).reshape(d1, d2, d1, d2)
    if keep == 0:
        return np.einsum("ajbj->ab", t)
    if keep == 1:
        return np.einsum("iaib->ab", t)
    raise DomainError(f"keep must be 0 or 1, got {keep}")


def apply_choi(j: np.ndarray, rho: np.ndarray, d_in: int, d_out: int) -> np.ndarray:
    """Action ``tr_A[J (rho^T (x) 1)]`` of the map with Choi matrix ``J``.

    ``J = sum_ij |i><j| (x) E(|i><j|)`` with the input system first.
    """
    t = np.asarray(j).reshape(d_in, d_out, d_in, d_out)
    return np.einsum("iajb,ji->ab", t, np.asarray(rho).T)


def choi_of_map(channel, d_in: int) -> np.ndarray:
    """Choi matrix of a linear map given as a Python callable."""
    blocks = []
    for i in range(d_in):
        row = []
        for k in range(d_in):
            e = np.zeros((d_in, d_in))
            e[i, k] = 1.0
            row.append(np.asarray(channel(e)))
        blocks.append(row)
    d_out = blocks[0][0].shape[0]
    out = np.zeros((d_in * d_out, d_in * d_out), dtype=np.result_type(*[b for r in blocks for b in r]))
    for i in range(d_in):
        for k in range(d_in):
            out[i * d_out:(i + 1) * d_out, k * d_out:(k + 1) * d_out] = blocks[i][k]
    return out


def is_psd(h: np.ndarray, tol: float = 1e-9) -> bool:
    return bool(np.linalg.eigvalsh(h)[0] >= -tol)


def is_density(h: np.ndarray, tol: float = 1e-9) -> bool:
    return abs(np.trace(h).real - 1.0) <= tol and is_psd(h, tol)
