"""Distillation programs for MIO and DIO.

Three independent routes compute the maximal success probability of turning
``rho`` into ``Psi_m`` with infidelity at most ``eps``:

* ``CompactPrimal``: maximise ``tr G rho`` over ``0 <= C <= G <= 1`` with
  ``Delta(G) = m Delta(C)`` and ``tr C rho >= (1 - eps) tr G rho`` (for DIO the
  variable ``G = m Delta(C)`` is eliminated);
* ``Dual``: the Lagrange duals of the compact programs;
* ``Choi``: the full Choi-matrix program ``max p`` subject to
  ``E(rho) = p * target`` with ``E`` completely positive, trace non-increasing
  and in the class.

The compact solution ``(G, C)`` is turned back into an explicit operation with
:func:`extract_protocol`; :func:`verify_protocol` checks such an operation from
scratch.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import sdp
from .errors import DomainError, SolverError
from .linalg import apply_choi, dephase, hermitian, is_real, partial_trace
from .states import DistillationInstance, max_coherent_dm, smoothed_target

ZERO_TOL = 1e-7
KERNEL_TOL = 1e-10
PROB_SLACK = 1e-7


class OpClass(str, enum.Enum):
    MIO = "MIO"
    DIO = "DIO"


class Route(str, enum.Enum):
    COMPACT_PRIMAL = "CompactPrimal"
    DUAL = "Dual"
    CHOI = "Choi"


@dataclass
class DistillationResult:
    probability: float
    raw: float
    op_class: OpClass
    route: Route
    gap: float
    status: str
    instance: DistillationInstance | None = None
    solution: sdp.ConicSolution | None = None
    program: sdp.ConicProgram | None = None
    G: np.ndarray | None = None
    C: np.ndarray | None = None
    wall_time_ms: float = 0.0
    trivial: bool = False

    @property
    def certified_zero(self) -> bool:
        """Raw value and the accompanying dual bound are both below 1e-7."""
        if self.solution is None:
            return False
        bound = self.solution.dual_value if self.route is not Route.DUAL else self.raw
        return self.raw <= ZERO_TOL and bound <= ZERO_TOL

    def as_dict(self) -> dict:
        inst = self.instance
        return {
            "class": self.op_class.value,
            "route": self.route.value,
            "d": inst.d if inst is not None else None,
            "m": inst.m if inst is not None else None,
            "eps": float(inst.eps) if inst is not None else None,
            "probability": self.probability,
            "gap": self.gap,
            "status": self.status,
            "wall_time_ms": self.wall_time_ms,
        }


@dataclass
class ChoiMatrix:
    """Choi matrix ``J = sum_ij |i><j| (x) E(|i><j|)`` with input system first."""

    d_in: int
    d_out: int
    J: np.ndarray

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return apply_choi(self.J, rho, self.d_in, self.d_out)


@dataclass
class ProtocolReport:
    psd: float
    trace: float
    membership: float
    action: float
    tol: float = 1e-6
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return max(self.psd, self.trace, self.membership, self.action) <= self.tol


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _builder_for(*arrays) -> sdp.ProgramBuilder:
    return sdp.ProgramBuilder(complex_=not is_real(*arrays))


def _identity(b):
    return b


def _unit(n, i, dtype):
    e = np.zeros((n, n), dtype=dtype)
    e[i, i] = 1.0
    return e


def _clamp(x: float) -> float:
    return min(1.0, max(0.0, x))


def _solve_or_raise(program, **opts) -> sdp.ConicSolution:
    sol = sdp.solve(program, **opts)
    if not sol.optimal:
        raise SolverError(f"solver finished with status {sol.status.value}: {sol.message}", sol)
    return sol


def _trivial_result(inst, cls, route) -> DistillationResult:
    return DistillationResult(1.0, 1.0, cls, route, 0.0, "Trivial", inst, trivial=True)


def _solver_opts(gap_tol, feas_tol, max_iter):
    return {"gap_tol": gap_tol, "feas_tol": feas_tol, "max_iter": max_iter}


# --------------------------------------------------------------------------
# compact primals
# --------------------------------------------------------------------------

def mio_program(inst: DistillationInstance, dio_constraint: bool = False) -> sdp.ConicProgram:
    """Compact primal over ``(C, G - C, 1 - G, slack)``.

    With ``dio_constraint`` the off-diagonal part of ``G`` is forced to zero,
    giving the DIO program in its un-eliminated form.
    """
    rho, m, eps, d = inst.rho, inst.m, float(inst.eps), inst.d
    bld = _builder_for(rho)
    dtype = complex if bld.complex_ else float
    c = bld.psd(d, "C")
    r = bld.psd(d, "G-C")
    e = bld.psd(d, "1-G")
    s = bld.nonneg(1, "fidelity slack")
    bld.add_matrix_equality({c: _identity, r: _identity, e: _identity}, np.eye(d))
    for i in range(d):
        unit = _unit(d, i, dtype)
        bld.add_row({c: (1 - m) * unit, r: unit}, 0.0)
    bld.add_row({c: eps * rho, r: -(1 - eps) * rho, s: np.array([-1.0])}, 0.0)
    if dio_constraint:
        offdiag = lambda b: b - dephase(b)
        for basis in sdp.hermitian_basis(d, bld.complex_):
            if np.any(np.diag(basis)):
                continue
            bld.add_row({c: offdiag(basis), r: offdiag(basis)}, 0.0)
    bld.maximize({c: rho, r: rho})
    return bld.build()


def dio_program(inst: DistillationInstance) -> sdp.ConicProgram:
    """C-only DIO primal over ``(C, m Delta(C) - C, diag(1 - m Delta(C)), slack)``."""
    rho, m, eps, d = inst.rho, inst.m, float(inst.eps), inst.d
    bld = _builder_for(rho)
    dtype = complex if bld.complex_ else float
    c = bld.psd(d, "C")
    f = bld.psd(d, "m Delta(C) - C")
    e = bld.nonneg(d, "1 - m Delta(C)")
    s = bld.nonneg(1, "fidelity slack")
    bld.add_matrix_equality({c: lambda b: b - m * dephase(b), f: _identity}, np.zeros((d, d)))
    for i in range(d):
        bld.add_row({c: m * _unit(d, i, dtype), e: np.eye(d)[i]}, 1.0)
    drho = dephase(rho)
    bld.add_row({c: rho - m * (1 - eps) * drho, s: np.array([-1.0])}, 0.0)
    # the same row rewritten through F: redundant, but its coefficient is
    # sign-definite at eps = 0, as the first one can be at a threshold
    bld.add_row({c: eps * rho, f: -(1 - eps) * rho, s: np.array([-1.0])}, 0.0)
    bld.maximize({c: m * drho})
    return bld.build()


def _compact(inst, cls, eliminate, gap_tol, feas_tol, max_iter) -> DistillationResult:
    if inst.trivial:
        return _trivial_result(inst, cls, Route.COMPACT_PRIMAL)
    t0 = time.perf_counter()
    if cls is OpClass.DIO and eliminate:
        program = dio_program(inst)
    else:
        program = mio_program(inst, dio_constraint=cls is OpClass.DIO)
    sol = _solve_or_raise(program, **_solver_opts(gap_tol, feas_tol, max_iter))
    if cls is OpClass.DIO and eliminate:
        C = sol.X[0]
        G = inst.m * dephase(C)
    else:
        C = sol.X[0]
        G = sol.X[0] + sol.X[1]
    raw = sol.primal_value
    return DistillationResult(_clamp(raw), raw, cls, Route.COMPACT_PRIMAL, sol.gap, sol.status.value,
                              inst, sol, program, G, C, 1e3 * (time.perf_counter() - t0))


def p_mio(inst: DistillationInstance, *, gap_tol=1e-8, feas_tol=1e-8, max_iter=100) -> DistillationResult:
    """Maximal MIO success probability from the compact primal."""
    return _compact(inst, OpClass.MIO, False, gap_tol, feas_tol, max_iter)


def p_dio(inst: DistillationInstance, *, eliminate: bool = True, gap_tol=1e-8, feas_tol=1e-8,
          max_iter=100) -> DistillationResult:
    """Maximal DIO success probability.

    Uses the C-only program by default; ``eliminate=False`` keeps ``G`` with the
    explicit ``G = Delta(G)`` rows, for cross-checking.
    """
    return _compact(inst, OpClass.DIO, eliminate, gap_tol, feas_tol, max_iter)


def p_compact(inst: DistillationInstance, cls: OpClass | str, **kw) -> DistillationResult:
    cls = OpClass(cls)
    return p_mio(inst, **kw) if cls is OpClass.MIO else p_dio(inst, **kw)


# --------------------------------------------------------------------------
# duals
# --------------------------------------------------------------------------

def _kernel_face_variable(bld, rho, name):
    """Hermitian ``W`` with ``P W P >= 0``, ``P`` the kernel projector of ``rho``.

    ``W`` is a PSD block on the kernel plus free coordinates for the blocks
    touching the support, the latter split into nonnegative pairs. Returns a
    function that turns the adjoint ``L^*`` of a map ``W -> L(W)`` into block
    adjoints for :meth:`sdp.ProgramBuilder.add_matrix_equality`.
    """
    d = rho.shape[0]
    w, u = np.linalg.eigh(rho)
    on_kernel = w <= KERNEL_TOL * max(1.0, w[-1])
    k = int(on_kernel.sum())
    frame = np.hstack([u[:, on_kernel], u[:, ~on_kernel]])
    uk = frame[:, :k]
    free = [frame @ e @ frame.conj().T for e in sdp.hermitian_basis(d, bld.complex_)
            if not np.any(e[:k, :k])]
    a = bld.psd(k, name + " (kernel)") if k else None
    f = bld.nonneg(2 * len(free), name + " (free +/-)")

    def adjoints(adj):
        out = {f: lambda b: np.repeat([[1.0], [-1.0]], len(free), axis=0).ravel()
               * np.tile([float(np.real(np.sum(h.conj() * adj(b)))) for h in free], 2)}
        if a is not None:
            out[a] = lambda b: uk.conj().T @ adj(b) @ uk
        return out
    return adjoints


def mio_dual_program(inst: DistillationInstance) -> sdp.ConicProgram:
    """``min tr X`` over ``X, Y >= 0``, ``lambda >= 0`` and diagonal ``Z`` with

        [1 - lambda (1 - eps)] rho + Y - X + Delta(Z) <= 0
        lambda rho - Y - m Delta(Z) <= 0

    written as a maximisation of ``-tr X``. The free diagonal of ``Z`` is split
    into two nonnegative parts.

    At ``eps = 0`` the fidelity constraint says ``G - C`` lives on the kernel
    of ``rho`` and its multiplier is any ``T >= 0`` on the support rather than
    ``lambda rho``; with a scalar ``lambda`` the optimum is only reached as
    ``lambda -> inf``. ``Y`` and ``T`` then only enter through ``W = Y - T``,
    which ranges over Hermitian matrices that are PSD on the kernel.
    """
    rho, m, eps, d = inst.rho, inst.m, float(inst.eps), inst.d
    bld = _builder_for(rho)
    x = bld.psd(d, "X")
    if eps == 0:
        face = _kernel_face_variable(bld, rho, "W")
        w1, w2 = face(_identity), face(lambda b: -b)
    else:
        y = bld.psd(d, "Y")
        lam = bld.nonneg(1, "lambda")

        def along_rho(scale):
            return lambda b: np.array([scale * float(np.real(np.sum(rho.conj() * b)))])
        w1 = {lam: along_rho(-(1 - eps)), y: _identity}
        w2 = {lam: along_rho(1.0), y: lambda b: -b}
    z = bld.nonneg(2 * d, "Z+ / Z-")
    s1 = bld.psd(d, "slack 1")
    s2 = bld.psd(d, "slack 2")

    def zdiag(scale):
        return lambda b: scale * np.concatenate([np.diag(b).real, -np.diag(b).real])

    bld.add_matrix_equality({s1: _identity, x: lambda b: -b, z: zdiag(1.0), **w1}, -rho)
    bld.add_matrix_equality({s2: _identity, z: zdiag(-float(m)), **w2}, np.zeros((d, d)))
    bld.maximize({x: -np.eye(d)})
    return bld.build()


def dio_dual_program(inst: DistillationInstance) -> sdp.ConicProgram:
    """``min tr X`` over ``X, Y >= 0``, ``lambda >= 0`` with

        m Delta(rho) + m Delta(Y) - Y - m Delta(X) + lambda rho
            - m (1 - eps) lambda Delta(rho) <= 0

    At ``eps = 0``, ``Y - lambda rho`` becomes a Hermitian ``W`` that is only
    PSD on the kernel of ``rho``, as in :func:`mio_dual_program`.
    """
    rho, m, eps, d = inst.rho, inst.m, float(inst.eps), inst.d
    bld = _builder_for(rho)
    x = bld.psd(d, "X")
    weights = lambda b: m * dephase(b) - b
    if eps == 0:
        w = _kernel_face_variable(bld, rho, "W")(weights)
    else:
        y = bld.psd(d, "Y")
        lam = bld.nonneg(1, "lambda")
        direction = rho - m * (1 - eps) * dephase(rho)
        w = {y: weights, lam: lambda b: np.array([float(np.real(np.sum(direction.conj() * b)))])}
    s = bld.psd(d, "slack")
    bld.add_matrix_equality({s: _identity, x: lambda b: -m * dephase(b), **w}, -m * dephase(rho))
    bld.maximize({x: -np.eye(d)})
    return bld.build()


def _dual(inst, cls, gap_tol, feas_tol, max_iter) -> DistillationResult:
    if inst.trivial:
        return _trivial_result(inst, cls, Route.DUAL)
    t0 = time.perf_counter()
    program = mio_dual_program(inst) if cls is OpClass.MIO else dio_dual_program(inst)
    sol = _solve_or_raise(program, **_solver_opts(gap_tol, feas_tol, max_iter))
    raw = -sol.primal_value
    return DistillationResult(_clamp(raw), raw, cls, Route.DUAL, sol.gap, sol.status.value, inst, sol,
                              program, wall_time_ms=1e3 * (time.perf_counter() - t0))


def p_mio_dual(inst: DistillationInstance, *, gap_tol=1e-8, feas_tol=1e-8, max_iter=100) -> DistillationResult:
    return _dual(inst, OpClass.MIO, gap_tol, feas_tol, max_iter)


def p_dio_dual(inst: DistillationInstance, *, gap_tol=1e-8, feas_tol=1e-8, max_iter=100) -> DistillationResult:
    return _dual(inst, OpClass.DIO, gap_tol, feas_tol, max_iter)


def p_dual(inst: DistillationInstance, cls: OpClass | str, **kw) -> DistillationResult:
    cls = OpClass(cls)
    return p_mio_dual(inst, **kw) if cls is OpClass.MIO else p_dio_dual(inst, **kw)


# --------------------------------------------------------------------------
# Choi-level programs
# --------------------------------------------------------------------------

def forbidden_entries(d_in: int, d_out: int, cls: OpClass | str) -> list[tuple[int, int]]:
    """Choi entries (upper triangle) that must vanish for the class.

    MIO: ``E(|i><i|)`` diagonal, i.e. ``J[(i,k),(i,l)] = 0`` for ``k != l``.
    DIO additionally: ``Delta(E(|i><j|)) = 0``, i.e. ``J[(i,k),(j,k)] = 0`` for
    ``i != j``.
    """
    cls = OpClass(cls)
    out = []
    for i in range(d_in):
        for k in range(d_out):
            for l in range(k + 1, d_out):
                out.append((i * d_out + k, i * d_out + l))
    if cls is OpClass.DIO:
        for i in range(d_in):
            for j in range(i + 1, d_in):
                for k in range(d_out):
                    out.append((i * d_out + k, j * d_out + k))
    return out


def add_membership_rows(bld: sdp.ProgramBuilder, j_block: int, d_in: int, d_out: int,
                        cls: OpClass | str) -> None:
    n = d_in * d_out
    dtype = complex if bld.complex_ else float
    s = 1.0 / math.sqrt(2.0)
    for a, b in forbidden_entries(d_in, d_out, cls):
        e = np.zeros((n, n), dtype=dtype)
        e[a, b] = e[b, a] = s
        bld.add_row({j_block: e}, 0.0)
        if bld.complex_:
            e = np.zeros((n, n), dtype=complex)
            e[a, b] = 1j * s
            e[b, a] = -1j * s
            bld.add_row({j_block: e}, 0.0)


def action_adjoint(sigma: np.ndarray) -> sdp.Adjoint:
    """Adjoint of ``J -> tr_A[J (sigma^T (x) 1)]``: ``B -> sigma^T (x) B``."""
    st = np.asarray(sigma).T
    return lambda b: np.kron(st, b)


def marginal_adjoint(d_out: int) -> sdp.Adjoint:
    """Adjoint of ``J -> tr_B J``: ``B -> B (x) 1``."""
    eye = np.eye(d_out)
    return lambda b: np.kron(b, eye)


def add_kernel_row(bld, j, sigma, outputs):
    """Redundant row ``<sigma^T (x) P, J> = 0``, ``P`` the projector onto the
    common kernel of every possible output.

    It follows from the action constraint but, unlike the individual action
    rows, has a semidefinite coefficient, which lets the solver restrict ``J``
    to the face it actually lives on.
    """
    total = sum(outputs)
    w, u = np.linalg.eigh(0.5 * (total + total.conj().T))
    ker = u[:, w <= KERNEL_TOL * max(1.0, w[-1])]
    if ker.shape[1] == 0:
        return
    proj = ker @ ker.conj().T
    bld.add_row({j: np.kron(np.asarray(sigma).T, proj)}, 0.0)


def exact_choi_program(rho: np.ndarray, target: np.ndarray, cls: OpClass | str) -> sdp.ConicProgram:
    rho = hermitian(rho)
    target = hermitian(target)
    d, d_out = rho.shape[0], target.shape[0]
    bld = _builder_for(rho, target)
    j = bld.psd(d * d_out, "J")
    t = bld.psd(d, "1 - tr_B J")
    p = bld.nonneg(1, "p")
    bld.add_matrix_equality({
        j: action_adjoint(rho),
        p: lambda b: np.array([-float(np.real(np.sum(target.conj() * b)))]),
    }, np.zeros((d_out, d_out)))
    bld.add_matrix_equality({j: marginal_adjoint(d_out), t: _identity}, np.eye(d))
    add_membership_rows(bld, j, d, d_out, cls)
    add_kernel_row(bld, j, rho, [target])
    bld.maximize({p: np.array([1.0])})
    return bld.build()


def p_exact_choi(rho: np.ndarray, target: np.ndarray, cls: OpClass | str, *, gap_tol=1e-8,
                 feas_tol=1e-8, max_iter=100) -> DistillationResult:
    """``max p`` such that some trace non-increasing ``E`` in the class maps
    ``rho`` to ``p * target`` exactly."""
    cls = OpClass(cls)
    t0 = time.perf_counter()
    program = exact_choi_program(rho, target, cls)
    sol = _solve_or_raise(program, **_solver_opts(gap_tol, feas_tol, max_iter))
    raw = sol.primal_value
    return DistillationResult(_clamp(raw), raw, cls, Route.CHOI, sol.gap, sol.status.value, None, sol,
                              program, wall_time_ms=1e3 * (time.perf_counter() - t0))


def p_choi(inst: DistillationInstance, cls: OpClass | str, **kw) -> DistillationResult:
    """Choi route for an instance, via the smoothed target."""
    if inst.trivial:
        return _trivial_result(inst, OpClass(cls), Route.CHOI)
    res = p_exact_choi(inst.rho, smoothed_target(inst.m, inst.eps), cls, **kw)
    res.instance = inst
    return res


# --------------------------------------------------------------------------
# protocols
# --------------------------------------------------------------------------

def _feasibility_violations(inst, G, C, tol):
    m, eps, rho = inst.m, float(inst.eps), inst.rho
    d = inst.d
    checks = {
        "C >= 0": max(0.0, -np.linalg.eigvalsh(C)[0]),
        "G - C >= 0": max(0.0, -np.linalg.eigvalsh(G - C)[0]),
        "G <= 1": max(0.0, np.linalg.eigvalsh(G)[-1] - 1.0),
        "Delta(G) = m Delta(C)": float(np.max(np.abs(np.diag(G) - m * np.diag(C)))),
        "tr C rho >= (1-eps) tr G rho": max(0.0, (1 - eps) * np.trace(G @ rho).real - np.trace(C @ rho).real),
    }
    return {k: v for k, v in checks.items() if v > tol}, d


def extract_protocol(inst: DistillationInstance, G: np.ndarray, C: np.ndarray,
                     tol: float = 1e-6) -> ChoiMatrix:
    """Success-branch operation ``J = C'^T (x) Psi_m + D^T (x) (1 - Psi_m)``.

    ``D = (G - C') / (m - 1)``. ``C'`` is ``C`` mixed with ``G / m`` so that the
    fidelity row holds with equality; the output on ``rho`` is then exactly
    ``tr(G rho) * Psi_m^eps``.
    """
    G = hermitian(G, tol=1e-6)
    C = hermitian(C, tol=1e-6)
    bad, d = _feasibility_violations(inst, G, C, tol)
    if bad:
        listing = ", ".join(f"{k} (violation {v:.2e})" for k, v in bad.items())
        raise DomainError(f"(G, C) is not feasible: {listing}")
    m, eps, rho = inst.m, float(inst.eps), inst.rho
    g = np.trace(G @ rho).real
    c = np.trace(C @ rho).real
    want = (1 - eps) * g
    t = 1.0
    if c - g / m > 1e-15:
        t = min(1.0, max(0.0, (want - g / m) / (c - g / m)))
    C2 = t * C + (1 - t) * G / m
    D = (G - C2) / (m - 1)
    psi = max_coherent_dm(m)
    J = np.kron(C2.T, psi) + np.kron(D.T, np.eye(m) - psi)
    return ChoiMatrix(d, m, J)


def verify_protocol(choi: ChoiMatrix, cls: OpClass | str, rho: np.ndarray, expected_p: float,
                    expected_target: np.ndarray, tol: float = 1e-6,
                    trace_preserving: bool = False) -> ProtocolReport:
    """Check a Choi matrix from scratch: positivity, trace condition, class
    membership and the action on ``rho``. Reports the largest violation of each.
    """
    cls = OpClass(cls)
    J = np.asarray(choi.J)
    d_in, d_out = choi.d_in, choi.d_out
    herm = float(np.max(np.abs(J - J.conj().T)))
    psd = max(herm, -float(np.linalg.eigvalsh(0.5 * (J + J.conj().T))[0]), 0.0)
    marg = partial_trace(J, [d_in, d_out], keep=0)
    if trace_preserving:
        trace = float(np.max(np.abs(marg - np.eye(d_in))))
    else:
        trace = max(0.0, float(np.linalg.eigvalsh(0.5 * (marg + marg.conj().T))[-1]) - 1.0)
    membership = 0.0
    for i in range(d_in):
        for k in range(d_in):
            e = np.zeros((d_in, d_in))
            e[i, k] = 1.0
            out = apply_choi(J, e, d_in, d_out)
            if i == k:
                membership = max(membership, float(np.max(np.abs(out - dephase(out)), initial=0.0)))
            elif cls is OpClass.DIO:
                membership = max(membership, float(np.max(np.abs(np.diag(out)), initial=0.0)))
    action = float(np.max(np.abs(apply_choi(J, rho, d_in, d_out) - expected_p * np.asarray(expected_target))))
    return ProtocolReport(psd, trace, membership, action, tol, {"hermiticity": herm})


def protocol_for(result: DistillationResult) -> tuple[ChoiMatrix, ProtocolReport]:
    """Extract and verify the operation behind a compact-primal result."""
    if result.route is not Route.COMPACT_PRIMAL or result.G is None:
        raise DomainError("protocol extraction needs a compact-primal result")
    inst = result.instance
    choi = extract_protocol(inst, result.G, result.C)
    p = float(np.trace(result.G @ inst.rho).real)
    report = verify_protocol(choi, result.op_class, inst.rho, p, smoothed_target(inst.m, inst.eps))
    return choi, report
