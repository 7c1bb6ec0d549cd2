"""Catalysis-assisted distillation.

A channel ``Pi`` acts on ``rho (x) gamma`` and must output

    |0><0| (x) Psi_m^eps (x) gamma_0  with weight p
    |1><1| (x) 1/m       (x) gamma_1  with weight 1 - p

with both returned catalysts close to ``gamma``. Output registers are ordered
flag, target, catalyst. Two programs are provided: one for a maximally
coherent catalyst with ``gamma_0 = gamma_1 = Psi_k^delta`` fixed, and one for a
general pure catalyst where ``V = p gamma_0`` and ``W = (1 - p) gamma_1`` are
variables.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import sdp
from .distill import (OpClass, _solve_or_raise, action_adjoint, add_kernel_row, add_membership_rows,
                      marginal_adjoint, p_dio, p_mio)
from .errors import DomainError, ResourceError, SolverError
from .linalg import hermitian, is_density, is_real, projector, pure_state, tensor
from .states import DistillationInstance, max_coherent, mixture, paper_state, smoothed_target

MAX_CHOI_SIDE = 64


@dataclass(frozen=True)
class CatalysisInstance:
    rho: np.ndarray
    catalyst: np.ndarray
    m: int
    eps: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        rho = hermitian(self.rho)
        if not is_density(rho):
            raise DomainError("rho must be positive semidefinite with unit trace")
        gamma = pure_state(self.catalyst)
        if gamma.size < 2:
            raise DomainError("catalyst dimension must be at least 2")
        if int(self.m) != self.m or self.m < 2:
            raise DomainError(f"target dimension must be an integer >= 2, got {self.m}")
        for name in ("eps", "delta"):
            v = getattr(self, name)
            if not 0 <= v < 1:
                raise DomainError(f"{name} must lie in [0, 1), got {v}")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "catalyst", gamma)
        object.__setattr__(self, "m", int(self.m))

    @property
    def d(self) -> int:
        return self.rho.shape[0]

    @property
    def k(self) -> int:
        return self.catalyst.size

    @property
    def choi_side(self) -> int:
        return self.d * self.k * 2 * self.m * self.k

    def distillation_instance(self) -> DistillationInstance:
        return DistillationInstance(self.rho, self.m, self.eps)


@dataclass
class CatalysisResult:
    probability: float
    unassisted: float
    gap: float
    status: str
    op_class: OpClass = OpClass.DIO
    solution: sdp.ConicSolution | None = None
    program: sdp.ConicProgram | None = None
    wall_time_ms: float = 0.0

    @property
    def enhancement_ratio(self) -> float:
        """``(probability - unassisted) / unassisted``; NaN when unassisted is 0."""
        if self.unassisted <= 0:
            return math.nan
        return (self.probability - self.unassisted) / self.unassisted


def _check_size(inst: CatalysisInstance) -> None:
    if inst.choi_side > MAX_CHOI_SIDE:
        raise ResourceError(f"Choi matrix side {inst.choi_side} exceeds the limit of {MAX_CHOI_SIDE}")


def _is_max_coherent(gamma: np.ndarray) -> bool:
    return bool(np.allclose(gamma, max_coherent(gamma.size), atol=1e-9))


def _flag(i: int) -> np.ndarray:
    e = np.zeros((2, 2))
    e[i, i] = 1.0
    return e


def _unassisted(inst: CatalysisInstance, cls: OpClass) -> float:
    base = inst.distillation_instance()
    return (p_dio(base) if cls is OpClass.DIO else p_mio(base)).probability


def catalytic_mc_program(inst: CatalysisInstance, cls: OpClass | str = OpClass.DIO) -> sdp.ConicProgram:
    """Program over ``(J, p)`` with the returned catalysts fixed to ``Psi_k^delta``."""
    cls = OpClass(cls)
    d, k, m = inst.d, inst.k, inst.m
    sigma = np.kron(inst.rho, projector(inst.catalyst))
    cat = smoothed_target(k, inst.delta)
    a = tensor(_flag(0), smoothed_target(m, inst.eps), cat)
    b = tensor(_flag(1), np.eye(m) / m, cat)
    d_in, d_out = d * k, 2 * m * k
    bld = sdp.ProgramBuilder(complex_=not is_real(sigma))
    j = bld.psd(d_in * d_out, "J")
    p = bld.nonneg(1, "p")
    diff = a - b
    bld.add_matrix_equality({
        j: action_adjoint(sigma),
        p: lambda x: np.array([-float(np.real(np.sum(diff.conj() * x)))]),
    }, b)
    bld.add_matrix_equality({j: marginal_adjoint(d_out)}, np.eye(d_in))
    add_membership_rows(bld, j, d_in, d_out, cls)
    add_kernel_row(bld, j, sigma, [a, b])
    bld.maximize({p: np.array([1.0])})
    return bld.build()


def catalytic_pure_program(inst: CatalysisInstance, cls: OpClass | str = OpClass.DIO) -> sdp.ConicProgram:
    """Program over ``(J, V, W)`` maximising ``tr V`` for a general pure catalyst."""
    cls = OpClass(cls)
    d, k, m, delta = inst.d, inst.k, inst.m, inst.delta
    gamma = projector(inst.catalyst)
    sigma = np.kron(inst.rho, gamma)
    a0 = np.kron(_flag(0), smoothed_target(m, inst.eps))
    b0 = np.kron(_flag(1), np.eye(m) / m)
    d_in, d_out = d * k, 2 * m * k
    bld = sdp.ProgramBuilder(complex_=not is_real(sigma))
    j = bld.psd(d_in * d_out, "J")
    v = bld.psd(k, "V")
    w = bld.psd(k, "W")
    sv = bld.nonneg(1, "fidelity slack V")
    sw = bld.nonneg(1, "fidelity slack W")

    def partial_against(op):
        # adjoint of X -> op (x) X, i.e. tr_1[(op^dagger (x) 1) B]
        def adj(x):
            t = x.reshape(2 * m, k, 2 * m, k)
            return np.einsum("ij,iajb->ab", op.conj(), t)
        return adj

    bld.add_matrix_equality({
        j: action_adjoint(sigma),
        v: lambda x: -partial_against(a0)(x),
        w: lambda x: -partial_against(b0)(x),
    }, np.zeros((d_out, d_out)))
    bld.add_matrix_equality({j: marginal_adjoint(d_out)}, np.eye(d_in))
    add_membership_rows(bld, j, d_in, d_out, cls)
    bld.add_row({v: gamma - (1 - delta) * np.eye(k), sv: np.array([-1.0])}, 0.0)
    bld.add_row({w: gamma - (1 - delta) * np.eye(k), sw: np.array([-1.0])}, 0.0)
    if delta == 0:
        add_kernel_row(bld, j, sigma, [np.kron(a0, gamma), np.kron(b0, gamma)])
    bld.maximize({v: np.eye(k)})
    return bld.build()


def _run(inst, cls, builder, baseline, gap_tol, feas_tol, max_iter) -> CatalysisResult:
    cls = OpClass(cls)
    _check_size(inst)
    t0 = time.perf_counter()
    program = builder(inst, cls)
    sol = _solve_or_raise(program, gap_tol=gap_tol, feas_tol=feas_tol, max_iter=max_iter)
    unassisted = _unassisted(inst, cls) if baseline is None else float(baseline)
    p = min(1.0, max(0.0, sol.primal_value))
    return CatalysisResult(p, unassisted, sol.gap, sol.status.value, cls, sol, program,
                           1e3 * (time.perf_counter() - t0))


def p_dio_catalytic_mc(inst: CatalysisInstance, cls: OpClass | str = OpClass.DIO, *,
                       unassisted: float | None = None, gap_tol=1e-8, feas_tol=1e-8,
                       max_iter=100) -> CatalysisResult:
    """Assisted probability with a maximally coherent catalyst returned as ``Psi_k^delta``.

    ``unassisted`` may be passed to skip recomputing the baseline.
    """
    if not _is_max_coherent(inst.catalyst):
        raise DomainError("this program needs a maximally coherent catalyst")
    return _run(inst, cls, catalytic_mc_program, unassisted, gap_tol, feas_tol, max_iter)


def p_dio_catalytic_pure(inst: CatalysisInstance, cls: OpClass | str = OpClass.DIO, *,
                         unassisted: float | None = None, gap_tol=1e-8, feas_tol=1e-8,
                         max_iter=100) -> CatalysisResult:
    """Assisted probability for a pure catalyst returned with fidelity ``>= 1 - delta``."""
    return _run(inst, cls, catalytic_pure_program, unassisted, gap_tol, feas_tol, max_iter)


class Family(str, enum.Enum):
    V = "v"
    U = "u"


FAMILY_RANGES = {Family.V: (0.1, 0.5), Family.U: (0.2, 0.7)}


def family_state(family: Family | str, q: float) -> np.ndarray:
    """``q |x1><x1| + (1 - q) |x2><x2|`` for the ``v`` or ``u`` pair of two-qubit vectors."""
    family = Family(family)
    x = family.value
    return mixture(q, paper_state(f"{x}1"), paper_state(f"{x}2"))


SWEEP_HEADER = ("family", "q", "delta", "eps", "m", "p_assisted", "p_unassisted", "ratio", "gap", "status")


def catalysis_sweep(family: Family | str, q_grid, delta_grid, m: int = 2, eps: float = 0.01,
                    catalyst_dim: int = 2, workers: int = 1) -> list[dict]:
    """Assisted vs unassisted probability over a ``(q, delta)`` grid.

    One dict per cell, in grid order, with the CSV columns plus ``result`` (the
    :class:`CatalysisResult`, or None). Uses the maximally coherent catalyst
    program. Cells that fail to solve are
    recorded with a non-Optimal status and NaN values; the sweep continues.
    """
    family = Family(family)
    lo, hi = FAMILY_RANGES[family]
    if any(q < lo - 1e-12 or q > hi + 1e-12 for q in q_grid):
        warnings.warn(f"q outside the studied range [{lo}, {hi}] for family {family.value}", stacklevel=2)
    gamma = max_coherent(catalyst_dim)
    cells = [(q, dl) for q in q_grid for dl in delta_grid]

    baselines = {}
    for q in q_grid:
        try:
            baselines[q] = p_dio(DistillationInstance(family_state(family, q), m, eps)).probability
        except SolverError:
            baselines[q] = math.nan

    def run(cell):
        q, dl = cell
        row = {"family": family.value, "q": q, "delta": dl, "eps": eps, "m": m,
               "p_unassisted": baselines[q], "result": None}
        try:
            inst = CatalysisInstance(family_state(family, q), gamma, m, eps, dl)
            res = p_dio_catalytic_mc(inst, unassisted=baselines[q])
            row.update(p_assisted=res.probability, ratio=res.enhancement_ratio, gap=res.gap,
                       status=res.status, result=res)
        except SolverError as exc:
            row.update(p_assisted=math.nan, ratio=math.nan, gap=math.nan,
                       status=exc.solution.status.value if exc.solution is not None else "Error")
        return row

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, cells))
    return [run(c) for c in cells]


def sweep_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row[k] for k in SWEEP_HEADER})
    return buf.getvalue()
