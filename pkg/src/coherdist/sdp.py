"""Small dense semidefinite programs.

A :class:`ConicProgram` is a standard-form problem

    maximize    sum_b <c_b, X_b>
    subject to  sum_b <A_b[i], X_b> = b_i        i = 0..m-1
                X_b PSD (Hermitian, side n)  or  X_b >= 0 (vector, length k)

with the Lagrange dual

    minimize    b . y
    subject to  sum_i y_i A_b[i] - c_b  in the cone of block b.

:func:`solve` runs an infeasible primal-dual path-following method with
Nesterov-Todd scaling and Mehrotra's predictor-corrector step. Complex Hermitian
blocks are embedded into real symmetric blocks of twice the side before solving
and mapped back afterwards.

:class:`ProgramBuilder` is a thin modelling layer used by the distillation and
catalysis modules; inequalities are written as equalities with explicit slack
blocks.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.linalg

from .errors import DomainError

PSD = "psd"
NONNEG = "nonneg"

STEP_FRACTION = 0.98
ZERO_ROW_TOL = 1e-13
REFINE_STEPS = 3
POLISH_KEEP = (1e-6, 1e-8, 1e-4)

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    MAX_ITERATIONS = "MaxIterations"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class Block:
    kind: str
    size: int
    name: str = ""

    @property
    def is_psd(self) -> bool:
        return self.kind == PSD


@dataclass(frozen=True)
class ConicProgram:
    """Standard-form conic program; see the module docstring for the layout.

    ``A[b]`` has shape ``(m, n, n)`` for a PSD block and ``(m, k)`` for a
    nonnegative block. PSD coefficient matrices must be Hermitian; a block is
    complex iff any of its data is complex.
    """

    blocks: tuple[Block, ...]
    c: tuple[np.ndarray, ...]
    A: tuple[np.ndarray, ...]
    b: np.ndarray

    @property
    def num_constraints(self) -> int:
        return int(self.b.shape[0])

    def is_complex(self) -> bool:
        return any(np.iscomplexobj(x) for x in (*self.c, *self.A))

    def apply(self, X) -> np.ndarray:
        """Constraint map ``A(X)``."""
        out = np.zeros(self.num_constraints)
        for blk, a, x in zip(self.blocks, self.A, X):
            if blk.is_psd:
                out += np.einsum("kij,ji->k", a, x).real
            else:
                out += a @ x
        return out

    def adjoint(self, y) -> list[np.ndarray]:
        """``A^T y`` per block."""
        return [np.tensordot(y, a, axes=(0, 0)) for a in self.A]

    def objective(self, X) -> float:
        total = 0.0
        for blk, c, x in zip(self.blocks, self.c, X):
            total += float(np.sum(c.conj() * x).real) if blk.is_psd else float(c @ x)
        return total

    def to_json(self) -> str:
        """Debug dump: blocks, dense row-major coefficient lists, objective, b.

        Complex entries are written as ``[re, im]`` pairs.
        """

        def enc(x):
            x = np.asarray(x)
            if np.iscomplexobj(x):
                return np.stack([x.real, x.imag], axis=-1).tolist()
            return x.tolist()

        doc = {
            "blocks": [{"kind": b.kind, "size": b.size, "name": b.name} for b in self.blocks],
            "objective": [enc(c) for c in self.c],
            "constraints": [enc(a) for a in self.A],
            "b": self.b.tolist(),
            "sense": "maximize",
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "ConicProgram":
        doc = json.loads(text)
        blocks = tuple(Block(d["kind"], d["size"], d.get("name", "")) for d in doc["blocks"])
        c, A = [], []
        for blk, cj, aj in zip(blocks, doc["objective"], doc["constraints"]):
            cj, aj = np.asarray(cj, dtype=float), np.asarray(aj, dtype=float)
            want = 2 if blk.is_psd else 1
            if cj.ndim == want + 1:
                cj = cj[..., 0] + 1j * cj[..., 1]
                aj = aj[..., 0] + 1j * aj[..., 1]
            c.append(cj)
            A.append(aj.reshape((len(doc["b"]),) + cj.shape))
        return cls(blocks, tuple(c), tuple(A), np.asarray(doc["b"], dtype=float))


@dataclass
class ConicSolution:
    status: Status
    primal_value: float
    dual_value: float
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    gap: float
    iterations: int
    primal_infeasibility: float = math.nan
    dual_infeasibility: float = math.nan
    message: str = ""
    face_rows: list[int] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


@dataclass(frozen=True)
class SolverOptions:
    gap_tol: float = 1e-8
    feas_tol: float = 1e-8
    max_iter: int = 100


# --------------------------------------------------------------------------
# Hermitian -> real symmetric embedding
# --------------------------------------------------------------------------

def embed_matrix(h: np.ndarray) -> np.ndarray:
    """``[[Re H, -Im H], [Im H, Re H]]``."""
    h = np.asarray(h)
    re, im = h.real, h.imag if np.iscomplexobj(h) else np.zeros_like(h.real)
    return np.block([[re, -im], [im, re]])


def unembed_matrix(y: np.ndarray) -> np.ndarray:
    """Inverse of :func:`embed_matrix`, averaged so any real symmetric input maps
    to a Hermitian matrix with the same inner products (up to the factor 2)."""
    n = y.shape[0] // 2
    y11, y12, y21, y22 = y[:n, :n], y[:n, n:], y[n:, :n], y[n:, n:]
    return 0.5 * (y11 + y22) + 0.5j * (y21 - y12)


def embed_hermitian(program: ConicProgram) -> ConicProgram:
    """Replace every complex PSD block by a real symmetric block of twice the side.

    Objective and constraint coefficients are embedded and halved, so
    ``<embed(A)/2, embed(X)> = <A, X>`` and optimal values are unchanged. Real
    blocks pass through untouched.
    """
    blocks, cs, As = [], [], []
    for blk, c, a in zip(program.blocks, program.c, program.A):
        complex_block = blk.is_psd and (np.iscomplexobj(c) and np.any(c.imag) or
                                        np.iscomplexobj(a) and np.any(a.imag))
        if not complex_block:
            blocks.append(blk)
            cs.append(np.asarray(c.real if np.iscomplexobj(c) else c, dtype=float))
            As.append(np.asarray(a.real if np.iscomplexobj(a) else a, dtype=float))
            continue
        n = blk.size
        blocks.append(Block(PSD, 2 * n, blk.name))
        cs.append(0.5 * embed_matrix(c))
        ea = np.empty((a.shape[0], 2 * n, 2 * n))
        ea[:, :n, :n] = a.real
        ea[:, n:, n:] = a.real
        ea[:, :n, n:] = -a.imag
        ea[:, n:, :n] = a.imag
        As.append(0.5 * ea)
    return ConicProgram(tuple(blocks), tuple(cs), tuple(As), program.b.copy())


def _embedded_flags(program: ConicProgram, embedded: ConicProgram) -> list[bool]:
    return [e.size != o.size for o, e in zip(program.blocks, embedded.blocks)]


# --------------------------------------------------------------------------
# Presolve
# --------------------------------------------------------------------------

@dataclass
class _Presolved:
    program: ConicProgram
    rows: np.ndarray          # kept original row indices
    scale: np.ndarray         # row scale applied to kept rows
    message: str = ""
    inconsistent: bool = False


def _flat_rows(program: ConicProgram) -> np.ndarray:
    parts = [a.reshape(a.shape[0], -1) for a in program.A]
    return np.concatenate(parts, axis=1) if parts else np.zeros((program.num_constraints, 0))


def _presolve(program: ConicProgram) -> _Presolved:
    """Drop zero and linearly dependent rows, normalise the rest.

    Dependent rows whose right-hand side is inconsistent are reported instead
    of dropped.
    """
    rows = _flat_rows(program)
    b = program.b
    norms = np.linalg.norm(rows, axis=1)
    zero = norms < ZERO_ROW_TOL
    if np.any(np.abs(b[zero]) > ZERO_ROW_TOL):
        bad = np.flatnonzero(zero & (np.abs(b) > ZERO_ROW_TOL))
        return _Presolved(program, np.arange(len(b)), np.ones(len(b)),
                          f"inconsistent zero rows {bad.tolist()}", True)
    live = np.flatnonzero(~zero)
    scaled = rows[live] / norms[live, None]
    bs = b[live] / norms[live]
    keep = live
    if len(live):
        _, r, piv = scipy.linalg.qr(scaled.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(r))
        rank = int(np.sum(diag > 1e-10 * max(1.0, diag[0])))
        if rank < len(live):
            chosen = np.sort(piv[:rank])
            dropped = np.setdiff1d(np.arange(len(live)), chosen)
            coef, *_ = np.linalg.lstsq(scaled[chosen].T, scaled[dropped].T, rcond=None)
            resid = np.abs(coef.T @ bs[chosen] - bs[dropped])
            if np.any(resid > 1e-8 * (1 + np.max(np.abs(bs)))):
                return _Presolved(program, np.arange(len(b)), np.ones(len(b)),
                                  f"inconsistent dependent rows {live[dropped].tolist()}", True)
            keep = live[chosen]
    scale = 1.0 / norms[keep]
    new_A = tuple(a[keep] * scale.reshape((-1,) + (1,) * (a.ndim - 1)) for a in program.A)
    reduced = ConicProgram(program.blocks, program.c, new_A, b[keep] * scale)
    return _Presolved(reduced, keep, scale)


# --------------------------------------------------------------------------
# Facial reduction
# --------------------------------------------------------------------------

FACE_TOL = 1e-10


@dataclass
class _Face:
    program: ConicProgram          # reduced program (same rows, fewer/smaller blocks)
    kept_blocks: list[int]         # original block index of each reduced block
    bases: list                    # per original block: V (psd), index array (nonneg) or None if gone
    rows: list[int]                # exposing rows, in the order they were applied


def _full_bases(program: ConicProgram) -> list:
    return [np.eye(b.size) if b.is_psd else np.arange(b.size) for b in program.blocks]


def _face_tol(program: ConicProgram, i: int) -> float:
    scale = max([float(np.max(np.abs(a[i]))) for a in program.A if a[i].size] + [1.0])
    return FACE_TOL * scale


def _restrict(program: ConicProgram, i: int, bases: list) -> tuple[list, bool] | None:
    """Apply row ``i`` as an exposing row: ``b_i = 0`` and every block
    coefficient, restricted to the current face, semidefinite with one common
    sign. Returns the new bases and whether anything was cut, or None if the
    row does not qualify.
    """
    if abs(program.b[i]) > FACE_TOL:
        return None
    tol = _face_tol(program, i)
    sign = 0
    restricted = []
    for blk, a, basis in zip(program.blocks, program.A, bases):
        coeff = a[i]
        if blk.is_psd:
            r = _sym(basis.T @ coeff @ basis)
            if r.size == 0 or np.max(np.abs(r)) <= tol:
                restricted.append(None)
                continue
            diag = np.diag(r)
            if np.any(diag > tol) and np.any(diag < -tol):
                return None
            w, u = np.linalg.eigh(r)
            s = 1 if w[0] >= -tol else -1 if w[-1] <= tol else 0
            restricted.append((w, u))
        else:
            v = coeff[basis]
            if v.size == 0 or np.max(np.abs(v)) <= tol:
                restricted.append(None)
                continue
            s = 1 if np.all(v >= -tol) else -1 if np.all(v <= tol) else 0
            restricted.append(v)
        if s == 0 or (sign and s != sign):
            return None
        sign = s
    if sign == 0:
        return None
    new, cut = [], False
    for blk, basis, r in zip(program.blocks, bases, restricted):
        if r is None:
            new.append(basis)
        elif blk.is_psd:
            w, u = r
            null = np.abs(w) <= tol
            new.append(basis @ u[:, null])
            cut = cut or not np.all(null)
        else:
            keep = np.abs(r) <= tol
            new.append(basis[keep])
            cut = cut or not np.all(keep)
    return new, cut


def face_from_rows(program: ConicProgram, rows) -> list | None:
    """Recompute the face exposed by ``rows`` (applied in order) of a real
    program; None if some row is not a valid exposing row."""
    bases = _full_bases(program)
    for i in rows:
        out = _restrict(program, i, bases)
        if out is None:
            return None
        bases = out[0]
    return bases


def _facial_reduction(program: ConicProgram) -> _Face:
    """Restrict blocks to the face cut out by exposing rows.

    An exposing row forces every block onto the kernel of its coefficient, so
    a program without interior (e.g. a fidelity row that can only hold with
    equality) becomes an equivalent one with interior. Repeats until no row
    cuts further. Expects real data.
    """
    blocks, b = program.blocks, program.b
    bases = _full_bases(program)
    used: list[int] = []
    changed = True
    while changed:
        changed = False
        for i in range(len(b)):
            if i in used:
                continue
            out = _restrict(program, i, bases)
            if out is None or not out[1]:
                continue
            bases = out[0]
            used.append(i)
            changed = True
    kept, new_blocks, cs, As = [], [], [], []
    for k, (blk, basis, c, a) in enumerate(zip(blocks, bases, program.c, program.A)):
        size = basis.shape[1] if blk.is_psd else len(basis)
        if size == 0:
            continue
        kept.append(k)
        new_blocks.append(Block(blk.kind, size, blk.name))
        if blk.is_psd:
            cs.append(_sym(basis.T @ c @ basis))
            ar = np.matmul(np.matmul(basis.T, a), basis)
            As.append(0.5 * (ar + ar.transpose(0, 2, 1)))
        else:
            cs.append(c[basis])
            As.append(a[:, basis])
    reduced = ConicProgram(tuple(new_blocks), tuple(cs), tuple(As), b.copy())
    bases = [bases[k] if k in kept else None for k in range(len(blocks))]
    return _Face(reduced, kept, bases, used)


def _lift(face: _Face, program: ConicProgram, X_red) -> list[np.ndarray]:
    out = []
    red = dict(zip(face.kept_blocks, X_red))
    for k, blk in enumerate(program.blocks):
        basis = face.bases[k]
        if blk.is_psd:
            x = np.zeros((blk.size, blk.size))
            if basis is not None:
                x = basis @ red[k] @ basis.T
        else:
            x = np.zeros(blk.size)
            if basis is not None:
                x[basis] = red[k]
        out.append(x)
    return out


# --------------------------------------------------------------------------
# Interior point method (real data only)
# --------------------------------------------------------------------------

def _sym(a):
    return 0.5 * (a + a.T)


def _chol(x):
    try:
        return np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        w, u = np.linalg.eigh(_sym(x))
        w = np.maximum(w, 1e-300)
        _, r = np.linalg.qr((u * np.sqrt(w)).T)
        return r.T


def _max_step(x, dx, chol_x=None) -> float:
    """Largest alpha with x + alpha dx in the cone (inf if unbounded)."""
    if x.ndim == 1:
        neg = dx < 0
        return float(np.min(-x[neg] / dx[neg])) if np.any(neg) else math.inf
    lx = chol_x if chol_x is not None else _chol(x)
    t = scipy.linalg.solve_triangular(lx, dx, lower=True)
    t = scipy.linalg.solve_triangular(lx, t.T, lower=True)
    lam = np.linalg.eigvalsh(_sym(t))[0]
    return -1.0 / lam if lam < 0 else math.inf


class _Scaling:
    """Nesterov-Todd scaling point for one block.

    For PSD blocks ``W = G G^T`` with ``G^{-1} X G^{-T} = G^T S G = diag(v)``.
    """

    def __init__(self, x, s):
        if x.ndim == 1:
            self.psd = False
            self.v = np.sqrt(x * s)
            self.g = np.sqrt(x / s)
            self.w = x / s
            return
        self.psd = True
        lx = _chol(x)
        m = lx.T @ s @ lx
        d, u = np.linalg.eigh(_sym(m))
        d = np.maximum(d, 1e-300)
        self.v = np.sqrt(d)
        self.g = (lx @ u) * d ** -0.25
        self.ginv = (u * d ** 0.25).T @ scipy.linalg.solve_triangular(lx, np.eye(len(d)), lower=True)
        self.w = self.g @ self.g.T
        self.lx = lx

    def scaled_x(self, dx):
        if not self.psd:
            return dx / self.g
        return self.ginv @ dx @ self.ginv.T

    def scaled_s(self, ds):
        if not self.psd:
            return ds * self.g
        return self.g.T @ ds @ self.g

    def lyap_inv(self, r):
        """Solve ``(V Z + Z V)/2 = R`` with ``V = diag(v)``."""
        if not self.psd:
            return r / self.v
        return 2.0 * r / (self.v[:, None] + self.v[None, :])

    def unscale_x(self, z):
        if not self.psd:
            return z * self.g
        return self.g @ z @ self.g.T

    def apply_w(self, ds):
        if not self.psd:
            return self.w * ds
        return self.w @ ds @ self.w


def _inner(x, s) -> float:
    return float(np.sum(x * s))


def _split_pairs(program: ConicProgram) -> list[tuple[int, int, int]]:
    """Entries ``(block, i, j)`` of nonnegative blocks whose columns are exact negatives."""
    out = []
    for k, (blk, a, c) in enumerate(zip(program.blocks, program.A, program.c)):
        if blk.is_psd or blk.size < 2:
            continue
        cols = np.vstack([a, c[None, :]]).T + 0.0     # + 0.0 folds -0.0 into 0.0
        seen = {}
        for i, col in enumerate(cols):
            if not np.any(col):
                continue
            key = (0.0 - col).tobytes()
            if key in seen:
                out.append((k, seen.pop(key), i))
            else:
                seen[col.tobytes()] = i
    return out


@np.errstate(over="raise", invalid="raise")
def _ipm(program: ConicProgram, opts: SolverOptions) -> ConicSolution:
    blocks = program.blocks
    A = program.A
    b = program.b
    C = [-c for c in program.c]        # internal form: minimize <C, X>
    m = len(b)
    nu = sum(blk.size for blk in blocks)

    tau = 1.0 + (float(np.max(np.abs(b))) if m else 0.0)
    X = [tau * (np.eye(blk.size) if blk.is_psd else np.ones(blk.size)) for blk in blocks]
    S = [tau * (np.eye(blk.size) if blk.is_psd else np.ones(blk.size)) for blk in blocks]
    y = np.zeros(m)

    norm_b = float(np.linalg.norm(b))
    norm_c = math.sqrt(sum(float(np.sum(c * c)) for c in C))

    def A_op(Xs):
        out = np.zeros(m)
        for blk, a, x in zip(blocks, A, Xs):
            out += np.tensordot(a, x, axes=x.ndim) if blk.is_psd else a @ x
        return out

    def At_op(v):
        return [np.tensordot(v, a, axes=(0, 0)) for a in A]

    # A A^T through a QR factor of the unscaled rows, used to put each primal
    # direction back on A dX = rp after the Schur solve has lost accuracy
    a_fac = np.linalg.qr(np.concatenate([a.reshape(m, -1) for a in A], axis=1).T, mode="r")
    a_diag = np.abs(np.diag(a_fac))
    if len(a_diag) < m or a_diag.min() <= 1e-12 * a_diag.max():
        a_fac = None

    split = _split_pairs(program)

    def recenter(Xs, Ss, mu):
        # a free variable written as x+ - x- drifts off with both parts large;
        # lower each pair by a common amount, which leaves A(X) and <C, X> alone
        for k, i, j in split:
            x, s = Xs[k], Ss[k]
            t = 0.8 * min(x[i], x[j])
            if t > 0:
                x[i] -= t
                x[j] -= t

    def project(dX, scal):
        if a_fac is None:
            return dX
        resid = rp - A_op(dX)
        w = scipy.linalg.solve_triangular(
            a_fac, scipy.linalg.solve_triangular(a_fac, resid, trans="T", check_finite=False),
            check_finite=False)
        return [d + t for d, t in zip(dX, At_op(w))]

    def project_x(dX, scal):
        # least-norm in ||X^{-1/2} D X^{-1/2}||: D = X A^T(w) X
        resid = rp - A_op(dX)
        parts = []
        for blk, a, x, sc in zip(blocks, A, X, scal):
            if blk.is_psd:
                parts.append(np.matmul(np.matmul(sc.lx.T, a), sc.lx).reshape(m, -1))
            else:
                parts.append(a * x)
        r = np.linalg.qr(np.concatenate(parts, axis=1).T, mode="r")
        diag = np.abs(np.diag(r))
        if len(diag) < m or diag.min() <= 1e-13 * diag.max():
            return dX
        w = scipy.linalg.solve_triangular(
            r, scipy.linalg.solve_triangular(r, resid, trans="T", check_finite=False),
            check_finite=False)
        return [d + (x @ t @ x if t.ndim == 2 else x * x * t) for d, x, t in zip(dX, X, At_op(w))]

    status = Status.MAX_ITERATIONS
    message = ""
    best = None
    it = 0
    for it in range(opts.max_iter + 1):
        Ay = At_op(y)
        rp = b - A_op(X)
        Rd = [c - ay - s for c, ay, s in zip(C, Ay, S)]
        pobj = sum(_inner(c, x) for c, x in zip(C, X))
        dobj = float(b @ y)
        mu = sum(_inner(x, s) for x, s in zip(X, S)) / nu
        pinf = float(np.linalg.norm(rp)) / (1.0 + norm_b)
        dinf = math.sqrt(sum(float(np.sum(r * r)) for r in Rd)) / (1.0 + norm_c)
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        comp = mu * nu / (1.0 + abs(pobj) + abs(dobj))
        merit = max(pinf, dinf, gap, comp)
        log.debug("it %3d pobj %+.10e dobj %+.10e pinf %.1e dinf %.1e gap %.1e mu %.1e",
                  it, -pobj, -dobj, pinf, dinf, gap, mu)
        if best is None or merit < best[0]:
            best = (merit, [x.copy() for x in X], y.copy(), [s.copy() for s in S], it)
        if pinf <= opts.feas_tol and dinf <= opts.feas_tol and gap <= opts.gap_tol and comp <= opts.gap_tol:
            status = Status.OPTIMAL
            break
        if it == opts.max_iter:
            break

        try:
            scal = [_Scaling(x, s) for x, s in zip(X, S)]
            # Schur complement M = B B^T with rows B_i = G^T A_i G; factor B^T by QR
            # instead of forming M, which would square its condition number
            parts = []
            for blk, a, sc in zip(blocks, A, scal):
                if blk.is_psd:
                    parts.append(np.matmul(np.matmul(sc.g.T, a), sc.g).reshape(m, -1))
                else:
                    parts.append(a * sc.g)
            r_fac = np.linalg.qr(np.concatenate(parts, axis=1).T, mode="r")
            diag = np.abs(np.diag(r_fac))
            if len(diag) == m and diag.min() > 1e-13 * diag.max():
                solve_M = lambda r: scipy.linalg.solve_triangular(
                    r_fac, scipy.linalg.solve_triangular(r_fac, r, trans="T", check_finite=False),
                    check_finite=False)
            else:
                M = r_fac.T @ r_fac
                reg = 1e-14 * max(1.0, float(np.max(np.diag(M))))
                lu = scipy.linalg.lu_factor(M + reg * np.eye(m), check_finite=False)
                solve_M = lambda r: scipy.linalg.lu_solve(lu, r, check_finite=False)

            def direction(rv):
                # rv: per-block scaled complementarity right-hand side (already Lyapunov-inverted)
                rc = [sc.unscale_x(r) for sc, r in zip(scal, rv)]
                rhs = rp - A_op(rc) + A_op([sc.apply_w(r) for sc, r in zip(scal, Rd)])
                dy = solve_M(rhs)
                dS = [r - t for r, t in zip(Rd, At_op(dy))]
                dX = [r - sc.apply_w(ds) for r, sc, ds in zip(rc, scal, dS)]
                # iterative refinement on the primal equation
                for _ in range(REFINE_STEPS):
                    resid = rp - A_op(dX)
                    if np.linalg.norm(resid) <= 1e-15 * (1 + np.linalg.norm(rhs)):
                        break
                    dy = dy + solve_M(resid)
                    dS = [r - t for r, t in zip(Rd, At_op(dy))]
                    dX = [r - sc.apply_w(ds) for r, sc, ds in zip(rc, scal, dS)]
                dX = [_sym(d) if d.ndim == 2 else d for d in dX]
                dS = [_sym(d) if d.ndim == 2 else d for d in dS]
                return dX, dy, dS

            def steps(dX, dS):
                ap = min([_max_step(x, d, sc.lx if sc.psd else None)
                          for x, d, sc in zip(X, dX, scal)] + [math.inf])
                ad = min([_max_step(s, d) for s, d in zip(S, dS)] + [math.inf])
                return ap, ad

            def diag_or_vec(sc, vec):
                return np.diag(vec) if sc.psd else vec

            # predictor
            rv = [sc.lyap_inv(-diag_or_vec(sc, sc.v * sc.v)) for sc in scal]
            dXa, dya, dSa = direction(rv)
            apa, ada = steps(dXa, dSa)
            apa, ada = min(1.0, apa), min(1.0, ada)
            mu_aff = sum(_inner(x + apa * dx, s + ada * ds)
                         for x, dx, s, ds in zip(X, dXa, S, dSa)) / nu
            sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

            # corrector
            rv = []
            for sc, dx, ds in zip(scal, dXa, dSa):
                zx, zs = sc.scaled_x(dx), sc.scaled_s(ds)
                corr = 0.5 * (zx @ zs + zs @ zx) if sc.psd else zx * zs
                target = diag_or_vec(sc, sigma * mu - sc.v * sc.v) - corr
                rv.append(sc.lyap_inv(target))
            dX, dy, dS = direction(rv)
            if not all(np.all(np.isfinite(d)) for d in (*dX, dy, *dS)):
                raise FloatingPointError("non-finite search direction")
            ap, ad = steps(dX, dS)
            # the least-norm correction ignores the cone, so near a singular
            # block it can cost the whole step; the correction in the metric of
            # X moves small eigenvalues only relatively. Take the longest step
            # that does not let the primal residual grow
            floor = 0.1 * opts.feas_tol * (1.0 + norm_b)
            limit = max(float(np.linalg.norm(rp)), floor)
            options = []
            for proj in (project, project_x, None):
                cand = dX if proj is None else [_sym(d) if d.ndim == 2 else d for d in proj(dX, scal)]
                a = min(1.0, STEP_FRACTION * steps(cand, dS)[0])
                resid = float(np.linalg.norm(rp - a * A_op(cand)))
                options.append((resid > limit, -a if resid <= limit else resid, cand, a))
                if resid <= limit and a >= 0.5 * min(1.0, STEP_FRACTION * ap):
                    break
            _, _, dX, ap = min(options, key=lambda o: o[:2])
            ad = min(1.0, STEP_FRACTION * ad)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            status = Status.NUMERICAL_FAILURE
            message = f"linear algebra failure at iteration {it}: {exc}"
            break
        if not (np.isfinite(ap) and np.isfinite(ad)) or max(ap, ad) < 1e-12:
            status = Status.NUMERICAL_FAILURE
            message = f"stalled at iteration {it} (steps {ap:.2e}, {ad:.2e})"
            break

        X = [x + ap * d for x, d in zip(X, dX)]
        y = y + ad * dy
        S = [s + ad * d for s, d in zip(S, dS)]
        if split:
            recenter(X, S, sum(_inner(x, s) for x, s in zip(X, S)) / nu)

    if status is not Status.OPTIMAL and best is not None:
        _, X, y, S, _ = best
    pobj = sum(_inner(c, x) for c, x in zip(C, X))
    dobj = float(b @ y)
    Ay = At_op(y)
    rp = b - A_op(X)
    Rd = [c - ay - s for c, ay, s in zip(C, Ay, S)]
    pinf = float(np.linalg.norm(rp)) / (1.0 + norm_b)
    dinf = math.sqrt(sum(float(np.sum(r * r)) for r in Rd)) / (1.0 + norm_c)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
    return ConicSolution(status, -pobj, -dobj, X, y, S, gap, it, pinf, dinf, message)


def solve(program: ConicProgram, gap_tol: float = 1e-8, feas_tol: float = 1e-8,
          max_iter: int = 100) -> ConicSolution:
    """Solve ``program`` (a maximisation) and return the primal/dual pair.

    ``y`` is reported for the original constraint rows (zero on rows dropped as
    redundant), ``S`` is the dual slack ``A^T y - c`` per block. Deterministic:
    the start point is fixed and there is no randomness.

    If some rows expose a proper face of the cone (see :func:`check_certificate`)
    the program is first solved on that face; the result is kept if it
    certifies, otherwise the full program is solved. ``face_rows`` on the
    solution records which was used; ``S`` is then only positive on the face.
    """
    opts = SolverOptions(gap_tol, feas_tol, max_iter)
    if program.num_constraints < 1:
        raise DomainError("program has no constraints")
    embedded = embed_hermitian(program)
    flags = _embedded_flags(program, embedded)
    face = _facial_reduction(embedded)
    sol = None
    if face.rows:
        sol = _accept_certified(_solve_real(embedded, opts, face), embedded, flags, opts)
        if not (sol.status is Status.OPTIMAL
                and _real_certificate(embedded, sol.X, sol.y, sol.face_rows, flags).ok(
                    10 * max(gap_tol, feas_tol))):
            sol = None
    if sol is None:
        sol = _accept_certified(_solve_real(embedded, opts, None), embedded, flags, opts)
    Xo, So = [], []
    for f, x, s in zip(flags, sol.X, sol.S):
        if f:
            x, s = unembed_matrix(x), 2.0 * unembed_matrix(s)
        Xo.append(x)
        So.append(s)
    sol.X, sol.S = Xo, So
    return sol


def _polish(program: ConicProgram, X, keep: float):
    """Least-norm correction of ``X`` onto ``A(X) = b`` that only moves each block
    inside the span of its eigenvectors with eigenvalue above ``keep`` (relative),
    so near-zero directions stay where the IPM left them."""
    rp = program.b - program.apply(X)
    cols, spans = [], []
    for blk, a, x in zip(program.blocks, program.A, X):
        if blk.is_psd:
            w, u = np.linalg.eigh(x)
            uk = u[:, w > keep * max(1.0, float(w[-1]))]
            ak = np.matmul(np.matmul(uk.T, a), uk)
            iu = np.triu_indices(uk.shape[1])
            scale = np.where(iu[0] == iu[1], 1.0, 2.0)
            cols.append(ak[:, iu[0], iu[1]] * scale)
            spans.append((uk, iu))
        else:
            idx = np.flatnonzero(x > keep * max(1.0, float(np.max(x, initial=0.0))))
            cols.append(a[:, idx])
            spans.append(idx)
    delta = np.linalg.lstsq(np.concatenate(cols, axis=1), rp, rcond=None)[0]
    out, at = [], 0
    for blk, x, span in zip(program.blocks, X, spans):
        x = x.copy()
        if blk.is_psd:
            uk, iu = span
            k = len(iu[0])
            d = np.zeros((uk.shape[1], uk.shape[1]))
            d[iu] = delta[at:at + k]
            d = d + np.triu(d, 1).T
            x += uk @ d @ uk.T
        else:
            k = len(span)
            x[span] += delta[at:at + k]
        at += k
        out.append(x)
    return out


def _accept_certified(sol, program, flags, opts):
    # without strict complementarity the IPM can stall a little short, mostly on
    # primal feasibility; if the last iterate (or its polished version) passes
    # the independent certificate at the requested tolerances, that certificate
    # is the proof of optimality
    if sol.status is Status.OPTIMAL or not np.all(np.isfinite(sol.y)):
        return sol
    if not all(np.all(np.isfinite(x)) for x in sol.X):
        return sol
    tol = min(opts.gap_tol, opts.feas_tol)
    candidates = [sol.X] + [_polish(program, sol.X, keep) for keep in POLISH_KEEP]
    for X in candidates:
        cert = _real_certificate(program, X, sol.y, sol.face_rows, flags)
        if cert.ok(tol):
            note = "polished, " if X is not sol.X else ""
            sol.message = f"{note}certified after {sol.status.value}: {sol.message}"
            sol.status = Status.OPTIMAL
            sol.X = X
            sol.primal_value, sol.dual_value, sol.gap = cert.primal_value, cert.dual_value, cert.gap
            return sol
    return sol


def _solve_real(program: ConicProgram, opts: SolverOptions, face: _Face | None) -> ConicSolution:
    """Presolve, run the IPM on ``face`` (or the full cone) and map back to ``program``."""
    m = program.num_constraints
    if face is None:
        face = _Face(program, list(range(len(program.blocks))), _full_bases(program), [])
    pre = _presolve(face.program)
    zeros = [np.zeros((blk.size, blk.size)) if blk.is_psd else np.zeros(blk.size) for blk in program.blocks]
    if pre.inconsistent:
        return ConicSolution(Status.NUMERICAL_FAILURE, math.nan, math.nan, zeros, np.zeros(m),
                             zeros, math.inf, 0, message=pre.message)
    if face.program.blocks:
        sol = _ipm(pre.program, opts)
        X = _lift(face, program, sol.X)
    else:
        sol = ConicSolution(Status.OPTIMAL, 0.0, 0.0, [], np.zeros(len(pre.rows)), [], 0.0, 0, 0.0, 0.0)
        X = zeros
    y = np.zeros(m)
    y[pre.rows] = -sol.y * pre.scale
    if face.rows:
        sol.primal_value = program.objective(X)
        sol.dual_value = float(program.b @ y)
        sol.gap = abs(sol.primal_value - sol.dual_value) / (1 + abs(sol.primal_value) + abs(sol.dual_value))
        sol.message = "; ".join(filter(None, [sol.message, f"facial reduction on {len(face.rows)} row(s)"]))
        sol.face_rows = list(face.rows)
    sol.X = X
    sol.y = y
    sol.S = [np.tensordot(y, a, axes=(0, 0)) - c for a, c in zip(program.A, program.c)]
    return sol


# --------------------------------------------------------------------------
# Certificates
# --------------------------------------------------------------------------

@dataclass
class CertificateReport:
    primal_residual: float
    dual_residual: float
    gap: float
    psd_defects: list[float]
    primal_value: float
    dual_value: float
    face_rows: int = 0
    face_valid: bool = True

    def ok(self, tol: float = 1e-7) -> bool:
        return self.face_valid and max(self.primal_residual, self.dual_residual, self.gap,
                                       *self.psd_defects) <= tol


def _min_eig(x) -> float:
    x = np.asarray(x)
    if x.ndim == 1:
        return float(np.min(x)) if x.size else 0.0
    if x.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(0.5 * (x + x.conj().T))[0])


def _real_certificate(program: ConicProgram, X, y, face_rows, embedded_flags) -> CertificateReport:
    b = program.b
    ax = program.apply(X)
    primal_residual = float(np.max(np.abs(ax - b))) / (1.0 + float(np.max(np.abs(b))))
    factors = [2.0 if f else 1.0 for f in embedded_flags]
    cmax = max([f * float(np.max(np.abs(c))) for f, c in zip(factors, program.c) if c.size] + [0.0])
    bases = face_from_rows(program, face_rows) if face_rows else _full_bases(program)
    valid = bases is not None
    if bases is None:
        bases = _full_bases(program)
    worst = 0.0
    for blk, a, c, basis, f in zip(program.blocks, program.A, program.c, bases, factors):
        slack = np.tensordot(y, a, axes=(0, 0)) - c
        slack = basis.T @ slack @ basis if blk.is_psd else slack[basis]
        worst = max(worst, -f * _min_eig(slack))
    dual_residual = worst / (1.0 + cmax)
    pval = program.objective(X)
    dval = float(b @ y)
    gap = abs(pval - dval) / (1.0 + abs(pval) + abs(dval))
    defects = [max(0.0, -_min_eig(x)) for x in X]
    return CertificateReport(primal_residual, dual_residual, gap, defects, pval, dval,
                             len(face_rows), valid)


def check_certificate(program: ConicProgram, solution: ConicSolution) -> CertificateReport:
    """Recompute residuals of a primal/dual pair directly from the program data.

    * ``primal_residual``: ``max_i |<A_i, X> - b_i| / (1 + max|b|)``
    * ``dual_residual``: most negative eigenvalue of ``A^T y - c`` (relative to
      ``1 + max|c|``), i.e. how far ``y`` is from dual feasibility
    * ``gap``: ``|<c, X> - b.y| / (1 + |<c, X>| + |b.y|)``
    * ``psd_defects``: per block, ``max(0, -lambda_min(X_b))``

    When the solver used facial reduction, ``solution.face_rows`` lists the
    exposing rows: each has zero right-hand side and block coefficients that
    are semidefinite with one sign, so every feasible ``X`` lies in the face
    they cut out and ``b.y`` bounds the objective as soon as ``A^T y - c`` is
    positive on that face. The face is recomputed here from the program data,
    ``face_valid`` reports whether every listed row really is exposing, and the
    dual residual is measured on the face.
    """
    embedded = embed_hermitian(program)
    flags = _embedded_flags(program, embedded)
    X = [embed_matrix(x) if f else np.asarray(x).real for f, x in zip(flags, solution.X)]
    return _real_certificate(embedded, X, np.asarray(solution.y, dtype=float),
                             solution.face_rows, flags)


# --------------------------------------------------------------------------
# Modelling layer
# --------------------------------------------------------------------------

Adjoint = Callable[[np.ndarray], np.ndarray]


def hermitian_basis(r: int, complex_: bool):
    """Orthonormal basis of Hermitian r x r matrices (real symmetric if not complex_)."""
    for k in range(r):
        e = np.zeros((r, r), dtype=complex if complex_ else float)
        e[k, k] = 1.0
        yield e
    s = 1.0 / math.sqrt(2.0)
    for k in range(r):
        for l in range(k + 1, r):
            e = np.zeros((r, r), dtype=complex if complex_ else float)
            e[k, l] = e[l, k] = s
            yield e
            if complex_:
                e = np.zeros((r, r), dtype=complex)
                e[k, l] = 1j * s
                e[l, k] = -1j * s
                yield e


@dataclass
class ProgramBuilder:
    """Accumulate blocks, rows and an objective, then :meth:`build`.

    ``complex_`` decides whether PSD blocks are Hermitian (complex) or real
    symmetric and whether matrix equalities also constrain imaginary parts.
    """

    complex_: bool = False
    _blocks: list = field(default_factory=list)
    _rows: list = field(default_factory=list)
    _objective: dict = field(default_factory=dict)

    def psd(self, n: int, name: str = "") -> int:
        self._blocks.append(Block(PSD, n, name))
        return len(self._blocks) - 1

    def nonneg(self, k: int, name: str = "") -> int:
        self._blocks.append(Block(NONNEG, k, name))
        return len(self._blocks) - 1

    def block(self, index: int) -> Block:
        return self._blocks[index]

    def add_row(self, coeffs: Mapping[int, np.ndarray], rhs: float) -> None:
        self._rows.append(({k: np.asarray(v) for k, v in coeffs.items()}, float(rhs)))

    def add_matrix_equality(self, adjoints: Mapping[int, Adjoint], rhs: np.ndarray) -> None:
        """Impose ``sum_b L_b(X_b) = rhs`` for Hermitian-valued linear maps ``L_b``.

        Each map is given by its adjoint ``L_b^*``, which takes a Hermitian
        matrix of the output size to a coefficient for block ``b``.
        """
        rhs = np.asarray(rhs)
        for basis in hermitian_basis(rhs.shape[0], self.complex_):
            coeffs = {k: adj(basis) for k, adj in adjoints.items()}
            self.add_row(coeffs, float(np.real(np.sum(basis.conj() * rhs))))

    def maximize(self, coeffs: Mapping[int, np.ndarray]) -> None:
        self._objective = {k: np.asarray(v) for k, v in coeffs.items()}

    def build(self) -> ConicProgram:
        m = len(self._rows)
        dtype = complex if self.complex_ else float
        As, cs = [], []
        for idx, blk in enumerate(self._blocks):
            shape = (blk.size, blk.size) if blk.is_psd else (blk.size,)
            a = np.zeros((m,) + shape, dtype=dtype if blk.is_psd else float)
            for i, (coeffs, _) in enumerate(self._rows):
                if idx in coeffs:
                    v = coeffs[idx]
                    a[i] = v if blk.is_psd else np.real(v)
            c = np.zeros(shape, dtype=dtype if blk.is_psd else float)
            if idx in self._objective:
                c[...] = self._objective[idx] if blk.is_psd else np.real(self._objective[idx])
            As.append(a)
            cs.append(c)
        b = np.array([rhs for _, rhs in self._rows], dtype=float)
        return ConicProgram(tuple(self._blocks), tuple(cs), tuple(As), b)
