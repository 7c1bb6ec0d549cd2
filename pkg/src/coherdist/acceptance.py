"""End-to-end acceptance checks, shared by ``coherdist verify`` and the test suite.

Each check returns a :class:`Check` with the measured quantities it compared.
Every solver result produced along the way is recorded so that the protocol
soundness and solver health checks can audit all of them at the end.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from . import sdp
from .analytic import (Regime, dio_threshold, mio_pure_lower_bound, normalize_amplitudes,
                       p_qubit_target, p_sio_pure, qubit_threshold)
from .catalysis import (CatalysisInstance, catalysis_sweep, family_state, p_dio_catalytic_mc)
from .distill import (OpClass, Route, p_choi, p_compact, p_dual, protocol_for)
from .states import (DistillationInstance, max_coherent, paper_state, random_density,
                     random_pure_state, smoothed_target)

TOL = 1e-6
ZERO = 1e-7
HEALTH = 1e-7
EPS_GRID = [round(0.05 * i, 2) for i in range(10)]


@dataclass
class Check:
    number: int
    name: str
    passed: bool
    measured: dict
    seconds: float
    limit: float | None = None
    failures: list[str] = field(default_factory=list)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        limit = f" (limit {self.limit:g} s)" if self.limit is not None else ""
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        out = f"[{mark}] {self.number:2d}. {self.name}: {vals}; {self.seconds:.2f} s{limit}"
        if self.failures:
            out += "\n       " + "\n       ".join(self.failures[:5])
        return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.3g}"
    return str(v)


@dataclass
class Suite:
    seed: int = 0
    full: bool = True
    solved: list = field(default_factory=list)      # distillation results
    catalytic: list = field(default_factory=list)   # catalysis results

    def record(self, res):
        if res.solution is not None:
            self.solved.append(res)
        return res

    def compact(self, inst, cls):
        return self.record(p_compact(inst, cls))

    def dual(self, inst, cls):
        return self.record(p_dual(inst, cls))

    def choi(self, inst, cls):
        return self.record(p_choi(inst, cls))

    # pools -----------------------------------------------------------------

    def pure_pool(self, dims: range, count: int = 20, offset: int = 0) -> list[np.ndarray]:
        lo, hi = dims.start, dims.stop - 1
        return [random_pure_state(lo + i % (hi - lo + 1), self.seed * 1000 + offset + i)
                for i in range(count)]

    # checks ----------------------------------------------------------------

    def headline(self) -> Check:
        inst = DistillationInstance.from_state(paper_state("main_example"), 2, 0.1)
        vals, fails = {}, []
        t0 = time.perf_counter()
        for cls in OpClass:
            for route, fn in (("compact", self.compact), ("dual", self.dual), ("choi", self.choi)):
                p = fn(inst, cls).probability
                vals[f"{cls.value}/{route}"] = p
                if abs(p - 0.5) > TOL:
                    fails.append(f"{cls.value} {route}: {p!r} != 0.5")
        dt = time.perf_counter() - t0
        if dt >= 1.0:
            fails.append(f"took {dt:.2f} s")
        return Check(1, "qubit-target headline P = 0.5", not fails, vals, dt, 1.0, fails)

    def boundary(self) -> Check:
        psi = paper_state("main_example")
        t0 = time.perf_counter()
        eps0 = qubit_threshold(normalize_amplitudes(psi))
        vals, fails = {"eps0": eps0}, []
        if abs(eps0 - 0.2) > TOL:
            fails.append(f"eps0 = {eps0!r}")
        for eps, want in ((0.2, 1.0), (0.1, 0.5)):
            for cls in OpClass:
                p = self.compact(DistillationInstance.from_state(psi, 2, eps), cls).probability
                vals[f"{cls.value}@{eps}"] = p
                if abs(p - want) > TOL:
                    fails.append(f"{cls.value} at eps={eps}: {p!r} != {want}")
        return Check(2, "deterministic boundary eps0 = 0.2", not fails, vals, time.perf_counter() - t0,
                     None, fails)

    def qubit_formula(self) -> Check:
        t0 = time.perf_counter()
        worst, fails = 0.0, []
        for i, psi in enumerate(self.pure_pool(range(2, 6), offset=100)):
            amps = normalize_amplitudes(psi)
            for eps in EPS_GRID:
                want = p_qubit_target(amps, eps)
                for cls in OpClass:
                    p = self.compact(DistillationInstance.from_state(psi, 2, eps), cls).probability
                    err = abs(p - want)
                    worst = max(worst, err)
                    if err > TOL:
                        fails.append(f"state {i} eps={eps} {cls.value}: {p!r} vs {want!r}")
        dt = time.perf_counter() - t0
        if dt >= 30:
            fails.append(f"took {dt:.1f} s")
        return Check(3, "qubit-target formula matches SDP (both classes)", not fails,
                     {"max_abs_err": worst}, dt, 30.0, fails)

    def sio_equivalence(self) -> Check:
        t0 = time.perf_counter()
        worst, fails = 0.0, []
        for i, psi in enumerate(self.pure_pool(range(2, 7), offset=200)):
            amps = normalize_amplitudes(psi)
            for m in range(2, 7):
                want = p_sio_pure(amps, m)
                p = self.compact(DistillationInstance.from_state(psi, m, 0), OpClass.DIO).probability
                err = abs(p - want)
                worst = max(worst, err)
                if err > TOL:
                    fails.append(f"state {i} m={m}: DIO {p!r} vs SIO {want!r}")
        dt = time.perf_counter() - t0
        if dt >= 60:
            fails.append(f"took {dt:.1f} s")
        return Check(4, "zero-error DIO equals SIO formula on pure states", not fails,
                     {"max_abs_err": worst}, dt, 60.0, fails)

    def full_rank(self) -> Check:
        t0 = time.perf_counter()
        worst_p, worst_d, fails = 0.0, 0.0, []
        for i in range(10):
            dim = 2 + i % 4
            rho = random_density(dim, dim, self.seed * 1000 + 300 + i)
            for m in (2, 3):
                inst = DistillationInstance(rho, m, 0)
                for cls in OpClass:
                    p = self.compact(inst, cls).raw
                    d = self.dual(inst, cls).raw
                    worst_p, worst_d = max(worst_p, p), max(worst_d, d)
                    if p > ZERO or d > ZERO:
                        fails.append(f"density {i} m={m} {cls.value}: primal {p:.3e}, dual {d:.3e}")
        dt = time.perf_counter() - t0
        if dt >= 30:
            fails.append(f"took {dt:.1f} s")
        return Check(5, "full-rank inputs give zero (primal and dual)", not fails,
                     {"max_primal": worst_p, "max_dual": worst_d}, dt, 30.0, fails)

    def mio_bounds(self) -> Check:
        t0 = time.perf_counter()
        fails = []
        worst_margin = math.inf
        for i, psi in enumerate(self.pure_pool(range(2, 7), offset=200)):
            amps = normalize_amplitudes(psi)
            if amps.n < 2:
                continue
            for m in range(2, 9):
                tight, weak = mio_pure_lower_bound(amps, m)
                p = self.compact(DistillationInstance.from_state(psi, m, 0), OpClass.MIO).probability
                worst_margin = min(worst_margin, p - tight)
                if not (p >= tight - TOL and tight >= weak - TOL and weak > 0):
                    fails.append(f"state {i} m={m}: p={p!r} tight={tight!r} weak={weak!r}")
        special = 0.0
        for n in range(2, 6):
            for m in range(n + 1, 9):
                tight, _ = mio_pure_lower_bound(normalize_amplitudes(max_coherent(n)), m)
                special = max(special, abs(tight - (n - 1) / (m - 1)))
        if special > 1e-12:
            fails.append(f"uniform-input bound off by {special:.2e}")
        p23 = self.compact(DistillationInstance.from_state(max_coherent(2), 3, 0), OpClass.MIO).probability
        if p23 < 0.5 - TOL:
            fails.append(f"P_MIO(Psi_2 -> Psi_3) = {p23!r}")
        return Check(6, "MIO lower bounds hold", not fails,
                     {"min_p_minus_tight": worst_margin, "uniform_bound_err": special, "P(Psi2->Psi3)": p23},
                     time.perf_counter() - t0, None, fails)

    def sudden_death(self) -> Check:
        from .cli import run_sweep
        t0 = time.perf_counter()
        psi = paper_state("fig2_example")
        vals, fails = {}, []
        for eps in (Fraction(3, 10), Fraction(8, 25)):
            inst = DistillationInstance.from_state(psi, 3, eps)
            r = self.compact(inst, OpClass.DIO)
            dual = self.dual(inst, OpClass.DIO)
            vals[f"p@{float(eps)}"] = r.raw
            vals[f"dual@{float(eps)}"] = dual.raw
            if not (r.raw <= ZERO and r.certified_zero and dual.raw <= ZERO):
                fails.append(f"eps={float(eps)}: primal {r.raw:.3e}, bound {dual.raw:.3e}")
        r = self.compact(DistillationInstance.from_state(psi, 3, Fraction(1, 3)), OpClass.DIO)
        vals["p@1/3"] = r.probability
        if r.probability < 0.01:
            fails.append(f"eps=1/3: {r.probability!r} < 0.01")
        grid = sorted({Fraction(i, 100) for i in range(25, 46)} | {Fraction(1, 3)})
        rows = run_sweep(DistillationInstance.from_state(psi, 3, 0).rho, OpClass.DIO, 3, grid)
        for row in rows:
            if row["result"] is not None:
                self.record(row["result"])
        probs = [row["probability"] for row in rows]
        mono = all(b >= a - TOL for a, b in zip(probs, probs[1:]))
        vals["sweep_monotone"] = mono
        if not mono or any(math.isnan(p) for p in probs):
            fails.append(f"sweep not monotone: {probs}")
        dt = time.perf_counter() - t0
        if dt >= 10:
            fails.append(f"took {dt:.1f} s")
        return Check(7, "DIO sudden death at F = 2/3", not fails, vals, dt, 10.0, fails)

    def uniform_threshold(self) -> Check:
        t0 = time.perf_counter()
        vals, fails = {}, []
        for eps, want in ((Fraction(1, 3), 1.0), (Fraction(2, 5), 1.0), (Fraction(1, 5), 0.0),
                          (Fraction(3, 10), 0.0)):
            r = self.compact(DistillationInstance.from_state(max_coherent(2), 3, eps), OpClass.DIO)
            vals[f"p@{float(eps):.3g}"] = r.raw
            regime = dio_threshold(2, 3, eps, maximally_coherent=True)
            ok = abs(r.probability - 1) <= TOL if want else r.raw <= ZERO
            if not ok or regime is not (Regime.ONE if want else Regime.ZERO):
                fails.append(f"eps={float(eps)}: {r.raw!r} ({regime.value})")
        dt = time.perf_counter() - t0
        if dt >= 5:
            fails.append(f"took {dt:.1f} s")
        return Check(8, "Psi_2 -> Psi_3 under DIO switches from 0 to 1", not fails, vals, dt, 5.0, fails)

    def catalysis(self) -> Check:
        t0 = time.perf_counter()
        vals, fails = {}, []
        inst = CatalysisInstance(family_state("v", 0.5), max_coherent(2), 2, 0.01, 0.0)
        head = p_dio_catalytic_mc(inst)
        self.catalytic.append(head)
        vals["ratio@q=0.5"] = head.enhancement_ratio
        if not head.enhancement_ratio >= 0.115:
            fails.append(f"headline ratio {head.enhancement_ratio!r} < 0.115")
        if self.full:
            deltas = [0.0, 0.005, 0.01]
            grids = {"v": [0.1, 0.2, 0.3, 0.4, 0.5], "u": [0.2, 0.3, 0.4, 0.5, 0.6, 0.7]}
            worst = math.inf
            for fam, qs in grids.items():
                rows = catalysis_sweep(fam, qs, deltas)
                for row in rows:
                    if row["status"] != "Optimal":
                        fails.append(f"{fam} q={row['q']} delta={row['delta']}: {row['status']}")
                        continue
                    worst = min(worst, row["p_assisted"] - row["p_unassisted"])
                    self.catalytic.append(row["result"])
                for q in qs:
                    col = [r["p_assisted"] for r in rows if r["q"] == q]
                    if not all(b >= a - TOL for a, b in zip(col, col[1:])):
                        fails.append(f"{fam} q={q}: not monotone in delta {col}")
            vals["min_gain"] = worst
            if worst < -TOL:
                fails.append(f"assisted below unassisted by {-worst:.2e}")
        dt = time.perf_counter() - t0
        if dt >= 600:
            fails.append(f"took {dt:.0f} s")
        return Check(9, "catalysis enhancement" + ("" if self.full else " (headline only)"), not fails,
                     vals, dt, 600.0, fails)

    def protocols(self) -> Check:
        t0 = time.perf_counter()
        count, worst, fails = 0, 0.0, []
        for r in self.solved:
            if r.route is not Route.COMPACT_PRIMAL or r.G is None:
                continue
            try:
                _, report = protocol_for(r)
            except Exception as exc:  # report and keep auditing
                fails.append(f"{r.as_dict()}: {exc}")
                continue
            count += 1
            worst = max(worst, report.psd, report.trace, report.membership, report.action)
            if not report.passed:
                fails.append(f"{r.as_dict()}: {report}")
        return Check(10, "extracted protocols verify", not fails and count > 0,
                     {"protocols": count, "max_violation": worst}, time.perf_counter() - t0, None, fails)

    def health(self) -> Check:
        t0 = time.perf_counter()
        count, worst, fails = 0, 0.0, []
        for r in [*self.solved, *self.catalytic]:
            rep = sdp.check_certificate(r.program, r.solution)
            count += 1
            measured = max(r.gap, rep.primal_residual, rep.dual_residual, rep.gap, *rep.psd_defects)
            worst = max(worst, measured)
            if not (r.gap <= HEALTH and rep.ok(HEALTH)):
                fails.append(f"gap {r.gap:.2e}, {rep}")
        return Check(11, "solver health (gap and certificates)", not fails and count > 0,
                     {"instances": count, "max_residual": worst}, time.perf_counter() - t0, None, fails)

    def discontinuity(self) -> Check:
        t0 = time.perf_counter()
        vals, fails = {}, []
        for delta in (1e-1, 1e-2, 1e-3):
            r = self.compact(DistillationInstance(smoothed_target(2, delta), 2, 0), OpClass.MIO)
            vals[f"p@{delta:g}"] = r.raw
            if r.raw > ZERO:
                fails.append(f"delta={delta}: {r.raw!r}")
        p = self.compact(DistillationInstance.from_state(max_coherent(2), 2, 0), OpClass.MIO).probability
        vals["p(Psi2)"] = p
        if abs(p - 1) > TOL:
            fails.append(f"P_MIO(Psi_2 -> Psi_2) = {p!r}")
        return Check(12, "MIO probability is discontinuous at Psi_2", not fails, vals,
                     time.perf_counter() - t0, None, fails)


ORDER: list[tuple[int, Callable[[Suite], Check]]] = [
    (1, Suite.headline), (2, Suite.boundary), (3, Suite.qubit_formula), (4, Suite.sio_equivalence),
    (5, Suite.full_rank), (6, Suite.mio_bounds), (7, Suite.sudden_death), (8, Suite.uniform_threshold),
    (9, Suite.catalysis), (12, Suite.discontinuity), (10, Suite.protocols), (11, Suite.health),
]


def run_all(seed: int = 0, full: bool = True, report: Callable[[str], None] | None = None) -> list[Check]:
    """Run every check; the audits (10, 11) run last over everything solved."""
    suite = Suite(seed=seed, full=full)
    out = []
    for number, fn in ORDER:
        try:
            check = fn(suite)
        except Exception as exc:
            check = Check(number, fn.__name__, False, {}, 0.0, None, [f"{type(exc).__name__}: {exc}"])
        out.append(check)
        if report is not None:
            report(check.line())
    return sorted(out, key=lambda c: c.number)
