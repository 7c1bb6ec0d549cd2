import csv
import io
import json
import math
from fractions import Fraction

import numpy as np
import pytest

from coherdist import acceptance, cli
from coherdist.catalysis import SWEEP_HEADER
from coherdist.errors import SolverError
from coherdist.states import paper_state


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def sweep_rows(text):
    return list(csv.DictReader(io.StringIO(text)))


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

def test_parse_grid_ranges_and_fractions():
    grid = cli.parse_grid("0.30..0.32:0.01,1/3,0.3")
    assert grid == [Fraction(3, 10), Fraction(31, 100), Fraction(8, 25), Fraction(1, 3)]
    assert cli.parse_grid("0.25..0.45:0.01")[-1] == Fraction(45, 100)
    assert len(cli.parse_grid("0.2..0.7:0.1")) == 6


@pytest.mark.parametrize("text", ["", "a", "0.5..0.4:0.1", "0.1..0.2:0", "1/0"])
def test_parse_grid_rejects(text):
    with pytest.raises(cli.UsageError):
        cli.parse_grid(text)


def test_parse_amps_complex_and_normalised():
    v = cli.parse_amps("1, 1j")
    assert np.allclose(v, np.array([1, 1j]) / np.sqrt(2))
    assert cli.parse_amps("3,4").dtype == float
    with pytest.raises(cli.UsageError):
        cli.parse_amps("0,0")


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("COHERDIST_THREADS", "3")
    assert cli.thread_count(8) == 3
    monkeypatch.setenv("COHERDIST_THREADS", "many")
    with pytest.raises(cli.UsageError):
        cli.thread_count()
    monkeypatch.delenv("COHERDIST_THREADS")
    assert cli.thread_count(2) == 2


# --------------------------------------------------------------------------
# compute
# --------------------------------------------------------------------------

@pytest.mark.parametrize("argv, expected", [
    (["--state", "main_example", "--class", "MIO", "--m", "2", "--eps", "0.1"], 0.5),
    (["--state", "psi:2", "--class", "DIO", "--m", "2", "--eps", "0"], 1.0),
    (["--amps", "1,3", "--class", "DIO", "--m", "3", "--eps", "0.30"], 0.0),
])
def test_compute_examples(capsys, argv, expected):
    code, out, _ = run(capsys, "compute", *argv)
    assert code == 0
    data = json.loads(out)
    assert data["probability"] == pytest.approx(expected, abs=1e-7)
    assert "analytic" in data


def test_compute_routes_agree(capsys):
    vals = []
    for route in ("compact", "dual", "choi"):
        code, out, _ = run(capsys, "compute", "--state", "main_example", "--class", "dio",
                           "--eps", "0.05", "--route", route)
        assert code == 0
        vals.append(json.loads(out)["probability"])
    assert max(vals) - min(vals) <= 1e-6


def test_compute_density_file(tmp_path, capsys):
    rho = np.array([[0.5, 0.25j], [-0.25j, 0.5]])
    entries = [[float(z.real), float(z.imag)] for z in rho.ravel()]
    path = tmp_path / "rho.json"
    path.write_text(json.dumps({"dim": 2, "entries": entries}))
    code, out, _ = run(capsys, "compute", "--density", str(path), "--class", "MIO", "--eps", "0")
    assert code == 0
    data = json.loads(out)
    assert "analytic" not in data
    assert 0 <= data["probability"] <= 1


def test_compute_writes_output_file(tmp_path, capsys):
    path = tmp_path / "out.json"
    code, out, _ = run(capsys, "compute", "--state", "main_example", "--class", "MIO", "--eps", "0.2",
                       "-o", str(path))
    assert code == 0 and out == ""
    assert json.loads(path.read_text())["probability"] == pytest.approx(1.0, abs=1e-7)


@pytest.mark.parametrize("argv", [
    ["compute", "--state", "nope", "--class", "MIO"],
    ["compute", "--state", "main_example", "--class", "MIO", "--eps", "1.5"],
    ["compute", "--state", "main_example", "--amps", "1,1", "--class", "MIO"],
    ["compute", "--state", "main_example", "--class", "SIO"],
    ["compute", "--class", "MIO"],
    ["sweep", "--state", "main_example", "--class", "MIO", "--eps", "0.1,1"],
    ["catalysis", "--family", "v", "--q", "1.5"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(capsys, argv):
    code, _, _ = run(capsys, *argv)
    assert code == 2


def test_bad_density_file_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"dim": 2, "entries": [[1, 0], [0, 0], [0, 0], [1, 0]]}))
    code, _, err = run(capsys, "compute", "--density", str(path), "--class", "MIO")
    assert code == 2
    assert "density" in err


def test_solver_failure_exit_3(capsys, monkeypatch):
    def failing(*args, **kw):
        raise SolverError("stalled")
    monkeypatch.setitem(cli.ROUTES, "compact", failing)
    code, _, err = run(capsys, "compute", "--state", "main_example", "--class", "MIO")
    assert code == 3
    assert "solver" in err


def test_help_exits_0(capsys):
    assert cli.main(["--help"]) == 0


# --------------------------------------------------------------------------
# sweep
# --------------------------------------------------------------------------

def test_sweep_fig2_discontinuity(capsys):
    code, out, _ = run(capsys, "sweep", "--state", "fig2_example", "--class", "DIO", "--m", "3",
                       "--eps", "0.30,1/3,0.40")
    assert code == 0
    rows = sweep_rows(out)
    assert list(rows[0]) == list(cli.SWEEP_COLUMNS)
    p = [float(r["probability"]) for r in rows]
    assert p[0] <= 1e-7
    assert p[1] > 0.01
    assert p[2] > p[1]
    assert float(rows[1]["fidelity"]) == pytest.approx(2 / 3)


def test_sweep_main_example(capsys):
    code, out, _ = run(capsys, "sweep", "--state", "main_example", "--class", "MIO", "--eps", "0.2,0.1")
    assert code == 0
    rows = sweep_rows(out)
    assert [float(r["eps"]) for r in rows] == [0.1, 0.2]
    assert [float(r["probability"]) for r in rows] == pytest.approx([0.5, 1.0], abs=1e-7)


def test_sweep_is_byte_stable_and_ordered(capsys, monkeypatch):
    argv = ["sweep", "--state", "fig2_example", "--class", "DIO", "--m", "3", "--eps", "0.25..0.45:0.05"]
    monkeypatch.setenv("COHERDIST_THREADS", "1")
    _, serial, _ = run(capsys, *argv)
    monkeypatch.setenv("COHERDIST_THREADS", "4")
    _, parallel, _ = run(capsys, *argv)
    assert serial == parallel
    p = [float(r["probability"]) for r in sweep_rows(serial)]
    assert all(b >= a - 1e-7 for a, b in zip(p, p[1:]))


def test_sweep_records_failures_per_row(capsys, monkeypatch):
    real = cli.p_compact

    def flaky(inst, cls, **kw):
        if inst.eps == Fraction(1, 5):
            raise SolverError("stalled")
        return real(inst, cls, **kw)
    monkeypatch.setattr(cli, "p_compact", flaky)
    code, out, _ = run(capsys, "sweep", "--state", "main_example", "--class", "MIO", "--eps", "0.1,0.2")
    assert code == 0
    rows = sweep_rows(out)
    assert rows[1]["probability"] == "nan" and rows[1]["status"] == "Error"

    monkeypatch.setattr(cli, "p_compact", lambda *a, **k: (_ for _ in ()).throw(SolverError("x")))
    code, _, _ = run(capsys, "sweep", "--state", "main_example", "--class", "MIO", "--eps", "0.1")
    assert code == 3


def test_run_sweep_rows():
    rho = np.outer(paper_state("main_example"), paper_state("main_example").conj())
    rows = cli.run_sweep(rho, "MIO", 2, [Fraction(1, 5), Fraction(1, 10)], workers=2)
    assert [r["eps"] for r in rows] == [Fraction(1, 10), Fraction(1, 5)]
    assert all(r["result"] is not None and r["status"] == "Optimal" for r in rows)
    assert not any(math.isnan(r["gap"]) for r in rows)


# --------------------------------------------------------------------------
# catalysis and verify
# --------------------------------------------------------------------------

def test_catalysis_headline(capsys):
    code, out, _ = run(capsys, "catalysis", "--family", "v", "--q", "0.5", "--delta", "0", "--eps", "0.01")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert list(rows[0]) == list(SWEEP_HEADER)
    assert float(rows[0]["ratio"]) >= 0.115


def test_catalysis_u_family_grid(capsys):
    code, out, _ = run(capsys, "catalysis", "--family", "u", "--q", "0.2..0.7:0.1", "--delta", "0")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 6
    assert all(float(r["ratio"]) >= -1e-6 for r in rows)


def fake_checks(passed):
    return [acceptance.Check(n, f"check {n}", passed or n != 3, {"x": 1.0}, 0.0) for n in range(1, 13)]


@pytest.mark.parametrize("passed, code", [(True, 0), (False, 1)])
def test_verify_exit_codes(capsys, monkeypatch, passed, code):
    seen = {}

    def fake(seed=0, full=True, report=None):
        seen.update(seed=seed, full=full)
        checks = fake_checks(passed)
        for c in checks:
            report(c.line())
        return checks
    monkeypatch.setattr(acceptance, "run_all", fake)
    got, out, _ = run(capsys, "verify", "--seed", "7")
    assert got == code
    assert seen == {"seed": 7, "full": False}
    assert out.count("[PASS]") + out.count("[FAIL]") == 12
    run(capsys, "verify", "--full")
    assert seen["full"] is True


def test_verify_checks_are_deterministic():
    a = acceptance.Suite(seed=7, full=False)
    b = acceptance.Suite(seed=7, full=False)
    assert a.full_rank().measured == b.full_rank().measured
