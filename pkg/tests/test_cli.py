import json

import pytest

from polaron.cli import build_parser, main
from polaron.field import load_field

SMALL = """
[potential]
model = full
diag = [0.6, 0.6, 0.4]

[grid]
n = 32

[solver]
tol_residual = 1e-8

[spectrum]
sectors = -++
k = 1
"""

VACUUM = """
[potential]
model = full
diag = [1.0, 1.0, 1.0]

[grid]
n = 32
L = 40

[solver]
max_iter = 100
"""


def _records(out):
    return [json.loads(s) for s in (out / "records.jsonl").read_text().splitlines()]


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def test_parser_has_all_subcommands():
    sub = build_parser()._subparsers._group_actions[0].choices
    assert set(sub) == {"solve", "spectrum", "cyl", "oracle", "verify", "symmetry-check"}
    with pytest.raises(SystemExit):
        build_parser().parse_args(["solve"])  # -c is required


def test_solve_outputs_and_determinism(small, tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "-c", str(small), "-o", str(a)]) == 0
    assert main(["solve", "-c", str(small), "-o", str(b)]) == 0
    for name in ("psi.pfld", "profile.csv", "profile.png", "energy_trace.csv", "energy_trace.png"):
        assert (a / name).exists()
    assert (a / "psi.pfld").read_bytes() == (b / "psi.pfld").read_bytes()
    rec = [r for r in _records(a) if r["kind"] == "solve"][0]
    assert rec["converged"] and rec["energy"] < 0 and len(rec["config_hash"]) == 16
    assert load_field(a / "psi.pfld").mass == pytest.approx(1.0, rel=1e-12)
    assert '"kind": "solve"' in capsys.readouterr().out


def test_spectrum_and_symmetry(small, tmp_path):
    out = tmp_path / "s"
    assert main(["spectrum", "-c", str(small), "-o", str(out)]) == 0
    assert (out / "spectrum.csv").exists() and (out / "spectrum.png").exists()
    assert main(["symmetry-check", "-c", str(small), "-o", str(out)]) == 0
    assert (out / "symmetry_profile.png").exists()
    kinds = {r["kind"] for r in _records(out)}
    assert "error" not in kinds


def test_oracle_command(tmp_path):
    out = tmp_path / "o"
    assert main(["oracle", "--s", "0.5", "-o", str(out)]) == 0
    rec = [r for r in _records(out) if r["kind"] == "oracle"][0]
    assert rec["energy"] == pytest.approx(-0.0542564026140478 * 0.25, rel=1e-7)
    assert (out / "oracle_profile.png").exists()


def test_cyl_checks_exit_codes(tmp_path):
    out = tmp_path / "c"
    assert main(["cyl", "--check", "tn", "-o", str(out)]) == 0
    assert main(["cyl", "--check", "beta", "-o", str(out)]) == 0
    # the canonical full-model v_2 never changes sign: the check fails with exit 3
    assert main(["cyl", "--check", "difference-sign", "-o", str(out)]) == 3
    assert _records(out)[-1]["kind"] == "error"


def test_error_exit_codes(tmp_path):
    vac = tmp_path / "vac.ini"
    vac.write_text(VACUUM)
    out = tmp_path / "v"
    assert main(["solve", "-c", str(vac), "-o", str(out)]) == 2
    err = _records(out)[-1]
    assert err["kind"] == "error" and err["error"] == "NoBinding"
    bad = tmp_path / "bad.ini"
    bad.write_text("[potential]\nmodel = full\ndiag = [2, 1, 1]\n")
    assert main(["solve", "-c", str(bad), "-o", str(out)]) == 1
    assert main(["solve", "-c", str(tmp_path / "missing.ini"), "-o", str(out)]) == 1


def test_verify_symmetry_suite(tmp_path):
    out = tmp_path / "ver"
    assert main(["verify", "--suite", "symmetry", "-o", str(out)]) == 0
    text = (out / "verify_report.txt").read_text()
    assert text.startswith("PASS")
