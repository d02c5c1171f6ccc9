"""Command-line entry point.

Exit codes: 0 success, 1 internal or input error, 2 no binding or no
convergence, 3 a verification check failed.  Failures are also printed as an
``error`` record so batch drivers can parse them.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import cylinder as cyl
from . import energy as en
from . import oracle
from . import report as rp
from . import verify as vf
from .anisotropy import Model, steiner_criteria
from .config import RunConfig, load_config, parse_n_list, parse_sectors
from .errors import ConfigError, PolaronError, VerificationFailed
from .field import approved_directions, save_field
from .linop import SINGLY_ODD, LinearizedOp, overlap, sector_lowest


def _sector_name(tau) -> str:
    return "".join("+" if t > 0 else "-" for t in tau)


class App:
    def __init__(self, args):
        self.args = args
        self.cfg: RunConfig | None = None
        if getattr(args, "config", None):
            self.cfg = load_config(args.config)
        out = getattr(args, "out", None) or (self.cfg.out_dir if self.cfg else Path("out"))
        self.out = Path(out)
        self.hash = self.cfg.hash if self.cfg else None
        self.sink = rp.RecordSink(self.out / "records.jsonl")

    def need_config(self) -> RunConfig:
        if self.cfg is None:
            raise ConfigError(f"'{self.args.cmd}' needs --config")
        return self.cfg

    def emit(self, kind: str, payload: dict) -> None:
        self.sink.emit(rp.record(kind, payload, self.hash))

    def minimize(self) -> en.MinimizeResult:
        cfg = self.need_config()
        return en.minimize(cfg.potential, cfg.solver, cfg.grid())


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(app: App) -> int:
    res = app.minimize()
    path = app.out / "psi.pfld"
    app.out.mkdir(parents=True, exist_ok=True)
    save_field(res.psi, path)
    rec = res.record()
    rec["field_file"] = str(path)
    rec["virial"] = en.virial_report(res)
    app.emit("solve", rec)
    centered = en.symmetry_metrics(res)["centered"]
    header, rows = rp.profile_rows(centered)
    rp.write_table(app.out / "profile.csv", header, rows,
                   {"x": "x", "y": ["axis0", "axis1", "axis2"], "title": "minimizer along the principal axes", "ylabel": "psi"})
    trace = [(i, e) for i, e in enumerate(res.energy_trace)]
    rp.write_table(app.out / "energy_trace.csv", ["iteration", "energy"], trace,
                   {"x": "iteration", "y": ["energy"], "title": "energy along the gradient flow"})
    return 0


def cmd_oracle(app: App) -> int:
    s, lam = app.args.s, app.args.lam
    sol = oracle.solve_radial(s, lam)
    app.emit("oracle", {
        "energy": sol.energy,
        "mu": sol.mu,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "converged": True,
        "lambda": lam,
        "grid": {"npts": sol.r.size + 1, "rmax": float(sol.r[-1] + sol.r[0])},
        "potential": {"model": "full", "d": [s, s, s]},
        "virial": sol.virial(),
    })
    rows = list(zip(sol.r, sol.psi))
    rp.write_table(app.out / "oracle_profile.csv", ["r", "psi"], rows,
                   {"x": "r", "y": ["psi"], "title": f"radial ground state, s = {s:g}, mass {lam:g}"})
    return 0


def cmd_spectrum(app: App) -> int:
    cfg = app.need_config()
    res = app.minimize()
    sym = en.symmetry_metrics(res)
    op = LinearizedOp(en.to_q_form(dataclasses.replace(res, psi=sym["centered"])), cfg.potential)
    sectors = parse_sectors(app.args.sectors) if app.args.sectors else cfg.sectors
    k = app.args.k or cfg.k
    tres = op.translation_residuals()
    tol_zero = app.args.tol_zero if app.args.tol_zero is not None else (cfg.tol_zero or 10 * max(tres))
    modes = op.translation_modes()
    rows = []
    total = 0
    for tau in sectors:
        spec = sector_lowest(op, tau, k=k, tol=1e-8)
        zeros = int(np.sum(np.abs(spec.eigenvalues) < tol_zero))
        if tau != (1, 1, 1):
            total += zeros
        rec = spec.record()
        rec["zeros"] = zeros
        if tau in SINGLY_ODD:
            rec["overlap_dQ"] = overlap(spec.eigenfields[0], modes[tau.index(-1)])
        app.emit("sector", rec)
        for i, lam in enumerate(spec.eigenvalues):
            rows.append((_sector_name(tau), i, float(lam), float(spec.residuals[i])))
    app.emit("spectrum", {"tol_zero": tol_zero, "translation_residuals": tres, "zero_count_without_even": total,
                          "potential": cfg.potential.describe()})
    idx = {name: j for j, name in enumerate(dict.fromkeys(r[0] for r in rows))}
    plot_rows = [(idx[r[0]], *r) for r in rows]
    rp.write_table(app.out / "spectrum.csv", ["sector_index", "sector", "index", "eigenvalue", "residual"], plot_rows,
                   {"x": "sector_index", "y": ["eigenvalue"], "group": "index", "style": "points", "hline": 0.0,
                    "title": "lowest eigenvalues per parity sector", "xlabel": "sector (order as in the CSV)"})
    return 0


def cmd_symmetry(app: App) -> int:
    cfg = app.need_config()
    res = app.minimize()
    m = en.symmetry_metrics(res)
    flags = steiner_criteria(cfg.potential)
    gaps = {}
    for d in approved_directions(cfg.potential):
        g = en.symmetrization_gap(cfg.potential, m["centered"], d)
        gaps[str(d)] = {k: g[k] for k in ("rel_energy_gap", "rel_kinetic_gap", "rel_interaction_gap")}
    axes = flags.approved_axes()
    worst = max((m["asymmetry"][a] for a in axes), default=0.0)
    ok = worst < 1e-3
    app.emit("symmetry", {"asymmetry": m["asymmetry"], "approved_axes": axes,
                          "approved_planes": [list(p) for p, v in flags.planes.items() if v],
                          "symmetrization": gaps, "max_approved_asymmetry": worst, "status": "pass" if ok else "fail",
                          "energy": res.energy, "potential": cfg.potential.describe()})
    header, rows = rp.profile_rows(m["centered"])
    rp.write_table(app.out / "symmetry_profile.csv", header, rows,
                   {"x": "x", "y": ["axis0", "axis1", "axis2"], "title": "centered minimizer along the principal axes", "ylabel": "psi"})
    if not ok:
        raise VerificationFailed(f"asymmetry {worst:.3e} on an approved axis")
    return 0


CYL_CHECKS = {
    "vn-positivity": vf.check_vn_positivity,
    "beta": vf.check_beta,
    "tn": vf.check_tn,
    "heat-kernel": vf.check_heat_kernel,
    "difference-sign": vf.check_difference_sign,
}


def cmd_cyl(app: App) -> int:
    check = app.args.check
    if check in CYL_CHECKS:
        c = CYL_CHECKS[check](vf.Context())
        app.emit("check", c.record())
        if not c.passed:
            raise VerificationFailed(f"{check}: {c.name} failed")
        return 0
    cfg = app.need_config()
    if cfg.potential.model is not Model.SIMPLIFIED:
        raise ConfigError("cyl spectrum needs a simplified-model potential with two equal entries")
    ns = parse_n_list(app.args.n_list) if app.args.n_list else cfg.cyl_n_list
    res = app.minimize()
    Q = en.to_q_form(res)
    grid = cyl.default_cyl_grid(Q, cfg.potential, cfg.cyl_nr)
    setup = cyl.cyl_setup(cfg.potential, Q, grid, nmax=max(max(ns), 1))
    sp = cyl.spectra(setup, ns)
    rows = []
    for n in ns:
        vals = sp[n]["eigenvalues"]
        app.emit("cyl_sector", {"n": n, "eigenvalues": vals, "single_sign": sp[n]["single_sign"], "residual": sp[n]["residual"]})
        rows += [(n, i, float(v)) for i, v in enumerate(vals)]
    app.emit("cyl_spectrum", {"translation_residual": sp["translation_residual"], "overlap_dr": sp.get("overlap_dr"),
                              "azimuthal_spread": setup.spread, "newton_residual": setup.newton_residual,
                              "grid": {"nr": grid.nr, "nz": grid.nz, "rmax": grid.rmax, "zmax": grid.zmax}})
    rp.write_table(app.out / "cyl_spectrum.csv", ["n", "index", "eigenvalue"], rows,
                   {"x": "n", "y": ["eigenvalue"], "group": "index", "style": "points", "hline": 0.0,
                    "title": "lowest eigenvalues per azimuthal harmonic", "xlabel": "harmonic n"})
    if app.args.dump_tables:
        for t in setup.tables:
            path = app.out / f"vn_{t.n:02d}.cvnt"
            cyl.save_vntable(t, path)
            app.emit("table", {"n": t.n, "file": str(path)})
    return 0


def cmd_verify(app: App) -> int:
    extra = [app.cfg.potential] if app.cfg is not None else []
    ctx = vf.Context(extra_potentials=extra)
    checks = vf.run_suite(app.args.suite, ctx, on_check=lambda c: app.emit("check", c.record()))
    failed = [c for c in checks if not c.passed]
    app.emit("verify", {"suite": app.args.suite, "passed": len(checks) - len(failed), "failed": [c.criterion for c in failed]})
    _verify_tables(app, checks)
    lines = [c.line() for c in checks]
    (app.out / "verify_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for ln in lines:
        print(ln, file=sys.stderr)
    if failed:
        raise VerificationFailed(f"criteria {', '.join(str(c.criterion) for c in failed)} failed")
    return 0


def _verify_tables(app: App, checks) -> None:
    by = {c.criterion: c for c in checks}
    if 1 in by:
        rows = [(r["n"], r["s"], r["rel_energy"], r["rel_mu"]) for r in by[1].details["rows"]]
        rp.write_table(app.out / "oracle_agreement.csv", ["n", "s", "rel_energy", "rel_mu"], rows,
                       {"x": "n", "y": ["rel_energy", "rel_mu"], "group": "s", "logy": True,
                        "title": "relative error against the radial reference", "xlabel": "points per axis"})
    if 13 in by:
        rows = []
        for name, d in by[13].details.items():
            rows += [(name, r["t"], r["I"], r["mu"]) for r in d["rows"]]
        rp.write_table(app.out / "continuity.csv", ["path", "t", "I", "mu"], rows,
                       {"x": "t", "y": ["I"], "group": "path", "title": "ground-state energy along two matrix paths"})
    if 5 in by:
        rows = []
        for name, d in by[5].details.items():
            for j, (sec, row) in enumerate(d["sectors"].items()):
                rows += [(name, j, sec, i, v) for i, v in enumerate(row["eigenvalues"])]
        rp.write_table(app.out / "census.csv", ["potential", "sector_index", "sector", "index", "eigenvalue"], rows,
                       {"x": "sector_index", "y": ["eigenvalue"], "group": "potential", "style": "points", "hline": 0.0,
                        "title": "lowest sector eigenvalues", "xlabel": "sector (order as in the CSV)"})


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="polaron", description="Anisotropic Choquard-Pekar minimizers and structural checks.")
    p.add_argument("--version", action="version", version=f"polaron {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, config_required=False):
        sp.add_argument("-c", "--config", required=config_required, help="INI run configuration")
        sp.add_argument("-o", "--out", help="output directory (overrides [output] dir)")
        return sp

    common(sub.add_parser("solve", help="minimize the energy and save the field"), True)
    s = common(sub.add_parser("spectrum", help="parity-sector spectra of the linearized operator"), True)
    s.add_argument("--sectors", help="'all' or a list such as '-++ +-+'")
    s.add_argument("--k", type=int, help="eigenvalues per sector")
    s.add_argument("--tol-zero", type=float, help="zero threshold (default 10x translation residual)")
    c = common(sub.add_parser("cyl", help="cylindrical harmonic checks and spectra"))
    c.add_argument("--n-list", help="harmonics, e.g. 0,1,2,3")
    c.add_argument("--check", choices=["vn-positivity", "beta", "tn", "spectrum", "heat-kernel", "difference-sign"], default="spectrum")
    c.add_argument("--dump-tables", action="store_true", help="write the kernel tables as CVNT files")
    o = common(sub.add_parser("oracle", help="radial reference solution for V = (1-s)/|x|"))
    o.add_argument("--s", type=float, default=0.0)
    o.add_argument("--lambda", dest="lam", type=float, default=1.0)
    v = common(sub.add_parser("verify", help="run an acceptance suite"))
    v.add_argument("--suite", choices=list(vf.SUITES), default="all")
    common(sub.add_parser("symmetry-check", help="reflection symmetry of a minimizer"), True)
    return p


COMMANDS = {
    "solve": cmd_solve,
    "spectrum": cmd_spectrum,
    "cyl": cmd_cyl,
    "oracle": cmd_oracle,
    "verify": cmd_verify,
    "symmetry-check": cmd_symmetry,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    app = None
    try:
        app = App(args)
        return COMMANDS[args.cmd](app)
    except PolaronError as e:
        _report_error(app, e)
        return e.exit_code
    except Exception as e:  # noqa: BLE001 - surfaced as a structured record
        _report_error(app, e)
        return 1


def _report_error(app, exc) -> None:
    rec = rp.error_record(exc, app.hash if app else None)
    if app is not None:
        app.sink.emit(rec)
    else:
        rp.RecordSink().emit(rec)


if __name__ == "__main__":
    sys.exit(main())
