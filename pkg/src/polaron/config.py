"""Run configuration: an INI file with one section per block.

Example::

    [potential]
    model = full
    diag = [0.6, 0.6, 0.4]        # or: matrix = [[..], [..], [..]]

    [grid]
    n = 48
    L = auto                      # box half-length, or a number

    [solver]
    lambda = 1.0
    dt0 = 0.5
    tol_residual = 1e-8
    max_iter = 2000
    init.type = gaussian          # gaussian | random | file
    init.seed = 0

    [spectrum]
    sectors = all
    k = 2
    tol_zero = auto

    [cyl]
    nr = 48
    n_list = 0,1,2,3,4,5

    [output]
    dir = out

``diag`` gives the canonical entries directly; ``matrix`` goes through
canonicalization.  Every block is validated before anything is computed.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .anisotropy import CanonicalPotential, DielectricSpec, canonicalize, from_canonical
from .energy import InitSpec, SolverConfig, auto_grid
from .errors import ConfigError, PolaronError
from .field import SECTORS, Grid3

SECTIONS = ("potential", "grid", "solver", "spectrum", "cyl", "output")


@dataclass(frozen=True)
class RunConfig:
    potential: CanonicalPotential
    source: dict  # potential block as written, for the hash
    n: int = 48
    L: float | None = None
    solver: SolverConfig = SolverConfig()
    sectors: tuple = SECTORS
    k: int = 2
    tol_zero: float | None = None
    cyl_nr: int = 48
    cyl_n_list: tuple = (0, 1, 2, 3, 4, 5)
    out_dir: Path = Path("out")
    extra: dict = field(default_factory=dict)

    def grid(self) -> Grid3:
        if self.L is None:
            return auto_grid(self.potential, self.n, self.solver.lam)
        return Grid3((self.n,) * 3, (self.L,) * 3)

    def normalized(self) -> dict:
        s = self.solver
        return {
            "potential": self.source,
            "canonical": self.potential.describe(),
            "grid": {"n": self.n, "L": self.L},
            "solver": {
                "lambda": s.lam,
                "dt0": s.dt0,
                "tol_residual": s.tol_residual,
                "max_iter": s.max_iter,
                "init": {"type": s.init.kind, "sigma": s.init.sigma, "path": s.init.path, "seed": s.init.seed},
            },
            "spectrum": {"sectors": [list(t) for t in self.sectors], "k": self.k, "tol_zero": self.tol_zero},
            "cyl": {"nr": self.cyl_nr, "n_list": list(self.cyl_n_list)},
        }

    @property
    def hash(self) -> str:
        blob = json.dumps(self.normalized(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _json(raw: str, key: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({e.msg})") from None


def _float(sec, key, default):
    raw = sec.get(key)
    if raw is None or raw.strip().lower() == "auto":
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None


def _int(sec, key, default):
    raw = sec.get(key)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def parse_sectors(raw: str) -> tuple:
    raw = raw.strip()
    if raw.lower() == "all":
        return SECTORS
    out = []
    for tok in raw.replace(";", " ").split():
        tok = tok.strip("(),")
        if len(tok) != 3 or any(c not in "+-" for c in tok):
            raise ConfigError(f"sector {tok!r}: expected three signs such as +-+")
        out.append(tuple(1 if c == "+" else -1 for c in tok))
    if not out:
        raise ConfigError("empty sector list")
    return tuple(out)


def parse_n_list(raw: str) -> tuple:
    try:
        vals = tuple(int(v) for v in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"n_list: expected integers, got {raw!r}") from None
    if not vals or min(vals) < 0:
        raise ConfigError("n_list must hold nonnegative integers")
    return vals


def potential_from_block(sec) -> tuple[CanonicalPotential, dict]:
    model = sec.get("model", "").strip().lower()
    if model not in ("full", "simplified"):
        raise ConfigError(f"potential.model must be 'full' or 'simplified', got {model!r}")
    has_d, has_m = "diag" in sec, "matrix" in sec
    if has_d == has_m:
        raise ConfigError("potential block needs exactly one of 'diag' or 'matrix'")
    try:
        if has_d:
            d = _json(sec["diag"], "potential.diag")
            if len(d) != 3:
                raise ConfigError("potential.diag needs three entries")
            return from_canonical(model, d), {"model": model, "diag": [float(v) for v in d]}
        m = _json(sec["matrix"], "potential.matrix")
        pot = canonicalize(DielectricSpec(model, np.asarray(m, dtype=float)))
        return pot, {"model": model, "matrix": np.asarray(m, dtype=float).tolist()}
    except ConfigError:
        raise
    except PolaronError as e:
        raise ConfigError(f"potential block: {e}") from None
    except (ValueError, TypeError) as e:
        raise ConfigError(f"potential block: {e}") from None


def from_parser(cp: configparser.ConfigParser) -> RunConfig:
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    if not cp.has_section("potential"):
        raise ConfigError("missing [potential] section")
    pot, source = potential_from_block(cp["potential"])

    g = cp["grid"] if cp.has_section("grid") else {}
    n = _int(g, "n", 48)
    if n < 4 or n % 2:
        raise ConfigError(f"grid.n must be an even integer >= 4, got {n}")
    L = _float(g, "L", None)
    if L is not None and L <= 0:
        raise ConfigError("grid.L must be positive")

    s = cp["solver"] if cp.has_section("solver") else {}
    kind = s.get("init.type", "gaussian").strip().lower()
    if kind not in ("gaussian", "random", "file"):
        raise ConfigError(f"solver.init.type must be gaussian, random or file, got {kind!r}")
    path = s.get("init.path")
    if kind == "file" and not path:
        raise ConfigError("solver.init.type = file needs init.path")
    init = InitSpec(kind, _float(s, "init.sigma", None), path, _int(s, "init.seed", 0))
    try:
        solver = SolverConfig(
            lam=_float(s, "lambda", 1.0),
            dt0=_float(s, "dt0", 0.5),
            tol_residual=_float(s, "tol_residual", 1e-8),
            max_iter=_int(s, "max_iter", 2000),
            init=init,
        )
    except ValueError as e:
        raise ConfigError(f"solver block: {e}") from None

    sp = cp["spectrum"] if cp.has_section("spectrum") else {}
    sectors = parse_sectors(sp.get("sectors", "all"))
    k = _int(sp, "k", 2)
    tol_zero = _float(sp, "tol_zero", None)

    cy = cp["cyl"] if cp.has_section("cyl") else {}
    nr = _int(cy, "nr", 48)
    n_list = parse_n_list(cy.get("n_list", "0,1,2,3,4,5"))

    o = cp["output"] if cp.has_section("output") else {}
    out_dir = Path(o.get("dir", "out"))
    if k < 1 or nr < 8:
        raise ConfigError("spectrum.k must be >= 1 and cyl.nr >= 8")
    return RunConfig(pot, source, n, L, solver, sectors, k, tol_zero, nr, n_list, out_dir)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep "L" and "init.type" as written
    return cp


def load_config(path) -> RunConfig:
    cp = _parser()
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from None
    return from_parser(cp)


def parse_config(text: str) -> RunConfig:
    cp = _parser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    return from_parser(cp)
