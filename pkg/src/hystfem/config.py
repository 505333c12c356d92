"""Run configuration: INI text with sections, parsed into dataclasses."""

from __future__ import annotations

import configparser
import dataclasses
import math
from importlib import resources
from pathlib import Path

from .driver import LoadCycle, ProbeSet
from .material import DEFAULT_EPS, FIVE_CELL_AS, FIVE_CELL_CHI, FIVE_CELL_JS, CellParams, MaterialModel
from .mesh import Mesh, MeshError, TJointParams, generate_tjoint, load_mesh, refine_uniform
from .solvers import BCDConfig, NewtonConfig


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class MeshSource:
    path: Path | None = None  # mesh file; None generates the T-joint
    tjoint: TJointParams = TJointParams()
    refine: int = 0

    def build(self) -> Mesh:
        if self.path is not None:
            try:
                mesh = load_mesh(Path(self.path).read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read mesh file {self.path}: {exc}") from exc
        else:
            mesh = generate_tjoint(self.tjoint)
        for _ in range(self.refine):
            mesh = refine_uniform(mesh)
        return mesh


@dataclasses.dataclass(frozen=True)
class MaterialTable:
    A_s: float = FIVE_CELL_AS
    J_s: tuple[float, ...] = FIVE_CELL_JS
    chi: tuple[float, ...] = FIVE_CELL_CHI
    eps: float = DEFAULT_EPS
    form_coeff: int = 1

    def build(self) -> MaterialModel:
        if len(self.J_s) != len(self.chi):
            raise ConfigError("material: J_s and chi need the same number of cells")
        try:
            return MaterialModel(tuple(CellParams(self.A_s, js, c, self.eps, self.form_coeff)
                                       for js, c in zip(self.J_s, self.chi)))
        except ValueError as exc:
            raise ConfigError(f"material: {exc}") from exc


@dataclasses.dataclass(frozen=True)
class RunConfig:
    mesh: MeshSource = MeshSource()
    material: MaterialTable = MaterialTable()
    solver: str = "newton"
    newton: NewtonConfig = NewtonConfig()
    bcd: BCDConfig = BCDConfig()
    cycle: LoadCycle = LoadCycle()
    probes: ProbeSet = ProbeSet.tjoint_default()
    output: Path = Path("out")
    depth: float = 1.0
    threads: int = 1


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fields(cls, section: configparser.SectionProxy | None, base) -> dict:
    """Override dataclass fields of ``base`` from a section, converting by the default's type."""
    out = {}
    if section is None:
        return out
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"[{section.name}] unknown key {key!r}")
        cur = getattr(base, key)
        if isinstance(cur, bool):
            out[key] = _bool(raw)
        elif isinstance(cur, int):
            out[key] = int(raw)
        elif isinstance(cur, float):
            out[key] = float(raw)
        elif isinstance(cur, tuple) or cur is None:
            vals = _floats(raw)
            out[key] = vals if vals else None
        else:
            out[key] = raw
    return out


def parse_config(text: str, base_dir: Path | None = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keep J_s, A_s, M1 ... as written
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {"mesh", "material", "solver", "cycle", "probes", "output"}
    for s in cp.sections():
        if s not in known:
            raise ConfigError(f"unknown section [{s}]")
    sec = lambda name: cp[name] if cp.has_section(name) else None  # noqa: E731
    d = RunConfig()
    try:
        ms = sec("mesh")
        path, refine, tj = None, 0, TJointParams()
        if ms is not None:
            ms = dict(ms)
            src = ms.pop("source", "tjoint")
            refine = int(ms.pop("refine", "0"))
            if refine < 0:
                raise ConfigError("[mesh] refine must be non-negative")
            if src != "tjoint":
                path = Path(src)
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                if not path.exists():
                    raise ConfigError(f"[mesh] file {path} does not exist")
            cp.read_dict({"_tj": ms})
            tj = TJointParams(**_fields(TJointParams, cp["_tj"], tj))
        mesh = MeshSource(path, tj, refine)

        material = MaterialTable(**_fields(MaterialTable, sec("material"), d.material))
        material.build()

        solver, newton_kw, bcd_kw = d.solver, {}, {}
        ss = sec("solver")
        if ss is not None:
            for key, raw in ss.items():
                if key == "name":
                    solver = raw.strip()
                elif key.startswith("newton_"):
                    newton_kw[key[7:]] = raw
                elif key.startswith("bcd_"):
                    bcd_kw[key[4:]] = raw
                else:
                    raise ConfigError(f"[solver] unknown key {key!r} (use name, newton_*, bcd_*)")
        if solver not in ("newton", "bcd"):
            raise ConfigError(f"[solver] name must be newton or bcd, got {solver!r}")
        cp.read_dict({"_newton": newton_kw, "_bcd": bcd_kw})
        newton = NewtonConfig(**_fields(NewtonConfig, cp["_newton"], d.newton))
        bcd = BCDConfig(**_fields(BCDConfig, cp["_bcd"], d.bcd))

        cycle = LoadCycle(**_fields(LoadCycle, sec("cycle"), d.cycle))

        probes = d.probes
        ps = sec("probes")
        if ps is not None and len(ps):
            names, pts = [], []
            for key, raw in ps.items():
                xy = _floats(raw)
                if len(xy) != 2:
                    raise ConfigError(f"[probes] {key} needs two coordinates")
                names.append(key)
                pts.append(xy)
            probes = ProbeSet(tuple(names), tuple(pts))

        output, depth, threads = d.output, d.depth, d.threads
        os_ = sec("output")
        if os_ is not None:
            for key, raw in os_.items():
                if key == "directory":
                    output = Path(raw)
                elif key == "depth":
                    depth = float(raw)
                elif key == "threads":
                    threads = int(raw)
                else:
                    raise ConfigError(f"[output] unknown key {key!r}")
        if not (depth > 0 and math.isfinite(depth)):
            raise ConfigError("[output] depth must be positive")
        if threads < 1:
            raise ConfigError("[output] threads must be at least 1")
    except ConfigError:
        raise
    except (ValueError, TypeError, MeshError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(mesh, material, solver, newton, bcd, cycle, probes, output, depth, threads)


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: RunConfig) -> str:
    """INI text that parses back to ``cfg``."""
    lines = ["[mesh]", f"source = {cfg.mesh.path if cfg.mesh.path is not None else 'tjoint'}", f"refine = {cfg.mesh.refine}"]
    if cfg.mesh.path is None:
        lines += [f"{f.name} = {_fmt(getattr(cfg.mesh.tjoint, f.name))}" for f in dataclasses.fields(TJointParams)]
    lines += ["", "[material]"]
    lines += [f"{f.name} = {_fmt(getattr(cfg.material, f.name))}" for f in dataclasses.fields(MaterialTable)]
    lines += ["", "[solver]", f"name = {cfg.solver}"]
    lines += [f"newton_{f.name} = {_fmt(getattr(cfg.newton, f.name))}" for f in dataclasses.fields(NewtonConfig)]
    lines += [f"bcd_{f.name} = {_fmt(getattr(cfg.bcd, f.name))}" for f in dataclasses.fields(BCDConfig)]
    lines += ["", "[cycle]"]
    for f in dataclasses.fields(LoadCycle):
        v = getattr(cfg.cycle, f.name)
        if v is not None:
            lines.append(f"{f.name} = {_fmt(v)}")
    lines += ["", "[probes]"]
    lines += [f"{n} = {x!r}, {y!r}" for n, (x, y) in zip(cfg.probes.names, cfg.probes.points)]
    lines += ["", "[output]", f"directory = {cfg.output}", f"depth = {cfg.depth!r}", f"threads = {cfg.threads}"]
    return "\n".join(lines) + "\n"


def benchmark_config_text() -> str:
    return resources.files("hystfem").joinpath("data/benchmark.ini").read_text()
