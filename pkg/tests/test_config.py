import dataclasses
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from hystfem.config import (
    ConfigError,
    MaterialTable,
    MeshSource,
    RunConfig,
    benchmark_config_text,
    dump_config,
    load_config,
    parse_config,
)
from hystfem.driver import LoadCycle
from hystfem.mesh import generate_tjoint


def test_benchmark_config():
    cfg = parse_config(benchmark_config_text(), base_dir=Path(__file__).parent / "../src/hystfem/data")
    assert cfg.solver == "newton"
    assert cfg.material.form_coeff == 1 and cfg.material.eps == 1e-10
    assert cfg.cycle == LoadCycle()
    assert cfg.probes.names == ("M1", "M2", "M3", "M4", "M5", "M6")
    mesh = cfg.mesh.build()
    assert mesh.n_nodes == generate_tjoint().n_nodes


def test_empty_config_gives_defaults():
    assert parse_config("") == RunConfig()


def test_dump_parse_roundtrip_defaults():
    cfg = RunConfig()
    assert parse_config(dump_config(cfg)) == cfg


@given(
    st.floats(1e-6, 1.0),
    st.integers(1, 400),
    st.sampled_from(["newton", "bcd"]),
    st.floats(1e-12, 1e-2),
    st.integers(0, 3),
)
def test_dump_parse_roundtrip(amp, n, solver, tol, refine):
    cfg = RunConfig(
        solver=solver,
        cycle=LoadCycle(n_steps=n, flux_amplitude=amp),
        mesh=MeshSource(refine=refine),
        newton=dataclasses.replace(RunConfig().newton, rel_tol=tol),
    )
    assert parse_config(dump_config(cfg)) == cfg


def test_mesh_file_relative_to_config(tmp_path):
    from hystfem.mesh import dump_mesh
    from hystfem.oracle import gated_square_mesh

    (tmp_path / "sq.mesh").write_text(dump_mesh(gated_square_mesh()))
    (tmp_path / "run.ini").write_text("[mesh]\nsource = sq.mesh\nrefine = 1\n")
    cfg = load_config(tmp_path / "run.ini")
    assert cfg.mesh.build().n_triangles == 32


@pytest.mark.parametrize(
    "text, match",
    [
        ("[bogus]\n", "unknown section"),
        ("[cycle]\nwobble = 1\n", "unknown key"),
        ("[cycle]\nn_steps = many\n", "invalid literal"),
        ("[cycle]\nphases = 0, 1, 2\n", "flux balance"),
        ("[solver]\nname = cg\n", "newton or bcd"),
        ("[solver]\ntolerance = 1\n", "unknown key"),
        ("[solver]\nnewton_sigma = 2\n", "sigma"),
        ("[material]\nJ_s = 0.1, 0.2\nchi = 1\n", "same number"),
        ("[material]\nA_s = -5\n", "A_s"),
        ("[mesh]\nsource = nowhere.mesh\n", "does not exist"),
        ("[mesh]\nrefine = -1\n", "non-negative"),
        ("[mesh]\nmesh_size = 0\n", "infeasible"),
        ("[probes]\nM1 = 0.1\n", "two coordinates"),
        ("[output]\ndepth = 0\n", "depth"),
        ("[output]\nthreads = 0\n", "threads"),
        ("[output]\ncolor = red\n", "unknown key"),
        ("no section header\n", "malformed"),
    ],
)
def test_invalid_configs(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "absent.ini")


def test_material_table_builds_cells():
    m = MaterialTable(J_s=(0.2, 0.3), chi=(0.0, 5.0), form_coeff=2).build()
    assert m.K == 2 and m.cells[1].chi == 5.0 and m.cells[0].form_coeff == 2
