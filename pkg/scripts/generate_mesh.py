"""Write a T-joint mesh (optionally refined) in the mesh2d text format.

    python scripts/generate_mesh.py out/tjoint.mesh --mesh-size 0.06 --refine 1
"""

from __future__ import annotations

import argparse
import dataclasses
from pathlib import Path

from hystfem.mesh import TJointParams, dump_mesh, euler_characteristic, generate_tjoint, n_free_nodes, refine_uniform


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("path")
    for f in dataclasses.fields(TJointParams):
        ap.add_argument("--" + f.name.replace("_", "-"), type=float, default=f.default)
    ap.add_argument("--refine", type=int, default=0)
    args = ap.parse_args()
    params = TJointParams(**{f.name: getattr(args, f.name) for f in dataclasses.fields(TJointParams)})
    mesh = generate_tjoint(params)
    for _ in range(args.refine):
        mesh = refine_uniform(mesh)
    note = f"T-joint {params}, {args.refine} uniform refinements"
    Path(args.path).write_text(dump_mesh(mesh, comment=note))
    print(f"{args.path}: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles, {n_free_nodes(mesh)} free, "
          f"Euler characteristic {euler_characteristic(mesh)}")


if __name__ == "__main__":
    main()
