"""Batch entry point: run a benchmark study and write CSV/VTK outputs.

Typical invocations:

    pffrac --scenario shear --mode adaptive --cycles 2 --out runs/shear
    pffrac --scenario tension --mode uniform --uniform-levels 2 \
           --t-end 0.0001 --out runs/smoke

Outputs under --out: qoi.csv (one row per step per cycle), cycles.csv
(per-step estimator summary), manifest.json, and optionally VTK snapshots
with matching mesh dumps plus per-step estimator dumps.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import adapt
from . import estimator as est
from . import mesh as msh
from . import newton as nt
from . import scenarios as scn


def _g(x: float) -> str:
    return "%.12g" % x


QOI_HEADER = "cycle,step,t,displacement,Fx,Fy,Fx_deg,Fy_deg,Eb,Ec,dofs,eta"
CYCLE_HEADER = "cycle,step,time,dofs,cells,eta1,eta2,eta3,eta4,eta,newton_iters"


def write_qoi_csv(rows, path: Path) -> None:
    """rows: iterable of (cycle, step, QoiRecord), written sorted."""
    rows = sorted(rows, key=lambda r: (r[0], r[1]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(QOI_HEADER + "\n")
        for cycle, step, q in rows:
            fh.write(",".join([
                str(cycle), str(step), _g(q.t), _g(q.displacement),
                _g(q.f_x), _g(q.f_y), _g(q.f_x_deg), _g(q.f_y_deg),
                _g(q.e_bulk), _g(q.e_crack), str(q.dofs), _g(q.eta)]) + "\n")


def write_cycles_csv(rows, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CYCLE_HEADER + "\n")
        for row in rows:
            cycle, step, t, dofs, cells = row[:5]
            fh.write(",".join(
                [str(cycle), str(step), _g(t), str(dofs), str(cells)]
                + [_g(v) for v in row[5:10]] + [str(row[10])]) + "\n")


def write_vtk(state, report, path: Path) -> None:
    """Legacy ASCII unstructured-grid snapshot of one step."""
    space = state.space
    mesh = space.mesh
    pts = mesh.verts[space.vused]
    conn = space.conn_u
    phi_v = space.vertex_values(state.phi.coeffs)
    u_v = space.vertex_values(state.u.components())
    nv = len(pts)

    lam_v = np.zeros(nv)
    eta_v = np.zeros(nv)
    cls_v = np.full(nv, -1, dtype=np.int64)
    dofs = space.v2dof[space.vused]
    have = dofs >= 0
    lam_v[have] = state.lam[dofs[have]]
    if report is not None:
        node_eta = report.node_eta()
        eta_v[have] = node_eta[dofs[have]]
        cls_v[have] = report.nodes.node_class[dofs[have]]
        exc = np.zeros(nv, dtype=bool)
        exc[have] = report.nodes.excluded[dofs[have]]
        cls_v[exc] = 3
    indicators = (report.cell_indicators if report is not None
                  else np.zeros(len(conn)))

    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"pffrac step t={_g(state.t)}\n")
        fh.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {nv} double\n")
        for p in pts:
            fh.write(f"{_g(p[0])} {_g(p[1])} 0\n")
        fh.write(f"CELLS {len(conn)} {5 * len(conn)}\n")
        for c in conn:
            fh.write(f"4 {c[0]} {c[1]} {c[2]} {c[3]}\n")
        fh.write(f"CELL_TYPES {len(conn)}\n")
        fh.write("9\n" * len(conn))
        fh.write(f"POINT_DATA {nv}\n")
        fh.write("SCALARS phi double\nLOOKUP_TABLE default\n")
        fh.writelines(_g(v) + "\n" for v in phi_v)
        fh.write("VECTORS u double\n")
        fh.writelines(f"{_g(v[0])} {_g(v[1])} 0\n" for v in u_v)
        fh.write("SCALARS lambda double\nLOOKUP_TABLE default\n")
        fh.writelines(_g(v) + "\n" for v in lam_v)
        fh.write("SCALARS eta_node double\nLOOKUP_TABLE default\n")
        fh.writelines(_g(v) + "\n" for v in eta_v)
        fh.write("SCALARS node_class int\nLOOKUP_TABLE default\n")
        fh.writelines(f"{v}\n" for v in cls_v)
        fh.write(f"CELL_DATA {len(conn)}\n")
        fh.write("SCALARS indicator double\nLOOKUP_TABLE default\n")
        fh.writelines(_g(v) + "\n" for v in indicators)
        fh.write("SCALARS level int\nLOOKUP_TABLE default\n")
        fh.writelines(f"{mesh.level[c]}\n"
                      for c in mesh.active_cells)


def write_estimator_dump(state, report, path: Path) -> None:
    space = state.space
    xy = space.dof_coords()
    n = report.nodes
    with open(path, "w", encoding="utf-8") as fh:
        for p in range(space.ndof):
            fh.write(" ".join([
                str(p), _g(xy[p, 0]), _g(xy[p, 1]),
                str(int(n.node_class[p])), _g(n.alpha[p]), _g(n.s_p[p]),
                _g(n.eta1[p]), _g(n.eta2[p]), _g(n.eta3[p]),
                _g(n.eta4[p])]) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pffrac",
        description="Phase-field fracture benchmarks with adaptive meshes")
    p.add_argument("--scenario", choices=("shear", "tension"))
    p.add_argument("--mode", choices=("uniform", "adaptive"),
                   default="adaptive")
    p.add_argument("--cycles", type=int)
    p.add_argument("--uniform-levels", type=int)
    p.add_argument("--eps-factor", type=float, choices=(2.0, 1.0, 0.5))
    p.add_argument("--theta", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--out", default="out")
    p.add_argument("--config", help="key = value overrides file")
    p.add_argument("--dump-estimator", action="store_true")
    p.add_argument("--vtk-every", type=int, default=0, metavar="K",
                   help="write VTK and mesh dumps every K-th step")
    return p


def _build_config(args, parser) -> scn.ScenarioConfig:
    if args.scenario is None and args.config is None:
        parser.error("--scenario is required (or provide --config)")
    if args.mode == "uniform" and args.cycles is not None:
        parser.error("--cycles conflicts with --mode uniform")
    if args.mode == "adaptive" and args.uniform_levels is not None:
        parser.error("--uniform-levels conflicts with --mode adaptive")
    if args.scenario is not None:
        config = scn.preset(args.scenario)
        if args.config:
            config = scn.load_config_file(args.config, base=config)
    else:
        config = scn.load_config_file(args.config)
    overrides = []
    if args.eps_factor is not None:
        overrides.append(f"eps_factor = {args.eps_factor}")
    if args.theta is not None:
        overrides.append(f"theta = {args.theta}")
    if args.dt is not None:
        overrides.append(f"dt = {args.dt}")
    if args.t_end is not None:
        overrides.append(f"t_end = {args.t_end}")
    if args.cycles is not None:
        overrides.append(f"cycles = {args.cycles}")
    if args.uniform_levels is not None:
        overrides.append(f"uniform_levels = {args.uniform_levels}")
    if overrides:
        config = scn.apply_overrides(config, "\n".join(overrides))
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _build_config(args, parser)
    except scn.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    qoi_rows = []
    cycle_rows = []
    params = config.material()
    ncfg = nt.NewtonConfig()
    adaptive = args.mode == "adaptive"
    if adaptive:
        horizon = adapt.Horizon.initial(config)
        n_cycles = config.cycles
    else:
        mesh = msh.uniform_refine(msh.coarse_mesh(config.name),
                                  config.uniform_levels or 0)
        horizon = adapt.Horizon.initial(config, mesh)
        n_cycles = 1

    failure = None
    for cycle in range(n_cycles):
        try:
            adapt.run_cycle(horizon, params, ncfg, estimate_steps=adaptive)
        except nt.NewtonError as exc:
            failure = f"cycle {cycle}: {exc}"
            break
        for k, rec in enumerate(horizon.steps):
            step = k + 1
            qoi_rows.append((cycle, step, rec.qoi))
            rep = rec.report
            cycle_rows.append(
                (cycle, step, rec.qoi.t, rec.qoi.dofs,
                 len(rec.state.mesh.active_cells),
                 rep.eta1 if rep else 0.0, rep.eta2 if rep else 0.0,
                 rep.eta3 if rep else 0.0, rep.eta4 if rep else 0.0,
                 rep.eta if rep else 0.0, rec.log.iterations))
            if args.vtk_every and step % args.vtk_every == 0:
                vtk_dir = out / "vtk"
                vtk_dir.mkdir(exist_ok=True)
                name = f"step_{step:04d}_cycle{cycle}.vtk"
                write_vtk(rec.state, rep, vtk_dir / name)
                files.append(f"vtk/{name}")
                mesh_dir = out / "mesh"
                mesh_dir.mkdir(exist_ok=True)
                mname = f"mesh_step_{step:04d}_cycle{cycle}.txt"
                (mesh_dir / mname).write_text(rec.state.mesh.dump(),
                                              encoding="utf-8")
                files.append(f"mesh/{mname}")
            if args.dump_estimator and rep is not None:
                est_dir = out / "estimator"
                est_dir.mkdir(exist_ok=True)
                ename = f"est_step_{step:04d}_cycle{cycle}.txt"
                write_estimator_dump(rec.state, rep, est_dir / ename)
                files.append(f"estimator/{ename}")
        if adaptive and cycle + 1 < n_cycles:
            adapt.adapt_step(horizon)

    write_qoi_csv(qoi_rows, out / "qoi.csv")
    files.append("qoi.csv")
    write_cycles_csv(cycle_rows, out / "cycles.csv")
    files.append("cycles.csv")

    manifest = {
        "config": {
            "name": config.name, "mode": args.mode,
            "lambda": config.lam, "mu": config.mu, "g_c": config.g_c,
            "kappa": config.kappa, "dt": config.dt, "t_end": config.t_end,
            "pre_refinements": config.pre_refinements,
            "eps_factor": config.eps_factor, "theta": config.theta,
            "cycles": n_cycles, "uniform_levels": config.uniform_levels,
        },
        "realized": {
            "h_start_mm": config.h_start, "epsilon_mm": config.epsilon,
            "strip_mm": config.strip, "n_steps": config.n_steps,
        },
        "files": files + ["manifest.json"],
        "status": "failed" if failure else "ok",
    }
    if failure:
        manifest["error"] = failure
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")

    if failure:
        print(f"error: {failure}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
