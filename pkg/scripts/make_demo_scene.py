"""Generate a ready-to-run two-component demo scene.

Writes a pinned bar mesh, a scene file with two painted priors (one around
the free tip, one around the middle), and a load schedule that alternates
between the two regions so the component switch is visible in scripted
runs. Point the CLI at the result:

    python scripts/make_demo_scene.py demo/
    forcedual build --config demo/scene.json --out demo/build
    forcedual simulate --config demo/scene.json --out demo/run.fdl --verbose
    forcedual serve --config demo/scene.json
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from forcedual.meshes import bar_mesh, save_tetgen


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir", nargs="?", default="demo")
    ap.add_argument("--cells", type=int, nargs=3, default=[10, 3, 3])
    ap.add_argument("--dimension", type=int, default=12)
    args = ap.parse_args(argv)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mesh = bar_mesh(cells=tuple(args.cells), length=1.6, width=0.3, height=0.3)
    save_tetgen(mesh, str(out / "bar"))

    span = mesh.vertices[:, 0].max()
    mid_y = float(mesh.vertices[:, 1].max() / 2)
    mid_z = float(mesh.vertices[:, 2].max() / 2)
    tip_center = [float(span), mid_y, mid_z]
    mid_center = [float(span) / 2, mid_y, mid_z]
    scene = {
        "version": 1,
        "mesh": {"path": "bar.node", "format": "tetgen"},
        "pins": {"box": [[-1, -1, -1], [1e-9, 9, 9]]},
        "mixture": {
            "components": [
                {"type": "painted", "center": tip_center, "radius": 0.25,
                 "label": "tip"},
                {"type": "painted", "center": mid_center, "radius": 0.25,
                 "label": "mid"},
            ],
            "weights": [0.5, 0.5],
            "hysteresis": {"margin": 1.5, "patience": 3},
        },
        "subspace": {"dimension": args.dimension, "skinning": False},
        "simulation": {"damping": [2.0, 0.0],
                       "schedule": "schedule.json"},
        "service": {"frame_rate": 60.0},
    }
    (out / "scene.json").write_text(json.dumps(scene, indent=2) + "\n")

    tip_v = int(np.argmin(np.linalg.norm(mesh.vertices - tip_center, axis=1)))
    mid_v = int(np.argmin(np.linalg.norm(mesh.vertices - mid_center, axis=1)))
    schedule = {
        "version": 1,
        "steps": 240,
        "record_positions": True,
        "events": [
            {"type": "point_load", "step": 0, "vertex": tip_v,
             "force": [0.0, 0.0, -30.0]},
            {"type": "clear_loads", "step": 80},
            {"type": "point_load", "step": 80, "vertex": mid_v,
             "force": [0.0, 0.0, -30.0]},
            {"type": "clear_loads", "step": 160},
            {"type": "point_load", "step": 160, "vertex": tip_v,
             "force": [0.0, 30.0, 0.0]},
        ],
    }
    (out / "schedule.json").write_text(json.dumps(schedule, indent=2) + "\n")
    print(f"wrote {out}/bar.node, {out}/bar.ele, {out}/scene.json, "
          f"{out}/schedule.json ({mesh.num_vertices} vertices, "
          f"loads at vertices {tip_v} and {mid_v})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
