"""Initial vs. refined virtual-view depth RMSE on the tilted textured panel across settings.

    python3 scripts/depth_sweep.py --seeds 5 --counts 8 16 32 --deltas 0.03 0.05 --noise 0.01 0.02
"""

import argparse
import csv
import itertools
import sys

import numpy as np

from vcube.assembly import CubeSpec, select_input_cameras
from vcube.lumi_render import portrait_camera
from vcube.synth_world import NoiseModel, SyntheticScene, corrupt, render_background, render_scene, segment_foreground
from vcube.view_depth import DepthConfig, InputView, predict_depth


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--counts", type=int, nargs="+", default=[16])
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.05])
    ap.add_argument("--noise", type=float, nargs="+", default=[0.02], help="depth noise std in metres")
    ap.add_argument("--aggregation", choices=["aligned", "slice"], default="aligned")
    ap.add_argument("--scene", choices=["panel", "figure"], default="panel")
    args = ap.parse_args()

    spec = CubeSpec.default()
    scene = (SyntheticScene.panel(yaw=0.25, pitch=0.15) if args.scene == "panel"
             else SyntheticScene.default(animate=False))
    viewpoint = np.array([0.0, 1.2, -1.0])
    virtual = portrait_camera(viewpoint)
    truth = render_scene(scene, virtual.resampled(4), 0, include_room=False)
    selected = select_input_cameras(spec, viewpoint)
    clean = {i: render_scene(scene, spec.cameras[i]) for i in selected}
    plates = {i: render_background(scene, spec.cameras[i], NoiseModel(seed=0), i) for i in selected}

    writer = csv.writer(sys.stdout)
    writer.writerow(["depth_std", "count", "delta", "initial_mm", "refined_mm", "ratio"])
    for std, count, delta in itertools.product(args.noise, args.counts, args.deltas):
        config = DepthConfig(delta=delta, count=count, aggregation=args.aggregation)
        initial, refined = [], []
        for seed in range(args.seeds):
            noise = NoiseModel(depth_std=std, seed=seed)
            views = []
            for i in selected:
                f = corrupt(clean[i], noise, i, seed, 0)
                m = segment_foreground(f, plates[i])
                views.append(InputView(f.color, np.where(m, f.depth, 0.0), m, spec.cameras[i], i))
            res = predict_depth(views, virtual, config)
            fg = truth.figure_mask & res.union
            initial.append(np.sqrt(np.mean((res.initial - truth.depth)[fg] ** 2)))
            refined.append(np.sqrt(np.mean((res.refined - truth.depth)[fg] ** 2)))
        i_mm, r_mm = 1000 * np.mean(initial), 1000 * np.mean(refined)
        writer.writerow([std, count, delta, f"{i_mm:.2f}", f"{r_mm:.2f}", f"{r_mm / i_mm:.3f}"])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
