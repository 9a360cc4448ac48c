"""Render one face-to-face frame end to end and report where the eye markers land.

    python3 scripts/face_to_face_demo.py --out demo_out [--noisy] [--predicted-depth]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from vcube.assembly import AssemblyLayout, transfer_transform, viewpoint_transfer
from vcube.imageio import write_png
from vcube.lumi_render import portrait_camera
from vcube.pipeline import CaptureRig, render_portrait
from vcube.quality_metrics import gaze_pixel_error
from vcube.session.composite import composite
from vcube.synth_world import LEFT_MARKER_COLOR, RIGHT_MARKER_COLOR, NoiseModel, SyntheticScene, render_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo_out")
    ap.add_argument("--frame", type=int, default=0)
    ap.add_argument("--noisy", action="store_true", help="default sensor noise instead of none")
    ap.add_argument("--predicted-depth", action="store_true", help="estimate the virtual depth instead of using truth")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    layout = AssemblyLayout.face_to_face()
    spec = layout.cube(0).spec
    scene = SyntheticScene.default(animate=True)
    receiver, sender = 0, 1
    eye = scene.eye_midpoint(args.frame)
    local = viewpoint_transfer(layout, sender, receiver, eye)
    rig = CaptureRig(spec, scene, NoiseModel(seed=1) if args.noisy else NoiseModel.zero())
    cam = portrait_camera(local)
    exact = None
    if not args.predicted_depth:
        r = render_scene(scene, cam, args.frame, include_room=False)
        exact = np.where(r.figure_mask, r.depth, 0.0)
    result = render_portrait(rig.input_views(local, args.frame), cam, exact_depth=exact, frame_index=args.frame)
    screens = composite(layout, receiver, {sender: result.portrait}, eye)
    for name, img in screens.to_uint8().items():
        write_png(out / f"screen_{name}.png", img)
    color, alpha = result.portrait.to_uint8()
    write_png(out / "portrait_color.png", color)
    write_png(out / "portrait_alpha.png", alpha)

    to_receiver = transfer_transform(layout, receiver, sender)
    front = spec.screens["front"]
    errors = {}
    for k, (name, c) in enumerate((("left", LEFT_MARKER_COLOR), ("right", RIGHT_MARKER_COLOR))):
        marker = to_receiver.apply(scene.eye_markers(args.frame)[k])
        errors[name] = gaze_pixel_error(screens.screens["front"], front, eye, marker, c)
    print(json.dumps({"frame": args.frame, "marker_error_px": errors, "out": str(out)}, indent=2))


if __name__ == "__main__":
    main()
