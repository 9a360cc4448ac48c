"""Command-line entry point: ``vcube <subcommand> [--config FILE] [--section.field VALUE ...]``.

Exit codes: 0 ok, 2 configuration error, 3 validation failure, 4 runtime
error. Failures print one JSON object on stderr. Every run writes
``config.json`` and ``manifest.json`` into the output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import select_input_cameras, validate_layout
from .config import INVENTED, OUTPUT_ENV, ScenarioConfig, leaves
from .errors import ConfigError, InvalidLayout
from .gaze_track import track, write_viewpoints_csv
from .imageio import (read_pfm, read_pgm, read_png, read_portrait, read_ppm, write_pfm, write_pgm, write_png,
                      write_portrait, write_ppm, write_volume)
from .lumi_render import portrait_camera
from .pipeline import render_portrait
from .quality_metrics import (MetricReport, alpha_mse, depth_rmse, photometric_discrepancy, psnr,
                              smoothness_energy)
from .session.schedule import schedule
from .synth_world import render_scene

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4


class ValidationFailed(Exception):
    def __init__(self, message: str, details=None):
        super().__init__(message)
        self.details = details or []


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# ---------------------------------------------------------------- run bookkeeping

class Run:
    """Output directory, file registry and manifest of one invocation."""

    def __init__(self, command: str, config: ScenarioConfig, out: Path):
        self.command, self.config, self.out = command, config, out
        self.files: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def write_json(self, rel: str, obj) -> Path:
        p = self.path(rel)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        return p

    def finish(self) -> None:
        self.config.save(self.out / "config.json")
        import numba
        import scipy
        import PIL

        outputs = {}
        for p in sorted(set(self.files)):
            if p.exists():
                outputs[str(p.relative_to(self.out))] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest = {
            "command": self.command,
            "config_sha256": self.config.digest(),
            "seed": self.config.run.seed,
            "versions": {"vcube": __version__, "python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__, "numba": numba.__version__, "pillow": PIL.__version__},
            "outputs": outputs,
        }
        (self.out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- subcommands

def cmd_validate(cfg: ScenarioConfig, args, run: Run) -> int:
    layout = cfg.build_layout()
    violations = validate_layout(layout)
    report = {"topology": layout.topology, "cubes": layout.ids,
              "violations": [{"rule": v.rule, "cube_a": v.cube_a, "cube_b": v.cube_b, "detail": v.detail}
                             for v in violations]}
    run.write_json("validate.json", report)
    print(json.dumps(report, sort_keys=True))
    if violations:
        raise ValidationFailed(f"{len(violations)} layout violation(s)", report["violations"])
    return EXIT_OK


def _checked_layout(cfg: ScenarioConfig):
    layout = cfg.build_layout()
    violations = validate_layout(layout)
    if violations:
        raise ValidationFailed("invalid layout", [v.detail for v in violations])
    return layout


def cmd_capture(cfg: ScenarioConfig, args, run: Run) -> int:
    layout = _checked_layout(cfg)
    rig = cfg.build_rigs(layout)[args.cube]
    for i, cam in enumerate(rig.spec.cameras):
        frame = rig.capture(i, args.frame)
        bg = rig.background(i)
        view = rig.input_view(i, args.frame)
        write_ppm(run.path(f"cam{i}_color.ppm"), frame.color)
        write_pfm(run.path(f"cam{i}_depth.pfm"), frame.depth)
        write_pgm(run.path(f"cam{i}_mask.pgm"), view.mask)
        write_ppm(run.path(f"cam{i}_background_color.ppm"), bg.color)
        write_pfm(run.path(f"cam{i}_background_depth.pfm"), bg.depth)
    vp = track(rig.scene, rig.spec.cameras, args.frame, cfg.noise.detector_px, seed=cfg.run.seed)
    write_viewpoints_csv(run.path("viewpoint.csv"), [vp])
    print(json.dumps({"cube": args.cube, "frame": args.frame, "cameras": len(rig.spec.cameras),
                      "viewpoint": vp.position.tolist(), "viewpoint_valid": vp.valid}))
    return EXIT_OK


def cmd_render(cfg: ScenarioConfig, args, run: Run) -> int:
    layout = _checked_layout(cfg)
    rigs = cfg.build_rigs(layout)
    p = cfg.pipeline
    rconf = p.render_config()
    if args.identity is not None:
        rig = rigs[args.sender]
        virtual = rig.spec.cameras[args.identity]
        others = [i for i in select_input_cameras(rig.spec, virtual.center, len(rig.spec.cameras))
                  if i != args.identity]
        views = [rig.input_view(i, args.frame) for i in [args.identity] + others[: p.input_views - 1]]
    else:
        conf = cfg.build_conference(layout)
        eye = conf.viewpoint(args.receiver, args.frame)
        from .assembly import viewpoint_transfer

        local = viewpoint_transfer(layout, args.sender, args.receiver, eye)
        rig = rigs[args.sender]
        virtual = portrait_camera(local, p.portrait_focal, p.portrait_width, p.portrait_height)
        views = rig.input_views(local, args.frame, p.input_views)
    truth = render_scene(rig.scene, virtual, args.frame, include_room=False)
    true_depth = np.where(truth.figure_mask, truth.depth, 0.0)
    out = render_portrait(views, virtual, rconf, exact_depth=true_depth if args.exact_depth else None,
                          source_cube=args.sender, viewpoint=virtual.center, frame_index=args.frame)
    write_pfm(run.path("depth.pfm"), out.depth)
    for w, view in zip(out.warped, views):
        write_pgm(run.path(f"visible_cam{view.camera_id}.pgm"), w.mask)
    for k, view in enumerate(views):
        write_pfm(run.path(f"weight_cam{view.camera_id}.pfm"), out.weights.full[k])
    stems = write_portrait(run.out / "portrait", out.portrait)
    run.files.extend(stems)
    if out.depth_result is not None and args.dump_volumes:
        write_volume(run.path("cost.vcvl"), np.moveaxis(np.where(np.isfinite(out.depth_result.cost),
                                                                 out.depth_result.cost, -1.0), -1, 0))
        write_volume(run.path("probability.vcvl"), np.moveaxis(out.depth_result.prob, -1, 0))
    report = MetricReport(frames=[args.frame])
    fg = true_depth > 0
    both = fg & (out.depth > 0)
    if both.any():
        report.depth_rmse = depth_rmse(out.depth, true_depth, both)
        report.masks["depth"] = "ground-truth figure mask and rendered depth > 0"
    report.smoothness_energy = smoothness_energy(out.depth)
    report.photometric_discrepancy = photometric_discrepancy(out.blended, [w.color for w in out.warped],
                                                             [w.mask for w in out.warped])
    extra = {}
    if args.identity is not None:
        ref = views[0]
        straight = out.portrait.straight()
        report.psnr_foreground = psnr(np.rint(straight), ref.color, ref.mask)
        report.psnr_full = psnr(np.rint(out.portrait.color), np.where(ref.mask[..., None], ref.color, 0.0))
        report.alpha_mse = alpha_mse(out.portrait.alpha, ref.mask.astype(np.float64))
        report.masks["psnr_foreground"] = f"segmentation mask of camera {args.identity}"
        diff = np.abs(straight - ref.color).max(axis=-1)[ref.mask]
        extra["fraction_within_2_levels"] = float(np.mean(diff <= 2.0))
    d = report.to_dict()
    d.update(extra)
    run.write_json("metrics.json", d)
    print(json.dumps(d, sort_keys=True))
    return EXIT_OK


def cmd_simulate(cfg: ScenarioConfig, args, run: Run) -> int:
    layout = _checked_layout(cfg)
    sizes: dict = {}
    frames = sorted(set(cfg.run.screen_frames))
    if frames:
        conf = cfg.build_conference(layout)
        for k in frames:
            step = conf.step(k)
            for key, n in step.encoded_bytes.items():
                sizes.setdefault(key, []).append(n)
            if args.dump_screens:
                for r, res in step.screens.items():
                    for name, img in res.to_uint8().items():
                        write_png(run.path(f"screens/frame{k:05d}_cube{r}_{name}.png"), img)
            if args.dump_portraits:
                for (s, r), pf in step.portraits.items():
                    run.files.extend(write_portrait(run.out / f"portraits/frame{k:05d}_{s}to{r}", pf))
    per_stream = {key: int(round(float(np.mean(v)))) for key, v in sizes.items()}
    trace = schedule(layout, cfg.stages.build(), cfg.run.duration,
                     lambda s, r, k: per_stream.get((s, r), 0))
    trace.write_jsonl(run.path("trace.jsonl"))
    summary = trace.summary()
    summary["encoded_bytes_per_frame"] = {f"{s}->{r}": n for (s, r), n in sorted(per_stream.items())}
    run.write_json("summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _read_image(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".ppm"):
        return read_ppm(path)
    if path.endswith(".pgm"):
        return read_pgm(path)
    return read_png(path)


def cmd_metrics(cfg: ScenarioConfig, args, run: Run) -> int:
    report = MetricReport()
    extra = {}
    if args.portrait:
        pf = read_portrait(args.portrait)
        if args.reference:
            ref = _read_image(args.reference).astype(np.float64)[..., :3]
            mask = read_pgm(args.mask) > 127 if args.mask else pf.alpha > 0
            report.psnr_foreground = psnr(np.rint(pf.straight()), ref, mask)
            report.psnr_full = psnr(np.rint(pf.color), np.where(mask[..., None], ref, 0.0))
            report.masks["psnr_foreground"] = args.mask or "portrait alpha > 0"
        if args.reference_alpha:
            ra = _read_image(args.reference_alpha).astype(np.float64) / 255.0
            report.alpha_mse = alpha_mse(pf.alpha, ra)
    if args.depth:
        d = read_pfm(args.depth).astype(np.float64)
        report.smoothness_energy = smoothness_energy(d)
        if args.reference_depth:
            rd = read_pfm(args.reference_depth).astype(np.float64)
            m = (rd > 0) & (d > 0)
            report.depth_rmse = depth_rmse(d, rd, m)
            report.masks["depth"] = "both depths > 0"
    if args.trace:
        start, end = {}, {}
        with open(args.trace) as fh:
            for line in fh:
                ev = json.loads(line)
                key = (ev["sender"], ev["receiver"], ev["frame"])
                if ev["stage"] == "acquire":
                    start[key] = ev["enter_ms"]
                elif ev["stage"] == "display":
                    end[key] = ev["exit_ms"]
        lat = [end[k] - start[k] for k in end]
        extra["displayed_frames"] = len(lat)
        extra["latency_ms_mean"] = float(np.mean(lat)) if lat else None
    d = report.to_dict()
    d.update(extra)
    run.write_json("metrics.json", d)
    print(json.dumps(d, sort_keys=True))
    return EXIT_OK


def cmd_bench(cfg: ScenarioConfig, args, run: Run) -> int:
    from .lumi_render import blend, blend_scores, postprocess, upsample_depth, warp_inputs
    from .session.composite import composite
    from .session.wire import decode_portrait, encode_portrait
    from .view_depth import predict_depth
    from .assembly import viewpoint_transfer

    layout = _checked_layout(cfg)
    conf = cfg.build_conference(layout)
    p = cfg.pipeline
    rconf = p.render_config()
    ids = layout.ids
    receiver, sender = ids[0], ids[1]
    timings: dict = {}

    def timed(name, fn, *a, **kw):
        t0 = time.perf_counter()
        r = fn(*a, **kw)
        timings.setdefault(name, []).append(time.perf_counter() - t0)
        return r

    for rep in range(args.repeat):
        eye = timed("track", conf.viewpoint, receiver, rep)
        local = viewpoint_transfer(layout, sender, receiver, eye)
        rig = conf.participants[sender].rig
        virtual = conf.portrait_camera(local)
        views = timed("capture_segment", rig.input_views, local, rep, p.input_views)
        res = timed("depth", predict_depth, views, virtual, rconf.depth)
        depth = upsample_depth(res.refined, res.union, virtual.shape)
        warped = timed("warp", warp_inputs, views, depth, virtual, rconf.occlusion_tol, rconf.self_occlusion_tol,
                       rconf.min_tap_weight)
        weights = timed("blend_weights", blend_scores, warped, rconf.lambda_depth, rconf.lambda_angle)
        blended = timed("blend", blend, warped, weights)
        union = np.logical_or.reduce([w.mask for w in warped])
        pf = timed("postprocess", postprocess, blended, union, depth > 0, rconf.max_hole, sender, local, rep)
        wire = timed("encode", encode_portrait, pf, p.quality)
        back = timed("decode", decode_portrait, wire.to_bytes())
        timed("composite", composite, layout, receiver, {sender: back}, eye,
              cameras={sender: virtual})
    result = {name: {"mean_ms": 1000 * float(np.mean(v)), "min_ms": 1000 * float(np.min(v)), "runs": len(v)}
              for name, v in timings.items()}
    result["total_mean_ms"] = sum(r["mean_ms"] for r in result.values())
    run.write_json("bench.json", result)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "capture": cmd_capture, "render": cmd_render, "simulate": cmd_simulate,
            "metrics": cmd_metrics, "bench": cmd_bench}


# ---------------------------------------------------------------- argument parsing

def _override_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="scenario JSON file (defaults < file < flags)")
    parent.add_argument("--output-dir", help=f"output directory (overrides ${OUTPUT_ENV} and run.output_dir)")
    parent.add_argument("--duration", type=float, help="alias of --run.duration (seconds)")
    parent.add_argument("--seed", type=int, help="alias of --run.seed")
    parent.add_argument("--quality", type=int, help="alias of --pipeline.quality")
    group = parent.add_argument_group("config overrides (JSON values)")
    for path, default in leaves():
        tag = " [invented]" if path in INVENTED else ""
        group.add_argument(f"--{path}", dest=f"set:{path}", metavar="V",
                           help=f"default {json.dumps(default)}{tag}")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vcube", description="Multi-cube 3D video conferencing simulator.")
    parser.add_argument("--version", action="version", version=f"vcube {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parent = _override_parent()
    p = sub.add_parser("validate", parents=[parent], help="check the layout rules")
    p = sub.add_parser("capture", parents=[parent], help="dump RGBD frames, masks and backgrounds of one cube")
    p.add_argument("--cube", type=int, default=0)
    p.add_argument("--frame", type=int, default=0)
    p = sub.add_parser("render", parents=[parent], help="synthesize one portrait")
    p.add_argument("--sender", type=int, default=1)
    p.add_argument("--receiver", type=int, default=0)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--identity", type=int, metavar="CAM",
                   help="render at input camera CAM of the sender instead of the receiver's viewpoint")
    p.add_argument("--exact-depth", action="store_true", help="use ground-truth virtual depth")
    p.add_argument("--dump-volumes", action="store_true", help="write cost and probability volumes")
    p = sub.add_parser("simulate", parents=[parent], help="timed session with rendered screens")
    p.add_argument("--dump-screens", action="store_true", help="write screen PNGs for run.screen_frames")
    p.add_argument("--dump-portraits", action="store_true", help="write decoded portrait PNGs")
    p = sub.add_parser("metrics", parents=[parent], help="metric report from dumped artifacts")
    p.add_argument("--portrait", help="portrait stem (reads <stem>_color.png and <stem>_alpha.png)")
    p.add_argument("--reference", help="reference color image (PPM or PNG)")
    p.add_argument("--reference-alpha", help="reference alpha image (PGM or PNG)")
    p.add_argument("--mask", help="foreground mask (PGM)")
    p.add_argument("--depth", help="depth map (PFM)")
    p.add_argument("--reference-depth", help="reference depth map (PFM)")
    p.add_argument("--trace", help="trace JSON-lines file")
    p = sub.add_parser("bench", parents=[parent], help="wall-clock stage timings on this machine")
    p.add_argument("--repeat", type=int, default=1)
    return parser


def load_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    for key, value in sorted(vars(args).items()):
        if key.startswith("set:") and value is not None:
            cfg.set(key[4:], value)
    for alias, path in (("duration", "run.duration"), ("seed", "run.seed"), ("quality", "pipeline.quality")):
        if getattr(args, alias, None) is not None:
            cfg.set(path, getattr(args, alias))
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args)
        run = Run(args.command, cfg, cfg.output_dir(args.output_dir))
        code = COMMANDS[args.command](cfg, args, run)
        run.finish()
        return code
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, e)
    except (ValidationFailed, InvalidLayout) as e:
        return _fail(EXIT_VALIDATION, e, getattr(e, "details", None))
    except Exception as e:  # noqa: BLE001
        return _fail(EXIT_RUNTIME, e)


def _fail(code: int, err: Exception, details=None) -> int:
    payload = {"error": type(err).__name__, "message": str(err), "exit_code": code}
    if details:
        payload["details"] = details
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
