"""Scenario configuration: one JSON document describing a complete run.

Every section is a flat dataclass of scalars (plus a few lists), so the file
round-trips exactly and each leaf can be overridden from the command line as
``--section.field``. Fields listed in ``INVENTED`` have defaults chosen here
for this simulator with no reference value behind them; the CLI marks them
in ``--help``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .assembly import CAMERA_FOCAL, IMAGE_HEIGHT, IMAGE_WIDTH, SEAT, AssemblyLayout, CubeSpec, PlacedCube
from .errors import ConfigError
from .geometry import RigidTransform
from .lumi_render import (HOLE_MAX_AREA, LAMBDA_ANGLE, LAMBDA_DEPTH, MIN_TAP_WEIGHT, OCCLUSION_TOL,
                          PORTRAIT_FOCAL, SELF_OCCLUSION_TOL)
from .pipeline import CaptureRig, RenderConfig
from .session.schedule import StageModel
from .synth_world import NoiseModel, SyntheticScene
from .view_depth import DepthConfig

OUTPUT_ENV = "VCUBE_OUTPUT_DIR"
SCHEMA_VERSION = 1


@dataclass
class LayoutConfig:
    topology: str = "face-to-face"
    count: int = 3  # round-table only
    gap: float = 0.0  # face-to-face only
    overlap: float = 0.4  # side-by-side only
    radius: float = 0.5  # round-table only
    seat: list = field(default_factory=lambda: list(SEAT))
    focal: float = CAMERA_FOCAL
    width: int = IMAGE_WIDTH
    height: int = IMAGE_HEIGHT
    placements: list | None = None  # optional explicit [{"rotation", "translation"}] per cube

    def build(self) -> AssemblyLayout:
        spec = CubeSpec.default(tuple(self.seat), self.focal, self.width, self.height)
        if self.placements is not None:
            cubes = tuple(PlacedCube(i, spec, RigidTransform.from_dict(p)) for i, p in enumerate(self.placements))
            return AssemblyLayout(cubes, self.topology)
        kw = {"face-to-face": {"gap": self.gap}, "side-by-side": {"overlap": self.overlap},
              "round-table": {"count": self.count, "radius": self.radius}}.get(self.topology)
        if kw is None:
            raise ConfigError(f"unknown topology {self.topology!r}")
        return AssemblyLayout.build(self.topology, spec=spec, **kw)


@dataclass
class SceneConfig:
    kind: str = "figure"  # "figure" or "panel"
    animate: bool = True
    detail: float = 1.0
    panel_yaw: float = 0.25
    panel_pitch: float = 0.15

    def build(self, seat, variant: int = 0) -> SyntheticScene:
        if self.kind == "figure":
            return SyntheticScene.default(tuple(seat), variant=variant, animate=self.animate, detail=self.detail)
        if self.kind == "panel":
            s = tuple(seat)
            return SyntheticScene.panel((s[0], s[1] - 0.15, s[2]), yaw=self.panel_yaw, pitch=self.panel_pitch)
        raise ConfigError(f"unknown scene kind {self.kind!r}")


@dataclass
class NoiseConfig:
    depth_std: float = 0.02
    dropout: float = 0.02
    color_std: float = 2.0
    extrinsic_rot_mrad: float = 0.0
    extrinsic_trans_mm: float = 0.0
    detector_px: float = 0.0

    def build(self, seed: int) -> NoiseModel:
        return NoiseModel(self.depth_std, self.dropout, self.color_std, self.extrinsic_rot_mrad,
                          self.extrinsic_trans_mm, seed)


@dataclass
class PipelineConfig:
    depth_scale: int = 4  # fixed quarter-resolution depth; recorded for reference
    input_views: int = 4
    seg_depth_thresh: float = 0.10
    seg_color_thresh: float = 30.0
    delta: float = 0.05
    count: int = 16
    temperature: float = 1e-3
    aggregation: str = "aligned"
    aggregation_size: int = 5
    discontinuity: float = 0.05
    occlusion_tol: float = OCCLUSION_TOL
    self_occlusion_tol: float = SELF_OCCLUSION_TOL
    min_tap_weight: float = MIN_TAP_WEIGHT
    lambda_depth: float = LAMBDA_DEPTH
    lambda_angle: float = LAMBDA_ANGLE
    max_hole: int = HOLE_MAX_AREA
    smoothing: bool = True
    smooth_w: float = 0.5
    smooth_n: int = 10
    quality: int = 90
    portrait_focal: float = PORTRAIT_FOCAL
    portrait_width: int = IMAGE_WIDTH
    portrait_height: int = IMAGE_HEIGHT

    def render_config(self) -> RenderConfig:
        depth = DepthConfig(self.delta, self.count, self.temperature, self.discontinuity, self.aggregation_size,
                            self.aggregation)
        return RenderConfig(depth, self.occlusion_tol, self.self_occlusion_tol, self.min_tap_weight,
                            self.lambda_depth, self.lambda_angle, self.max_hole, self.input_views)


@dataclass
class StageConfig:
    acquisition: float = 60.0
    render: float = 40.0
    compress: float = 30.0
    network: float = 100.0
    display: float = 40.0
    render_units: int = 2
    fps: float = 30.0
    viewpoint_latency: float = 100.0

    def build(self) -> StageModel:
        return StageModel(**asdict(self))


@dataclass
class RunConfig:
    duration: float = 10.0
    seed: int = 0
    output_dir: str = "vcube_out"
    screen_frames: list = field(default_factory=lambda: [0])


SECTIONS = {"layout": LayoutConfig, "scene": SceneConfig, "noise": NoiseConfig, "pipeline": PipelineConfig,
            "stages": StageConfig, "run": RunConfig}

# leaves whose defaults were picked for this simulator, with no reference value behind them
INVENTED = {
    "layout.count", "layout.gap", "layout.overlap", "layout.radius", "layout.seat", "layout.focal",
    "layout.placements",
    "scene.kind", "scene.animate", "scene.detail", "scene.panel_yaw", "scene.panel_pitch",
    "noise.depth_std", "noise.dropout", "noise.color_std", "noise.extrinsic_rot_mrad",
    "noise.extrinsic_trans_mm", "noise.detector_px",
    "pipeline.delta", "pipeline.count", "pipeline.temperature", "pipeline.aggregation",
    "pipeline.aggregation_size", "pipeline.discontinuity", "pipeline.occlusion_tol",
    "pipeline.self_occlusion_tol", "pipeline.min_tap_weight", "pipeline.lambda_depth", "pipeline.lambda_angle",
    "pipeline.max_hole", "pipeline.quality", "pipeline.portrait_focal",
    "run.duration", "run.seed", "run.output_dir", "run.screen_frames",
}


@dataclass
class ScenarioConfig:
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    stages: StageConfig = field(default_factory=StageConfig)
    run: RunConfig = field(default_factory=RunConfig)

    # ---------------------------------------------------------------- serialization

    def to_dict(self) -> dict:
        d = {"schema": SCHEMA_VERSION}
        d.update({name: asdict(getattr(self, name)) for name in SECTIONS})
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> ScenarioConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - set(SECTIONS) - {"schema"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        if d.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema {d.get('schema')!r}")
        out = cls()
        for name, kind in SECTIONS.items():
            section = d.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"section {name!r} must be an object")
            target = getattr(out, name)
            names = {f.name for f in fields(kind)}
            for key, value in section.items():
                if key not in names:
                    raise ConfigError(f"unknown key {name}.{key}")
                setattr(target, key, _coerce(f"{name}.{key}", getattr(target, key), value))
        out.validate()
        return out

    @classmethod
    def from_json(cls, text: str) -> ScenarioConfig:
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON: {e}") from e

    @classmethod
    def load(cls, path) -> ScenarioConfig:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_json(text)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    def digest(self) -> str:
        """SHA-256 of the canonical JSON."""
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()).hexdigest()

    # ---------------------------------------------------------------- overrides and checks

    def set(self, path: str, value) -> None:
        section, _, key = path.partition(".")
        if section not in SECTIONS or key not in {f.name for f in fields(SECTIONS[section])}:
            raise ConfigError(f"unknown config key {path!r}")
        target = getattr(self, section)
        setattr(target, key, _coerce(path, getattr(target, key), value))

    def validate(self) -> None:
        p, r = self.pipeline, self.run
        checks = [
            (self.layout.width > 0 and self.layout.height > 0, "image size must be positive"),
            (self.layout.width % p.depth_scale == 0 and self.layout.height % p.depth_scale == 0,
             "image size must be divisible by the depth scale"),
            (p.depth_scale == 4, "depth scale is fixed at 4"),
            (p.input_views >= 2, "need at least two input views"),
            (p.delta > 0 and p.count >= 2 and p.temperature > 0, "invalid hypothesis settings"),
            (0.0 < p.smooth_w <= 1.0 and p.smooth_n >= 0, "invalid temporal smoothing settings"),
            (1 <= p.quality <= 100, "codec quality must lie in 1..100"),
            (r.duration >= 0, "duration must be >= 0"),
            (self.scene.kind in ("figure", "panel"), f"unknown scene kind {self.scene.kind!r}"),
            (p.aggregation in ("aligned", "slice"), f"unknown aggregation {p.aggregation!r}"),
            (all(isinstance(k, int) and k >= 0 for k in r.screen_frames), "screen frames must be indices >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.stages.build()
            self.noise.build(r.seed)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def output_dir(self, override: str | None = None) -> Path:
        """Flag beats environment beats file."""
        return Path(override or os.environ.get(OUTPUT_ENV) or self.run.output_dir)

    # ---------------------------------------------------------------- builders

    def build_layout(self) -> AssemblyLayout:
        try:
            return self.layout.build()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def build_rigs(self, layout: AssemblyLayout) -> dict:
        noise = self.noise.build(self.run.seed)
        rigs = {}
        for i, c in enumerate(layout.ids):
            spec = layout.cube(c).spec
            rigs[c] = CaptureRig(spec, self.scene.build(spec.seat, variant=i), noise,
                                 depth_thresh=self.pipeline.seg_depth_thresh,
                                 color_thresh=self.pipeline.seg_color_thresh)
        return rigs

    def build_conference(self, layout: AssemblyLayout | None = None):
        from .session.conference import Conference, Participant

        layout = layout or self.build_layout()
        p = self.pipeline
        return Conference(layout, {c: Participant(r) for c, r in self.build_rigs(layout).items()},
                          p.render_config(), p.quality, self.noise.detector_px, p.smoothing, p.smooth_w, p.smooth_n,
                          self.run.seed, (p.portrait_focal, p.portrait_width, p.portrait_height))


def leaves() -> list[tuple[str, object]]:
    """``("section.field", default)`` for every scalar leaf."""
    out = []
    default = ScenarioConfig()
    for name, kind in SECTIONS.items():
        for f in fields(kind):
            out.append((f"{name}.{f.name}", getattr(getattr(default, name), f.name)))
    return out


def _coerce(path: str, current, value):
    """Parse ``value`` (JSON value or command-line string) to the type of the default."""
    if isinstance(value, str) and not isinstance(current, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: cannot parse {value!r}") from e
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(current, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if current is None or isinstance(current, list):
        if value is not None and not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return value
    return value
