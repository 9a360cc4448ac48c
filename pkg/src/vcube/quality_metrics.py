"""Image, matte, depth and gaze-placement metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyMask, MarkerNotVisible
from .geometry import ScreenRect, apply_projective, offaxis_view_projection

PSNR_IDENTICAL = math.inf
PEAK = 255.0


def _check(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """PSNR on the 8-bit scale over masked pixels, all channels pooled; +inf if equal."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check(a, b)
    if mask is None:
        mask = np.ones(a.shape[:2], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("psnr over an empty mask")
    mse = float(np.mean((a[mask] - b[mask]) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(PEAK * PEAK / mse)


def alpha_mse(alpha: np.ndarray, reference: np.ndarray) -> float:
    alpha = np.asarray(alpha, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    _check(alpha, reference)
    return float(np.mean((alpha - reference) ** 2))


def photometric_discrepancy(image: np.ndarray, warped: Sequence[np.ndarray], masks: Sequence[np.ndarray]) -> float:
    """Masked L1 color distance to each warped view, per visible (view, pixel) pair.

    The sum over views and pixels of ``M_i(x) * |I(x) - I_i(x)|_1`` divided by
    the number of visible pairs; 0 when nothing is visible.
    """
    image = np.asarray(image, dtype=np.float64)
    total, count = 0.0, 0
    for w, m in zip(warped, masks):
        w = np.asarray(w, dtype=np.float64)
        _check(image, w)
        m = np.asarray(m, dtype=bool)
        total += float(np.abs(image[m] - w[m]).sum())
        count += int(m.sum())
    return total / count if count else 0.0


def smoothness_energy(depth: np.ndarray) -> float:
    """Sum of |5-point Laplacian| over interior pixels."""
    d = np.asarray(depth, dtype=np.float64)
    if d.shape[0] < 3 or d.shape[1] < 3:
        return 0.0
    c = d[1:-1, 1:-1]
    lap = 4.0 * c - d[:-2, 1:-1] - d[2:, 1:-1] - d[1:-1, :-2] - d[1:-1, 2:]
    return float(np.abs(lap).sum())


def depth_rmse(depth: np.ndarray, reference: np.ndarray, mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("depth rmse over an empty mask")
    diff = np.asarray(depth, dtype=np.float64)[mask] - np.asarray(reference, dtype=np.float64)[mask]
    return float(np.sqrt(np.mean(diff**2)))


def marker_centroid(screen_image: np.ndarray, color, tol: float = 60.0) -> np.ndarray:
    """Centroid, in continuous screen coordinates, of pixels close to ``color``.

    Pixel ``(i, j)`` contributes at ``(i + 0.5, j + 0.5)`` with weight
    ``1 - distance / tol``.
    """
    img = np.asarray(screen_image, dtype=np.float64)
    dist = np.linalg.norm(img - np.asarray(color, dtype=np.float64), axis=-1)
    w = np.clip(1.0 - dist / tol, 0.0, None)
    s = w.sum()
    if s <= 0:
        raise MarkerNotVisible("no pixel matches the marker color")
    j, i = np.mgrid[0 : img.shape[0], 0 : img.shape[1]]
    return np.array([((i + 0.5) * w).sum() / s, ((j + 0.5) * w).sum() / s])


def project_to_screen(point, viewpoint, screen: ScreenRect) -> np.ndarray:
    """Analytic screen position of ``point`` seen from ``viewpoint`` (same frame)."""
    uv, _, w = apply_projective(offaxis_view_projection(viewpoint, screen), np.asarray(point, dtype=np.float64))
    if not (w > 0 and 0.0 <= uv[0] <= screen.width and 0.0 <= uv[1] <= screen.height):
        raise MarkerNotVisible(f"marker projects to {uv} outside the screen")
    return uv


def gaze_pixel_error(screen_image: np.ndarray, screen: ScreenRect, viewpoint, marker_point, marker_color,
                     tol: float = 60.0) -> float:
    """Distance between the drawn marker and where the marker should appear.

    ``viewpoint`` and ``marker_point`` are in the same frame as ``screen`` (the
    receiver's cube frame).
    """
    expected = project_to_screen(marker_point, viewpoint, screen)
    found = marker_centroid(screen_image, marker_color, tol)
    return float(np.linalg.norm(found - expected))


@dataclass
class MetricReport:
    psnr_foreground: float | None = None
    psnr_full: float | None = None
    alpha_mse: float | None = None
    depth_rmse: float | None = None
    photometric_discrepancy: float | None = None
    smoothness_energy: float | None = None
    gaze_pixel_error: float | None = None
    masks: dict = field(default_factory=dict)
    frames: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and math.isinf(v):
                d[k] = "inf"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> MetricReport:
        d = {k: (math.inf if v == "inf" else v) for k, v in d.items()}
        return cls(**d)


def write_metrics_csv(path, rows: Sequence[dict]) -> None:
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)
