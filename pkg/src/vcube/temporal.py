"""Temporal smoothing of portrait alpha and color along one stream.

Alpha is blended with a history buffer. Color is only blended near the
silhouette border (found by min-pooling alpha), so the interior stays sharp
while the flickering edge is stabilized. Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch
from .lumi_render import PortraitFrame

BLEND_WEIGHT = 0.5
BORDER_WIDTH = 10


@dataclass(eq=False)
class SmoothingState:
    """History buffers of one stream. ``color_h`` holds straight (not premultiplied) color."""

    alpha_h: np.ndarray
    color_h: np.ndarray
    w: float = BLEND_WEIGHT
    n: int = BORDER_WIDTH

    def __post_init__(self):
        self.alpha_h = np.array(self.alpha_h, dtype=np.float64)
        self.color_h = np.array(self.color_h, dtype=np.float64)
        if self.color_h.shape != self.alpha_h.shape + (3,):
            raise DimensionMismatch(f"color history {self.color_h.shape} vs alpha history {self.alpha_h.shape}")
        if not 0.0 < self.w <= 1.0:
            raise ValueError(f"blend weight {self.w} outside (0, 1]")
        if self.n < 0:
            raise ValueError("border width must be >= 0")

    @classmethod
    def from_first_frame(cls, alpha: np.ndarray, color: np.ndarray, w: float = BLEND_WEIGHT,
                         n: int = BORDER_WIDTH) -> SmoothingState:
        return cls(alpha, color, w, n)


def smooth_alpha(state: SmoothingState, alpha: np.ndarray) -> np.ndarray:
    """``a' = w a + (1 - w) a_h``; the history becomes ``a'``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != state.alpha_h.shape:
        raise DimensionMismatch(f"alpha {alpha.shape} vs history {state.alpha_h.shape}")
    out = state.w * alpha + (1.0 - state.w) * state.alpha_h
    state.alpha_h = out.copy()
    return out


def border_maps(alpha_s: np.ndarray, n: int = BORDER_WIDTH) -> tuple[np.ndarray, np.ndarray]:
    """Split alpha into its ``(2n+1)^2`` min-pooled interior and the remaining border band.

    Pixels outside the image count as 0.
    """
    alpha_s = np.asarray(alpha_s, dtype=np.float64)
    if n == 0:
        return alpha_s.copy(), np.zeros_like(alpha_s)
    interior = ndimage.minimum_filter(alpha_s, size=2 * n + 1, mode="constant", cval=0.0)
    return interior, alpha_s - interior


def smooth_color(state: SmoothingState, color: np.ndarray, alpha: np.ndarray, alpha_s: np.ndarray,
                 border: np.ndarray) -> np.ndarray:
    """Blend color toward the history on the border band, then update the history.

    ``I' = ((a' - (1-w) b) I + (1-w) b I_h) / a'`` (black where ``a' = 0``),
    then ``I_h = w a I + (1 - w a) I_h``.
    """
    color = np.asarray(color, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    if color.shape != state.color_h.shape:
        raise DimensionMismatch(f"color {color.shape} vs history {state.color_h.shape}")
    w = state.w
    a_s = np.asarray(alpha_s, dtype=np.float64)[..., None]
    b = np.asarray(border, dtype=np.float64)[..., None]
    num = (a_s - (1.0 - w) * b) * color + (1.0 - w) * b * state.color_h
    pos = a_s > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(pos, num / np.where(pos, a_s, 1.0), 0.0)
    a = alpha[..., None]
    state.color_h = w * a * color + (1.0 - w * a) * state.color_h
    return out


class TemporalSmoother:
    """Applies the smoothing to a sequence of portraits of one stream.

    The first frame initializes the history and passes through unchanged.
    """

    def __init__(self, w: float = BLEND_WEIGHT, n: int = BORDER_WIDTH):
        self.w, self.n = w, n
        self.state: SmoothingState | None = None

    def step(self, frame: PortraitFrame) -> PortraitFrame:
        color = frame.straight()
        if self.state is None:
            self.state = SmoothingState.from_first_frame(frame.alpha, color, self.w, self.n)
            return frame
        a_s = smooth_alpha(self.state, frame.alpha)
        _, border = border_maps(a_s, self.n)
        out = smooth_color(self.state, color, frame.alpha, a_s, border)
        return PortraitFrame(out * a_s[..., None], a_s, frame.source_cube, frame.viewpoint, frame.frame_index)
