"""Heatmap overlays and panel/grid PNG rendering.

Colormap: piecewise-linear through blue (0, 0, 1) -> cyan (0, 1, 1) ->
yellow (1, 1, 0) -> red (1, 0, 0) at 0, 1/3, 2/3, 1. A zero map is pure blue.

Panels are composed at image resolution, upscaled by the smallest integer
factor giving at least 128 px (nearest neighbour) and get a label strip
underneath in Pillow's built-in bitmap font.
"""

from __future__ import annotations

import io
import math
from typing import Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from medgrad.errors import ContractError, DimensionError

COLORMAP_STOPS = np.array(
    [
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ]
)
MIN_PANEL_PX = 128
LABEL_HEIGHT = 14
GAP = 2
BACKGROUND = (255, 255, 255)


def upsample(values, height: int, width: int) -> np.ndarray:
    """Bilinear resize with corner alignment (corners map onto corners).

    Accepts a :class:`SaliencyMap` or a 2-D array.
    """
    src = np.asarray(getattr(values, "values", values), dtype=np.float64)
    if src.ndim != 2:
        raise DimensionError(f"expected a 2-D map, got shape {src.shape}")
    h, w = src.shape

    def coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        i0 = np.minimum(np.floor(pos).astype(int), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    y0, y1, fy = coords(height, h)
    x0, x1, fx = coords(width, w)
    fy, fx = fy[:, None], fx[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.clip(out, src.min(), src.max())


def colormap(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] values to RGB (H×W×3)."""
    t = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * (len(COLORMAP_STOPS) - 1)
    i0 = np.minimum(np.floor(t).astype(int), len(COLORMAP_STOPS) - 2)
    f = (t - i0)[..., None]
    return COLORMAP_STOPS[i0] * (1 - f) + COLORMAP_STOPS[i0 + 1] * f


def overlay(image: np.ndarray, saliency, alpha: float = 0.5) -> np.ndarray:
    """``alpha * colormap(upsampled map) + (1 - alpha) * image``."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must lie in [0, 1], got {alpha}")
    image = np.asarray(image, dtype=np.float64)
    heat = colormap(upsample(saliency, image.shape[0], image.shape[1]))
    return alpha * heat + (1 - alpha) * image


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def _font():
    loader = getattr(ImageFont, "load_default_imagefont", None)
    return loader() if loader is not None else ImageFont.load_default()


def render_grid(cells: Sequence[Sequence[np.ndarray]], labels: Sequence[Sequence[str]]) -> Image.Image:
    """Lay out equally sized RGB rasters (floats in [0, 1]) in rows, each labelled."""
    if len(cells) != len(labels) or any(len(r) != len(lr) for r, lr in zip(cells, labels)):
        raise ContractError("every panel needs exactly one label")
    if not cells or not cells[0]:
        raise ContractError("nothing to render")
    h, w = np.shape(cells[0][0])[:2]
    scale = max(1, math.ceil(MIN_PANEL_PX / min(h, w)))
    ph, pw = h * scale, w * scale
    n_cols = max(len(r) for r in cells)
    canvas = Image.new("RGB", (n_cols * pw + (n_cols - 1) * GAP, len(cells) * (ph + LABEL_HEIGHT + GAP) - GAP), BACKGROUND)
    draw = ImageDraw.Draw(canvas)
    font = _font()
    for r, (row, row_labels) in enumerate(zip(cells, labels)):
        top = r * (ph + LABEL_HEIGHT + GAP)
        for c, (cell, label) in enumerate(zip(row, row_labels)):
            if np.shape(cell)[:2] != (h, w):
                raise DimensionError(f"panel {r},{c} has shape {np.shape(cell)}, expected {(h, w)}")
            left = c * (pw + GAP)
            px = np.repeat(np.repeat(to_uint8(cell), scale, axis=0), scale, axis=1)
            canvas.paste(Image.fromarray(px, "RGB"), (left, top))
            text = label
            while text and draw.textlength(text, font=font) > pw - 2:
                text = text[:-1]
            draw.text((left + 1, top + ph + 1), text, fill=(0, 0, 0), font=font)
    return canvas


def png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def render_panel(image: np.ndarray, maps: Sequence, labels: Sequence[str], alpha: float = 0.5) -> bytes:
    """One row: the original image then an overlay per map. ``labels`` covers every panel."""
    if len(labels) != len(maps) + 1:
        raise ContractError(f"expected {len(maps) + 1} labels (original + {len(maps)} maps), got {len(labels)}")
    cells = [np.asarray(image, dtype=np.float64)] + [overlay(image, m, alpha) for m in maps]
    return png_bytes(render_grid([cells], [list(labels)]))
