"""Procedural dermoscopy-like lesion images with ground-truth masks.

Rendering recipe (all in normalized coordinates, image spanning [-0.5, 0.5]):

* background: skin tone with 1.2% multiplicative Gaussian noise;
* lesion outline: superellipse ``(|cos t / a|^n + |sin t / b|^n)^(-1/n)`` whose
  radius is perturbed by a sum of angular harmonics; the perturbation
  amplitude is ``0.4 * border_irregularity`` of the radius. Harmonic choice
  preserves the requested symmetry: ``cos(2k t)`` keeps both flip axes,
  ``cos(k t)`` keeps the horizontal axis only, random phases keep none;
* color regions: the spec's colors fill bands of a scalar field (radius for
  two axes, radius plus a horizontal ramp for one axis, plus a random
  direction and blobs for none); shading darkens along the same ramp;
* structures: streaks are radial strokes near the rim, dots are small discs,
  pigment network is a dark lattice, the blue-whitish veil is a translucent
  blue-gray overlay, regression is a desaturated, lightened patch.

The lesion is always centered so flips map the mask onto itself when the
outline is symmetric.
"""

from __future__ import annotations

import numpy as np

from medgrad.numerics.rng import Rng
from medgrad.synthdata.templates import LesionSpec

SKIN = np.array([0.95, 0.86, 0.82])
PALETTE = {
    "light-brown": np.array([0.72, 0.50, 0.32]),
    "dark-brown": np.array([0.42, 0.24, 0.13]),
    "blue-gray": np.array([0.36, 0.45, 0.64]),
    "black": np.array([0.13, 0.09, 0.08]),
    "red": np.array([0.80, 0.22, 0.24]),
    "white": np.array([0.95, 0.93, 0.90]),
}
STREAK_COLOR = np.array([0.22, 0.12, 0.07])
DOT_COLOR = np.array([0.16, 0.09, 0.06])
VASCULAR_DOT_COLOR = np.array([0.50, 0.05, 0.10])
VEIL_COLOR = np.array([0.42, 0.56, 0.86])

BACKGROUND_NOISE = 0.012
IRREGULARITY_SCALE = 0.4


def _outline(spec: LesionSpec, rng: Rng):
    """Boundary radius as a function of angle."""
    n = rng.uniform(2.0, 3.0)
    b = rng.uniform(0.8, 1.0)
    amps = rng.uniform(0.3, 1.0, size=6)
    phases = rng.uniform(0, 2 * np.pi, size=6)

    def harmonics(t):
        h = np.zeros_like(t)
        for k in range(6):
            if spec.symmetry_axes == 2:
                h += amps[k] * np.cos(2 * (k + 1) * t)
            elif spec.symmetry_axes == 1:
                h += amps[k] * np.cos((k + 2) * t)
            else:
                h += amps[k] * np.cos((k + 1) * t + phases[k])
        return h

    scale = np.abs(harmonics(np.linspace(-np.pi, np.pi, 721))).max()

    def boundary(theta):
        c, s = np.abs(np.cos(theta)), np.abs(np.sin(theta)) / b
        r = spec.lesion_radius_fraction * (c**n + s**n) ** (-1.0 / n)
        if spec.border_irregularity > 0:
            r = r * (1.0 + IRREGULARITY_SCALE * spec.border_irregularity * harmonics(theta) / scale)
        return r

    return boundary


def _ramp(x: np.ndarray, y: np.ndarray, spec: LesionSpec, rng: Rng) -> np.ndarray:
    """Asymmetric component of the color/shading field, in [-1, 1]-ish units."""
    if spec.symmetry_axes == 2:
        return np.zeros_like(x)
    if spec.symmetry_axes == 1:
        return x / spec.lesion_radius_fraction
    phi = rng.uniform(0, 2 * np.pi)
    return (x * np.cos(phi) + y * np.sin(phi)) / spec.lesion_radius_fraction


def _blobs(x, y, rng: Rng, count: int, radius: float) -> np.ndarray:
    field = np.zeros_like(x)
    for _ in range(count):
        cx, cy = rng.uniform(-radius, radius, size=2)
        w = rng.uniform(0.3, 0.6) * radius
        field += np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * w * w))
    return field


def _symmetric_points(spec: LesionSpec, rng: Rng, count: int, rho_max: float) -> list[tuple[float, float]]:
    """Points in polar (rho fraction, angle) form, mirrored to keep the lesion's symmetry."""
    pts = []
    while len(pts) < count:
        rho = rho_max * np.sqrt(rng.uniform(0.05, 1.0))
        t = rng.uniform(-np.pi, np.pi)
        if spec.symmetry_axes == 2:
            pts += [(rho, t), (rho, -t), (rho, np.pi - t), (rho, t - np.pi)]
        elif spec.symmetry_axes == 1:
            pts += [(rho, t), (rho, -t)]
        else:
            pts.append((rho, t))
    return pts[:count] if spec.symmetry_axes == 0 else pts


def render(spec: LesionSpec, rng: Rng, image_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Render ``(image H×W×3 float32 in [0,1], mask H×W bool)``."""
    size = int(image_size)
    coords = (np.arange(size) - (size - 1) / 2.0) / size
    y, x = np.meshgrid(coords, coords, indexing="ij")
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)

    skin = np.clip(SKIN + rng.uniform(-0.02, 0.02, size=3), 0, 1)
    image = np.broadcast_to(skin, (size, size, 3)).copy()
    image *= 1.0 + BACKGROUND_NOISE * rng.normal(size=(size, size, 1))

    boundary_at = _outline(spec, rng)
    boundary = boundary_at(theta)
    rho = r / boundary
    mask = rho <= 1.0
    edge_px = (boundary - r) * size
    alpha = np.clip(edge_px + 0.5, 0.0, 1.0)[..., None]

    # color bands
    ramp = _ramp(x, y, spec, rng)
    field = rho + 0.35 * ramp
    if spec.symmetry_axes == 0:
        field = field + 0.25 * _blobs(x, y, rng, 3, spec.lesion_radius_fraction)
    colors = [PALETTE[c] for c in spec.colors]
    lesion = np.empty_like(image)
    if len(colors) == 1:
        lesion[:] = colors[0]
    else:
        lo, hi = np.percentile(field[mask], [0, 100]) if mask.any() else (0.0, 1.0)
        t = np.clip((field - lo) / max(hi - lo, 1e-9), 0, 1) * (len(colors) - 1)
        i0 = np.minimum(np.floor(t).astype(int), len(colors) - 2)
        frac = np.clip((t - i0 - 0.35) / 0.3, 0, 1)[..., None]  # soft band edges
        stack = np.stack(colors)
        lesion = stack[i0] * (1 - frac) + stack[i0 + 1] * frac
    shade = 1.0 - 0.18 * np.clip(ramp, -1, 1)
    lesion = lesion * shade[..., None]
    lesion *= 1.0 + 0.03 * rng.normal(size=(size, size, 1))

    # structures
    if "pigment-network" in spec.structures:
        period = 0.075
        gx = np.abs(np.cos(np.pi * x / period))
        gy = np.abs(np.cos(np.pi * y / period))
        lattice = (np.maximum(gx, gy) > 0.8) & (rho < 0.92)
        lesion[lattice] *= 0.62
    if "regression" in spec.structures:
        if spec.symmetry_axes == 2:
            patch = (rho > 0.3) & (rho < 0.55)
        else:
            c = 0.35 * spec.lesion_radius_fraction
            sign = 1.0 if spec.symmetry_axes == 1 else (1.0 if rng.random() < 0.5 else -1.0)
            patch = np.hypot(x + sign * c, y * (1.0 if spec.symmetry_axes == 1 else 1.2)) < 0.45 * spec.lesion_radius_fraction
            patch &= rho < 0.9
        gray = lesion[patch].mean(axis=1, keepdims=True)
        lesion[patch] = 0.45 * lesion[patch] + 0.55 * (0.5 * gray + 0.5 * PALETTE["white"])
    if "blue-whitish-veil" in spec.structures:
        if spec.symmetry_axes == 0:
            cx, cy = rng.uniform(-0.3, 0.3, size=2) * spec.lesion_radius_fraction
        else:
            cx = cy = 0.0
        veil = np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * (0.45 * spec.lesion_radius_fraction) ** 2))
        veil = (0.6 * veil * (rho < 0.95))[..., None]
        lesion = lesion * (1 - veil) + VEIL_COLOR * veil
    if "streaks" in spec.structures:
        if spec.symmetry_axes == 2:
            angles = np.arange(16) * np.pi / 8
        elif spec.symmetry_axes == 1:
            half = rng.uniform(0.1, np.pi - 0.1, size=7)
            angles = np.concatenate([half, -half])
        else:
            angles = rng.uniform(-np.pi, np.pi, size=14)
        stroke = np.zeros(mask.shape, dtype=bool)
        for a in angles:
            d = np.angle(np.exp(1j * (theta - a)))
            stroke |= (np.abs(d) * r * size < 0.7) & (rho > 0.55) & (rho <= 1.0)
        lesion[stroke] = STREAK_COLOR
    if "dots" in spec.structures:
        color = VASCULAR_DOT_COLOR if spec.colors == ("red",) else DOT_COLOR
        dot_r = max(1.2, 0.02 * size) / size
        for rho_p, t in _symmetric_points(spec, rng, 12, 0.8):
            rad = rho_p * float(boundary_at(np.array([t]))[0])
            px, py = rad * np.cos(t), rad * np.sin(t)
            lesion[np.hypot(x - px, y - py) <= dot_r] = color

    image = image * (1 - alpha) + np.clip(lesion, 0, 1) * alpha
    return np.clip(image, 0.0, 1.0).astype(np.float32), mask


def saturation(image: np.ndarray) -> np.ndarray:
    """HSV saturation per pixel."""
    mx = image.max(axis=-1)
    mn = image.min(axis=-1)
    return np.where(mx > 0, (mx - mn) / np.maximum(mx, 1e-12), 0.0)
