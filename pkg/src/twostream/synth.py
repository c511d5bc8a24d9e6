"""Synthetic shape-stream data generation.

A stand-in for CAD rendering at desk scale: class silhouettes are simple 2-D
polygons posed by three rotation angles, where the in-plane angle rotates the
polygon and the two out-of-plane angles foreshorten it anisotropically
(scale factors cos(X deg) on y and cos(Y deg) on x). Rendered images go
through the same post-processing the pipeline applies to close the gap to
real photographs: background compositing, Gaussian smoothing and additive
Gaussian intensity noise, with edge-gradient histograms as the diagnostic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imagery import BoundingBox, Image, crop, load_image, resize_bilinear

BACKGROUND_MODES = ("white", "mean-image", "corpus-patch")
FILL_MODES = ("uniform-gray", "textured")
UNIFORM_GRAY_LEVEL = 0.5

# Default pose ranges: small out-of-plane wobble, in-plane angle near one of
# the two side-on headings.
DEFAULT_XY_RANGE = (-10.0, 10.0)
DEFAULT_Z_RANGES = ((70.0, 110.0), (250.0, 290.0))
DEFAULT_STEP = 2.0


class DegenerateRenderError(ValueError):
    """Raised when a posed polygon collapses below drawable size."""


@dataclass(frozen=True)
class Pose:
    """Rotation angles in degrees: x/y foreshorten, z rotates in-plane."""

    x_deg: float
    y_deg: float
    z_deg: float


@dataclass(frozen=True)
class PoseGrid:
    """Per-axis angle lists plus the enumeration mode.

    ``cartesian`` enumerates the full cross product; ``axis-sweep`` varies one
    axis at a time holding the other two at their list midpoints.
    """

    x_values: tuple[float, ...]
    y_values: tuple[float, ...]
    z_values: tuple[float, ...]
    mode: str = "cartesian"

    def __post_init__(self):
        for name in ("x_values", "y_values", "z_values"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"{name} must be non-empty")
            object.__setattr__(self, name, vals)
        if self.mode not in ("cartesian", "axis-sweep"):
            raise ValueError(f"mode must be 'cartesian' or 'axis-sweep', got {self.mode!r}")


def values_from_range(lo: float, hi: float, step: float) -> tuple[float, ...]:
    """Inclusive arithmetic progression; the step must divide the range."""
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    span = hi - lo
    n = span / step
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"step {step} does not divide range [{lo}, {hi}]")
    return tuple(lo + i * step for i in range(int(round(n)) + 1))


def default_pose_grid(mode: str = "cartesian", step: float = DEFAULT_STEP) -> PoseGrid:
    """The standard grid: x, y in [-10, 10]; z in [70, 110] plus [250, 290]."""
    xy = values_from_range(*DEFAULT_XY_RANGE, step)
    z = tuple(v for r in DEFAULT_Z_RANGES for v in values_from_range(*r, step))
    return PoseGrid(x_values=xy, y_values=xy, z_values=z, mode=mode)


def enumerate_poses(grid: PoseGrid) -> list[Pose]:
    """All poses of the grid, ordered x-major, then y, then z."""
    if grid.mode == "cartesian":
        return [Pose(x, y, z)
                for x in grid.x_values
                for y in grid.y_values
                for z in grid.z_values]
    mx = grid.x_values[len(grid.x_values) // 2]
    my = grid.y_values[len(grid.y_values) // 2]
    mz = grid.z_values[len(grid.z_values) // 2]
    poses = [Pose(x, my, mz) for x in grid.x_values]
    poses += [Pose(mx, y, mz) for y in grid.y_values]
    poses += [Pose(mx, my, z) for z in grid.z_values]
    return poses


# ---------------------------------------------------------------------------
# Silhouette templates

@dataclass(frozen=True)
class SilhouetteTemplate:
    """A class silhouette: a simple polygon in the unit square, optionally textured."""

    label: str
    vertices: np.ndarray  # (n, 2), unit-square coordinates
    texture: Image | None = None

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise ValueError(f"polygon needs >= 3 (x, y) vertices, got shape {verts.shape}")
        if verts.min() < 0.0 or verts.max() > 1.0:
            raise ValueError("polygon vertices must lie in the unit square")
        if _self_intersects(verts):
            raise ValueError("polygon must be simple (non-self-intersecting)")
        verts.flags.writeable = False
        object.__setattr__(self, "vertices", verts)


def _segments_cross(p, q, r, s) -> bool:
    # Proper intersection of open segments pq and rs.
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0 if abs(v) < 1e-12 else (1 if v > 0 else -1)

    o1, o2 = orient(p, q, r), orient(p, q, s)
    o3, o4 = orient(r, s, p), orient(r, s, q)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def _self_intersects(verts: np.ndarray) -> bool:
    n = len(verts)
    edges = [(verts[i], verts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue  # shared endpoint
            if _segments_cross(*edges[i], *edges[j]):
                return True
    return False


def load_templates(path) -> list[SilhouetteTemplate]:
    """Read a JSON array of {class, vertices, texture?} template records.

    Texture paths are resolved relative to the template file.
    """
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise ValueError(f"{path}: template file must hold a JSON array")
    templates = []
    for i, obj in enumerate(raw):
        if not isinstance(obj, dict) or "class" not in obj or "vertices" not in obj:
            raise ValueError(f"{path}: template {i} must have 'class' and 'vertices'")
        texture = None
        if obj.get("texture"):
            texture = load_image(path.parent / obj["texture"], channels=3)
        templates.append(SilhouetteTemplate(label=str(obj["class"]),
                                            vertices=np.asarray(obj["vertices"], float),
                                            texture=texture))
    return templates


# ---------------------------------------------------------------------------
# Rendering

@dataclass(frozen=True)
class RenderConfig:
    """Output size, background/fill modes, and the smoothing + noise levels.

    ``sigma_noise`` is an intensity standard deviation on the unit scale, so
    the default 0.1 corresponds to noise variance 0.01.
    """

    width: int = 64
    height: int = 64
    background: str = "white"
    fill: str = "textured"
    sigma_blur: float = 1.0
    sigma_noise: float = 0.1
    background_image: Image | None = None
    background_corpus: tuple[Image, ...] = ()

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("render dims must be >= 1")
        if self.background not in BACKGROUND_MODES:
            raise ValueError(f"background must be one of {BACKGROUND_MODES}")
        if self.fill not in FILL_MODES:
            raise ValueError(f"fill must be one of {FILL_MODES}")
        if self.sigma_blur < 0 or self.sigma_noise < 0:
            raise ValueError("sigma_blur and sigma_noise must be >= 0")
        object.__setattr__(self, "background_corpus", tuple(self.background_corpus))


# Fraction of min(width, height) spanned by the unit square after projection;
# <= 1/sqrt(2) keeps any rotated pose inside the canvas.
_CANVAS_SCALE = 0.7


def _pose_vertices(template: SilhouetteTemplate, pose: Pose,
                   width: int, height: int) -> np.ndarray:
    cx_scale = math.cos(math.radians(pose.y_deg))
    cy_scale = math.cos(math.radians(pose.x_deg))
    if abs(cx_scale) < 1e-9 or abs(cy_scale) < 1e-9:
        raise DegenerateRenderError(
            f"pose ({pose.x_deg}, {pose.y_deg}, {pose.z_deg}) collapses the polygon")
    centered = template.vertices - 0.5
    scaled = centered * np.array([cx_scale, cy_scale])
    a = math.radians(pose.z_deg)
    rot = np.array([[math.cos(a), -math.sin(a)],
                    [math.sin(a), math.cos(a)]])
    rotated = scaled @ rot.T
    s = _CANVAS_SCALE * min(width, height)
    return rotated * s + np.array([width / 2.0, height / 2.0])


def _shoelace_area(verts: np.ndarray) -> float:
    x, y = verts[:, 0], verts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _polygon_mask(verts: np.ndarray, width: int, height: int) -> np.ndarray:
    """Even-odd polygon rasterization over pixel centers (x+0.5, y+0.5)."""
    px = np.arange(width) + 0.5
    py = np.arange(height) + 0.5
    gx, gy = np.meshgrid(px, py)
    inside = np.zeros((height, width), dtype=bool)
    x0, y0 = verts[-1]
    for x1, y1 in verts:
        straddles = (y0 > gy) != (y1 > gy)
        denom = y1 - y0
        # x of the edge at each scanline; rows where the edge does not
        # straddle are masked out, so the placeholder denominator is safe.
        safe = np.where(straddles, denom, 1.0)
        x_at = x0 + (gy - y0) * (x1 - x0) / safe
        inside ^= straddles & (gx < x_at)
        x0, y0 = x1, y1
    return inside


def render_silhouette(template: SilhouetteTemplate, pose: Pose,
                      config: RenderConfig,
                      rng: np.random.Generator | None = None) -> tuple[Image, Image]:
    """Rasterize one posed silhouette; returns (image, binary foreground mask).

    The canvas is filled per ``config.background``, the polygon per
    ``config.fill`` (constant gray 0.5, or the template texture tiled).
    Statistics matching is a separate step (:func:`apply_statistics_matching`).
    """
    w, h = config.width, config.height
    verts = _pose_vertices(template, pose, w, h)
    if _shoelace_area(verts) < 1.0:
        raise DegenerateRenderError(
            f"projected polygon area below one pixel for pose {pose}")
    mask = _polygon_mask(verts, w, h)

    if config.background == "white":
        canvas = np.ones((h, w, 3))
    elif config.background == "mean-image":
        if config.background_image is None:
            raise ValueError("mean-image background requires config.background_image")
        canvas = resize_bilinear(config.background_image.as_rgb(), w, h).data.copy()
    else:  # corpus-patch
        if not config.background_corpus:
            raise ValueError("corpus-patch background requires config.background_corpus")
        if rng is None:
            rng = np.random.default_rng()
        canvas = _random_corpus_patch(config.background_corpus, w, h, rng).data.copy()

    if config.fill == "uniform-gray":
        fill = np.full((h, w, 3), UNIFORM_GRAY_LEVEL)
    else:
        if template.texture is None:
            raise ValueError(f"template {template.label!r} has no texture "
                             "but fill mode is 'textured'")
        tex = template.texture.as_rgb().data
        ty = np.arange(h) % tex.shape[0]
        tx = np.arange(w) % tex.shape[1]
        fill = tex[np.ix_(ty, tx)]

    canvas[mask] = fill[mask]
    mask_img = Image(mask.astype(np.float64)[:, :, None])
    return Image(np.clip(canvas, 0.0, 1.0)), mask_img


def _random_corpus_patch(corpus: tuple[Image, ...], w: int, h: int,
                         rng: np.random.Generator) -> Image:
    src = corpus[int(rng.integers(len(corpus)))].as_rgb()
    if src.width < w or src.height < h:
        src = resize_bilinear(src, max(src.width, w), max(src.height, h))
    x = int(rng.integers(src.width - w + 1))
    y = int(rng.integers(src.height - h + 1))
    return crop(src, BoundingBox(x, y, x + w - 1, y + h - 1))


def composite_background(fore: Image, mask: Image, background: Image) -> Image:
    """Blend: mask * foreground + (1 - mask) * background, pixelwise."""
    if (fore.width, fore.height) != (mask.width, mask.height) or \
            (fore.width, fore.height) != (background.width, background.height):
        raise ValueError("foreground, mask and background dims must match")
    f = fore.as_rgb().data if background.channels == 3 or fore.channels == 3 else fore.data
    b = background.as_rgb().data if fore.channels == 3 or background.channels == 3 \
        else background.data
    m = mask.data if mask.channels == 1 else mask.as_gray().data
    return Image(m * f + (1.0 - m) * b)


def mean_image(corpus, width: int, height: int) -> Image:
    """Per-pixel arithmetic mean of the corpus after resizing to width x height."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("mean_image needs a non-empty corpus")
    channels = 3 if any(img.channels == 3 for img in corpus) else 1
    acc = np.zeros((height, width, channels))
    for img in corpus:
        if channels == 3:
            img = img.as_rgb()
        acc += resize_bilinear(img, width, height).data
    return Image(acc / len(corpus))


# ---------------------------------------------------------------------------
# Statistics matching

def gaussian_kernel(sigma: float) -> np.ndarray:
    """1-D Gaussian taps truncated at radius ceil(3*sigma), renormalized to sum 1."""
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur_axis(arr: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, len(kernel), axis=axis)
    return np.tensordot(windows, kernel, axes=([-1], [0]))


def gaussian_blur(image: Image, sigma: float) -> Image:
    """Separable Gaussian blur with reflect padding; sigma 0 is the identity."""
    if sigma <= 0:
        return image
    kernel = gaussian_kernel(sigma)
    out = _blur_axis(image.data, kernel, axis=0)
    out = _blur_axis(out, kernel, axis=1)
    return Image(np.clip(out, 0.0, 1.0))


def apply_statistics_matching(image: Image, config: RenderConfig,
                              rng: np.random.Generator | None = None) -> Image:
    """Smooth with a Gaussian filter, then add i.i.d. Gaussian intensity noise.

    Defaults (blur std 1 px, noise std 0.1, i.e. variance 0.01 on the unit
    scale) soften the razor-sharp edges of rendered images toward the softer
    gradient statistics of photographs. Output is clamped to [0, 1].
    """
    out = gaussian_blur(image, config.sigma_blur).data
    if config.sigma_noise > 0:
        if rng is None:
            rng = np.random.default_rng()
        out = out + rng.normal(0.0, config.sigma_noise, size=out.shape)
    return Image(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Edge-gradient diagnostics

def sobel_magnitude(image: Image) -> np.ndarray:
    """Sobel gradient magnitude of the channel-mean image, interior pixels only.

    Returns an (height-2, width-2) array.
    """
    if image.width < 3 or image.height < 3:
        raise ValueError(f"image must be at least 3x3, got {image.width}x{image.height}")
    g = image.data.mean(axis=2)
    dx = g[:, 2:] - g[:, :-2]
    gx = dx[:-2] + 2.0 * dx[1:-1] + dx[2:]
    dy = g[2:, :] - g[:-2, :]
    gy = dy[:, :-2] + 2.0 * dy[:, 1:-1] + dy[:, 2:]
    return np.sqrt(gx * gx + gy * gy)


def edge_gradient_histogram(image: Image, bins: int = 32,
                            upper: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of Sobel magnitudes over uniform bins; returns (edges, counts).

    The range is [0, max observed] unless ``upper`` pins it (useful when
    comparing histograms across image sets); magnitudes above an explicit
    ``upper`` are dropped. A flat image puts all mass in bin 0.
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    mag = sobel_magnitude(image)
    hi = float(mag.max()) if upper is None else float(upper)
    if hi <= 0.0:
        hi = 1.0
    counts, edges = np.histogram(mag, bins=bins, range=(0.0, hi))
    return edges, counts
