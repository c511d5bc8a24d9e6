"""Image container, file I/O, manifests, cropping and resizing.

Images are immutable rasters with float64 intensities in [0, 1], stored
row-major as ``(height, width, channels)`` with channels interleaved.
Bounding boxes use inclusive integer pixel coordinates, so a box covering a
single pixel has ``x1 == x2`` and area 1.

Datasets are described by line-oriented JSON manifests (see
:func:`load_manifest`); image files themselves are opened lazily by the
consumers of a manifest, never by the manifest parser.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage

VALID_SPLITS = ("train", "test")


class ManifestError(ValueError):
    """Raised when a manifest file fails to parse or validate."""


@dataclass(frozen=True)
class Image:
    """Immutable raster; ``data`` has shape (height, width, channels), values in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"image data must be 2-D or 3-D, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise ValueError(f"image dims must be >= 1, got {w}x{h}")
        if c not in (1, 3):
            raise ValueError(f"channel count must be 1 or 3, got {c}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def as_rgb(self) -> "Image":
        """Return a 3-channel view of this image (grayscale is replicated)."""
        if self.channels == 3:
            return self
        return Image(np.repeat(self.data, 3, axis=2))

    def as_gray(self) -> "Image":
        """Return a 1-channel view (channel mean for RGB)."""
        if self.channels == 1:
            return self
        return Image(self.data.mean(axis=2, keepdims=True))


@dataclass(frozen=True, order=True)
class BoundingBox:
    """Inclusive pixel box; area is (x2-x1+1)*(y2-y1+1)."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self):
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise ValueError(f"box coordinate {name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"malformed box ({self.x1},{self.y1},{self.x2},{self.y2}): "
                             "corners must satisfy x1 <= x2 and y1 <= y2")

    @property
    def width(self) -> int:
        return self.x2 - self.x1 + 1

    @property
    def height(self) -> int:
        return self.y2 - self.y1 + 1

    @property
    def area(self) -> int:
        return self.width * self.height

    def inside(self, width: int, height: int) -> bool:
        """Whether the box lies entirely within a width x height image."""
        return 0 <= self.x1 and 0 <= self.y1 and self.x2 < width and self.y2 < height


@dataclass(frozen=True)
class LabeledSample:
    """One manifest entry: an image path, its class label and split, optional ground-truth boxes."""

    path: str
    label: int
    split: str
    boxes: tuple[BoundingBox, ...] | None = None

    def __post_init__(self):
        if self.split not in VALID_SPLITS:
            raise ValueError(f"split must be one of {VALID_SPLITS}, got {self.split!r}")
        if self.label < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")
        if self.boxes is not None:
            object.__setattr__(self, "boxes", tuple(self.boxes))


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered class list plus the samples that reference it."""

    class_names: tuple[str, ...]
    samples: tuple[LabeledSample, ...]

    def __post_init__(self):
        names = tuple(self.class_names)
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        object.__setattr__(self, "class_names", names)
        samples = tuple(self.samples)
        for s in samples:
            if s.label >= len(names):
                raise ValueError(f"sample {s.path!r} has label {s.label} "
                                 f"but only {len(names)} classes are declared")
        object.__setattr__(self, "samples", samples)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str) -> list[LabeledSample]:
        return [s for s in self.samples if s.split == name]

    def by_class(self, split: str | None = None) -> dict[int, list[LabeledSample]]:
        out: dict[int, list[LabeledSample]] = {i: [] for i in range(self.num_classes)}
        for s in self.samples:
            if split is None or s.split == split:
                out[s.label].append(s)
        return out


# ---------------------------------------------------------------------------
# Manifest I/O
#
# Line-oriented JSON. The first line is a header object {"classes": [...]}
# carrying the ordered class list; every following line is one sample object
# {"path": ..., "class": ..., "split": ..., "boxes": [[x1,y1,x2,y2], ...]}.
# "class" may be a class name or a direct integer index.

def load_manifest(path) -> DatasetManifest:
    """Parse a manifest file. Image files are not opened (ingestion is lazy)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ManifestError(f"{path}: cannot read manifest: {e}") from e

    lines = text.splitlines()
    header = None
    samples: list[LabeledSample] = []
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{path}:{lineno}: invalid JSON: {e.msg}") from e
        if not isinstance(obj, dict):
            raise ManifestError(f"{path}:{lineno}: expected a JSON object")
        if header is None:
            if "classes" not in obj:
                raise ManifestError(f"{path}:{lineno}: first line must be a header "
                                    "object with a 'classes' list")
            classes = obj["classes"]
            if (not isinstance(classes, list) or not classes
                    or not all(isinstance(c, str) for c in classes)):
                raise ManifestError(f"{path}:{lineno}: 'classes' must be a non-empty "
                                    "list of strings")
            header = tuple(classes)
            continue
        samples.append(_parse_sample(obj, header, path, lineno))

    if header is None:
        raise ManifestError(f"{path}: manifest is empty (missing header line)")
    return DatasetManifest(class_names=header, samples=tuple(samples))


def _parse_sample(obj: dict, classes: tuple[str, ...], path: Path,
                  lineno: int) -> LabeledSample:
    for key in ("path", "class", "split"):
        if key not in obj:
            raise ManifestError(f"{path}:{lineno}: sample is missing field {key!r}")
    ref = obj["class"]
    if isinstance(ref, str):
        if ref not in classes:
            raise ManifestError(f"{path}:{lineno}: unknown class {ref!r} "
                                f"(declared classes: {list(classes)})")
        label = classes.index(ref)
    elif isinstance(ref, int) and not isinstance(ref, bool):
        if not 0 <= ref < len(classes):
            raise ManifestError(f"{path}:{lineno}: class index {ref} out of range")
        label = ref
    else:
        raise ManifestError(f"{path}:{lineno}: 'class' must be a name or index")

    boxes = None
    if obj.get("boxes") is not None:
        raw_boxes = obj["boxes"]
        if not isinstance(raw_boxes, list):
            raise ManifestError(f"{path}:{lineno}: 'boxes' must be a list")
        parsed = []
        for b in raw_boxes:
            if (not isinstance(b, list) or len(b) != 4
                    or not all(isinstance(v, int) and not isinstance(v, bool) for v in b)):
                raise ManifestError(f"{path}:{lineno}: each box must be "
                                    f"[x1, y1, x2, y2] integers, got {b!r}")
            try:
                parsed.append(BoundingBox(*b))
            except ValueError as e:
                raise ManifestError(f"{path}:{lineno}: {e}") from e
        boxes = tuple(parsed)

    try:
        return LabeledSample(path=str(obj["path"]), label=label,
                             split=str(obj["split"]), boxes=boxes)
    except ValueError as e:
        raise ManifestError(f"{path}:{lineno}: {e}") from e


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write a manifest in the same line-oriented JSON format read by load_manifest."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        f.write(json.dumps({"classes": list(manifest.class_names)},
                           separators=(",", ":")) + "\n")
        for s in manifest.samples:
            obj = {"path": s.path, "class": manifest.class_names[s.label],
                   "split": s.split}
            if s.boxes is not None:
                obj["boxes"] = [[b.x1, b.y1, b.x2, b.y2] for b in s.boxes]
            f.write(json.dumps(obj, separators=(",", ":")) + "\n")


# ---------------------------------------------------------------------------
# Image file I/O (PNG via Pillow, binary PPM handled directly)

def load_image(path, channels: int | None = None) -> Image:
    """Read a PNG or binary PPM (P6) file into a unit-scale Image.

    8-bit intensities are divided by 255. ``channels=3`` replicates a
    grayscale source across three channels (for networks expecting RGB);
    ``channels=1`` averages an RGB source down to one.
    """
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        img = _read_ppm(path)
    else:
        img = _read_png(path)
    if channels == 3:
        img = img.as_rgb()
    elif channels == 1:
        img = img.as_gray()
    elif channels is not None:
        raise ValueError(f"channels must be 1, 3 or None, got {channels}")
    return img


def save_image(image: Image, path) -> None:
    """Write an Image as PNG (.png) or binary PPM (.ppm), 8 bits per channel."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() in (".ppm", ".pnm"):
        _write_ppm(image, path)
    elif path.suffix.lower() == ".png":
        _write_png(image, path)
    else:
        raise ValueError(f"unsupported image extension: {path.suffix!r}")


def _to_uint8(image: Image) -> np.ndarray:
    return np.clip(np.rint(image.data * 255.0), 0, 255).astype(np.uint8)


def _read_png(path: Path) -> Image:
    with _PILImage.open(path) as pil:
        if pil.mode in ("1", "L", "I", "I;16"):
            arr = np.asarray(pil.convert("L"), dtype=np.float64) / 255.0
        else:
            arr = np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
    return Image(arr)


def _write_png(image: Image, path: Path) -> None:
    arr = _to_uint8(image)
    if arr.shape[2] == 1:
        pil = _PILImage.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = _PILImage.fromarray(arr, mode="RGB")
    pil.save(path, format="PNG")


def _read_ppm(path: Path) -> Image:
    data = path.read_bytes()
    if data[:2] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed; a single whitespace byte ends the header.
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    pos += 1  # the single whitespace after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as e:
        raise ValueError(f"{path}: bad PPM header fields {fields}") from e
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 PPM is supported, got {maxval}")
    expected = width * height * 3
    raster = data[pos:pos + expected]
    if len(raster) != expected:
        raise ValueError(f"{path}: PPM raster truncated "
                         f"({len(raster)} of {expected} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return Image(arr.astype(np.float64) / 255.0)


def _write_ppm(image: Image, path: Path) -> None:
    arr = _to_uint8(image.as_rgb())
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    path.write_bytes(header + arr.tobytes())


# ---------------------------------------------------------------------------
# Geometry operations

def crop(image: Image, box: BoundingBox) -> Image:
    """Extract the subimage covered by ``box`` (inclusive coordinates)."""
    if not box.inside(image.width, image.height):
        raise ValueError(f"box ({box.x1},{box.y1},{box.x2},{box.y2}) is outside "
                         f"a {image.width}x{image.height} image")
    return Image(image.data[box.y1:box.y2 + 1, box.x1:box.x2 + 1, :])


def random_center_crops(image: Image, count: int = 40,
                        rng: np.random.Generator | None = None) -> list[BoundingBox]:
    """Sample center-biased crop boxes for augmentation.

    Corners are drawn independently and uniformly on the integer lattices
    x1 in [W/20, 3W/20], y1 in [H/20, 3H/20], x2 in [17W/20, 19W/20],
    y2 in [17H/20, 19H/20] (real interval endpoints rounded inward), which
    keeps 49%-81% of the centered image area in every crop. The default of
    40 crops per image matches the augmentation this pipeline is built for.
    """
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    w, h = image.width, image.height
    if w < 20 or h < 20:
        raise ValueError(f"image must be at least 20x20 for center crops, got {w}x{h}")
    if rng is None:
        rng = np.random.default_rng()

    # Integer interval bounds, exact (ceil of lower, floor of upper).
    x1_lo, x1_hi = -(-w // 20), (3 * w) // 20
    y1_lo, y1_hi = -(-h // 20), (3 * h) // 20
    x2_lo, x2_hi = -(-(17 * w) // 20), (19 * w) // 20
    y2_lo, y2_hi = -(-(17 * h) // 20), (19 * h) // 20

    x1 = rng.integers(x1_lo, x1_hi + 1, size=count)
    y1 = rng.integers(y1_lo, y1_hi + 1, size=count)
    x2 = rng.integers(x2_lo, x2_hi + 1, size=count)
    y2 = rng.integers(y2_lo, y2_hi + 1, size=count)
    return [BoundingBox(int(a), int(b), int(c), int(d))
            for a, b, c, d in zip(x1, y1, x2, y2)]


def resize_bilinear(image: Image, width: int, height: int) -> Image:
    """Resize with corner-aligned bilinear interpolation.

    Output pixel i along an axis samples source coordinate
    i * (src_len - 1) / (dst_len - 1); a singleton output axis samples the
    source center. Interpolated intensities stay in [0, 1].
    """
    if width < 1 or height < 1:
        raise ValueError(f"target dims must be >= 1, got {width}x{height}")
    src = image.data
    h, w = src.shape[:2]
    if (width, height) == (w, h):
        return image

    xs = np.linspace(0.0, w - 1, width) if width > 1 else np.array([(w - 1) / 2.0])
    ys = np.linspace(0.0, h - 1, height) if height > 1 else np.array([(h - 1) / 2.0])

    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]

    rows = src[:, x0, :] * (1.0 - fx) + src[:, x1, :] * fx
    out = rows[y0, :, :] * (1.0 - fy) + rows[y1, :, :] * fy
    return Image(np.clip(out, 0.0, 1.0))
