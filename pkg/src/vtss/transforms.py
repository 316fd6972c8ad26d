"""Geometric transformations used as self-supervision targets.

Every function works on the last two axes, so it accepts a single image
``(C, H, W)`` as well as a batch ``(N, C, H, W)``.  Quarter-turn rotation,
cropping and translation are exact pixel permutations/selections; only
zooming and arbitrary-angle rotation interpolate.
"""

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ShapeError, SpecError
from .interp import bilinear_resize

KINDS = ("identity", "rotation", "rotation_interp", "translation", "scale")
DIRECTIONS = ("up", "down", "left", "right")


@dataclass(frozen=True)
class Transformation:
    """One concrete instantiation of a transformation.

    ``amount`` means quarter turns (rotation), degrees (rotation_interp),
    pixels (translation) or zoom pixels per side (scale).
    """

    kind: str = "identity"
    amount: float = 0
    direction: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown transformation kind {self.kind!r}")
        if self.kind == "identity":
            if self.amount or self.direction:
                raise SpecError("identity carries no parameters")
        elif self.kind == "rotation":
            if self.amount not in (1, 2, 3):
                raise SpecError("rotation needs quarter_turns in {1, 2, 3}")
        elif self.kind == "translation":
            if self.direction not in DIRECTIONS:
                raise SpecError(f"translation direction must be one of {DIRECTIONS}")
            if int(self.amount) != self.amount or self.amount < 1:
                raise SpecError("translation needs an integer pixel count >= 1")
        elif self.kind == "scale":
            if int(self.amount) != self.amount or self.amount < 1:
                raise SpecError("scale needs an integer zoom >= 1")
        if self.kind != "translation" and self.direction:
            raise SpecError("only translations carry a direction")

    @property
    def is_identity(self):
        return self.kind == "identity"

    def encode(self):
        """Canonical text form, e.g. ``rot:90``, ``trans:up:5``, ``scale:2``, ``id``."""
        if self.kind == "identity":
            return "id"
        if self.kind == "rotation":
            return f"rot:{int(self.amount) * 90}"
        if self.kind == "rotation_interp":
            return f"rot-interp:{_fmt_number(self.amount)}"
        if self.kind == "translation":
            return f"trans:{self.direction}:{int(self.amount)}"
        return f"scale:{int(self.amount)}"

    def __str__(self):
        return self.encode()


IDENTITY = Transformation()


def _fmt_number(x):
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def rot(quarter_turns):
    return Transformation("rotation", quarter_turns)


def trans(direction, pixels):
    return Transformation("translation", pixels, direction)


def scale(zoom_pixels):
    return Transformation("scale", zoom_pixels)


_NUM = r"-?\d+(?:\.\d+)?"


def parse(text):
    """Inverse of :meth:`Transformation.encode`."""
    t = text.strip()
    if t in ("id", "identity"):
        return IDENTITY
    m = re.fullmatch(r"rot:(\d+)", t)
    if m:
        deg = int(m.group(1))
        if deg % 90 or not 90 <= deg <= 270:
            raise SpecError(f"{text!r}: quarter-turn rotations are 90, 180 or 270 degrees")
        return rot(deg // 90)
    m = re.fullmatch(rf"rot-interp:({_NUM})", t)
    if m:
        return Transformation("rotation_interp", float(m.group(1)))
    m = re.fullmatch(r"trans:(up|down|left|right):(\d+)", t)
    if m:
        return trans(m.group(1), int(m.group(2)))
    m = re.fullmatch(r"scale:(\d+)", t)
    if m:
        return scale(int(m.group(1)))
    raise SpecError(f"cannot parse transformation {text!r}")


@dataclass(frozen=True)
class CropFrame:
    """Margin removed from every side before a task sees the image."""

    margin: int = 0

    def __post_init__(self):
        if self.margin < 0:
            raise GeometryError("margin must be >= 0")

    def crop_side(self, full_side):
        side = full_side - 2 * self.margin
        if side < 1:
            raise GeometryError(f"margin {self.margin} leaves nothing of a {full_side}-sided image")
        return side


def _side(img):
    h, w = img.shape[-2:]
    if h != w:
        raise ShapeError(f"square image required, got {h}x{w}")
    return h


def rotate90(img, quarter_turns):
    """Rotate clockwise by ``quarter_turns`` * 90 degrees (exact permutation)."""
    _side(img)
    return np.rot90(img, k=-(quarter_turns % 4), axes=(-2, -1)).copy()


def center_crop(img, margin):
    """Return the ``(side - 2*margin)``-sided window at offset ``(margin, margin)``."""
    side = _side(img)
    if margin < 0 or 2 * margin >= side:
        raise GeometryError(f"margin {margin} too large for side {side}")
    return img[..., margin:side - margin, margin:side - margin].copy()


_OFFSETS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}


def translate_crop(img, direction, pixels, margin):
    """Crop window displaced from the center by ``pixels`` in ``direction``.

    "up" moves the window up, i.e. the window offset becomes
    ``(margin - pixels, margin)``.  Because ``pixels <= margin`` the window
    never leaves the image, so no padding is involved.
    """
    side = _side(img)
    if direction not in _OFFSETS:
        raise SpecError(f"unknown direction {direction!r}")
    if pixels < 0 or pixels > margin:
        raise GeometryError(f"shift of {pixels} exceeds margin {margin}")
    if 2 * margin >= side:
        raise GeometryError(f"margin {margin} too large for side {side}")
    crop = side - 2 * margin
    dr, dc = _OFFSETS[direction]
    r0 = margin + dr * pixels
    c0 = margin + dc * pixels
    return img[..., r0:r0 + crop, c0:c0 + crop].copy()


def scale_zoom(img, zoom_pixels):
    """Crop ``zoom_pixels`` from each side and resize back to the input side."""
    side = _side(img)
    if zoom_pixels == 0:
        return img.copy()
    if zoom_pixels < 0 or 2 * zoom_pixels >= side:
        raise GeometryError(f"zoom {zoom_pixels} too large for side {side}")
    inner = img[..., zoom_pixels:side - zoom_pixels, zoom_pixels:side - zoom_pixels]
    return np.clip(bilinear_resize(inner, side, side), 0.0, 1.0).astype(img.dtype)


def rotate_interp(img, degrees):
    """Clockwise rotation by an arbitrary angle with bilinear resampling.

    Samples falling outside the image read as zero.  Unlike
    :func:`rotate90` this interpolates, so it is not an exact permutation.
    """
    side = _side(img)
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    center = (side - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(side) - center, np.arange(side) - center, indexing="ij")
    # inverse map of a clockwise rotation (rows grow downward)
    src_y = c * yy - s * xx + center
    src_x = s * yy + c * xx + center
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = src_y - y0
    fx = src_x - x0
    work = img.astype(np.float64)
    out = np.zeros(work.shape, dtype=np.float64)
    for dy, wy in ((0, 1 - fy), (1, fy)):
        for dx, wx in ((0, 1 - fx), (1, fx)):
            yi, xi = y0 + dy, x0 + dx
            valid = (yi >= 0) & (yi < side) & (xi >= 0) & (xi < side)
            vals = work[..., np.clip(yi, 0, side - 1), np.clip(xi, 0, side - 1)]
            out += np.where(valid, vals, 0.0) * (wy * wx)
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def apply(t, img, frame=CropFrame()):
    """Apply instantiation ``t`` under ``frame``.

    With a nonzero margin every kind returns a crop-sided image, so a batch
    mixing instantiations stays shape-uniform: identity is the center crop,
    rotations and zooms act on the center crop, and translations displace
    the crop window.
    """
    m = frame.margin
    if t.kind == "translation":
        return translate_crop(img, t.direction, int(t.amount), m)
    base = center_crop(img, m) if m else img
    if t.kind == "identity":
        return base if m else img.copy()
    if t.kind == "rotation":
        return rotate90(base, int(t.amount))
    if t.kind == "rotation_interp":
        return rotate_interp(base, t.amount)
    return scale_zoom(base, int(t.amount))


def shift_content(img, direction, pixels):
    """Full-size translation: content moves opposite to ``direction``'s window.

    Result ``J`` satisfies ``center_crop(J, m) == translate_crop(img, direction,
    pixels, m)`` for every ``m >= pixels``.  Rows/columns uncovered by the
    shift replicate the nearest edge.
    """
    side = _side(img)
    dr, dc = _OFFSETS[direction]
    rows = np.clip(np.arange(side) + dr * pixels, 0, side - 1)
    cols = np.clip(np.arange(side) + dc * pixels, 0, side - 1)
    return img[..., rows[:, None], cols[None, :]].copy()


def apply_full(t, img):
    """Apply ``t`` while keeping the full image shape (used for injection)."""
    if t.kind == "identity":
        return img.copy()
    if t.kind == "rotation":
        return rotate90(img, int(t.amount))
    if t.kind == "rotation_interp":
        return rotate_interp(img, t.amount)
    if t.kind == "translation":
        return shift_content(img, t.direction, int(t.amount))
    return scale_zoom(img, int(t.amount))


AUGMENT_PAD = 2


def augment_standard(img, rng):
    """Zero-pad 2 pixels, take a random same-size crop, flip horizontally w.p. 0.5.

    Consumes ``rng.integers`` once (row and column offsets in ``[0, 4]``)
    and ``rng.random`` once (flip when the draw is below 0.5).
    """
    side = _side(img)
    p = AUGMENT_PAD
    pad = [(0, 0)] * (img.ndim - 2) + [(p, p), (p, p)]
    padded = np.pad(img, pad)
    r, c = rng.integers(0, 2 * p + 1, size=2)
    out = padded[..., r:r + side, c:c + side]
    if rng.random() < 0.5:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)
