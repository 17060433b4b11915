"""Image loading and box cropping.

Crops use the exact annotated box by default; `context` grows the box by
that fraction of its width/height on every side before cropping, clamped to
the image. Pixel rectangles are floor/ceil rounded so a fractional box
always covers the annotated region, and rounding is deterministic.
"""

import math
from pathlib import Path

from PIL import Image

from .annotations import Box
from .errors import AnnotationError, ImageError


def load_image(path) -> Image.Image:
    """Decode an image file to RGB; any failure raises ImageError."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            return img.convert("RGB")
    except (OSError, ValueError, Image.DecompressionBombError) as exc:
        raise ImageError(f"{path}: cannot read image: {exc}") from exc


def crop_box(image: Image.Image, box: Box, context: float = 0.0) -> Image.Image:
    """Cut the box (optionally grown by `context` per side) out of `image`."""
    if context < 0:
        raise AnnotationError("context margin must be nonnegative")
    x0 = box.x - context * box.w
    y0 = box.y - context * box.h
    x1 = box.x + box.w + context * box.w
    y1 = box.y + box.h + context * box.h
    # the margin may clamp at the borders; the box itself must fit
    if box.x < 0 or box.y < 0 or box.x + box.w > image.width or box.y + box.h > image.height:
        raise AnnotationError(
            f"box [{box.x}, {box.y}, {box.w}, {box.h}] exceeds decoded "
            f"image size {image.width}x{image.height}")
    left = max(0, math.floor(x0))
    upper = max(0, math.floor(y0))
    right = min(image.width, math.ceil(x1))
    lower = min(image.height, math.ceil(y1))
    return image.crop((left, upper, right, lower))
