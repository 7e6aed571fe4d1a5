"""
Event frame stacking and portable pixmap I/O.

A stream is cut into t_count equal-duration windows over [t_min, t_max]; each
window becomes one RGB frame where a pixel shows the polarity of its latest
event in that window.
"""
from __future__ import annotations

import logging
import os

import numpy as np
from PIL import Image

from models import DataError, FrameStack

logger = logging.getLogger(__name__)

DEFAULT_T_COUNT = 19
BACKGROUND = (255, 255, 255)
POSITIVE_COLOR = (255, 0, 0)
NEGATIVE_COLOR = (0, 0, 255)


def window_bounds(t_min, t_max, t_count):
    """
    Integer window edges: window i covers [t_min + ceil(i*span/T), t_min + ceil((i+1)*span/T)),
    the last one closed at t_max.
    """
    span = t_max - t_min
    starts = [t_min + (i * span + t_count - 1) // t_count for i in range(t_count)]
    ends = starts[1:] + [t_max]
    return tuple(zip(starts, ends))


def window_index(t, t_min, t_max, t_count):
    """Window number of every timestamp; a zero-length stream puts everything in window 0."""
    span = t_max - t_min
    if span <= 0:
        return np.zeros(len(t), dtype=np.int64)
    offset = np.asarray(t, dtype=np.int64) - t_min
    if span <= np.iinfo(np.int64).max // t_count:
        idx = (offset * t_count) // span
    else:
        # offset * t_count would overflow int64; fall back to exact Python ints
        idx = np.array([o * t_count // span for o in offset.tolist()], dtype=np.int64)
    return np.minimum(idx, t_count - 1)


def stack(stream, t_count=DEFAULT_T_COUNT):
    if t_count < 1:
        raise DataError(f"t_count must be at least 1, got {t_count}")

    h, w = stream.height, stream.width
    frames = np.full((t_count, h, w, 3), 255, dtype=np.uint8)
    if len(stream) == 0:
        return FrameStack(frames, tuple((0, 0) for _ in range(t_count)))

    t = stream.t
    t_min, t_max = int(t[0]), int(t[-1])
    win = window_index(t, t_min, t_max, t_count)

    # latest event per (window, pixel): first hit when scanning the keys backwards
    keys = (win * h + stream.y.astype(np.int64)) * w + stream.x.astype(np.int64)
    _, first_rev = np.unique(keys[::-1], return_index=True)
    last = len(keys) - 1 - first_rev

    flat = frames.reshape(-1, 3)
    pos = stream.p[last] > 0
    flat[keys[last[pos]]] = POSITIVE_COLOR
    flat[keys[last[~pos]]] = NEGATIVE_COLOR

    return FrameStack(frames, window_bounds(t_min, t_max, t_count))


def window_counts(stream, fstack):
    """Number of events assigned to each window of a stack built from stream."""
    if len(stream) == 0:
        return [0] * fstack.t_count
    win = window_index(stream.t, int(stream.t[0]), int(stream.t[-1]), fstack.t_count)
    return np.bincount(win, minlength=fstack.t_count).tolist()


def representative_frame(fstack):
    return fstack.frames[0]


def export_frame(image, path):
    """Write an H x W x 3 uint8 image as a binary P6 pixmap."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise DataError(f"expected an H x W x 3 uint8 image, got {img.shape} {img.dtype}")
    Image.fromarray(img).save(path, format="PPM")


def export_stack(fstack, outdir, prefix="frame"):
    os.makedirs(outdir, exist_ok=True)
    paths = []
    for i, frame in enumerate(fstack.frames):
        path = os.path.join(outdir, f"{prefix}_{i:02d}.ppm")
        export_frame(frame, path)
        paths.append(path)
    return paths


def read_pixmap(path):
    """Read a P5 (gray) or P6 (RGB) pixmap into a uint8 array."""
    try:
        with Image.open(path) as im:
            if im.format != "PPM":
                raise DataError(f"{path} is not a portable pixmap")
            if im.mode not in ("L", "RGB"):
                raise DataError(f"{path}: unsupported pixmap mode {im.mode}")
            return np.array(im)
    except OSError as e:
        raise DataError(f"cannot read pixmap {path}: {e}") from e


def read_luma(path):
    """Pixmap as a float image in [0, 1]; RGB is reduced by (r+g+b)//3."""
    img = read_pixmap(path)
    if img.ndim == 3:
        img = img.astype(np.uint16).sum(axis=2) // 3
    return img.astype(np.float64) / 255.0
