"""
Contrast-threshold event synthesis from intensity frames, plus a tiny text
renderer that produces moving-glyph sequences for fixtures.
"""
from __future__ import annotations

import logging

import numpy as np

from models import DataError, EventStream, IntensitySequence, SimulatorConfig

logger = logging.getLogger(__name__)

# floor(|dL| / C + CROSSING_TOL): exact multiples of C survive float rounding
CROSSING_TOL = 1e-9

DEFAULT_FRAME_INTERVAL_US = 10_000
GLYPH_W = 5
GLYPH_H = 7
GLYPH_ADVANCE = GLYPH_W + 1
MARGIN = 2

# 5x7 bitmap font, '#' is ink. Lowercase letters reuse the capitals.
FONT_5X7 = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "B": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "D": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "G": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "I": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "J": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "N": ("#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"),
    "O": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "P": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "Q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "S": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "W": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."),
    "X": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "Y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "Z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": ("#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
    " ": (".....",) * 7,
    ".": (".....", ".....", ".....", ".....", ".....", ".##..", ".##.."),
    ",": (".....", ".....", ".....", ".....", ".##..", "..#..", ".#..."),
    "-": (".....", ".....", ".....", "#####", ".....", ".....", "....."),
    "!": ("..#..", "..#..", "..#..", "..#..", "..#..", ".....", "..#.."),
    "?": (".###.", "#...#", "....#", "...#.", "..#..", ".....", "..#.."),
    "'": ("..#..", "..#..", ".#...", ".....", ".....", ".....", "....."),
}
BOX_GLYPH = ("#####", "#...#", "#...#", "#...#", "#...#", "#...#", "#####")


def _glyph_bitmap(ch):
    rows = FONT_5X7.get(ch.upper(), BOX_GLYPH)
    return np.array([[c == "#" for c in row] for row in rows], dtype=bool)


def render_text_mask(text):
    """Binary raster of text, GLYPH_H rows, GLYPH_ADVANCE columns per character."""
    mask = np.zeros((GLYPH_H, GLYPH_ADVANCE * len(text)), dtype=bool)
    for i, ch in enumerate(text):
        x0 = i * GLYPH_ADVANCE
        mask[:, x0:x0 + GLYPH_W] = _glyph_bitmap(ch)
    return mask


def render_text_sequence(
    text,
    motion="horizontal_shift",
    n_frames=2,
    frame_interval_us=DEFAULT_FRAME_INTERVAL_US,
    background=0.2,
    ink=0.8,
):
    """
    Render text in the built-in 5x7 font and slide it one pixel right per frame
    over a uniform background.
    """
    if not text:
        raise DataError("cannot render empty text")
    if motion != "horizontal_shift":
        raise DataError(f"unsupported motion {motion!r}")
    if n_frames < 2:
        raise DataError(f"need at least 2 frames, got {n_frames}")

    mask = render_text_mask(text)
    height = GLYPH_H + 2 * MARGIN
    width = mask.shape[1] + 2 * MARGIN + n_frames - 1
    frames = np.full((n_frames, height, width), background, dtype=np.float64)
    for i in range(n_frames):
        x0 = MARGIN + i
        region = frames[i, MARGIN:MARGIN + GLYPH_H, x0:x0 + mask.shape[1]]
        region[mask] = ink
    timestamps = tuple(i * frame_interval_us for i in range(n_frames))
    return IntensitySequence(frames, timestamps)


def simulate(seq, cfg=None):
    """
    Per pixel, emit floor(|L_new - L_ref| / C) events whenever the log intensity
    moves at least C away from the reference, timestamps interpolated linearly
    between the two frame stamps; L_ref advances by the emitted multiple of C.
    """
    cfg = cfg or SimulatorConfig()
    frames = seq.frames
    n, h, w = frames.shape
    c = cfg.contrast_threshold

    log_frames = np.log(frames + cfg.log_eps)
    ref = log_frames[0].copy()

    xs, ys, ts, ps = [], [], [], []
    for k in range(1, n):
        t0, t1 = seq.timestamps[k - 1], seq.timestamps[k]
        diff = log_frames[k] - ref
        mag = np.abs(diff)
        counts = np.floor(mag / c + CROSSING_TOL).astype(np.int64)
        hit = counts > 0
        if not hit.any():
            continue

        rows, cols = np.nonzero(hit)
        cnt = counts[rows, cols]
        pix_mag = mag[rows, cols]
        sign = np.sign(diff[rows, cols]).astype(np.int8)

        # one entry per crossing j = 1..cnt of each pixel
        rep = np.repeat(np.arange(len(cnt)), cnt)
        starts = np.cumsum(cnt) - cnt
        j = np.arange(len(rep)) - np.repeat(starts, cnt) + 1
        frac = np.minimum(j * c / pix_mag[rep], 1.0)
        t = t0 + np.floor((t1 - t0) * frac).astype(np.int64)

        xs.append(cols[rep])
        ys.append(rows[rep])
        ts.append(t)
        ps.append(sign[rep])

        ref[rows, cols] += sign * cnt * c

    if not ts:
        return EventStream.empty(w, h, source_id="simulated")

    x = np.concatenate(xs)
    y = np.concatenate(ys)
    t = np.concatenate(ts)
    p = np.concatenate(ps)
    order = np.argsort(t, kind="stable")
    logger.debug("simulated %d events from %d frames", len(t), n)
    return EventStream(w, h, x[order], y[order], t[order], p[order], "simulated")
