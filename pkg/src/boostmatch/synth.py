"""Synthetic query frames: projective warps plus black block occlusion.

Images are 2-D float arrays in [0, 1]. Homographies act on pixel coordinates
centred on the image middle, so a pure scale or rotation keeps the slide in
view and a pure translation shifts it by whole pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, ContractError

NOISE_LEVELS = 10
RATIO_PER_LEVEL = 0.05
RATIO_TOLERANCE = 0.01
MIN_ABS_DET = 1e-6


@dataclass(frozen=True)
class HomographyRanges:
    scale: Tuple[float, float] = (0.9, 1.1)
    rotation_deg: Tuple[float, float] = (-30.0, 30.0)
    translation: Tuple[float, float] = (-50.0, 50.0)
    perspective: float = 1e-4

    def check(self, allow_wide: bool = False) -> None:
        for name in ("scale", "rotation_deg", "translation"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} range is reversed: {(lo, hi)}")
        if self.scale[0] <= 0 or self.perspective < 0:
            raise ConfigurationError("scale must be positive and perspective non-negative")
        if allow_wide:
            return
        ref = PAPER_RANGES
        for name in ("scale", "rotation_deg", "translation"):
            lo, hi = getattr(self, name)
            rlo, rhi = getattr(ref, name)
            if lo < rlo or hi > rhi:
                raise ConfigurationError(f"{name} range {(lo, hi)} exceeds default bounds {(rlo, rhi)}; pass allow_wide")
        if self.perspective > ref.perspective:
            raise ConfigurationError(f"perspective {self.perspective} exceeds default bound {ref.perspective}")

    def scaled_translation(self, factor: float) -> "HomographyRanges":
        lo, hi = self.translation
        return HomographyRanges(self.scale, self.rotation_deg, (lo * factor, hi * factor), self.perspective)


PAPER_RANGES = HomographyRanges()
IDENTITY_RANGES = HomographyRanges((1.0, 1.0), (0.0, 0.0), (0.0, 0.0), 0.0)


@dataclass
class CorruptionParams:
    noise_level: int
    block_count: int
    homography: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        if not 1 <= self.noise_level <= NOISE_LEVELS:
            raise ContractError(f"noise_level must be in 1..{NOISE_LEVELS}, got {self.noise_level}")
        if self.block_count < 1:
            raise ContractError(f"block_count must be positive, got {self.block_count}")
        self.homography = np.asarray(self.homography, dtype=np.float64)
        if abs(np.linalg.det(self.homography)) <= MIN_ABS_DET:
            raise ContractError("homography is not invertible")


@dataclass
class CorruptionRecord:
    params: CorruptionParams
    block_mask: np.ndarray
    slide_mask: np.ndarray
    text_mask: Optional[np.ndarray] = None
    blocked_pixel_ratio: float = field(init=False)

    def __post_init__(self):
        self.blocked_pixel_ratio = float(self.block_mask.mean())

    def homography_coefficients(self) -> List[float]:
        """The 8 free coefficients of the bottom-right-normalized homography."""
        return [float(v) for v in self.params.homography.reshape(-1)[:8]]


# -- homographies -------------------------------------------------------------


def compose_homography(scale: float, rotation_deg: float, tx: float, ty: float, px: float = 0.0, py: float = 0.0) -> np.ndarray:
    """[[s R, t], [p^T, 1]] acting on centred pixel coordinates."""
    theta = math.radians(rotation_deg)
    c, s = math.cos(theta), math.sin(theta)
    return np.array(
        [[scale * c, -scale * s, tx], [scale * s, scale * c, ty], [px, py, 1.0]],
        dtype=np.float64,
    )


def decompose_homography(h: np.ndarray) -> dict:
    h = np.asarray(h, dtype=np.float64) / h[2, 2]
    a = h[:2, :2]
    return {
        "scale": math.sqrt(abs(np.linalg.det(a))),
        "rotation_deg": math.degrees(math.atan2(a[1, 0], a[0, 0])),
        "tx": h[0, 2],
        "ty": h[1, 2],
        "px": h[2, 0],
        "py": h[2, 1],
    }


def random_homography(
    rng: np.random.Generator,
    ranges: HomographyRanges = PAPER_RANGES,
    allow_wide: bool = False,
    max_tries: int = 100,
) -> np.ndarray:
    ranges.check(allow_wide)
    for _ in range(max_tries):
        scale = rng.uniform(*ranges.scale)
        angle = rng.uniform(*ranges.rotation_deg)
        tx, ty = rng.uniform(*ranges.translation, size=2)
        px, py = rng.uniform(-ranges.perspective, ranges.perspective, size=2)
        h = compose_homography(scale, angle, tx, ty, px, py)
        if abs(np.linalg.det(h)) > MIN_ABS_DET:
            return h
    raise ContractError(f"no invertible homography in {max_tries} draws from {ranges}")


def _source_coords(shape: Tuple[int, int], h: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse-map every output pixel; returns source x, y and a finite-projection mask."""
    if abs(np.linalg.det(h)) <= MIN_ABS_DET:
        raise ContractError("homography is not invertible")
    rows, cols = shape
    cy, cx = (rows - 1) / 2.0, (cols - 1) / 2.0
    ys, xs = np.mgrid[0:rows, 0:cols].astype(np.float64)
    pts = np.stack([xs.ravel() - cx, ys.ravel() - cy, np.ones(rows * cols)])
    src = np.linalg.inv(h) @ pts
    w = src[2]
    ok = w > 1e-8
    w = np.where(ok, w, 1.0)
    sx = (src[0] / w + cx).reshape(shape)
    sy = (src[1] / w + cy).reshape(shape)
    return sx, sy, ok.reshape(shape)


def warp(image: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Bilinear inverse-mapped warp; everything outside the source is black."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ContractError(f"warp expects a 2-D image, got shape {image.shape}")
    rows, cols = image.shape
    sx, sy, ok = _source_coords(image.shape, h)
    padded = np.pad(image, 1)
    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    valid = ok & (sx > -1) & (sx < cols) & (sy > -1) & (sy < rows)
    # padded index of (x0, y0) is (x0 + 1, y0 + 1)
    xi = np.clip(x0.astype(np.int64) + 1, 0, cols)
    yi = np.clip(y0.astype(np.int64) + 1, 0, rows)
    out = (
        padded[yi, xi] * (1 - fx) * (1 - fy)
        + padded[yi, xi + 1] * fx * (1 - fy)
        + padded[yi + 1, xi] * (1 - fx) * fy
        + padded[yi + 1, xi + 1] * fx * fy
    )
    out = np.where(valid, out, 0.0)
    return np.clip(out, 0.0, 1.0)


def warp_mask(mask: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Nearest-neighbour warp of a binary mask."""
    mask = np.asarray(mask, dtype=bool)
    rows, cols = mask.shape
    sx, sy, ok = _source_coords(mask.shape, h)
    xi = np.rint(sx).astype(np.int64)
    yi = np.rint(sy).astype(np.int64)
    inside = ok & (xi >= 0) & (xi < cols) & (yi >= 0) & (yi < rows)
    out = np.zeros(mask.shape, dtype=bool)
    out[inside] = mask[yi[inside], xi[inside]]
    return out


def footprint(shape: Tuple[int, int], h: np.ndarray) -> np.ndarray:
    """Output pixels whose inverse image lies inside the source rectangle."""
    rows, cols = shape
    sx, sy, ok = _source_coords(shape, h)
    return ok & (sx >= 0) & (sx <= cols - 1) & (sy >= 0) & (sy <= rows - 1)


# -- block noise ------------------------------------------------------------


def target_ratio(noise_level: int) -> float:
    if not 1 <= noise_level <= NOISE_LEVELS:
        raise ContractError(f"noise_level must be in 1..{NOISE_LEVELS}, got {noise_level}")
    return RATIO_PER_LEVEL * noise_level


def _block_dims(area: float, rows: int, cols: int, rng: np.random.Generator) -> Tuple[int, int]:
    aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
    w = int(round(math.sqrt(area * aspect)))
    w = min(max(w, 1), cols)
    h = int(round(area / w))
    h = min(max(h, 1), rows)
    if h == rows:
        w = min(max(int(round(area / h)), 1), cols)
    return h, w


def add_block_noise(
    image: np.ndarray,
    noise_level: int,
    block_count: int,
    rng: np.random.Generator,
    max_tries: int = 200,
) -> Tuple[np.ndarray, np.ndarray]:
    """Black out ``block_count`` rectangles covering 5% * level of the image (+-1%).

    Returns the corrupted image and the exact boolean mask of blacked pixels.
    """
    if block_count < 1:
        raise ContractError(f"block_count must be positive, got {block_count}")
    ratio = target_ratio(noise_level)
    image = np.asarray(image, dtype=np.float64)
    rows, cols = image.shape
    total = rows * cols
    if block_count > ratio * total:
        raise ContractError(f"{block_count} blocks cannot cover only {ratio:.0%} of a {rows}x{cols} image")

    for _ in range(max_tries):
        shares = rng.dirichlet(np.full(block_count, 2.0))
        mask = np.zeros((rows, cols), dtype=bool)
        for share in shares:
            bh, bw = _block_dims(share * ratio * total, rows, cols, rng)
            # prefer a spot that does not overlap earlier blocks
            for _attempt in range(20):
                y = int(rng.integers(0, rows - bh + 1))
                x = int(rng.integers(0, cols - bw + 1))
                if not mask[y:y + bh, x:x + bw].any():
                    break
            mask[y:y + bh, x:x + bw] = True
        if abs(mask.mean() - ratio) <= RATIO_TOLERANCE:
            out = image.copy()
            out[mask] = 0.0
            return out, mask
    raise ContractError(
        f"could not reach {ratio:.0%} coverage with {block_count} blocks on a {rows}x{cols} image"
    )


# -- procedural slides ----------------------------------------------------------


def _glyph_word(rng: np.random.Generator, height: int, n_glyphs: int, ink: float) -> np.ndarray:
    """A run of small stroke patterns that reads as a word at a distance."""
    glyph_w = max(3, int(round(height * 0.6)))
    gap = max(1, height // 6)
    width = n_glyphs * (glyph_w + gap) - gap
    word = np.ones((height, width))
    for g in range(n_glyphs):
        x0 = g * (glyph_w + gap)
        cell = word[:, x0:x0 + glyph_w]
        stroke = max(1, height // 7)
        for _ in range(int(rng.integers(2, 4))):
            if rng.random() < 0.55:
                cx = int(rng.integers(0, glyph_w - stroke + 1))
                top = int(rng.integers(0, height // 3 + 1))
                cell[top:, cx:cx + stroke] = ink
            else:
                cy = int(rng.integers(height // 4, height - stroke + 1))
                cell[cy:cy + stroke, :] = ink
    return word


def render_slide(rng: np.random.Generator, size: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    """A synthetic lecture slide and its text-region mask.

    Layout (title, bullet lines with varying indent and length, optional
    figure box) is random per slide so slides differ mostly in structure.
    """
    u = size / 256.0
    bg = rng.uniform(0.85, 1.0)
    img = np.full((size, size), bg)
    img += np.linspace(0, rng.uniform(-0.05, 0.05), size)[:, None]
    text = np.zeros((size, size), dtype=bool)
    margin = int(round(rng.uniform(12, 24) * u))

    def place_line(y, x, height, max_width, ink):
        while x < max_width:
            n = int(rng.integers(2, 8))
            word = _glyph_word(rng, height, n, ink)
            ww = word.shape[1]
            if x + ww > max_width:
                break
            img[y:y + height, x:x + ww] = np.minimum(img[y:y + height, x:x + ww], word * bg)
            text[y:y + height, x:x + ww] = True
            x += ww + max(2, int(round(height * 0.7)))
            if rng.random() < 0.12:
                break

    title_h = int(round(rng.uniform(14, 20) * u))
    y = margin
    title_right = int(size * rng.uniform(0.45, 0.95))
    title_x = margin if rng.random() < 0.6 else int(size * rng.uniform(0.15, 0.3))
    if rng.random() < 0.4:
        bar = rng.uniform(0.55, 0.8)
        img[y - 4:y + title_h + 4, :] = np.minimum(img[y - 4:y + title_h + 4, :], bar)
    place_line(y, title_x, title_h, title_right, rng.uniform(0.0, 0.25))
    y += title_h + int(round(rng.uniform(10, 22) * u))

    figure = None
    if rng.random() < 0.55:
        fw = int(size * rng.uniform(0.25, 0.45))
        fh = int(size * rng.uniform(0.2, 0.4))
        fx = size - margin - fw if rng.random() < 0.6 else margin
        fy = int(rng.uniform(y, size - margin - fh))
        figure = (fy, fx, fh, fw)
        shade = rng.uniform(0.25, 0.7)
        if rng.random() < 0.5:
            img[fy:fy + fh, fx:fx + fw] = shade
        else:
            t = max(2, int(3 * u))
            img[fy:fy + fh, fx:fx + t] = shade
            img[fy:fy + fh, fx + fw - t:fx + fw] = shade
            img[fy:fy + t, fx:fx + fw] = shade
            img[fy + fh - t:fy + fh, fx:fx + fw] = shade

    line_h = int(round(rng.uniform(7, 11) * u))
    spacing = line_h + int(round(rng.uniform(5, 12) * u))
    for _ in range(int(rng.integers(3, 10))):
        if y + line_h > size - margin:
            break
        indent = margin + int(rng.integers(0, 3)) * int(round(14 * u))
        right = size - margin
        if figure is not None:
            fy, fx, fh, fw = figure
            if y + line_h > fy and y < fy + fh:
                if fx > size / 2:
                    right = fx - int(6 * u)
                else:
                    indent = max(indent, fx + fw + int(6 * u))
        right = int(indent + (right - indent) * rng.uniform(0.35, 1.0))
        if rng.random() < 0.7:
            bullet = max(2, line_h // 3)
            by = y + line_h // 2 - bullet // 2
            img[by:by + bullet, indent - 3 * bullet:indent - 2 * bullet] = 0.1
        if right - indent > line_h * 3:
            place_line(y, indent, line_h, right, rng.uniform(0.0, 0.3))
        y += spacing
    return np.clip(img, 0.0, 1.0), text


# -- query generation -----------------------------------------------------------


def corrupt(
    slide: np.ndarray,
    noise_level: int,
    rng: np.random.Generator,
    text_mask: Optional[np.ndarray] = None,
    ranges: HomographyRanges = PAPER_RANGES,
    block_counts: Tuple[int, int] = (1, 8),
    allow_wide: bool = False,
) -> Tuple[np.ndarray, CorruptionRecord]:
    """Warp the slide with a random homography, then occlude it with black blocks."""
    h = random_homography(rng, ranges, allow_wide=allow_wide)
    blocks = int(rng.integers(block_counts[0], block_counts[1] + 1))
    warped = warp(slide, h)
    noisy, block_mask = add_block_noise(warped, noise_level, blocks, rng)
    record = CorruptionRecord(
        params=CorruptionParams(noise_level, blocks, h),
        block_mask=block_mask,
        slide_mask=footprint(slide.shape, h),
        text_mask=None if text_mask is None else warp_mask(text_mask, h),
    )
    return noisy, record


def generate_queries(
    slide: np.ndarray,
    count: int,
    rng: np.random.Generator,
    levels: Optional[Sequence[int]] = None,
    text_mask: Optional[np.ndarray] = None,
    ranges: HomographyRanges = PAPER_RANGES,
    allow_wide: bool = False,
) -> List[Tuple[np.ndarray, CorruptionRecord]]:
    """``count`` corrupted views of one slide.

    ``levels`` fixes the noise level per query; by default each level is drawn
    uniformly from 1..10.
    """
    if count < 1:
        raise ContractError(f"count must be at least 1, got {count}")
    if levels is None:
        levels = rng.integers(1, NOISE_LEVELS + 1, size=count).tolist()
    if len(levels) != count:
        raise ContractError(f"got {len(levels)} levels for {count} queries")
    return [
        corrupt(slide, int(level), rng, text_mask=text_mask, ranges=ranges, allow_wide=allow_wide)
        for level in levels
    ]
