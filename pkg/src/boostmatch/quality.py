"""Image quality score from text, slide and blocked areas, plus decile binning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import ContractError, DataError

QUALITY_LEVELS = 10


@dataclass(frozen=True)
class QualityInputs:
    text_area: int
    slide_area: int
    blocked_area: int
    image_size: int

    def __post_init__(self):
        t, s, b, c = self.text_area, self.slide_area, self.blocked_area, self.image_size
        if not (0 <= b <= c and 0 <= t <= s <= c):
            raise ContractError(f"need 0 <= B <= C and 0 <= T <= S <= C, got T={t} S={s} B={b} C={c}")

    def to_dict(self) -> dict:
        return {
            "text_area": self.text_area,
            "slide_area": self.slide_area,
            "blocked_area": self.blocked_area,
            "image_size": self.image_size,
        }


def quality_score(inputs: QualityInputs) -> int:
    """T * S * (C - B); exact integer arithmetic."""
    return int(inputs.text_area) * int(inputs.slide_area) * (int(inputs.image_size) - int(inputs.blocked_area))


def assign_levels(scores: Sequence[float]) -> List[int]:
    """Equal-frequency deciles: the highest scores get level 1.

    Ties keep their input order, so equal scores fill levels front to back.
    """
    n = len(scores)
    if n < QUALITY_LEVELS:
        raise ContractError(f"need at least {QUALITY_LEVELS} scores, got {n}")
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    levels = [0] * n
    for rank, i in enumerate(order):
        levels[i] = rank * QUALITY_LEVELS // n + 1
    return levels


def quality_from_masks(
    block_mask: Optional[np.ndarray],
    slide_mask: Optional[np.ndarray],
    text_mask: Optional[np.ndarray],
) -> QualityInputs:
    """Pixel counts from ground-truth masks, all in the query's frame.

    Text hidden under a block does not count as visible text.
    """
    if block_mask is None or slide_mask is None or text_mask is None:
        raise DataError("quality needs block, slide and text masks")
    shapes = {np.shape(block_mask), np.shape(slide_mask), np.shape(text_mask)}
    if len(shapes) != 1:
        raise DataError(f"mask shapes differ: {sorted(shapes)}")
    block = np.asarray(block_mask, dtype=bool)
    slide = np.asarray(slide_mask, dtype=bool)
    visible_text = np.asarray(text_mask, dtype=bool) & ~block & slide
    return QualityInputs(
        text_area=int(visible_text.sum()),
        slide_area=int(slide.sum()),
        blocked_area=int(block.sum()),
        image_size=int(block.size),
    )


def quality_from_record(record, text_mask: Optional[np.ndarray] = None) -> QualityInputs:
    """QualityInputs for a synthesized query.

    ``text_mask`` is the warped text annotation; defaults to the one carried by
    the record.
    """
    text = text_mask if text_mask is not None else getattr(record, "text_mask", None)
    return quality_from_masks(record.block_mask, record.slide_mask, text)
