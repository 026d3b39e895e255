"""On-disk dataset: PNG images, mask files and a JSON Lines manifest.

The manifest's first line is a header object; every following line is one
image record. Keys are sorted and floats use shortest round-trip repr, so the
same seed always produces a byte-identical manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError
from .loader import DatasetIndex
from .quality import QualityInputs, assign_levels, quality_from_masks, quality_score
from .synth import NOISE_LEVELS, PAPER_RANGES, HomographyRanges, corrupt, render_slide

MANIFEST_FORMAT = "boostmatch-manifest"
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"


# -- image files ----------------------------------------------------------------


def save_gray(path: Path, image: np.ndarray) -> None:
    """Write a [0, 1] float image as an 8-bit grayscale PNG."""
    pixels = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path, format="PNG", optimize=False)


def save_mask(path: Path, mask: np.ndarray) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255, mode="L").save(path, format="PNG", optimize=False)


def load_gray(path: Union[str, Path], size: Optional[int] = None) -> np.ndarray:
    """Read any image file as grayscale floats in [0, 1], optionally resized to size x size."""
    try:
        with Image.open(path) as img:
            img = img.convert("L")
            if size is not None and img.size != (size, size):
                img = img.resize((size, size), Image.Resampling.BILINEAR)
            return np.asarray(img, dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None


def load_mask(path: Union[str, Path]) -> np.ndarray:
    return load_gray(path) > 0.5


# -- manifest -------------------------------------------------------------------


@dataclass
class ImageRecord:
    id: str
    role: str
    split: str
    file: str
    matches: List[str] = field(default_factory=list)
    level: Optional[int] = None
    block_count: Optional[int] = None
    blocked_ratio: Optional[float] = None
    homography: Optional[List[float]] = None
    masks: Dict[str, str] = field(default_factory=dict)
    quality: Optional[Dict[str, int]] = None

    def to_dict(self) -> dict:
        out = {"id": self.id, "role": self.role, "split": self.split, "file": self.file, "matches": self.matches}
        for name in ("level", "block_count", "blocked_ratio", "homography", "quality"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        if self.masks:
            out["masks"] = self.masks
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ImageRecord":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown record fields {sorted(unknown)}")
        return cls(**data)

    @property
    def quality_inputs(self) -> Optional[QualityInputs]:
        return None if self.quality is None else QualityInputs(**self.quality)


@dataclass
class Manifest:
    root: Path
    header: dict
    records: List[ImageRecord]

    def __post_init__(self):
        self.by_id = {}
        for rec in self.records:
            if rec.id in self.by_id:
                raise DataError(f"duplicate id {rec.id!r}")
            if rec.role not in ("query", "target"):
                raise DataError(f"record {rec.id!r}: role must be query or target, got {rec.role!r}")
            self.by_id[rec.id] = rec
        for rec in self.records:
            for m in rec.matches:
                if m not in self.by_id:
                    raise DataError(f"record {rec.id!r}: match {m!r} does not resolve")
            if rec.role == "query" and not rec.matches:
                raise DataError(f"query {rec.id!r} has no match")

    @property
    def image_size(self) -> int:
        return int(self.header["image_size"])

    def targets(self) -> List[ImageRecord]:
        return [r for r in self.records if r.role == "target"]

    def queries(self, split: Optional[str] = None) -> List[ImageRecord]:
        return [r for r in self.records if r.role == "query" and (split is None or r.split == split)]

    def path(self, rec: ImageRecord) -> Path:
        return self.root / rec.file

    def load_image(self, rec: ImageRecord) -> np.ndarray:
        return load_gray(self.path(rec))

    def dumps(self) -> str:
        lines = [json.dumps(self.header, sort_keys=True)]
        lines += [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()

    def save(self) -> Path:
        path = self.root / MANIFEST_NAME
        path.write_text(self.dumps())
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Manifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        try:
            text = path.read_text()
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from None
        lines = text.splitlines()
        if not lines:
            raise DataError(f"{path}: empty manifest")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise DataError(f"{path} line 1: {exc}") from None
        if not isinstance(header, dict) or header.get("format") != MANIFEST_FORMAT:
            raise DataError(f"{path} line 1: not a {MANIFEST_FORMAT} header")
        if header.get("version") != MANIFEST_VERSION:
            raise DataError(f"{path}: manifest version {header.get('version')} unsupported (expected {MANIFEST_VERSION})")
        records = []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                records.append(ImageRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError, DataError) as exc:
                raise DataError(f"{path} line {lineno}: {exc}") from None
        return cls(path.parent, header, records)

    # -- derived views ------------------------------------------------------
    def training_index(self) -> DatasetIndex:
        """Training pair universe.

        Query slot: training queries. Target slot: every slide plus every
        training query, so other slides' corrupted views act as negatives and
        views of the same slide as positives. Self pairs are excluded.
        """
        train = self.queries("train")
        if not train:
            raise DataError("manifest has no training queries")
        slides = [r.id for r in self.targets()]
        views: Dict[str, List[str]] = {}
        for q in train:
            for m in q.matches:
                views.setdefault(m, []).append(q.id)
        positives = {}
        for q in train:
            pos = set(q.matches)
            for m in q.matches:
                pos.update(v for v in views[m] if v != q.id)
            positives[q.id] = pos
        return DatasetIndex([q.id for q in train], slides + [q.id for q in train], positives)

    def quality_levels(self, queries: Sequence[ImageRecord]) -> Optional[Dict[str, int]]:
        """Quality deciles over the given queries (None if fewer than 10 or inputs missing)."""
        if len(queries) < 10 or any(q.quality is None for q in queries):
            return None
        levels = assign_levels([quality_score(q.quality_inputs) for q in queries])
        return {q.id: lv for q, lv in zip(queries, levels)}


# -- generation -----------------------------------------------------------------


@dataclass(frozen=True)
class GenerateConfig:
    slides: int = 20
    queries_per_slide: int = 5
    test_queries_per_slide: int = 0
    seed: int = 7
    image_size: int = 256
    ranges: HomographyRanges = PAPER_RANGES
    allow_wide: bool = False

    def check(self) -> None:
        if self.slides < 1 or self.queries_per_slide < 1 or self.test_queries_per_slide < 0:
            raise DataError(f"need at least one slide and one query per slide: {self}")
        self.ranges.check(self.allow_wide)

    def header(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "image_size": self.image_size,
            "seed": self.seed,
            "slides": self.slides,
            "queries_per_slide": self.queries_per_slide,
            "test_queries_per_slide": self.test_queries_per_slide,
            "homography_ranges": {
                "scale": list(self.ranges.scale),
                "rotation_deg": list(self.ranges.rotation_deg),
                "translation": list(self.ranges.translation),
                "perspective": self.ranges.perspective,
            },
        }


def _query_record(qid, split, sid, image, rec, out: Path) -> ImageRecord:
    save_gray(out / "images" / f"{qid}.png", image)
    masks = {}
    for name, mask in (("block", rec.block_mask), ("slide", rec.slide_mask), ("text", rec.text_mask)):
        masks[name] = f"masks/{qid}_{name}.png"
        save_mask(out / masks[name], mask)
    return ImageRecord(
        id=qid,
        role="query",
        split=split,
        file=f"images/{qid}.png",
        matches=[sid],
        level=rec.params.noise_level,
        block_count=rec.params.block_count,
        blocked_ratio=rec.blocked_pixel_ratio,
        homography=rec.homography_coefficients(),
        masks=masks,
        quality=quality_from_masks(rec.block_mask, rec.slide_mask, rec.text_mask).to_dict(),
    )


def generate_dataset(out: Union[str, Path], config: GenerateConfig = GenerateConfig()) -> Manifest:
    """Render slides, synthesize their query views and write everything under ``out``.

    Training queries get uniformly random noise levels; held-out test queries
    cycle through levels 1..10 so every level is equally represented.
    """
    config.check()
    out = Path(out)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {out}: {exc}") from None
    width = max(3, len(str(config.slides - 1)))
    records: List[ImageRecord] = []
    queries: List[ImageRecord] = []
    for s in range(config.slides):
        rng = np.random.default_rng([config.seed, 10, s])
        slide, text = render_slide(rng, config.image_size)
        sid = f"s{s:0{width}d}"
        save_gray(out / "images" / f"{sid}.png", slide)
        save_mask(out / "masks" / f"{sid}_text.png", text)
        records.append(ImageRecord(
            id=sid, role="target", split="target", file=f"images/{sid}.png",
            masks={"text": f"masks/{sid}_text.png"},
        ))
        # quantize once so stored and in-memory slides agree
        slide = np.rint(slide * 255.0) / 255.0
        for j in range(config.queries_per_slide):
            level = int(rng.integers(1, NOISE_LEVELS + 1))
            image, rec = corrupt(slide, level, rng, text_mask=text, ranges=config.ranges, allow_wide=config.allow_wide)
            queries.append(_query_record(f"{sid}_q{j}", "train", sid, image, rec, out))
        for j in range(config.test_queries_per_slide):
            level = j % NOISE_LEVELS + 1
            image, rec = corrupt(slide, level, rng, text_mask=text, ranges=config.ranges, allow_wide=config.allow_wide)
            queries.append(_query_record(f"{sid}_t{j}", "test", sid, image, rec, out))
    manifest = Manifest(out, config.header(), records + queries)
    manifest.save()
    return manifest
