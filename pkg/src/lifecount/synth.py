"""Synthetic multi-domain counting datasets.

Domains differ in their count distribution P(c) and in rendering statistics
(blob size, noise floor). Images are procedural: c ~ P(c) heads placed
uniformly at random, each rendered as an isotropic Gaussian brightness bump,
plus a uniform noise floor, clipped to [0, 1]. Annotations keep the exact
sub-pixel placement coordinates.

On-disk layout per domain:
    <dir>/meta.json                     DomainSpec
    <dir>/{train,test}/images/<id>.png  8-bit grayscale rasters
    <dir>/{train,test}/annotations.json {id: [[x, y], ...]}
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .density import DEFAULT_SIGMA, DensityMap, density_from_heads

# Peak brightness of a single rendered head. Below 1.0 so isolated heads
# never clip; overlapping heads in dense scenes do, which is what makes
# per-blob calibration domain-dependent.
BLOB_AMPLITUDE = 0.6

_MASK64 = (1 << 64) - 1


def _u64(seed: int) -> int:
    return int(seed) & _MASK64


@dataclass(frozen=True)
class CountDistribution:
    """Per-image head-count law: 'poisson' (mean) or 'uniform-range' ([lo, hi])."""

    kind: str
    mean: float | None = None
    lo: int | None = None
    hi: int | None = None

    def validate(self) -> None:
        if self.kind == "poisson":
            if self.mean is None or self.mean < 0:
                raise ValueError(f"count_distribution.mean must be >= 0, got {self.mean}")
        elif self.kind == "uniform-range":
            if self.lo is None or self.hi is None:
                raise ValueError("count_distribution.lo and .hi are required for uniform-range")
            if self.lo < 0 or self.hi < self.lo:
                raise ValueError(f"count_distribution range [{self.lo}, {self.hi}] invalid")
        else:
            raise ValueError(f"count_distribution.kind must be 'poisson' or 'uniform-range', got {self.kind!r}")

    def sample(self, rng: np.random.Generator) -> int:
        if self.kind == "poisson":
            return int(rng.poisson(self.mean))
        return int(rng.integers(self.lo, self.hi + 1))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "poisson":
            d["mean"] = self.mean
        else:
            d["lo"] = self.lo
            d["hi"] = self.hi
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CountDistribution":
        return cls(kind=d["kind"], mean=d.get("mean"), lo=d.get("lo"), hi=d.get("hi"))


@dataclass(frozen=True)
class DomainSpec:
    name: str
    count_distribution: CountDistribution
    blob_sigma_px: float = 1.5
    noise_level: float = 0.08
    image_size: tuple[int, int] = (64, 64)
    n_train: int = 100
    n_test: int = 50
    seed: int = 0

    def validate(self) -> None:
        if not self.name or not all(ch.isalnum() or ch in "-_" for ch in self.name):
            raise ValueError(f"name must be a non-empty [A-Za-z0-9_-] token, got {self.name!r}")
        self.count_distribution.validate()
        if self.blob_sigma_px <= 0:
            raise ValueError(f"blob_sigma_px must be positive, got {self.blob_sigma_px}")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ValueError(f"noise_level must be in [0, 1], got {self.noise_level}")
        h, w = self.image_size
        if h < 16 or w < 16:
            raise ValueError(f"image_size must be at least 16x16, got {h}x{w}")
        if self.n_train < 1:
            raise ValueError(f"n_train must be >= 1, got {self.n_train}")
        if self.n_test < 1:
            raise ValueError(f"n_test must be >= 1, got {self.n_test}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["count_distribution"] = self.count_distribution.to_dict()
        d["image_size"] = list(self.image_size)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(
            name=d["name"],
            count_distribution=CountDistribution.from_dict(d["count_distribution"]),
            blob_sigma_px=float(d.get("blob_sigma_px", 1.5)),
            noise_level=float(d.get("noise_level", 0.08)),
            image_size=tuple(d.get("image_size", (64, 64))),  # type: ignore[arg-type]
            n_train=int(d.get("n_train", 100)),
            n_test=int(d.get("n_test", 50)),
            seed=int(d.get("seed", 0)),
        )


@dataclass(eq=False)
class AnnotatedImage:
    """Grayscale image with exact head-center coordinates.

    ``heads`` is a (K, 2) array of (x, y) pairs; x indexes columns, y rows,
    both on the pixel-center convention (pixel (r, c) sits at (x=c, y=r)).
    """

    image: np.ndarray
    heads: np.ndarray
    id: str

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float64)
        self.heads = np.asarray(self.heads, dtype=np.float64).reshape(-1, 2)
        if self.image.ndim != 2:
            raise ValueError(f"image must be 2-D, got shape {self.image.shape}")
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        h, w = self.image.shape
        for x, y in self.heads:
            if not (0.0 <= x < w and 0.0 <= y < h):
                raise ValueError(f"head ({x}, {y}) outside {h}x{w} image bounds in {self.id!r}")

    @property
    def count(self) -> int:
        return int(self.heads.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnnotatedImage):
            return NotImplemented
        return (
            self.id == other.id
            and self.image.shape == other.image.shape
            and self.heads.shape == other.heads.shape
            and bool(np.array_equal(self.image, other.image))
            and bool(np.array_equal(self.heads, other.heads))
        )


@dataclass(eq=False)
class DomainDataset:
    spec: DomainSpec
    train: list[AnnotatedImage]
    test: list[AnnotatedImage]

    def __post_init__(self):
        if len(self.train) != self.spec.n_train:
            raise ValueError(f"train split has {len(self.train)} images, spec says {self.spec.n_train}")
        if len(self.test) != self.spec.n_test:
            raise ValueError(f"test split has {len(self.test)} images, spec says {self.spec.n_test}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, DomainDataset):
            return NotImplemented
        return self.spec == other.spec and self.train == other.train and self.test == other.test


def _render_image(spec: DomainSpec, index: int, image_id: str) -> AnnotatedImage:
    # Per-image substream of (spec.seed, index): serial and parallel
    # generation agree bit for bit.
    rng = np.random.default_rng([_u64(spec.seed), index])
    h, w = spec.image_size
    c = spec.count_distribution.sample(rng)
    # Heads live on [0, W-1] x [0, H-1] (pixel centers), so horizontal
    # mirroring stays in-domain and rounding never leaves the grid. The
    # 1/256-pixel lattice makes mirroring exactly involutive in float64.
    heads = rng.uniform(low=0.0, high=[w - 1.0, h - 1.0], size=(c, 2))
    heads = np.round(heads * 256.0) / 256.0
    img = spec.noise_level * rng.uniform(size=(h, w))
    radius = int(math.ceil(3.0 * spec.blob_sigma_px))
    for x, y in heads:
        r0, r1 = max(0, int(y) - radius), min(h, int(y) + radius + 2)
        c0, c1 = max(0, int(x) - radius), min(w, int(x) + radius + 2)
        rr = np.arange(r0, r1, dtype=np.float64)
        cc = np.arange(c0, c1, dtype=np.float64)
        bump = np.exp(
            -((rr[:, None] - y) ** 2 + (cc[None, :] - x) ** 2) / (2.0 * spec.blob_sigma_px**2)
        )
        img[r0:r1, c0:c1] += BLOB_AMPLITUDE * bump
    img = np.clip(img, 0.0, 1.0)
    # Quantize to the 8-bit levels used on disk so save -> load is exact.
    img = np.round(img * 255.0) / 255.0
    return AnnotatedImage(image=img, heads=heads, id=image_id)


def generate_domain(spec: DomainSpec) -> DomainDataset:
    """Render a full domain deterministically from its spec seed."""
    spec.validate()
    train = [_render_image(spec, i, f"train_{i:04d}") for i in range(spec.n_train)]
    test = [
        _render_image(spec, spec.n_train + i, f"test_{i:04d}") for i in range(spec.n_test)
    ]
    return DomainDataset(spec=spec, train=train, test=test)


def _save_split(images: list[AnnotatedImage], split_dir: Path) -> None:
    img_dir = split_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    annotations = {}
    for im in images:
        arr = np.round(im.image * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(img_dir / f"{im.id}.png")
        annotations[im.id] = [[float(x), float(y)] for x, y in im.heads]
    with open(split_dir / "annotations.json", "w") as f:
        json.dump(annotations, f, indent=1, sort_keys=True)


def save_dataset(ds: DomainDataset, root) -> None:
    """Write one domain under ``root`` (meta.json + train/ + test/)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "meta.json", "w") as f:
        json.dump(ds.spec.to_dict(), f, indent=2, sort_keys=True)
    _save_split(ds.train, root / "train")
    _save_split(ds.test, root / "test")


def _load_split(split_dir: Path, expected: int) -> list[AnnotatedImage]:
    ann_path = split_dir / "annotations.json"
    if not ann_path.is_file():
        raise FileNotFoundError(f"missing annotations file: {ann_path}")
    with open(ann_path) as f:
        annotations = json.load(f)
    images = []
    for image_id in sorted(annotations):
        img_path = split_dir / "images" / f"{image_id}.png"
        if not img_path.is_file():
            raise FileNotFoundError(f"annotations reference missing image: {img_path}")
        arr = np.asarray(Image.open(img_path).convert("L"), dtype=np.float64) / 255.0
        images.append(AnnotatedImage(image=arr, heads=np.asarray(annotations[image_id]), id=image_id))
    if len(images) != expected:
        raise ValueError(f"{split_dir}: found {len(images)} annotated images, meta says {expected}")
    return images


def load_dataset(root) -> DomainDataset:
    """Inverse of :func:`save_dataset`; exact round trip."""
    root = Path(root)
    meta_path = root / "meta.json"
    if not meta_path.is_file():
        raise FileNotFoundError(f"missing dataset meta: {meta_path}")
    with open(meta_path) as f:
        spec = DomainSpec.from_dict(json.load(f))
    spec.validate()
    train = _load_split(root / "train", spec.n_train)
    test = _load_split(root / "test", spec.n_test)
    return DomainDataset(spec=spec, train=train, test=test)


def hflip(img: AnnotatedImage, dmap: DensityMap) -> tuple[AnnotatedImage, DensityMap]:
    """Mirror image, annotations and density about the vertical axis.

    Exact involution for coordinates in [0, W-1]; the unreachable fringe
    (W-1, W) clamps to the border pixel.
    """
    w = img.image.shape[1]
    heads = img.heads.copy()
    heads[:, 0] = np.clip((w - 1.0) - heads[:, 0], 0.0, w - 1.0)
    flipped = AnnotatedImage(
        image=np.ascontiguousarray(img.image[:, ::-1]), heads=heads, id=img.id
    )
    return flipped, DensityMap(np.ascontiguousarray(dmap.grid[:, ::-1]), stride=dmap.stride)


def crop(
    img: AnnotatedImage, top: int, left: int, size: int, sigma: float = DEFAULT_SIGMA
) -> tuple[AnnotatedImage, DensityMap]:
    """Square crop with consistent annotations and a re-rendered density.

    Heads are kept iff their coordinates fall inside the cropped pixel grid
    [left, left+size-1] x [top, top+size-1]; the density is re-rendered from
    the kept annotations so its mass equals the cropped head count exactly
    (slicing the full-image density would leak kernel tails across the crop
    boundary).
    """
    h, w = img.image.shape
    if size > min(h, w):
        raise ValueError(f"crop size {size} larger than image {h}x{w}")
    if not (0 <= top <= h - size and 0 <= left <= w - size):
        raise ValueError(f"crop offset ({top}, {left}) out of range for size {size}")
    window = img.image[top : top + size, left : left + size].copy()
    if img.count:
        keep = (
            (img.heads[:, 0] >= left)
            & (img.heads[:, 0] <= left + size - 1)
            & (img.heads[:, 1] >= top)
            & (img.heads[:, 1] <= top + size - 1)
        )
        heads = img.heads[keep] - np.array([left, top], dtype=np.float64)
    else:
        heads = np.zeros((0, 2))
    out = AnnotatedImage(image=window, heads=heads, id=img.id)
    return out, density_from_heads(heads, (size, size), sigma)


def augment(
    img: AnnotatedImage,
    dmap: DensityMap,
    rng: np.random.Generator,
    crop_size: int | None = None,
    sigma: float = DEFAULT_SIGMA,
) -> tuple[AnnotatedImage, DensityMap]:
    """Training-time augmentation: p=0.5 horizontal flip, then a random crop.

    Default crop size is half the (shorter) image side. Draw order is fixed
    (flip coin, then top, then left) so equal rng states reproduce equal
    augmentations.
    """
    h, w = img.image.shape
    if dmap.shape != (h, w):
        raise ValueError(f"density shape {dmap.shape} does not match image {h}x{w}")
    if crop_size is None:
        crop_size = min(h, w) // 2
    if crop_size > min(h, w):
        raise ValueError(f"crop size {crop_size} larger than image {h}x{w}")
    if rng.random() < 0.5:
        img, dmap = hflip(img, dmap)
    top = int(rng.integers(0, h - crop_size + 1))
    left = int(rng.integers(0, w - crop_size + 1))
    return crop(img, top, left, crop_size, sigma)
