"""Samples, dataset ingestion, preprocessing and labeled/unlabeled splitting.

Images are stored channel-last as ``(m, m, 1)`` float64 arrays in [0, 1];
masks as ``(m, m, K)`` one-hot float64 arrays with K=2 (background,
foreground).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image as PILImage
from skimage.transform import resize

N_SEG_LOGITS = 2
MAX_LABELED_FRACTION = 0.5
IMAGE_SUFFIXES = (".png", ".pgm")


class DatasetError(ValueError):
    """Raised for malformed dataset directories or invalid samples."""


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class Sample:
    id: str
    image: np.ndarray
    mask: np.ndarray | None = None
    label: int | None = None

    @property
    def is_labeled(self) -> bool:
        return self.mask is not None and self.label is not None

    def stripped(self) -> "Sample":
        """Copy with mask and label physically removed."""
        return Sample(self.id, self.image)


@dataclass
class DatasetSplit:
    labeled: list[Sample]
    unlabeled: list[Sample]
    validation: list[Sample]
    test: list[Sample]
    labeled_fraction: float
    seed: int
    class_count: int
    meta: dict = field(default_factory=dict)

    def partitions(self) -> dict[str, list[Sample]]:
        return {
            "labeled": self.labeled,
            "unlabeled": self.unlabeled,
            "validation": self.validation,
            "test": self.test,
        }

    def labeled_class_counts(self) -> np.ndarray:
        counts = np.zeros(self.class_count, dtype=int)
        for s in self.labeled:
            counts[s.label] += 1
        return counts


def one_hot_mask(foreground: np.ndarray) -> np.ndarray:
    """Binary ``(m, m)`` foreground map -> one-hot ``(m, m, 2)`` mask."""
    fg = (np.asarray(foreground) > 0).astype(np.float64)
    return np.stack([1.0 - fg, fg], axis=-1)


def _as_gray(raw) -> np.ndarray:
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr.mean(axis=-1)
    if arr.ndim != 2:
        raise DatasetError(f"expected a 2-D raster, got shape {arr.shape}")
    return arr


def preprocess(raw_image, target_side: int) -> np.ndarray:
    """Resize to ``target_side`` square (bilinear) and min-max normalize.

    Constant images map to all zeros. Already-preprocessed images pass
    through bit-for-bit.
    """
    arr = _as_gray(raw_image)
    if arr.size == 0:
        raise DatasetError("zero-area image")
    if not np.all(np.isfinite(arr)):
        raise DatasetError("image contains non-finite values")
    if arr.shape != (target_side, target_side):
        downsampling = min(arr.shape) > target_side
        arr = resize(arr, (target_side, target_side), order=1,
                     anti_aliasing=downsampling, preserve_range=True)
    lo, hi = arr.min(), arr.max()
    if hi > lo:
        arr = (arr - lo) / (hi - lo)
    else:
        arr = np.zeros_like(arr)
    return arr[..., None]


def preprocess_mask(raw_mask, target_side: int) -> np.ndarray:
    """Binarize and nearest-neighbor resize a mask, returned one-hot."""
    fg = _as_gray(raw_mask) > 0
    if fg.shape != (target_side, target_side):
        fg = resize(fg.astype(np.float64), (target_side, target_side), order=0,
                    anti_aliasing=False, preserve_range=True) > 0.5
    return one_hot_mask(fg)


def _read_raster(path: Path) -> np.ndarray:
    with PILImage.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.float64)


def load_dataset(root_path, class_count: int, target_side: int | None = None) -> list[Sample]:
    """Read ``images/``, ``masks/`` and ``labels.csv`` under ``root_path``.

    Samples missing either a mask or a label row come back unlabeled.
    Returned in lexicographic id order. With ``target_side`` set, images
    and masks are preprocessed; otherwise raw intensities are min-max
    normalized at their native size.
    """
    root = Path(root_path)
    img_dir = root / "images"
    if not root.is_dir() or not img_dir.is_dir():
        raise DatasetError(f"missing images directory under {root}")
    images = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise DatasetError("no images found")

    masks: dict[str, Path] = {}
    mask_dir = root / "masks"
    if mask_dir.is_dir():
        for p in mask_dir.iterdir():
            if p.suffix.lower() in IMAGE_SUFFIXES:
                masks[p.stem] = p

    labels: dict[str, int] = {}
    label_file = root / "labels.csv"
    if label_file.exists():
        with open(label_file, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"id", "class"} <= set(reader.fieldnames):
                raise DatasetError("labels.csv must have header 'id,class'")
            for lineno, row in enumerate(reader, start=2):
                try:
                    c = int(row["class"])
                except ValueError:
                    raise DatasetError(f"labels.csv:{lineno}: bad class {row['class']!r}") from None
                if not 0 <= c < class_count:
                    raise DatasetError(
                        f"labels.csv:{lineno}: class {c} out of range for class_count={class_count}")
                labels[row["id"]] = c

    samples = []
    bad = []
    for path in images:
        sid = path.stem
        raw = _read_raster(path)
        image = preprocess(raw, target_side) if target_side else _normalize_only(raw)
        mask = label = None
        if sid in masks and sid in labels:
            raw_mask = _read_raster(masks[sid])
            if raw_mask.shape != raw.shape:
                bad.append(sid)
                continue
            mask = preprocess_mask(raw_mask, target_side) if target_side else one_hot_mask(raw_mask)
            label = labels[sid]
        samples.append(Sample(sid, image, mask, label))
    if bad:
        raise DatasetError(f"mask dimensions do not match image for ids: {', '.join(bad)}")
    return samples


def _normalize_only(raw: np.ndarray) -> np.ndarray:
    lo, hi = raw.min(), raw.max()
    out = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    return out[..., None]


def save_dataset(samples: Iterable[Sample], root_path) -> None:
    """Write samples in the directory layout ``load_dataset`` reads (8-bit PNG)."""
    root = Path(root_path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    rows = []
    for s in samples:
        img = np.round(np.clip(s.image[..., 0], 0, 1) * 255).astype(np.uint8)
        PILImage.fromarray(img).save(root / "images" / f"{s.id}.png")
        if s.is_labeled:
            fg = (s.mask[..., 1] > 0.5).astype(np.uint8) * 255
            PILImage.fromarray(fg).save(root / "masks" / f"{s.id}.png")
            rows.append((s.id, s.label))
    with open(root / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "class"])
        w.writerows(rows)


def _take_count(total: int, fraction: float) -> int:
    return int(math.floor(total * fraction + 0.5))


def stratified_split(
    samples: Sequence[Sample],
    labeled_fraction: float,
    val_fraction: float = 0.1,
    test_fraction: float = 0.2,
    seed: int = 0,
    class_count: int | None = None,
    max_labeled_fraction: float = MAX_LABELED_FRACTION,
    holdout_seed: int | None = None,
) -> DatasetSplit:
    """Hold out validation/test, then draw a class-balanced labeled set.

    Validation and test are drawn per class before the labeled/unlabeled
    partition, so sweeps over ``labeled_fraction`` with a fixed seed share
    identical evaluation sets. The labeled set is filled round-robin over
    classes; everything else in the training pool is returned with mask and
    label stripped. ``max_labeled_fraction`` may be raised to 1.0 for fully
    supervised baselines. ``holdout_seed`` (default ``seed``) drives the
    validation/test draw alone, so runs with different seeds can share one
    test set.
    """
    if not 0 < labeled_fraction <= max_labeled_fraction:
        if labeled_fraction > MAX_LABELED_FRACTION and max_labeled_fraction <= MAX_LABELED_FRACTION:
            raise SplitError(f"labeled_fraction {labeled_fraction} exceeds 50% cap")
        raise SplitError(f"labeled_fraction must lie in (0, {max_labeled_fraction}]")
    if val_fraction < 0 or test_fraction < 0 or val_fraction + test_fraction >= 1:
        raise SplitError("val_fraction + test_fraction must lie in [0, 1)")

    labeled_pool = [s for s in samples if s.is_labeled]
    unlabeled_pool = [s.stripped() for s in samples if not s.is_labeled]
    if class_count is None:
        class_count = 1 + max((s.label for s in labeled_pool), default=-1)
    if class_count < 1:
        raise SplitError("no labeled samples")
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise SplitError("duplicate sample ids")

    rng_hold = np.random.default_rng([seed if holdout_seed is None else holdout_seed, 0])
    rng_lab = np.random.default_rng([seed, 1])
    by_class: list[list[Sample]] = [[] for _ in range(class_count)]
    for s in sorted(labeled_pool, key=lambda s: s.id):
        by_class[s.label].append(s)
    for c, members in enumerate(by_class):
        if not members:
            raise SplitError(f"class {c} has zero samples")
        order = rng_hold.permutation(len(members))
        by_class[c] = [members[i] for i in order]

    validation, test, train_by_class = [], [], []
    for members in by_class:
        n_val = _take_count(len(members), val_fraction)
        n_test = _take_count(len(members), test_fraction)
        validation += members[:n_val]
        test += members[n_val:n_val + n_test]
        rest = members[n_val + n_test:]
        train_by_class.append([rest[i] for i in rng_lab.permutation(len(rest))])

    n_train = sum(len(m) for m in train_by_class) + len(unlabeled_pool)
    n_labeled = max(class_count, _take_count(n_train, labeled_fraction))
    labeled: list[Sample] = []
    cursor = [0] * class_count
    if n_labeled >= sum(len(m) for m in train_by_class):
        # fully supervised: every labeled training sample, balance not enforced
        n_labeled = 0
        for members in train_by_class:
            labeled += members
        cursor = [len(m) for m in train_by_class]
    c = 0
    while len(labeled) < n_labeled:
        if cursor[c] >= len(train_by_class[c]):
            raise SplitError(
                f"class {c} has too few training samples for labeled_fraction {labeled_fraction}")
        labeled.append(train_by_class[c][cursor[c]])
        cursor[c] += 1
        c = (c + 1) % class_count

    unlabeled = list(unlabeled_pool)
    for members, k in zip(train_by_class, cursor):
        unlabeled += [s.stripped() for s in members[k:]]
    if labeled_fraction <= MAX_LABELED_FRACTION and len(labeled) > len(unlabeled):
        raise SplitError("labeled set larger than unlabeled set")

    key = lambda s: s.id
    return DatasetSplit(
        labeled=sorted(labeled, key=key),
        unlabeled=sorted(unlabeled, key=key),
        validation=sorted(validation, key=key),
        test=sorted(test, key=key),
        labeled_fraction=labeled_fraction,
        seed=seed,
        class_count=class_count,
    )


def write_manifest(split: DatasetSplit, path) -> None:
    """One ``id,partition,labeled`` row per sample, partitions in fixed order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "partition", "labeled"])
        for name, members in split.partitions().items():
            for s in members:
                w.writerow([s.id, name, int(s.is_labeled)])


def read_manifest(path) -> list[tuple[str, str, bool]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [(r["id"], r["partition"], r["labeled"] == "1") for r in reader]


def split_from_manifest(samples: Sequence[Sample], path, labeled_fraction: float,
                        seed: int, class_count: int) -> DatasetSplit:
    """Rebuild a split from a manifest written by ``write_manifest``."""
    by_id = {s.id: s for s in samples}
    parts: dict[str, list[Sample]] = {"labeled": [], "unlabeled": [], "validation": [], "test": []}
    for sid, part, is_lab in read_manifest(path):
        if sid not in by_id:
            raise SplitError(f"manifest id {sid!r} not in dataset")
        s = by_id[sid]
        parts[part].append(s if is_lab else s.stripped())
    return DatasetSplit(**parts, labeled_fraction=labeled_fraction, seed=seed,
                        class_count=class_count)


# Synthetic shapes: class 0 ellipse, class 1 rectangle, class 2 triangle.
_SHAPE_NAMES = ("ellipse", "rectangle", "triangle")


def _center(extent: float, side: int, jitter: float, rng: np.random.Generator) -> float:
    lo, hi = extent + 1, side - extent - 1
    c = side / 2 + rng.uniform(-jitter, jitter) * side
    return float(np.clip(c, lo, hi))


def _draw_shape(kind: int, side: int, jitter: float, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side] + 0.5
    if kind == 0:
        a, b = rng.uniform(0.18, 0.36, size=2) * side
        theta = rng.uniform(0, np.pi)
        r = max(a, b)
        cy, cx = _center(r, side, jitter, rng), _center(r, side, jitter, rng)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        return (u / a) ** 2 + (v / b) ** 2 <= 1.0
    if kind == 1:
        hh, hw = rng.uniform(0.15, 0.33, size=2) * side
        cy, cx = _center(hh, side, jitter, rng), _center(hw, side, jitter, rng)
        return (np.abs(yy - cy) <= hh) & (np.abs(xx - cx) <= hw)
    # isosceles triangle, apex up or down
    h = rng.uniform(0.4, 0.75) * side
    half_base = rng.uniform(0.25, 0.4) * side
    cx = _center(half_base, side, jitter, rng)
    top = _center(h / 2, side, jitter, rng) - h / 2
    t = (yy - top) / h
    if rng.random() < 0.5:
        t = 1.0 - t
    return (t >= 0) & (t <= 1) & (np.abs(xx - cx) <= half_base * t)


def _smooth(noise: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    from scipy.ndimage import gaussian_filter
    return gaussian_filter(noise, sigma=rng.uniform(1.5, 3.0))


def make_synthetic(count: int, side: int = 64, class_count: int = 2, seed: int = 0,
                   center_jitter: float = 0.15) -> list[Sample]:
    """Balanced synthetic shapes on a noisy, smoothly shaded background.

    Shape centers are drawn within ``center_jitter * side`` of the image
    center (clipped so the shape stays inside), mimicking patches cropped
    around one structure each.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    if side < 16:
        raise ValueError("side must be at least 16")
    if not 2 <= class_count <= len(_SHAPE_NAMES):
        raise ValueError(f"class_count must be in [2, {len(_SHAPE_NAMES)}]")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % class_count)
    samples = []
    for i, c in enumerate(labels):
        fg = _draw_shape(int(c), side, center_jitter, rng)
        background = rng.uniform(0.15, 0.45)
        contrast = rng.uniform(0.15, 0.4)
        shading = _smooth(rng.normal(0, 1, (side, side)), rng)
        shading = 0.25 * shading / (np.abs(shading).max() + 1e-12)
        img = background + shading + contrast * fg + rng.normal(0, 0.08, (side, side))
        img = np.clip(img, 0.0, 1.0)
        samples.append(Sample(f"syn{i:05d}", img[..., None], one_hot_mask(fg), int(c)))
    return samples
