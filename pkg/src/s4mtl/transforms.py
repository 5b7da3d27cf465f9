"""Geometric transforms used to manufacture proxy labels for unlabeled images."""
from __future__ import annotations

from typing import Sequence

import numpy as np

CATALOG = ("rot0", "rot90", "rot180", "rot270", "hflip", "vflip")
N_TRANSFORMS = len(CATALOG)
INVERSE = {0: 0, 1: 3, 2: 2, 3: 1, 4: 4, 5: 5}


def apply_transform(image: np.ndarray, tid: int) -> np.ndarray:
    """Permute pixels of a square ``(m, m, ...)`` array; no interpolation.

    Rotations are counter-clockwise. ``hflip`` mirrors left-right,
    ``vflip`` top-bottom.
    """
    if image.ndim < 2 or image.shape[0] != image.shape[1]:
        raise ValueError(f"transform needs a square image, got shape {image.shape}")
    if not 0 <= tid < N_TRANSFORMS:
        raise ValueError(f"unknown transform id {tid}")
    if tid < 4:
        return np.rot90(image, k=tid, axes=(0, 1)).copy()
    if tid == 4:
        return image[:, ::-1].copy()
    return image[::-1].copy()


def sample_proxy_batch(x_u: Sequence[np.ndarray], seed) -> list[tuple[np.ndarray, int]]:
    """Draw one transform per image uniformly over the catalog."""
    if len(x_u) == 0:
        raise ValueError("empty unlabeled batch")
    rng = np.random.default_rng(seed)
    tids = rng.integers(0, N_TRANSFORMS, size=len(x_u))
    return [(apply_transform(x, int(t)), int(t)) for x, t in zip(x_u, tids)]
