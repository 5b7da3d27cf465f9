"""Segmentation and classification metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt
from skimage.metrics import structural_similarity

SSIM_WINDOW = 11


@dataclass
class SegMetrics:
    DS: float
    JI: float
    SSIM: float
    HD: float
    Prec: float
    Rec: float

    def as_dict(self):
        return asdict(self)


@dataclass
class ClsMetrics:
    accuracy: float
    f1: np.ndarray


def _foreground(mask) -> np.ndarray:
    """Accept ``(m, m)`` foreground maps or ``(m, m, K)`` masks."""
    a = np.asarray(mask, dtype=np.float64)
    return a[..., 1] if a.ndim == 3 else a


def average_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    """Mean of the two directed average nearest-neighbor distances.

    Both empty gives 0. Exactly one empty gives the grid diagonal, the
    largest distance the grid can hold.
    """
    a, b = np.asarray(a, bool), np.asarray(b, bool)
    if not a.any() and not b.any():
        return 0.0
    if not a.any() or not b.any():
        return float(np.hypot(*a.shape))
    to_b = distance_transform_edt(~b)
    to_a = distance_transform_edt(~a)
    return 0.5 * (to_b[a].mean() + to_a[b].mean())


def ssim(y: np.ndarray, y_hat: np.ndarray) -> float:
    """SSIM with an 11x11 uniform window on unit-range maps, clipped to [0, 1]."""
    win = min(SSIM_WINDOW, *(s if s % 2 else s - 1 for s in y.shape))
    s = structural_similarity(y, y_hat, win_size=win, data_range=1.0, gaussian_weights=False)
    return float(np.clip(s, 0.0, 1.0))


def segmentation_metrics(y, y_hat, threshold: float = 0.5) -> SegMetrics:
    """Overlap, distance and structural scores of one prediction.

    ``y_hat`` is binarized at ``threshold`` (strictly above counts as
    foreground) for everything except SSIM, which compares the soft maps.
    """
    fy, fp = _foreground(y), _foreground(y_hat)
    if fy.shape != fp.shape:
        raise ValueError(f"shape mismatch {fy.shape} vs {fp.shape}")
    A, B = fy > 0.5, fp > threshold
    inter = float((A & B).sum())
    na, nb = float(A.sum()), float(B.sum())
    if na == 0 and nb == 0:
        ds = ji = prec = rec = 1.0
    else:
        ds = 2 * inter / (na + nb)
        ji = inter / (na + nb - inter)
        prec = inter / nb if nb else 0.0
        rec = inter / na if na else 0.0
    return SegMetrics(ds, ji, ssim(fy, fp), average_hausdorff(A, B), prec, rec)


def classification_metrics(predictions, labels, n: int) -> ClsMetrics:
    pred = np.asarray(predictions, dtype=int)
    true = np.asarray(labels, dtype=int)
    if pred.shape != true.shape:
        raise ValueError("predictions and labels differ in length")
    if pred.size == 0:
        raise ValueError("empty prediction set")
    conf = np.zeros((n, n), dtype=np.int64)
    np.add.at(conf, (true, pred), 1)
    tp = np.diag(conf).astype(float)
    denom = conf.sum(axis=0) + conf.sum(axis=1)  # 2tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros(n), where=denom > 0)
    return ClsMetrics(float(tp.sum() / pred.size), f1)
