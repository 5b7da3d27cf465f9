"""Loss terms for the mask generator G and the (n+1)-class discriminator D.

All functions take torch tensors and stay differentiable. Mask tensors are
channel-first ``(B, K, m, m)`` with K=2 and the foreground at channel 1.
Batch reductions are means, one term per sample.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch

FOREGROUND = 1
DICE_EPS = 1e-7
PROB_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0       # unsupervised branch
    lambda_adv: float = 0.01  # G's adversarial terms
    lambda_self: float = 1.0  # D's transform-prediction term

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be nonnegative")


@dataclass
class LossReport:
    dice_supervised: float = 0.0
    kl_unsupervised: float = 0.0
    g_adv_labeled: float = 0.0
    g_adv_unlabeled: float = 0.0
    d_supervised: float = 0.0
    d_selfsup: float = 0.0
    d_adv_real: float = 0.0
    d_adv_pred_labeled: float = 0.0
    d_adv_pred_unlabeled: float = 0.0
    total_G: float = 0.0
    total_D: float = 0.0

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def _check_finite(t: torch.Tensor, what: str) -> None:
    if not torch.isfinite(t).all():
        raise ValueError(f"non-finite {what}")


def class_probabilities(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the last axis with max subtraction."""
    logits = torch.as_tensor(logits)
    _check_finite(logits, "logit")
    shifted = logits - logits.max(dim=-1, keepdim=True).values.detach()
    e = shifted.exp()
    return e / e.sum(dim=-1, keepdim=True)


def fake_probability(logits: torch.Tensor) -> torch.Tensor:
    """p(class n+1 | .) from (n+1)-dim main-head logits."""
    return class_probabilities(logits)[..., -1]


def _check_pair(y: torch.Tensor, y_hat: torch.Tensor) -> None:
    if y.shape != y_hat.shape:
        raise ValueError(f"mask shape mismatch: {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    if y.ndim != 4 or y.shape[1] != 2:
        raise ValueError(f"expected (B, 2, m, m) masks, got {tuple(y.shape)}")


def dice_loss(y: torch.Tensor, y_hat: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Soft Dice loss on the foreground logit, one value per sample.

    ``1 - TP / (TP + (FP + FN)/2 + eps)`` where the sums run over all
    pixels; FP pairs the background truth with the foreground prediction
    and FN the foreground truth with the background prediction.
    """
    _check_pair(y, y_hat)
    k, kbar = FOREGROUND, 1 - FOREGROUND
    tp = (y[:, k] * y_hat[:, k]).sum(dim=(1, 2))
    fp = (y[:, kbar] * y_hat[:, k]).sum(dim=(1, 2))
    fn = (y[:, k] * y_hat[:, kbar]).sum(dim=(1, 2))
    per_sample = 1.0 - tp / (tp + 0.5 * fp + 0.5 * fn + DICE_EPS)
    return per_sample.mean() if reduction == "mean" else per_sample


def abs_kl_loss(y_l: torch.Tensor, y_hat_u: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Pixel-summed ``|(a - b) log(a / b)|`` on the foreground logit.

    The i-th labeled ground truth is paired with the i-th unlabeled
    prediction; both are clamped to ``[eps, 1 - eps]`` first.
    """
    _check_pair(y_l, y_hat_u)
    a = y_l[:, FOREGROUND].clamp(PROB_EPS, 1 - PROB_EPS)
    b = y_hat_u[:, FOREGROUND].clamp(PROB_EPS, 1 - PROB_EPS)
    per_sample = ((a - b) * (a.log() - b.log())).abs().sum(dim=(1, 2))
    return per_sample.mean() if reduction == "mean" else per_sample


def _check_prob(p: torch.Tensor) -> torch.Tensor:
    if ((p < 0) | (p > 1) | torch.isnan(p)).any():
        raise ValueError("probabilities must lie in [0, 1]")
    return p


def g_adv_loss(p_fake: torch.Tensor) -> torch.Tensor:
    """G wants its (image, predicted mask) pairs judged real."""
    p = _check_prob(p_fake).clamp(max=1 - PROB_EPS)
    return -torch.log1p(-p).mean()


def _weighted_mean(per_sample: torch.Tensor, weights: torch.Tensor | None) -> torch.Tensor:
    if weights is None:
        return per_sample.mean()
    w = torch.as_tensor(weights, dtype=per_sample.dtype)
    total = w.sum()
    if total <= 0:
        return (per_sample * 0).sum()
    return (per_sample * w).sum() / total


def _cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    log_z = torch.logsumexp(logits, dim=-1)
    return log_z - logits.gather(-1, targets[:, None]).squeeze(-1)


def d_supervised_loss(main_logits: torch.Tensor, labels, weights=None) -> torch.Tensor:
    """Cross-entropy of the true real class under the (n+1)-way softmax.

    ``weights`` (e.g. TSA masks) give a weighted mean; all-zero weights
    yield a zero loss.
    """
    labels = torch.as_tensor(labels, dtype=torch.long)
    n_real = main_logits.shape[-1] - 1
    if ((labels < 0) | (labels >= n_real)).any():
        raise ValueError(f"supervised labels must lie in [0, {n_real}); the fake class is not a target")
    return _weighted_mean(_cross_entropy(main_logits, labels), weights)


def d_selfsup_loss(aux_logits: torch.Tensor, tids, weights=None) -> torch.Tensor:
    """Cross-entropy of the applied transform on the auxiliary head."""
    tids = torch.as_tensor(tids, dtype=torch.long)
    if ((tids < 0) | (tids >= aux_logits.shape[-1])).any():
        raise ValueError("transform id out of range")
    return _weighted_mean(_cross_entropy(aux_logits, tids), weights)


def d_adv_losses(p_fake_real: torch.Tensor, p_fake_pred_labeled: torch.Tensor,
                 p_fake_pred_unlabeled: torch.Tensor):
    """D's adversarial terms: real pairs as real, predicted pairs as fake."""
    real = -torch.log1p(-_check_prob(p_fake_real).clamp(max=1 - PROB_EPS)).mean()
    pred_l = -torch.log(_check_prob(p_fake_pred_labeled).clamp(min=PROB_EPS)).mean()
    pred_u = -torch.log(_check_prob(p_fake_pred_unlabeled).clamp(min=PROB_EPS)).mean()
    return real, pred_l, pred_u


def total_G(c: dict, w: LossWeights):
    """``dice + l_adv*g_adv_l + alpha*(kl + l_adv*g_adv_u)``."""
    return (c["dice_supervised"] + w.lambda_adv * c["g_adv_labeled"]
            + w.alpha * (c["kl_unsupervised"] + w.lambda_adv * c["g_adv_unlabeled"]))


def total_D(c: dict, w: LossWeights):
    """``sup + real + pred_l + alpha*(l_self*selfsup + pred_u)``."""
    return (c["d_supervised"] + c["d_adv_real"] + c["d_adv_pred_labeled"]
            + w.alpha * (w.lambda_self * c["d_selfsup"] + c["d_adv_pred_unlabeled"]))
