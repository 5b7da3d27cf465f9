"""Training signal annealing for D's supervised classification loss."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch

_BELOW_ONE = math.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class TsaConfig:
    total_epochs: int
    dataset_size: int  # |D_L| + |D_U|
    class_count: int
    enabled: bool = True
    literal: bool = False  # as-printed parenthesization, unbounded above 1

    def __post_init__(self):
        if self.total_epochs < 1 or self.dataset_size < 1 or self.class_count < 2:
            raise ValueError("TsaConfig needs total_epochs >= 1, dataset_size >= 1, class_count >= 2")


def tsa_threshold(epoch: int, step: int, cfg: TsaConfig) -> float:
    """Logarithmic schedule rising from just above 1/n towards 1.

    ``eta = (1 - exp(-(s*e + 1) / (E*N))) * (1 - 1/n) + 1/n``.
    With ``cfg.literal`` the exponential alone is scaled,
    ``1 - exp(.)*(1 - 1/n) + 1/n``, which tends to ``1 + 1/n``.
    """
    if epoch < 0 or step < 0:
        raise ValueError("epoch and step must be nonnegative")
    floor = 1.0 / cfg.class_count
    decay = math.exp(-(step * epoch + 1) / (cfg.total_epochs * cfg.dataset_size))
    if cfg.literal:
        return 1.0 - decay * (1.0 - floor) + floor
    # the schedule only approaches 1; keep that true once exp() underflows
    return min((1.0 - decay) * (1.0 - floor) + floor, _BELOW_ONE)


def tsa_weights(true_class_probs, eta: float) -> torch.Tensor:
    """0 where the true class is already predicted above ``eta``, else 1."""
    p = torch.as_tensor(true_class_probs)
    return (p <= eta).to(p.dtype if p.is_floating_point() else torch.float64)
