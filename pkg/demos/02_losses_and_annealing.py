"""
Loss terms and training signal annealing
========================================

G is trained with a soft Dice loss on labeled pairs and an absolute
KL term that pulls unlabeled predictions toward labeled masks. D sees
(image, mask) pairs and scores n real classes plus a fake class.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import torch

from s4mtl import losses as L
from s4mtl.annealing import TsaConfig, tsa_threshold, tsa_weights

fg = torch.zeros(1, 8, 8)
fg[:, 2:6, 2:6] = 1
y = torch.stack([1 - fg, fg], 1)

# a prediction shifted by one pixel
shifted = torch.roll(y, 1, dims=3)
print("dice(perfect) =", L.dice_loss(y, y).item())
print("dice(shifted) =", L.dice_loss(y, shifted).item())
print("abs-KL(shifted) =", L.abs_kl_loss(y, shifted).item())

###############################################################################
# The main head has n+1 logits. The last one is the fake class.

logits = torch.tensor([[2.0, 0.5, -1.0], [0.0, 0.0, 3.0]])
print("p(fake):", L.fake_probability(logits))
print("D supervised CE:", L.d_supervised_loss(logits, [0, 1]).item())

###############################################################################
# TSA starts near chance and rises towards 1. Labeled samples whose true
# class already scores above the threshold drop out of D's supervised loss.

cfg = TsaConfig(total_epochs=30, dataset_size=350, class_count=2)
steps = np.arange(0, 600, 5)
for epoch in (1, 5, 15, 29):
    plt.plot(steps, [tsa_threshold(epoch, s, cfg) for s in steps], label=f"epoch {epoch}")
plt.xlabel("global step")
plt.ylabel("threshold")
plt.legend()
plt.savefig("tsa_schedule.png")

print("weights at eta=0.6:", tsa_weights(torch.tensor([0.3, 0.59, 0.61, 0.95]), 0.6))
