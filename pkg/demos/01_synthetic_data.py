"""
Synthetic shapes and stratified splits
======================================

Each synthetic sample is one shape (ellipse or rectangle) near the image
center, on a shaded, noisy background. The class is the shape, the mask
is its footprint.
"""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from s4mtl.data import make_synthetic, stratified_split

samples = make_synthetic(200, side=64, class_count=2, seed=0)
print(samples[0].id, samples[0].image.shape, samples[0].mask.shape, "class", samples[0].label)

fig, axes = plt.subplots(2, 4, figsize=(8, 4))
for ax, s in zip(axes.T, samples[:4]):
    ax[0].imshow(s.image[..., 0], cmap="gray")
    ax[1].imshow(s.mask[..., 1], cmap="gray")
    ax[0].set_title(f"class {s.label}")
for ax in axes.ravel():
    ax.axis("off")
fig.savefig("synthetic_samples.png")

###############################################################################
# Validation and test are held out per class first. The labeled set is then
# filled round-robin over classes, and everything left keeps only its image.

for fraction in (0.1, 0.3, 0.5):
    split = stratified_split(samples, fraction, seed=0)
    print(f"{fraction:.0%}: labeled {len(split.labeled)} per class {split.labeled_class_counts()}, "
          f"unlabeled {len(split.unlabeled)}, val {len(split.validation)}, test {len(split.test)}")

# the unlabeled partition carries no mask and no label
assert all(s.mask is None and s.label is None for s in split.unlabeled)

# more than half labeled is refused
try:
    stratified_split(samples, 0.6)
except ValueError as exc:
    print("refused:", exc)
