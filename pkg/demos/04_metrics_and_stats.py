"""
Metrics and paired statistics
=============================

Per-sample overlap and distance scores, then the paired tests used to
compare two methods on the same test images.
"""
import numpy as np

from s4mtl.metrics import average_hausdorff, classification_metrics, segmentation_metrics
from s4mtl.stats import bland_altman, one_way_anova, paired_t, pearson, wilcoxon_signed_rank

truth = np.zeros((32, 32))
truth[8:24, 8:24] = 1
pred = np.zeros((32, 32))
pred[10:26, 9:25] = 0.8

m = segmentation_metrics(truth, pred)
print(m)
print("JI == DS / (2 - DS):", np.isclose(m.JI, m.DS / (2 - m.DS)))
print("average Hausdorff:", average_hausdorff(truth > 0.5, pred > 0.5))

cm = classification_metrics([0, 1, 1, 0, 1], [0, 1, 0, 0, 1], 2)
print("accuracy", cm.accuracy, "F1 per class", cm.f1)

###############################################################################
# Two methods scored on the same 30 test images.

rng = np.random.default_rng(0)
a = np.clip(rng.normal(0.90, 0.03, 30), 0, 1)
b = np.clip(a - rng.normal(0.01, 0.02, 30), 0, 1)
for rep in (paired_t(a, b), wilcoxon_signed_rank(a, b), one_way_anova([a, b])):
    print(f"{rep.test:10s} statistic={rep.statistic:.3f} p={rep.p_value:.4f}")

# agreement of predicted with true foreground pixel counts
true_px = rng.integers(200, 600, 30).astype(float)
pred_px = true_px + rng.normal(-5, 15, 30)
ba = bland_altman(true_px, pred_px)
print(f"Bland-Altman mean diff {ba.mean_diff:.1f}, limits [{ba.loa_low:.1f}, {ba.loa_high:.1f}]")
print("Pearson r", round(pearson(true_px, pred_px).r, 3))
