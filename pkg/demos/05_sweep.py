"""
A labeled-fraction sweep from a config file
===========================================

The same flow as ``s4mtl run`` followed by ``s4mtl report``, on a
sweep small enough to finish in a minute or two.
"""
import tempfile
from pathlib import Path

from s4mtl.experiment import run
from s4mtl.report import build_report

CONFIG = """
dataset.count = 120
dataset.side = 32
methods = UNET, S2MTL, S4MTL
fractions = 0.1, 0.3
fractions.UNET = 1.0
seeds = 0, 1
trainer.epochs = 2
trainer.alpha = 1e-5
model.base_channels = 4
model.convs_per_block = 1
model.disc_depth = 3
model.disc_base_channels = 4
output = results
"""

work = Path(tempfile.mkdtemp())
cfg = work / "sweep.cfg"
cfg.write_text(CONFIG)
summary = run(cfg)
print("completed:", summary.completed)

out = build_report(work / "results")
print((work / "results" / "report" / "report.txt").read_text())
print("figures:", [p.name for p in out["paths"] if p.suffix == ".png"])
