import zipfile

import numpy as np
import pytest
import torch

from s4mtl.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from s4mtl.models import DiscriminatorConfig, GeneratorConfig, build_model
from s4mtl.trainer import TrainHistory

G = GeneratorConfig(16, 2, 4)
D = DiscriminatorConfig(16, depth=2, base_channels=4)


@pytest.mark.parametrize("method", ["S4MTL", "UNET", "UMTL", "CONVNET"])
def test_roundtrip_restores_outputs(tmp_path, method):
    p = build_model(method, G, D, 2, seed=4).eval()
    h = TrainHistory(steps=[{"step": 0, "dice_supervised": 0.5}], best_epoch=0)
    save_checkpoint(p, h, tmp_path / "c.npz")
    q, h2 = load_checkpoint(tmp_path / "c.npz")
    assert h2.best_epoch == 0 and h2.steps == h.steps
    x = torch.rand(2, 1, 16, 16)
    net_p, net_q = (p.theta, q.theta) if p.theta is not None else (p.psi, q.psi)
    a, b = net_p(x), net_q(x)
    for u, v in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
        assert torch.equal(u, v)


def test_archive_bytes_are_stable(tmp_path):
    p = build_model("S4MTL", G, D, 2, seed=0)
    save_checkpoint(p, None, tmp_path / "a.npz")
    save_checkpoint(p, None, tmp_path / "b.npz")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()


def test_load_into_existing(tmp_path):
    p = build_model("UNET", G, None, 2, seed=0)
    save_checkpoint(p, None, tmp_path / "c.npz")
    q = build_model("UNET", G, None, 2, seed=9)
    load_checkpoint(tmp_path / "c.npz", into=q)
    for a, b in zip(p.named_arrays().values(), q.named_arrays().values()):
        assert np.array_equal(a, b)


def test_shape_mismatch_rejected(tmp_path):
    save_checkpoint(build_model("UNET", G, None, 2, seed=0), None, tmp_path / "c.npz")
    other = build_model("UNET", GeneratorConfig(16, 2, 8), None, 2, seed=0)
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(tmp_path / "c.npz", into=other)
    with pytest.raises(CheckpointError, match="names"):
        load_checkpoint(tmp_path / "c.npz", into=build_model("S4MTL", G, D, 2, seed=0))


def test_version_and_corruption(tmp_path):
    path = tmp_path / "c.npz"
    save_checkpoint(build_model("UNET", G, None, 2, seed=0), None, path)
    data = path.read_bytes()
    (tmp_path / "bad.npz").write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.npz")
    with zipfile.ZipFile(tmp_path / "v.npz", "w") as zf:
        zf.writestr("VERSION", "other/9")
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "v.npz")
