import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from s4mtl.annealing import TsaConfig, tsa_threshold, tsa_weights
from s4mtl.transforms import CATALOG, INVERSE, apply_transform, sample_proxy_batch


def test_catalog_size():
    assert len(CATALOG) == 6


@pytest.mark.parametrize("tid", range(6))
def test_transforms_are_pixel_permutations_with_inverse(tid):
    img = np.arange(25, dtype=float).reshape(5, 5, 1)
    out = apply_transform(img, tid)
    assert out.shape == img.shape
    assert sorted(out.ravel()) == sorted(img.ravel())
    assert np.array_equal(apply_transform(out, INVERSE[tid]), img)


def test_transform_directions():
    img = np.array([[1, 2], [3, 4]])
    assert np.array_equal(apply_transform(img, 1), [[2, 4], [1, 3]])  # counter-clockwise
    assert np.array_equal(apply_transform(img, 4), [[2, 1], [4, 3]])
    assert np.array_equal(apply_transform(img, 5), [[3, 4], [1, 2]])
    with pytest.raises(ValueError):
        apply_transform(np.zeros((2, 3)), 0)
    with pytest.raises(ValueError):
        apply_transform(img, 6)


def test_proxy_batch_reproducible_and_covers_catalog():
    x = [np.random.default_rng(i).random((4, 4, 1)) for i in range(600)]
    a, b = sample_proxy_batch(x, 3), sample_proxy_batch(x, 3)
    assert [t for _, t in a] == [t for _, t in b]
    counts = np.bincount([t for _, t in a], minlength=6)
    assert counts.min() > 60
    for (img, t), orig in zip(a[:20], x):
        assert np.array_equal(img, apply_transform(orig, t))
    with pytest.raises(ValueError):
        sample_proxy_batch([], 0)


# -- annealing ---------------------------------------------------------------------

def test_threshold_starts_near_chance():
    cfg = TsaConfig(30, 350, 2)
    eta = tsa_threshold(0, 0, cfg)
    assert 0.5 <= eta < 0.5 + 1e-3


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 6), E=st.integers(1, 50), N=st.integers(1, 2000),
       e=st.integers(0, 60), s=st.integers(0, 10_000))
def test_threshold_bounds(n, E, N, e, s):
    eta = tsa_threshold(e, s, TsaConfig(E, N, n))
    assert 1 / n <= eta < 1


def test_threshold_monotone_and_limit():
    cfg = TsaConfig(30, 350, 3)
    steps = [tsa_threshold(e, s, cfg) for e, s in [(1, 0), (1, 10), (2, 20), (5, 100), (10, 500)]]
    assert all(b >= a for a, b in zip(steps, steps[1:]))
    assert tsa_threshold(10**4, 10**6, cfg) == pytest.approx(1.0, abs=1e-9)
    assert tsa_threshold(10**4, 10**6, cfg) < 1


def test_literal_mode_exceeds_one():
    cfg = TsaConfig(2, 10, 2, literal=True)
    assert tsa_threshold(100, 1000, cfg) > 1
    assert tsa_threshold(100, 1000, cfg) == pytest.approx(1.5, abs=1e-6)


def test_threshold_formula():
    cfg = TsaConfig(10, 100, 4)
    want = (1 - math.exp(-(7 * 3 + 1) / 1000)) * 0.75 + 0.25
    assert tsa_threshold(3, 7, cfg) == pytest.approx(want, abs=1e-15)


def test_weights_mask_confident_samples():
    w = tsa_weights(torch.tensor([0.2, 0.5, 0.51, 0.9]), 0.5)
    assert w.tolist() == [1.0, 1.0, 0.0, 0.0]


def test_config_validation():
    with pytest.raises(ValueError):
        TsaConfig(0, 10, 2)
    with pytest.raises(ValueError):
        TsaConfig(1, 10, 1)
    with pytest.raises(ValueError):
        tsa_threshold(-1, 0, TsaConfig(1, 1, 2))


def test_threshold_at_origin():
    cfg = TsaConfig(10, 100, 2)
    assert tsa_threshold(0, 0, cfg) == pytest.approx(0.5 + 0.5 * (1 - math.exp(-0.001)), abs=1e-15)
    assert tsa_threshold(0, 0, cfg) > 0.5


def test_disabled_weights_reproduce_plain_loss():
    from s4mtl.losses import d_supervised_loss
    logits = torch.randn(5, 3, dtype=torch.float64)
    labels = [0, 1, 1, 0, 1]
    ones = tsa_weights(torch.zeros(5, dtype=torch.float64), 0.9)
    assert d_supervised_loss(logits, labels, ones).item() == pytest.approx(
        d_supervised_loss(logits, labels).item(), abs=1e-15)
