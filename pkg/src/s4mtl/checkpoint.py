"""Checkpoint archive.

Layout (a stored, uncompressed zip with fixed member timestamps, so equal
contents give equal bytes)::

    VERSION               ascii tag, currently ``s4mtl-ckpt/1``
    descriptor.json       method, class count, generator/discriminator configs
    history.json          TrainHistory as JSON (may be ``null``)
    arrays/<name>.npy     one .npy file per parameter, ``theta.*`` / ``psi.*``

Members are written in sorted name order.
"""
from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .models import DiscriminatorConfig, GeneratorConfig, ModelParams, build_model
from .trainer import TrainHistory

VERSION = "s4mtl-ckpt/1"
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(params: ModelParams, history: TrainHistory | None, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = params.named_arrays()
    with zipfile.ZipFile(path, "w") as zf:
        _member(zf, "VERSION", VERSION.encode())
        _member(zf, "descriptor.json", json.dumps(params.descriptor(), sort_keys=True).encode())
        hist = history.to_dict() if history is not None else None
        _member(zf, "history.json", json.dumps(hist, sort_keys=True).encode())
        for name in sorted(arrays):
            _member(zf, f"arrays/{name}.npy", _npy_bytes(arrays[name]))
    return path


def _read(path) -> tuple[dict, dict | None, dict[str, np.ndarray]]:
    try:
        with zipfile.ZipFile(path) as zf:
            version = zf.read("VERSION").decode()
            if version != VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version!r}, expected {VERSION!r}")
            desc = json.loads(zf.read("descriptor.json"))
            hist = json.loads(zf.read("history.json"))
            arrays = {}
            for name in zf.namelist():
                if name.startswith("arrays/") and name.endswith(".npy"):
                    arrays[name[len("arrays/"):-4]] = np.lib.format.read_array(
                        io.BytesIO(zf.read(name)), allow_pickle=False)
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, OSError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupted checkpoint {path}: {exc}") from exc
    return desc, hist, arrays


def _assign(params: ModelParams, arrays: dict[str, np.ndarray]) -> None:
    expected = params.named_arrays()
    missing = sorted(set(expected) - set(arrays))
    unknown = sorted(set(arrays) - set(expected))
    if missing or unknown:
        raise CheckpointError(f"parameter names differ: missing {missing[:5]}, unexpected {unknown[:5]}")
    for name, ref in expected.items():
        if arrays[name].shape != ref.shape:
            raise CheckpointError(f"shape mismatch for {name}: {arrays[name].shape} vs {ref.shape}")
    for prefix in ("theta", "psi"):
        net = getattr(params, prefix)
        if net is None:
            continue
        sd = net.state_dict()
        new = {k: torch.as_tensor(arrays[f"{prefix}.{k}"]).to(sd[k].dtype) for k in sd}
        net.load_state_dict(new)


def load_checkpoint(path, into: ModelParams | None = None) -> tuple[ModelParams, TrainHistory | None]:
    """Rebuild (or fill ``into``) from an archive; rejects version and shape mismatches."""
    desc, hist, arrays = _read(path)
    if into is None:
        gc = GeneratorConfig(**desc["gen_config"]) if desc["gen_config"] else None
        dc = DiscriminatorConfig(**desc["disc_config"]) if desc["disc_config"] else None
        into = build_model(desc["method"], gc, dc, desc["class_count"], seed=0)
        dtypes = {a.dtype for a in arrays.values()}
        if dtypes == {np.dtype(np.float64)}:
            into.to(torch.float64)
    _assign(into, arrays)
    into.eval()
    return into, TrainHistory.from_dict(hist) if hist is not None else None
