"""Alternating D-then-G mini-batch training and the baseline trainers.

Randomness is split into independent seeded streams (labeled order,
unlabeled order, proxy transforms, dropout for each branch) so that, for a
given seed, every method sees the same labeled stream and the same
generator initialization.
"""
from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .annealing import TsaConfig, tsa_threshold, tsa_weights
from .data import DatasetSplit, Sample
from .models import ModelParams, build_model, GeneratorConfig, DiscriminatorConfig
from .transforms import apply_transform, N_TRANSFORMS

log = logging.getLogger(__name__)

SEMI_SUPERVISED = ("S4MTL", "S2MTL")
SEGMENTING = ("S4MTL", "S2MTL", "UMTL", "UNET")
CLASSIFYING = ("S4MTL", "S2MTL", "UMTL", "CONVNET")

# stream tags for np.random.default_rng([seed, epoch, tag])
_LABELED, _UNLABELED, _PROXY = 1, 2, 3


class TrainingError(RuntimeError):
    pass


class NonFiniteLossError(TrainingError):
    def __init__(self, component: str, step: int):
        super().__init__(f"non-finite {component} at step {step}")
        self.component = component
        self.step = step


@dataclass
class TrainerConfig:
    method: str = "S4MTL"
    epochs: int = 30
    batch_size: int = 16
    lr_g: float = 2e-3
    beta1_g: float = 0.9
    lr_d: float = 1e-4
    beta1_d: float = 0.6
    beta2: float = 0.999
    adam_eps: float = 1e-8
    decay_every: int = 2
    decay_g: float = 0.9
    decay_d: float = 0.5
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    tsa: bool = True
    tsa_literal: bool = False
    tsa_dataset_size: int | None = None  # defaults to |D_L| + |D_U|
    cls_weight: float = 1.0  # U-MTL classification term
    seed: int = 0
    dtype: str = "float32"
    max_steps: int | None = None
    select_best: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        for d in (self.decay_g, self.decay_d):
            if not 0 < d <= 1:
                raise ValueError("decay factors must lie in (0, 1]")

    @property
    def torch_dtype(self) -> torch.dtype:
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]


@dataclass
class TrainHistory:
    steps: list[dict] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls(**d)


def lr_schedule(initial_lr: float, epoch: int, decay_every: int = 2, decay_rate: float = 1.0) -> float:
    return initial_lr * decay_rate ** (epoch // decay_every)


def images_tensor(samples, dtype=torch.float32) -> torch.Tensor:
    arr = np.stack([s.image[..., 0] for s in samples])[:, None]
    return torch.as_tensor(arr, dtype=dtype)


def masks_tensor(samples, dtype=torch.float32) -> torch.Tensor:
    arr = np.stack([s.mask for s in samples]).transpose(0, 3, 1, 2)
    return torch.as_tensor(np.ascontiguousarray(arr), dtype=dtype)


def labels_tensor(samples) -> torch.Tensor:
    return torch.as_tensor([s.label for s in samples], dtype=torch.long)


def _derive(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([seed, *tags]).generate_state(1)[0])


def _stream_batches(n: int, batch: int, steps: int, seed: int, epoch: int, tag: int) -> list[np.ndarray]:
    """``steps`` full batches from reshuffled passes over ``n`` items.

    The first pass is the epoch's permutation; further passes (cycling a
    shorter stream) use fresh permutations from the same epoch stream.
    """
    rng = np.random.default_rng([seed, epoch, tag])
    need = steps * batch
    order = []
    while len(order) < need:
        order.extend(rng.permutation(n).tolist())
    order = np.asarray(order[:need])
    return [order[i * batch:(i + 1) * batch] for i in range(steps)]


def _plain_batches(n: int, batch: int, seed: int, epoch: int, tag: int) -> list[np.ndarray]:
    order = np.random.default_rng([seed, epoch, tag]).permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def _finite(name: str, value: torch.Tensor, step: int) -> None:
    if not torch.isfinite(value).all():
        raise NonFiniteLossError(name, step)


def _adam(params, lr, beta1, cfg: TrainerConfig):
    return torch.optim.Adam(params, lr=lr, betas=(beta1, cfg.beta2), eps=cfg.adam_eps)


def _set_lr(opt, lr):
    for g in opt.param_groups:
        g["lr"] = lr


@torch.no_grad()
def predict(params: ModelParams, samples, batch: int = 64, dtype=torch.float32):
    """Foreground probability maps ``(N, m, m)`` and class predictions.

    Either element is ``None`` when the method has no such output. For the
    adversarial models the class is the argmax over the n real logits of
    D's main head on the (image, predicted mask) pair.
    """
    params.eval()
    x_all = images_tensor(samples, dtype)
    fgs, classes = [], []
    n = params.class_count
    for i in range(0, len(samples), batch):
        x = x_all[i:i + batch]
        m = params.method
        if m in ("UNET", "S4MTL", "S2MTL"):
            y_hat = params.theta(x)
            fgs.append(y_hat[:, 1])
            if m != "UNET":
                main, _ = params.psi(x, y_hat)
                classes.append(main[:, :n].argmax(dim=1))
        elif m == "UMTL":
            y_hat, logits = params.theta(x)
            fgs.append(y_hat[:, 1])
            classes.append(logits.argmax(dim=1))
        else:
            classes.append(params.psi(x).argmax(dim=1))
    fg = torch.cat(fgs).double().numpy() if fgs else None
    cls = torch.cat(classes).numpy() if classes else None
    return fg, cls


def _validation_scores(params: ModelParams, samples, dtype) -> dict:
    if not samples:
        return {}
    fg, cls = predict(params, samples, dtype=dtype)
    out = {}
    if fg is not None:
        truth = np.stack([s.mask[..., 1] for s in samples]) > 0.5
        pred = fg > 0.5
        inter = (truth & pred).sum(axis=(1, 2))
        size = truth.sum(axis=(1, 2)) + pred.sum(axis=(1, 2))
        dice = np.where(size > 0, 2 * inter / np.maximum(size, 1), 1.0)
        out["dice"] = float(dice.mean())
    if cls is not None:
        labels = np.array([s.label for s in samples])
        out["accuracy"] = float((cls == labels).mean())
    return out


class _Trainer:
    def __init__(self, split: DatasetSplit, params: ModelParams, cfg: TrainerConfig):
        self.split, self.p, self.cfg = split, params, cfg
        self.method = params.method
        if cfg.method != self.method:
            raise ValueError(f"config method {cfg.method} does not match model {self.method}")
        if not split.labeled:
            raise TrainingError("empty labeled set")
        if self.method in SEMI_SUPERVISED and not split.unlabeled:
            raise TrainingError(f"{self.method} needs unlabeled samples")
        if self.method in SEMI_SUPERVISED and len(split.labeled) > len(split.unlabeled):
            raise TrainingError("semi-supervised training requires |D_L| <= |D_U|")
        dt = cfg.torch_dtype
        params.to(dt)
        self.dt = dt
        self.x_l = images_tensor(split.labeled, dt)
        self.y_l = masks_tensor(split.labeled, dt)
        self.c_l = labels_tensor(split.labeled)
        self.u_images = [s.image for s in split.unlabeled]
        self.x_u_plain = images_tensor(split.unlabeled, dt) if split.unlabeled else None
        self.rng_l = torch.Generator().manual_seed(_derive(cfg.seed, 11))
        self.rng_u = torch.Generator().manual_seed(_derive(cfg.seed, 12))
        self.rng_d = torch.Generator().manual_seed(_derive(cfg.seed, 13))
        self.opt_g = _adam(params.theta.parameters(), cfg.lr_g, cfg.beta1_g, cfg) if params.theta else None
        if params.psi is not None:
            # Conv-Net baseline is D's network, so it takes D's schedule
            self.opt_d = _adam(params.psi.parameters(), cfg.lr_d, cfg.beta1_d, cfg)
        else:
            self.opt_d = None
        n_train = len(split.labeled) + len(split.unlabeled)
        self.tsa = TsaConfig(cfg.epochs, cfg.tsa_dataset_size or n_train, split.class_count,
                             enabled=cfg.tsa, literal=cfg.tsa_literal)
        self.history = TrainHistory()
        self.step = 0

    # -- streams -------------------------------------------------------------

    def _proxy_epoch(self, epoch: int):
        rng = np.random.default_rng([self.cfg.seed, epoch, _PROXY])
        tids = rng.integers(0, N_TRANSFORMS, size=len(self.u_images))
        x = np.stack([apply_transform(im, int(t))[..., 0] for im, t in zip(self.u_images, tids)])
        return torch.as_tensor(x[:, None], dtype=self.dt), torch.as_tensor(tids, dtype=torch.long)

    def _steps_per_epoch(self) -> int:
        b = self.cfg.batch_size
        if self.method in SEMI_SUPERVISED:
            return math.ceil(max(len(self.split.labeled), len(self.split.unlabeled)) / b)
        return math.ceil(len(self.split.labeled) / b)

    # -- per-step updates ----------------------------------------------------

    def _semi_step(self, epoch, idx_l, x_u, t_u):
        cfg, w, p = self.cfg, self.cfg.weights, self.p
        full = self.method == "S4MTL"
        G, D = p.theta, p.psi
        x_l, y_l, c_l = self.x_l[idx_l], self.y_l[idx_l], self.c_l[idx_l]
        G.train(), D.train()
        y_hat_l = G(x_l, self.rng_l)
        y_hat_u = G(x_u, self.rng_u)
        zero = torch.zeros((), dtype=self.dt)

        # D update
        for q in D.parameters():
            q.requires_grad_(True)
        main_real, _ = D(x_l, y_l, self.rng_d)
        main_pl, _ = D(x_l, y_hat_l.detach(), self.rng_d)
        main_pu, aux_u = D(x_u, y_hat_u.detach(), self.rng_d)
        eta = tsa_threshold(epoch, self.step, self.tsa) if self.tsa.enabled else float("nan")
        weights = None
        if self.tsa.enabled:
            p_true = L.class_probabilities(main_real.detach()).gather(1, c_l[:, None]).squeeze(1)
            weights = tsa_weights(p_true, eta)
        d = {"d_supervised": L.d_supervised_loss(main_real, c_l, weights),
             "d_selfsup": L.d_selfsup_loss(aux_u, t_u) if full else zero}
        d["d_adv_real"], d["d_adv_pred_labeled"], d["d_adv_pred_unlabeled"] = L.d_adv_losses(
            L.fake_probability(main_real), L.fake_probability(main_pl), L.fake_probability(main_pu))
        total_d = L.total_D(d, w)
        for k, v in d.items():
            _finite(k, v, self.step)
        _finite("total_D", total_d, self.step)
        self.opt_d.zero_grad(set_to_none=True)
        total_d.backward()
        self.opt_d.step()

        # G update against the refreshed D; psi receives no gradient here
        for q in D.parameters():
            q.requires_grad_(False)
        main_pl2, _ = D(x_l, y_hat_l, self.rng_d)
        main_pu2, _ = D(x_u, y_hat_u, self.rng_d)
        g = {"dice_supervised": L.dice_loss(y_l, y_hat_l),
             "kl_unsupervised": L.abs_kl_loss(y_l, y_hat_u) if full else zero,
             "g_adv_labeled": L.g_adv_loss(L.fake_probability(main_pl2)),
             "g_adv_unlabeled": L.g_adv_loss(L.fake_probability(main_pu2))}
        total_g = L.total_G(g, w)
        for k, v in g.items():
            _finite(k, v, self.step)
        _finite("total_G", total_g, self.step)
        self.opt_g.zero_grad(set_to_none=True)
        total_g.backward()
        self.opt_g.step()
        for q in D.parameters():
            q.requires_grad_(True)

        rep = L.LossReport(**{k: v.item() for k, v in {**d, **g}.items()},
                           total_G=total_g.item(), total_D=total_d.item())
        return rep, eta

    def _unet_step(self, epoch, idx):
        G = self.p.theta
        G.train()
        y_hat = G(self.x_l[idx], self.rng_l)
        dice = L.dice_loss(self.y_l[idx], y_hat)
        _finite("dice_supervised", dice, self.step)
        self.opt_g.zero_grad(set_to_none=True)
        dice.backward()
        self.opt_g.step()
        return L.LossReport(dice_supervised=dice.item(), total_G=dice.item()), float("nan")

    def _umtl_step(self, epoch, idx):
        G = self.p.theta
        G.train()
        y_hat, logits = G(self.x_l[idx], self.rng_l)
        dice = L.dice_loss(self.y_l[idx], y_hat)
        ce = L._cross_entropy(logits, self.c_l[idx]).mean()
        total = dice + self.cfg.cls_weight * ce
        _finite("dice_supervised", dice, self.step)
        _finite("d_supervised", ce, self.step)
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()
        return L.LossReport(dice_supervised=dice.item(), d_supervised=ce.item(),
                            total_G=total.item()), float("nan")

    def _convnet_step(self, epoch, idx):
        D = self.p.psi
        D.train()
        logits = D(self.x_l[idx], None, self.rng_d)
        ce = L._cross_entropy(logits, self.c_l[idx]).mean()
        _finite("d_supervised", ce, self.step)
        self.opt_d.zero_grad(set_to_none=True)
        ce.backward()
        self.opt_d.step()
        return L.LossReport(d_supervised=ce.item(), total_D=ce.item()), float("nan")

    # -- loop ----------------------------------------------------------------

    def run(self) -> tuple[ModelParams, TrainHistory]:
        cfg = self.cfg
        best_score, best_state = -np.inf, None
        steps = self._steps_per_epoch()
        done = False
        for epoch in range(cfg.epochs):
            t0 = time.perf_counter()
            lr_g = lr_schedule(cfg.lr_g, epoch, cfg.decay_every, cfg.decay_g)
            lr_d = lr_schedule(cfg.lr_d, epoch, cfg.decay_every, cfg.decay_d)
            if self.opt_g:
                _set_lr(self.opt_g, lr_g)
            if self.opt_d:
                _set_lr(self.opt_d, lr_d)

            if self.method in SEMI_SUPERVISED:
                lab = _stream_batches(len(self.x_l), cfg.batch_size, steps, cfg.seed, epoch, _LABELED)
                unl = _stream_batches(len(self.u_images), cfg.batch_size, steps, cfg.seed, epoch, _UNLABELED)
                if self.method == "S4MTL":
                    x_u_epoch, t_u_epoch = self._proxy_epoch(epoch)
                else:
                    x_u_epoch = self.x_u_plain
                    t_u_epoch = torch.zeros(len(self.u_images), dtype=torch.long)
                batches = [(i_l, x_u_epoch[i_u], t_u_epoch[i_u]) for i_l, i_u in zip(lab, unl)]
                step_fn = lambda b: self._semi_step(epoch, *b)
            else:
                lab = _plain_batches(len(self.x_l), cfg.batch_size, cfg.seed, epoch, _LABELED)
                batches = lab
                fn = {"UNET": self._unet_step, "UMTL": self._umtl_step,
                      "CONVNET": self._convnet_step}[self.method]
                step_fn = lambda b: fn(epoch, b)

            for b in batches:
                rep, eta = step_fn(b)
                self.history.steps.append({"step": self.step, "epoch": epoch, "lr_G": lr_g, "lr_D": lr_d,
                                           "eta": eta, **rep.as_dict()})
                self.step += 1
                if cfg.max_steps is not None and self.step >= cfg.max_steps:
                    done = True
                    break

            scores = _validation_scores(self.p, self.split.validation, self.dt)
            self.history.validation.append({"epoch": epoch, **scores})
            key = "dice" if self.method in SEGMENTING else "accuracy"
            score = scores.get(key, -np.inf)
            if best_state is None or score > best_score:
                best_score, best_state = score, self._state()
                self.history.best_epoch = epoch
            self.history.epoch_seconds.append(time.perf_counter() - t0)
            log.info("%s epoch %d: %s", self.method, epoch, scores)
            if done:
                break
        if cfg.select_best and best_state is not None:
            self._load_state(best_state)
        else:
            self.history.best_epoch = self.history.validation[-1]["epoch"]
        self.p.eval()
        return self.p, self.history

    def _state(self):
        return {k: copy.deepcopy(net.state_dict()) for k, net in
                (("theta", self.p.theta), ("psi", self.p.psi)) if net is not None}

    def _load_state(self, state):
        for k, sd in state.items():
            getattr(self.p, k).load_state_dict(sd)


def train(split: DatasetSplit, models: ModelParams, cfg: TrainerConfig) -> tuple[ModelParams, TrainHistory]:
    """Train ``models`` in place on ``split``; returns the selected parameters."""
    return _Trainer(split, models, cfg).run()


def train_baseline(split: DatasetSplit, cfg: TrainerConfig, gen_config: GeneratorConfig | None = None,
                   disc_config: DiscriminatorConfig | None = None) -> tuple[ModelParams, TrainHistory]:
    """Build the networks ``cfg.method`` needs and train them."""
    side = split.labeled[0].image.shape[0] if split.labeled else 64
    if cfg.method != "CONVNET":
        gen_config = gen_config or GeneratorConfig(input_side=side)
    if cfg.method in ("S4MTL", "S2MTL", "CONVNET"):
        disc_config = disc_config or DiscriminatorConfig(input_side=side, class_count=split.class_count)
    params = build_model(cfg.method, gen_config, disc_config, split.class_count, cfg.seed)
    return train(split, params, cfg)


HISTORY_FIELDS = ["step", "epoch", "lr_G", "lr_D", "eta"] + L.LossReport.field_names()


def write_history(history: TrainHistory, run_dir) -> None:
    """``history.csv`` (per step) and ``val_metrics.csv`` (per epoch)."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / "history.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history.steps:
            w.writerow([_fmt(row[k]) for k in HISTORY_FIELDS])
    keys = ["epoch"] + sorted({k for r in history.validation for k in r} - {"epoch"})
    with open(run_dir / "val_metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys + ["selected"])
        for r in history.validation:
            w.writerow([_fmt(r.get(k, "")) for k in keys] + [int(r["epoch"] == history.best_epoch)])


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)
