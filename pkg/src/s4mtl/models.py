"""Mask generator (U-Net), class discriminator and the baseline networks.

Tensors are channel-first: images ``(B, 1, m, m)``, masks ``(B, K, m, m)``.
Every stochastic layer draws from an explicitly passed ``torch.Generator``.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .transforms import N_TRANSFORMS

METHODS = ("S4MTL", "S2MTL", "UMTL", "UNET", "CONVNET")


@dataclass(frozen=True)
class GeneratorConfig:
    input_side: int = 64
    depth: int = 3
    base_channels: int = 16
    dropout_rate: float = 0.4
    convs_per_block: int = 2
    output_logits: int = 2

    def __post_init__(self):
        if self.depth < 1 or self.input_side % (2 ** self.depth):
            raise ValueError(f"input_side {self.input_side} not divisible by 2**{self.depth}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.base_channels < 1 or self.convs_per_block < 1 or self.output_logits < 2:
            raise ValueError("invalid generator widths")

    def widths(self) -> list[int]:
        return [self.base_channels * 2 ** i for i in range(self.depth + 1)]


PAPER_GENERATOR = GeneratorConfig(input_side=128, depth=4, base_channels=32)


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_side: int = 64
    class_count: int = 2
    mask_logits: int = 2
    depth: int = 4
    base_channels: int = 16
    dropout_rate: float = 0.0
    aux_logits: int = N_TRANSFORMS
    image_only: bool = False  # Conv-Net baseline: no mask input, n logits, no aux head

    def __post_init__(self):
        if self.depth < 1 or self.input_side % (2 ** self.depth) or self.input_side // 2 ** self.depth < 2:
            raise ValueError("discriminator input_side must be divisible by 2**depth with >= 2x2 left")
        if self.class_count < 2:
            raise ValueError("class_count must be >= 2")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def in_channels(self) -> int:
        return 1 if self.image_only else 1 + self.mask_logits

    @property
    def main_logits(self) -> int:
        return self.class_count if self.image_only else self.class_count + 1

    def widths(self) -> list[int]:
        return [self.base_channels * 2 ** i for i in range(self.depth)]

    @property
    def feature_size(self) -> int:
        """Length of the flattened trunk output the heads read."""
        return self.widths()[-1] * (self.input_side // 2 ** self.depth) ** 2


class SeededDropout(nn.Module):
    """Inverted dropout whose mask comes from the generator handed to forward."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p

    def forward(self, x: torch.Tensor, rng: torch.Generator | None = None) -> torch.Tensor:
        if not self.training or self.p == 0:
            return x
        keep = torch.rand(x.shape, generator=rng, dtype=x.dtype, device=x.device) >= self.p
        return x * keep / (1 - self.p)


class ConvUnit(nn.Module):
    """conv -> instance norm -> activation -> dropout."""

    def __init__(self, cin, cout, *, stride=1, kernel=3, leaky=False, dropout=0.0):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2, bias=False)
        self.norm = nn.InstanceNorm2d(cout, affine=True)
        self.leaky = leaky
        self.drop = SeededDropout(dropout)

    def forward(self, x, rng=None):
        x = self.norm(self.conv(x))
        x = F.leaky_relu(x, 0.2) if self.leaky else F.relu(x)
        return self.drop(x, rng)


class Block(nn.Module):
    def __init__(self, cin, cout, n, dropout):
        super().__init__()
        self.units = nn.ModuleList(ConvUnit(cin if i == 0 else cout, cout, dropout=dropout)
                                   for i in range(n))

    def forward(self, x, rng=None):
        for u in self.units:
            x = u(x, rng)
        return x


class MaskGenerator(nn.Module):
    """U-Net with skip connections and a per-pixel softmax over K logits."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        w, n, p = cfg.widths(), cfg.convs_per_block, cfg.dropout_rate
        self.down = nn.ModuleList(Block(1 if i == 0 else w[i - 1], w[i], n, p)
                                  for i in range(cfg.depth))
        self.bottleneck = Block(w[-2], w[-1], n, p)
        self.up = nn.ModuleList(nn.ConvTranspose2d(w[i + 1], w[i], 2, stride=2)
                                for i in reversed(range(cfg.depth)))
        self.dec = nn.ModuleList(Block(2 * w[i], w[i], n, p) for i in reversed(range(cfg.depth)))
        self.head = nn.Conv2d(w[0], cfg.output_logits, 1)

    def _check(self, x):
        m = self.cfg.input_side
        if x.ndim != 4 or tuple(x.shape[1:]) != (1, m, m):
            raise ValueError(f"generator expects (B, 1, {m}, {m}) images, got {tuple(x.shape)}")

    def encode(self, x, rng=None):
        self._check(x)
        skips = []
        for blk in self.down:
            x = blk(x, rng)
            skips.append(x)
            x = F.max_pool2d(x, 2)
        return self.bottleneck(x, rng), skips

    def decode(self, z, skips, rng=None):
        for up, blk in zip(self.up, self.dec):
            z = blk(torch.cat([up(z), skips.pop()], dim=1), rng)
        return self.head(z)

    def logits(self, x, rng=None):
        z, skips = self.encode(x, rng)
        return self.decode(z, skips, rng)

    def forward(self, x, rng=None):
        return torch.softmax(self.logits(x, rng), dim=1)


class MultitaskUNet(MaskGenerator):
    """U-MTL baseline: U-Net plus a classification branch off the bottleneck."""

    def __init__(self, cfg: GeneratorConfig, class_count: int):
        super().__init__(cfg)
        self.class_count = class_count
        self.cls_head = nn.Linear(cfg.widths()[-1], class_count)

    def forward(self, x, rng=None):
        z, skips = self.encode(x, rng)
        cls = self.cls_head(z.mean(dim=(2, 3)))
        return torch.softmax(self.decode(z, skips, rng), dim=1), cls


class ClassDiscriminator(nn.Module):
    """Strided conv trunk, flattened, with an (n+1)-way main head and a transform head.

    With ``cfg.image_only`` this is the single-task Conv-Net classifier:
    image input, n-way head, no auxiliary head.
    """

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.widths()
        self.trunk = nn.ModuleList(
            ConvUnit(cfg.in_channels if i == 0 else w[i - 1], w[i], stride=2, leaky=True,
                     dropout=cfg.dropout_rate)
            for i in range(cfg.depth))
        self.main_head = nn.Linear(cfg.feature_size, cfg.main_logits)
        self.aux_head = None if cfg.image_only else nn.Linear(cfg.feature_size, cfg.aux_logits)

    def features(self, x, y=None, rng=None):
        m = self.cfg.input_side
        if x.ndim != 4 or tuple(x.shape[1:]) != (1, m, m):
            raise ValueError(f"discriminator expects (B, 1, {m}, {m}) images, got {tuple(x.shape)}")
        if self.cfg.image_only:
            h = x
        else:
            if y is None or y.ndim != 4 or y.shape[0] != x.shape[0] or y.shape[2:] != x.shape[2:]:
                raise ValueError("image and mask batches must match in length and side")
            if y.shape[1] != self.cfg.mask_logits:
                raise ValueError(f"expected {self.cfg.mask_logits} mask channels, got {y.shape[1]}")
            h = torch.cat([x, y], dim=1)
        for unit in self.trunk:
            h = unit(h, rng)
        # flatten rather than average: after instance norm a channel mean is just the offset
        return h.flatten(1)

    def forward(self, x, y=None, rng=None):
        h = self.features(x, y, rng)
        if self.aux_head is None:
            return self.main_head(h)
        return self.main_head(h), self.aux_head(h)


def init_params(module: nn.Module, seed: int) -> nn.Module:
    """He-normal conv weights, unit/zero instance-norm affine, zero biases.

    Convolutions feeding ReLU/leaky-ReLU use the matching gain; linear
    heads and the output 1x1 conv use gain 1.
    """
    g = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, mod in module.named_modules():
            if isinstance(mod, ConvUnit):
                slope = 0.2 if mod.leaky else 0.0
                nn.init.kaiming_normal_(mod.conv.weight, a=slope, nonlinearity="leaky_relu", generator=g)
                mod.norm.weight.fill_(1.0)
                mod.norm.bias.zero_()
            elif isinstance(mod, (nn.ConvTranspose2d, nn.Conv2d, nn.Linear)) and not _inside_unit(module, name):
                fan_in = mod.weight.shape[0] if isinstance(mod, nn.ConvTranspose2d) else \
                    mod.weight[0].numel()
                mod.weight.normal_(0.0, 1.0 / np.sqrt(fan_in), generator=g)
                if mod.bias is not None:
                    mod.bias.zero_()
    return module


def _inside_unit(root: nn.Module, name: str) -> bool:
    parent = name.rsplit(".", 1)[0] if "." in name else ""
    return isinstance(root.get_submodule(parent), ConvUnit) if parent else False


def generator_param_count(cfg: GeneratorConfig, class_count: int | None = None) -> int:
    """Closed-form parameter count of ``MaskGenerator`` (or U-MTL)."""
    w, n = cfg.widths(), cfg.convs_per_block

    def block(cin, cout):
        return 9 * cin * cout + 2 * cout + (n - 1) * (9 * cout * cout + 2 * cout)

    total = sum(block(1 if i == 0 else w[i - 1], w[i]) for i in range(cfg.depth))
    total += block(w[-2], w[-1])
    for i in range(cfg.depth):
        total += 4 * w[i + 1] * w[i] + w[i]  # transposed conv
        total += block(2 * w[i], w[i])
    total += w[0] * cfg.output_logits + cfg.output_logits
    if class_count is not None:
        total += w[-1] * class_count + class_count
    return total


def discriminator_param_count(cfg: DiscriminatorConfig) -> int:
    w = cfg.widths()
    total = 0
    for i, cout in enumerate(w):
        cin = cfg.in_channels if i == 0 else w[i - 1]
        total += 9 * cin * cout + 2 * cout
    f = cfg.feature_size
    total += f * cfg.main_logits + cfg.main_logits
    if not cfg.image_only:
        total += f * cfg.aux_logits + cfg.aux_logits
    return total


@dataclass
class ModelParams:
    """theta (generator-side network) and psi (discriminator-side network).

    Either may be absent for single-task baselines: UNET/UMTL carry only
    theta, CONVNET only psi.
    """
    method: str
    gen_config: GeneratorConfig | None = None
    disc_config: DiscriminatorConfig | None = None
    theta: nn.Module | None = None
    psi: nn.Module | None = None
    class_count: int = 2
    extra: dict = field(default_factory=dict)

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for prefix, net in (("theta", self.theta), ("psi", self.psi)):
            if net is None:
                continue
            for k, v in net.state_dict().items():
                out[f"{prefix}.{k}"] = v.detach().cpu().numpy()
        return out

    def descriptor(self) -> dict:
        return {
            "method": self.method,
            "class_count": self.class_count,
            "gen_config": asdict(self.gen_config) if self.gen_config else None,
            "disc_config": asdict(self.disc_config) if self.disc_config else None,
        }

    def clone(self) -> "ModelParams":
        return copy.deepcopy(self)

    def to(self, dtype: torch.dtype) -> "ModelParams":
        for net in (self.theta, self.psi):
            if net is not None:
                net.to(dtype)
        return self

    def train(self, mode: bool = True) -> "ModelParams":
        for net in (self.theta, self.psi):
            if net is not None:
                net.train(mode)
        return self

    def eval(self) -> "ModelParams":
        return self.train(False)


def build_model(method: str, gen_config: GeneratorConfig | None, disc_config: DiscriminatorConfig | None,
                class_count: int, seed: int) -> ModelParams:
    """Instantiate and initialize the networks a method needs.

    theta and psi are seeded from independent streams so the generator of
    every method starts from the same weights for a given seed.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    theta_seed, psi_seed = np.random.SeedSequence([seed, 0x7E7A]).generate_state(2)
    theta = psi = None
    if method in ("S4MTL", "S2MTL", "UNET"):
        theta = init_params(MaskGenerator(gen_config), theta_seed)
    elif method == "UMTL":
        theta = init_params(MultitaskUNet(gen_config, class_count), theta_seed)
    if method in ("S4MTL", "S2MTL"):
        dc = DiscriminatorConfig(**{**asdict(disc_config), "image_only": False, "class_count": class_count})
        psi = init_params(ClassDiscriminator(dc), psi_seed)
        disc_config = dc
    elif method == "CONVNET":
        dc = DiscriminatorConfig(**{**asdict(disc_config), "image_only": True, "class_count": class_count})
        psi = init_params(ClassDiscriminator(dc), psi_seed)
        disc_config = dc
    return ModelParams(method, gen_config if theta is not None else None,
                       disc_config if psi is not None else None, theta, psi, class_count)


def generator_forward(params: ModelParams, x: torch.Tensor, rng=None) -> torch.Tensor:
    out = params.theta(x, rng)
    return out[0] if isinstance(out, tuple) else out


def discriminator_forward(params: ModelParams, x, y, rng=None):
    return params.psi(x, y, rng)


def classifier_forward(params: ModelParams, x, rng=None):
    return params.psi(x, None, rng)


def umtl_forward(params: ModelParams, x, rng=None):
    return params.theta(x, rng)
