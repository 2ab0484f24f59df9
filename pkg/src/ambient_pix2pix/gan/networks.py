"""Generator (skip-connected encoder-decoder) and patch discriminator."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import torch
import torch.nn as nn


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    depth: int = 4
    base_channels: int = 32
    norm: str = "instance"
    max_mult: int = 8
    d_layers: int = 3
    d_base_channels: int = 32
    in_channels: int = 1
    out_channels: int = 1

    def __post_init__(self):
        if self.norm not in ("instance", "none"):
            raise ValueError(f"unknown norm kind {self.norm!r}")
        if self.depth < 1 or self.d_layers < 1:
            raise ValueError("depth and d_layers must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown net config keys: {sorted(extra)}")
        return cls(**d)


def _norm(kind: str, ch: int) -> nn.Module:
    return nn.InstanceNorm2d(ch) if kind == "instance" else nn.Identity()


class Generator(nn.Module):
    """Encoder-decoder with skip connections; output in [0, 1].

    Each encoder level halves the resolution with a stride-2 4x4 convolution,
    so input sides must be divisible by ``2 ** depth``.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        self.depth = cfg.depth
        b = cfg.base_channels
        ch = [b * min(2 ** i, cfg.max_mult) for i in range(cfg.depth + 1)]
        self.stem = nn.Sequential(nn.Conv2d(cfg.in_channels, ch[0], 3, padding=1),
                                  _norm(cfg.norm, ch[0]), nn.LeakyReLU(0.2))
        self.down = nn.ModuleList(
            nn.Sequential(nn.Conv2d(ch[i], ch[i + 1], 4, stride=2, padding=1),
                          _norm(cfg.norm, ch[i + 1]), nn.LeakyReLU(0.2))
            for i in range(cfg.depth))
        up = []
        for i in reversed(range(cfg.depth)):
            cin = ch[i + 1] if i == cfg.depth - 1 else 2 * ch[i + 1]
            up.append(nn.Sequential(nn.ConvTranspose2d(cin, ch[i], 4, stride=2, padding=1),
                                    _norm(cfg.norm, ch[i]), nn.ReLU()))
        self.up = nn.ModuleList(up)
        self.head = nn.Conv2d(2 * ch[0], cfg.out_channels, 3, padding=1)

    def forward(self, x):
        h, w = x.shape[-2:]
        m = 2 ** self.depth
        if h % m or w % m:
            raise DimensionError(f"input {h}x{w} not divisible by 2**depth = {m}")
        skips = [self.stem(x)]
        for layer in self.down:
            skips.append(layer(skips[-1]))
        y = skips.pop()
        for i, layer in enumerate(self.up):
            if i:
                y = torch.cat([y, skips.pop()], dim=1)
            y = layer(y)
        y = torch.cat([y, skips.pop()], dim=1)
        return 0.5 * (torch.tanh(self.head(y)) + 1.0)


class PatchDiscriminator(nn.Module):
    """Patch classifier over channel-concatenated ``(x, y)`` pairs.

    Returns raw logits of shape ``(N, 1, H', W')``; each entry scores one
    receptive-field patch.
    """

    def __init__(self, cfg: NetConfig):
        super().__init__()
        b = cfg.d_base_channels
        cin = cfg.in_channels + cfg.out_channels
        layers = [nn.Conv2d(cin, b, 4, stride=2, padding=1), nn.LeakyReLU(0.2)]
        c = b
        for i in range(1, cfg.d_layers):
            nc = b * min(2 ** i, 8)
            layers += [nn.Conv2d(c, nc, 4, stride=2, padding=1), _norm(cfg.norm, nc), nn.LeakyReLU(0.2)]
            c = nc
        nc = b * min(2 ** cfg.d_layers, 8)
        layers += [nn.Conv2d(c, nc, 4, stride=1, padding=1), _norm(cfg.norm, nc), nn.LeakyReLU(0.2),
                   nn.Conv2d(nc, 1, 4, stride=1, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x, y):
        if x.shape[0] != y.shape[0] or x.shape[-2:] != y.shape[-2:]:
            raise DimensionError(f"discriminator inputs misaligned: {tuple(x.shape)} vs {tuple(y.shape)}")
        return self.net(torch.cat([x, y], dim=1))


def build_networks(cfg: NetConfig, seed: int) -> tuple[Generator, PatchDiscriminator]:
    """Construct both networks with parameters initialized from ``seed``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        g = Generator(cfg)
        d = PatchDiscriminator(cfg)
        for m in list(g.modules()) + list(d.modules()):
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.normal_(m.weight, 0.0, 0.02)
                nn.init.zeros_(m.bias)
    return g, d


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
