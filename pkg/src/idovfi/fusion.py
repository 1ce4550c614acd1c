"""Transformer-style fusion of boundary frames, event voxels and refined warps."""
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .events import InvalidInputError
from .layers import conv, zero_init


@dataclass
class FusionConfig:
    base_channels: int = 32
    heads: int = 2
    window: int = 4


class WindowAttention(nn.Module):
    """Pre-norm multi-head self-attention inside non-overlapping windows,
    followed by a pointwise MLP."""

    def __init__(self, dim, heads, window):
        super().__init__()
        if dim % heads:
            raise InvalidInputError(f"{dim} channels do not split into {heads} heads")
        self.dim, self.heads, self.window = dim, heads, window
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, x):
        n, c, h, w = x.shape
        s = self.window
        if h % s or w % s:
            raise InvalidInputError(f"feature map {h}x{w} not divisible by window {s}")
        # (n, c, h, w) -> (n * windows, s*s, c)
        tokens = x.reshape(n, c, h // s, s, w // s, s).permute(0, 2, 4, 3, 5, 1).reshape(-1, s * s, c)
        y = self.norm1(tokens)
        q, k, v = self.qkv(y).reshape(-1, s * s, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        att = torch.softmax(q @ k.transpose(-2, -1) / (c // self.heads) ** 0.5, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(-1, s * s, c)
        tokens = tokens + self.proj(y)
        tokens = tokens + self.mlp(self.norm2(tokens))
        return tokens.reshape(n, h // s, w // s, s, s, c).permute(0, 5, 1, 3, 2, 4).reshape(n, c, h, w)


class FusionNet(nn.Module):
    """Encoder, one windowed-attention block at half resolution, decoder.

    The decoder predicts a blend logit between the two refined frames and an
    additive correction, so an untrained net already returns their average.
    """

    def __init__(self, config=None, image_channels=1, bins=5):
        super().__init__()
        self.config = config or FusionConfig()
        c = self.config.base_channels
        self.image_channels = image_channels
        self.enc1 = nn.Sequential(conv(4 * image_channels + 2 * bins, c), conv(c, c))
        self.enc2 = conv(c, 2 * c, stride=2)
        self.block = WindowAttention(2 * c, self.config.heads, self.config.window)
        self.dec = nn.Sequential(conv(3 * c, c), conv(c, c))
        self.head = zero_init(nn.Conv2d(c, 1 + image_channels, 3, padding=1))

    def forward(self, I0, I1, V0t, V1t, R0, R1):
        shapes = {tuple(a.shape[-2:]) for a in (I0, I1, V0t, V1t, R0, R1)}
        if len(shapes) != 1:
            raise InvalidInputError(f"fusion inputs disagree in size: {sorted(shapes)}")
        h, w = I0.shape[-2:]
        if h % (2 * self.config.window) or w % (2 * self.config.window):
            raise InvalidInputError(f"resolution {h}x{w} incompatible with window {self.config.window}")
        f1 = self.enc1(torch.cat([I0, I1, V0t, V1t, R0, R1], dim=1))
        f2 = self.block(self.enc2(f1))
        up = F.interpolate(f2, size=(h, w), mode="bilinear", align_corners=False)
        out = self.head(self.dec(torch.cat([up, f1], dim=1)))
        m = torch.sigmoid(out[:, :1])
        return (m * R0 + (1 - m) * R1 + out[:, 1:]).clamp(0.0, 1.0)


def fuse(net, I0, I1, V0t, V1t, R0, R1):
    return net(I0, I1, V0t, V1t, R0, R1)
