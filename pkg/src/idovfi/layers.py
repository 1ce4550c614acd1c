"""Small convolutional building blocks shared by the networks."""
import torch
import torch.nn as nn
import torch.nn.functional as F


def conv(cin, cout, stride=1, act=True):
    layers = [nn.Conv2d(cin, cout, 3, stride=stride, padding=1)]
    if act:
        layers.append(nn.LeakyReLU(0.1))
    return nn.Sequential(*layers)


class UNet(nn.Module):
    """Encoder-decoder with ``levels`` resolutions, average-pool downsampling,
    bilinear upsampling and concatenated skips.

    Channel width doubles per level starting from ``base``.  Inputs must be
    divisible by ``2 ** (levels - 1)``.
    """

    def __init__(self, cin, cout, base=16, levels=3):
        super().__init__()
        widths = [base * 2**i for i in range(levels)]
        self.levels = levels
        self.enc = nn.ModuleList()
        prev = cin
        for wd in widths:
            self.enc.append(nn.Sequential(conv(prev, wd), conv(wd, wd)))
            prev = wd
        self.dec = nn.ModuleList()
        for i in range(levels - 2, -1, -1):
            self.dec.append(nn.Sequential(conv(widths[i + 1] + widths[i], widths[i]), conv(widths[i], widths[i])))
        self.out_channels = widths[0]
        self.head = nn.Conv2d(widths[0], cout, 3, padding=1) if cout else None

    def features(self, x):
        skips = []
        for i, block in enumerate(self.enc):
            if i:
                x = F.avg_pool2d(x, 2)
            x = block(x)
            skips.append(x)
        x = skips.pop()
        for block in self.dec:
            skip = skips.pop()
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = block(torch.cat([x, skip], dim=1))
        return x

    def forward(self, x):
        return self.head(self.features(x))


def zero_init(module):
    nn.init.zeros_(module.weight)
    if module.bias is not None:
        nn.init.zeros_(module.bias)
    return module
