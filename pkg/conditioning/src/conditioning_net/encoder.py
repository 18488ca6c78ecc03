"""Provisional-image encoder.

Four stride-2 downsampling stages mirrored by four upsampling stages with
skip connections, ending in a pointwise projection.  The output carries
one feature channel per packed hint channel, so it can be multiplied
against a hint stack texel for texel.
"""

from dataclasses import dataclass

import torch
from torch import nn


@dataclass(frozen=True)
class EncoderSpec:
    in_channels: int = 4            # RGB + coverage alpha
    out_channels: int = 12          # 3 x hint count of the paired packets
    widths: tuple = (16, 32, 64, 128)
    negative_slope: float = 0.2

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.out_channels % 3 != 0:
            raise ValueError("out_channels must be 3 x hint count")
        if len(self.widths) != 4 or any(w < 1 for w in self.widths):
            raise ValueError("widths must be four positive stage sizes")

    @property
    def downsample_factor(self) -> int:
        return 2 ** len(self.widths)


class ProvisionalEncoder(nn.Module):
    """(N, 4, H, W) -> (N, out_channels, H, W), H and W preserved."""

    def __init__(self, spec: EncoderSpec = EncoderSpec()):
        super().__init__()
        self.spec = spec
        w = spec.widths
        self.act = nn.LeakyReLU(spec.negative_slope)

        self.downs = nn.ModuleList()
        prev = spec.in_channels
        for width in w:
            self.downs.append(nn.Conv2d(prev, width, 3, stride=2, padding=1))
            prev = width

        # mirror: each stage halves the width until the stem size, the last
        # up stage has no skip partner and keeps the stem width
        self.ups = nn.ModuleList()
        self.fuses = nn.ModuleList()
        up_widths = (w[2], w[1], w[0], w[0])
        for i, width in enumerate(up_widths):
            self.ups.append(nn.ConvTranspose2d(prev, width, 4, stride=2,
                                               padding=1))
            if i < 3:
                self.fuses.append(nn.Conv2d(width + w[2 - i], width, 3,
                                            padding=1))
            prev = width
        self.project = nn.Conv2d(w[0], spec.out_channels, 1)
        self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.kaiming_normal_(m.weight, a=self.spec.negative_slope,
                                        nonlinearity="leaky_relu")
                nn.init.zeros_(m.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        spec = self.spec
        if x.ndim != 4 or x.shape[1] != spec.in_channels:
            raise ValueError(f"expected (N, {spec.in_channels}, H, W) input, "
                             f"got {tuple(x.shape)}")
        f = spec.downsample_factor
        if x.shape[2] % f or x.shape[3] % f:
            raise ValueError(f"spatial dims must be divisible by {f}, "
                             f"got {tuple(x.shape[2:])}")
        skips = []
        h = x
        for down in self.downs:
            h = self.act(down(h))
            skips.append(h)
        for i, up in enumerate(self.ups):
            h = self.act(up(h))
            if i < 3:
                h = self.act(self.fuses[i](torch.cat([h, skips[2 - i]], dim=1)))
        return self.project(h)


def encode_provisional(encoder: ProvisionalEncoder,
                       images: torch.Tensor) -> torch.Tensor:
    """Run the encoder in inference mode; output must be finite."""
    encoder.eval()
    with torch.no_grad():
        out = encoder(images)
    if not torch.isfinite(out).all():
        raise ValueError("encoder produced non-finite features")
    return out
