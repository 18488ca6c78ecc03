"""Multiplicative control-tensor assembly and the stand-in control branch.

The control tensor is the channel-wise product of encoded features with a
radiance-hint stack, with the coverage mask appended; its layout must
match the `multiplied` packet containers the renderer writes, texel for
texel.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .interchange import (COLOR_PERMUTATIONS, PacketFile, read_manifest,
                          read_mask, read_pfm)


def forward_control(features: torch.Tensor, hints: torch.Tensor,
                    mask: torch.Tensor) -> torch.Tensor:
    """Product of features and hints plus the mask channel.

    All three are NCHW; features and hints must agree exactly, the mask
    carries one channel.  Gradients flow to both product operands.
    """
    for name, t in (("features", features), ("hints", hints), ("mask", mask)):
        if t.ndim != 4:
            raise ValueError(f"{name} must be NCHW, got {tuple(t.shape)}")
    if features.shape != hints.shape:
        raise ValueError(f"features {tuple(features.shape)} do not match "
                         f"hints {tuple(hints.shape)}")
    if features.shape[1] % 3 != 0:
        raise ValueError("hint stack must hold 3 channels per hint")
    if mask.shape[1] != 1 or mask.shape[0] != features.shape[0] \
            or mask.shape[2:] != features.shape[2:]:
        raise ValueError(f"mask {tuple(mask.shape)} does not match "
                         f"features {tuple(features.shape)}")
    return torch.cat([features * hints, mask], dim=1)


def hints_from_packet(packet: PacketFile):
    """Hint stack and mask of a multiplied container as (1, C, H, W) tensors.

    Only makes sense for packets written with identity features, where the
    product block is the hints themselves.  Float bits pass through
    unchanged.
    """
    if packet.layout != "multiplied":
        raise ValueError(f"{packet.layout} layout does not carry a "
                         "multiplied hint block")
    t = torch.from_numpy(packet.channels)
    return t[:-1].unsqueeze(0), t[-1].reshape(1, 1, *t.shape[1:])


# ---------------------------------------------------------------------------
# corpus loading
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditioningBatch:
    """One training batch, spatially consistent across members."""

    provisional: torch.Tensor    # (N, 4, H, W) input render + alpha
    hints: torch.Tensor          # (N, 3k, H, W) flattened hint stack
    mask: torch.Tensor           # (N, 1, H, W)
    target: torch.Tensor         # (N, 3, H, W) relit render

    def __post_init__(self):
        if self.provisional.ndim != 4 or self.provisional.shape[1] != 4:
            raise ValueError("provisional must be (N, 4, H, W)")
        n, shape = self.provisional.shape[0], self.provisional.shape[2:]
        for name, channels in (("hints", None), ("mask", 1), ("target", 3)):
            t = getattr(self, name)
            if (t.ndim != 4 or t.shape[0] != n or t.shape[2:] != shape
                    or (channels is not None and t.shape[1] != channels)):
                raise ValueError(f"{name} does not match the batch geometry")
        if self.hints.shape[1] % 3:
            raise ValueError("hints must stack whole RGB planes")


def _chw(image: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(image.transpose(2, 0, 1))


def load_batch(root, records) -> ConditioningBatch:
    """Materialize manifest records: the stored files are unpermuted, the
    record's channel permutation applies to the target and the hints."""
    root = Path(root)
    prov, hints, masks, targets = [], [], [], []
    for rec in records:
        perm = list(COLOR_PERMUTATIONS[rec.permutation])
        inp = read_pfm(root / rec.input_render)
        mask = read_mask(root / rec.mask_path)
        prov.append(np.concatenate([_chw(inp), mask[None]], axis=0))
        masks.append(mask[None])
        targets.append(_chw(read_pfm(root / rec.output_render)[..., perm]))
        stack = [_chw(read_pfm(root / p)[..., perm]) for p in rec.hint_paths]
        hints.append(np.concatenate(stack, axis=0))
    return ConditioningBatch(
        provisional=torch.from_numpy(np.stack(prov)),
        hints=torch.from_numpy(np.stack(hints)),
        mask=torch.from_numpy(np.stack(masks)),
        target=torch.from_numpy(np.stack(targets)))


def load_corpus_batch(root, count=1) -> ConditioningBatch:
    manifest = read_manifest(Path(root) / "manifest.jsonl")
    return load_batch(root, manifest.records[:count])


# ---------------------------------------------------------------------------
# stand-in control branch
# ---------------------------------------------------------------------------

class ControlBranch(nn.Module):
    """Three conv layers from a control tensor to an RGB prediction.

    A stand-in for the injected conditioning pathway: deep enough to prove
    gradients reach the encoder through the product, nothing more.
    """

    def __init__(self, in_channels=13, width=32, out_channels=3,
                 negative_slope=0.2):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, padding=1),
            nn.LeakyReLU(negative_slope),
            nn.Conv2d(width, width, 3, padding=1),
            nn.LeakyReLU(negative_slope),
            nn.Conv2d(width, out_channels, 3, padding=1))

    def forward(self, control: torch.Tensor) -> torch.Tensor:
        return self.net(control)


def train_overfit(encoder, branch, batch: ConditioningBatch,
                  steps: int = 500, lr: float = 2e-3,
                  stop_at_reduction: float = 200.0) -> dict:
    """Overfit one batch end to end; returns the loss trajectory summary.

    The conditioning path under test is encoder -> product -> branch; the
    loop stops early once the loss has fallen by ``stop_at_reduction``.
    """
    params = list(encoder.parameters()) + list(branch.parameters())
    opt = torch.optim.Adam(params, lr=lr)
    initial = None
    loss_val = float("inf")
    used = 0
    for step in range(steps):
        features = encoder(batch.provisional)
        control = forward_control(features, batch.hints, batch.mask)
        loss = nn.functional.mse_loss(branch(control), batch.target)
        loss_val = float(loss.detach())
        if initial is None:
            initial = loss_val
        used = step + 1
        if loss_val <= initial / stop_at_reduction:
            break
        opt.zero_grad()
        loss.backward()
        opt.step()
    return {
        "initial_loss": initial,
        "final_loss": loss_val,
        "reduction": initial / loss_val if loss_val > 0 else float("inf"),
        "steps": used,
    }


def write_metric_report(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
