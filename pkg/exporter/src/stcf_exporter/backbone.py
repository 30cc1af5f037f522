"""VGG19 feature stack with multi-layer taps.

The backbone is the convolutional part of VGG19, truncated after the
deepest requested tap. Weights load from a local ``state_dict`` file;
without one, the torchvision pretrained download is attempted and a
missing-weights situation surfaces as :class:`EnvironmentError`.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import torch
from torch import nn
from torchvision import models

# Post-ReLU indices in vgg19().features and their channel counts; one tap
# per conv block gives 64 + 128 + 256 + 512 + 512 = 1472 channels.
DEFAULT_TAPS = (3, 8, 17, 26, 35)
TAP_CHANNELS = {3: 64, 8: 128, 17: 256, 26: 512, 35: 512}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


class MissingWeightsError(EnvironmentError):
    """No usable backbone weights are available locally."""


def tap_channel_total(taps: Sequence[int]) -> int:
    unknown = [t for t in taps if t not in TAP_CHANNELS]
    if unknown:
        raise ValueError(f"unsupported tap layers {unknown}; choose from {sorted(TAP_CHANNELS)}")
    return sum(TAP_CHANNELS[t] for t in taps)


def build_feature_stack(max_tap: int) -> nn.Sequential:
    """Randomly initialized VGG19 feature layers up to and including max_tap."""
    features = models.vgg19(weights=None).features
    return nn.Sequential(*list(features.children())[: max_tap + 1])


def load_backbone(taps: Sequence[int], weights: str | Path | None) -> nn.Sequential:
    """Truncated VGG19 feature stack in eval mode with weights applied.

    ``weights`` is a path to a ``state_dict`` of the (possibly truncated)
    feature stack. When None, the torchvision pretrained weights are tried;
    an unreachable download raises :class:`MissingWeightsError`.
    """
    tap_channel_total(taps)
    max_tap = max(taps)
    stack = build_feature_stack(max_tap)
    if weights is not None:
        weights = Path(weights)
        if not weights.is_file():
            raise MissingWeightsError(f"weights file not found: {weights}")
        state = torch.load(weights, map_location="cpu", weights_only=True)
        own = stack.state_dict()
        filtered = {k: v for k, v in state.items() if k in own}
        missing = set(own) - set(filtered)
        if missing:
            raise MissingWeightsError(
                f"{weights} lacks parameters for layers {sorted(missing)[:4]}..."
            )
        stack.load_state_dict(filtered)
    else:
        try:
            pretrained = models.vgg19(weights=models.VGG19_Weights.IMAGENET1K_V1).features
        except Exception as exc:  # download unavailable in offline environments
            raise MissingWeightsError(
                "no --weights given and the torchvision download failed; "
                "provide a local VGG19 feature state_dict"
            ) from exc
        stack = nn.Sequential(*list(pretrained.children())[: max_tap + 1])
    stack.eval()
    for p in stack.parameters():
        p.requires_grad_(False)
    return stack


def run_taps(stack: nn.Sequential, batch: torch.Tensor, taps: Sequence[int]) -> list[torch.Tensor]:
    """Forward pass collecting the activation after each tap layer."""
    wanted = set(taps)
    outputs: dict[int, torch.Tensor] = {}
    x = batch
    for idx, layer in enumerate(stack):
        x = layer(x)
        if idx in wanted:
            outputs[idx] = x
    return [outputs[t] for t in taps]
