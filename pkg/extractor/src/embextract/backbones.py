"""Backbone registry: image -> pooled global embedding.

Two families:

* ``pixelstats-v1`` — a parameter-free numpy reference backbone (resized
  grayscale pixels plus channel statistics). Deterministic and cheap, used
  for order-sensitive tests and environments without torch.
* torchvision models (``resnet18``, ``resnet50``, ``vit_b_16``) — loaded
  lazily; random initialization by default so nothing is downloaded, with
  ``pretrained=True`` opting in to fetching weights. The pooled
  representation is the output of the network with its classifier head
  replaced by identity (global average pool for ResNets, the class token
  for ViT).
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .emb1 import ExtractorError

IMAGENET_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGENET_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


class PixelStatsBackbone:
    """Resized grayscale pixels + per-channel mean/std. No parameters."""

    name = "pixelstats-v1"
    params = 0
    side = 8

    def embed_batch(self, images: list[Image.Image]) -> np.ndarray:
        rows = []
        for img in images:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
            gray = np.asarray(
                img.convert("L").resize((self.side, self.side), Image.BILINEAR),
                dtype=np.float32,
            ) / 255.0
            stats = np.concatenate([rgb.mean(axis=(0, 1)), rgb.std(axis=(0, 1))])
            rows.append(np.concatenate([gray.ravel(), stats]))
        return np.stack(rows)


class TorchvisionBackbone:
    def __init__(self, name: str, input_size: int, pretrained: bool):
        try:
            import torch
            import torchvision.models as tvm
        except ImportError as exc:
            raise ExtractorError(f"backbone {name!r} needs torch/torchvision: {exc}")
        self.name = name
        self.input_size = input_size
        self._torch = torch
        builder = getattr(tvm, name, None)
        if builder is None:
            raise ExtractorError(f"torchvision has no model {name!r}")
        try:
            model = builder(weights="DEFAULT" if pretrained else None)
        except Exception as exc:
            raise ExtractorError(f"cannot load backbone {name!r}: {exc}")
        if hasattr(model, "fc"):  # ResNet family
            model.fc = torch.nn.Identity()
        elif hasattr(model, "heads"):  # ViT family
            model.heads = torch.nn.Identity()
        else:
            raise ExtractorError(f"no known classifier head on {name!r}")
        model.eval()
        self.model = model
        self.params = sum(p.numel() for p in model.parameters())

    def _preprocess(self, images: list[Image.Image]):
        batch = []
        for img in images:
            rgb = img.convert("RGB").resize(
                (self.input_size, self.input_size), Image.BILINEAR
            )
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
            arr = (arr - IMAGENET_MEAN) / IMAGENET_STD
            batch.append(arr.transpose(2, 0, 1))
        return self._torch.from_numpy(np.stack(batch))

    def embed_batch(self, images: list[Image.Image]) -> np.ndarray:
        with self._torch.no_grad():
            out = self.model(self._preprocess(images))
        return out.numpy().astype(np.float32)


_TORCHVISION_SIZES = {"resnet18": 224, "resnet34": 224, "resnet50": 224, "vit_b_16": 224}


def load_backbone(identifier: str, pretrained: bool = False):
    if identifier == PixelStatsBackbone.name:
        return PixelStatsBackbone()
    if identifier in _TORCHVISION_SIZES:
        return TorchvisionBackbone(identifier, _TORCHVISION_SIZES[identifier], pretrained)
    raise ExtractorError(
        f"unknown backbone {identifier!r}; available: "
        f"{[PixelStatsBackbone.name] + sorted(_TORCHVISION_SIZES)}"
    )
