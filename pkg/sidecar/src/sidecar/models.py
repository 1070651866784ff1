"""Vision model registry for the sidecar.

Three CPU extractors, all run in eval mode with gradients off:

* ``inception_pool3``  inception-v3 global-average-pool features (2048-d)
* ``clip_image``       resnet18 pooled features as the image-embedding
                       backbone (512-d)
* ``lpips``            alexnet feature stack; distance is the sum over
                       tap layers of the mean squared difference of
                       channel-normalized activations (uniform layer
                       weights)

Weight resolution is controlled by SIDECAR_PRETRAINED:

* ``auto``   (default) try the pretrained torchvision weights, fall back
             to deterministic seed-0 random initialization when the
             weights cannot be fetched (offline hosts);
* ``never``  always use the seeded initialization;
* ``require``  fail loading if pretrained weights are unavailable.

Every response carries the resolved ``model_version`` string; golden
values are only comparable within one version.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass

import numpy as np
import torch
import torchvision
from PIL import Image
from torchvision import transforms

SEED = 0

_IMAGENET_NORM = transforms.Normalize(
    mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]
)


def _pretrained_mode() -> str:
    mode = os.environ.get("SIDECAR_PRETRAINED", "auto").lower()
    return mode if mode in ("auto", "never", "require") else "auto"


class ModelLoadError(RuntimeError):
    pass


def _try_pretrained(factory, weights):
    try:
        return factory(weights=weights), True
    except Exception:
        return None, False


@dataclass
class _Extractor:
    module: torch.nn.Module
    version: str
    input_size: int

    def preprocess(self, img: Image.Image) -> torch.Tensor:
        tensor = transforms.functional.to_tensor(
            img.convert("RGB").resize((self.input_size, self.input_size), Image.BILINEAR)
        )
        return _IMAGENET_NORM(tensor)


class ModelRegistry:
    """Loads all models once; inference is locked behind no-grad eval mode."""

    def __init__(self):
        torch.set_num_threads(max(1, (os.cpu_count() or 2) // 2))
        mode = _pretrained_mode()
        self._inception, self._inception_fc, self.inception_version = self._load_inception(mode)
        self._clip, self.clip_version = self._load_clip(mode)
        self._lpips_taps, self.lpips_version = self._load_lpips(mode)

    # -- loading -------------------------------------------------------------

    def _load_inception(self, mode):
        model = None
        version = ""
        if mode in ("auto", "require"):
            model, ok = _try_pretrained(
                torchvision.models.inception_v3,
                torchvision.models.Inception_V3_Weights.IMAGENET1K_V1,
            )
            if ok:
                version = "torchvision-inception_v3-imagenet1k_v1"
            elif mode == "require":
                raise ModelLoadError("pretrained inception_v3 weights unavailable")
        if model is None:
            torch.manual_seed(SEED)
            model = torchvision.models.inception_v3(
                weights=None, aux_logits=True, init_weights=False
            )
            version = f"torchvision-inception_v3-untrained-seed{SEED}"
        model.eval()
        fc = model.fc
        model.fc = torch.nn.Identity()
        return model, fc, version

    def _load_clip(self, mode):
        model = None
        version = ""
        if mode in ("auto", "require"):
            model, ok = _try_pretrained(
                torchvision.models.resnet18,
                torchvision.models.ResNet18_Weights.IMAGENET1K_V1,
            )
            if ok:
                version = "torchvision-resnet18-imagenet1k_v1"
            elif mode == "require":
                raise ModelLoadError("pretrained resnet18 weights unavailable")
        if model is None:
            torch.manual_seed(SEED)
            model = torchvision.models.resnet18(weights=None)
            version = f"torchvision-resnet18-untrained-seed{SEED}"
        model.eval()
        model.fc = torch.nn.Identity()
        return model, version

    def _load_lpips(self, mode):
        model = None
        version = ""
        if mode in ("auto", "require"):
            model, ok = _try_pretrained(
                torchvision.models.alexnet,
                torchvision.models.AlexNet_Weights.IMAGENET1K_V1,
            )
            if ok:
                version = "lpips-alex-imagenet1k_v1-uniform"
            elif mode == "require":
                raise ModelLoadError("pretrained alexnet weights unavailable")
        if model is None:
            torch.manual_seed(SEED)
            model = torchvision.models.alexnet(weights=None)
            version = f"lpips-alex-untrained-seed{SEED}-uniform"
        model.eval()
        features = model.features
        # taps after each ReLU stage, the canonical five alexnet slices
        taps = torch.nn.ModuleList(
            [features[:2], features[2:5], features[5:8], features[8:10], features[10:12]]
        )
        return taps, version

    # -- inference -----------------------------------------------------------

    @property
    def versions(self) -> dict[str, str]:
        return {
            "inception_pool3": self.inception_version,
            "clip_image": self.clip_version,
            "lpips": self.lpips_version,
        }

    def _batch(self, images: list[Image.Image], extractor_size: int) -> torch.Tensor:
        tensors = [
            _IMAGENET_NORM(
                transforms.functional.to_tensor(
                    img.convert("RGB").resize((extractor_size, extractor_size), Image.BILINEAR)
                )
            )
            for img in images
        ]
        return torch.stack(tensors)

    def features(self, model_name: str, images: list[Image.Image]) -> tuple[np.ndarray, str]:
        with torch.no_grad():
            if model_name == "inception_pool3":
                out = self._inception(self._batch(images, 299))
                return out.numpy().astype(np.float64), self.inception_version
            if model_name == "clip_image":
                out = self._clip(self._batch(images, 224))
                return out.numpy().astype(np.float64), self.clip_version
        raise KeyError(model_name)

    def logits(self, images: list[Image.Image]) -> tuple[np.ndarray, str]:
        with torch.no_grad():
            features = self._inception(self._batch(images, 299))
            out = self._inception_fc(features)
        return out.numpy().astype(np.float64), self.inception_version

    def lpips(self, a: Image.Image, b: Image.Image) -> float:
        with torch.no_grad():
            x = self._batch([a], 224)
            y = self._batch([b], 224)
            total = 0.0
            for tap in self._lpips_taps:
                x = tap(x)
                y = tap(y)
                xn = x / torch.sqrt((x**2).sum(dim=1, keepdim=True) + 1e-10)
                yn = y / torch.sqrt((y**2).sum(dim=1, keepdim=True) + 1e-10)
                total += float(((xn - yn) ** 2).mean())
        return total


def decode_png(b64: str) -> Image.Image:
    import base64
    import binascii

    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ValueError(f"invalid base64: {exc}") from exc
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise ValueError(f"undecodable image: {exc}") from exc
    return img
