"""HTTP client for the feature sidecar (features, logits, LPIPS, health).

Images are shipped as base64 PNG; transport errors are retried twice
before ``SidecarUnavailable`` is raised.  The client is stateless and
safe to share across evaluation workers.
"""

from __future__ import annotations

import base64
import io

import numpy as np
import requests
from PIL import Image

from .imagemetrics import FeatureModel, FeatureSet


class SidecarUnavailable(RuntimeError):
    pass


class SidecarRequestError(RuntimeError):
    """The sidecar answered with a 4xx/5xx error body."""


def encode_image(img) -> str:
    if isinstance(img, (bytes, bytearray)):
        raw = bytes(img)
    else:
        if not isinstance(img, Image.Image):
            img = Image.fromarray(np.asarray(img).astype(np.uint8))
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        raw = buf.getvalue()
    return base64.b64encode(raw).decode("ascii")


class SidecarClient:
    def __init__(self, base_url: str, timeout_s: float = 60.0, retries: int = 2):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.retries = retries

    def _post(self, path: str, payload: dict) -> dict:
        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = requests.post(
                    f"{self.base_url}{path}", json=payload, timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 400:
                try:
                    detail = resp.json().get("error", resp.text)
                except ValueError:
                    detail = resp.text
                raise SidecarRequestError(f"{path} -> {resp.status_code}: {detail}")
            return resp.json()
        raise SidecarUnavailable(f"sidecar unreachable at {self.base_url}{path}: {last_error}")

    def features(self, model: FeatureModel | str, images, source_ids=()) -> FeatureSet:
        model = FeatureModel(model) if isinstance(model, str) else model
        body = {"model": model.value, "images": [encode_image(i) for i in images]}
        data = self._post("/features", body)
        return FeatureSet(
            model=model,
            vectors=np.asarray(data["vectors"], dtype=np.float64),
            source_ids=tuple(source_ids),
        )

    def logits(self, images) -> np.ndarray:
        data = self._post("/logits", {"images": [encode_image(i) for i in images]})
        return np.asarray(data["logits"], dtype=np.float64)

    def lpips(self, a, b) -> float:
        data = self._post("/lpips", {"a": encode_image(a), "b": encode_image(b)})
        return float(data["value"])

    def health(self) -> dict | None:
        """Health document, or None when the sidecar is unreachable."""
        try:
            resp = requests.get(f"{self.base_url}/health", timeout=self.timeout_s)
        except requests.RequestException:
            return None
        if resp.status_code != 200:
            return None
        return resp.json()

    def model_version(self, model: FeatureModel | str) -> str | None:
        doc = self.health()
        if not doc:
            return None
        key = model.value if isinstance(model, FeatureModel) else str(model)
        return (doc.get("versions") or {}).get(key)
