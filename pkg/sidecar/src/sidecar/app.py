"""HTTP surface of the feature sidecar.

Endpoints (JSON over HTTP, images as base64 PNG):

    POST /features  {model, images[]}  -> {dim, vectors, model_version}
    POST /logits    {images[]}         -> {logits (n x 1000), model_version}
    POST /lpips     {a, b}             -> {value, net, model_version}
    GET  /health                       -> {status, models, versions}

Errors use {"error": str, "index": int|null}; 400 for malformed input
(index names the offending image), 413 when a batch exceeds the
configured limit (SIDECAR_MAX_BATCH, default 64), 503 while models are
unavailable.  The service is stateless: responses depend only on the
request body and the pinned model versions.
"""

from __future__ import annotations

import os
import threading
from typing import Literal

from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .models import ModelLoadError, ModelRegistry, decode_png

MAX_BATCH = int(os.environ.get("SIDECAR_MAX_BATCH", "64"))


class FeatureRequest(BaseModel):
    model: Literal["inception_pool3", "clip_image"]
    images: list[str]


class LogitsRequest(BaseModel):
    images: list[str]


class LpipsRequest(BaseModel):
    a: str
    b: str


def _error(status: int, message: str, index: int | None = None) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message, "index": index})


def _decode_batch(images: list[str]):
    if not images:
        return None, _error(400, "image list is empty")
    if len(images) > MAX_BATCH:
        return None, _error(413, f"batch of {len(images)} exceeds limit {MAX_BATCH}")
    decoded = []
    for i, b64 in enumerate(images):
        try:
            decoded.append(decode_png(b64))
        except ValueError as exc:
            return None, _error(400, str(exc), index=i)
    return decoded, None


def create_app() -> FastAPI:
    app = FastAPI(title="sketchbench feature sidecar")
    state = {"registry": None, "error": None}
    lock = threading.Lock()  # inference serialized; models hold no request state

    try:
        state["registry"] = ModelRegistry()
    except ModelLoadError as exc:
        state["error"] = str(exc)

    def registry() -> ModelRegistry | None:
        return state["registry"]

    @app.get("/health")
    def health():
        reg = registry()
        if reg is None:
            return JSONResponse(
                status_code=503, content={"status": "error", "error": state["error"]}
            )
        return {
            "status": "ok",
            "models": sorted(reg.versions),
            "versions": reg.versions,
        }

    @app.post("/features")
    def features(request: FeatureRequest):
        reg = registry()
        if reg is None:
            return _error(503, state["error"] or "models unavailable")
        decoded, err = _decode_batch(request.images)
        if err is not None:
            return err
        with lock:
            vectors, version = reg.features(request.model, decoded)
        return {
            "dim": int(vectors.shape[1]),
            "vectors": vectors.tolist(),
            "model_version": version,
        }

    @app.post("/logits")
    def logits(request: LogitsRequest):
        reg = registry()
        if reg is None:
            return _error(503, state["error"] or "models unavailable")
        decoded, err = _decode_batch(request.images)
        if err is not None:
            return err
        with lock:
            rows, version = reg.logits(decoded)
        return {"logits": rows.tolist(), "model_version": version}

    @app.post("/lpips")
    def lpips(request: LpipsRequest):
        reg = registry()
        if reg is None:
            return _error(503, state["error"] or "models unavailable")
        try:
            img_a = decode_png(request.a)
        except ValueError as exc:
            return _error(400, str(exc), index=0)
        try:
            img_b = decode_png(request.b)
        except ValueError as exc:
            return _error(400, str(exc), index=1)
        if img_a.size != img_b.size:
            return _error(400, f"image sizes differ: {img_a.size} vs {img_b.size}")
        with lock:
            value = reg.lpips(img_a, img_b)
        return {"value": value, "net": "alex", "model_version": reg.lpips_version}

    return app


app = create_app()
