import base64
import json
from pathlib import Path

import pytest

from conftest import circle_sketch, encode, square_sketch

GOLDEN = json.loads((Path(__file__).parent / "goldens" / "lpips_golden.json").read_text())


# --- /health ---------------------------------------------------------------


def test_health_ok(client):
    doc = client.get("/health").json()
    assert doc["status"] == "ok"
    assert set(doc["models"]) == {"inception_pool3", "clip_image", "lpips"}
    assert all(doc["versions"].values())


def test_health_repeated_calls_constant(client):
    first = client.get("/health").json()
    second = client.get("/health").json()
    assert first == second


def test_health_503_on_model_load_failure(monkeypatch):
    import sidecar.app as app_module
    from sidecar.models import ModelLoadError

    class Broken:
        def __init__(self):
            raise ModelLoadError("weights unavailable")

    monkeypatch.setattr(app_module, "ModelRegistry", Broken)
    from fastapi.testclient import TestClient

    broken_client = TestClient(app_module.create_app())
    resp = broken_client.get("/health")
    assert resp.status_code == 503
    assert resp.json()["status"] == "error"


# --- /features --------------------------------------------------------------


def test_inception_features_dim_2048(client):
    imgs = [encode(square_sketch()), encode(circle_sketch())]
    resp = client.post("/features", json={"model": "inception_pool3", "images": imgs})
    assert resp.status_code == 200
    doc = resp.json()
    assert doc["dim"] == 2048
    assert len(doc["vectors"]) == 2
    assert all(len(v) == 2048 for v in doc["vectors"])
    assert doc["model_version"]


def test_clip_features_consistent_dim(client):
    resp = client.post(
        "/features", json={"model": "clip_image", "images": [encode(square_sketch())]}
    )
    doc = resp.json()
    assert doc["dim"] == len(doc["vectors"][0]) == 512


def test_same_image_twice_in_batch_identical_vectors(client):
    img = encode(square_sketch())
    doc = client.post(
        "/features", json={"model": "inception_pool3", "images": [img, img]}
    ).json()
    assert doc["vectors"][0] == doc["vectors"][1]


def test_determinism_across_repeated_requests(client):
    body = {"model": "inception_pool3", "images": [encode(square_sketch())]}
    first = client.post("/features", json=body).json()
    second = client.post("/features", json=body).json()
    assert first == second


def test_statelessness_request_order_permutation(client):
    sq = {"model": "inception_pool3", "images": [encode(square_sketch())]}
    ci = {"model": "inception_pool3", "images": [encode(circle_sketch())]}
    sq_first = client.post("/features", json=sq).json()
    ci_first = client.post("/features", json=ci).json()
    # reversed order must give identical per-request responses
    ci_second = client.post("/features", json=ci).json()
    sq_second = client.post("/features", json=sq).json()
    assert sq_first == sq_second
    assert ci_first == ci_second


def test_corrupt_base64_returns_400_with_index(client):
    imgs = [encode(square_sketch()), "@@not-base64@@"]
    resp = client.post("/features", json={"model": "inception_pool3", "images": imgs})
    assert resp.status_code == 400
    assert resp.json()["index"] == 1


def test_valid_base64_but_not_an_image_is_400(client):
    bogus = base64.b64encode(b"plain text, not a PNG").decode()
    resp = client.post("/features", json={"model": "inception_pool3", "images": [bogus]})
    assert resp.status_code == 400
    assert resp.json()["index"] == 0


def test_empty_image_list_is_400(client):
    resp = client.post("/features", json={"model": "inception_pool3", "images": []})
    assert resp.status_code == 400


def test_batch_limit_gives_413(client, monkeypatch):
    import sidecar.app as app_module

    monkeypatch.setattr(app_module, "MAX_BATCH", 2)
    imgs = [encode(square_sketch())] * 3
    resp = client.post("/features", json={"model": "inception_pool3", "images": imgs})
    assert resp.status_code == 413


def test_unknown_model_rejected(client):
    resp = client.post(
        "/features", json={"model": "resnet-surprise", "images": [encode(square_sketch())]}
    )
    assert resp.status_code == 422  # schema-validated enum


# --- /logits -----------------------------------------------------------------


def test_logits_shape_1000(client):
    resp = client.post("/logits", json={"images": [encode(square_sketch())]})
    doc = resp.json()
    assert len(doc["logits"]) == 1
    assert len(doc["logits"][0]) == 1000


def test_logits_repeated_image_identical_rows(client):
    img = encode(circle_sketch())
    doc = client.post("/logits", json={"images": [img, img]}).json()
    assert doc["logits"][0] == doc["logits"][1]


def test_logits_empty_list_400(client):
    assert client.post("/logits", json={"images": []}).status_code == 400


# --- /lpips -------------------------------------------------------------------


def test_lpips_identity_is_zero(client):
    img = encode(square_sketch())
    doc = client.post("/lpips", json={"a": img, "b": img}).json()
    assert doc["value"] <= 1e-6
    assert doc["net"] == "alex"


def test_lpips_golden_fixture(client):
    doc = client.post(
        "/lpips", json={"a": encode(square_sketch()), "b": encode(circle_sketch())}
    ).json()
    assert doc["model_version"] == GOLDEN["model_version"], (
        "model version drifted; re-record the golden for the new version"
    )
    assert doc["value"] == pytest.approx(GOLDEN["value"], abs=1e-5)


def test_lpips_nonnegative_and_symmetricish(client):
    a = encode(square_sketch())
    b = encode(circle_sketch())
    ab = client.post("/lpips", json={"a": a, "b": b}).json()["value"]
    ba = client.post("/lpips", json={"a": b, "b": a}).json()["value"]
    assert ab >= 0.0
    assert ab == pytest.approx(ba, abs=1e-9)


def test_lpips_mismatched_sizes_400(client):
    resp = client.post(
        "/lpips",
        json={"a": encode(square_sketch()), "b": encode(square_sketch(size=(64, 96)))},
    )
    assert resp.status_code == 400


def test_lpips_corrupt_input_400_names_side(client):
    resp = client.post("/lpips", json={"a": "@@", "b": encode(square_sketch())})
    assert resp.status_code == 400
    assert resp.json()["index"] == 0
