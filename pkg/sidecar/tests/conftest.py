import base64
import io
import os

import pytest
from PIL import Image, ImageDraw

# pin the seeded fallback weights so contract values and goldens are
# reproducible on hosts with no weight cache
os.environ.setdefault("SIDECAR_PRETRAINED", "never")


def encode(img):
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def square_sketch(size=(96, 96)):
    img = Image.new("RGB", size, (255, 255, 255))
    draw = ImageDraw.Draw(img)
    draw.rectangle([20, 20, 76, 76], outline=0, width=3)
    draw.line([20, 20, 76, 76], fill=0, width=2)
    return img


def circle_sketch(size=(96, 96)):
    img = Image.new("RGB", size, (255, 255, 255))
    draw = ImageDraw.Draw(img)
    draw.ellipse([20, 20, 76, 76], outline=0, width=3)
    return img


@pytest.fixture(scope="session")
def client():
    from fastapi.testclient import TestClient

    from sidecar.app import create_app

    return TestClient(create_app())
