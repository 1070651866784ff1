import io

import pytest
from PIL import Image


def png_bytes(width=32, height=24, color=(255, 255, 255)):
    buf = io.BytesIO()
    Image.new("RGB", (width, height), color).save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture
def sketch_png():
    return png_bytes()


VALID_TIKZ = (
    "\\begin{tikzpicture}\n"
    "\\node (a) at (0,0) {A};\n"
    "\\node (b) at (2,0) {B};\n"
    "\\draw (a) -- (b);\n"
    "\\end{tikzpicture}"
)

INVALID_TIKZ = "\\begin{tikzpicture}\n\\node (a) {A}\n"  # missing ; and \end


def fenced(code):
    return f"```latex\n{code}\n```"
